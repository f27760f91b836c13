#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "trustchain/script_signing.hpp"

using namespace trustchain;
using namespace trustchain::ipxe;

namespace {

// one CA + codesign cert shared across cases; issuance is cheap to reuse
struct CaFixture {
    CodeSignCa ca = ca_init("ipxe.ca");
    IssuedCert signer = issue_codesign(ca, "satellite.codesign");
    std::vector<CaCert> trust{ca.ca_cert};
};

CaFixture& fixture() {
    static CaFixture f;
    return f;
}

const char* kListing7Style =
    "#!ipxe\n"
    "set ipappend1 ip=${ip}:10.0.2.3:${gateway}:${netmask}\n"
    "set ipappend2 BOOTIF=01-${mac:hexhyp}\n"
    "set serverip 10.0.2.3 ||\n"
    "iseq ${idx} ${} && set idx:string X ||\n"
    "iseq ${self} ${} && set self http://10.0.2.3/boot/ipxe? ||\n"
    "set menuentryid 1 ||\n"
    "imgfree ||\n"
    "boot /boot/default/kernel.efi || goto fail\n"
    "goto end\n"
    ":fail\n"
    "prompt --timeout 5000 Error launching selected boot entry ||\n"
    ":end\n";

}  // namespace

TEST_CASE("ca_init layout") {
    CodeSignCa ca = ca_init("ipxe.ca");
    CHECK(ca.serial == 1);
    CHECK(ca.default_days == 90);
    CHECK((ca.ca_cert.key_usage & kUsageCrlSign) != 0);
    CHECK((ca.ca_cert.key_usage & kUsageKeyCertSign) != 0);

    CodeSignCa other = ca_init("ipxe.ca");
    CHECK_FALSE(ca.ca_cert.public_key == other.ca_cert.public_key);
}

TEST_CASE("issue_codesign") {
    CodeSignCa ca = ca_init("ipxe.ca");
    IssuedCert a = issue_codesign(ca, "first");
    IssuedCert b = issue_codesign(ca, "second");
    CHECK(a.cert.serial == 1);
    CHECK(b.cert.serial == 2);
    CHECK(a.cert.extended_key_usage == kEkuCodeSigning);
    CHECK(a.cert.validity_days == 90);
    CHECK(a.cert.issued_by(ca.ca_cert));
    CHECK(b.cert.issued_by(ca.ca_cert));
    CHECK(ca.issued_index.size() == 2);
    CHECK(ca.serial == 3);
}

TEST_CASE("detached signatures") {
    auto& f = fixture();
    Bytes file = to_bytes("the kernel.efi bytes");

    DetachedSignature sig = sign_detached(file, f.signer.cert, f.signer.key, f.ca);
    CHECK(file == to_bytes("the kernel.efi bytes"));  // original untouched
    CHECK(verify_detached(file, sig, f.trust));

    SECTION("binary encoding round trip") {
        DetachedSignature back = DetachedSignature::decode(sig.encode());
        CHECK(back.encode() == sig.encode());
        CHECK(verify_detached(file, back, f.trust));
    }
    SECTION("one flipped byte in the file") {
        Bytes bad = file;
        bad[3] ^= 1;
        CHECK_FALSE(verify_detached(bad, sig, f.trust));
    }
    SECTION("empty trust set") {
        CHECK_FALSE(verify_detached(file, sig, {}));
    }
    SECTION("foreign trust root") {
        CodeSignCa other = ca_init("other.ca");
        CHECK_FALSE(verify_detached(file, sig, {other.ca_cert}));
    }
    SECTION("empty file signs and verifies") {
        DetachedSignature esig = sign_detached(Bytes{}, f.signer.cert,
                                               f.signer.key, f.ca);
        CHECK(verify_detached(Bytes{}, esig, f.trust));
    }
    SECTION("cert without codeSigning EKU is refused") {
        CodeSignCert stripped = f.signer.cert;
        stripped.extended_key_usage = 0;
        CHECK_THROWS_AS(sign_detached(file, stripped, f.signer.key, f.ca),
                        ValidationError);
    }
    SECTION("verification is deterministic") {
        for (int i = 0; i < 5; ++i) CHECK(verify_detached(file, sig, f.trust));
    }
}

TEST_CASE("sign order: detached signature must cover appended signatures") {
    auto& f = fixture();
    anchors::KeyHierarchy h = anchors::generate_hierarchy("Lab");
    forge::BootImage img{to_bytes("kernel payload"), forge::ImageKind::Kernel};
    forge::SignedBootImage sb_signed = forge::sign_image(img, h.db.key, h.db.cert);

    // right order: Secure Boot first, detached second
    DetachedSignature good =
        sign_order_check(sb_signed, f.signer.cert, f.signer.key, f.ca);
    CHECK(verify_detached(forge::serialize_signed(sb_signed), good, f.trust));

    // wrong order: detached over the pre-SB bytes diverges on the final file
    Bytes pre_sb = img.payload;
    Bytes post_sb = forge::serialize_signed(sb_signed);
    CHECK(crypto::sha256(pre_sb) != crypto::sha256(post_sb));  // digest oracle
    DetachedSignature premature =
        sign_detached(pre_sb, f.signer.cert, f.signer.key, f.ca);
    CHECK_FALSE(verify_detached(post_sb, premature, f.trust));

    // an image without any appended signature still signs fine
    forge::SignedBootImage unsigned_img{img, {}};
    DetachedSignature plain =
        sign_order_check(unsigned_img, f.signer.cert, f.signer.key, f.ca);
    CHECK(verify_detached(forge::serialize_signed(unsigned_img), plain, f.trust));
}

TEST_CASE("script parser accepts the documented subset") {
    IpxeScript script = IpxeScript::parse(kListing7Style);
    CHECK(script.lines.size() == 12);

    CHECK_THROWS_AS(IpxeScript::parse("rm -rf /\n"), ParseError);
    CHECK_THROWS_AS(IpxeScript::parse("kernel http://x/y\n"), ParseError);
    CHECK_THROWS_AS(IpxeScript::parse("dhcp\n"), ParseError);
}

TEST_CASE("listing-7 style script boots via plain fetch") {
    IpxeScript script = IpxeScript::parse(kListing7Style);
    Fetcher fetcher = [](const std::string& url) -> std::optional<Bytes> {
        if (url == "/boot/default/kernel.efi") return to_bytes("uki bytes");
        return std::nullopt;
    };
    ExecResult r = interpret_script(script, fetcher, {}, false,
                                    {{"ip", "10.0.2.42"}, {"mac", "a8:a1:59:0b:fe:87"}});
    CHECK(r.action == FinalAction::Booted);
    CHECK(r.boot_target == "/boot/default/kernel.efi");
    CHECK(r.vars.at("idx") == "X");  // iseq on empty expansion ran the set
    CHECK(r.vars.at("serverip") == "10.0.2.3");
}

TEST_CASE("missing resource falls through to the fail path") {
    IpxeScript script = IpxeScript::parse(kListing7Style);
    Fetcher nothing = [](const std::string&) { return std::optional<Bytes>{}; };
    ExecResult r = interpret_script(script, nothing, {}, false);
    CHECK(r.action == FinalAction::EndOfScript);  // :fail -> prompt -> :end
    bool prompted = false;
    for (const auto& ev : r.trace) prompted = prompted || ev.action == "prompt";
    CHECK(prompted);
}

namespace {

// listing-10 shape: fetch, verify against <url>&sig=true, load
const char* kVerifyingScript =
    "#!ipxe\n"
    "imgtrust --permanent\n"
    "set self http://10.0.2.3/boot/ipxe?uuid=${uuid}&mac=${mac}\n"
    "imgfetch --name ipxe ${self} || goto fail\n"
    "imgverify ipxe ${self}&sig=true || goto fail\n"
    "imgload ipxe || goto fail\n"
    "boot || goto fail\n"
    ":fail\n"
    "prompt error ||\n";

}  // namespace

TEST_CASE("imgverify gates loading under imgtrust") {
    auto& f = fixture();
    Bytes payload = to_bytes("#!ipxe\nboot /boot/default/kernel.efi\n");
    DetachedSignature sig = sign_detached(payload, f.signer.cert, f.signer.key, f.ca);

    const std::string url = "http://10.0.2.3/boot/ipxe?uuid=u1&mac=m1";
    auto resolver = [&](bool tampered) {
        return Fetcher([&, tampered](const std::string& u) -> std::optional<Bytes> {
            if (u == url) {
                Bytes data = payload;
                if (tampered) data[5] ^= 1;
                return data;
            }
            if (u == url + "&sig=true") return sig.encode();
            return std::nullopt;
        });
    };
    std::map<std::string, std::string> env{{"uuid", "u1"}, {"mac", "m1"}};
    IpxeScript script = IpxeScript::parse(kVerifyingScript);

    SECTION("valid signature loads and boots") {
        ExecResult r = interpret_script(script, resolver(false), f.trust, false, env);
        CHECK(r.action == FinalAction::Booted);
        CHECK(r.boot_target == "ipxe");
        REQUIRE(r.image("ipxe") != nullptr);
        CHECK(r.image("ipxe")->verified);
    }
    SECTION("tampered bytes fail imgverify and nothing loads") {
        ExecResult r = interpret_script(script, resolver(true), f.trust, false, env);
        CHECK(r.action != FinalAction::Booted);
        bool verify_failed = false, loaded = false;
        for (const auto& ev : r.trace) {
            if (ev.action == "verify" && ev.verdict == "bad-signature")
                verify_failed = true;
            if (ev.action == "load" && ev.verdict == "ok") loaded = true;
        }
        CHECK(verify_failed);
        CHECK_FALSE(loaded);
    }
    SECTION("direct chain without verify is rejected under imgtrust") {
        IpxeScript direct = IpxeScript::parse(
            "#!ipxe\nimgtrust --permanent\nchain " + url + " || goto fail\n"
            ":fail\nprompt error ||\n");
        ExecResult r = interpret_script(direct, resolver(false), f.trust, false, env);
        CHECK(r.action != FinalAction::Booted);
        bool rejected = false;
        for (const auto& ev : r.trace)
            if (ev.action == "load" && ev.verdict == "rejected-unverified")
                rejected = true;
        CHECK(rejected);
    }
    SECTION("embedded trust flag enforces without an imgtrust line") {
        IpxeScript direct = IpxeScript::parse(
            "#!ipxe\nchain " + url + " || goto fail\n:fail\nprompt error ||\n");
        ExecResult r = interpret_script(direct, resolver(false), f.trust, true, env);
        CHECK(r.action != FinalAction::Booted);
    }
}

TEST_CASE("dynamic scripts verify only against their own parameters") {
    auto& f = fixture();
    auto script_for = [](const std::string& params) {
        return to_bytes("#!ipxe\nset params " + params + "\nboot kernel ||\n");
    };
    Fetcher server = [&](const std::string& url) -> std::optional<Bytes> {
        const std::string base = "http://10.0.2.3/boot/ipxe?";
        const std::string sig_suffix = "&sig=true";
        if (url.starts_with(base)) {
            std::string params = url.substr(base.size());
            if (params.ends_with(sig_suffix)) {
                params = params.substr(0, params.size() - sig_suffix.size());
                return sign_detached(script_for(params), f.signer.cert,
                                     f.signer.key, f.ca)
                    .encode();
            }
            return script_for(params);
        }
        return std::nullopt;
    };

    const std::string p1 = "http://10.0.2.3/boot/ipxe?uuid=1&mac=aa";
    const std::string p2 = "http://10.0.2.3/boot/ipxe?uuid=2&mac=bb";
    Bytes script1 = *server(p1);
    Bytes sig1 = *server(p1 + "&sig=true");
    Bytes sig2 = *server(p2 + "&sig=true");
    CHECK(verify_detached(script1, DetachedSignature::decode(sig1), f.trust));
    CHECK_FALSE(verify_detached(script1, DetachedSignature::decode(sig2), f.trust));
}

TEST_CASE("interpreter safety: executed images are a subset of verified ones") {
    auto& f = fixture();

    // resource pool: five payloads, some with valid signatures, one tampered
    std::map<std::string, Bytes> resources;
    std::map<std::string, Bytes> sigs;
    for (int i = 0; i < 5; ++i) {
        std::string url = "http://srv/res" + std::to_string(i);
        Bytes data = to_bytes("resource payload " + std::to_string(i));
        resources[url] = data;
        if (i % 2 == 0)
            sigs[url + "&sig=true"] =
                sign_detached(data, f.signer.cert, f.signer.key, f.ca).encode();
    }
    // res1 carries a signature for different bytes
    sigs["http://srv/res1&sig=true"] =
        sign_detached(to_bytes("other bytes"), f.signer.cert, f.signer.key, f.ca)
            .encode();

    Fetcher fetcher = [&](const std::string& url) -> std::optional<Bytes> {
        if (auto it = resources.find(url); it != resources.end()) return it->second;
        if (auto it = sigs.find(url); it != sigs.end()) return it->second;
        return std::nullopt;
    };

    std::mt19937 rng(20230911);
    for (int trial = 0; trial < 1000; ++trial) {
        std::string text = "#!ipxe\n";
        int n_lines = 1 + static_cast<int>(rng() % 8);
        for (int i = 0; i < n_lines; ++i) {
            int res = static_cast<int>(rng() % 5);
            std::string url = "http://srv/res" + std::to_string(res);
            std::string name = "img" + std::to_string(res);
            switch (rng() % 5) {
                case 0: text += "imgfetch --name " + name + " " + url + " ||\n"; break;
                case 1: text += "imgverify " + name + " " + url + "&sig=true ||\n"; break;
                case 2: text += "imgload " + name + " ||\n"; break;
                case 3: text += "chain " + url + " ||\n"; break;
                case 4: text += "boot " + name + " ||\n"; break;
            }
        }
        IpxeScript script = IpxeScript::parse(text);
        ExecResult r = interpret_script(script, fetcher, f.trust, true);

        // collect verified names per trace order and check every ok-load
        std::set<std::string> verified;
        for (const auto& ev : r.trace) {
            if (ev.action == "verify" && ev.verdict == "ok") verified.insert(ev.detail);
            if (ev.action == "load" && ev.verdict == "ok") {
                INFO("trial " << trial << " script:\n" << text);
                CHECK(verified.contains(ev.detail));
            }
        }
        if (r.action == FinalAction::Booted) {
            REQUIRE(r.image(r.boot_target) != nullptr);
            CHECK(r.image(r.boot_target)->verified);
        }
    }
}

TEST_CASE("ca directory round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "tc_ca_test";
    fs::remove_all(dir);

    CodeSignCa ca = ca_init("ipxe.ca");
    issue_codesign(ca, "one");
    issue_codesign(ca, "two");
    save_ca(ca, dir);

    CodeSignCa back = load_ca(dir);
    CHECK(back.serial == 3);
    CHECK(back.ca_cert == ca.ca_cert);
    CHECK(back.issued_index.size() == 2);

    auto trust = load_trust_dir(dir);
    REQUIRE(trust.size() == 1);
    CHECK(trust[0] == ca.ca_cert);

    CHECK_THROWS_AS(load_ca(dir / "missing"), PrerequisiteError);
    fs::remove_all(dir);
}
