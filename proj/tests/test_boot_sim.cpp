#include <catch2/catch_amalgamated.hpp>

#include "trustchain/boot_sim.hpp"

using namespace trustchain;
using namespace trustchain::sim;

namespace {

const Fixtures& fx() {
    static Fixtures f = Fixtures::standard(1);
    return f;
}

BootConfig cfg(SecureBootMode sb, InitrdProtection ip, bool sign, bool sess,
               KeyStoreKind ks) {
    return BootConfig{sb, ip, sign, sess, ks};
}

Outcome run(const BootConfig& c, AttackKind a) {
    return run_scenario(c, AttackVector::named(a), fx());
}

}  // namespace

TEST_CASE("config invariants") {
    CHECK_THROWS_AS(cfg(SecureBootMode::Basic, InitrdProtection::InUki, false,
                        false, KeyStoreKind::None)
                        .validate(),
                    ValidationError);
    CHECK_THROWS_AS(cfg(SecureBootMode::Basic, InitrdProtection::TpmSealed, false,
                        false, KeyStoreKind::AssetTag)
                        .validate(),
                    ValidationError);
    CHECK_THROWS_AS(run_scenario(cfg(SecureBootMode::Off, InitrdProtection::InUki,
                                     false, false, KeyStoreKind::None),
                                 AttackVector::named(AttackKind::None), fx()),
                    ValidationError);
    CHECK(cfg(SecureBootMode::Uki, InitrdProtection::InUki, true, true,
              KeyStoreKind::Tpm)
              .valid());
}

TEST_CASE("config file round trip") {
    BootConfig c = cfg(SecureBootMode::Uki, InitrdProtection::TpmSealed, true,
                       true, KeyStoreKind::Tpm);
    BootConfig back = BootConfig::parse(c.serialize());
    CHECK(back.key() == c.key());
    CHECK_THROWS_AS(BootConfig::parse("secure_boot = turbo\n"), ParseError);
    CHECK_THROWS_AS(BootConfig::parse("unknown_key = 1\n"), ParseError);

    BootConfig defaults = BootConfig::parse("# comment only\n");
    CHECK(defaults.key() == BootConfig{}.key());
}

TEST_CASE("anchored scenario cells") {
    const auto base = cfg(SecureBootMode::Off, InitrdProtection::None, false,
                          false, KeyStoreKind::None);
    const auto basic = cfg(SecureBootMode::Basic, InitrdProtection::None, false,
                           false, KeyStoreKind::None);

    SECTION("no secure boot, malicious tftp compromises the ipxe load") {
        Outcome o = run(base, AttackKind::MaliciousTftp);
        CHECK(o.kind == OutcomeKind::Compromised);
        CHECK(o.step == BootStep::IpxeLoad);
    }
    SECTION("basic secure boot rejects a tampered kernel at load") {
        Outcome o = run(basic, AttackKind::TamperKernel);
        CHECK(o.kind == OutcomeKind::Rejected);
        CHECK(o.step == BootStep::HostSystemLoad);
    }
    SECTION("unprotected initrd is compromised despite basic secure boot") {
        Outcome o = run(basic, AttackKind::TamperInitrd);
        CHECK(o.kind == OutcomeKind::Compromised);
        CHECK(o.step == BootStep::HostSystemLoad);
    }
    SECTION("script parameters are the attack vector under basic secure boot") {
        Outcome o = run(basic, AttackKind::TamperScriptParams);
        CHECK(o.kind == OutcomeKind::Compromised);
        CHECK(o.step == BootStep::IpxeScript);
    }
    SECTION("uki with embedded cmdline ignores external parameters") {
        Outcome o = run(cfg(SecureBootMode::Uki, InitrdProtection::InUki, false,
                            false, KeyStoreKind::None),
                        AttackKind::TamperScriptParams);
        CHECK(o.kind == OutcomeKind::BootedClean);
        bool neutralized = false;
        for (const auto& ev : o.trace)
            if (ev.action == "cmdline-attack" && ev.verdict == "neutralized")
                neutralized = true;
        CHECK(neutralized);
    }
    SECTION("ipxe signing rejects a tampered script") {
        Outcome o = run(cfg(SecureBootMode::Basic, InitrdProtection::None, true,
                            false, KeyStoreKind::None),
                        AttackKind::TamperScriptParams);
        CHECK(o.kind == OutcomeKind::Rejected);
        CHECK(o.step == BootStep::IpxeScript);
    }
    SECTION("sealed key surfaces parameter tampering at the unseal gate") {
        Outcome o = run(cfg(SecureBootMode::Basic, InitrdProtection::TpmSealed,
                            false, false, KeyStoreKind::Tpm),
                        AttackKind::TamperScriptParams);
        CHECK(o.kind == OutcomeKind::Rejected);
        CHECK(o.step == BootStep::RootFsAccess);
        bool refused = false;
        for (const auto& ev : o.trace)
            if (ev.action == "unseal" && ev.verdict == "refused") refused = true;
        CHECK(refused);
    }
    SECTION("plaintext dnbd leaks to a passive eavesdropper") {
        Outcome o = run(base, AttackKind::PassiveEavesdrop);
        CHECK(o.kind == OutcomeKind::SecretLeaked);
        CHECK(o.what == "dnbd payload");
    }
    SECTION("session encryption defeats the passive eavesdropper") {
        Outcome o = run(cfg(SecureBootMode::Basic, InitrdProtection::None, false,
                            true, KeyStoreKind::Tpm),
                        AttackKind::PassiveEavesdrop);
        CHECK(o.kind == OutcomeKind::BootedClean);
    }
    SECTION("root attacker reads the asset tag but only uses the TPM") {
        Outcome tag = run(cfg(SecureBootMode::Basic, InitrdProtection::None,
                              false, true, KeyStoreKind::AssetTag),
                          AttackKind::RootKeyExfiltration);
        CHECK(tag.kind == OutcomeKind::SecretLeaked);
        CHECK(tag.what == "long-term key");

        Outcome tpm = run(cfg(SecureBootMode::Basic, InitrdProtection::None,
                              false, true, KeyStoreKind::Tpm),
                          AttackKind::RootKeyExfiltration);
        CHECK(tpm.kind == OutcomeKind::SecretLeaked);
        CHECK(tpm.what == "session key plaintext (long-term key safe)");
    }
}

TEST_CASE("expected_outcome anchors") {
    CHECK(expected_outcome(cfg(SecureBootMode::Off, InitrdProtection::None, false,
                               false, KeyStoreKind::None),
                           AttackVector::named(AttackKind::MaliciousDhcp))
              .kind == OutcomeKind::Compromised);
    CHECK(expected_outcome(cfg(SecureBootMode::Off, InitrdProtection::None, false,
                               false, KeyStoreKind::None),
                           AttackVector::named(AttackKind::MaliciousDhcp))
              .step == BootStep::Dhcp);

    // the fully protected configuration rejects or ignores every tamper vector
    BootConfig full = cfg(SecureBootMode::Uki, InitrdProtection::InUki, true,
                          true, KeyStoreKind::Tpm);
    for (AttackKind k : {AttackKind::TamperScriptParams, AttackKind::TamperKernel,
                         AttackKind::TamperInitrd}) {
        auto e = expected_outcome(full, AttackVector::named(k));
        CHECK((e.kind == OutcomeKind::Rejected || e.kind == OutcomeKind::BootedClean));
    }

    for (const BootConfig& c : config_lattice())
        if (c.valid())
            CHECK(expected_outcome(c, AttackVector::named(AttackKind::None)).kind ==
                  OutcomeKind::BootedClean);
}

TEST_CASE("malicious dhcp redirect is caught by secure boot") {
    Outcome o = run(cfg(SecureBootMode::Basic, InitrdProtection::None, false,
                        false, KeyStoreKind::None),
                    AttackKind::MaliciousDhcp);
    CHECK(o.kind == OutcomeKind::Rejected);
    CHECK(o.step == BootStep::IpxeLoad);

    Outcome off = run(cfg(SecureBootMode::Off, InitrdProtection::None, false,
                          false, KeyStoreKind::None),
                      AttackKind::MaliciousDhcp);
    CHECK(off.kind == OutcomeKind::Compromised);
    CHECK(off.step == BootStep::Dhcp);
}

TEST_CASE("block swap is detected exactly when sessions are encrypted") {
    Outcome enc = run(cfg(SecureBootMode::Basic, InitrdProtection::None, false,
                          true, KeyStoreKind::Tpm),
                      AttackKind::DnbdBlockSwap);
    CHECK(enc.kind == OutcomeKind::Rejected);
    CHECK(enc.step == BootStep::RootFsAccess);

    Outcome plain = run(cfg(SecureBootMode::Basic, InitrdProtection::None, false,
                            false, KeyStoreKind::None),
                        AttackKind::DnbdBlockSwap);
    CHECK(plain.kind == OutcomeKind::Compromised);
    CHECK(plain.step == BootStep::RootFsAccess);
}

TEST_CASE("tpm-encrypted initrd rejects envelope tampering at load") {
    Outcome o = run(cfg(SecureBootMode::Basic, InitrdProtection::TpmEncrypted,
                        false, false, KeyStoreKind::Tpm),
                    AttackKind::TamperInitrd);
    CHECK(o.kind == OutcomeKind::Rejected);
    CHECK(o.step == BootStep::HostSystemLoad);

    // clean boot decrypts fine
    Outcome clean = run(cfg(SecureBootMode::Basic, InitrdProtection::TpmEncrypted,
                            false, false, KeyStoreKind::Tpm),
                        AttackKind::None);
    CHECK(clean.kind == OutcomeKind::BootedClean);
}

TEST_CASE("sealed initrd tampering is contained at the unseal gate") {
    Outcome o = run(cfg(SecureBootMode::Basic, InitrdProtection::TpmSealed, false,
                        true, KeyStoreKind::Tpm),
                    AttackKind::TamperInitrd);
    CHECK(o.kind == OutcomeKind::Rejected);
    CHECK(o.step == BootStep::RootFsAccess);
}

TEST_CASE("trace is deterministic for identical scenario inputs") {
    BootConfig c = cfg(SecureBootMode::Uki, InitrdProtection::InUki, true, true,
                       KeyStoreKind::Tpm);
    Outcome a = run(c, AttackKind::TamperScriptParams);
    Outcome b = run(c, AttackKind::TamperScriptParams);
    CHECK(a.trace_text() == b.trace_text());

    Outcome c1 = run(c, AttackKind::None);
    Outcome c2 = run(c, AttackKind::None);
    CHECK(c1.trace_text() == c2.trace_text());
}

TEST_CASE("trace pcr extends match an external fold oracle") {
    BootConfig c = cfg(SecureBootMode::Basic, InitrdProtection::TpmSealed, false,
                       true, KeyStoreKind::Tpm);
    Outcome o = run(c, AttackKind::None);
    REQUIRE(o.kind == OutcomeKind::BootedClean);

    // oracle: fold the hash chain over the contents the chain loads
    const Fixtures& f = fx();
    auto fold = [](std::initializer_list<Bytes> measurements) {
        crypto::Digest acc{};
        for (const auto& m : measurements)
            acc = crypto::sha256({acc, crypto::sha256(m)});
        return acc;
    };
    crypto::Digest pcr4 = fold({f.ipxe_signed});
    crypto::Digest pcr8 = fold({f.kernel_signed});
    crypto::Digest pcr9 = fold({to_bytes(kCleanCmdline), f.initrd});

    std::map<std::string, std::string> last_value;  // pcr index -> last hex
    for (const auto& ev : o.trace)
        if (ev.action == "pcr-extend") {
            auto pos = ev.detail.find("pcr=");
            REQUIRE(pos != std::string::npos);
            last_value[ev.detail.substr(pos + 4)] = ev.verdict;
        }
    CHECK(last_value.at("4") == to_hex(pcr4));
    CHECK(last_value.at("8") == to_hex(pcr8));
    CHECK(last_value.at("9") == to_hex(pcr9));
}

TEST_CASE("full matrix has zero mismatches and honors taint monotonicity") {
    MatrixResult m = full_matrix(fx());

    // 144-cell lattice minus the invariant violations, times 8 attacks
    CHECK(m.skipped_invalid == 72);
    CHECK(m.cells.size() == 72u * 8u);

    int mismatches = 0;
    for (const auto& cell : m.cells) {
        if (!cell.match) {
            ++mismatches;
            UNSCOPED_INFO("mismatch at " << cell.config.key() << " / "
                          << attack_name(cell.attack.kind) << ": expected "
                          << outcome_kind_name(cell.expected.kind) << "@"
                          << step_name(cell.expected.step) << ", got "
                          << outcome_kind_name(cell.actual.kind) << "@"
                          << step_name(cell.actual.step));
        }
        // compromise is absorbing: no rejection event may appear in the trace
        if (cell.actual.kind == OutcomeKind::Compromised)
            for (const auto& ev : cell.actual.trace)
                CHECK(ev.verdict != "boot-rejected");
    }
    CHECK(mismatches == 0);
    CHECK(m.mismatches == 0);
}

TEST_CASE("a deliberately broken fixture reports mismatches, not crashes") {
    Fixtures broken = fx();
    broken.kernel_signed = broken.kernel;  // unsigned kernel in Basic configs
    MatrixResult m = full_matrix(broken);
    CHECK(m.mismatches > 0);
}

TEST_CASE("report reflects the uki fetch/verification trade") {
    auto off = cfg(SecureBootMode::Off, InitrdProtection::None, false, false,
                   KeyStoreKind::None);
    auto basic = cfg(SecureBootMode::Basic, InitrdProtection::None, false, false,
                     KeyStoreKind::None);
    auto uki = cfg(SecureBootMode::Uki, InitrdProtection::InUki, false, false,
                   KeyStoreKind::None);

    std::vector<ScenarioResult> results;
    for (const auto& c : {off, basic, uki})
        results.push_back(
            {c, AttackVector::named(AttackKind::None), run(c, AttackKind::None)});

    Report rep = emit_report(results);
    REQUIRE(rep.rows.size() == results.size());

    const auto& r_off = rep.rows[0];
    const auto& r_basic = rep.rows[1];
    const auto& r_uki = rep.rows[2];

    CHECK(r_off.verify_ops == 0);
    CHECK(r_off.verify_ops < r_basic.verify_ops);
    CHECK(r_basic.verify_ops <= r_uki.verify_ops);
    CHECK(r_basic.payload_fetches == 2);  // kernel + initrd
    CHECK(r_uki.payload_fetches == 1);    // one unified image
    CHECK(r_uki.payload_fetches == r_basic.payload_fetches - 1);
    CHECK(r_uki.assembly_ops > r_basic.assembly_ops);

    CHECK(rep.csv().find("payload_fetches") != std::string::npos);
    CHECK_THROWS_AS(emit_report({}), ValidationError);
}

TEST_CASE("trace text format") {
    Outcome o = run(cfg(SecureBootMode::Basic, InitrdProtection::None, false,
                        false, KeyStoreKind::None),
                    AttackKind::None);
    std::string text = o.trace_text();
    CHECK(text.find("step=1 action=dhcp-offer") != std::string::npos);
    CHECK(text.find("step=2 action=secure-boot-verify") != std::string::npos);
    CHECK(text.find("outcome=BootedClean") != std::string::npos);
    // every step from dhcp to vm-launch appears
    for (int s = 1; s <= 7; ++s)
        CHECK(text.find("step=" + std::to_string(s) + " ") != std::string::npos);
}
