#pragma once

// iPXE-style code signing: a small issuing CA, codeSigning certificates,
// detached signatures stored next to the target file, and an interpreter
// for the verification subset of the iPXE script language (imgtrust /
// imgfetch / imgverify / imgload and friends).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/errors.hpp"
#include "trustchain/image_forge.hpp"

namespace trustchain::ipxe {

// key usage bits
constexpr std::uint32_t kUsageDigitalSignature = 1u << 0;
constexpr std::uint32_t kUsageCrlSign = 1u << 1;
constexpr std::uint32_t kUsageKeyCertSign = 1u << 2;
// extended key usage bits
constexpr std::uint32_t kEkuCodeSigning = 1u << 0;

constexpr std::uint32_t kIssuedCertDays = 90;

inline constexpr const char* kCaArmorLabel = "TRUSTCHAIN CA CERTIFICATE";
inline constexpr const char* kCodeSignArmorLabel = "TRUSTCHAIN CODESIGN CERTIFICATE";

// ---------------------------------------------------------------------------
// certificates
// ---------------------------------------------------------------------------

struct CaCert {
    std::string subject;
    crypto::RsaPublicKey public_key;
    std::uint32_t key_usage = 0;
    Bytes self_signature;

    Bytes to_be_signed() const {
        BinaryWriter w;
        w.raw(to_bytes("CAC1"));
        w.str(subject);
        w.blob(public_key.to_der());
        w.u32(key_usage);
        return w.take();
    }

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_be_signed());
        w.blob(self_signature);
        return w.take();
    }

    static CaCert decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("CAC1");
        CaCert c;
        c.subject = r.str();
        Bytes der = r.blob();
        c.public_key = crypto::RsaPublicKey::from_der(der);
        if (c.public_key.to_der() != der)
            throw ParseError("non-canonical public key encoding");
        c.key_usage = r.u32();
        c.self_signature = r.blob();
        r.require_done();
        return c;
    }

    bool operator==(const CaCert& o) const { return encode() == o.encode(); }
};

struct CodeSignCert {
    std::string subject;
    crypto::RsaPublicKey public_key;
    std::uint32_t key_usage = 0;
    std::uint32_t extended_key_usage = 0;
    std::uint64_t serial = 0;
    std::uint32_t validity_days = kIssuedCertDays;
    std::string issuer_subject;
    Bytes issuer_signature;

    Bytes to_be_signed() const {
        BinaryWriter w;
        w.raw(to_bytes("CSC1"));
        w.str(subject);
        w.blob(public_key.to_der());
        w.u32(key_usage);
        w.u32(extended_key_usage);
        w.u64(serial);
        w.u32(validity_days);
        w.str(issuer_subject);
        return w.take();
    }

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_be_signed());
        w.blob(issuer_signature);
        return w.take();
    }

    static CodeSignCert decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("CSC1");
        CodeSignCert c;
        c.subject = r.str();
        Bytes der = r.blob();
        c.public_key = crypto::RsaPublicKey::from_der(der);
        if (c.public_key.to_der() != der)
            throw ParseError("non-canonical public key encoding");
        c.key_usage = r.u32();
        c.extended_key_usage = r.u32();
        c.serial = r.u64();
        c.validity_days = r.u32();
        c.issuer_subject = r.str();
        c.issuer_signature = r.blob();
        r.require_done();
        return c;
    }

    bool has_code_signing_eku() const {
        return (extended_key_usage & kEkuCodeSigning) != 0;
    }

    bool issued_by(const CaCert& ca) const {
        return ca.public_key.verify_pkcs1_sha256(to_be_signed(), issuer_signature);
    }
};

// ---------------------------------------------------------------------------
// certificate authority
// ---------------------------------------------------------------------------

// Issuance mutates the serial counter; callers serialize access to one
// instance. Verification paths never touch a CA object.
struct CodeSignCa {
    CaCert ca_cert;
    crypto::RsaPrivateKey ca_key;
    std::uint64_t serial = 1;  // next serial to assign, mirrors "echo 01 > ca.srl"
    std::uint32_t default_days = kIssuedCertDays;
    std::vector<CodeSignCert> issued_index;
};

inline CodeSignCa ca_init(const std::string& subject) {
    CodeSignCa ca;
    ca.ca_key = crypto::RsaPrivateKey::generate();
    ca.ca_cert.subject = subject;
    ca.ca_cert.public_key = ca.ca_key.public_key();
    ca.ca_cert.key_usage = kUsageCrlSign | kUsageKeyCertSign;
    ca.ca_cert.self_signature =
        ca.ca_key.sign_pkcs1_sha256(ca.ca_cert.to_be_signed());
    return ca;
}

struct IssuedCert {
    CodeSignCert cert;
    crypto::RsaPrivateKey key;
};

inline IssuedCert issue_codesign(CodeSignCa& ca, const std::string& subject) {
    IssuedCert out;
    out.key = crypto::RsaPrivateKey::generate();
    out.cert.subject = subject;
    out.cert.public_key = out.key.public_key();
    out.cert.key_usage = kUsageDigitalSignature;
    out.cert.extended_key_usage = kEkuCodeSigning;
    out.cert.serial = ca.serial++;
    out.cert.validity_days = ca.default_days;
    out.cert.issuer_subject = ca.ca_cert.subject;
    out.cert.issuer_signature = ca.ca_key.sign_pkcs1_sha256(out.cert.to_be_signed());
    ca.issued_index.push_back(out.cert);
    return out;
}

// ---------------------------------------------------------------------------
// detached signatures (.sig files, magic DSG1)
// ---------------------------------------------------------------------------

struct DetachedSignature {
    crypto::Digest digest{};  // SHA-256 of the target file
    CodeSignCert signer_cert;
    std::vector<CaCert> ca_chain;
    Bytes signature;  // over the raw target bytes

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_bytes("DSG1"));
        w.raw(digest);
        w.blob(signer_cert.encode());
        w.u16(static_cast<std::uint16_t>(ca_chain.size()));
        for (const auto& c : ca_chain) w.blob(c.encode());
        w.blob(signature);
        return w.take();
    }

    static DetachedSignature decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("DSG1");
        DetachedSignature s;
        Bytes d = r.raw(32);
        std::copy(d.begin(), d.end(), s.digest.begin());
        s.signer_cert = CodeSignCert::decode(r.blob());
        std::uint16_t n = r.u16();
        for (std::uint16_t i = 0; i < n; ++i)
            s.ca_chain.push_back(CaCert::decode(r.blob()));
        s.signature = r.blob();
        r.require_done();
        return s;
    }
};

inline DetachedSignature sign_detached(ByteView file, const CodeSignCert& cert,
                                       const crypto::RsaPrivateKey& key,
                                       const CodeSignCa& ca) {
    if (!cert.has_code_signing_eku())
        throw ValidationError("certificate lacks the codeSigning EKU");
    if (!(cert.public_key == key.public_key()))
        throw ValidationError("certificate does not match the signing key");
    DetachedSignature s;
    s.digest = crypto::sha256(file);
    s.signer_cert = cert;
    s.ca_chain = {ca.ca_cert};
    s.signature = key.sign_pkcs1_sha256(file);
    return s;
}

// Deterministic and total: digest match, codeSigning EKU, issuer chain
// rooted in `trust`, and the signature itself must all hold.
inline bool verify_detached(ByteView file, const DetachedSignature& sig,
                            const std::vector<CaCert>& trust) {
    if (crypto::sha256(file) != sig.digest) return false;
    if (!sig.signer_cert.has_code_signing_eku()) return false;
    bool rooted = false;
    for (const CaCert& ca : trust)
        if (sig.signer_cert.issued_by(ca)) rooted = true;
    if (!rooted) return false;
    return sig.signer_cert.public_key.verify_pkcs1_sha256(file, sig.signature);
}

// The iPXE signature must be made after the Secure Boot signature: it covers
// the payload plus all appended signature blocks, i.e. the final file bytes.
inline DetachedSignature sign_order_check(const forge::SignedBootImage& image,
                                          const CodeSignCert& cert,
                                          const crypto::RsaPrivateKey& key,
                                          const CodeSignCa& ca) {
    return sign_detached(forge::serialize_signed(image), cert, key, ca);
}

// ---------------------------------------------------------------------------
// iPXE script subset
// ---------------------------------------------------------------------------

inline const std::set<std::string>& known_verbs() {
    static const std::set<std::string> verbs = {
        "set",     "iseq",      "imgtrust", "imgfetch", "imgverify",
        "imgload", "imgexec",   "chain",    "boot",     "goto",
        "prompt",  "imgfree"};
    return verbs;
}

struct SimpleCommand {
    std::string verb;
    std::vector<std::string> args;
};

struct ScriptLine {
    int number = 0;
    std::string label;  // non-empty for ":name" lines
    std::vector<SimpleCommand> seq;  // commands joined by &&
    enum class OnFail { Abort, Ignore, Goto } on_fail = OnFail::Abort;
    std::string fail_label;
};

struct IpxeScript {
    std::vector<ScriptLine> lines;

    static IpxeScript parse(std::string_view text) {
        IpxeScript script;
        int number = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            std::size_t eol = text.find('\n', pos);
            std::string_view raw = text.substr(
                pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
            pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
            ++number;
            std::string_view line = raw;
            while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
                line.remove_suffix(1);
            while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
            if (line.empty()) continue;
            if (number == 1 && line.starts_with("#!")) continue;
            if (line.starts_with("#")) continue;

            ScriptLine out;
            out.number = number;
            if (line.front() == ':') {
                out.label = std::string(line.substr(1));
                if (out.label.empty()) throw ParseError("empty label");
                script.lines.push_back(std::move(out));
                continue;
            }

            // split tokens, honoring && and || separators
            std::vector<std::string> tokens;
            std::string cur;
            for (std::size_t i = 0; i <= line.size(); ++i) {
                char c = i < line.size() ? line[i] : ' ';
                if (c == ' ' || c == '\t') {
                    if (!cur.empty()) tokens.push_back(std::move(cur));
                    cur.clear();
                } else {
                    cur.push_back(c);
                }
            }

            SimpleCommand cmd;
            bool expect_verb = true;
            bool after_or = false;
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                const std::string& t = tokens[i];
                if (t == "&&") {
                    if (cmd.verb.empty()) throw ParseError("dangling && on line " +
                                                           std::to_string(number));
                    out.seq.push_back(std::move(cmd));
                    cmd = {};
                    expect_verb = true;
                    continue;
                }
                if (t == "||") {
                    if (!cmd.verb.empty()) {
                        out.seq.push_back(std::move(cmd));
                        cmd = {};
                    }
                    after_or = true;
                    // remainder must be empty or "goto label"
                    if (i + 1 == tokens.size()) {
                        out.on_fail = ScriptLine::OnFail::Ignore;
                    } else if (i + 3 == tokens.size() && tokens[i + 1] == "goto") {
                        out.on_fail = ScriptLine::OnFail::Goto;
                        out.fail_label = tokens[i + 2];
                        i += 2;
                    } else {
                        throw ParseError("unsupported || handler on line " +
                                         std::to_string(number));
                    }
                    continue;
                }
                if (after_or)
                    throw ParseError("tokens after || handler on line " +
                                     std::to_string(number));
                if (expect_verb) {
                    if (!known_verbs().contains(t))
                        throw ParseError("unknown verb '" + t + "' on line " +
                                         std::to_string(number));
                    cmd.verb = t;
                    expect_verb = false;
                } else {
                    cmd.args.push_back(t);
                }
            }
            if (!cmd.verb.empty()) out.seq.push_back(std::move(cmd));
            if (out.seq.empty() && out.on_fail == ScriptLine::OnFail::Abort)
                throw ParseError("empty command line " + std::to_string(number));
            script.lines.push_back(std::move(out));
        }
        return script;
    }
};

// ---------------------------------------------------------------------------
// interpreter
// ---------------------------------------------------------------------------

using Fetcher = std::function<std::optional<Bytes>(const std::string& url)>;

struct TraceEvent {
    int line = 0;
    std::string action;
    std::string detail;
    std::string verdict;
};

enum class FinalAction { Booted, Failed, EndOfScript };

struct FetchedImage {
    std::string url;
    Bytes data;
    bool verified = false;
};

struct ExecResult {
    std::vector<TraceEvent> trace;
    FinalAction action = FinalAction::EndOfScript;
    std::string boot_target;   // image name when action == Booted
    std::string failure;       // reason when action == Failed
    bool trust_enforced = false;
    std::map<std::string, std::string> vars;
    std::map<std::string, FetchedImage> images;

    const FetchedImage* image(const std::string& name) const {
        auto it = images.find(name);
        return it == images.end() ? nullptr : &it->second;
    }
};

namespace detail {

// ${name} expansion; unset settings expand to empty text, encoding
// suffixes like ${mac:hexhyp} resolve by base name.
inline std::string expand(const std::string& input,
                          const std::map<std::string, std::string>& vars) {
    std::string out;
    std::size_t i = 0;
    while (i < input.size()) {
        if (input[i] == '$' && i + 1 < input.size() && input[i + 1] == '{') {
            std::size_t close = input.find('}', i + 2);
            if (close == std::string::npos) {
                out += input.substr(i);
                break;
            }
            std::string name = input.substr(i + 2, close - i - 2);
            std::size_t colon = name.find(':');
            if (colon != std::string::npos) name = name.substr(0, colon);
            auto it = vars.find(name);
            if (it != vars.end()) out += it->second;
            i = close + 1;
        } else {
            out.push_back(input[i++]);
        }
    }
    return out;
}

inline std::string strip_type_suffix(const std::string& name) {
    std::size_t colon = name.find(':');
    return colon == std::string::npos ? name : name.substr(0, colon);
}

}  // namespace detail

inline ExecResult interpret_script(const IpxeScript& script, const Fetcher& fetcher,
                                   const std::vector<CaCert>& trust,
                                   bool embedded_trust_flag,
                                   std::map<std::string, std::string> env = {}) {
    ExecResult r;
    r.vars = std::move(env);
    r.trust_enforced = embedded_trust_flag;

    std::map<std::string, std::size_t> labels;
    for (std::size_t i = 0; i < script.lines.size(); ++i)
        if (!script.lines[i].label.empty()) labels[script.lines[i].label] = i;

    auto trace = [&r](int line, std::string action, std::string detail,
                      std::string verdict) {
        r.trace.push_back({line, std::move(action), std::move(detail),
                           std::move(verdict)});
    };

    // returns false when the simple command fails
    std::string selected;
    auto run_cmd = [&](const ScriptLine& line, const SimpleCommand& cmd,
                       std::optional<std::size_t>& jump) -> bool {
        std::vector<std::string> args;
        for (const auto& a : cmd.args) args.push_back(detail::expand(a, r.vars));

        auto positional = [&args](std::size_t skip_flags = 0) {
            std::vector<std::string> out;
            for (std::size_t i = skip_flags; i < args.size(); ++i)
                if (!args[i].starts_with("-")) out.push_back(args[i]);
            return out;
        };

        auto load_check = [&](const std::string& name) -> bool {
            auto it = r.images.find(name);
            if (it == r.images.end()) {
                trace(line.number, "load", name, "no-such-image");
                return false;
            }
            if (r.trust_enforced && !it->second.verified) {
                trace(line.number, "load", name, "rejected-unverified");
                return false;
            }
            trace(line.number, "load", name, "ok");
            selected = name;
            return true;
        };

        const std::string& verb = cmd.verb;
        if (verb == "set") {
            if (args.empty()) return false;
            std::string name = detail::strip_type_suffix(cmd.args[0]);
            std::string value;
            for (std::size_t i = 1; i < args.size(); ++i) {
                if (i > 1) value += ' ';
                value += args[i];
            }
            r.vars[name] = value;
            return true;
        }
        if (verb == "iseq") {
            std::string a = args.size() > 0 ? args[0] : "";
            std::string b = args.size() > 1 ? args[1] : "";
            return a == b;
        }
        if (verb == "imgtrust") {
            r.trust_enforced = true;
            trace(line.number, "imgtrust",
                  args.empty() ? "" : args[0], "enforced");
            return true;
        }
        if (verb == "imgfree") {
            r.images.clear();
            selected.clear();
            return true;
        }
        if (verb == "imgfetch") {
            std::string name;
            std::vector<std::string> rest;
            for (std::size_t i = 0; i < args.size(); ++i) {
                if (args[i] == "--name" && i + 1 < args.size()) {
                    name = args[++i];
                } else if (!args[i].starts_with("-")) {
                    rest.push_back(args[i]);
                }
            }
            if (rest.empty()) return false;
            const std::string& url = rest[0];
            if (name.empty()) name = url;
            auto data = fetcher(url);
            if (!data) {
                trace(line.number, "fetch", url, "not-found");
                return false;
            }
            trace(line.number, "fetch", url, "ok");
            r.images[name] = {url, std::move(*data), false};
            return true;
        }
        if (verb == "imgverify") {
            auto pos = positional();
            if (pos.size() < 2) return false;
            const std::string& name = pos[0];
            const std::string& sig_url = pos[1];
            auto it = r.images.find(name);
            if (it == r.images.end()) {
                trace(line.number, "verify", name, "no-such-image");
                return false;
            }
            auto sig_data = fetcher(sig_url);
            if (!sig_data) {
                trace(line.number, "verify", sig_url, "sig-not-found");
                return false;
            }
            bool ok = false;
            try {
                DetachedSignature sig = DetachedSignature::decode(*sig_data);
                ok = verify_detached(it->second.data, sig, trust);
            } catch (const Error&) {
                ok = false;
            }
            trace(line.number, "verify", name, ok ? "ok" : "bad-signature");
            if (!ok) return false;
            it->second.verified = true;
            return true;
        }
        if (verb == "imgload" || verb == "imgexec") {
            auto pos = positional();
            if (pos.empty()) return false;
            return load_check(pos[0]);
        }
        if (verb == "chain" || verb == "boot") {
            auto pos = positional();
            std::string name;
            if (pos.empty()) {
                if (selected.empty()) return false;
                name = selected;
            } else {
                name = pos[0];
                if (!r.images.contains(name)) {
                    // treat the argument as a URL to fetch first
                    auto data = fetcher(name);
                    if (!data) {
                        trace(line.number, "fetch", name, "not-found");
                        return false;
                    }
                    trace(line.number, "fetch", name, "ok");
                    r.images[name] = {name, std::move(*data), false};
                }
            }
            if (!load_check(name)) return false;
            trace(line.number, "boot", name, "ok");
            r.action = FinalAction::Booted;
            r.boot_target = name;
            return true;
        }
        if (verb == "goto") {
            if (args.empty()) return false;
            auto it = labels.find(args[0]);
            if (it == labels.end()) {
                trace(line.number, "goto", args[0], "no-such-label");
                return false;
            }
            jump = it->second;
            return true;
        }
        if (verb == "prompt") {
            trace(line.number, "prompt", "", "shown");
            return true;
        }
        return false;
    };

    std::size_t pc = 0;
    int steps = 0;
    while (pc < script.lines.size()) {
        if (++steps > 10000) {
            r.action = FinalAction::Failed;
            r.failure = "step limit exceeded";
            return r;
        }
        const ScriptLine& line = script.lines[pc];
        if (!line.label.empty()) {
            ++pc;
            continue;
        }
        bool failed = false;
        std::optional<std::size_t> jump;
        for (const auto& cmd : line.seq) {
            if (!run_cmd(line, cmd, jump)) {
                failed = true;
                break;
            }
            if (r.action == FinalAction::Booted) return r;
            if (jump) break;
        }
        if (failed) {
            switch (line.on_fail) {
                case ScriptLine::OnFail::Ignore:
                    ++pc;
                    continue;
                case ScriptLine::OnFail::Goto: {
                    auto it = labels.find(line.fail_label);
                    if (it == labels.end()) {
                        r.action = FinalAction::Failed;
                        r.failure = "missing label " + line.fail_label;
                        return r;
                    }
                    pc = it->second;
                    continue;
                }
                case ScriptLine::OnFail::Abort:
                    r.action = FinalAction::Failed;
                    r.failure = "command failed on line " + std::to_string(line.number);
                    return r;
            }
        }
        if (jump) {
            pc = *jump;
            continue;
        }
        ++pc;
    }
    r.action = FinalAction::EndOfScript;
    return r;
}

// ---------------------------------------------------------------------------
// on-disk formats
// ---------------------------------------------------------------------------

inline void save_ca(const CodeSignCa& ca, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "signed");
    write_text_file(dir / "ca.key", ca.ca_key.to_pem());
    write_text_file(dir / "ca.crt", armor(kCaArmorLabel, ca.ca_cert.encode()));
    write_text_file(dir / "ca.srl", std::to_string(ca.serial) + "\n");
    for (const auto& cert : ca.issued_index)
        write_text_file(dir / "signed" / (std::to_string(cert.serial) + ".crt"),
                        armor(kCodeSignArmorLabel, cert.encode()));
}

inline CodeSignCa load_ca(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir / "ca.key"))
        throw PrerequisiteError("no CA in " + dir.string() + " (run ipxe-ca init)");
    CodeSignCa ca;
    ca.ca_key = crypto::RsaPrivateKey::from_pem(read_text_file(dir / "ca.key"));
    ca.ca_cert = CaCert::decode(dearmor(kCaArmorLabel, read_text_file(dir / "ca.crt")));
    std::string srl = read_text_file(dir / "ca.srl");
    ca.serial = std::stoull(srl);
    if (fs::exists(dir / "signed"))
        for (const auto& e : fs::directory_iterator(dir / "signed"))
            ca.issued_index.push_back(CodeSignCert::decode(
                dearmor(kCodeSignArmorLabel, read_text_file(e.path()))));
    return ca;
}

inline std::vector<CaCert> load_trust_dir(const std::filesystem::path& dir) {
    std::vector<CaCert> trust;
    if (!std::filesystem::exists(dir))
        throw PrerequisiteError("trust directory " + dir.string() + " not found");
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".crt") {
            std::string text = read_text_file(e.path());
            if (text.find(kCaArmorLabel) != std::string::npos)
                trust.push_back(CaCert::decode(dearmor(kCaArmorLabel, text)));
        }
    }
    return trust;
}

}  // namespace trustchain::ipxe
