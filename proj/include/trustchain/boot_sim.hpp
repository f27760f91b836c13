#pragma once

// The seven-step remote-boot chain as a deterministic state machine over the
// other modules: the UEFI store gates binaries, the script interpreter gates
// the iPXE script, the TPM measures and seals, the block service carries the
// root filesystem. A scenario is one security configuration crossed with one
// attack vector; the outcome records where the chain rejected the attack,
// where it was compromised, or what leaked.
//
// Outcome attribution rules, resolved here once and used consistently by
// both run_scenario and expected_outcome:
//  - An attack detected by a gate yields Rejected at the detecting step.
//  - Attacker code that loads undetected (iPXE binary, kernel, or an initrd
//    with no configured protection) latches a compromise at the step owning
//    that payload; later gates are bypassed, compromise is absorbing.
//  - Kernel parameters are data: under a UKI the embedded ones win and the
//    attack is neutralized; under sealing the PCR drift surfaces at the
//    unseal gate; otherwise the parameters take effect at the script step.
//  - An initrd protected by sealing is deferred to the unseal gate even
//    though it executed, which is the configured containment for it.
//  - PCR mapping: iPXE binary -> PCR 4, kernel image -> PCR 8, kernel
//    parameters then initrd -> two extends of PCR 9. Seal policies cover
//    {4, 8, 9}.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "trustchain/block_transport.hpp"
#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/errors.hpp"
#include "trustchain/image_forge.hpp"
#include "trustchain/provisioning.hpp"
#include "trustchain/script_signing.hpp"
#include "trustchain/soft_tpm.hpp"
#include "trustchain/trust_anchors.hpp"

namespace trustchain::sim {

// ---------------------------------------------------------------------------
// configuration and attack space
// ---------------------------------------------------------------------------

enum class BootStep : int {
    Dhcp = 1,
    IpxeLoad = 2,
    IpxeScript = 3,
    BootDecision = 4,
    HostSystemLoad = 5,
    RootFsAccess = 6,
    VmLaunch = 7,
};

inline const char* step_name(BootStep s) {
    switch (s) {
        case BootStep::Dhcp: return "dhcp";
        case BootStep::IpxeLoad: return "ipxe-load";
        case BootStep::IpxeScript: return "ipxe-script";
        case BootStep::BootDecision: return "boot-decision";
        case BootStep::HostSystemLoad: return "host-system-load";
        case BootStep::RootFsAccess: return "rootfs-access";
        case BootStep::VmLaunch: return "vm-launch";
    }
    return "?";
}

enum class SecureBootMode { Off, Basic, Uki };
enum class InitrdProtection { None, InUki, TpmSealed, TpmEncrypted };
enum class KeyStoreKind { None, AssetTag, Tpm };

struct BootConfig {
    SecureBootMode secure_boot = SecureBootMode::Off;
    InitrdProtection initrd_protection = InitrdProtection::None;
    bool ipxe_signing = false;
    bool session_encryption = false;
    KeyStoreKind key_store = KeyStoreKind::None;

    void validate() const {
        if (initrd_protection == InitrdProtection::InUki &&
            secure_boot != SecureBootMode::Uki)
            throw ValidationError("initrd_protection=in_uki requires secure_boot=uki");
        if ((initrd_protection == InitrdProtection::TpmSealed ||
             initrd_protection == InitrdProtection::TpmEncrypted) &&
            key_store != KeyStoreKind::Tpm)
            throw ValidationError("TPM-based initrd protection requires key_store=tpm");
    }

    bool valid() const {
        try {
            validate();
            return true;
        } catch (const ValidationError&) {
            return false;
        }
    }

    std::string key() const {
        static const char* sb[] = {"off", "basic", "uki"};
        static const char* ip[] = {"none", "in_uki", "tpm_sealed", "tpm_encrypted"};
        static const char* ks[] = {"none", "asset_tag", "tpm"};
        std::string out;
        out += "sb=";
        out += sb[static_cast<int>(secure_boot)];
        out += ",initrd=";
        out += ip[static_cast<int>(initrd_protection)];
        out += ",ipxe_sign=";
        out += ipxe_signing ? "1" : "0";
        out += ",sess_enc=";
        out += session_encryption ? "1" : "0";
        out += ",keystore=";
        out += ks[static_cast<int>(key_store)];
        return out;
    }

    // flat key = value document, one pair per line, '#' comments
    static BootConfig parse(std::string_view text) {
        BootConfig c;
        std::size_t pos = 0;
        auto trim = [](std::string s) {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
                s.erase(s.begin());
            while (!s.empty() &&
                   (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
                s.pop_back();
            return s;
        };
        while (pos < text.size()) {
            std::size_t eol = text.find('\n', pos);
            std::string line(text.substr(
                pos, eol == std::string_view::npos ? text.size() - pos : eol - pos));
            pos = eol == std::string_view::npos ? text.size() : eol + 1;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ParseError("config line without '=': " + t);
            std::string key = trim(t.substr(0, eq));
            std::string value = trim(t.substr(eq + 1));
            if (key == "secure_boot") {
                if (value == "off") c.secure_boot = SecureBootMode::Off;
                else if (value == "basic") c.secure_boot = SecureBootMode::Basic;
                else if (value == "uki") c.secure_boot = SecureBootMode::Uki;
                else throw ParseError("secure_boot must be off|basic|uki");
            } else if (key == "initrd_protection") {
                if (value == "none") c.initrd_protection = InitrdProtection::None;
                else if (value == "in_uki") c.initrd_protection = InitrdProtection::InUki;
                else if (value == "tpm_sealed")
                    c.initrd_protection = InitrdProtection::TpmSealed;
                else if (value == "tpm_encrypted")
                    c.initrd_protection = InitrdProtection::TpmEncrypted;
                else throw ParseError(
                    "initrd_protection must be none|in_uki|tpm_sealed|tpm_encrypted");
            } else if (key == "ipxe_signing") {
                c.ipxe_signing = value == "true" || value == "1";
            } else if (key == "session_encryption") {
                c.session_encryption = value == "true" || value == "1";
            } else if (key == "key_store") {
                if (value == "none") c.key_store = KeyStoreKind::None;
                else if (value == "asset_tag") c.key_store = KeyStoreKind::AssetTag;
                else if (value == "tpm") c.key_store = KeyStoreKind::Tpm;
                else throw ParseError("key_store must be none|asset_tag|tpm");
            } else {
                throw ParseError("unknown config key: " + key);
            }
        }
        return c;
    }

    std::string serialize() const {
        static const char* sb[] = {"off", "basic", "uki"};
        static const char* ip[] = {"none", "in_uki", "tpm_sealed", "tpm_encrypted"};
        static const char* ks[] = {"none", "asset_tag", "tpm"};
        std::string out;
        out += "secure_boot = " + std::string(sb[static_cast<int>(secure_boot)]) + "\n";
        out += "initrd_protection = " +
               std::string(ip[static_cast<int>(initrd_protection)]) + "\n";
        out += "ipxe_signing = " + std::string(ipxe_signing ? "true" : "false") + "\n";
        out += "session_encryption = " +
               std::string(session_encryption ? "true" : "false") + "\n";
        out += "key_store = " + std::string(ks[static_cast<int>(key_store)]) + "\n";
        return out;
    }
};

enum class AttackKind {
    None,
    MaliciousDhcp,
    MaliciousTftp,
    TamperScriptParams,
    TamperKernel,
    TamperInitrd,
    DnbdBlockSwap,
    PassiveEavesdrop,
    RootKeyExfiltration,
};

struct AttackVector {
    AttackKind kind = AttackKind::None;
    bool physical_access = false;
    bool root_on_host = false;

    // canonical capability assignment per vector
    static AttackVector named(AttackKind k) {
        AttackVector a;
        a.kind = k;
        if (k == AttackKind::RootKeyExfiltration) a.root_on_host = true;
        return a;
    }
};

inline const char* attack_name(AttackKind k) {
    switch (k) {
        case AttackKind::None: return "none";
        case AttackKind::MaliciousDhcp: return "malicious-dhcp";
        case AttackKind::MaliciousTftp: return "malicious-tftp";
        case AttackKind::TamperScriptParams: return "tamper-script-params";
        case AttackKind::TamperKernel: return "tamper-kernel";
        case AttackKind::TamperInitrd: return "tamper-initrd";
        case AttackKind::DnbdBlockSwap: return "dnbd-block-swap";
        case AttackKind::PassiveEavesdrop: return "passive-eavesdrop";
        case AttackKind::RootKeyExfiltration: return "root-key-exfiltration";
    }
    return "?";
}

inline AttackKind attack_from_name(std::string_view name) {
    for (AttackKind k :
         {AttackKind::None, AttackKind::MaliciousDhcp, AttackKind::MaliciousTftp,
          AttackKind::TamperScriptParams, AttackKind::TamperKernel,
          AttackKind::TamperInitrd, AttackKind::DnbdBlockSwap,
          AttackKind::PassiveEavesdrop, AttackKind::RootKeyExfiltration})
        if (name == attack_name(k)) return k;
    throw ValidationError("unknown attack vector: " + std::string(name));
}

inline const std::vector<AttackKind>& matrix_attacks() {
    static const std::vector<AttackKind> all = {
        AttackKind::MaliciousDhcp,      AttackKind::MaliciousTftp,
        AttackKind::TamperScriptParams, AttackKind::TamperKernel,
        AttackKind::TamperInitrd,       AttackKind::DnbdBlockSwap,
        AttackKind::PassiveEavesdrop,   AttackKind::RootKeyExfiltration};
    return all;
}

// ---------------------------------------------------------------------------
// outcome
// ---------------------------------------------------------------------------

enum class OutcomeKind { BootedClean, Rejected, Compromised, SecretLeaked };

inline const char* outcome_kind_name(OutcomeKind k) {
    switch (k) {
        case OutcomeKind::BootedClean: return "BootedClean";
        case OutcomeKind::Rejected: return "Rejected";
        case OutcomeKind::Compromised: return "Compromised";
        case OutcomeKind::SecretLeaked: return "SecretLeaked";
    }
    return "?";
}

struct TraceEvent {
    BootStep step = BootStep::Dhcp;
    std::string action;
    std::string detail;
    std::string verdict;
};

struct Outcome {
    OutcomeKind kind = OutcomeKind::BootedClean;
    BootStep step = BootStep::VmLaunch;  // where rejection/compromise occurred
    std::string what;                    // leaked asset for SecretLeaked
    std::vector<TraceEvent> trace;

    // step-cost counters for the report
    int payload_fetches = 0;  // step-5 image fetches
    int total_fetches = 0;    // every network fetch including sigs and blocks
    int verify_ops = 0;       // signature/AEAD/policy verifications
    int assembly_ops = 0;     // UKI parsing and section extraction

    std::string outcome_line() const {
        std::string out = std::string("outcome=") + outcome_kind_name(kind);
        if (kind == OutcomeKind::Rejected || kind == OutcomeKind::Compromised)
            out += std::string(" step=") + std::to_string(static_cast<int>(step)) +
                   " at=" + step_name(step);
        if (kind == OutcomeKind::SecretLeaked) out += " what=\"" + what + "\"";
        return out;
    }

    // line-oriented: step=<n> action=<verb> [detail=...] verdict=<v>
    std::string trace_text() const {
        std::string out;
        for (const auto& ev : trace) {
            out += "step=" + std::to_string(static_cast<int>(ev.step));
            out += " action=" + ev.action;
            if (!ev.detail.empty()) out += " detail=" + ev.detail;
            if (!ev.verdict.empty()) out += " verdict=" + ev.verdict;
            out += "\n";
        }
        out += outcome_line() + "\n";
        return out;
    }
};

struct ExpectedOutcome {
    OutcomeKind kind = OutcomeKind::BootedClean;
    BootStep step = BootStep::VmLaunch;
    std::string what;
};

// ---------------------------------------------------------------------------
// fixtures
// ---------------------------------------------------------------------------

inline constexpr const char* kClientId = "pc-42";
inline constexpr const char* kSecretMarker = "SHADOW-HASH:x9v2";
inline constexpr const char* kIpxeUrl = "tftp://10.0.2.2/ipxe.efi";
inline constexpr const char* kScriptUrl = "http://10.0.2.3/boot/ipxe?uuid=pc-42";
inline constexpr const char* kKernelUrl = "http://10.0.2.3/boot/kernel";
inline constexpr const char* kInitrdUrl = "http://10.0.2.3/boot/initrd";
inline constexpr const char* kUkiUrl = "http://10.0.2.3/boot/kernel.efi";

inline constexpr const char* kCleanCmdline =
    "slxbase=boot/bwlp/host-31r1 slxsrv=10.0.2.3 quiet nosplash "
    "systemd.show_status=0 rd.shell=0 rd.emergency=reboot slx.ipxe.id=1";
inline constexpr const char* kTamperedCmdline =
    "slxbase=boot/bwlp/host-31r1 slxsrv=10.0.2.66 quiet init=/bin/sh rd.shell=1";

struct Fixtures {
    std::uint64_t seed = 0;

    // trust anchors
    anchors::KeyHierarchy hierarchy;
    anchors::UefiKeyStore store;

    // payloads
    Bytes stub, kernel, initrd, ipxe_raw, attacker_ipxe;
    forge::OsRelease osrel;

    // signed artifacts
    Bytes ipxe_signed;    // serialized with appended signature
    Bytes kernel_signed;
    Bytes uki_with_initrd_signed;
    Bytes uki_without_initrd_signed;

    // detached signing
    ipxe::CodeSignCa ca;
    ipxe::IssuedCert codesign;

    // client device and registry
    tpm::TpmState client_tpm;  // pristine PCRs; key at 0x81000001
    tpm::PersistentHandle tpm_handle = tpm::PersistentHandle{0x81000001};
    prov::ClientRegistry registry;

    // root filesystem image
    Bytes rootfs;
    nbd::ImageStore image_store;

    // legacy / unprotected key storage
    prov::AssetTagStore asset_tag;
    Bytes keyfile_key;

    static Fixtures standard(std::uint64_t seed = 1) {
        Fixtures f;
        f.seed = seed;

        auto fill = [seed](std::size_t n, std::uint64_t salt) {
            // xorshift-based deterministic payload bytes
            Bytes out(n);
            std::uint64_t s = seed * 0x9E3779B97F4A7C15ull + salt;
            for (auto& b : out) {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                b = static_cast<std::uint8_t>(s);
            }
            return out;
        };

        f.hierarchy = anchors::generate_hierarchy("Sim Lab");
        anchors::EnrollmentBundle bundle = anchors::build_enrollment_bundle(f.hierarchy);
        f.store = anchors::enroll(f.store, bundle.pk);
        f.store = anchors::enroll(f.store, bundle.kek);
        f.store = anchors::enroll(f.store, bundle.db);

        f.stub = fill(512, 1);
        f.kernel = fill(24 * 1024, 2);
        f.initrd = fill(32 * 1024, 3);
        f.ipxe_raw = fill(8 * 1024, 4);
        f.attacker_ipxe = concat({to_bytes("EVIL-IPXE "), fill(8 * 1024, 5)});

        f.osrel.set("PRETTY_NAME", "Sim Linux 1 (stateless)");
        f.osrel.set("ID", "simlinux");
        f.osrel.set("VERSION_ID", "1");

        auto sign_bytes = [&f](const Bytes& payload, forge::ImageKind kind) {
            return forge::serialize_signed(forge::sign_image(
                forge::BootImage{payload, kind}, f.hierarchy.db.key,
                f.hierarchy.db.cert));
        };
        f.ipxe_signed = sign_bytes(f.ipxe_raw, forge::ImageKind::IpxeBinary);
        f.kernel_signed = sign_bytes(f.kernel, forge::ImageKind::Kernel);
        f.uki_with_initrd_signed =
            sign_bytes(forge::build_uki(f.stub, f.osrel, kCleanCmdline, f.kernel,
                                        ByteView(f.initrd))
                           .serialize(),
                       forge::ImageKind::Uki);
        f.uki_without_initrd_signed =
            sign_bytes(forge::build_uki(f.stub, f.osrel, kCleanCmdline, f.kernel)
                           .serialize(),
                       forge::ImageKind::Uki);

        f.ca = ipxe::ca_init("ipxe.ca");
        f.codesign = ipxe::issue_codesign(f.ca, "satellite.codesign");

        f.client_tpm = tpm::TpmState::create();
        std::string tok = f.client_tpm.create_primary("rsa2048");
        f.client_tpm.evict_control(tok, f.tpm_handle);
        f.registry.provision_client(kClientId,
                                    f.client_tpm.read_public(f.tpm_handle),
                                    prov::Channel::TrustedMedium);

        f.rootfs = concat({to_bytes(kSecretMarker), fill(16 * 1024, 6)});
        f.image_store = nbd::ImageStore::from_bytes(f.rootfs, crypto::Guid::random());

        f.asset_tag.write(fill(63, 7));
        f.keyfile_key = fill(32, 8);
        return f;
    }
};

// Persists the random fixture parts (keys, device state, identifiers) so a
// fixtures directory reproduces identical runs across processes; payload
// bytes regenerate from the stored seed.
inline void save_fixtures(const Fixtures& f, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_text_file(dir / "seed.txt", std::to_string(f.seed) + "\n");
    anchors::save_hierarchy(f.hierarchy, dir / "keys");
    anchors::save_store(f.store, dir / "store.bin");
    ipxe::save_ca(f.ca, dir / "ca");
    write_text_file(dir / "codesign.key", f.codesign.key.to_pem());
    write_file(dir / "codesign.crt", f.codesign.cert.encode());
    tpm::save_tpm(f.client_tpm, dir / "tpm.bin");
    write_file(dir / "asset_tag.bin", f.asset_tag.tag);
    write_file(dir / "keyfile.bin", f.keyfile_key);
    write_file(dir / "image_id.bin",
               Bytes(f.image_store.image_id.bytes.begin(),
                     f.image_store.image_id.bytes.end()));
    write_file(dir / "registry.tsv", Bytes{});
    for (const auto& [id, rec] : f.registry.records())
        prov::append_registry_record(dir / "registry.tsv", rec);
}

inline Fixtures load_fixtures(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir / "seed.txt"))
        throw PrerequisiteError("no fixtures in " + dir.string());
    std::uint64_t seed = std::stoull(read_text_file(dir / "seed.txt"));
    Fixtures f = Fixtures::standard(seed);  // deterministic payloads
    f.hierarchy = anchors::load_hierarchy(dir / "keys");
    f.store = anchors::load_store(dir / "store.bin");
    f.ca = ipxe::load_ca(dir / "ca");
    f.codesign.key = crypto::RsaPrivateKey::from_pem(
        read_text_file(dir / "codesign.key"));
    f.codesign.cert = ipxe::CodeSignCert::decode(read_file(dir / "codesign.crt"));
    f.client_tpm = tpm::load_tpm(dir / "tpm.bin");
    f.asset_tag.tag = read_file(dir / "asset_tag.bin");
    f.keyfile_key = read_file(dir / "keyfile.bin");
    Bytes id = read_file(dir / "image_id.bin");
    if (id.size() != 16) throw ParseError("corrupt image_id.bin");
    std::copy(id.begin(), id.end(), f.image_store.image_id.bytes.begin());
    f.registry = prov::load_registry(dir / "registry.tsv");

    // re-derive the signed artifacts from the loaded keys
    auto sign_bytes = [&f](const Bytes& payload, forge::ImageKind kind) {
        return forge::serialize_signed(forge::sign_image(
            forge::BootImage{payload, kind}, f.hierarchy.db.key,
            f.hierarchy.db.cert));
    };
    f.ipxe_signed = sign_bytes(f.ipxe_raw, forge::ImageKind::IpxeBinary);
    f.kernel_signed = sign_bytes(f.kernel, forge::ImageKind::Kernel);
    f.uki_with_initrd_signed = sign_bytes(
        forge::build_uki(f.stub, f.osrel, kCleanCmdline, f.kernel,
                         ByteView(f.initrd))
            .serialize(),
        forge::ImageKind::Uki);
    f.uki_without_initrd_signed = sign_bytes(
        forge::build_uki(f.stub, f.osrel, kCleanCmdline, f.kernel).serialize(),
        forge::ImageKind::Uki);
    return f;
}

// Loads fixtures from `dir`, generating and saving a fresh set on first use.
inline Fixtures fixtures_at(const std::filesystem::path& dir,
                            std::uint64_t seed = 1) {
    if (std::filesystem::exists(dir / "seed.txt")) return load_fixtures(dir);
    Fixtures f = Fixtures::standard(seed);
    save_fixtures(f, dir);
    return f;
}

// ---------------------------------------------------------------------------
// expected defense matrix (pure table)
// ---------------------------------------------------------------------------

inline ExpectedOutcome expected_outcome(const BootConfig& c, const AttackVector& a) {
    c.validate();
    auto rejected = [](BootStep s) {
        return ExpectedOutcome{OutcomeKind::Rejected, s, ""};
    };
    auto compromised = [](BootStep s) {
        return ExpectedOutcome{OutcomeKind::Compromised, s, ""};
    };
    auto leaked = [](std::string what) {
        return ExpectedOutcome{OutcomeKind::SecretLeaked, BootStep::VmLaunch,
                               std::move(what)};
    };
    const ExpectedOutcome clean{};

    switch (a.kind) {
        case AttackKind::None:
            return clean;
        case AttackKind::MaliciousDhcp:
            return c.secure_boot == SecureBootMode::Off
                       ? compromised(BootStep::Dhcp)
                       : rejected(BootStep::IpxeLoad);
        case AttackKind::MaliciousTftp:
            return c.secure_boot == SecureBootMode::Off
                       ? compromised(BootStep::IpxeLoad)
                       : rejected(BootStep::IpxeLoad);
        case AttackKind::TamperScriptParams:
            if (c.ipxe_signing) return rejected(BootStep::IpxeScript);
            if (c.secure_boot == SecureBootMode::Uki) return clean;  // ignored
            if (c.initrd_protection == InitrdProtection::TpmSealed)
                return rejected(BootStep::RootFsAccess);
            return compromised(BootStep::IpxeScript);
        case AttackKind::TamperKernel:
            if (c.secure_boot != SecureBootMode::Off || c.ipxe_signing)
                return rejected(BootStep::HostSystemLoad);
            return compromised(BootStep::HostSystemLoad);
        case AttackKind::TamperInitrd:
            if (c.initrd_protection == InitrdProtection::InUki ||
                c.ipxe_signing ||
                c.initrd_protection == InitrdProtection::TpmEncrypted)
                return rejected(BootStep::HostSystemLoad);
            if (c.initrd_protection == InitrdProtection::TpmSealed)
                return rejected(BootStep::RootFsAccess);
            return compromised(BootStep::HostSystemLoad);
        case AttackKind::DnbdBlockSwap:
            return c.session_encryption ? rejected(BootStep::RootFsAccess)
                                        : compromised(BootStep::RootFsAccess);
        case AttackKind::PassiveEavesdrop:
            return c.session_encryption ? clean : leaked("dnbd payload");
        case AttackKind::RootKeyExfiltration: {
            if (!a.root_on_host) return clean;
            switch (c.key_store) {
                case KeyStoreKind::AssetTag:
                    return leaked("long-term key");
                case KeyStoreKind::Tpm:
                    return c.session_encryption
                               ? leaked("session key plaintext (long-term key safe)")
                               : clean;
                case KeyStoreKind::None:
                    return c.session_encryption ? leaked("long-term key") : clean;
            }
            return clean;
        }
    }
    return clean;
}

// ---------------------------------------------------------------------------
// scenario execution
// ---------------------------------------------------------------------------

namespace detail {

struct Resources {
    std::map<std::string, Bytes> files;

    std::optional<Bytes> fetch(const std::string& url) const {
        auto it = files.find(url);
        if (it == files.end()) return std::nullopt;
        return it->second;
    }
};

inline std::string script_text(const BootConfig& c, const std::string& params) {
    std::string s = "#!ipxe\n";
    s += "set params " + params + "\n";
    if (c.secure_boot == SecureBootMode::Uki) {
        s += std::string("set kernel_url ") + kUkiUrl + "\n";
        if (c.initrd_protection != InitrdProtection::InUki)
            s += std::string("set initrd_url ") + kInitrdUrl + "\n";
    } else {
        s += std::string("set kernel_url ") + kKernelUrl + "\n";
        s += std::string("set initrd_url ") + kInitrdUrl + "\n";
    }
    s += "boot ${kernel_url} || goto fail\n";
    s += ":fail\n";
    s += "prompt boot failed ||\n";
    return s;
}

// TPM-encrypted initrd envelope: RSA-wrapped content key + AES-GCM payload
inline Bytes encrypt_initrd_for_tpm(const Fixtures& f, ByteView initrd) {
    Bytes content_key = crypto::random_bytes(32);
    Bytes wrapped = f.client_tpm.rsa_encrypt(f.tpm_handle, content_key);
    Bytes nonce = crypto::random_bytes(crypto::kGcmNonceLen);
    crypto::AeadNonce n{};
    std::copy(nonce.begin(), nonce.end(), n.begin());
    auto sealed = crypto::aead_seal(crypto::to_aead_key(content_key), n, initrd,
                                    to_bytes("initrd-envelope"));
    BinaryWriter w;
    w.raw(to_bytes("ENCI"));
    w.blob(wrapped);
    w.blob(nonce);
    w.blob(sealed.ciphertext);
    w.blob(Bytes(sealed.tag.begin(), sealed.tag.end()));
    return w.take();
}

inline Bytes decrypt_initrd_with_tpm(const tpm::TpmState& device,
                                     tpm::PersistentHandle handle,
                                     ByteView envelope) {
    BinaryReader r(envelope);
    r.expect_magic("ENCI");
    Bytes wrapped = r.blob();
    Bytes nonce = r.blob();
    Bytes ct = r.blob();
    Bytes tag = r.blob();
    r.require_done();
    Bytes content_key = device.rsa_decrypt(handle, wrapped);  // throws on failure
    crypto::AeadNonce n{};
    if (nonce.size() != n.size())
        throw VerificationError("initrd envelope rejected");
    std::copy(nonce.begin(), nonce.end(), n.begin());
    auto plain = crypto::aead_open(crypto::to_aead_key(content_key), n, ct, tag,
                                   to_bytes("initrd-envelope"));
    if (!plain) throw VerificationError("initrd envelope rejected");
    return *plain;
}

inline Resources build_resources(const BootConfig& c, const Fixtures& f) {
    Resources res;
    res.files[kIpxeUrl] =
        c.secure_boot == SecureBootMode::Off ? f.ipxe_raw : f.ipxe_signed;
    res.files[kScriptUrl] = to_bytes(script_text(c, kCleanCmdline));

    if (c.secure_boot == SecureBootMode::Uki) {
        res.files[kUkiUrl] = c.initrd_protection == InitrdProtection::InUki
                                 ? f.uki_with_initrd_signed
                                 : f.uki_without_initrd_signed;
    } else {
        res.files[kKernelUrl] =
            c.secure_boot == SecureBootMode::Off ? f.kernel : f.kernel_signed;
    }
    bool separate_initrd = c.initrd_protection != InitrdProtection::InUki;
    if (separate_initrd) {
        res.files[kInitrdUrl] =
            c.initrd_protection == InitrdProtection::TpmEncrypted
                ? encrypt_initrd_for_tpm(f, f.initrd)
                : f.initrd;
    }

    if (c.ipxe_signing) {
        // the detached signature is always created after the appended
        // Secure Boot signature, over the exact served bytes
        auto sign = [&f](const Bytes& data) {
            return ipxe::sign_detached(data, f.codesign.cert, f.codesign.key, f.ca)
                .encode();
        };
        res.files[std::string(kScriptUrl) + "&sig=true"] =
            sign(res.files[kScriptUrl]);
        for (const char* url : {kKernelUrl, kInitrdUrl, kUkiUrl}) {
            auto it = res.files.find(url);
            if (it != res.files.end())
                res.files[std::string(url) + ".sig"] = sign(it->second);
        }
    }
    return res;
}

inline void apply_attack(Resources& res, const BootConfig& c,
                         const AttackVector& a, const Fixtures& f) {
    auto flip_payload_byte = [](Bytes& data, std::size_t pos) {
        data.at(pos) ^= 0x01;
    };
    switch (a.kind) {
        case AttackKind::MaliciousDhcp:
        case AttackKind::MaliciousTftp:
            res.files[kIpxeUrl] = f.attacker_ipxe;
            break;
        case AttackKind::TamperScriptParams:
            res.files[kScriptUrl] = to_bytes(script_text(c, kTamperedCmdline));
            break;
        case AttackKind::TamperKernel: {
            const char* url =
                c.secure_boot == SecureBootMode::Uki ? kUkiUrl : kKernelUrl;
            flip_payload_byte(res.files[url], 64);
            break;
        }
        case AttackKind::TamperInitrd: {
            if (c.initrd_protection == InitrdProtection::InUki) {
                // .initrd payload sits at the tail of the serialized container
                Bytes& uki = res.files[kUkiUrl];
                forge::SignedBootImage parsed = forge::parse_signed(uki);
                std::size_t payload_len = parsed.image.payload.size();
                flip_payload_byte(uki, payload_len - f.initrd.size() / 2);
            } else {
                Bytes& data = res.files[kInitrdUrl];
                flip_payload_byte(data, data.size() / 2);
            }
            break;
        }
        default:
            break;  // block-level and post-boot attacks act elsewhere
    }
}

}  // namespace detail

inline Outcome run_scenario(const BootConfig& config, const AttackVector& attack,
                            const Fixtures& fixtures) {
    config.validate();  // configuration error before any execution

    detail::Resources clean_res = detail::build_resources(config, fixtures);
    detail::Resources res = clean_res;
    detail::apply_attack(res, config, attack, fixtures);

    Outcome out;
    auto trace = [&out](BootStep s, std::string action, std::string detail = "",
                        std::string verdict = "") {
        out.trace.push_back({s, std::move(action), std::move(detail),
                             std::move(verdict)});
    };
    auto fetch = [&](BootStep s, const std::string& url) -> std::optional<Bytes> {
        auto data = res.fetch(url);
        ++out.total_fetches;
        trace(s, "fetch", url, data ? "ok" : "not-found");
        return data;
    };

    const bool has_tpm = config.key_store == KeyStoreKind::Tpm;
    tpm::TpmState device = fixtures.client_tpm;  // per-run copy, PCRs at zero

    auto measure = [&](BootStep s, std::uint32_t pcr, ByteView content,
                       const std::string& what) {
        if (!has_tpm) return;
        crypto::Digest v = device.pcr_extend(pcr, crypto::sha256(content));
        trace(s, "pcr-extend", what + " pcr=" + std::to_string(pcr),
              to_hex(v));
    };

    // compromise latch: set when attacker content executes undetected
    std::optional<BootStep> compromised_at;
    auto latch = [&](BootStep home, const std::string& what) {
        if (!compromised_at) {
            compromised_at = home;
            trace(home, "execute", what, "attacker-code-running");
        }
    };
    auto finish_compromised = [&]() {
        trace(*compromised_at, "cascade", "all-following-steps",
              "inherited-compromise");
        out.kind = OutcomeKind::Compromised;
        out.step = *compromised_at;
        return out;
    };
    auto rejected = [&](BootStep s, const std::string& why) {
        trace(s, "halt", why, "boot-rejected");
        out.kind = OutcomeKind::Rejected;
        out.step = s;
        return out;
    };

    // ---- step 1: DHCP ------------------------------------------------------
    bool dhcp_redirected = attack.kind == AttackKind::MaliciousDhcp;
    trace(BootStep::Dhcp, "dhcp-offer", "boot-server",
          dhcp_redirected ? "redirected" : "ok");

    // ---- step 2: load iPXE -------------------------------------------------
    auto ipxe_bytes = fetch(BootStep::IpxeLoad, kIpxeUrl);
    if (!ipxe_bytes) return rejected(BootStep::IpxeLoad, "ipxe-missing");
    measure(BootStep::IpxeLoad, 4, *ipxe_bytes, "ipxe-binary");

    bool ipxe_is_malicious = attack.kind == AttackKind::MaliciousDhcp ||
                             attack.kind == AttackKind::MaliciousTftp;
    if (config.secure_boot != SecureBootMode::Off) {
        ++out.verify_ops;
        anchors::Verdict v;
        try {
            v = anchors::check_allowed(fixtures.store,
                                       forge::parse_signed(*ipxe_bytes));
        } catch (const Error&) {
            v = anchors::Verdict::DeniedUnsigned;
        }
        trace(BootStep::IpxeLoad, "secure-boot-verify", "ipxe-binary",
              anchors::verdict_name(v));
        if (v != anchors::Verdict::Allowed)
            return rejected(BootStep::IpxeLoad, "secure-boot-denied");
    } else {
        trace(BootStep::IpxeLoad, "secure-boot-verify", "ipxe-binary", "disabled");
    }
    if (ipxe_is_malicious) {
        // undetected malicious boot binary: owns the platform from here on
        latch(attack.kind == AttackKind::MaliciousDhcp ? BootStep::Dhcp
                                                       : BootStep::IpxeLoad,
              "malicious-ipxe-binary");
        return finish_compromised();
    }

    // ---- step 3: iPXE script ----------------------------------------------
    std::string script_params;
    {
        if (config.ipxe_signing) {
            // embedded bootstrap: imgtrust, fetch, verify, load (Listing-10 shape)
            std::string bootstrap = std::string("#!ipxe\n") +
                                    "imgtrust --permanent\n" +
                                    "imgfetch --name slxscript " + kScriptUrl +
                                    " || goto fail\n" + "imgverify slxscript " +
                                    kScriptUrl + "&sig=true || goto fail\n" +
                                    "imgload slxscript || goto fail\n" + ":fail\n" +
                                    "prompt script rejected ||\n";
            ipxe::Fetcher fetcher = [&](const std::string& url) {
                auto data = res.fetch(url);
                ++out.total_fetches;
                return data;
            };
            ipxe::ExecResult er = ipxe::interpret_script(
                ipxe::IpxeScript::parse(bootstrap), fetcher, {fixtures.ca.ca_cert},
                true);
            for (const auto& ev : er.trace) {
                if (ev.action == "verify") ++out.verify_ops;
                trace(BootStep::IpxeScript, ev.action, ev.detail, ev.verdict);
            }
            const ipxe::FetchedImage* img = er.image("slxscript");
            if (!img) return rejected(BootStep::IpxeScript, "script-missing");
            if (!img->verified)
                return rejected(BootStep::IpxeScript, "script-signature-invalid");
        } else {
            auto data = fetch(BootStep::IpxeScript, kScriptUrl);
            if (!data) return rejected(BootStep::IpxeScript, "script-missing");
        }
        // parse the (possibly tampered) script and read its settings
        Bytes script_bytes = *res.fetch(kScriptUrl);
        ipxe::IpxeScript script =
            ipxe::IpxeScript::parse(to_string(script_bytes));
        for (const auto& line : script.lines)
            for (const auto& cmd : line.seq)
                if (cmd.verb == "set" && cmd.args.size() >= 2 &&
                    cmd.args[0] == "params") {
                    std::string v;
                    for (std::size_t i = 1; i < cmd.args.size(); ++i) {
                        if (i > 1) v += ' ';
                        v += cmd.args[i];
                    }
                    script_params = v;
                }
        trace(BootStep::IpxeScript, "script-parse", "", "ok");
        trace(BootStep::IpxeScript, "script-params", script_params, "");
    }

    // ---- step 4: boot decision ----------------------------------------------
    trace(BootStep::BootDecision, "boot-decision", "host-system", "ok");

    // ---- step 5: host system load -------------------------------------------
    Bytes kernel_loaded;           // the binary handed to the firmware
    std::string effective_params;  // kernel command line actually used
    Bytes initrd_loaded;
    bool kernel_tampered_undetected = false;
    bool initrd_tampered_undetected = false;
    {
        const bool uki_mode = config.secure_boot == SecureBootMode::Uki;
        const std::string kernel_url = uki_mode ? kUkiUrl : kKernelUrl;
        auto kernel_file = res.fetch(kernel_url);
        ++out.total_fetches;
        ++out.payload_fetches;
        trace(BootStep::HostSystemLoad, "fetch", kernel_url,
              kernel_file ? "ok" : "not-found");
        if (!kernel_file)
            return rejected(BootStep::HostSystemLoad, "kernel-missing");

        const bool separate_initrd =
            config.initrd_protection != InitrdProtection::InUki;
        std::optional<Bytes> initrd_file;
        if (separate_initrd) {
            initrd_file = res.fetch(kInitrdUrl);
            ++out.total_fetches;
            ++out.payload_fetches;
            trace(BootStep::HostSystemLoad, "fetch", kInitrdUrl,
                  initrd_file ? "ok" : "not-found");
            if (!initrd_file)
                return rejected(BootStep::HostSystemLoad, "initrd-missing");
        }

        if (config.ipxe_signing) {
            auto imgverify = [&](const std::string& url,
                                 const Bytes& data) -> bool {
                auto sig_data = res.fetch(url + ".sig");
                ++out.total_fetches;
                ++out.verify_ops;
                bool ok = false;
                if (sig_data) {
                    try {
                        ok = ipxe::verify_detached(
                            data, ipxe::DetachedSignature::decode(*sig_data),
                            {fixtures.ca.ca_cert});
                    } catch (const Error&) {
                        ok = false;
                    }
                }
                trace(BootStep::HostSystemLoad, "verify", url,
                      ok ? "ok" : "bad-signature");
                return ok;
            };
            if (!imgverify(kernel_url, *kernel_file))
                return rejected(BootStep::HostSystemLoad, "kernel-signature-invalid");
            if (separate_initrd && !imgverify(kInitrdUrl, *initrd_file))
                return rejected(BootStep::HostSystemLoad, "initrd-signature-invalid");
        }

        // Secure Boot check on the fetched boot binary
        if (config.secure_boot != SecureBootMode::Off) {
            ++out.verify_ops;
            anchors::Verdict v;
            try {
                v = anchors::check_allowed(fixtures.store,
                                           forge::parse_signed(*kernel_file));
            } catch (const Error&) {
                v = anchors::Verdict::DeniedUnsigned;
            }
            trace(BootStep::HostSystemLoad, "secure-boot-verify",
                  uki_mode ? "uki" : "kernel", anchors::verdict_name(v));
            if (v != anchors::Verdict::Allowed)
                return rejected(BootStep::HostSystemLoad, "secure-boot-denied");
        }

        kernel_loaded = *kernel_file;
        measure(BootStep::HostSystemLoad, 8, kernel_loaded, "kernel-image");

        if (uki_mode) {
            forge::SignedBootImage signed_uki = forge::parse_signed(kernel_loaded);
            forge::UkiContainer uki =
                forge::UkiContainer::deserialize(signed_uki.image.payload);
            ++out.assembly_ops;  // container parse
            trace(BootStep::HostSystemLoad, "uki-parse",
                  std::to_string(uki.sections.size()) + "-sections", "ok");
            ++out.assembly_ops;
            Bytes kernel_section = forge::extract_section(uki, ".linux");
            (void)kernel_section;
            trace(BootStep::HostSystemLoad, "uki-extract", ".linux", "ok");
            effective_params = forge::effective_cmdline(uki, script_params);
            ++out.assembly_ops;
            trace(BootStep::HostSystemLoad, "cmdline",
                  uki.find(".cmdline") ? "embedded" : "external",
                  effective_params == script_params ? "external-used"
                                                    : "external-ignored");
            if (config.initrd_protection == InitrdProtection::InUki) {
                initrd_loaded = forge::extract_section(uki, ".initrd");
                ++out.assembly_ops;
                trace(BootStep::HostSystemLoad, "uki-extract", ".initrd", "ok");
            }
        } else {
            effective_params = script_params;
            trace(BootStep::HostSystemLoad, "cmdline", "external", "external-used");
        }

        measure(BootStep::HostSystemLoad, 9, to_bytes(effective_params),
                "kernel-params");

        if (separate_initrd) {
            if (config.initrd_protection == InitrdProtection::TpmEncrypted) {
                ++out.verify_ops;
                try {
                    initrd_loaded = detail::decrypt_initrd_with_tpm(
                        device, fixtures.tpm_handle, *initrd_file);
                    trace(BootStep::HostSystemLoad, "initrd-decrypt", "tpm-envelope",
                          "ok");
                } catch (const Error&) {
                    trace(BootStep::HostSystemLoad, "initrd-decrypt", "tpm-envelope",
                          "rejected");
                    return rejected(BootStep::HostSystemLoad,
                                    "initrd-decrypt-failed");
                }
            } else {
                initrd_loaded = *initrd_file;
            }
        }
        measure(BootStep::HostSystemLoad, 9, initrd_loaded, "initrd");

        // undetected manipulations that reached execution
        if (attack.kind == AttackKind::TamperKernel)
            kernel_tampered_undetected = true;
        if (attack.kind == AttackKind::TamperInitrd)
            initrd_tampered_undetected = true;

        if (kernel_tampered_undetected) {
            latch(BootStep::HostSystemLoad, "tampered-kernel");
            return finish_compromised();
        }
        if (initrd_tampered_undetected &&
            config.initrd_protection == InitrdProtection::None) {
            latch(BootStep::HostSystemLoad, "tampered-initrd");
            return finish_compromised();
        }
        // an initrd under sealing executed too, but the configured
        // containment is the unseal gate in the next step
    }

    const bool params_tampered_effective =
        attack.kind == AttackKind::TamperScriptParams &&
        effective_params != kCleanCmdline;
    if (attack.kind == AttackKind::TamperScriptParams &&
        !params_tampered_effective)
        trace(BootStep::HostSystemLoad, "cmdline-attack", "external-params",
              "neutralized");
    // effective malicious parameters with no unseal gate ahead: the host
    // boots under attacker control before the root filesystem is touched
    if (params_tampered_effective &&
        config.initrd_protection != InitrdProtection::TpmSealed) {
        latch(BootStep::IpxeScript, "tampered-kernel-params");
        return finish_compromised();
    }

    // ---- step 6: root filesystem access -------------------------------------
    {
        // session key acquisition per configured key store
        std::optional<crypto::AeadKey> session_key;
        std::uint64_t epoch = 1;
        prov::ClientRegistry registry = fixtures.registry;  // per-run copy
        std::optional<prov::ClientRegistry::Issued> issued;

        if (config.session_encryption ||
            config.initrd_protection == InitrdProtection::TpmSealed) {
            switch (config.key_store) {
                case KeyStoreKind::Tpm: {
                    issued = registry.issue_session_key(kClientId, epoch);
                    trace(BootStep::RootFsAccess, "session-grant",
                          "epoch=" + std::to_string(epoch), "issued");
                    if (config.initrd_protection == InitrdProtection::TpmSealed) {
                        // provisioning sealed the session key against the
                        // golden measurements of a clean boot
                        tpm::TpmState golden = fixtures.client_tpm;
                        Bytes ipxe_clean = *clean_res.fetch(kIpxeUrl);
                        golden.pcr_extend(4, crypto::sha256(ipxe_clean));
                        const std::string kurl =
                            config.secure_boot == SecureBootMode::Uki ? kUkiUrl
                                                                      : kKernelUrl;
                        golden.pcr_extend(8, crypto::sha256(*clean_res.fetch(kurl)));
                        golden.pcr_extend(9,
                                          crypto::sha256(to_bytes(kCleanCmdline)));
                        Bytes clean_initrd = fixtures.initrd;
                        golden.pcr_extend(9, crypto::sha256(clean_initrd));
                        tpm::SealedBlob blob = fixtures.client_tpm.seal(
                            issued->session_key,
                            golden.policy_from_current({4, 8, 9}));
                        ++out.verify_ops;
                        try {
                            Bytes key = device.unseal(blob);
                            session_key = crypto::to_aead_key(key);
                            trace(BootStep::RootFsAccess, "unseal",
                                  "pcr-policy{4,8,9}", "ok");
                        } catch (const VerificationError&) {
                            trace(BootStep::RootFsAccess, "unseal",
                                  "pcr-policy{4,8,9}", "refused");
                            return rejected(BootStep::RootFsAccess,
                                            "unseal-refused");
                        }
                    } else {
                        ++out.verify_ops;
                        Bytes key = prov::redeem_session_key(
                            device, fixtures.tpm_handle, issued->grant);
                        session_key = crypto::to_aead_key(key);
                        trace(BootStep::RootFsAccess, "session-redeem",
                              "tpm-decrypt", "ok");
                    }
                    break;
                }
                case KeyStoreKind::AssetTag: {
                    // four chunked 16-byte reads reassemble the 63-byte key
                    Bytes key_material = fixtures.asset_tag.read_all_chunked();
                    trace(BootStep::RootFsAccess, "asset-tag-read",
                          "chunks=4 bits=" +
                              std::to_string(key_material.size() * 8),
                          "ok");
                    session_key =
                        crypto::to_aead_key(crypto::digest_bytes(
                            crypto::sha256(key_material)));
                    break;
                }
                case KeyStoreKind::None: {
                    trace(BootStep::RootFsAccess, "keyfile-read", "unprotected",
                          "ok");
                    session_key = crypto::to_aead_key(fixtures.keyfile_key);
                    break;
                }
            }
        }

        // block transport, optionally through a man-in-the-middle
        nbd::SessionTable sessions;
        bool encrypted = config.session_encryption && session_key.has_value();
        if (encrypted) sessions[epoch] = *session_key;
        nbd::InProcessChannel base([&](ByteView request) {
            return nbd::serve_request(fixtures.image_store, sessions, request,
                                      encrypted);
        });
        std::optional<nbd::AttackChannel> mitm;
        nbd::Channel* channel = &base;
        if (attack.kind == AttackKind::DnbdBlockSwap) {
            mitm.emplace(base, nbd::AttackKind::SwapIndex);
            mitm->set_swap_pair(0, 1);
            channel = &*mitm;
        } else if (attack.kind == AttackKind::PassiveEavesdrop) {
            mitm.emplace(base, nbd::AttackKind::Eavesdrop);
            channel = &*mitm;
        }

        const std::size_t blocks = fixtures.image_store.block_count();
        bool silent_corruption = false;
        nbd::SessionContext ctx{encrypted ? *session_key : crypto::AeadKey{},
                                fixtures.image_store.image_id, epoch};
        for (std::size_t i = 0; i < blocks; ++i) {
            try {
                Bytes block =
                    encrypted
                        ? nbd::fetch_block(ctx, *channel, i)
                        : nbd::fetch_block_plain(fixtures.image_store.image_id,
                                                 *channel, i);
                ByteView want = fixtures.image_store.block(i);
                if (!std::equal(block.begin(), block.end(), want.begin(),
                                want.end()))
                    silent_corruption = true;  // client did not notice
            } catch (const VerificationError& e) {
                trace(BootStep::RootFsAccess, "block-fetch",
                      "index=" + std::to_string(i), "integrity-error");
                return rejected(BootStep::RootFsAccess, e.what());
            }
        }
        trace(BootStep::RootFsAccess, "block-fetch",
              "blocks=" + std::to_string(blocks),
              encrypted ? "aead-verified" : "plaintext");
        if (encrypted) out.verify_ops += static_cast<int>(blocks);

        if (silent_corruption) {
            latch(BootStep::RootFsAccess, "swapped-blocks-accepted");
            return finish_compromised();
        }

        if (attack.kind == AttackKind::PassiveEavesdrop && mitm) {
            Bytes wire;
            for (const auto& frame : mitm->transcript())
                wire.insert(wire.end(), frame.begin(), frame.end());
            std::string wire_str(wire.begin(), wire.end());
            bool leaked = wire_str.find(kSecretMarker) != std::string::npos;
            trace(BootStep::RootFsAccess, "eavesdrop-scan",
                  "frames=" + std::to_string(mitm->transcript().size()),
                  leaked ? "plaintext-recovered" : "nothing-recovered");
            if (leaked) {
                out.kind = OutcomeKind::SecretLeaked;
                out.what = "dnbd payload";
                out.step = BootStep::RootFsAccess;
                return out;
            }
        }

        // park the issued grant for the post-boot attacker below
        if (attack.kind == AttackKind::RootKeyExfiltration && attack.root_on_host) {
            trace(BootStep::VmLaunch, "vm-launch", "host-session", "ok");
            switch (config.key_store) {
                case KeyStoreKind::AssetTag: {
                    Bytes tag = fixtures.asset_tag.read_all_chunked();
                    trace(BootStep::VmLaunch, "exfiltrate",
                          "asset-tag-via-ipmi bytes=" + std::to_string(tag.size()),
                          "long-term-key-recovered");
                    out.kind = OutcomeKind::SecretLeaked;
                    out.what = "long-term key";
                    return out;
                }
                case KeyStoreKind::Tpm: {
                    if (config.session_encryption && issued) {
                        // root can use the TPM, not open it
                        Bytes session;
                        if (config.initrd_protection == InitrdProtection::TpmSealed) {
                            session = Bytes(session_key->begin(), session_key->end());
                        } else {
                            session = prov::redeem_session_key(
                                device, fixtures.tpm_handle, issued->grant);
                        }
                        bool got = session == issued->session_key ||
                                   crypto::to_aead_key(session) == *session_key;
                        trace(BootStep::VmLaunch, "exfiltrate", "tpm-decrypt-proxy",
                              got ? "session-key-recovered" : "failed");
                        out.kind = OutcomeKind::SecretLeaked;
                        out.what = "session key plaintext (long-term key safe)";
                        return out;
                    }
                    trace(BootStep::VmLaunch, "exfiltrate", "tpm",
                          "nothing-extractable");
                    break;
                }
                case KeyStoreKind::None: {
                    if (config.session_encryption) {
                        trace(BootStep::VmLaunch, "exfiltrate", "keyfile",
                              "long-term-key-recovered");
                        out.kind = OutcomeKind::SecretLeaked;
                        out.what = "long-term key";
                        return out;
                    }
                    trace(BootStep::VmLaunch, "exfiltrate", "keyfile", "no-keys");
                    break;
                }
            }
            out.kind = OutcomeKind::BootedClean;
            out.step = BootStep::VmLaunch;
            return out;
        }
    }

    // ---- step 7: VM launch ---------------------------------------------------
    trace(BootStep::VmLaunch, "vm-launch", "host-session", "ok");
    out.kind = OutcomeKind::BootedClean;
    out.step = BootStep::VmLaunch;
    return out;
}

// ---------------------------------------------------------------------------
// matrix and report
// ---------------------------------------------------------------------------

struct ScenarioResult {
    BootConfig config;
    AttackVector attack;
    Outcome outcome;
};

struct MatrixCell {
    BootConfig config;
    AttackVector attack;
    ExpectedOutcome expected;
    Outcome actual;
    bool match = false;
};

struct MatrixResult {
    std::vector<MatrixCell> cells;
    int mismatches = 0;
    int skipped_invalid = 0;

    std::vector<ScenarioResult> results() const {
        std::vector<ScenarioResult> out;
        out.reserve(cells.size());
        for (const auto& c : cells) out.push_back({c.config, c.attack, c.actual});
        return out;
    }
};

inline std::vector<BootConfig> config_lattice() {
    std::vector<BootConfig> out;
    for (SecureBootMode sb :
         {SecureBootMode::Off, SecureBootMode::Basic, SecureBootMode::Uki})
        for (InitrdProtection ip :
             {InitrdProtection::None, InitrdProtection::InUki,
              InitrdProtection::TpmSealed, InitrdProtection::TpmEncrypted})
            for (bool sign : {false, true})
                for (bool sess : {false, true})
                    for (KeyStoreKind ks :
                         {KeyStoreKind::None, KeyStoreKind::AssetTag,
                          KeyStoreKind::Tpm})
                        out.push_back(BootConfig{sb, ip, sign, sess, ks});
    return out;
}

inline bool outcome_matches(const ExpectedOutcome& expected, const Outcome& actual) {
    if (expected.kind != actual.kind) return false;
    if (expected.kind == OutcomeKind::Rejected ||
        expected.kind == OutcomeKind::Compromised)
        return expected.step == actual.step;
    if (expected.kind == OutcomeKind::SecretLeaked)
        return expected.what == actual.what;
    return true;
}

// Exhaustive sweep over the valid configuration lattice crossed with every
// attack vector; cells are ordered by (config key, attack) so merged runs
// stay deterministic.
inline MatrixResult full_matrix(const Fixtures& fixtures) {
    MatrixResult result;
    for (const BootConfig& config : config_lattice()) {
        if (!config.valid()) {
            ++result.skipped_invalid;
            continue;
        }
        for (AttackKind kind : matrix_attacks()) {
            MatrixCell cell;
            cell.config = config;
            cell.attack = AttackVector::named(kind);
            cell.expected = expected_outcome(config, cell.attack);
            cell.actual = run_scenario(config, cell.attack, fixtures);
            cell.match = outcome_matches(cell.expected, cell.actual);
            if (!cell.match) ++result.mismatches;
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

struct Report {
    struct Row {
        std::string config;
        std::string attack;
        std::string outcome;
        int payload_fetches = 0;
        int total_fetches = 0;
        int verify_ops = 0;
        int assembly_ops = 0;
    };
    std::vector<Row> rows;

    std::string csv() const {
        std::string out =
            "config,attack,outcome,payload_fetches,total_fetches,verify_ops,"
            "assembly_ops\n";
        for (const auto& r : rows) {
            out += r.config + "," + r.attack + "," + r.outcome + "," +
                   std::to_string(r.payload_fetches) + "," +
                   std::to_string(r.total_fetches) + "," +
                   std::to_string(r.verify_ops) + "," +
                   std::to_string(r.assembly_ops) + "\n";
        }
        return out;
    }

    std::string text() const {
        std::ostringstream out;
        out << "scenario step costs (" << rows.size() << " runs)\n";
        for (const auto& r : rows) {
            out << "  " << r.config << " / " << r.attack << " -> " << r.outcome
                << "  [payload_fetches=" << r.payload_fetches
                << " total_fetches=" << r.total_fetches
                << " verify_ops=" << r.verify_ops
                << " assembly_ops=" << r.assembly_ops << "]\n";
        }
        return out.str();
    }
};

// Per-run step costs. The wall-clock figures from the measurements chapter
// are hardware-bound; operation counts stand in for them: UKI trades one
// network fetch for local assembly and verification work.
inline Report emit_report(const std::vector<ScenarioResult>& outcomes) {
    if (outcomes.empty())
        throw ValidationError("report needs at least one outcome");
    Report rep;
    for (const auto& r : outcomes) {
        Report::Row row;
        row.config = r.config.key();
        row.attack = attack_name(r.attack.kind);
        row.outcome = outcome_kind_name(r.outcome.kind);
        row.payload_fetches = r.outcome.payload_fetches;
        row.total_fetches = r.outcome.total_fetches;
        row.verify_ops = r.outcome.verify_ops;
        row.assembly_ops = r.outcome.assembly_ops;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

}  // namespace trustchain::sim
