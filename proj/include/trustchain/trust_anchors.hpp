#pragma once

// Secure Boot key hierarchy: PK/KEK/DB/DBX certificates, signed signature
// lists (.auth bundles) and a simulated UEFI key store with setup-mode
// semantics. Certificates use a project-local armored encoding; X.509 wire
// fidelity is out of scope.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/errors.hpp"

namespace trustchain::anchors {

enum class Role : std::uint8_t { PK = 0, KEK = 1, DB = 2, DBX = 3 };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::PK: return "PK";
        case Role::KEK: return "KEK";
        case Role::DB: return "DB";
        case Role::DBX: return "DBX";
    }
    return "?";
}

inline Role role_from_name(std::string_view name) {
    if (name == "PK") return Role::PK;
    if (name == "KEK") return Role::KEK;
    if (name == "DB" || name == "db") return Role::DB;
    if (name == "DBX" || name == "dbx") return Role::DBX;
    throw ValidationError("unknown key role: " + std::string(name));
}

constexpr std::uint32_t kDefaultValidityDays = 3650;
inline constexpr const char* kCertArmorLabel = "TRUSTCHAIN CERTIFICATE";

// ---------------------------------------------------------------------------
// Certificate
// ---------------------------------------------------------------------------

struct Certificate {
    std::string subject_cn;
    Role role = Role::DB;
    crypto::RsaPublicKey public_key;
    std::uint32_t validity_days = kDefaultValidityDays;
    Bytes self_signature;

    // Bytes covered by the self signature.
    Bytes to_be_signed() const {
        BinaryWriter w;
        w.raw(to_bytes("CRT1"));
        w.str(subject_cn);
        w.u8(static_cast<std::uint8_t>(role));
        w.u32(validity_days);
        w.blob(public_key.to_der());
        return w.take();
    }

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_be_signed());
        w.blob(self_signature);
        return w.take();
    }

    static Certificate decode(BinaryReader& r) {
        r.expect_magic("CRT1");
        Certificate c;
        c.subject_cn = r.str();
        std::uint8_t role_byte = r.u8();
        if (role_byte > static_cast<std::uint8_t>(Role::DBX))
            throw ParseError("invalid role byte");
        c.role = static_cast<Role>(role_byte);
        c.validity_days = r.u32();
        Bytes der = r.blob();
        c.public_key = crypto::RsaPublicKey::from_der(der);
        // Only the canonical key encoding is accepted, so decode/encode is
        // byte-exact and signatures always cover the bytes actually parsed.
        if (c.public_key.to_der() != der)
            throw ParseError("non-canonical public key encoding");
        c.self_signature = r.blob();
        return c;
    }

    static Certificate decode(ByteView data) {
        BinaryReader r(data);
        Certificate c = decode(r);
        r.require_done();
        return c;
    }

    crypto::Digest fingerprint() const { return crypto::sha256(encode()); }

    bool self_signature_ok() const {
        return public_key.verify_pkcs1_sha256(to_be_signed(), self_signature);
    }

    bool check_invariants() const {
        const std::string suffix = std::string(" ") + role_name(role);
        return validity_days > 0 && subject_cn.size() > suffix.size() &&
               subject_cn.ends_with(suffix) && self_signature_ok();
    }

    std::string armored() const { return armor(kCertArmorLabel, encode()); }

    static Certificate from_armored(std::string_view text) {
        return decode(dearmor(kCertArmorLabel, text));
    }

    bool operator==(const Certificate& other) const {
        return encode() == other.encode();
    }
};

inline Certificate make_self_signed(const std::string& subject_cn, Role role,
                                    const crypto::RsaPrivateKey& key,
                                    std::uint32_t validity_days = kDefaultValidityDays) {
    Certificate c;
    c.subject_cn = subject_cn;
    c.role = role;
    c.public_key = key.public_key();
    c.validity_days = validity_days;
    c.self_signature = key.sign_pkcs1_sha256(c.to_be_signed());
    return c;
}

// ---------------------------------------------------------------------------
// Signature lists
// ---------------------------------------------------------------------------

// DBX lists may carry raw content hashes next to certificates.
using ListEntry = std::variant<Certificate, crypto::Digest>;

struct SignatureList {
    crypto::Guid owner_guid;
    std::vector<ListEntry> entries;

    // Entry payload only; the owner GUID travels in the .auth header.
    Bytes encode_entries() const {
        BinaryWriter w;
        w.u32(static_cast<std::uint32_t>(entries.size()));
        for (const auto& e : entries) {
            if (std::holds_alternative<Certificate>(e)) {
                w.u8(0);
                w.blob(std::get<Certificate>(e).encode());
            } else {
                w.u8(1);
                w.raw(std::get<crypto::Digest>(e));
            }
        }
        return w.take();
    }

    static std::vector<ListEntry> decode_entries(ByteView payload) {
        BinaryReader r(payload);
        std::uint32_t n = r.u32();
        std::vector<ListEntry> entries;
        entries.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            std::uint8_t tag = r.u8();
            if (tag == 0) {
                entries.emplace_back(Certificate::decode(r.blob()));
            } else if (tag == 1) {
                Bytes raw = r.raw(32);
                crypto::Digest d;
                std::copy(raw.begin(), raw.end(), d.begin());
                entries.emplace_back(d);
            } else {
                throw ParseError("unknown signature list entry tag");
            }
        }
        r.require_done();
        return entries;
    }

    std::vector<Certificate> certificates() const {
        std::vector<Certificate> out;
        for (const auto& e : entries)
            if (std::holds_alternative<Certificate>(e))
                out.push_back(std::get<Certificate>(e));
        return out;
    }

    bool contains_certificate(const Certificate& cert) const {
        Bytes needle = cert.encode();
        for (const auto& e : entries)
            if (std::holds_alternative<Certificate>(e) &&
                std::get<Certificate>(e).encode() == needle)
                return true;
        return false;
    }

    bool contains_hash(const crypto::Digest& d) const {
        for (const auto& e : entries)
            if (std::holds_alternative<crypto::Digest>(e) &&
                std::get<crypto::Digest>(e) == d)
                return true;
        return false;
    }
};

struct SignedSignatureList {
    SignatureList list;
    Role target_slot = Role::PK;
    std::uint64_t timestamp = 0;  // UTC seconds
    Bytes authorizing_signature;
    Role authorizer_role = Role::PK;

    // Everything the authorizing signature covers: the .auth header plus the
    // entry payload. Flipping any payload byte invalidates the signature.
    Bytes signed_message() const {
        BinaryWriter w;
        w.raw(to_bytes("SSL1"));
        w.u8(static_cast<std::uint8_t>(target_slot));
        w.u64(timestamp);
        w.raw(list.owner_guid.bytes);
        w.blob(list.encode_entries());
        return w.take();
    }

    Bytes encode() const {
        BinaryWriter w;
        w.raw(signed_message());
        w.blob(authorizing_signature);
        return w.take();
    }

    static SignedSignatureList decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("SSL1");
        SignedSignatureList s;
        s.target_slot = static_cast<Role>(r.u8());
        if (s.target_slot > Role::DBX) throw ParseError("bad slot byte");
        s.timestamp = r.u64();
        Bytes guid = r.raw(16);
        std::copy(guid.begin(), guid.end(), s.list.owner_guid.bytes.begin());
        s.list.entries = SignatureList::decode_entries(r.blob());
        s.authorizing_signature = r.blob();
        r.require_done();
        s.authorizer_role =
            (s.target_slot == Role::PK || s.target_slot == Role::KEK) ? Role::PK
                                                                      : Role::KEK;
        return s;
    }
};

// ---------------------------------------------------------------------------
// Key hierarchy
// ---------------------------------------------------------------------------

struct KeyPair {
    Certificate cert;
    crypto::RsaPrivateKey key;
};

struct KeyHierarchy {
    KeyPair pk;
    KeyPair kek;
    KeyPair db;
    crypto::Guid guid;
};

// Listing-1 flow: three self-signed RSA-2048/SHA-256 certificates with the
// role appended to the common name, shared random GUID, 3650-day validity.
inline KeyHierarchy generate_hierarchy(const std::string& common_name) {
    if (common_name.empty())
        throw ValidationError("common name must not be empty");
    for (unsigned char c : common_name)
        if (c < 0x20 || c == 0x7F)
            throw ValidationError("common name must be printable");
    KeyHierarchy h;
    h.guid = crypto::Guid::random();
    h.pk.key = crypto::RsaPrivateKey::generate();
    h.pk.cert = make_self_signed(common_name + " PK", Role::PK, h.pk.key);
    h.kek.key = crypto::RsaPrivateKey::generate();
    h.kek.cert = make_self_signed(common_name + " KEK", Role::KEK, h.kek.key);
    h.db.key = crypto::RsaPrivateKey::generate();
    h.db.cert = make_self_signed(common_name + " DB", Role::DB, h.db.key);
    return h;
}

inline SignedSignatureList sign_signature_list(const SignatureList& list,
                                               Role target_slot,
                                               const crypto::RsaPrivateKey& signer,
                                               Role authorizer_role,
                                               std::uint64_t timestamp) {
    SignedSignatureList s;
    s.list = list;
    s.target_slot = target_slot;
    s.timestamp = timestamp;
    s.authorizer_role = authorizer_role;
    s.authorizing_signature = signer.sign_pkcs1_sha256(s.signed_message());
    return s;
}

struct EnrollmentBundle {
    SignedSignatureList pk;     // PK list signed by PK
    SignedSignatureList no_pk;  // empty PK list signed by PK (removal)
    SignedSignatureList kek;    // KEK list signed by PK
    SignedSignatureList db;     // DB list signed by KEK
};

// `after` orders regenerated bundles: the new timestamp is strictly greater
// than it even when wall clocks collide.
inline EnrollmentBundle build_enrollment_bundle(const KeyHierarchy& h,
                                                std::uint64_t after = 0) {
    std::uint64_t ts = std::max(utc_now_seconds(), after + 1);
    auto single = [&](const Certificate& c) {
        SignatureList l;
        l.owner_guid = h.guid;
        l.entries = {c};
        return l;
    };
    SignatureList empty_list;
    empty_list.owner_guid = h.guid;

    EnrollmentBundle b;
    b.pk = sign_signature_list(single(h.pk.cert), Role::PK, h.pk.key, Role::PK, ts);
    b.no_pk = sign_signature_list(empty_list, Role::PK, h.pk.key, Role::PK, ts);
    b.kek = sign_signature_list(single(h.kek.cert), Role::KEK, h.pk.key, Role::PK, ts);
    b.db = sign_signature_list(single(h.db.cert), Role::DB, h.kek.key, Role::KEK, ts);
    return b;
}

// ---------------------------------------------------------------------------
// UEFI key store
// ---------------------------------------------------------------------------

enum class Verdict : std::uint8_t {
    Allowed = 0,
    DeniedUnsigned = 1,
    DeniedUntrusted = 2,
    DeniedForbidden = 3,
};

inline const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Allowed: return "Allowed";
        case Verdict::DeniedUnsigned: return "DeniedUnsigned";
        case Verdict::DeniedUntrusted: return "DeniedUntrusted";
        case Verdict::DeniedForbidden: return "DeniedForbidden";
    }
    return "?";
}

struct UefiKeyStore {
    std::optional<SignatureList> pk_slot;
    SignatureList kek_slot;
    SignatureList db_slot;
    SignatureList dbx_slot;

    bool setup_mode() const { return !pk_slot.has_value(); }

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_bytes("UKS1"));
        auto put = [&w](const SignatureList& l) {
            w.raw(l.owner_guid.bytes);
            w.blob(l.encode_entries());
        };
        w.u8(pk_slot ? 1 : 0);
        if (pk_slot) put(*pk_slot);
        put(kek_slot);
        put(db_slot);
        put(dbx_slot);
        return w.take();
    }

    static UefiKeyStore decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("UKS1");
        auto get = [&r]() {
            SignatureList l;
            Bytes guid = r.raw(16);
            std::copy(guid.begin(), guid.end(), l.owner_guid.bytes.begin());
            l.entries = SignatureList::decode_entries(r.blob());
            return l;
        };
        UefiKeyStore s;
        if (r.u8() != 0) s.pk_slot = get();
        s.kek_slot = get();
        s.db_slot = get();
        s.dbx_slot = get();
        r.require_done();
        return s;
    }
};

namespace detail {

inline bool signature_authorized_by(const SignedSignatureList& item,
                                    const SignatureList& authorizer) {
    Bytes message = item.signed_message();
    for (const Certificate& cert : authorizer.certificates())
        if (cert.public_key.verify_pkcs1_sha256(message, item.authorizing_signature))
            return true;
    return false;
}

}  // namespace detail

// Pure enrollment: returns the updated store, throws VerificationError when
// the authorizing signature does not chain to the enrolled authorizer. In
// setup mode any PK list is accepted; everything else always needs its
// authorizer present, so KEK cannot precede PK and DB cannot precede KEK.
inline UefiKeyStore enroll(const UefiKeyStore& store,
                           const SignedSignatureList& item) {
    UefiKeyStore next = store;
    switch (item.target_slot) {
        case Role::PK: {
            if (!store.setup_mode() &&
                !detail::signature_authorized_by(item, *store.pk_slot))
                throw VerificationError("PK update not authorized by enrolled PK");
            if (item.list.entries.empty())
                next.pk_slot.reset();  // the noPK removal list
            else
                next.pk_slot = item.list;
            return next;
        }
        case Role::KEK: {
            if (item.authorizer_role != Role::PK)
                throw VerificationError("KEK list must be authorized by PK");
            if (store.setup_mode() ||
                !detail::signature_authorized_by(item, *store.pk_slot))
                throw VerificationError("KEK update not authorized by enrolled PK");
            next.kek_slot = item.list;
            return next;
        }
        case Role::DB:
        case Role::DBX: {
            if (item.authorizer_role != Role::KEK)
                throw VerificationError("DB/DBX list must be authorized by KEK");
            if (!detail::signature_authorized_by(item, store.kek_slot))
                throw VerificationError("DB/DBX update not authorized by enrolled KEK");
            if (item.target_slot == Role::DB)
                next.db_slot = item.list;
            else
                next.dbx_slot = item.list;
            return next;
        }
    }
    throw ValidationError("invalid target slot");
}

// One appended signature as seen by the verifier: the signer's certificate,
// the signature bytes and the exact message they cover.
struct SignatureClaim {
    Certificate signer;
    Bytes signature;
    Bytes message;
};

// Core allow/deny decision. `content_hash` identifies the unsigned payload
// for dbx hash matching. DeniedForbidden wins over everything.
inline Verdict evaluate_claims(const UefiKeyStore& store,
                               const crypto::Digest& content_hash,
                               std::span<const SignatureClaim> claims) {
    if (store.setup_mode())
        throw ValidationError("key store is in setup mode");
    if (store.dbx_slot.contains_hash(content_hash))
        return Verdict::DeniedForbidden;
    for (const auto& claim : claims)
        if (store.dbx_slot.contains_certificate(claim.signer))
            return Verdict::DeniedForbidden;
    if (claims.empty()) return Verdict::DeniedUnsigned;
    for (const auto& claim : claims) {
        if (store.db_slot.contains_certificate(claim.signer) &&
            claim.signer.public_key.verify_pkcs1_sha256(claim.message,
                                                        claim.signature))
            return Verdict::Allowed;
    }
    return Verdict::DeniedUntrusted;
}

// ---------------------------------------------------------------------------
// on-disk formats
// ---------------------------------------------------------------------------

inline void save_hierarchy(const KeyHierarchy& h, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto put = [&](const char* stem, const KeyPair& kp) {
        write_text_file(dir / (std::string(stem) + ".key"), kp.key.to_pem());
        write_text_file(dir / (std::string(stem) + ".crt"), kp.cert.armored());
    };
    put("PK", h.pk);
    put("KEK", h.kek);
    put("DB", h.db);
    write_text_file(dir / "GUID.txt", h.guid.str() + "\n");
}

inline KeyHierarchy load_hierarchy(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir / "PK.key"))
        throw PrerequisiteError("no key hierarchy in " + dir.string() +
                                " (run keygen first)");
    auto get = [&](const char* stem) {
        KeyPair kp;
        kp.key = crypto::RsaPrivateKey::from_pem(
            read_text_file(dir / (std::string(stem) + ".key")));
        kp.cert = Certificate::from_armored(
            read_text_file(dir / (std::string(stem) + ".crt")));
        return kp;
    };
    KeyHierarchy h;
    h.pk = get("PK");
    h.kek = get("KEK");
    h.db = get("DB");
    std::string guid_text = read_text_file(dir / "GUID.txt");
    while (!guid_text.empty() && (guid_text.back() == '\n' || guid_text.back() == '\r'))
        guid_text.pop_back();
    h.guid = crypto::Guid::parse(guid_text);
    return h;
}

inline void save_bundle(const EnrollmentBundle& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file(dir / "PK.auth", b.pk.encode());
    write_file(dir / "noPK.auth", b.no_pk.encode());
    write_file(dir / "KEK.auth", b.kek.encode());
    write_file(dir / "DB.auth", b.db.encode());
}

inline UefiKeyStore load_store(const std::filesystem::path& path) {
    return UefiKeyStore::decode(read_file(path));
}

inline void save_store(const UefiKeyStore& s, const std::filesystem::path& path) {
    write_file(path, s.encode());
}

}  // namespace trustchain::anchors
