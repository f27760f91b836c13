#pragma once

// Boot image container with appended Secure Boot signatures, plus the
// Unified Kernel Image section layout. Signed files stay parseable without
// a header: each signature block carries a fixed trailer so verifiers walk
// the blocks backwards from the end of file, sbsign-style.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/errors.hpp"
#include "trustchain/trust_anchors.hpp"

namespace trustchain::forge {

enum class ImageKind : std::uint8_t {
    IpxeBinary = 0,
    Kernel = 1,
    Initramfs = 2,
    Uki = 3,
    Stub = 4,
};

inline const char* image_kind_name(ImageKind k) {
    switch (k) {
        case ImageKind::IpxeBinary: return "ipxe";
        case ImageKind::Kernel: return "kernel";
        case ImageKind::Initramfs: return "initramfs";
        case ImageKind::Uki: return "uki";
        case ImageKind::Stub: return "stub";
    }
    return "?";
}

struct BootImage {
    Bytes payload;
    ImageKind kind = ImageKind::Kernel;
};

struct AppendedSignature {
    anchors::Certificate signer_cert;
    Bytes signature;
};

struct SignedBootImage {
    BootImage image;
    std::vector<AppendedSignature> signatures;
};

namespace detail {

inline constexpr const char* kBlockMagic = "ASIG";

inline Bytes encode_block(const AppendedSignature& s) {
    BinaryWriter body;
    body.blob(s.signer_cert.encode());
    body.blob(s.signature);
    BinaryWriter w;
    w.raw(body.bytes());
    // trailer: total block length (incl. these 8 bytes) + magic
    w.u32(static_cast<std::uint32_t>(body.bytes().size() + 8));
    w.raw(to_bytes(kBlockMagic));
    return w.take();
}

}  // namespace detail

inline Bytes serialize_signed(const SignedBootImage& s) {
    Bytes out = s.image.payload;
    for (const auto& sig : s.signatures) {
        Bytes block = detail::encode_block(sig);
        out.insert(out.end(), block.begin(), block.end());
    }
    return out;
}

inline SignedBootImage parse_signed(ByteView data,
                                    ImageKind kind = ImageKind::Kernel) {
    std::vector<AppendedSignature> reversed;
    std::size_t end = data.size();
    while (end >= 8) {
        BinaryReader tail(data.subspan(end - 8, 8));
        std::uint32_t block_len = tail.u32();
        Bytes magic = tail.raw(4);
        if (to_string(magic) != detail::kBlockMagic) break;
        if (block_len < 8 + 8 || block_len > end) break;
        BinaryReader body(data.subspan(end - block_len, block_len - 8));
        AppendedSignature s;
        s.signer_cert = anchors::Certificate::decode(body.blob());
        s.signature = body.blob();
        body.require_done();
        reversed.push_back(std::move(s));
        end -= block_len;
    }
    SignedBootImage out;
    out.image.kind = kind;
    out.image.payload.assign(data.begin(), data.begin() + end);
    out.signatures.assign(reversed.rbegin(), reversed.rend());
    if (out.image.payload.empty())
        throw ValidationError("image payload is empty");
    return out;
}

// Appends one signature computed over the current serialized bytes, so every
// signature covers the payload plus all earlier signature blocks.
inline SignedBootImage sign_image(const SignedBootImage& base,
                                  const crypto::RsaPrivateKey& db_key,
                                  const anchors::Certificate& db_cert) {
    if (db_cert.role != anchors::Role::DB)
        throw ValidationError(std::string("signing requires a DB certificate, got ") +
                              anchors::role_name(db_cert.role));
    if (base.image.payload.empty())
        throw ValidationError("image payload is empty");
    if (!(db_cert.public_key == db_key.public_key()))
        throw ValidationError("certificate does not match the signing key");
    Bytes message = serialize_signed(base);
    SignedBootImage out = base;
    out.signatures.push_back({db_cert, db_key.sign_pkcs1_sha256(message)});
    return out;
}

inline SignedBootImage sign_image(const BootImage& img,
                                  const crypto::RsaPrivateKey& db_key,
                                  const anchors::Certificate& db_cert) {
    return sign_image(SignedBootImage{img, {}}, db_key, db_cert);
}

}  // namespace trustchain::forge

namespace trustchain::anchors {

// Allow/deny verdict for a signed boot image; any one signature chaining to
// the db slot suffices, dbx hits win unconditionally.
inline Verdict check_allowed(const UefiKeyStore& store,
                             const forge::SignedBootImage& image) {
    std::vector<SignatureClaim> claims;
    forge::SignedBootImage prefix{image.image, {}};
    for (const auto& sig : image.signatures) {
        claims.push_back({sig.signer_cert, sig.signature,
                          forge::serialize_signed(prefix)});
        prefix.signatures.push_back(sig);
    }
    return evaluate_claims(store, crypto::sha256(image.image.payload), claims);
}

}  // namespace trustchain::anchors

namespace trustchain::forge {

inline anchors::Verdict verify_image(const SignedBootImage& s,
                                     const anchors::UefiKeyStore& store) {
    return anchors::check_allowed(store, s);
}

// ---------------------------------------------------------------------------
// os-release key/value document
// ---------------------------------------------------------------------------

// Preserves per-entry quoting so a parsed file serializes back byte for byte
// (os-release files quote freely, not only around spaces).
struct OsRelease {
    struct Entry {
        std::string key;
        std::string value;
        bool quoted = false;
    };
    std::vector<Entry> entries;

    static OsRelease parse(std::string_view text) {
        OsRelease r;
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t eol = text.find('\n', pos);
            std::string_view line = text.substr(
                pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
            pos = eol == std::string_view::npos ? text.size() : eol + 1;
            if (line.empty()) continue;
            std::size_t eq = line.find('=');
            if (eq == std::string_view::npos)
                throw ParseError("os-release line without '='");
            Entry e;
            e.key = std::string(line.substr(0, eq));
            std::string_view v = line.substr(eq + 1);
            if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
                e.quoted = true;
                v = v.substr(1, v.size() - 2);
            }
            e.value = std::string(v);
            r.entries.push_back(std::move(e));
        }
        return r;
    }

    std::string serialize() const {
        std::string out;
        for (const auto& e : entries) {
            out += e.key;
            out += '=';
            if (e.quoted) out += '"';
            out += e.value;
            if (e.quoted) out += '"';
            out += '\n';
        }
        return out;
    }

    std::optional<std::string> get(std::string_view key) const {
        for (const auto& e : entries)
            if (e.key == key) return e.value;
        return std::nullopt;
    }

    void set(const std::string& key, const std::string& value) {
        bool quote = value.empty() || value.find(' ') != std::string::npos;
        for (auto& e : entries) {
            if (e.key == key) {
                e.value = value;
                e.quoted = quote;
                return;
            }
        }
        entries.push_back({key, value, quote});
    }
};

// ---------------------------------------------------------------------------
// Unified Kernel Image container
// ---------------------------------------------------------------------------

constexpr std::uint64_t kOsrelVma = 0x20000;
constexpr std::uint64_t kCmdlineVma = 0x30000;
constexpr std::uint64_t kLinuxVma = 0x40000;
constexpr std::uint64_t kInitrdVma = 0x3000000;

inline const std::vector<std::string>& uki_section_order() {
    static const std::vector<std::string> order = {".osrel", ".cmdline", ".linux",
                                                   ".initrd"};
    return order;
}

struct UkiSection {
    std::string name;
    std::uint64_t vma = 0;
    Bytes data;
};

struct UkiContainer {
    std::vector<UkiSection> sections;

    const UkiSection* find(std::string_view name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }

    // Sections must appear in canonical order with strictly increasing vmas,
    // unique names from the known set, and ".linux" present.
    void validate() const {
        const auto& order = uki_section_order();
        std::size_t cursor = 0;
        bool has_linux = false;
        std::uint64_t prev_vma = 0;
        bool first = true;
        for (const auto& s : sections) {
            auto it = std::find(order.begin() + static_cast<long>(cursor),
                                order.end(), s.name);
            if (it == order.end()) {
                if (std::find(order.begin(), order.end(), s.name) != order.end())
                    throw ValidationError("duplicate or misordered section " + s.name);
                throw ValidationError("unknown section name " + s.name);
            }
            cursor = static_cast<std::size_t>(it - order.begin()) + 1;
            if (!first && s.vma <= prev_vma)
                throw ValidationError("section vmas must strictly increase");
            prev_vma = s.vma;
            first = false;
            if (s.name == ".linux") has_linux = true;
        }
        if (!has_linux) throw ValidationError("UKI requires a .linux section");
    }

    Bytes serialize() const {
        validate();
        BinaryWriter header;
        header.raw(to_bytes("UKI1"));
        header.u32(static_cast<std::uint32_t>(sections.size()));
        // table entries: name, vma, absolute offset, length
        std::size_t table_size = 0;
        for (const auto& s : sections) table_size += 4 + s.name.size() + 8 + 8 + 8;
        std::uint64_t offset = 4 + 4 + table_size;
        for (const auto& s : sections) {
            header.str(s.name);
            header.u64(s.vma);
            header.u64(offset);
            header.u64(s.data.size());
            offset += s.data.size();
        }
        Bytes out = header.take();
        for (const auto& s : sections)
            out.insert(out.end(), s.data.begin(), s.data.end());
        return out;
    }

    static UkiContainer deserialize(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("UKI1");
        std::uint32_t count = r.u32();
        struct RawEntry {
            std::string name;
            std::uint64_t vma, offset, length;
        };
        std::vector<RawEntry> table;
        for (std::uint32_t i = 0; i < count; ++i) {
            RawEntry e;
            e.name = r.str();
            e.vma = r.u64();
            e.offset = r.u64();
            e.length = r.u64();
            table.push_back(std::move(e));
        }
        UkiContainer c;
        for (const auto& e : table) {
            if (e.offset + e.length > data.size())
                throw ParseError("section extends past end of container");
            UkiSection s;
            s.name = e.name;
            s.vma = e.vma;
            s.data.assign(data.begin() + static_cast<long>(e.offset),
                          data.begin() + static_cast<long>(e.offset + e.length));
            c.sections.push_back(std::move(s));
        }
        c.validate();
        return c;
    }
};

// Mirrors the objcopy flow: fixed vmas per section, initramfs optional, at
// most one ".initrd". The stub is the execution vehicle, not a recorded
// section; only the four content sections are covered by the container.
inline UkiContainer build_uki(ByteView stub, const OsRelease& osrel,
                              const std::string& cmdline, ByteView kernel,
                              std::optional<ByteView> initrd = std::nullopt) {
    (void)stub;
    if (kernel.empty()) throw ValidationError("kernel must not be empty");
    UkiContainer c;
    c.sections.push_back({".osrel", kOsrelVma, to_bytes(osrel.serialize())});
    c.sections.push_back({".cmdline", kCmdlineVma, to_bytes(cmdline)});
    c.sections.push_back({".linux", kLinuxVma, Bytes(kernel.begin(), kernel.end())});
    if (initrd)
        c.sections.push_back(
            {".initrd", kInitrdVma, Bytes(initrd->begin(), initrd->end())});
    c.validate();
    return c;
}

inline Bytes extract_section(const UkiContainer& uki, std::string_view name) {
    const UkiSection* s = uki.find(name);
    if (!s) throw VerificationError("no such section: " + std::string(name));
    return s->data;
}

// Presence of the embedded ".cmdline" decides; its content (even empty)
// always wins over externally supplied parameters.
inline std::string effective_cmdline(const UkiContainer& uki,
                                     const std::string& external) {
    const UkiSection* s = uki.find(".cmdline");
    if (s) return to_string(s->data);
    return external;
}

}  // namespace trustchain::forge
