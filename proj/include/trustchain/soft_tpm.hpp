#pragma once

// Deterministic software TPM: PCR bank with hash-chained extends, persistent
// RSA-2048 storage keys addressable by handle, OAEP encrypt/decrypt, sealing
// against PCR policies and signed quotes. One TpmState is one logical device;
// callers hold exclusive access per command.
//
// The state file simulates tamper-resistant hardware: private key material
// and the sealing secret are stored encrypted under a per-device secret that
// models the chip-internal root. Physical extraction attacks are out of
// scope, matching the hardware concession in the threat model.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/errors.hpp"

namespace trustchain::tpm {

constexpr std::size_t kPcrCount = 24;
constexpr std::uint32_t kHandleMin = 0x81000000;
constexpr std::uint32_t kHandleMax = 0x810000FF;
constexpr std::size_t kMaxSealedSecret = 128;

struct PersistentHandle {
    std::uint32_t value = 0;

    static PersistentHandle checked(std::uint32_t v) {
        if (v < kHandleMin || v > kHandleMax)
            throw ValidationError("handle outside storage-key range "
                                  "0x81000000..0x810000FF");
        return PersistentHandle{v};
    }

    static PersistentHandle parse(const std::string& text) {
        std::size_t eaten = 0;
        unsigned long v = std::stoul(text, &eaten, 0);
        if (eaten != text.size()) throw ValidationError("malformed handle " + text);
        return checked(static_cast<std::uint32_t>(v));
    }

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "0x%08X", value);
        return buf;
    }

    auto operator<=>(const PersistentHandle&) const = default;
};

struct KeyObject {
    crypto::RsaPrivateKey key;  // rsa2048; private half never leaves the TPM
};

struct PcrPolicy {
    std::set<std::uint32_t> selection;
    std::map<std::uint32_t, crypto::Digest> expected;

    void validate() const {
        if (selection.empty()) throw ValidationError("PCR selection is empty");
        if (expected.size() != selection.size())
            throw ValidationError("policy values do not cover the selection");
        for (std::uint32_t i : selection) {
            if (i >= kPcrCount) throw ValidationError("PCR index out of range");
            if (!expected.contains(i))
                throw ValidationError("policy values do not cover the selection");
        }
    }

    Bytes encode() const {
        BinaryWriter w;
        w.u32(static_cast<std::uint32_t>(selection.size()));
        for (std::uint32_t i : selection) {  // std::set iterates ascending
            w.u32(i);
            w.raw(expected.at(i));
        }
        return w.take();
    }

    static PcrPolicy decode(BinaryReader& r) {
        PcrPolicy p;
        std::uint32_t n = r.u32();
        for (std::uint32_t k = 0; k < n; ++k) {
            std::uint32_t idx = r.u32();
            Bytes v = r.raw(32);
            crypto::Digest d;
            std::copy(v.begin(), v.end(), d.begin());
            p.selection.insert(idx);
            p.expected[idx] = d;
        }
        return p;
    }

    crypto::Digest digest() const { return crypto::sha256(encode()); }
};

struct SealedBlob {
    PcrPolicy policy;
    Bytes nonce;       // AEAD nonce
    Bytes ciphertext;  // secret under the device storage key
    Bytes integrity_tag;

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_bytes("SEAL"));
        w.raw(policy.encode());
        w.blob(nonce);
        w.blob(ciphertext);
        w.blob(integrity_tag);
        return w.take();
    }

    static SealedBlob decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("SEAL");
        SealedBlob b;
        b.policy = PcrPolicy::decode(r);
        b.nonce = r.blob();
        b.ciphertext = r.blob();
        b.integrity_tag = r.blob();
        r.require_done();
        return b;
    }
};

struct Quote {
    std::set<std::uint32_t> selection;
    crypto::Digest pcr_digest{};
    Bytes nonce;
    Bytes signature;

    Bytes signed_message() const {
        BinaryWriter w;
        w.raw(to_bytes("TPMQ"));
        w.u32(static_cast<std::uint32_t>(selection.size()));
        for (std::uint32_t i : selection) w.u32(i);
        w.raw(pcr_digest);
        w.blob(nonce);
        return w.take();
    }

    Bytes encode() const {
        BinaryWriter w;
        w.raw(signed_message());
        w.blob(signature);
        return w.take();
    }

    static Quote decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("TPMQ");
        Quote q;
        std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) q.selection.insert(r.u32());
        Bytes d = r.raw(32);
        std::copy(d.begin(), d.end(), q.pcr_digest.begin());
        q.nonce = r.blob();
        q.signature = r.blob();
        r.require_done();
        return q;
    }
};

// Digest over the selected registers, ascending index order.
inline crypto::Digest
quote_digest(const std::map<std::uint32_t, crypto::Digest>& values) {
    BinaryWriter w;
    for (const auto& [idx, v] : values) {
        w.u32(idx);
        w.raw(v);
    }
    return crypto::sha256(w.bytes());
}

class TpmState {
  public:
    static TpmState create() {
        TpmState t;
        t.device_secret_ = crypto::to_aead_key(crypto::random_bytes(32));
        t.storage_secret_ = crypto::to_aead_key(crypto::random_bytes(32));
        t.quote_key_ = crypto::RsaPrivateKey::generate();
        return t;
    }

    // --- key storage -------------------------------------------------------

    std::string create_primary(const std::string& algorithm) {
        if (algorithm != "rsa2048")
            throw ValidationError("unsupported algorithm: " + algorithm);
        std::string token = "ctx-" + std::to_string(next_token_++);
        transient_[token] = KeyObject{crypto::RsaPrivateKey::generate()};
        return token;
    }

    void evict_control(const std::string& token, PersistentHandle handle) {
        auto it = transient_.find(token);
        if (it == transient_.end())
            throw ValidationError("unknown key context " + token);
        if (persistent_.contains(handle))
            throw ValidationError("handle " + handle.str() + " already occupied");
        persistent_[handle] = std::move(it->second);
        transient_.erase(it);  // token invalidated
    }

    std::string read_public(PersistentHandle handle) const {
        return object(handle).key.public_key().to_pem();
    }

    Bytes rsa_encrypt(PersistentHandle handle, ByteView plaintext) const {
        return object(handle).key.public_key().encrypt_oaep(plaintext);
    }

    Bytes rsa_decrypt(PersistentHandle handle, ByteView ciphertext) const {
        auto plain = object(handle).key.decrypt_oaep(ciphertext);
        if (!plain) throw VerificationError("decryption failure");
        return *plain;
    }

    bool handle_occupied(PersistentHandle handle) const {
        return persistent_.contains(handle);
    }

    // --- PCRs --------------------------------------------------------------

    crypto::Digest pcr_read(std::uint32_t index) const {
        if (index >= kPcrCount) throw ValidationError("PCR index out of range");
        return pcr_bank_[index];
    }

    // PCR[i] := H(old ++ measurement); the only way a register changes
    crypto::Digest pcr_extend(std::uint32_t index, const crypto::Digest& measurement) {
        if (index >= kPcrCount) throw ValidationError("PCR index out of range");
        pcr_bank_[index] =
            crypto::sha256({pcr_bank_[index], measurement});
        return pcr_bank_[index];
    }

    PcrPolicy policy_from_current(const std::set<std::uint32_t>& selection) const {
        PcrPolicy p;
        p.selection = selection;
        for (std::uint32_t i : selection) p.expected[i] = pcr_read(i);
        p.validate();
        return p;
    }

    // --- sealing -----------------------------------------------------------

    SealedBlob seal(ByteView secret, const PcrPolicy& policy) const {
        policy.validate();
        if (secret.size() > kMaxSealedSecret)
            throw ValidationError("sealed secret limited to 128 bytes");
        SealedBlob b;
        b.policy = policy;
        b.nonce = crypto::random_bytes(crypto::kGcmNonceLen);
        crypto::AeadNonce nonce{};
        std::copy(b.nonce.begin(), b.nonce.end(), nonce.begin());
        // the policy digest rides in the associated data, so editing the
        // stored policy breaks the tag
        auto sealed = crypto::aead_seal(storage_secret_, nonce, secret,
                                        policy.digest());
        b.ciphertext = std::move(sealed.ciphertext);
        b.integrity_tag.assign(sealed.tag.begin(), sealed.tag.end());
        return b;
    }

    Bytes unseal(const SealedBlob& blob) const {
        blob.policy.validate();
        for (std::uint32_t i : blob.policy.selection)
            if (pcr_read(i) != blob.policy.expected.at(i))
                throw VerificationError("unseal refused");
        if (blob.nonce.size() != crypto::kGcmNonceLen)
            throw VerificationError("unseal refused");
        crypto::AeadNonce nonce{};
        std::copy(blob.nonce.begin(), blob.nonce.end(), nonce.begin());
        auto plain = crypto::aead_open(storage_secret_, nonce, blob.ciphertext,
                                       blob.integrity_tag, blob.policy.digest());
        if (!plain) throw VerificationError("unseal refused");
        return *plain;
    }

    // --- attestation -------------------------------------------------------

    Quote attest_quote(const std::set<std::uint32_t>& selection,
                       ByteView nonce) const {
        if (selection.empty()) throw ValidationError("PCR selection is empty");
        Quote q;
        q.selection = selection;
        std::map<std::uint32_t, crypto::Digest> values;
        for (std::uint32_t i : selection) values[i] = pcr_read(i);
        q.pcr_digest = quote_digest(values);
        q.nonce.assign(nonce.begin(), nonce.end());
        q.signature = quote_key_.sign_pkcs1_sha256(q.signed_message());
        return q;
    }

    std::string quote_public_pem() const {
        return quote_key_.public_key().to_pem();
    }

    // --- persistence (format TPM1) ------------------------------------------

    Bytes serialize() const {
        BinaryWriter w;
        w.raw(to_bytes("TPM1"));
        w.u8(1);  // version
        w.raw(device_secret_);
        for (const auto& pcr : pcr_bank_) w.raw(pcr);
        put_secret(w, Bytes(storage_secret_.begin(), storage_secret_.end()));
        put_secret(w, to_bytes(quote_key_.to_pem()));
        w.u32(static_cast<std::uint32_t>(persistent_.size()));
        for (const auto& [handle, obj] : persistent_) {
            w.u32(handle.value);
            put_secret(w, to_bytes(obj.key.to_pem()));
        }
        return w.take();
    }

    static TpmState deserialize(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("TPM1");
        if (r.u8() != 1) throw ParseError("unsupported TPM state version");
        TpmState t;
        t.device_secret_ = crypto::to_aead_key(r.raw(32));
        for (auto& pcr : t.pcr_bank_) {
            Bytes v = r.raw(32);
            std::copy(v.begin(), v.end(), pcr.begin());
        }
        t.storage_secret_ = crypto::to_aead_key(t.get_secret(r));
        t.quote_key_ =
            crypto::RsaPrivateKey::from_pem(to_string(t.get_secret(r)));
        std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            PersistentHandle h = PersistentHandle::checked(r.u32());
            t.persistent_[h] =
                KeyObject{crypto::RsaPrivateKey::from_pem(to_string(t.get_secret(r)))};
        }
        r.require_done();
        return t;
    }

  private:
    const KeyObject& object(PersistentHandle handle) const {
        auto it = persistent_.find(handle);
        if (it == persistent_.end())
            throw ValidationError("no key at handle " + handle.str());
        return it->second;
    }

    void put_secret(BinaryWriter& w, ByteView plain) const {
        Bytes nonce = crypto::random_bytes(crypto::kGcmNonceLen);
        crypto::AeadNonce n{};
        std::copy(nonce.begin(), nonce.end(), n.begin());
        auto sealed = crypto::aead_seal(device_secret_, n, plain,
                                        to_bytes("tpm-internal"));
        w.blob(nonce);
        w.blob(sealed.ciphertext);
        w.blob(Bytes(sealed.tag.begin(), sealed.tag.end()));
    }

    Bytes get_secret(BinaryReader& r) const {
        Bytes nonce = r.blob();
        Bytes ct = r.blob();
        Bytes tag = r.blob();
        if (nonce.size() != crypto::kGcmNonceLen)
            throw ParseError("corrupt TPM state");
        crypto::AeadNonce n{};
        std::copy(nonce.begin(), nonce.end(), n.begin());
        auto plain = crypto::aead_open(device_secret_, n, ct, tag,
                                       to_bytes("tpm-internal"));
        if (!plain) throw ParseError("corrupt TPM state");
        return *plain;
    }

    std::array<crypto::Digest, kPcrCount> pcr_bank_{};  // reset value: all zero
    std::map<PersistentHandle, KeyObject> persistent_;
    std::map<std::string, KeyObject> transient_;
    crypto::RsaPrivateKey quote_key_;
    crypto::AeadKey device_secret_{};
    crypto::AeadKey storage_secret_{};
    std::uint64_t next_token_ = 1;
};

inline bool verify_quote(const Quote& q, const crypto::RsaPublicKey& quote_pub) {
    return quote_pub.verify_pkcs1_sha256(q.signed_message(), q.signature);
}

// Listing-13 companion path: encrypt against the exported PEM key instead of
// going through the device.
inline Bytes encrypt_with_public_pem(const std::string& pem, ByteView plaintext) {
    return crypto::RsaPublicKey::from_pem(pem).encrypt_oaep(plaintext);
}

inline void save_tpm(const TpmState& t, const std::filesystem::path& path) {
    write_file(path, t.serialize());
}

inline TpmState load_tpm(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw PrerequisiteError("no TPM state at " + path.string() +
                                " (run tpm create-primary first)");
    return TpmState::deserialize(read_file(path));
}

}  // namespace trustchain::tpm
