#pragma once

// Thin value-semantic wrappers around OpenSSL 3 EVP primitives. Everything
// the rest of the library needs is funneled through here: SHA-256, RSA-2048
// (PKCS#1 v1.5 signatures, OAEP encryption), AES-256-GCM and randomness.

#include <openssl/core_names.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/rsa.h>

#include <array>
#include <memory>
#include <optional>
#include <string>

#include "trustchain/bytes.hpp"
#include "trustchain/errors.hpp"

namespace trustchain::crypto {

using Digest = std::array<std::uint8_t, 32>;

constexpr std::size_t kRsaBits = 2048;
constexpr std::size_t kRsaBytes = kRsaBits / 8;
// OAEP with a 32-byte hash: k - 2*hLen - 2
constexpr std::size_t kOaepMaxPlaintext = kRsaBytes - 2 * 32 - 2;
constexpr std::size_t kGcmNonceLen = 12;
constexpr std::size_t kGcmTagLen = 16;

struct CryptoError : Error {
    using Error::Error;
};

namespace detail {

inline std::string last_openssl_error() {
    char buf[256];
    ERR_error_string_n(ERR_get_error(), buf, sizeof(buf));
    return std::string(buf);
}

[[noreturn]] inline void fail(const std::string& op) {
    throw CryptoError(op + ": " + last_openssl_error());
}

struct PkeyDeleter {
    void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
using PkeyPtr = std::shared_ptr<EVP_PKEY>;

inline PkeyPtr wrap(EVP_PKEY* p) {
    if (!p) fail("EVP_PKEY allocation");
    return PkeyPtr(p, PkeyDeleter{});
}

struct BioDeleter {
    void operator()(BIO* b) const { BIO_free(b); }
};
using BioPtr = std::unique_ptr<BIO, BioDeleter>;

inline std::string bio_to_string(BIO* bio) {
    char* data = nullptr;
    long len = BIO_get_mem_data(bio, &data);
    return std::string(data, static_cast<std::size_t>(len));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// hashing / randomness
// ---------------------------------------------------------------------------

inline Digest sha256(ByteView data) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(),
                   nullptr) != 1 ||
        len != out.size())
        detail::fail("EVP_Digest");
    return out;
}

inline Digest sha256(std::initializer_list<ByteView> parts) {
    return sha256(concat(parts));
}

inline Bytes digest_bytes(const Digest& d) { return Bytes(d.begin(), d.end()); }

inline Bytes random_bytes(std::size_t n) {
    Bytes out(n);
    if (n > 0 && RAND_bytes(out.data(), static_cast<int>(n)) != 1)
        detail::fail("RAND_bytes");
    return out;
}

// ---------------------------------------------------------------------------
// GUIDs (random, version-4 layout)
// ---------------------------------------------------------------------------

struct Guid {
    std::array<std::uint8_t, 16> bytes{};

    static Guid random() {
        Guid g;
        Bytes r = random_bytes(16);
        std::copy(r.begin(), r.end(), g.bytes.begin());
        g.bytes[6] = static_cast<std::uint8_t>((g.bytes[6] & 0x0F) | 0x40);
        g.bytes[8] = static_cast<std::uint8_t>((g.bytes[8] & 0x3F) | 0x80);
        return g;
    }

    std::string str() const {
        std::string h = to_hex(bytes);
        return h.substr(0, 8) + "-" + h.substr(8, 4) + "-" + h.substr(12, 4) +
               "-" + h.substr(16, 4) + "-" + h.substr(20, 12);
    }

    static Guid parse(std::string_view text) {
        std::string compact;
        for (char c : text)
            if (c != '-') compact.push_back(c);
        Bytes raw = from_hex(compact);
        if (raw.size() != 16) throw ParseError("GUID must be 16 bytes");
        Guid g;
        std::copy(raw.begin(), raw.end(), g.bytes.begin());
        return g;
    }

    auto operator<=>(const Guid&) const = default;
};

// ---------------------------------------------------------------------------
// RSA-2048
// ---------------------------------------------------------------------------

class RsaPublicKey {
  public:
    RsaPublicKey() = default;

    static RsaPublicKey from_pem(const std::string& pem) {
        detail::BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
        EVP_PKEY* p = PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr);
        if (!p) throw ParseError("cannot parse public key PEM");
        return RsaPublicKey(detail::wrap(p));
    }

    static RsaPublicKey from_der(ByteView der) {
        const unsigned char* ptr = der.data();
        EVP_PKEY* p = d2i_PUBKEY(nullptr, &ptr, static_cast<long>(der.size()));
        if (!p) throw ParseError("cannot parse public key DER");
        return RsaPublicKey(detail::wrap(p));
    }

    std::string to_pem() const {
        detail::BioPtr bio(BIO_new(BIO_s_mem()));
        if (PEM_write_bio_PUBKEY(bio.get(), pkey_.get()) != 1)
            detail::fail("PEM_write_bio_PUBKEY");
        return detail::bio_to_string(bio.get());
    }

    Bytes to_der() const {
        unsigned char* der = nullptr;
        int len = i2d_PUBKEY(pkey_.get(), &der);
        if (len <= 0) detail::fail("i2d_PUBKEY");
        Bytes out(der, der + len);
        OPENSSL_free(der);
        return out;
    }

    // SHA-256 over the SubjectPublicKeyInfo encoding.
    Digest fingerprint() const { return sha256(to_der()); }

    bool verify_pkcs1_sha256(ByteView data, ByteView signature) const {
        detail::BioPtr guard;  // silence unused include warnings in some setups
        EVP_MD_CTX* ctx = EVP_MD_CTX_new();
        if (!ctx) detail::fail("EVP_MD_CTX_new");
        bool ok = EVP_DigestVerifyInit(ctx, nullptr, EVP_sha256(), nullptr,
                                       pkey_.get()) == 1 &&
                  EVP_DigestVerify(ctx, signature.data(), signature.size(),
                                   data.data(), data.size()) == 1;
        EVP_MD_CTX_free(ctx);
        ERR_clear_error();
        return ok;
    }

    // Randomized OAEP-SHA256. Plaintext limited to kOaepMaxPlaintext bytes.
    Bytes encrypt_oaep(ByteView plaintext) const {
        if (plaintext.size() > kOaepMaxPlaintext)
            throw ValidationError("plaintext exceeds OAEP limit of " +
                                  std::to_string(kOaepMaxPlaintext) + " bytes");
        EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new(pkey_.get(), nullptr);
        if (!ctx) detail::fail("EVP_PKEY_CTX_new");
        Bytes out(kRsaBytes);
        std::size_t outlen = out.size();
        bool ok = EVP_PKEY_encrypt_init(ctx) == 1 &&
                  EVP_PKEY_CTX_set_rsa_padding(ctx, RSA_PKCS1_OAEP_PADDING) == 1 &&
                  EVP_PKEY_CTX_set_rsa_oaep_md(ctx, EVP_sha256()) == 1 &&
                  EVP_PKEY_CTX_set_rsa_mgf1_md(ctx, EVP_sha256()) == 1 &&
                  EVP_PKEY_encrypt(ctx, out.data(), &outlen, plaintext.data(),
                                   plaintext.size()) == 1;
        EVP_PKEY_CTX_free(ctx);
        if (!ok) detail::fail("RSA-OAEP encrypt");
        out.resize(outlen);
        return out;
    }

    bool valid() const { return static_cast<bool>(pkey_); }

    bool operator==(const RsaPublicKey& other) const {
        if (!pkey_ || !other.pkey_) return pkey_ == other.pkey_;
        return EVP_PKEY_eq(pkey_.get(), other.pkey_.get()) == 1;
    }

  private:
    friend class RsaPrivateKey;
    explicit RsaPublicKey(detail::PkeyPtr p) : pkey_(std::move(p)) {}
    detail::PkeyPtr pkey_;
};

class RsaPrivateKey {
  public:
    RsaPrivateKey() = default;

    static RsaPrivateKey generate() {
        EVP_PKEY* p = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA",
                                        static_cast<size_t>(kRsaBits));
        if (!p) detail::fail("RSA keygen");
        return RsaPrivateKey(detail::wrap(p));
    }

    static RsaPrivateKey from_pem(const std::string& pem) {
        detail::BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
        EVP_PKEY* p = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
        if (!p) throw ParseError("cannot parse private key PEM");
        return RsaPrivateKey(detail::wrap(p));
    }

    std::string to_pem() const {
        detail::BioPtr bio(BIO_new(BIO_s_mem()));
        if (PEM_write_bio_PrivateKey(bio.get(), pkey_.get(), nullptr, nullptr, 0,
                                     nullptr, nullptr) != 1)
            detail::fail("PEM_write_bio_PrivateKey");
        return detail::bio_to_string(bio.get());
    }

    RsaPublicKey public_key() const {
        // Round-trip through DER to detach private components.
        unsigned char* der = nullptr;
        int len = i2d_PUBKEY(pkey_.get(), &der);
        if (len <= 0) detail::fail("i2d_PUBKEY");
        Bytes buf(der, der + len);
        OPENSSL_free(der);
        return RsaPublicKey::from_der(buf);
    }

    Bytes sign_pkcs1_sha256(ByteView data) const {
        EVP_MD_CTX* ctx = EVP_MD_CTX_new();
        if (!ctx) detail::fail("EVP_MD_CTX_new");
        std::size_t siglen = 0;
        bool ok = EVP_DigestSignInit(ctx, nullptr, EVP_sha256(), nullptr,
                                     pkey_.get()) == 1 &&
                  EVP_DigestSign(ctx, nullptr, &siglen, data.data(), data.size()) == 1;
        Bytes sig(siglen);
        ok = ok && EVP_DigestSign(ctx, sig.data(), &siglen, data.data(),
                                  data.size()) == 1;
        EVP_MD_CTX_free(ctx);
        if (!ok) detail::fail("RSA sign");
        sig.resize(siglen);
        return sig;
    }

    // Returns nullopt on any padding or key mismatch; callers cannot
    // distinguish the failure cause.
    std::optional<Bytes> decrypt_oaep(ByteView ciphertext) const {
        EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new(pkey_.get(), nullptr);
        if (!ctx) detail::fail("EVP_PKEY_CTX_new");
        Bytes out(kRsaBytes);
        std::size_t outlen = out.size();
        bool ok = EVP_PKEY_decrypt_init(ctx) == 1 &&
                  EVP_PKEY_CTX_set_rsa_padding(ctx, RSA_PKCS1_OAEP_PADDING) == 1 &&
                  EVP_PKEY_CTX_set_rsa_oaep_md(ctx, EVP_sha256()) == 1 &&
                  EVP_PKEY_CTX_set_rsa_mgf1_md(ctx, EVP_sha256()) == 1 &&
                  EVP_PKEY_decrypt(ctx, out.data(), &outlen, ciphertext.data(),
                                   ciphertext.size()) == 1;
        EVP_PKEY_CTX_free(ctx);
        ERR_clear_error();
        if (!ok) return std::nullopt;
        out.resize(outlen);
        return out;
    }

    // Raw private exponent, exposed so tests can scan serialized state for
    // secret material. Never used on any serialization path.
    Bytes private_exponent() const {
        BIGNUM* d = nullptr;
        if (EVP_PKEY_get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_RSA_D, &d) != 1)
            detail::fail("get RSA d");
        Bytes out(static_cast<std::size_t>(BN_num_bytes(d)));
        BN_bn2bin(d, out.data());
        BN_clear_free(d);
        return out;
    }

    bool valid() const { return static_cast<bool>(pkey_); }

  private:
    explicit RsaPrivateKey(detail::PkeyPtr p) : pkey_(std::move(p)) {}
    detail::PkeyPtr pkey_;
};

// ---------------------------------------------------------------------------
// AES-256-GCM
// ---------------------------------------------------------------------------

using AeadKey = std::array<std::uint8_t, 32>;
using AeadNonce = std::array<std::uint8_t, kGcmNonceLen>;

struct AeadSealed {
    Bytes ciphertext;
    std::array<std::uint8_t, kGcmTagLen> tag{};
};

inline AeadSealed aead_seal(const AeadKey& key, const AeadNonce& nonce,
                            ByteView plaintext, ByteView aad) {
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx) detail::fail("EVP_CIPHER_CTX_new");
    AeadSealed out;
    out.ciphertext.resize(plaintext.size());
    int len = 0;
    bool ok = EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, nullptr,
                                 nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_IVLEN,
                                  static_cast<int>(nonce.size()), nullptr) == 1 &&
              EVP_EncryptInit_ex(ctx, nullptr, nullptr, key.data(), nonce.data()) == 1;
    if (ok && !aad.empty())
        ok = EVP_EncryptUpdate(ctx, nullptr, &len, aad.data(),
                               static_cast<int>(aad.size())) == 1;
    if (ok && !plaintext.empty())
        ok = EVP_EncryptUpdate(ctx, out.ciphertext.data(), &len, plaintext.data(),
                               static_cast<int>(plaintext.size())) == 1;
    int fin = 0;
    ok = ok && EVP_EncryptFinal_ex(ctx, out.ciphertext.data() + len, &fin) == 1 &&
         EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG,
                             static_cast<int>(out.tag.size()), out.tag.data()) == 1;
    EVP_CIPHER_CTX_free(ctx);
    if (!ok) detail::fail("AES-GCM seal");
    return out;
}

inline std::optional<Bytes> aead_open(const AeadKey& key, const AeadNonce& nonce,
                                      ByteView ciphertext, ByteView tag,
                                      ByteView aad) {
    if (tag.size() != kGcmTagLen) return std::nullopt;
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx) detail::fail("EVP_CIPHER_CTX_new");
    Bytes plain(ciphertext.size());
    int len = 0;
    bool ok = EVP_DecryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, nullptr,
                                 nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_IVLEN,
                                  static_cast<int>(nonce.size()), nullptr) == 1 &&
              EVP_DecryptInit_ex(ctx, nullptr, nullptr, key.data(), nonce.data()) == 1;
    if (ok && !aad.empty())
        ok = EVP_DecryptUpdate(ctx, nullptr, &len, aad.data(),
                               static_cast<int>(aad.size())) == 1;
    if (ok && !ciphertext.empty())
        ok = EVP_DecryptUpdate(ctx, plain.data(), &len, ciphertext.data(),
                               static_cast<int>(ciphertext.size())) == 1;
    Bytes tagcopy(tag.begin(), tag.end());
    ok = ok && EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG,
                                   static_cast<int>(tagcopy.size()),
                                   tagcopy.data()) == 1;
    int fin = 0;
    ok = ok && EVP_DecryptFinal_ex(ctx, plain.data() + len, &fin) == 1;
    EVP_CIPHER_CTX_free(ctx);
    ERR_clear_error();
    if (!ok) return std::nullopt;
    return plain;
}

inline AeadKey to_aead_key(ByteView raw) {
    if (raw.size() != 32) throw ValidationError("AEAD key must be 32 bytes");
    AeadKey k{};
    std::copy(raw.begin(), raw.end(), k.begin());
    return k;
}

}  // namespace trustchain::crypto
