#pragma once

// Client key provisioning and per-session key issuance. The registry pins a
// client's public key on first registration (TOFU included) and hands out
// 32-byte session keys encrypted to the client's TPM key, one strictly
// increasing epoch at a time. The legacy DCMI asset-tag keystore is modeled
// for comparison with its 63-byte capacity and 16-byte chunked reads.
//
// Registry values are plain data; concurrent readers are fine, writers must
// be serialized by the caller.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/errors.hpp"
#include "trustchain/soft_tpm.hpp"

namespace trustchain::prov {

constexpr std::size_t kSessionKeyLen = 32;
constexpr std::size_t kAssetTagCapacity = 63;
constexpr std::size_t kAssetTagChunk = 16;

enum class Channel : std::uint8_t {
    TrustedMedium = 0,
    ProvisioningNetwork = 1,
    Tofu = 2,
};

inline const char* channel_name(Channel c) {
    switch (c) {
        case Channel::TrustedMedium: return "usb";
        case Channel::ProvisioningNetwork: return "provnet";
        case Channel::Tofu: return "net-tofu";
    }
    return "?";
}

inline Channel channel_from_name(std::string_view name) {
    if (name == "usb") return Channel::TrustedMedium;
    if (name == "provnet") return Channel::ProvisioningNetwork;
    if (name == "net-tofu" || name == "tofu") return Channel::Tofu;
    throw ValidationError("unknown channel: " + std::string(name) +
                          " (expected usb|provnet|net-tofu)");
}

struct ClientRecord {
    std::string client_id;
    std::string public_key_pem;
    Channel channel = Channel::TrustedMedium;
    std::uint64_t first_seen = 0;
    bool pinned = true;
};

struct SessionGrant {
    std::string client_id;
    Bytes encrypted_session_key;  // 256-byte RSA-OAEP ciphertext
    std::uint64_t epoch = 0;
    std::uint64_t issued_at = 0;

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_bytes("GRNT"));
        w.str(client_id);
        w.u64(epoch);
        w.u64(issued_at);
        w.blob(encrypted_session_key);
        return w.take();
    }

    static SessionGrant decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("GRNT");
        SessionGrant g;
        g.client_id = r.str();
        g.epoch = r.u64();
        g.issued_at = r.u64();
        g.encrypted_session_key = r.blob();
        r.require_done();
        return g;
    }
};

// ---------------------------------------------------------------------------
// registry
// ---------------------------------------------------------------------------

struct ActiveSession {
    std::uint64_t epoch = 0;
    Bytes key;  // only the active epoch's key is retained server-side
};

class ClientRegistry {
  public:
    // Registers or re-registers a client. The first key for an id is pinned
    // forever: a different key is rejected on every channel, the same key is
    // an idempotent success.
    ClientRecord provision_client(const std::string& client_id,
                                  const std::string& public_key_pem,
                                  Channel channel) {
        if (client_id.empty()) throw ValidationError("client id must not be empty");
        crypto::RsaPublicKey::from_pem(public_key_pem);  // reject garbage early
        auto it = records_.find(client_id);
        if (it != records_.end()) {
            if (it->second.public_key_pem != public_key_pem)
                throw VerificationError("key pinning violation for client " +
                                        client_id);
            return it->second;
        }
        ClientRecord rec;
        rec.client_id = client_id;
        rec.public_key_pem = public_key_pem;
        rec.channel = channel;
        rec.first_seen = utc_now_seconds();
        rec.pinned = true;
        records_[client_id] = rec;
        return rec;
    }

    struct Issued {
        SessionGrant grant;
        Bytes session_key;  // server-side plaintext, 32 bytes
    };

    // Fresh random key per epoch; issuing epoch e invalidates every earlier
    // grant for that client. Epochs are strictly increasing per client.
    Issued issue_session_key(const std::string& client_id, std::uint64_t epoch) {
        auto it = records_.find(client_id);
        if (it == records_.end())
            throw ValidationError("unknown client " + client_id);
        auto active = active_.find(client_id);
        if (active != active_.end() && epoch <= active->second.epoch)
            throw ValidationError("epoch must exceed " +
                                  std::to_string(active->second.epoch) +
                                  " for client " + client_id);
        Issued out;
        out.session_key = crypto::random_bytes(kSessionKeyLen);
        out.grant.client_id = client_id;
        out.grant.epoch = epoch;
        out.grant.issued_at = utc_now_seconds();
        out.grant.encrypted_session_key =
            crypto::RsaPublicKey::from_pem(it->second.public_key_pem)
                .encrypt_oaep(out.session_key);
        active_[client_id] = {epoch, out.session_key};
        return out;
    }

    const ClientRecord* lookup(const std::string& client_id) const {
        auto it = records_.find(client_id);
        return it == records_.end() ? nullptr : &it->second;
    }

    const ActiveSession* active_session(const std::string& client_id) const {
        auto it = active_.find(client_id);
        return it == active_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, ClientRecord>& records() const { return records_; }

  private:
    std::map<std::string, ClientRecord> records_;
    std::map<std::string, ActiveSession> active_;
};

inline Bytes redeem_session_key(const tpm::TpmState& device,
                                tpm::PersistentHandle handle,
                                const SessionGrant& grant) {
    Bytes key = device.rsa_decrypt(handle, grant.encrypted_session_key);
    if (key.size() != kSessionKeyLen)
        throw VerificationError("redeemed key has wrong length");
    return key;
}

// ---------------------------------------------------------------------------
// optional wrapper: client public key returned encrypted to the server key
// ---------------------------------------------------------------------------

// Hybrid envelope, since a PEM key exceeds the OAEP bound: an ephemeral
// 32-byte key goes through RSA-OAEP and carries the payload with AES-GCM.
inline Bytes wrap_for_server(const crypto::RsaPublicKey& server_pub,
                             ByteView payload) {
    Bytes ephemeral = crypto::random_bytes(32);
    Bytes nonce = crypto::random_bytes(crypto::kGcmNonceLen);
    crypto::AeadNonce n{};
    std::copy(nonce.begin(), nonce.end(), n.begin());
    auto sealed = crypto::aead_seal(crypto::to_aead_key(ephemeral), n, payload,
                                    to_bytes("provision-wrap"));
    BinaryWriter w;
    w.raw(to_bytes("PWRP"));
    w.blob(server_pub.encrypt_oaep(ephemeral));
    w.blob(nonce);
    w.blob(sealed.ciphertext);
    w.blob(Bytes(sealed.tag.begin(), sealed.tag.end()));
    return w.take();
}

inline Bytes unwrap_for_server(const crypto::RsaPrivateKey& server_key,
                               ByteView wrapped) {
    BinaryReader r(wrapped);
    r.expect_magic("PWRP");
    Bytes wrapped_key = r.blob();
    Bytes nonce = r.blob();
    Bytes ct = r.blob();
    Bytes tag = r.blob();
    r.require_done();
    auto ephemeral = server_key.decrypt_oaep(wrapped_key);
    if (!ephemeral || ephemeral->size() != 32)
        throw VerificationError("provisioning envelope rejected");
    crypto::AeadNonce n{};
    if (nonce.size() != n.size())
        throw VerificationError("provisioning envelope rejected");
    std::copy(nonce.begin(), nonce.end(), n.begin());
    auto plain = crypto::aead_open(crypto::to_aead_key(*ephemeral), n, ct, tag,
                                   to_bytes("provision-wrap"));
    if (!plain) throw VerificationError("provisioning envelope rejected");
    return *plain;
}

// ---------------------------------------------------------------------------
// DCMI asset-tag keystore (legacy comparison)
// ---------------------------------------------------------------------------

struct AssetTagStore {
    Bytes tag;

    void write(ByteView data) {
        if (data.size() > kAssetTagCapacity)
            throw ValidationError("asset tag limited to 63 bytes");
        tag.assign(data.begin(), data.end());
    }

    // Returns exactly min(16, remaining) bytes from `offset`.
    Bytes read(std::size_t offset) const {
        if (offset >= tag.size())
            throw ValidationError("asset tag offset out of range");
        std::size_t n = std::min(kAssetTagChunk, tag.size() - offset);
        return Bytes(tag.begin() + static_cast<long>(offset),
                     tag.begin() + static_cast<long>(offset + n));
    }

    // What a root-privileged actor obtains over IPMI: the whole tag.
    Bytes read_all_chunked() const {
        Bytes out;
        for (std::size_t off = 0; off < tag.size(); off += kAssetTagChunk) {
            Bytes chunk = read(off);
            out.insert(out.end(), chunk.begin(), chunk.end());
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// on-disk formats
// ---------------------------------------------------------------------------

namespace detail {

inline std::string escape_newlines(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\n')
            out += "\\n";
        else
            out.push_back(c);
    }
    return out;
}

inline std::string unescape_newlines(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == 'n') {
            out.push_back('\n');
            ++i;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

}  // namespace detail

// Append-only audit line: id, channel, first-seen, armored key (newlines
// escaped). Replaying the file rebuilds the registry; a later line that
// contradicts a pinned key is a corruption error.
inline void append_registry_record(const std::filesystem::path& path,
                                   const ClientRecord& rec) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to " + path.string());
    out << rec.client_id << '\t' << channel_name(rec.channel) << '\t'
        << rec.first_seen << '\t' << detail::escape_newlines(rec.public_key_pem)
        << '\n';
}

inline ClientRegistry load_registry(const std::filesystem::path& path) {
    ClientRegistry reg;
    if (!std::filesystem::exists(path)) return reg;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (int i = 0; i < 3; ++i) {
            std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) throw ParseError("corrupt registry line");
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        fields.push_back(line.substr(start));
        reg.provision_client(fields[0], detail::unescape_newlines(fields[3]),
                             channel_from_name(fields[1]));
    }
    return reg;
}

}  // namespace trustchain::prov
