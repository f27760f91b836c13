#pragma once

// dnbd3-like read-only block service with per-block authenticated encryption
// under the session key. Nonces derive deterministically from
// (image_id, block index, epoch) so a block re-encrypted within one epoch is
// byte-identical, dm-crypt style, while the same data at another index or
// epoch never reuses a nonce. The associated data binds the same triple,
// which is what defeats block swapping and epoch replay.
//
// Wire format (docs/wire.md): 4-byte big-endian length prefix per frame;
// request DNB1 | image_id(16) | index(8) | epoch(8); the reply mirrors it
// with a status byte, ciphertext and 16-byte tag.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/errors.hpp"

namespace trustchain::nbd {

constexpr std::size_t kDefaultBlockSize = 4096;

// ---------------------------------------------------------------------------
// image store
// ---------------------------------------------------------------------------

struct ImageStore {
    crypto::Guid image_id;
    std::size_t block_size = kDefaultBlockSize;
    Bytes data;  // zero-padded to a whole number of blocks

    static ImageStore from_bytes(ByteView content, crypto::Guid id,
                                 std::size_t block_size = kDefaultBlockSize) {
        if (block_size == 0) throw ValidationError("block size must be positive");
        ImageStore s;
        s.image_id = id;
        s.block_size = block_size;
        s.data.assign(content.begin(), content.end());
        std::size_t rem = s.data.size() % block_size;
        if (rem != 0) s.data.resize(s.data.size() + (block_size - rem), 0);
        if (s.data.empty()) s.data.resize(block_size, 0);
        return s;
    }

    std::size_t block_count() const { return data.size() / block_size; }

    ByteView block(std::size_t index) const {
        if (index >= block_count())
            throw ValidationError("block index out of range");
        return ByteView(data).subspan(index * block_size, block_size);
    }
};

// ---------------------------------------------------------------------------
// per-session encryption
// ---------------------------------------------------------------------------

struct SessionContext {
    crypto::AeadKey session_key{};
    crypto::Guid image_id;
    std::uint64_t epoch = 0;
};

struct BlockReply {
    std::uint64_t index = 0;
    std::uint64_t epoch = 0;
    Bytes ciphertext;
    Bytes auth_tag;
};

namespace detail {

inline Bytes block_binding(const crypto::Guid& image_id, std::uint64_t index,
                           std::uint64_t epoch) {
    BinaryWriter w;
    w.raw(image_id.bytes);
    w.u64(index);
    w.u64(epoch);
    return w.take();
}

inline crypto::AeadNonce block_nonce(const crypto::Guid& image_id,
                                     std::uint64_t index, std::uint64_t epoch) {
    crypto::Digest d = crypto::sha256(block_binding(image_id, index, epoch));
    crypto::AeadNonce n{};
    std::copy(d.begin(), d.begin() + n.size(), n.begin());
    return n;
}

}  // namespace detail

inline BlockReply encrypt_block(const SessionContext& ctx, std::uint64_t index,
                                ByteView plaintext,
                                std::size_t block_size = kDefaultBlockSize) {
    if (plaintext.size() != block_size)
        throw ValidationError("plaintext must be exactly one block of " +
                              std::to_string(block_size) + " bytes");
    auto sealed = crypto::aead_seal(
        ctx.session_key, detail::block_nonce(ctx.image_id, index, ctx.epoch),
        plaintext, detail::block_binding(ctx.image_id, index, ctx.epoch));
    BlockReply r;
    r.index = index;
    r.epoch = ctx.epoch;
    r.ciphertext = std::move(sealed.ciphertext);
    r.auth_tag.assign(sealed.tag.begin(), sealed.tag.end());
    return r;
}

// The client decrypts with its own epoch expectation; a reply minted for a
// different epoch therefore fails authentication even if its epoch field
// claims otherwise.
inline Bytes decrypt_block(const SessionContext& ctx, const BlockReply& reply) {
    auto plain = crypto::aead_open(
        ctx.session_key,
        detail::block_nonce(ctx.image_id, reply.index, ctx.epoch),
        reply.ciphertext, reply.auth_tag,
        detail::block_binding(ctx.image_id, reply.index, ctx.epoch));
    if (!plain)
        throw VerificationError("block integrity failure at index " +
                                std::to_string(reply.index));
    return *plain;
}

// ---------------------------------------------------------------------------
// wire protocol
// ---------------------------------------------------------------------------

enum class WireStatus : std::uint8_t {
    Ok = 0,
    UnknownImage = 1,
    UnknownEpoch = 2,
    BadRequest = 3,
    BadIndex = 4,
};

struct WireRequest {
    crypto::Guid image_id;
    std::uint64_t index = 0;
    std::uint64_t epoch = 0;

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_bytes("DNB1"));
        w.raw(image_id.bytes);
        w.u64(index);
        w.u64(epoch);
        return w.take();
    }

    static WireRequest decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("DNB1");
        WireRequest q;
        Bytes id = r.raw(16);
        std::copy(id.begin(), id.end(), q.image_id.bytes.begin());
        q.index = r.u64();
        q.epoch = r.u64();
        r.require_done();
        return q;
    }
};

struct WireReply {
    WireStatus status = WireStatus::Ok;
    crypto::Guid image_id;
    std::uint64_t index = 0;
    std::uint64_t epoch = 0;
    Bytes ciphertext;
    Bytes auth_tag;  // empty on error or in plaintext mode

    Bytes encode() const {
        BinaryWriter w;
        w.raw(to_bytes("DNB1"));
        w.u8(static_cast<std::uint8_t>(status));
        w.raw(image_id.bytes);
        w.u64(index);
        w.u64(epoch);
        w.blob(ciphertext);
        w.blob(auth_tag);
        return w.take();
    }

    static WireReply decode(ByteView data) {
        BinaryReader r(data);
        r.expect_magic("DNB1");
        WireReply p;
        p.status = static_cast<WireStatus>(r.u8());
        Bytes id = r.raw(16);
        std::copy(id.begin(), id.end(), p.image_id.bytes.begin());
        p.index = r.u64();
        p.epoch = r.u64();
        p.ciphertext = r.blob();
        p.auth_tag = r.blob();
        r.require_done();
        return p;
    }
};

// epoch -> active session key; the epoch selects the session on the wire
using SessionTable = std::map<std::uint64_t, crypto::AeadKey>;

// Pure request handler shared by the TCP server and in-process channels.
// With `encrypted` false the reply carries the raw block (the legacy mode
// the eavesdropper reads); the server never sends plaintext otherwise.
inline Bytes serve_request(const ImageStore& store, const SessionTable& sessions,
                           ByteView request_bytes, bool encrypted = true) {
    WireReply reply;
    WireRequest req;
    try {
        req = WireRequest::decode(request_bytes);
    } catch (const Error&) {
        reply.status = WireStatus::BadRequest;
        return reply.encode();
    }
    reply.image_id = req.image_id;
    reply.index = req.index;
    reply.epoch = req.epoch;
    if (req.image_id != store.image_id) {
        reply.status = WireStatus::UnknownImage;
        return reply.encode();
    }
    if (req.index >= store.block_count()) {
        reply.status = WireStatus::BadIndex;
        return reply.encode();
    }
    if (!encrypted) {
        reply.ciphertext = Bytes(store.block(req.index).begin(),
                                 store.block(req.index).end());
        return reply.encode();
    }
    auto session = sessions.find(req.epoch);
    if (session == sessions.end()) {
        reply.status = WireStatus::UnknownEpoch;
        return reply.encode();
    }
    SessionContext ctx{session->second, store.image_id, req.epoch};
    BlockReply enc =
        encrypt_block(ctx, req.index, store.block(req.index), store.block_size);
    reply.ciphertext = std::move(enc.ciphertext);
    reply.auth_tag = std::move(enc.auth_tag);
    return reply.encode();
}

// ---------------------------------------------------------------------------
// channels (transport + attack injection points)
// ---------------------------------------------------------------------------

class Channel {
  public:
    virtual ~Channel() = default;
    virtual Bytes roundtrip(ByteView request_payload) = 0;
};

class InProcessChannel : public Channel {
  public:
    using Handler = std::function<Bytes(ByteView)>;
    explicit InProcessChannel(Handler handler) : handler_(std::move(handler)) {}
    Bytes roundtrip(ByteView request) override { return handler_(request); }

  private:
    Handler handler_;
};

enum class AttackKind { TamperByte, SwapIndex, ReplayEpoch, Eavesdrop };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::TamperByte: return "tamper-byte";
        case AttackKind::SwapIndex: return "swap-index";
        case AttackKind::ReplayEpoch: return "replay-epoch";
        case AttackKind::Eavesdrop: return "eavesdrop";
    }
    return "?";
}

// Man-in-the-middle wrapper. Eavesdrop records without modifying; the other
// kinds mutate replies per their parameters.
class AttackChannel : public Channel {
  public:
    AttackChannel(Channel& inner, AttackKind kind) : inner_(inner), kind_(kind) {}

    // SwapIndex: replies for these two indices are swapped in flight.
    void set_swap_pair(std::uint64_t a, std::uint64_t b) {
        swap_a_ = a;
        swap_b_ = b;
    }

    // ReplayEpoch: substitute this previously captured reply.
    void set_replayed_reply(Bytes reply) { replayed_ = std::move(reply); }

    Bytes roundtrip(ByteView request) override {
        transcript_.push_back(Bytes(request.begin(), request.end()));
        Bytes reply;
        switch (kind_) {
            case AttackKind::Eavesdrop:
                reply = inner_.roundtrip(request);
                break;
            case AttackKind::TamperByte: {
                reply = inner_.roundtrip(request);
                if (!tampered_ && !reply.empty()) {
                    reply[reply.size() / 2] ^= 0x01;
                    tampered_ = true;
                }
                break;
            }
            case AttackKind::SwapIndex: {
                WireRequest req = WireRequest::decode(request);
                if (req.index == swap_a_ || req.index == swap_b_) {
                    WireRequest other = req;
                    other.index = req.index == swap_a_ ? swap_b_ : swap_a_;
                    reply = inner_.roundtrip(other.encode());
                } else {
                    reply = inner_.roundtrip(request);
                }
                break;
            }
            case AttackKind::ReplayEpoch: {
                reply = replayed_.empty() ? inner_.roundtrip(request) : replayed_;
                break;
            }
        }
        transcript_.push_back(reply);
        return reply;
    }

    const std::vector<Bytes>& transcript() const { return transcript_; }

  private:
    Channel& inner_;
    AttackKind kind_;
    std::uint64_t swap_a_ = 0, swap_b_ = 0;
    Bytes replayed_;
    bool tampered_ = false;
    std::vector<Bytes> transcript_;
};

// Client fetch: enforces the epoch it negotiated and the index it asked for,
// then authenticates the block itself.
inline Bytes fetch_block(const SessionContext& ctx, Channel& channel,
                         std::uint64_t index) {
    WireRequest req{ctx.image_id, index, ctx.epoch};
    Bytes raw = channel.roundtrip(req.encode());
    WireReply reply = WireReply::decode(raw);
    if (reply.status != WireStatus::Ok)
        throw VerificationError("server refused block " + std::to_string(index) +
                                " (status " +
                                std::to_string(static_cast<int>(reply.status)) + ")");
    if (!(reply.image_id == ctx.image_id) || reply.index != index)
        throw VerificationError("block integrity failure at index " +
                                std::to_string(index));
    BlockReply block{reply.index, reply.epoch, reply.ciphertext, reply.auth_tag};
    return decrypt_block(ctx, block);
}

// Legacy unencrypted fetch; no integrity or confidentiality whatsoever.
inline Bytes fetch_block_plain(const crypto::Guid& image_id, Channel& channel,
                               std::uint64_t index) {
    WireRequest req{image_id, index, 0};
    WireReply reply = WireReply::decode(channel.roundtrip(req.encode()));
    if (reply.status != WireStatus::Ok)
        throw VerificationError("server refused block " + std::to_string(index));
    return reply.ciphertext;
}

// ---------------------------------------------------------------------------
// TCP transport
// ---------------------------------------------------------------------------

namespace detail {

inline void send_all(int fd, ByteView data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, 0);
        if (n <= 0) throw IoError("socket send failed");
        sent += static_cast<std::size_t>(n);
    }
}

inline bool recv_exact(int fd, std::uint8_t* out, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
        ssize_t n = ::recv(fd, out + got, len - got, 0);
        if (n <= 0) return false;
        got += static_cast<std::size_t>(n);
    }
    return true;
}

inline void send_frame(int fd, ByteView payload) {
    BinaryWriter w;
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.raw(payload);
    send_all(fd, w.bytes());
}

inline std::optional<Bytes> recv_frame(int fd) {
    std::uint8_t len_buf[4];
    if (!recv_exact(fd, len_buf, 4)) return std::nullopt;
    std::uint32_t len = static_cast<std::uint32_t>(len_buf[0]) << 24 |
                        static_cast<std::uint32_t>(len_buf[1]) << 16 |
                        static_cast<std::uint32_t>(len_buf[2]) << 8 |
                        static_cast<std::uint32_t>(len_buf[3]);
    if (len > 64 * 1024 * 1024) return std::nullopt;
    Bytes payload(len);
    if (!recv_exact(fd, payload.data(), len)) return std::nullopt;
    return payload;
}

}  // namespace detail

// Serves one immutable image to many concurrent connections; one thread per
// connection, per-connection state is nothing but the socket.
class BlockServer {
  public:
    BlockServer(ImageStore store, SessionTable sessions, bool encrypted = true)
        : store_(std::move(store)), sessions_(std::move(sessions)),
          encrypted_(encrypted) {}

    ~BlockServer() { stop(); }

    // Binds and starts the accept loop; port 0 picks a free port.
    std::uint16_t start(const std::string& host = "127.0.0.1",
                        std::uint16_t port = 0) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw IoError("cannot create socket");
        int on = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &on, sizeof(on));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
            throw ValidationError("bad listen address " + host);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
            throw IoError("cannot bind " + host + ":" + std::to_string(port));
        if (::listen(listen_fd_, 16) < 0) throw IoError("listen failed");
        socklen_t alen = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
        port_ = ntohs(addr.sin_port);
        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
        return port_;
    }

    std::uint16_t port() const { return port_; }

    void stop() {
        if (!running_.exchange(false)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (accept_thread_.joinable()) accept_thread_.join();
        for (auto& t : workers_)
            if (t.joinable()) t.join();
        workers_.clear();
    }

  private:
    void accept_loop() {
        while (running_) {
            int client = ::accept(listen_fd_, nullptr, nullptr);
            if (client < 0) break;
            workers_.emplace_back([this, client] {
                while (auto request = detail::recv_frame(client)) {
                    Bytes reply =
                        serve_request(store_, sessions_, *request, encrypted_);
                    try {
                        detail::send_frame(client, reply);
                    } catch (const IoError&) {
                        break;
                    }
                }
                ::close(client);
            });
        }
    }

    ImageStore store_;
    SessionTable sessions_;
    bool encrypted_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::vector<std::thread> workers_;
};

class TcpChannel : public Channel {
  public:
    TcpChannel(const std::string& host, std::uint16_t port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw IoError("cannot create socket");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
            throw ValidationError("bad address " + host);
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
            throw IoError("cannot connect to " + host + ":" + std::to_string(port));
    }

    ~TcpChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    Bytes roundtrip(ByteView request) override {
        detail::send_frame(fd_, request);
        auto reply = detail::recv_frame(fd_);
        if (!reply) throw IoError("connection closed mid-request");
        return *reply;
    }

  private:
    int fd_ = -1;
};

inline std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& ep) {
    std::size_t colon = ep.rfind(':');
    if (colon == std::string::npos)
        throw ValidationError("endpoint must be host:port");
    return {ep.substr(0, colon),
            static_cast<std::uint16_t>(std::stoul(ep.substr(colon + 1)))};
}

}  // namespace trustchain::nbd
