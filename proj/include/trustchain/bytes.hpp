#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trustchain/errors.hpp"

namespace trustchain {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::uint64_t utc_now_seconds() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
}

inline std::string to_string(ByteView b) {
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

inline Bytes concat(std::initializer_list<ByteView> parts) {
    Bytes out;
    std::size_t total = 0;
    for (auto p : parts) total += p.size();
    out.reserve(total);
    for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

// ---------------------------------------------------------------------------
// hex
// ---------------------------------------------------------------------------

inline std::string to_hex(ByteView data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

inline Bytes from_hex(std::string_view hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (hex.size() % 2 != 0) throw ParseError("hex string has odd length");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) throw ParseError("invalid hex digit");
        out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return out;
}

// ---------------------------------------------------------------------------
// base64 (standard alphabet, '=' padding)
// ---------------------------------------------------------------------------

inline std::string to_base64(ByteView data) {
    static const char* tbl =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        std::uint32_t v = data[i] << 16 | data[i + 1] << 8 | data[i + 2];
        out.push_back(tbl[v >> 18 & 0x3F]);
        out.push_back(tbl[v >> 12 & 0x3F]);
        out.push_back(tbl[v >> 6 & 0x3F]);
        out.push_back(tbl[v & 0x3F]);
    }
    if (i + 1 == data.size()) {
        std::uint32_t v = data[i] << 16;
        out.push_back(tbl[v >> 18 & 0x3F]);
        out.push_back(tbl[v >> 12 & 0x3F]);
        out += "==";
    } else if (i + 2 == data.size()) {
        std::uint32_t v = data[i] << 16 | data[i + 1] << 8;
        out.push_back(tbl[v >> 18 & 0x3F]);
        out.push_back(tbl[v >> 12 & 0x3F]);
        out.push_back(tbl[v >> 6 & 0x3F]);
        out.push_back('=');
    }
    return out;
}

inline Bytes from_base64(std::string_view text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    Bytes out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == ' ' || c == '\t') continue;
        if (c == '=') break;
        int v = val(c);
        if (v < 0) throw ParseError("invalid base64 character");
        acc = acc << 6 | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>(acc >> bits & 0xFF));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// armored text blocks: -----BEGIN <label>----- / base64 / -----END <label>-----
// ---------------------------------------------------------------------------

inline std::string armor(std::string_view label, ByteView data) {
    std::string b64 = to_base64(data);
    std::string out = "-----BEGIN " + std::string(label) + "-----\n";
    for (std::size_t i = 0; i < b64.size(); i += 64) {
        out += b64.substr(i, 64);
        out += '\n';
    }
    out += "-----END " + std::string(label) + "-----\n";
    return out;
}

inline Bytes dearmor(std::string_view label, std::string_view text) {
    std::string begin = "-----BEGIN " + std::string(label) + "-----";
    std::string end = "-----END " + std::string(label) + "-----";
    auto b = text.find(begin);
    auto e = text.find(end);
    if (b == std::string_view::npos || e == std::string_view::npos || e < b)
        throw ParseError("missing armor markers for " + std::string(label));
    return from_base64(text.substr(b + begin.size(), e - b - begin.size()));
}

// ---------------------------------------------------------------------------
// big-endian binary serialization
// ---------------------------------------------------------------------------

class BinaryWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        buf_.push_back(static_cast<std::uint8_t>(v >> 8));
        buf_.push_back(static_cast<std::uint8_t>(v));
    }
    void u32(std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8)
            buf_.push_back(static_cast<std::uint8_t>(v >> s));
    }
    void u64(std::uint64_t v) {
        for (int s = 56; s >= 0; s -= 8)
            buf_.push_back(static_cast<std::uint8_t>(v >> s));
    }
    void raw(ByteView data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
    // u32 length prefix followed by the bytes
    void blob(ByteView data) {
        u32(static_cast<std::uint32_t>(data.size()));
        raw(data);
    }
    void str(std::string_view s) {
        blob(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    }
    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

  private:
    Bytes buf_;
};

class BinaryReader {
  public:
    explicit BinaryReader(ByteView data) : data_(data) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() {
        auto b = take(2);
        return static_cast<std::uint16_t>(b[0] << 8 | b[1]);
    }
    std::uint32_t u32() {
        auto b = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | b[i];
        return v;
    }
    std::uint64_t u64() {
        auto b = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = v << 8 | b[i];
        return v;
    }
    Bytes raw(std::size_t n) {
        auto b = take(n);
        return Bytes(b.begin(), b.end());
    }
    Bytes blob() { return raw(u32()); }
    std::string str() {
        Bytes b = blob();
        return std::string(b.begin(), b.end());
    }
    void expect_magic(std::string_view magic) {
        auto b = take(magic.size());
        if (std::memcmp(b.data(), magic.data(), magic.size()) != 0)
            throw ParseError("bad magic, expected " + std::string(magic));
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    Bytes rest() { return raw(remaining()); }
    bool done() const { return pos_ == data_.size(); }
    void require_done() const {
        if (!done()) throw ParseError("trailing bytes after structure");
    }

  private:
    ByteView take(std::size_t n) {
        if (pos_ + n > data_.size()) throw ParseError("truncated structure");
        ByteView v = data_.subspan(pos_, n);
        pos_ += n;
        return v;
    }
    ByteView data_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// file helpers
// ---------------------------------------------------------------------------

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    return Bytes(s.begin(), s.end());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    Bytes b = read_file(path);
    return std::string(b.begin(), b.end());
}

inline void write_file(const std::filesystem::path& path, ByteView data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()),
                              text.size()));
}

}  // namespace trustchain
