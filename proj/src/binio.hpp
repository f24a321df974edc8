#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mates/error.hpp"

namespace mates::binio {

// Little-endian encoding regardless of host order; files are tiny relative to
// memory, so whole-buffer reads and writes keep the error handling simple.

struct Writer {
    std::vector<unsigned char> buf;

    void u8(std::uint8_t x) { buf.push_back(x); }
    void u32(std::uint32_t x) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(x >> (8 * i)));
    }
    void u64(std::uint64_t x) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(x >> (8 * i)));
    }
    void i64(std::int64_t x) { u64(static_cast<std::uint64_t>(x)); }
    void f64(double x) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        u64(bits);
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        buf.insert(buf.end(), p, p + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void doubles(const std::vector<double>& xs) {
        for (double x : xs) f64(x);
    }
};

struct Reader {
    std::vector<unsigned char> data;
    std::size_t pos = 0;
    std::string context;

    void need(std::size_t n) const {
        if (pos + n > data.size())
            throw ParseError(context + ": truncated at byte " + std::to_string(pos) + ", need " +
                             std::to_string(n) + " more of " + std::to_string(data.size()));
    }
    std::uint8_t u8() {
        need(1);
        return data[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(data[pos++]) << (8 * i);
        return x;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(data[pos++]) << (8 * i);
        return x;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() {
        const std::uint64_t bits = u64();
        double x;
        std::memcpy(&x, &bits, sizeof(x));
        return x;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data.data() + pos), n);
        pos += n;
        return s;
    }
    void doubles(std::vector<double>& out, std::size_t n) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = f64();
    }
    void expect_end() const {
        if (pos != data.size())
            throw ParseError(context + ": " + std::to_string(data.size() - pos) +
                             " trailing bytes after payload");
    }
};

inline void write_file(const std::string& path, const Writer& w) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(w.buf.data()),
              static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw IOError("write failed for '" + path + "'");
}

inline Reader read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IOError("cannot open '" + path + "' for reading");
    const std::streamsize size = in.tellg();
    in.seekg(0);
    Reader r;
    r.context = path;
    r.data.resize(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(r.data.data()), size);
    if (!in) throw IOError("read failed for '" + path + "'");
    return r;
}

}  // namespace mates::binio
