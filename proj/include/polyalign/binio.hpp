#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "error.hpp"

namespace polyalign::binio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

/// Appends little-endian scalars to a byte buffer.
class Writer {
public:
    template <typename T>
    void put(T v) {
        v = to_little(v);
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }

    const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError(FormatErrorKind::io, "cannot open '" + path + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw FormatError(FormatErrorKind::io, "write failed for '" + path + "'");
    }

private:
    std::vector<unsigned char> bytes_;
};

/// Bounds-checked little-endian reader; running past the end raises a
/// truncation error.
class Reader {
public:
    explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

    static Reader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError(FormatErrorKind::io, "cannot open '" + path + "' for reading");
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (in.bad()) throw FormatError(FormatErrorKind::io, "read failed for '" + path + "'");
        return Reader(std::move(bytes));
    }

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void get_bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(FormatErrorKind::truncated, "file truncated: needed " + std::to_string(n) +
                                                              " bytes at offset " + std::to_string(pos_));
        }
    }

    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

} // namespace polyalign::binio
