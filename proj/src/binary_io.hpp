#pragma once

// Little-endian encoding helpers shared by the DDPK/DVOL/DMSK codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "deepdose/error.hpp"

namespace deepdose::detail {

class ByteWriter {
public:
    void raw(std::string_view bytes) { out_.append(bytes); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    std::string take() { return std::move(out_); }

private:
    void put(std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
    }
    std::string out_;
};

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::string_view raw(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    void expect_end() const {
        if (remaining() != 0) throw FormatError(what_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
    }
    std::uint64_t get(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::string read_file(const std::string& path);
// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace deepdose::detail
