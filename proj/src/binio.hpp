#pragma once

// Little-endian byte helpers shared by the binary artifact formats.

#include "mia/error.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>

namespace mia::detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    Reader(std::string data, std::string where) : data_(std::move(data)), where_(std::move(where)) {}

    void need(std::size_t n) const {
        if (n > data_.size() - pos_) fail(ErrorCode::schema_mismatch, where_ + ": truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() { return bytes(u32()); }
    bool done() const { return pos_ == data_.size(); }
    const std::string& where() const { return where_; }

private:
    std::string data_;
    std::string where_;
    std::size_t pos_ = 0;
};

// Missing file -> upstream_missing naming `what`.
std::string read_file(const std::filesystem::path& path, const std::string& what);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace mia::detail
