#include "mia/digest.hpp"

#include "mia/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <limits>
#include <fstream>
#include <memory>
#include <numbers>

namespace mia {

namespace {

using Sha256 = std::array<unsigned char, 32>;

class Hasher {
public:
    Hasher() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            fail(ErrorCode::invariant_violation, "sha256 init failed");
        }
    }

    void update(const void* data, std::size_t size) {
        EVP_DigestUpdate(ctx_.get(), data, size);
    }

    Sha256 finish() {
        Sha256 out{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), out.data(), &len);
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string to_hex(const Sha256& d) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (unsigned char c : d) {
        s.push_back(kHex[c >> 4]);
        s.push_back(kHex[c & 0xf]);
    }
    return s;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    Hasher h;
    h.update(bytes.data(), bytes.size());
    return to_hex(h.finish());
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
    Hasher h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return to_hex(h.finish());
}

std::uint64_t digest64(std::string_view bytes) {
    Hasher h;
    h.update(bytes.data(), bytes.size());
    auto d = h.finish();
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
    return v;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    std::string buf(8, '\0');
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((seed >> (8 * i)) & 0xff);
    buf.append(label);
    return digest64(buf);
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) fail(ErrorCode::invalid_argument, "uniform_index over empty range");
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
    double u1;
    do {
        u1 = uniform_unit(rng);
    } while (u1 <= 0.0);
    double u2 = uniform_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mia
