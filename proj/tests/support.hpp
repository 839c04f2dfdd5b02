#pragma once

#include "mia/digest.hpp"
#include "mia/embedding.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

namespace testing {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("mia-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_all(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

inline std::vector<double> random_unit_d(std::mt19937_64& rng, std::size_t d) {
    std::vector<double> v(d);
    double n = 0.0;
    do {
        n = 0.0;
        for (auto& x : v) {
            x = mia::standard_normal(rng);
            n += x * x;
        }
    } while (n < 1e-12);
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

inline mia::EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t d) {
    const auto v = random_unit_d(rng, d);
    return mia::normalize(std::span<const double>(v));
}

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

// Runs MIA_BIN with a shell-quoted argument string; captures both streams.
inline RunResult run_cli(const std::string& args, const std::filesystem::path& capture) {
    const std::string cmd = std::string("'") + MIA_BIN + "' " + args + " > '" + capture.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read_all(capture);
    return r;
}

}  // namespace testing
