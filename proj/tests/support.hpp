#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "detox/text.hpp"

namespace detox::test {

inline std::shared_ptr<const Vocabulary> vocab_of(const std::vector<std::string>& words) { return std::make_shared<const Vocabulary>(words); }

/// Random probability vector of length n with strictly positive entries.
inline std::vector<double> random_probs(std::size_t n, std::mt19937_64& rng) {
    std::gamma_distribution<double> g(1.0);
    std::vector<double> p(n);
    double s = 0;
    for (auto& x : p) s += (x = g(rng) + 1e-3);
    for (auto& x : p) x /= s;
    return p;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("detox-" + tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

} // namespace detox::test
