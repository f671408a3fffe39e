#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "attncap/rng.hpp"
#include "attncap/tensor.hpp"

namespace testing_support {

inline attncap::Tensor random_tensor(attncap::Shape shape, attncap::Rng& rng, bool requires_grad = true,
                                     double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(attncap::numel(shape));
    for (auto& x : v) {
        x = rng.uniform(lo, hi);
    }
    return attncap::Tensor(std::move(shape), std::move(v), requires_grad);
}

// Random shape of the given rank with extents in [1, max_dim].
inline attncap::Shape random_shape(attncap::Rng& rng, std::size_t rank, std::size_t max_dim = 6) {
    attncap::Shape s(rank);
    for (auto& d : s) {
        d = 1 + static_cast<std::size_t>(rng.below(max_dim));
    }
    return s;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("attncap_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
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

} // namespace testing_support
