#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "zfn/rng.hpp"
#include "zfn/tensor.hpp"

namespace zfn::testutil {

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        const auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; ++i) {
            auto candidate =
                base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directories(candidate, ec)) {
                path = candidate;
                break;
            }
        }
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }

    std::string str(const std::string& rel = "") const {
        return rel.empty() ? path.string() : (path / rel).string();
    }
};

inline ImageTensor random_image(int height, int width, int channels, std::uint64_t seed) {
    ImageTensor t = make_tensor(height, width, channels);
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return t;
}

inline ImageTensor checkerboard(int size, int block) {
    ImageTensor t = make_tensor(size, size, 1);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            t.at(r, c) = ((r / block + c / block) % 2 == 0) ? 0.0f : 1.0f;
        }
    }
    return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = 0.0,
                                         double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace zfn::testutil
