#pragma once

#include "ensel/error.hpp"
#include "ensel/imaging.hpp"
#include "ensel/rng.hpp"
#include "ensel/tensor.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace testutil {

// Error code thrown by fn, or nullopt when it returns normally or throws
// something that is not an ensel::Error.
template <typename F>
std::optional<ensel::Errc> error_code(F&& fn) {
    try {
        fn();
    } catch (const ensel::Error& e) {
        return e.code();
    } catch (...) {
    }
    return std::nullopt;
}

inline ensel::Tensor random_tensor(const ensel::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    ensel::SplitMix64 rng(seed);
    ensel::Tensor t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline ensel::ImageU8 random_image(int h, int w, std::uint64_t seed) {
    ensel::SplitMix64 rng(seed);
    ensel::ImageU8 img(h, w);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return img;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        ensel::SplitMix64 rng(reinterpret_cast<std::uintptr_t>(this) ^ static_cast<std::uint64_t>(::time(nullptr)));
        path_ = std::filesystem::temp_directory_path() / ("ensel-" + tag + "-" + std::to_string(rng.next() % 1000000007ULL));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::string str(const std::string& leaf = {}) const { return leaf.empty() ? path_.string() : (path_ / leaf).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
