#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mh/imaging.hpp"

namespace mh::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> n{0};
        path_ = std::filesystem::temp_directory_path() /
                ("mh-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
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
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline std::filesystem::path data_dir() { return MH_TEST_DATA_DIR; }

inline std::string random_word(std::mt19937_64& rng, int min_len = 1, int max_len = 9) {
    static const char letters[] = "abcdefghijklmnopqrstuvwxyz";
    std::uniform_int_distribution<int> len(min_len, max_len), ch(0, 25);
    std::string w;
    for (int i = len(rng); i > 0; --i) w += letters[ch(rng)];
    return w;
}

}  // namespace mh::test
