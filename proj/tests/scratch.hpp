#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>

#include "nlbayes/model_io.hpp"

namespace nlb::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("nlb_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

/// Small augmented FC prior mapping R^latent x R to `pixels` values.
inline void write_small_prior(const std::filesystem::path& path, Index pixels, Index latent = 6,
                              double cap = 0.5, std::uint64_t seed = 3) {
  const auto g = GeneratorBuilder({latent}, seed)
                     .fully_connected(24)
                     .leaky_relu()
                     .fully_connected(pixels, 1.0, -1.0)
                     .sigmoid()
                     .build();
  save_model(g, cap, path);
}

/// The MNIST generator layout (100 -> 128 -> 256 -> 512 -> 1024 -> 784) with
/// seeded random weights; the output bias makes images mostly dark.
inline GeneratorModel mnist_like_generator(std::uint64_t seed) {
  return GeneratorBuilder({100}, seed)
      .fully_connected(128)
      .leaky_relu()
      .fully_connected(256)
      .batch_norm()
      .leaky_relu()
      .fully_connected(512)
      .batch_norm()
      .leaky_relu()
      .fully_connected(1024)
      .batch_norm()
      .leaky_relu()
      .fully_connected(784, 1.0, -3.0)
      .sigmoid()
      .build();
}

}  // namespace nlb::testing
