#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "defo/encoders/encoder.hpp"

namespace defo::testing {

/// Deterministic pattern image used by golden and determinism checks.
inline Tensor pattern_image(const EncoderConfig& c, int variant = 0) {
  Tensor img({c.image_width, c.image_height, 3});
  for (std::size_t x = 0; x < c.image_width; ++x)
    for (std::size_t y = 0; y < c.image_height; ++y)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const auto v = (x * 7 + y * 13 + ch * 29 + static_cast<std::size_t>(variant) * 5) % 32;
        img[(x * c.image_height + y) * 3 + ch] = static_cast<double>(v) / 31.0;
      }
  return img;
}

inline Tensor random_image(const EncoderConfig& c, Rng& rng) {
  Tensor img({c.image_width, c.image_height, 3});
  for (auto& v : img.values()) v = rng.uniform();
  return img;
}

/// Small geometry so gradient checks stay fast.
inline EncoderConfig small_config() {
  EncoderConfig c;
  c.image_width = c.image_height = 8;
  c.patch_size = 4;
  c.latent_dim = 12;
  c.embed_dim = 8;
  c.text_len = 6;
  c.depth_v = c.depth_t = 1;
  c.heads = 2;
  c.vocab_size = 300;
  return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("defo_test_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace defo::testing
