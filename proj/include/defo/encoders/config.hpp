#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace defo {

/// Geometry of the toy dual encoder. Both towers run at width `embed_dim`.
struct EncoderConfig {
  std::size_t image_width = 32;
  std::size_t image_height = 32;
  std::size_t patch_size = 8;
  std::size_t latent_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t text_len = 16;
  std::size_t depth_v = 2;
  std::size_t depth_t = 2;
  std::size_t heads = 4;
  std::size_t vocab_size = 512;

  std::size_t patches() const {
    return (image_width / patch_size) * (image_height / patch_size);
  }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t mlp_dim() const { return 2 * embed_dim; }
  std::size_t image_values() const { return image_width * image_height * 3; }

  /// Every violated constraint, empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    const std::pair<const char*, std::size_t> fields[] = {
        {"image_width", image_width}, {"image_height", image_height}, {"patch_size", patch_size},
        {"latent_dim", latent_dim},   {"embed_dim", embed_dim},       {"text_len", text_len},
        {"depth_v", depth_v},         {"depth_t", depth_t},           {"heads", heads},
        {"vocab_size", vocab_size}};
    for (const auto& [name, v] : fields) {
      if (v == 0) out.push_back(std::string("encoder.") + name + " must be positive");
    }
    if (patch_size && (image_width % patch_size || image_height % patch_size)) {
      out.push_back("encoder.patch_size must divide image_width and image_height");
    }
    if (heads && embed_dim % heads) out.push_back("encoder.heads must divide embed_dim");
    if (embed_dim == 1) out.push_back("encoder.embed_dim must be at least 2 for layer norm");
    if (vocab_size && vocab_size < 3) {
      out.push_back("encoder.vocab_size must leave room beyond the two reserved rows");
    }
    return out;
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

}  // namespace defo
