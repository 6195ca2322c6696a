#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "defo/encoders/tokenizer.hpp"
#include "defo/numcore/ops.hpp"

namespace defo {

/// Encoder weights bound to one tape.
struct EncoderVars {
  EncoderConfig config;
  std::map<std::string, Var> weights;
  Var vocab;

  Var operator[](const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end()) throw dimension_error("unbound encoder weight '" + name + "'");
    return it->second;
  }
};

/// Read-only binding; no gradient can reach the pack.
inline EncoderVars bind_frozen(Tape& tape, const EncoderPack& pack) {
  EncoderVars v{pack.config, {}, tape.constant_ref(pack.vocab_table)};
  pack.for_each_weight([&](const std::string& n, const Tensor& t) {
    if (n != "vocab_table") v.weights.emplace(n, tape.constant_ref(t));
  });
  return v;
}

/// Binding whose leaves follow each tensor's requires_grad flag (pretraining only).
inline EncoderVars bind_trainable(Tape& tape, EncoderPack& pack) {
  EncoderVars v{pack.config, {}, tape.leaf(pack.vocab_table)};
  for (auto& [n, t] : pack.vision_weights) v.weights.emplace(n, tape.leaf(t));
  for (auto& [n, t] : pack.text_weights) v.weights.emplace(n, tape.leaf(t));
  return v;
}

namespace detail {

/// Pre-LN block: x + Attn(LN(x)), then + MLP(LN(·)).
inline Var transformer_block(const EncoderVars& w, const std::string& p, Var x,
                             std::size_t seq_len) {
  Var h = layer_norm(x, w[p + "ln1.g"], w[p + "ln1.b"]);
  Var a = attention(matmul(h, w[p + "attn.wq"]), matmul(h, w[p + "attn.wk"]),
                    matmul(h, w[p + "attn.wv"]), w.config.heads, seq_len);
  x = add(x, matmul(a, w[p + "attn.wo"]));
  h = layer_norm(x, w[p + "ln2.g"], w[p + "ln2.b"]);
  h = gelu(add_rowwise(matmul(h, w[p + "mlp.w1"]), w[p + "mlp.b1"]));
  return add(x, add_rowwise(matmul(h, w[p + "mlp.w2"]), w[p + "mlp.b2"]));
}

inline std::vector<std::size_t> tiled_positions(std::size_t len, std::size_t count) {
  std::vector<std::size_t> idx(len * count);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % len;
  return idx;
}

}  // namespace detail

inline void validate_image(const EncoderConfig& c, std::span<const double> pixels) {
  if (pixels.size() != c.image_values()) {
    throw dimension_error("image has " + std::to_string(pixels.size()) + " values, expected " +
                          shape_str({c.image_width, c.image_height, 3}));
  }
  for (double v : pixels) {
    if (std::isnan(v)) throw data_error("image contains NaN");
    if (v < 0.0 || v > 1.0) throw data_error("image pixel outside [0,1]");
  }
}

/// Writes the image's patch rows ([patches × patch_dim]) into `out`.
/// Pixels are laid out [x][y][channel]; patches are ordered by (px, py).
inline void patchify_into(const EncoderConfig& c, std::span<const double> image, double* out) {
  const std::size_t p = c.patch_size, gy = c.image_height / p;
  const std::size_t gx = c.image_width / p;
  for (std::size_t px = 0; px < gx; ++px)
    for (std::size_t py = 0; py < gy; ++py) {
      double* row = out + (px * gy + py) * c.patch_dim();
      std::size_t k = 0;
      for (std::size_t dx = 0; dx < p; ++dx)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const std::size_t x = px * p + dx, y = py * p + dy;
            row[k++] = image[(x * c.image_height + y) * 3 + ch];
          }
    }
}

/// Vision tower over a stack of B patchified images → [B × d], unit rows.
inline Var encode_patches(const EncoderVars& w, Var patches) {
  const auto& c = w.config;
  const std::size_t P = c.patches();
  const std::size_t B = patches.rows() / P;
  Var x = add_rowwise(matmul(patches, w["vision.patch.w"]), w["vision.patch.b"]);
  const auto pos_idx = detail::tiled_positions(P, B);
  x = add(x, gather_rows(w["vision.pos"], pos_idx));
  for (std::size_t i = 0; i < c.depth_v; ++i) {
    x = detail::transformer_block(w, "vision.block" + std::to_string(i) + ".", x, P);
  }
  x = mean_pool_rows(x, P);
  x = layer_norm(x, w["vision.ln_post.g"], w["vision.ln_post.b"]);
  return l2_normalize(matmul(x, w["vision.proj"]));
}

/// Text tower over B stacked sequences of content vectors ([B·m × d_e]) → [B × d].
/// Positional embeddings are added here; callers supply content only.
inline Var encode_content(const EncoderVars& w, Var content) {
  const auto& c = w.config;
  const std::size_t m = c.text_len;
  if (content.cols() != c.embed_dim || content.rows() % m != 0) {
    throw dimension_error("text content " + shape_str(content.shape()) +
                          " is not a stack of [" + std::to_string(m) + "x" +
                          std::to_string(c.embed_dim) + "] sequences");
  }
  const std::size_t B = content.rows() / m;
  const auto pos_idx = detail::tiled_positions(m, B);
  Var x = add(content, gather_rows(w["text.pos"], pos_idx));
  for (std::size_t i = 0; i < c.depth_t; ++i) {
    x = detail::transformer_block(w, "text.block" + std::to_string(i) + ".", x, m);
  }
  x = layer_norm(x, w["text.ln_final.g"], w["text.ln_final.b"]);
  std::vector<std::size_t> last(B);
  for (std::size_t b = 0; b < B; ++b) last[b] = b * m + m - 1;
  x = gather_rows(x, last);
  return l2_normalize(matmul(x, w["text.proj"]));
}

/// Content rows looked up from the (bound) vocabulary table.
inline Var embed_rows(const EncoderVars& w, std::span<const std::size_t> rows) {
  return gather_rows(w.vocab, rows);
}

/// f_I for a single image of shape [w × h × 3]; unit ℓ2 norm.
inline Tensor encode_image(const EncoderPack& pack, const Tensor& image) {
  const auto& c = pack.config;
  if (image.shape() != shape_t{c.image_width, c.image_height, 3}) {
    throw dimension_error("image shape " + shape_str(image.shape()) + ", expected " +
                          shape_str({c.image_width, c.image_height, 3}));
  }
  validate_image(c, image.values());
  Tape tape;
  auto w = bind_frozen(tape, pack);
  Tensor patches({c.patches(), c.patch_dim()});
  patchify_into(c, image.values(), patches.data());
  Tensor out = encode_patches(w, tape.constant(std::move(patches))).value();
  out.reshape({c.latent_dim});
  return out;
}

/// Features for `count` images stored contiguously, [count × d]. Processed in chunks.
inline Tensor encode_images(const EncoderPack& pack, std::span<const double> images,
                            std::size_t count, std::size_t chunk = 64) {
  const auto& c = pack.config;
  const std::size_t iv = c.image_values();
  if (images.size() != count * iv) throw dimension_error("encode_images: image stack size");
  Tensor out({count, c.latent_dim});
  for (std::size_t start = 0; start < count; start += chunk) {
    const std::size_t n = std::min(chunk, count - start);
    Tensor patches({n * c.patches(), c.patch_dim()});
    for (std::size_t i = 0; i < n; ++i) {
      auto img = images.subspan((start + i) * iv, iv);
      validate_image(c, img);
      patchify_into(c, img, patches.data() + i * c.patches() * c.patch_dim());
    }
    Tape tape;
    auto w = bind_frozen(tape, pack);
    const auto& f = encode_patches(w, tape.constant(std::move(patches))).value();
    std::copy_n(f.data(), f.size(), out.data() + start * c.latent_dim);
  }
  return out;
}

/// f_T for one sequence; unit ℓ2 norm.
inline Tensor encode_text(const EncoderPack& pack, const TokenSequence& seq) {
  const auto& c = pack.config;
  if (seq.embeddings.shape() != shape_t{c.text_len, c.embed_dim}) {
    throw dimension_error("token sequence " + shape_str(seq.embeddings.shape()) + ", expected " +
                          shape_str({c.text_len, c.embed_dim}));
  }
  Tape tape;
  auto w = bind_frozen(tape, pack);
  Tensor out = encode_content(w, tape.constant_ref(seq.embeddings)).value();
  out.reshape({c.latent_dim});
  return out;
}

/// Batched f_T for several sequences, [count × d].
inline Tensor encode_texts(const EncoderPack& pack, std::span<const TokenSequence> seqs) {
  const auto& c = pack.config;
  if (seqs.empty()) throw dimension_error("encode_texts: no sequences");
  Tensor content({seqs.size() * c.text_len, c.embed_dim});
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].embeddings.shape() != shape_t{c.text_len, c.embed_dim}) {
      throw dimension_error("token sequence " + std::to_string(i) + " has shape " +
                            shape_str(seqs[i].embeddings.shape()));
    }
    std::copy_n(seqs[i].embeddings.data(), seqs[i].embeddings.size(),
                content.data() + i * c.text_len * c.embed_dim);
  }
  Tape tape;
  auto w = bind_frozen(tape, pack);
  return encode_content(w, tape.constant(std::move(content))).value();
}

}  // namespace defo
