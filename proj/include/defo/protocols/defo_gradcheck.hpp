#pragma once

#include <algorithm>
#include <vector>

#include "defo/numcore/gradcheck.hpp"
#include "defo/protocols/heads.hpp"

namespace defo {

struct DefoGradcheck {
  double bank_error = 0.0;    // loss w.r.t. X_L, through the frozen text encoder
  double weight_error = 0.0;  // loss w.r.t. W
  double max() const { return std::max(bank_error, weight_error); }
};

/// Full DeFo cross-entropy over a random batch, checked against central differences.
inline DefoGradcheck defo_gradcheck(const EncoderPack& pack, std::uint64_t seed, std::size_t n = 4,
                                    std::size_t batch = 3) {
  const auto& c = pack.config;
  Rng rng = Rng::stream(seed, "gradcheck");
  ProtocolConfig cfg;
  cfg.variant = Variant::defo;
  cfg.class_names = {"red circle", "blue cross", "green bar"};
  cfg.n_queries = n;
  ProtocolState s = make_state(pack, cfg, seed);
  for (auto& v : s.head.weight.values()) v = rng.normal();

  std::vector<double> images(batch * c.image_width * c.image_height * 3);
  for (auto& v : images) v = rng.uniform();
  const Tensor feats = encode_images(pack, images, batch);
  std::vector<std::size_t> labels(batch);
  for (auto& l : labels) l = rng.below(cfg.k());

  const std::size_t rows = n * c.text_len;
  auto loss = [&](Tape& tape, Var bank, Var W) {
    auto w = bind_frozen(tape, pack);
    Var text = encode_content(w, reshape(bank, {rows, c.embed_dim}));
    Var sims = matmul(tape.constant_ref(feats), transpose(text));
    return cross_entropy(matmul(scale(sims, s.head.logit_scale), W), labels);
  };
  DefoGradcheck out;
  out.bank_error = gradcheck<double>(
      [&](Tape& tape, Var x) { return loss(tape, x, tape.constant_ref(s.head.weight)); }, s.bank.values);
  out.weight_error = gradcheck<double>(
      [&](Tape& tape, Var W) { return loss(tape, tape.constant_ref(s.bank.values), W); }, s.head.weight);
  return out;
}

}  // namespace defo
