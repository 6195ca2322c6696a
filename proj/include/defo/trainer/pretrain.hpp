#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "defo/datastore/dataset.hpp"
#include "defo/encoders/encoder.hpp"

namespace defo {

struct PretrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 32;
  double learning_rate = 5e-4;  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double tau = 0.07;
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (epochs == 0) out.push_back("pretrain.epochs must be positive");
    if (batch_size < 2) out.push_back("pretrain.batch_size must be at least 2");
    if (!(learning_rate > 0.0)) out.push_back("pretrain.learning_rate must be positive");
    if (!(tau > 0.0)) out.push_back("pretrain.tau must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      out.push_back("pretrain.beta1/beta2 must be in [0, 1)");
    }
    return out;
  }
};

/// Symmetric InfoNCE over a batch of matched rows: mean of image→text and text→image CE.
inline Var contrastive_loss(Var image_features, Var text_features, double tau) {
  const std::size_t b = image_features.rows();
  if (b < 2) throw config_error("contrastive loss needs a batch of at least 2 pairs");
  if (text_features.rows() != b) throw dimension_error("contrastive loss: batch sizes differ");
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  Var sims = scale(matmul(image_features, transpose(text_features)), 1.0 / tau);
  return scale(add(cross_entropy(sims, diag), cross_entropy(transpose(sims), diag)), 0.5);
}

struct PretrainReport {
  std::vector<double> epoch_loss;
};

/// Aligns both towers on (image, caption) pairs, then marks the pack frozen.
/// The only routine that writes encoder weights.
inline PretrainReport contrastive_pretrain(EncoderPack& pack, const Dataset& pairs,
                                           const PretrainConfig& cfg) {
  if (auto v = cfg.violations(); !v.empty()) throw config_error(v.front());
  if (pack.frozen) throw config_error("encoder pack is already frozen");
  pairs.validate();
  if (pairs.captions.size() != pairs.size()) throw data_error("pretraining needs captions");
  if (pairs.size() < 2) throw config_error("pretraining needs at least 2 pairs");
  const auto& c = pack.config;

  std::vector<std::size_t> caption_rows;
  for (const auto& cap : pairs.captions) {
    auto seq = tokenize(pack, cap);
    for (long id : seq.token_ids) caption_rows.push_back(static_cast<std::size_t>(id));
  }
  std::vector<double> patches(pairs.size() * c.patches() * c.patch_dim());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    validate_image(c, pairs.image(i));
    patchify_into(c, pairs.image(i), patches.data() + i * c.patches() * c.patch_dim());
  }

  std::vector<Tensor*> params;
  pack.for_each_weight([&](const std::string&, Tensor& t) {
    t.requires_grad = true;
    params.push_back(&t);
  });
  std::vector<Tensor> m1, m2;
  for (auto* p : params) {
    m1.emplace_back(p->shape());
    m2.emplace_back(p->shape());
  }

  Rng rng = Rng::stream(cfg.seed, "pretrain");
  PretrainReport report;
  std::size_t t = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - start);
      const std::size_t pr = c.patches() * c.patch_dim();
      Tensor bp({b * c.patches(), c.patch_dim()});
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t ex = order[start + i];
        std::copy_n(patches.data() + ex * pr, pr, bp.data() + i * pr);
        rows.insert(rows.end(), caption_rows.begin() + long(ex * c.text_len),
                    caption_rows.begin() + long((ex + 1) * c.text_len));
      }
      Tape tape;
      auto w = bind_trainable(tape, pack);
      Var fi = encode_patches(w, tape.constant(std::move(bp)));
      Var ft = encode_content(w, embed_rows(w, rows));
      Var loss = contrastive_loss(fi, ft, cfg.tau);
      if (!std::isfinite(loss.value()[0])) throw numeric_error("non-finite pretraining loss");
      tape.backward(loss);
      ++t;
      const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& x = *params[p];
        if (!x.has_grad()) continue;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double g = x.grad[i] + cfg.weight_decay * x[i];
          m1[p][i] = cfg.beta1 * m1[p][i] + (1 - cfg.beta1) * g;
          m2[p][i] = cfg.beta2 * m2[p][i] + (1 - cfg.beta2) * g * g;
          x[i] -= cfg.learning_rate * (m1[p][i] / c1) / (std::sqrt(m2[p][i] / c2) + 1e-8);
        }
        x.grad.clear();
      }
      loss_sum += loss.value()[0];
      ++batches;
    }
    report.epoch_loss.push_back(loss_sum / double(batches));
  }
  for (auto* p : params) {
    p->requires_grad = false;
    p->grad.clear();
  }
  pack.frozen = true;
  return report;
}

}  // namespace defo
