#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "defo/encoders/encoder.hpp"
#include "defo/protocols/build.hpp"

namespace defo {

struct Prediction {
  Tensor probabilities;  // [k]
  std::vector<std::pair<std::size_t, double>> top5;
  std::size_t predicted = 0;
};

/// Top-5 by descending probability, ties broken by lowest class index.
inline std::vector<std::pair<std::size_t, double>> top_classes(std::span<const double> probs,
                                                               std::size_t count = 5) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  order.resize(std::min(count, order.size()));
  std::vector<std::pair<std::size_t, double>> out;
  for (auto i : order) out.emplace_back(i, probs[i]);
  return out;
}

inline Prediction make_prediction(std::span<const double> probs) {
  Prediction p;
  p.probabilities = Tensor::vector(std::vector<double>(probs.begin(), probs.end()));
  p.top5 = top_classes(probs);
  p.predicted = argmax(probs);
  return p;
}

/// Element i = ⟨f_I, f_T^i⟩.
inline Tensor similarity_vector(const Tensor& image_feature, std::span<const Tensor> bank_features) {
  if (bank_features.empty()) throw dimension_error("similarity_vector: empty bank");
  const std::size_t d = image_feature.size();
  Tensor F({bank_features.size(), d});
  for (std::size_t i = 0; i < bank_features.size(); ++i) {
    if (bank_features[i].size() != d) {
      throw dimension_error("similarity_vector: query " + std::to_string(i) + " has dimension " +
                            std::to_string(bank_features[i].size()) + ", image has " +
                            std::to_string(d));
    }
    std::copy_n(bank_features[i].data(), d, F.data() + i * d);
  }
  Tape tape;
  Tensor fi = image_feature;
  fi.reshape({1, d});
  Tensor s = matmul(tape.constant(std::move(fi)), transpose(tape.constant(std::move(F)))).value();
  s.reshape({bank_features.size()});
  return s;
}

/// Bank content on the tape; trainable slots are leaves when `track` is set.
inline Var bank_content(Tape& tape, QueryBank& bank, bool track) {
  Var x = track && bank.values.requires_grad ? mask_grad(tape.leaf(bank.values), bank.element_mask())
                                             : tape.constant_ref(bank.values);
  return reshape(x, {bank.n() * bank.m(), bank.embed_dim()});
}

/// CoOp content: context rows and fixed vocabulary rows gathered into k sequences.
inline Var coop_content(Tape& tape, const EncoderVars& w, CoopPrompt& prompt, bool track) {
  const std::size_t copies = prompt.context.dim(0), L = prompt.prefix_len();
  const std::size_t E = prompt.context.dim(2);
  Var ctx = track && prompt.context.requires_grad ? tape.leaf(prompt.context)
                                                  : tape.constant_ref(prompt.context);
  Var parts[] = {reshape(ctx, {copies * L, E}), w.vocab};
  Var table = concat_rows<double>(parts);
  const std::size_t m = w.config.text_len;
  const std::size_t k = prompt.name_rows.size() / m;
  std::vector<std::size_t> idx(k * m);
  for (std::size_t q = 0; q < k; ++q)
    for (std::size_t j = 0; j < m; ++j) {
      const long r = prompt.name_rows[q * m + j];
      idx[q * m + j] = r < 0 ? (copies == 1 ? j : q * L + j) : copies * L + std::size_t(r);
    }
  return gather_rows(table, idx);
}

/// Per-class text features [k × d] (or [n × d] for DeFo) for the state's variant.
inline Var query_features(Tape& tape, const EncoderVars& w, const EncoderPack& pack,
                          ProtocolState& s, bool track) {
  const auto& cfg = s.config;
  switch (cfg.variant) {
    case Variant::zero_shot: {
      QueryBank b = zero_shot_bank(pack, cfg, cfg.templates.front());
      return encode_content(w, reshape(tape.constant(std::move(b.values)),
                                       {cfg.k() * pack.config.text_len, pack.config.embed_dim}));
    }
    case Variant::ensemble: {
      // Mean of per-template features, renormalized.
      Var acc{};
      for (std::size_t t = 0; t < cfg.templates.size(); ++t) {
        QueryBank b = zero_shot_bank(pack, cfg, cfg.templates[t]);
        Var f = encode_content(w, reshape(tape.constant(std::move(b.values)),
                                          {cfg.k() * pack.config.text_len, pack.config.embed_dim}));
        acc = t == 0 ? f : add(acc, f);
      }
      return l2_normalize(scale(acc, 1.0 / double(cfg.templates.size())));
    }
    case Variant::coop:
      return encode_content(w, coop_content(tape, w, s.prompt, track));
    case Variant::target_opt:
    case Variant::defo:
      return encode_content(w, bank_content(tape, s.bank, track));
    case Variant::linear_probe:
      break;
  }
  throw config_error("query_features: linear probe has no text queries");
}

/// Logits [B × k] from image features [B × d] and, for text-based heads, query features.
inline Var head_logits(Tape& tape, ProtocolState& s, Var image_features, Var text_features,
                       bool track) {
  auto param = [&](Tensor& t) { return track && t.requires_grad ? tape.leaf(t) : tape.constant_ref(t); };
  const auto& cfg = s.config;
  switch (cfg.variant) {
    case Variant::linear_probe: {
      Var z = matmul(image_features, param(s.probe.weight));
      return s.probe.bias.empty() ? z : add_rowwise(z, param(s.probe.bias));
    }
    case Variant::defo: {
      if (s.head.weight.dim(0) != text_features.rows()) {
        throw dimension_error("defo: head has " + std::to_string(s.head.weight.dim(0)) +
                              " rows but bank has " + std::to_string(text_features.rows()) +
                              " queries");
      }
      Var sims = matmul(image_features, transpose(text_features));
      Var W = param(s.head.weight);
      if (track && s.head.weight.requires_grad) W = mask_grad(W, s.head.trainable_mask());
      Var z = matmul(scale(sims, s.head.logit_scale), W);
      return s.head.bias.empty() ? z : add_rowwise(z, param(s.head.bias));
    }
    default: {
      Var sims = matmul(image_features, transpose(text_features));
      return scale(sims, 1.0 / cfg.tau);
    }
  }
}

/// A head with its query features precomputed; cheap per-image prediction.
class Predictor {
 public:
  Predictor(const EncoderPack& pack, ProtocolState state)
      : pack_(&pack), state_(std::move(state)) {
    if (auto v = state_.config.violations(); !v.empty()) throw config_error(v.front());
    if (state_.variant() != Variant::linear_probe) {
      Tape tape;
      auto w = bind_frozen(tape, pack);
      text_features_ = query_features(tape, w, pack, state_, false).value();
    }
  }

  /// Logits for a stack of image features [B × d].
  Tensor logits(const Tensor& image_features) const {
    Tape tape;
    Var f = tape.constant_ref(image_features);
    Var t = text_features_.empty() ? f : tape.constant_ref(text_features_);
    return head_logits(tape, state_, f, t, false).value();
  }

  Tensor probabilities(const Tensor& image_features) const {
    Tape tape;
    return softmax(tape.constant(logits(image_features))).value();
  }

  Prediction predict_features(std::span<const double> feature) const {
    Tensor f({1, feature.size()}, std::vector<double>(feature.begin(), feature.end()));
    return make_prediction(probabilities(f).values());
  }

  /// Same as predict_features after ℓ2-normalizing an unnormalized feature.
  Prediction predict_raw(std::span<const double> feature) const {
    Tape tape;
    Tensor f({1, feature.size()}, std::vector<double>(feature.begin(), feature.end()));
    Tensor u = l2_normalize(tape.constant(std::move(f))).value();
    return make_prediction(probabilities(u).values());
  }

  Prediction predict(const Tensor& image) const {
    return predict_features(encode_image(*pack_, image).values());
  }

  const Tensor& text_features() const { return text_features_; }
  const ProtocolState& state() const { return state_; }

 private:
  const EncoderPack* pack_;
  mutable ProtocolState state_;
  Tensor text_features_;
};

inline Prediction zero_shot_predict(const EncoderPack& pack, ProtocolConfig cfg,
                                    const Tensor& image) {
  if (cfg.class_names.empty()) throw config_error("zero-shot: empty class names");
  cfg.variant = Variant::zero_shot;
  return Predictor(pack, make_state(pack, cfg, 0)).predict(image);
}

inline Prediction ensemble_predict(const EncoderPack& pack, ProtocolConfig cfg,
                                   const Tensor& image) {
  if (cfg.templates.size() < 2) throw config_error("ensemble: needs at least 2 templates");
  cfg.variant = Variant::ensemble;
  return Predictor(pack, make_state(pack, cfg, 0)).predict(image);
}

inline Prediction linear_probe_predict(const EncoderPack& pack, const LinearProbe& probe,
                                       const Tensor& image) {
  if (probe.weight.rank() != 2 || probe.weight.dim(0) != pack.config.latent_dim ||
      (!probe.bias.empty() && probe.bias.size() != probe.weight.dim(1))) {
    throw dimension_error("linear probe shape " + shape_str(probe.weight.shape()) +
                          " does not match latent dimension " +
                          std::to_string(pack.config.latent_dim));
  }
  ProtocolState s;
  s.config.variant = Variant::linear_probe;
  s.config.class_names.assign(probe.weight.dim(1), "class");
  s.probe = probe;
  return Predictor(pack, std::move(s)).predict(image);
}

inline Prediction coop_predict(const EncoderPack& pack, ProtocolConfig cfg, const CoopPrompt& prompt,
                               const Tensor& image) {
  cfg.variant = Variant::coop;
  ProtocolState s;
  s.config = cfg;
  s.prompt = prompt;
  return Predictor(pack, std::move(s)).predict(image);
}

inline Prediction target_opt_predict(const EncoderPack& pack, ProtocolConfig cfg,
                                     const QueryBank& bank, const Tensor& image) {
  cfg.variant = Variant::target_opt;
  if (bank.n() != cfg.k()) throw dimension_error("target-opt: bank must hold one query per class");
  ProtocolState s;
  s.config = cfg;
  s.bank = bank;
  return Predictor(pack, std::move(s)).predict(image);
}

inline Prediction defo_predict(const EncoderPack& pack, ProtocolConfig cfg, const QueryBank& bank,
                               const ClassifierHead& head, const Tensor& image) {
  cfg.variant = Variant::defo;
  cfg.n_queries = bank.n();
  if (head.weight.dim(0) != bank.n()) {
    throw dimension_error("defo: head/bank query count mismatch (" +
                          std::to_string(head.weight.dim(0)) + " vs " + std::to_string(bank.n()) +
                          ")");
  }
  ProtocolState s;
  s.config = cfg;
  s.bank = bank;
  s.head = head;
  return Predictor(pack, std::move(s)).predict(image);
}

/// "CLIP + linear": DeFo with n = k and the queries fixed to the zero-shot prompts.
inline Prediction clip_plus_linear_predict(const EncoderPack& pack, ProtocolConfig cfg,
                                           const ClassifierHead& head, const Tensor& image) {
  cfg.n_queries = cfg.k();
  cfg.freeze_queries = true;
  return defo_predict(pack, cfg, zero_shot_bank(pack, cfg, cfg.templates.front()), head, image);
}

/// Eq.-1 retrieval over an arbitrary bank (one query per class).
inline Prediction retrieval_predict(const EncoderPack& pack, ProtocolConfig cfg,
                                    const QueryBank& bank, const Tensor& image) {
  return target_opt_predict(pack, std::move(cfg), bank, image);
}

/// The first `count` queries of a bank.
inline QueryBank take_queries(const QueryBank& bank, std::size_t count) {
  if (count == 0 || count > bank.n()) throw dimension_error("take_queries: bad count");
  QueryBank out;
  out.values = Tensor({count, bank.m(), bank.embed_dim()});
  std::copy_n(bank.values.data(), out.values.size(), out.values.data());
  out.trainable.assign(bank.trainable.begin(), bank.trainable.begin() + long(count * bank.m()));
  out.token_ids.assign(bank.token_ids.begin(), bank.token_ids.begin() + long(count * bank.m()));
  return out;
}

}  // namespace defo
