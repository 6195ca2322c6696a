#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "defo/datastore/checkpoint.hpp"
#include "defo/datastore/dataset.hpp"
#include "defo/protocols/heads.hpp"
#include "defo/trainer/sgd.hpp"

namespace defo {

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;

  /// One JSON object per line: {"epoch":…,"loss":…,"train_acc":…}.
  std::string lines() const {
    std::string out;
    for (const auto& r : epochs) {
      nlohmann::ordered_json j;
      j["epoch"] = r.epoch;
      j["loss"] = r.loss;
      j["train_acc"] = r.train_acc;
      out += j.dump() + "\n";
    }
    return out;
  }
};

/// Exactly `shots` examples per class, drawn without replacement. Kept in dataset order.
inline Dataset sample_few_shot(const Dataset& data, std::size_t shots, std::uint64_t seed) {
  data.validate();
  if (shots == 0) throw config_error("sample_few_shot: shots must be positive");
  Rng rng = Rng::stream(seed, "few-shot");
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < data.k(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.labels[i] == c) members.push_back(i);
    if (members.size() < shots) {
      throw data_error("class '" + data.class_names[c] + "' has " +
                       std::to_string(members.size()) + " examples, fewer than " +
                       std::to_string(shots) + " shots");
    }
    rng.shuffle(members.begin(), members.end());
    picked.insert(picked.end(), members.begin(), members.begin() + long(shots));
  }
  std::sort(picked.begin(), picked.end());
  return data.subset(picked);
}

/// Random crop after 2-pixel reflect padding, then a horizontal flip with p = 0.5.
inline void augment_image(std::span<const double> in, std::size_t w, std::size_t h, Rng& rng,
                          double* out) {
  constexpr long pad = 2;
  const long ox = long(rng.below(2 * pad + 1)) - pad;
  const long oy = long(rng.below(2 * pad + 1)) - pad;
  const bool flip = rng.bernoulli(0.5);
  auto reflect = [](long i, long n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  for (std::size_t x = 0; x < w; ++x)
    for (std::size_t y = 0; y < h; ++y) {
      const long tx = flip ? long(w - 1 - x) : long(x);
      const long sx = reflect(tx + ox, long(w)), sy = reflect(long(y) + oy, long(h));
      for (std::size_t c = 0; c < 3; ++c) {
        out[(x * h + y) * 3 + c] = in[(std::size_t(sx) * h + std::size_t(sy)) * 3 + c];
      }
    }
}

/// Copies the checkpoint's tensors into `s`, whose config must describe the same head.
inline void restore_state(ProtocolState& s, const Checkpoint& ck) {
  if (ck.state.variant() != s.variant()) {
    throw config_error("checkpoint variant " + std::string(to_string(ck.state.variant())) +
                       " does not match " + std::string(to_string(s.variant())));
  }
  auto check = [](const Tensor& a, const Tensor& b, const char* name) {
    if (a.shape() != b.shape()) {
      throw dimension_error(std::string("checkpoint ") + name + " has shape " + shape_str(a.shape()) +
                            ", expected " + shape_str(b.shape()));
    }
  };
  check(ck.state.bank.values, s.bank.values, "bank.values");
  check(ck.state.head.weight, s.head.weight, "head.weight");
  check(ck.state.probe.weight, s.probe.weight, "probe.weight");
  check(ck.state.prompt.context, s.prompt.context, "prompt.context");
  s.bank = ck.state.bank;
  s.head = ck.state.head;
  s.probe = ck.state.probe;
  s.prompt = ck.state.prompt;
}

/// Optimizes a protocol state on a labelled dataset; resumable through checkpoints.
class Trainer {
 public:
  Trainer(const EncoderPack& pack, ProtocolState& state, const Dataset& data, TrainConfig cfg,
          std::string config_digest = "")
      : pack_(pack),
        s_(state),
        data_(data),
        cfg_(std::move(cfg)),
        digest_(std::move(config_digest)),
        data_rng_(Rng::stream(cfg_.seed, "data")),
        aug_rng_(Rng::stream(cfg_.seed, "augment")) {
    if (auto v = cfg_.violations(); !v.empty()) throw config_error(v.front());
    if (!is_trainable_variant(s_.variant())) {
      throw config_error(std::string(to_string(s_.variant())) + " has nothing to train");
    }
    if (data_.size() == 0) throw data_error("training set is empty");
    validate_for_pack(data_, pack_);
    if (data_.k() != s_.config.k()) {
      throw data_error("dataset has " + std::to_string(data_.k()) + " classes, protocol has " +
                       std::to_string(s_.config.k()));
    }
    s_.mark_trainable();
    if (s_.parameters().empty()) throw config_error("every parameter is frozen; nothing to train");
    features_ = encode_images(pack_, data_.images.values(), data_.size());
  }

  std::size_t steps_per_epoch() const { return (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  const OptimizerState& optimizer() const { return opt_; }

  EpochRecord run_epoch() {
    std::vector<std::size_t> order(data_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    data_rng_.shuffle(order.begin(), order.end());
    const std::size_t total = cfg_.epochs * steps_per_epoch();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t b = std::min(cfg_.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, b);
      Tensor feats = batch_features(idx);
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(data_.labels[i]);

      Tape tape;
      Var z = logits(tape, tape.constant(std::move(feats)), true);
      Var loss = cross_entropy(z, labels);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw numeric_error("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", step " +
                            std::to_string(step_));
      }
      tape.backward(loss);
      auto params = s_.parameters();
      sgd_step(params, opt_, cfg_, cfg_.rate_at(step_, total));
      s_.zero_grads();
      loss_sum += lv;
      ++batches;
      ++step_;
    }
    ++epoch_;
    EpochRecord rec{epoch_, loss_sum / double(batches), train_accuracy()};
    history_.push_back(rec);
    return rec;
  }

  /// Runs until `last_epoch` (default: the configured epoch count).
  TrainReport run(std::size_t last_epoch = 0) {
    if (last_epoch == 0) last_epoch = cfg_.epochs;
    while (epoch_ < last_epoch) run_epoch();
    return {history_, step_};
  }

  /// Top-1 accuracy on the (unaugmented) training features.
  double train_accuracy() const {
    Tape tape;
    const Tensor& z = logits(tape, tape.constant_ref(features_), false).value();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data_.size(); ++i) hits += argmax(z.row(i)) == data_.labels[i];
    return double(hits) / double(data_.size());
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.state = s_;
    ck.state.zero_grads();
    ck.optimizer = opt_;
    ck.step = step_;
    ck.epoch = epoch_;
    ck.config_digest = digest_;
    ck.rng_states = {{"data", data_rng_.state()}, {"augment", aug_rng_.state()}};
    ck.history = history_;
    return ck;
  }

  void restore(const Checkpoint& ck) {
    restore_state(s_, ck);
    s_.mark_trainable();
    opt_ = ck.optimizer;
    step_ = ck.step;
    epoch_ = ck.epoch;
    history_ = ck.history;
    if (auto it = ck.rng_states.find("data"); it != ck.rng_states.end()) data_rng_.restore(it->second);
    if (auto it = ck.rng_states.find("augment"); it != ck.rng_states.end()) aug_rng_.restore(it->second);
  }

 private:
  Tensor batch_features(std::span<const std::size_t> idx) {
    const std::size_t d = pack_.config.latent_dim;
    if (!cfg_.augmentation) {
      Tensor f({idx.size(), d});
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(features_.data() + idx[i] * d, d, f.data() + i * d);
      }
      return f;
    }
    const std::size_t iv = data_.image_values();
    std::vector<double> imgs(idx.size() * iv);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      augment_image(data_.image(idx[i]), data_.width, data_.height, aug_rng_, imgs.data() + i * iv);
    }
    return encode_images(pack_, imgs, idx.size());
  }

  Var logits(Tape& tape, Var feats, bool track) const {
    auto w = bind_frozen(tape, pack_);
    Var text = s_.variant() == Variant::linear_probe ? feats
                                                     : query_features(tape, w, pack_, s_, track);
    return head_logits(tape, s_, feats, text, track);
  }

  const EncoderPack& pack_;
  ProtocolState& s_;
  const Dataset& data_;
  TrainConfig cfg_;
  std::string digest_;
  Tensor features_;
  OptimizerState opt_;
  Rng data_rng_;
  Rng aug_rng_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  std::vector<EpochRecord> history_;
};

inline TrainReport train_protocol(const EncoderPack& pack, ProtocolState& state,
                                  const Dataset& data, const TrainConfig& cfg) {
  Trainer t(pack, state, data, cfg);
  return t.run();
}

}  // namespace defo
