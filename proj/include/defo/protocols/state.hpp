#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "defo/encoders/tokenizer.hpp"

namespace defo {

enum class Variant { zero_shot, ensemble, linear_probe, coop, target_opt, defo };

inline constexpr Variant kAllVariants[] = {Variant::zero_shot,    Variant::ensemble,
                                           Variant::linear_probe, Variant::coop,
                                           Variant::target_opt,   Variant::defo};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::zero_shot: return "zero-shot";
    case Variant::ensemble: return "ensemble";
    case Variant::linear_probe: return "linear-probe";
    case Variant::coop: return "coop";
    case Variant::target_opt: return "target-opt";
    case Variant::defo: return "defo";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

inline bool is_trainable_variant(Variant v) {
  return v != Variant::zero_shot && v != Variant::ensemble;
}

enum class BankInit { random, class_name_seeded };

inline std::optional<BankInit> parse_bank_init(std::string_view s) {
  if (s == "random") return BankInit::random;
  if (s == "class-name-seeded") return BankInit::class_name_seeded;
  return std::nullopt;
}

inline std::string_view to_string(BankInit b) {
  return b == BankInit::random ? "random" : "class-name-seeded";
}

struct ProtocolConfig {
  Variant variant = Variant::defo;
  double tau = 0.07;
  std::vector<std::string> class_names;
  /// Prompt templates; "{}" marks the class-name position. Ensembling uses all of them.
  std::vector<std::string> templates{"a photo of a {}"};

  std::size_t coop_prefix_len = 8;
  bool coop_shared_prefix = true;
  std::string coop_init_text;  // empty: random context

  std::size_t target_name_len = 2;
  bool target_init_from_names = false;

  std::size_t n_queries = 16;
  BankInit bank_init = BankInit::random;
  std::size_t seeded_prefix_len = 4;
  bool identity_block = false;
  bool freeze_queries = false;  // "CLIP + linear": zero-shot queries, only W learns
  double logit_scale = 0.0;     // 0 selects 1/τ
  double head_init_std = 0.02;
  bool head_bias = false;
  bool probe_bias = true;

  std::size_t k() const { return class_names.size(); }
  double effective_logit_scale() const { return logit_scale > 0.0 ? logit_scale : 1.0 / tau; }

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (!(tau > 0.0)) out.push_back("protocol.tau must be positive");
    if (class_names.empty()) out.push_back("protocol.class_names must not be empty");
    for (const auto& n : class_names)
      if (split_words(n).empty()) out.push_back("protocol.class_names has an empty name");
    if (templates.empty()) out.push_back("protocol.templates must not be empty");
    for (const auto& t : templates)
      if (t.find("{}") == std::string::npos) {
        out.push_back("protocol.templates entry '" + t + "' lacks a {} placeholder");
      }
    if (variant == Variant::ensemble && templates.size() < 2) {
      out.push_back("protocol.templates needs at least 2 entries for ensembling");
    }
    if (variant == Variant::coop && coop_prefix_len == 0) {
      out.push_back("protocol.coop_prefix_len must be positive");
    }
    if (variant == Variant::target_opt && target_name_len == 0) {
      out.push_back("protocol.target_name_len must be positive");
    }
    if (variant == Variant::defo) {
      if (n_queries == 0) out.push_back("protocol.n_queries must be positive");
      if (logit_scale < 0.0) out.push_back("protocol.logit_scale must be positive (0 = 1/tau)");
      const bool needs_k = bank_init == BankInit::class_name_seeded || identity_block;
      if (needs_k && n_queries < k()) {
        out.push_back("protocol.n_queries must be >= number of classes for class-name seeding");
      }
      if (freeze_queries && n_queries != k()) {
        out.push_back("protocol.freeze_queries requires n_queries == number of classes");
      }
    }
    if (!(head_init_std >= 0.0)) out.push_back("protocol.head_init_std must be non-negative");
    return out;
  }
};

/// X_L: n query sequences of m content vectors, with a per-slot trainable mask.
struct QueryBank {
  Tensor values;                      // [n × m × d_e]
  std::vector<std::uint8_t> trainable;  // [n × m], 1 = trainable slot
  std::vector<long> token_ids;          // [n × m], vocabulary row of fixed slots, -1 otherwise

  std::size_t n() const { return values.dim(0); }
  std::size_t m() const { return values.dim(1); }
  std::size_t embed_dim() const { return values.dim(2); }

  /// Trainable mask expanded to every element of `values`.
  std::vector<std::uint8_t> element_mask() const {
    std::vector<std::uint8_t> out(values.size());
    const std::size_t E = embed_dim();
    for (std::size_t s = 0; s < trainable.size(); ++s)
      for (std::size_t j = 0; j < E; ++j) out[s * E + j] = trainable[s];
    return out;
  }

  std::size_t fixed_slots(std::size_t query) const {
    std::size_t c = 0;
    for (std::size_t j = 0; j < m(); ++j) c += trainable[query * m() + j] ? 0 : 1;
    return c;
  }

  bool any_trainable() const {
    for (auto t : trainable)
      if (t) return true;
    return false;
  }

  TokenSequence query(std::size_t i) const {
    TokenSequence seq;
    seq.embeddings = Tensor({m(), embed_dim()});
    std::copy_n(values.data() + i * m() * embed_dim(), m() * embed_dim(), seq.embeddings.data());
    for (std::size_t j = 0; j < m(); ++j) {
      const long id = token_ids[i * m() + j];
      seq.token_ids.push_back(id);
      seq.provenance.push_back(trainable[i * m() + j] ? SlotKind::trainable_slot
                               : id == long(kPadRow)  ? SlotKind::pad
                               : id == long(kUnkRow)  ? SlotKind::unknown
                                                      : SlotKind::vocabulary_word);
    }
    return seq;
  }

  friend bool operator==(const QueryBank&, const QueryBank&) = default;
};

/// W (n × k) with a frozen mask, applied after scaling the similarities by logit_scale.
struct ClassifierHead {
  Tensor weight;
  std::vector<std::uint8_t> frozen;  // [n × k], 1 = fixed
  double logit_scale = 1.0;
  Tensor bias;  // [k] or empty

  std::vector<std::uint8_t> trainable_mask() const {
    std::vector<std::uint8_t> out(frozen.size());
    for (std::size_t i = 0; i < frozen.size(); ++i) out[i] = frozen[i] ? 0 : 1;
    return out;
  }
  bool any_trainable() const {
    for (auto f : frozen)
      if (!f) return true;
    return !bias.empty();
  }

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

/// Linear classifier straight on f_I.
struct LinearProbe {
  Tensor weight;  // [d × k]
  Tensor bias;    // [k] or empty

  friend bool operator==(const LinearProbe&, const LinearProbe&) = default;
};

/// Learned context vectors followed by fixed class-name tokens.
struct CoopPrompt {
  Tensor context;               // [c × L × d_e], c = 1 when shared across classes
  std::vector<long> name_rows;  // [k × m], vocabulary row, or -1 for a context slot

  std::size_t prefix_len() const { return context.dim(1); }
  bool shared() const { return context.dim(0) == 1; }

  friend bool operator==(const CoopPrompt&, const CoopPrompt&) = default;
};

/// A trainable tensor and the subset of its entries the optimizer may touch.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  std::vector<std::uint8_t> mask;  // empty: every entry trainable
};

/// Everything a head needs at prediction and training time.
struct ProtocolState {
  ProtocolConfig config;
  QueryBank bank;        // target-opt, defo
  ClassifierHead head;   // defo
  LinearProbe probe;     // linear-probe
  CoopPrompt prompt;     // coop

  Variant variant() const { return config.variant; }

  /// Trainable tensors of the active variant, in a fixed order.
  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    switch (config.variant) {
      case Variant::zero_shot:
      case Variant::ensemble:
        break;
      case Variant::linear_probe:
        out.push_back({"probe.weight", &probe.weight, {}});
        if (!probe.bias.empty()) out.push_back({"probe.bias", &probe.bias, {}});
        break;
      case Variant::coop:
        out.push_back({"prompt.context", &prompt.context, {}});
        break;
      case Variant::target_opt:
        if (bank.any_trainable()) out.push_back({"bank.values", &bank.values, bank.element_mask()});
        break;
      case Variant::defo:
        if (bank.any_trainable()) out.push_back({"bank.values", &bank.values, bank.element_mask()});
        {
          auto mask = head.trainable_mask();
          bool any = false;
          for (auto v : mask) any = any || v;
          if (any) out.push_back({"head.weight", &head.weight, std::move(mask)});
        }
        if (!head.bias.empty()) out.push_back({"head.bias", &head.bias, {}});
        break;
    }
    return out;
  }

  /// Sets requires_grad on exactly the tensors returned by parameters().
  void mark_trainable() {
    for (Tensor* t : {&bank.values, &head.weight, &head.bias, &probe.weight, &probe.bias,
                      &prompt.context}) {
      t->requires_grad = false;
    }
    for (auto& p : parameters()) p.tensor->requires_grad = true;
  }

  void zero_grads() {
    for (Tensor* t : {&bank.values, &head.weight, &head.bias, &probe.weight, &probe.bias,
                      &prompt.context}) {
      t->grad.clear();
    }
  }
};

}  // namespace defo
