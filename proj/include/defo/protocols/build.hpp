#pragma once

#include <string>
#include <vector>

#include "defo/protocols/state.hpp"

namespace defo {

inline constexpr double kSlotInitStd = 0.02;

/// Fills "{}" in `tmpl` with `name`.
inline std::string fill_template(const std::string& tmpl, const std::string& name) {
  std::string out = tmpl;
  const auto pos = out.find("{}");
  if (pos != std::string::npos) out.replace(pos, 2, name);
  return out;
}

/// Vocabulary rows of a class name; every word must be known.
inline std::vector<std::size_t> class_name_rows(const EncoderPack& pack, const std::string& name) {
  std::vector<std::size_t> rows;
  for (const auto& w : split_words(name)) {
    auto r = pack.row_of(w);
    if (!r) throw config_error("class name '" + name + "' uses unknown word '" + w + "'");
    rows.push_back(*r);
  }
  if (rows.empty()) throw config_error("empty class name");
  return rows;
}

namespace detail {

inline void set_slot(QueryBank& b, std::size_t q, std::size_t pos, const EncoderPack& pack,
                     std::size_t row) {
  const std::size_t E = b.embed_dim();
  const auto src = pack.vocab_table.row(row);
  std::copy(src.begin(), src.end(), b.values.data() + (q * b.m() + pos) * E);
  b.trainable[q * b.m() + pos] = 0;
  b.token_ids[q * b.m() + pos] = static_cast<long>(row);
}

inline void random_slot(QueryBank& b, std::size_t q, std::size_t pos, Rng& rng) {
  const std::size_t E = b.embed_dim();
  double* dst = b.values.data() + (q * b.m() + pos) * E;
  for (std::size_t j = 0; j < E; ++j) dst[j] = rng.normal(0.0, kSlotInitStd);
  b.trainable[q * b.m() + pos] = 1;
  b.token_ids[q * b.m() + pos] = -1;
}

inline QueryBank empty_bank(std::size_t n, const EncoderConfig& c) {
  QueryBank b;
  b.values = Tensor({n, c.text_len, c.embed_dim});
  b.trainable.assign(n * c.text_len, 0);
  b.token_ids.assign(n * c.text_len, static_cast<long>(kPadRow));
  return b;
}

}  // namespace detail

/// Fully fixed bank holding tokenized prompts, one per text.
inline QueryBank fixed_bank(const EncoderPack& pack, const std::vector<std::string>& texts) {
  const auto& c = pack.config;
  QueryBank b = detail::empty_bank(texts.size(), c);
  for (std::size_t q = 0; q < texts.size(); ++q) {
    auto seq = tokenize(pack, texts[q]);
    for (std::size_t j = 0; j < c.text_len; ++j) {
      detail::set_slot(b, q, j, pack, static_cast<std::size_t>(seq.token_ids[j]));
    }
  }
  return b;
}

/// The k zero-shot queries of one template.
inline QueryBank zero_shot_bank(const EncoderPack& pack, const ProtocolConfig& cfg,
                                const std::string& tmpl) {
  std::vector<std::string> texts;
  for (const auto& n : cfg.class_names) texts.push_back(fill_template(tmpl, n));
  return fixed_bank(pack, texts);
}

/// DeFo's query bank. Class-name seeding puts a random trainable prefix of
/// `seeded_prefix_len` slots before each of the first k class names (fixed),
/// padding the rest; queries k..n-1 stay fully random.
inline QueryBank build_query_bank(const ProtocolConfig& cfg, const EncoderPack& pack,
                                  BankInit mode, std::uint64_t seed) {
  const auto& c = pack.config;
  const std::size_t n = cfg.n_queries, m = c.text_len;
  if (n == 0) throw config_error("build_query_bank: n_queries must be positive");
  if (mode == BankInit::class_name_seeded && n < cfg.k()) {
    throw config_error("build_query_bank: class-name seeding needs n >= k (n = " +
                       std::to_string(n) + ", k = " + std::to_string(cfg.k()) + ")");
  }
  Rng rng = Rng::stream(seed, "query-bank");
  QueryBank b = detail::empty_bank(n, c);
  for (std::size_t q = 0; q < n; ++q) {
    if (mode == BankInit::class_name_seeded && q < cfg.k()) {
      const auto rows = class_name_rows(pack, cfg.class_names[q]);
      const std::size_t P = cfg.seeded_prefix_len;
      if (P + rows.size() > m) {
        throw config_error("class '" + cfg.class_names[q] + "' does not fit after a " +
                           std::to_string(P) + "-slot prefix in " + std::to_string(m) +
                           " positions");
      }
      for (std::size_t j = 0; j < P; ++j) detail::random_slot(b, q, j, rng);
      for (std::size_t j = 0; j < rows.size(); ++j) detail::set_slot(b, q, P + j, pack, rows[j]);
      for (std::size_t j = P + rows.size(); j < m; ++j) detail::set_slot(b, q, j, pack, kPadRow);
    } else {
      for (std::size_t j = 0; j < m; ++j) detail::random_slot(b, q, j, rng);
    }
  }
  return b;
}

/// Target optimization: the template's words are fixed and the class name is
/// replaced by `target_name_len` trainable slots per class.
inline QueryBank build_target_bank(const ProtocolConfig& cfg, const EncoderPack& pack,
                                   std::uint64_t seed) {
  const auto& c = pack.config;
  const std::string& tmpl = cfg.templates.front();
  const auto pos = tmpl.find("{}");
  const auto before = word_rows(pack, tmpl.substr(0, pos));
  const auto after = word_rows(pack, tmpl.substr(pos + 2));
  const std::size_t L = cfg.target_name_len;
  if (before.size() + L + after.size() > c.text_len) {
    throw config_error("target-opt: template plus " + std::to_string(L) +
                       " name slots exceeds text length " + std::to_string(c.text_len));
  }
  Rng rng = Rng::stream(seed, "target-bank");
  QueryBank b = detail::empty_bank(cfg.k(), c);
  for (std::size_t q = 0; q < cfg.k(); ++q) {
    std::size_t j = 0;
    for (auto r : before) detail::set_slot(b, q, j++, pack, r);
    if (cfg.target_init_from_names) {
      const auto rows = class_name_rows(pack, cfg.class_names[q]);
      if (rows.size() > L) {
        throw config_error("target-opt: class '" + cfg.class_names[q] + "' longer than " +
                           std::to_string(L) + " name slots");
      }
      for (std::size_t s = 0; s < L; ++s) {
        detail::set_slot(b, q, j, pack, s < rows.size() ? rows[s] : kPadRow);
        b.trainable[q * b.m() + j] = 1;
        b.token_ids[q * b.m() + j] = -1;
        ++j;
      }
    } else {
      for (std::size_t s = 0; s < L; ++s) detail::random_slot(b, q, j++, rng);
    }
    for (auto r : after) detail::set_slot(b, q, j++, pack, r);
    for (; j < c.text_len; ++j) detail::set_slot(b, q, j, pack, kPadRow);
  }
  return b;
}

/// CoOp: [L context slots][class-name tokens][pads]; context shared unless configured per class.
inline CoopPrompt build_coop_prompt(const ProtocolConfig& cfg, const EncoderPack& pack,
                                    std::uint64_t seed) {
  const auto& c = pack.config;
  const std::size_t L = cfg.coop_prefix_len, m = c.text_len, k = cfg.k();
  CoopPrompt p;
  p.name_rows.assign(k * m, static_cast<long>(kPadRow));
  for (std::size_t q = 0; q < k; ++q) {
    const auto rows = class_name_rows(pack, cfg.class_names[q]);
    if (L + rows.size() > m) {
      throw config_error("coop: class '" + cfg.class_names[q] + "' is longer than m - prefix = " +
                         std::to_string(m > L ? m - L : 0) + " tokens");
    }
    for (std::size_t j = 0; j < L; ++j) p.name_rows[q * m + j] = -1;
    for (std::size_t j = 0; j < rows.size(); ++j) p.name_rows[q * m + L + j] = long(rows[j]);
  }
  const std::size_t copies = cfg.coop_shared_prefix ? 1 : k;
  p.context = Tensor({copies, L, c.embed_dim});
  if (cfg.coop_init_text.empty()) {
    Rng rng = Rng::stream(seed, "coop-context");
    for (auto& v : p.context.values()) v = rng.normal(0.0, kSlotInitStd);
  } else {
    const auto rows = word_rows(pack, cfg.coop_init_text);
    if (rows.size() > L) throw config_error("coop: init text longer than the prefix");
    for (std::size_t cpy = 0; cpy < copies; ++cpy)
      for (std::size_t j = 0; j < L; ++j) {
        const auto src = pack.vocab_table.row(j < rows.size() ? rows[j] : kPadRow);
        std::copy(src.begin(), src.end(), p.context.data() + (cpy * L + j) * c.embed_dim);
      }
  }
  return p;
}

/// DeFo head. With the identity block, the top k×k of W is I and frozen and the
/// remaining rows start at zero, so the initial logits equal Eq.-1 retrieval
/// over the first k queries.
inline ClassifierHead build_head(const ProtocolConfig& cfg, std::uint64_t seed) {
  const std::size_t n = cfg.n_queries, k = cfg.k();
  ClassifierHead h;
  h.weight = Tensor({n, k});
  h.frozen.assign(n * k, 0);
  h.logit_scale = cfg.effective_logit_scale();
  if (cfg.identity_block) {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        h.weight.at(i, j) = i == j ? 1.0 : 0.0;
        h.frozen[i * k + j] = 1;
      }
  } else if (cfg.freeze_queries) {
    for (std::size_t i = 0; i < k; ++i) h.weight.at(i, i) = 1.0;
  } else {
    Rng rng = Rng::stream(seed, "head");
    for (auto& v : h.weight.values()) v = rng.normal(0.0, cfg.head_init_std);
  }
  if (cfg.head_bias) h.bias = Tensor({k});
  return h;
}

/// Initial state for any variant. Only the pieces the variant uses are populated.
inline ProtocolState make_state(const EncoderPack& pack, const ProtocolConfig& cfg,
                                std::uint64_t seed) {
  if (auto v = cfg.violations(); !v.empty()) throw config_error(v.front());
  ProtocolState s;
  s.config = cfg;
  switch (cfg.variant) {
    case Variant::zero_shot:
    case Variant::ensemble:
      break;
    case Variant::linear_probe:
      s.probe.weight = Tensor({pack.config.latent_dim, cfg.k()});
      if (cfg.probe_bias) s.probe.bias = Tensor({cfg.k()});
      break;
    case Variant::coop:
      s.prompt = build_coop_prompt(cfg, pack, seed);
      break;
    case Variant::target_opt:
      s.bank = build_target_bank(cfg, pack, seed);
      break;
    case Variant::defo:
      s.bank = cfg.freeze_queries ? zero_shot_bank(pack, cfg, cfg.templates.front())
                                  : build_query_bank(cfg, pack, cfg.bank_init, seed);
      s.head = build_head(cfg, seed);
      break;
  }
  s.mark_trainable();
  return s;
}

}  // namespace defo
