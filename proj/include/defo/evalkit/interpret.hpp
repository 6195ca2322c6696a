#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "defo/encoders/pack.hpp"
#include "defo/evalkit/metrics.hpp"
#include "defo/protocols/state.hpp"

namespace defo {

struct Neighbor {
  std::size_t row = 0;
  std::string word;
  double distance = 0.0;
};

struct SlotInterpretation {
  std::size_t query = 0;
  std::size_t position = 0;
  bool trainable = false;
  std::vector<Neighbor> neighbors;  // ascending distance; fixed slots hold only themselves

  const Neighbor& nearest() const { return neighbors.front(); }
};

using Interpretation = std::vector<SlotInterpretation>;

/// Rows eligible as interpretations: real words only.
inline bool interpretable_row(const EncoderPack& pack, std::size_t row) {
  return row >= kReservedRows && !pack.vocab_words[row].starts_with("<unused-");
}

/// Exhaustive Euclidean scan; ties go to the lower row.
inline std::vector<Neighbor> nearest_words(const EncoderPack& pack, std::span<const double> v,
                                           std::size_t count = 5) {
  const std::size_t E = pack.vocab_table.dim(1);
  if (v.size() != E) {
    throw dimension_error("nearest_words: vector has " + std::to_string(v.size()) +
                          " entries, embeddings have " + std::to_string(E));
  }
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t r = 0; r < pack.vocab_table.dim(0); ++r) {
    if (!interpretable_row(pack, r)) continue;
    const double* e = pack.vocab_table.data() + r * E;
    double ss = 0.0;
    for (std::size_t j = 0; j < E; ++j) ss += (v[j] - e[j]) * (v[j] - e[j]);
    d.emplace_back(ss, r);
  }
  const std::size_t keep = std::min(count, d.size());
  std::partial_sort(d.begin(), d.begin() + long(keep), d.end());
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < keep; ++i) {
    out.push_back({d[i].second, pack.vocab_words[d[i].second], std::sqrt(d[i].first)});
  }
  return out;
}

inline Interpretation interpret_queries(const QueryBank& bank, const EncoderPack& pack) {
  Interpretation out;
  const std::size_t E = bank.embed_dim();
  for (std::size_t q = 0; q < bank.n(); ++q)
    for (std::size_t j = 0; j < bank.m(); ++j) {
      const std::size_t slot = q * bank.m() + j;
      SlotInterpretation s{q, j, bool(bank.trainable[slot]), {}};
      if (s.trainable) {
        s.neighbors = nearest_words(pack, {bank.values.data() + slot * E, E});
      } else {
        const auto row = std::size_t(bank.token_ids[slot]);
        s.neighbors.push_back({row, pack.vocab_words[row], 0.0});
      }
      out.push_back(std::move(s));
    }
  return out;
}

/// query,position,trainable,word_1,dist_1,…,word_5,dist_5
inline std::string interpretation_csv(const Interpretation& in) {
  std::string out = "query,position,trainable";
  for (int r = 1; r <= 5; ++r) out += ",word_" + std::to_string(r) + ",dist_" + std::to_string(r);
  out += '\n';
  for (const auto& s : in) {
    out += std::to_string(s.query) + ',' + std::to_string(s.position) + ',' + (s.trainable ? "1" : "0");
    for (std::size_t r = 0; r < 5; ++r) {
      if (r < s.neighbors.size()) out += ',' + s.neighbors[r].word + ',' + format_sig6(s.neighbors[r].distance);
      else out += ",,";
    }
    out += '\n';
  }
  return out;
}

/// Human-readable: one line per query, nearest word per position, fixed words in brackets.
inline std::string render_interpretation(const Interpretation& in) {
  std::string out;
  std::size_t current = std::size_t(-1);
  for (const auto& s : in) {
    if (s.query != current) {
      if (current != std::size_t(-1)) out += '\n';
      current = s.query;
      out += "q" + std::to_string(s.query) + ":";
    }
    if (s.trainable) out += ' ' + s.nearest().word + '(' + format_sig6(s.nearest().distance) + ')';
    else if (s.nearest().row != kPadRow) out += " [" + s.nearest().word + ']';
  }
  if (!in.empty()) out += '\n';
  return out;
}

}  // namespace defo
