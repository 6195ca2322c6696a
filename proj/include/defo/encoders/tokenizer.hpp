#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "defo/encoders/pack.hpp"

namespace defo {

enum class SlotKind : std::uint8_t { vocabulary_word, trainable_slot, pad, unknown };

/// Exactly `text_len` content vectors; positional embeddings are added by the encoder.
struct TokenSequence {
  Tensor embeddings;  // [m × d_e]
  std::vector<SlotKind> provenance;
  std::vector<long> token_ids;  // vocabulary row, or -1 for trainable slots

  std::size_t length() const { return provenance.size(); }
};

/// Lowercased words split on anything that is not a letter or digit.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

/// Vocabulary rows for the words of `text` (unknowns → <unk>), unpadded.
inline std::vector<std::size_t> word_rows(const EncoderPack& pack, std::string_view text) {
  std::vector<std::size_t> rows;
  for (const auto& w : split_words(text)) rows.push_back(pack.row_of(w).value_or(kUnkRow));
  return rows;
}

/// Builds a length-m sequence from vocabulary rows, truncating or padding with <pad>.
inline TokenSequence sequence_from_rows(const EncoderPack& pack, std::span<const std::size_t> rows) {
  const std::size_t m = pack.config.text_len, E = pack.config.embed_dim;
  TokenSequence seq;
  seq.embeddings = Tensor({m, E});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t row = i < rows.size() ? rows[i] : kPadRow;
    if (row >= pack.vocab_table.dim(0)) throw dimension_error("token row out of vocabulary");
    const auto src = pack.vocab_table.row(row);
    std::copy(src.begin(), src.end(), seq.embeddings.row(i).begin());
    seq.token_ids.push_back(static_cast<long>(row));
    seq.provenance.push_back(i >= rows.size()  ? SlotKind::pad
                             : row == kUnkRow  ? SlotKind::unknown
                             : row == kPadRow  ? SlotKind::pad
                                               : SlotKind::vocabulary_word);
  }
  return seq;
}

inline TokenSequence tokenize(const EncoderPack& pack, std::string_view text) {
  const auto rows = word_rows(pack, text);
  if (rows.empty()) throw config_error("tokenize: text has no words");
  return sequence_from_rows(pack, rows);
}

}  // namespace defo
