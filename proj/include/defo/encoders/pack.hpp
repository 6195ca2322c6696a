#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "defo/encoders/config.hpp"
#include "defo/encoders/vocab.hpp"
#include "defo/io/records.hpp"
#include "defo/numcore/rng.hpp"

namespace defo {

using WeightMap = std::map<std::string, Tensor>;

/// Frozen dual-encoder weights plus the word-level vocabulary.
struct EncoderPack {
  EncoderConfig config;
  WeightMap vision_weights;
  WeightMap text_weights;
  Tensor vocab_table;  // [vocab_size × embed_dim]
  std::vector<std::string> vocab_words;
  bool frozen = false;

  /// Row of `word`, if present. Reserved rows never match.
  std::optional<std::size_t> row_of(const std::string& word) const {
    for (std::size_t i = kReservedRows; i < vocab_words.size(); ++i) {
      if (vocab_words[i] == word) return i;
    }
    return std::nullopt;
  }

  const Tensor& weight(const std::string& name) const {
    const auto& m = name.starts_with("vision.") ? vision_weights : text_weights;
    auto it = m.find(name);
    if (it == m.end()) throw dimension_error("encoder pack has no tensor '" + name + "'");
    return it->second;
  }

  template <class F>
  void for_each_weight(F&& f) {
    for (auto& [n, t] : vision_weights) f(n, t);
    for (auto& [n, t] : text_weights) f(n, t);
    f(std::string("vocab_table"), vocab_table);
  }

  template <class F>
  void for_each_weight(F&& f) const {
    for (const auto& [n, t] : vision_weights) f(n, t);
    for (const auto& [n, t] : text_weights) f(n, t);
    f(std::string("vocab_table"), vocab_table);
  }

  /// Value equality; the frozen flag is lifecycle state and not compared.
  friend bool operator==(const EncoderPack& a, const EncoderPack& b) {
    return a.config == b.config && a.vision_weights == b.vision_weights &&
           a.text_weights == b.text_weights && a.vocab_table == b.vocab_table &&
           a.vocab_words == b.vocab_words;
  }
};

enum class WeightInit { normal, zeros, ones, scaled_identity };

struct WeightSpec {
  std::string name;
  shape_t shape;
  WeightInit init = WeightInit::normal;
};

/// Names, shapes and init rules of every encoder tensor, in a fixed order.
inline std::vector<WeightSpec> weight_specs(const EncoderConfig& c) {
  const std::size_t E = c.embed_dim, H = c.mlp_dim();
  std::vector<WeightSpec> out;
  auto blocks = [&](const std::string& tower, std::size_t depth) {
    for (std::size_t i = 0; i < depth; ++i) {
      const std::string p = tower + ".block" + std::to_string(i) + ".";
      out.push_back({p + "ln1.g", {E}, WeightInit::ones});
      out.push_back({p + "ln1.b", {E}, WeightInit::zeros});
      out.push_back({p + "attn.wq", {E, E}});
      out.push_back({p + "attn.wk", {E, E}});
      out.push_back({p + "attn.wv", {E, E}});
      out.push_back({p + "attn.wo", {E, E}, WeightInit::scaled_identity});
      out.push_back({p + "ln2.g", {E}, WeightInit::ones});
      out.push_back({p + "ln2.b", {E}, WeightInit::zeros});
      out.push_back({p + "mlp.w1", {E, H}});
      out.push_back({p + "mlp.b1", {H}, WeightInit::zeros});
      out.push_back({p + "mlp.w2", {H, E}});
      out.push_back({p + "mlp.b2", {E}, WeightInit::zeros});
    }
  };
  out.push_back({"vision.patch.w", {c.patch_dim(), E}});
  out.push_back({"vision.patch.b", {E}, WeightInit::zeros});
  out.push_back({"vision.pos", {c.patches(), E}});
  blocks("vision", c.depth_v);
  out.push_back({"vision.ln_post.g", {E}, WeightInit::ones});
  out.push_back({"vision.ln_post.b", {E}, WeightInit::zeros});
  out.push_back({"vision.proj", {E, c.latent_dim}});
  out.push_back({"text.pos", {c.text_len, E}});
  blocks("text", c.depth_t);
  out.push_back({"text.ln_final.g", {E}, WeightInit::ones});
  out.push_back({"text.ln_final.b", {E}, WeightInit::zeros});
  out.push_back({"text.proj", {E, c.latent_dim}});
  return out;
}

/// Deterministic random pack. Vocabulary rows beyond `words` are named <unused-N>.
inline EncoderPack init_pack(const EncoderConfig& config, std::uint64_t seed,
                             const std::vector<std::string>& words = toy_vocabulary()) {
  if (auto v = config.violations(); !v.empty()) throw config_error(v.front());
  if (words.size() > config.vocab_size) {
    throw config_error("vocabulary has " + std::to_string(words.size()) +
                       " words but vocab_size is " + std::to_string(config.vocab_size));
  }
  constexpr double kStd = 0.02;
  Rng rng = Rng::stream(seed, "encoder-init");
  EncoderPack pack;
  pack.config = config;
  for (const auto& spec : weight_specs(config)) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case WeightInit::normal:
        for (auto& v : t.values()) v = rng.normal(0.0, kStd);
        break;
      case WeightInit::zeros:
        break;
      case WeightInit::ones:
        t.fill(1.0);
        break;
      case WeightInit::scaled_identity: {
        const std::size_t depth = spec.name.starts_with("vision.") ? config.depth_v : config.depth_t;
        const double s = 1.0 / std::sqrt(static_cast<double>(depth));
        for (std::size_t i = 0; i < t.dim(0); ++i) t.at(i, i) = s;
        break;
      }
    }
    auto& target = spec.name.starts_with("vision.") ? pack.vision_weights : pack.text_weights;
    target.emplace(spec.name, std::move(t));
  }
  pack.vocab_table = Tensor({config.vocab_size, config.embed_dim});
  for (auto& v : pack.vocab_table.values()) v = rng.normal(0.0, kStd);
  pack.vocab_words = words;
  for (std::size_t i = words.size(); i < config.vocab_size; ++i) {
    pack.vocab_words.push_back("<unused-" + std::to_string(i) + ">");
  }
  return pack;
}

inline constexpr char kPackMagic[] = "DFOPACK1";

namespace detail {

inline std::string encode_config_block(const EncoderConfig& c,
                                       const std::vector<std::string>& words) {
  io::ByteWriter w;
  for (auto v : {c.image_width, c.image_height, c.patch_size, c.latent_dim, c.embed_dim,
                 c.text_len, c.depth_v, c.depth_t, c.heads, c.vocab_size}) {
    w.u64(v);
  }
  w.u32(static_cast<std::uint32_t>(words.size()));
  for (const auto& s : words) w.str(s);
  return std::move(w.bytes());
}

inline std::pair<EncoderConfig, std::vector<std::string>> decode_config_block(
    std::string_view bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  EncoderConfig c;
  for (auto* f : {&c.image_width, &c.image_height, &c.patch_size, &c.latent_dim, &c.embed_dim,
                  &c.text_len, &c.depth_v, &c.depth_t, &c.heads, &c.vocab_size}) {
    *f = static_cast<std::size_t>(r.u64());
  }
  std::vector<std::string> words(r.u32());
  for (auto& s : words) s = r.str();
  return {c, std::move(words)};
}

}  // namespace detail

inline io::RecordFile pack_to_records(const EncoderPack& pack) {
  io::RecordFile f;
  f.magic = kPackMagic;
  f.header = detail::encode_config_block(pack.config, pack.vocab_words);
  pack.for_each_weight([&](const std::string& n, const Tensor& t) { f.tensors.push_back({n, t}); });
  return f;
}

/// Rebuilds a frozen pack; every tensor is checked against `expected`'s geometry.
inline EncoderPack pack_from_records(const io::RecordFile& f, const EncoderConfig& expected,
                                     const std::string& context) {
  auto [config, words] = detail::decode_config_block(f.header, context);
  auto check = [&](const std::string& name, const shape_t& want) -> const Tensor& {
    const Tensor* t = f.find(name);
    if (!t) throw format_error(context + ": missing tensor '" + name + "'");
    if (t->shape() != want) {
      throw dimension_error(context + ": tensor '" + name + "' has shape " +
                            shape_str(t->shape()) + ", expected " + shape_str(want));
    }
    return *t;
  };
  EncoderPack pack;
  pack.config = expected;
  for (const auto& spec : weight_specs(expected)) {
    auto& target = spec.name.starts_with("vision.") ? pack.vision_weights : pack.text_weights;
    target.emplace(spec.name, check(spec.name, spec.shape));
  }
  pack.vocab_table = check("vocab_table", {expected.vocab_size, expected.embed_dim});
  if (config != expected) {
    throw dimension_error(context + ": config block disagrees with the expected encoder config");
  }
  if (words.size() != expected.vocab_size || words[kPadRow] != "<pad>" ||
      words[kUnkRow] != "<unk>") {
    throw format_error(context + ": vocabulary block inconsistent with vocab_size");
  }
  pack.vocab_words = std::move(words);
  pack.frozen = true;
  return pack;
}

inline void save_pack(const EncoderPack& pack, const std::filesystem::path& path) {
  io::save(path, pack_to_records(pack));
}

inline EncoderPack load_pack(const std::filesystem::path& path, const EncoderConfig& expected) {
  return pack_from_records(io::load(path, kPackMagic), expected, path.string());
}

/// Loads using the geometry recorded in the file itself.
inline EncoderPack load_pack(const std::filesystem::path& path) {
  auto f = io::load(path, kPackMagic);
  auto config = detail::decode_config_block(f.header, path.string()).first;
  if (auto v = config.violations(); !v.empty()) throw format_error(path.string() + ": " + v.front());
  return pack_from_records(f, config, path.string());
}

}  // namespace defo
