#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "defo/datastore/toy.hpp"
#include "defo/encoders/config.hpp"
#include "defo/io/keyvalue.hpp"
#include "defo/io/records.hpp"
#include "defo/protocols/state.hpp"
#include "defo/trainer/pretrain.hpp"
#include "defo/trainer/sgd.hpp"

namespace defo {

struct DataConfig {
  ToySpec spec;
  std::size_t n_train = 600;
  std::size_t n_test = 300;
  std::size_t n_pretrain = 2400;
};

/// One declarative document per run.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> compare_seeds;  // empty: {seed}
  std::filesystem::path output = "runs/default";
  EncoderConfig encoder;
  DataConfig data;
  PretrainConfig pretrain;
  ProtocolConfig protocol;
  TrainConfig train;

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    auto add = [&](const std::vector<std::string>& v) { out.insert(out.end(), v.begin(), v.end()); };
    add(encoder.violations());
    add(data.spec.violations());
    add(pretrain.violations());
    add(protocol.violations());
    add(train.violations());
    if (data.spec.width != encoder.image_width || data.spec.height != encoder.image_height) {
      out.push_back("data image size must match encoder.image_width/image_height");
    }
    if (data.n_train < data.spec.k()) out.push_back("data.n_train must be at least the number of classes");
    if (data.n_test == 0) out.push_back("data.n_test must be positive");
    if (data.n_pretrain < 2) out.push_back("data.n_pretrain must be at least 2");
    return out;
  }

  std::vector<std::uint64_t> seeds() const {
    return compare_seeds.empty() ? std::vector<std::uint64_t>{seed} : compare_seeds;
  }
};

namespace detail {

template <class T>
std::string join(const std::vector<T>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    if constexpr (std::is_same_v<T, std::string>) out += v[i];
    else out += std::to_string(v[i]);
  }
  return out;
}

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

/// Binds `section.key` names to parse/format actions on an ExperimentConfig.
class Binder {
 public:
  using Parse = std::function<bool(ExperimentConfig&, const std::string&)>;
  using Format = std::function<std::string(const ExperimentConfig&)>;

  void bind(std::string section, std::string key, Parse p, Format f) {
    order_.push_back({section, key});
    fields_[{std::move(section), std::move(key)}] = {std::move(p), std::move(f)};
  }

  template <class Get>
  void size(const std::string& s, const std::string& k, Get get) {
    bind(s, k,
         [get](ExperimentConfig& c, const std::string& v) {
           auto n = io::parse_number<std::size_t>(v);
           if (!n) return false;
           get(c) = *n;
           return true;
         },
         [get](const ExperimentConfig& c) { return std::to_string(get(c)); });
  }

  template <class Get>
  void real(const std::string& s, const std::string& k, Get get) {
    bind(s, k,
         [get](ExperimentConfig& c, const std::string& v) {
           auto n = io::parse_number<double>(v);
           if (!n) return false;
           get(c) = *n;
           return true;
         },
         [get](const ExperimentConfig& c) { return io::format_double(get(c)); });
  }

  template <class Get>
  void flag(const std::string& s, const std::string& k, Get get) {
    bind(s, k,
         [get](ExperimentConfig& c, const std::string& v) {
           auto b = io::parse_bool(v);
           if (!b) return false;
           get(c) = *b;
           return true;
         },
         [get](const ExperimentConfig& c) { return bool_str(get(c)); });
  }

  template <class Get>
  void words(const std::string& s, const std::string& k, Get get, char sep = ',') {
    bind(s, k,
         [get, sep](ExperimentConfig& c, const std::string& v) {
           get(c) = io::split_list(v, sep);
           return true;
         },
         [get, sep](const ExperimentConfig& c) {
           return join(get(c), std::string(1, sep) + " ");
         });
  }

  template <class Get>
  void text(const std::string& s, const std::string& k, Get get) {
    bind(s, k,
         [get](ExperimentConfig& c, const std::string& v) {
           get(c) = v;
           return true;
         },
         [get](const ExperimentConfig& c) { return std::string(get(c)); });
  }

  /// Applies every entry; returns one message per problem.
  std::vector<std::string> apply(const io::KeyValueDoc& doc, ExperimentConfig& c,
                                 const std::string& ctx) const {
    std::vector<std::string> out;
    for (const auto& e : doc.entries()) {
      const std::string name = e.section.empty() ? e.key : e.section + "." + e.key;
      const std::string where = ctx + ":" + std::to_string(e.line) + ": ";
      auto it = fields_.find({e.section, e.key});
      if (it == fields_.end()) out.push_back(where + "unknown key '" + name + "'");
      else if (!it->second.first(c, e.value)) out.push_back(where + "invalid value '" + e.value + "' for " + name);
    }
    return out;
  }

  std::string render(const ExperimentConfig& c) const {
    std::string out, section;
    for (const auto& [s, k] : order_) {
      if (s != section) {
        out += "\n[" + s + "]\n";
        section = s;
      }
      out += k + " = " + fields_.at({s, k}).second(c) + "\n";
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> order_;
  std::map<std::pair<std::string, std::string>, std::pair<Parse, Format>> fields_;
};

inline const Binder& experiment_binder() {
  static const Binder b = [] {
    Binder b;
    using C = ExperimentConfig;
    b.bind("", "seed",
           [](C& c, const std::string& v) {
             auto n = io::parse_number<std::uint64_t>(v);
             if (n) c.seed = *n;
             return n.has_value();
           },
           [](const C& c) { return std::to_string(c.seed); });
    b.bind("", "compare_seeds",
           [](C& c, const std::string& v) {
             c.compare_seeds.clear();
             for (const auto& s : io::split_list(v)) {
               auto n = io::parse_number<std::uint64_t>(s);
               if (!n) return false;
               c.compare_seeds.push_back(*n);
             }
             return true;
           },
           [](const C& c) { return join(c.compare_seeds, ", "); });
    b.text("", "output", [](auto& c) -> auto& { return c.output; });

    b.size("encoder", "image_width", [](auto& c) -> auto& { return c.encoder.image_width; });
    b.size("encoder", "image_height", [](auto& c) -> auto& { return c.encoder.image_height; });
    b.size("encoder", "patch_size", [](auto& c) -> auto& { return c.encoder.patch_size; });
    b.size("encoder", "latent_dim", [](auto& c) -> auto& { return c.encoder.latent_dim; });
    b.size("encoder", "embed_dim", [](auto& c) -> auto& { return c.encoder.embed_dim; });
    b.size("encoder", "text_len", [](auto& c) -> auto& { return c.encoder.text_len; });
    b.size("encoder", "depth_v", [](auto& c) -> auto& { return c.encoder.depth_v; });
    b.size("encoder", "depth_t", [](auto& c) -> auto& { return c.encoder.depth_t; });
    b.size("encoder", "heads", [](auto& c) -> auto& { return c.encoder.heads; });
    b.size("encoder", "vocab_size", [](auto& c) -> auto& { return c.encoder.vocab_size; });

    b.words("data", "shapes", [](auto& c) -> auto& { return c.data.spec.shapes; });
    b.words("data", "colors", [](auto& c) -> auto& { return c.data.spec.colors; });
    b.words("data", "textures", [](auto& c) -> auto& { return c.data.spec.textures; });
    b.real("data", "noise", [](auto& c) -> auto& { return c.data.spec.noise; });
    b.size("data", "n_train", [](auto& c) -> auto& { return c.data.n_train; });
    b.size("data", "n_test", [](auto& c) -> auto& { return c.data.n_test; });
    b.size("data", "n_pretrain", [](auto& c) -> auto& { return c.data.n_pretrain; });

    b.size("pretrain", "epochs", [](auto& c) -> auto& { return c.pretrain.epochs; });
    b.size("pretrain", "batch_size", [](auto& c) -> auto& { return c.pretrain.batch_size; });
    b.real("pretrain", "learning_rate", [](auto& c) -> auto& { return c.pretrain.learning_rate; });
    b.real("pretrain", "beta1", [](auto& c) -> auto& { return c.pretrain.beta1; });
    b.real("pretrain", "beta2", [](auto& c) -> auto& { return c.pretrain.beta2; });
    b.real("pretrain", "weight_decay", [](auto& c) -> auto& { return c.pretrain.weight_decay; });
    b.real("pretrain", "tau", [](auto& c) -> auto& { return c.pretrain.tau; });

    b.bind("protocol", "variant",
           [](C& c, const std::string& v) {
             auto p = parse_variant(v);
             if (p) c.protocol.variant = *p;
             return p.has_value();
           },
           [](const C& c) { return std::string(to_string(c.protocol.variant)); });
    b.real("protocol", "tau", [](auto& c) -> auto& { return c.protocol.tau; });
    b.words("protocol", "templates", [](auto& c) -> auto& { return c.protocol.templates; }, '|');
    b.size("protocol", "coop_prefix_len", [](auto& c) -> auto& { return c.protocol.coop_prefix_len; });
    b.flag("protocol", "coop_shared_prefix", [](auto& c) -> auto& { return c.protocol.coop_shared_prefix; });
    b.text("protocol", "coop_init_text", [](auto& c) -> auto& { return c.protocol.coop_init_text; });
    b.size("protocol", "target_name_len", [](auto& c) -> auto& { return c.protocol.target_name_len; });
    b.flag("protocol", "target_init_from_names", [](auto& c) -> auto& { return c.protocol.target_init_from_names; });
    b.size("protocol", "n_queries", [](auto& c) -> auto& { return c.protocol.n_queries; });
    b.bind("protocol", "bank_init",
           [](C& c, const std::string& v) {
             auto p = parse_bank_init(v);
             if (p) c.protocol.bank_init = *p;
             return p.has_value();
           },
           [](const C& c) { return std::string(to_string(c.protocol.bank_init)); });
    b.size("protocol", "seeded_prefix_len", [](auto& c) -> auto& { return c.protocol.seeded_prefix_len; });
    b.flag("protocol", "identity_block", [](auto& c) -> auto& { return c.protocol.identity_block; });
    b.flag("protocol", "freeze_queries", [](auto& c) -> auto& { return c.protocol.freeze_queries; });
    b.real("protocol", "logit_scale", [](auto& c) -> auto& { return c.protocol.logit_scale; });
    b.real("protocol", "head_init_std", [](auto& c) -> auto& { return c.protocol.head_init_std; });
    b.flag("protocol", "head_bias", [](auto& c) -> auto& { return c.protocol.head_bias; });
    b.flag("protocol", "probe_bias", [](auto& c) -> auto& { return c.protocol.probe_bias; });

    b.size("train", "batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    b.real("train", "learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; });
    b.real("train", "momentum", [](auto& c) -> auto& { return c.train.momentum; });
    b.real("train", "weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; });
    b.size("train", "epochs", [](auto& c) -> auto& { return c.train.epochs; });
    b.bind("train", "shots",
           [](C& c, const std::string& v) {
             if (v == "all") {
               c.train.shots.reset();
               return true;
             }
             auto n = io::parse_number<std::size_t>(v);
             if (n) c.train.shots = *n;
             return n.has_value();
           },
           [](const C& c) { return c.train.shots ? std::to_string(*c.train.shots) : std::string("all"); });
    b.flag("train", "augmentation", [](auto& c) -> auto& { return c.train.augmentation; });
    b.flag("train", "cosine_schedule", [](auto& c) -> auto& { return c.train.cosine_schedule; });
    return b;
  }();
  return b;
}

}  // namespace detail

/// Fills derived fields: class names from the data grammar, image size from the encoder.
inline void finalize(ExperimentConfig& c) {
  c.protocol.class_names = c.data.spec.class_names();
  c.data.spec.width = c.encoder.image_width;
  c.data.spec.height = c.encoder.image_height;
  c.train.seed = c.seed;
  c.pretrain.seed = c.seed;
}

/// Parses and validates; a config_error lists every problem, one per line.
inline ExperimentConfig parse_experiment(std::string_view text, const std::string& ctx) {
  ExperimentConfig c;
  auto doc = io::KeyValueDoc::parse(text, ctx);
  auto problems = detail::experiment_binder().apply(doc, c, ctx);
  finalize(c);
  for (auto& v : c.violations()) problems.push_back(ctx + ": " + v);
  if (!problems.empty()) throw config_error(detail::join(problems, "\n"));
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(io::read_bytes(path), path.string());
}

/// Canonical text of every setting; parses back to the same config.
inline std::string render_experiment(const ExperimentConfig& c) {
  return detail::experiment_binder().render(c);
}

/// Digest of everything that shapes results; the output directory is excluded.
inline std::string experiment_digest(const ExperimentConfig& c) {
  ExperimentConfig d = c;
  d.output.clear();
  return io::fnv1a_hex(render_experiment(d));
}

}  // namespace defo
