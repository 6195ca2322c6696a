#pragma once

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "defo/cli/experiment.hpp"
#include "defo/datastore/checkpoint.hpp"
#include "defo/evalkit/interpret.hpp"
#include "defo/numcore/op_suite.hpp"
#include "defo/protocols/defo_gradcheck.hpp"
#include "defo/trainer/trainer.hpp"

namespace defo::cli {

enum ExitCode { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4, kIo = 5 };

enum class LogLevel { quiet, info, debug };

struct Log {
  LogLevel level = LogLevel::info;
  std::ostream* err = &std::cerr;

  static Log from_env() {
    Log l;
    if (const char* v = std::getenv("DEFO_LOG")) {
      const std::string s = v;
      if (s == "quiet") l.level = LogLevel::quiet;
      else if (s == "debug") l.level = LogLevel::debug;
    }
    return l;
  }
  void info(const std::string& m) const {
    if (level != LogLevel::quiet) *err << "[defo] " << m << '\n';
  }
  void debug(const std::string& m) const {
    if (level == LogLevel::debug) *err << "[defo:debug] " << m << '\n';
  }
};

/// Artifact locations under the output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data(const std::string& split) const { return root / "data" / split; }
  std::filesystem::path pack() const { return root / "pack.bin"; }
  std::filesystem::path run(const ExperimentConfig& c) const {
    std::string name(to_string(c.protocol.variant));
    if (c.train.shots) name += "-" + std::to_string(*c.train.shots) + "shot";
    return root / name;
  }
};

struct Context {
  ExperimentConfig config;
  Layout layout;
  Log log;
  std::ostream* out = &std::cout;
};

namespace detail {

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw io_error("cannot create directory " + p.string() + ": " + ec.message());
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  ensure_dir(p.parent_path());
  io::write_bytes(p, text);
}

inline EncoderPack require_pack(const Context& ctx) {
  const auto p = ctx.layout.pack();
  if (!std::filesystem::exists(p)) throw io_error(p.string() + " not found; run 'pretrain' first");
  return load_pack(p, ctx.config.encoder);
}

inline Dataset require_split(const Context& ctx, const std::string& split) {
  const auto d = ctx.layout.data(split);
  if (!std::filesystem::exists(d)) throw io_error(d.string() + " not found; run 'gen-data' first");
  auto data = load_dataset(d);
  if (data.class_names != ctx.config.protocol.class_names) {
    throw data_error(d.string() + ": class names differ from the config's data grammar");
  }
  return data;
}

inline Dataset training_set(const Context& ctx, std::uint64_t seed) {
  auto train = require_split(ctx, "train");
  if (ctx.config.train.shots) return sample_few_shot(train, *ctx.config.train.shots, seed);
  return train;
}

inline bool has_parameters(ProtocolState& s) {
  return is_trainable_variant(s.variant()) && !s.parameters().empty();
}

/// Builds the variant's state and trains it when it has anything to learn.
inline ProtocolState fit(const Context& ctx, const EncoderPack& pack, const ProtocolConfig& pc,
                         std::uint64_t seed, const Dataset& train) {
  ProtocolState s = make_state(pack, pc, seed);
  if (!has_parameters(s)) return s;
  TrainConfig tc = ctx.config.train;
  tc.seed = seed;
  Trainer t(pack, s, train, tc);
  while (t.epoch() < tc.epochs) {
    auto r = t.run_epoch();
    ctx.log.debug(std::string(to_string(pc.variant)) + " epoch " + std::to_string(r.epoch) +
                  " loss " + io::format_double(r.loss));
  }
  return s;
}

inline std::string metrics_text(const EvalReport& r, const std::vector<std::string>& names) {
  std::string s;
  s += "n = " + std::to_string(r.n) + "\n";
  s += "top1 = " + format_sig6(r.top1) + "\n";
  s += "top5 = " + format_sig6(r.top5) + "\n";
  s += "classwise_std = " + format_sig6(r.classwise_std) + "\n";
  for (std::size_t c = 0; c < r.k(); ++c) s += "acc." + names[c] + " = " + format_sig6(r.per_class[c]) + "\n";
  return s;
}

inline std::string confusion_csv(const EvalReport& r, const std::vector<std::string>& names) {
  std::string s = "true\\predicted";
  for (const auto& n : names) s += "," + n;
  s += "\n";
  for (std::size_t t = 0; t < r.k(); ++t) {
    s += names[t];
    for (std::size_t p = 0; p < r.k(); ++p) s += "," + std::to_string(r.count(t, p));
    s += "\n";
  }
  return s;
}

inline std::string jsonl(const std::vector<double>& losses) {
  std::string s;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    nlohmann::ordered_json j;
    j["epoch"] = i + 1;
    j["loss"] = losses[i];
    s += j.dump() + "\n";
  }
  return s;
}

}  // namespace detail

inline int cmd_gen_data(const Context& ctx) {
  const auto& c = ctx.config;
  struct Split {
    const char* name;
    std::size_t n;
  };
  for (const auto& [name, n] : {Split{"train", c.data.n_train}, Split{"test", c.data.n_test},
                                Split{"pretrain", c.data.n_pretrain}}) {
    ToySpec spec = c.data.spec;
    spec.split = name;
    auto d = generate_toy_dataset(spec, n, c.seed);
    save_dataset(d, ctx.layout.data(name));
    ctx.log.info("wrote " + std::to_string(n) + " " + name + " examples to " + ctx.layout.data(name).string());
  }
  detail::write_file(ctx.layout.root / "config.txt", render_experiment(c));
  return kOk;
}

inline int cmd_pretrain(const Context& ctx) {
  const auto& c = ctx.config;
  auto pairs = detail::require_split(ctx, "pretrain");
  auto pack = init_pack(c.encoder, c.seed);
  ctx.log.info("pretraining on " + std::to_string(pairs.size()) + " pairs for " +
               std::to_string(c.pretrain.epochs) + " epochs");
  auto report = contrastive_pretrain(pack, pairs, c.pretrain);
  detail::ensure_dir(ctx.layout.root);
  save_pack(pack, ctx.layout.pack());
  detail::write_file(ctx.layout.root / "pretrain.jsonl", detail::jsonl(report.epoch_loss));
  *ctx.out << "pretrain: final loss " << format_sig6(report.epoch_loss.back()) << "\n";
  return kOk;
}

inline int cmd_train(const Context& ctx) {
  const auto& c = ctx.config;
  if (!is_trainable_variant(c.protocol.variant)) {
    throw config_error(std::string(to_string(c.protocol.variant)) + " has nothing to train; use 'eval'");
  }
  auto pack = detail::require_pack(ctx);
  auto train = detail::training_set(ctx, c.seed);
  auto state = make_state(pack, c.protocol, c.seed);
  Trainer t(pack, state, train, c.train, experiment_digest(c));
  ctx.log.info("training " + std::string(to_string(c.protocol.variant)) + " on " +
               std::to_string(train.size()) + " examples");
  while (t.epoch() < c.train.epochs) {
    auto r = t.run_epoch();
    ctx.log.debug("epoch " + std::to_string(r.epoch) + " loss " + io::format_double(r.loss) +
                  " train_acc " + io::format_double(r.train_acc));
  }
  const auto dir = ctx.layout.run(c);
  detail::ensure_dir(dir);
  save_checkpoint(t.checkpoint(), dir / "checkpoint.bin");
  detail::write_file(dir / "train.jsonl", TrainReport{t.history(), t.step()}.lines());
  *ctx.out << "train: " << to_string(c.protocol.variant) << " final train_acc "
           << format_sig6(t.history().back().train_acc) << "\n";
  return kOk;
}

/// The configured protocol's state: trained tensors from the checkpoint when it has any.
inline ProtocolState load_state(const Context& ctx, const EncoderPack& pack) {
  const auto& c = ctx.config;
  auto state = make_state(pack, c.protocol, c.seed);
  if (!detail::has_parameters(state)) return state;
  const auto path = ctx.layout.run(c) / "checkpoint.bin";
  if (!std::filesystem::exists(path)) throw io_error(path.string() + " not found; run 'train' first");
  restore_state(state, load_checkpoint(path, c.protocol.variant, experiment_digest(c)));
  return state;
}

inline int cmd_eval(const Context& ctx) {
  const auto& c = ctx.config;
  auto pack = detail::require_pack(ctx);
  auto test = detail::require_split(ctx, "test");
  Predictor p(pack, load_state(ctx, pack));
  auto r = evaluate(p, pack, test, true);
  const auto dir = ctx.layout.run(c);
  detail::write_file(dir / "metrics.txt", detail::metrics_text(r, test.class_names));
  detail::write_file(dir / "confusion.csv", detail::confusion_csv(r, test.class_names));
  detail::write_file(dir / "top5.csv", top5_csv(r.predictions, test));
  *ctx.out << "eval: " << to_string(c.protocol.variant) << " top1 " << format_sig6(r.top1) << " top5 "
           << format_sig6(r.top5) << " classwise_std " << format_sig6(r.classwise_std) << "\n";
  return kOk;
}

inline int cmd_interpret(const Context& ctx) {
  const auto& c = ctx.config;
  if (c.protocol.variant != Variant::defo && c.protocol.variant != Variant::target_opt) {
    throw config_error("interpret needs a query bank (protocol defo or target-opt)");
  }
  auto pack = detail::require_pack(ctx);
  auto state = load_state(ctx, pack);
  auto in = interpret_queries(state.bank, pack);
  const auto dir = ctx.layout.run(c);
  detail::write_file(dir / "interpret.csv", interpretation_csv(in));
  const auto text = render_interpretation(in);
  detail::write_file(dir / "interpret.txt", text);
  *ctx.out << text;
  return kOk;
}

inline int cmd_gradcheck(const Context& ctx) {
  const auto& c = ctx.config;
  std::string report = "check,seed,max_rel_error\n";
  double ops = 0.0, e2e = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    for (const auto& e : op_gradcheck_suite(c.seed + s)) {
      ops = std::max(ops, e.error);
      ctx.log.debug(e.name + " " + format_sig6(e.error));
    }
  }
  report += "ops,all," + format_sig6(ops) + "\n";
  const auto pack = std::filesystem::exists(ctx.layout.pack()) ? load_pack(ctx.layout.pack(), c.encoder)
                                                                : init_pack(c.encoder, c.seed);
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto r = defo_gradcheck(pack, c.seed + s, 2);
    report += "defo.bank," + std::to_string(c.seed + s) + "," + format_sig6(r.bank_error) + "\n";
    report += "defo.weight," + std::to_string(c.seed + s) + "," + format_sig6(r.weight_error) + "\n";
    e2e = std::max(e2e, r.max());
  }
  detail::write_file(ctx.layout.root / "gradcheck.csv", report);
  *ctx.out << "gradcheck: ops max rel err " << format_sig6(ops) << " (limit 1e-05), end-to-end "
           << format_sig6(e2e) << " (limit 0.0001)\n";
  if (!(ops < 1e-5) || !(e2e < 1e-4)) throw numeric_error("gradcheck exceeded tolerance");
  return kOk;
}

struct CompareRow {
  Variant variant;
  std::vector<EvalReport> per_seed;

  double mean(double EvalReport::*m) const {
    double s = 0.0;
    for (const auto& r : per_seed) s += r.*m;
    return s / double(per_seed.size());
  }
};

/// All six protocols under the configured seed set, evaluated on the test split.
inline std::vector<CompareRow> run_compare(const Context& ctx, const EncoderPack& pack,
                                           const Dataset& test) {
  const auto& c = ctx.config;
  std::vector<CompareRow> rows;
  for (auto v : kAllVariants) rows.push_back({v, {}});
  const Tensor feats = encode_images(pack, test.images.values(), test.size());
  for (auto seed : c.seeds()) {
    const auto train = detail::training_set(ctx, seed);
    for (auto& row : rows) {
      ProtocolConfig pc = c.protocol;
      pc.variant = row.variant;
      ctx.log.info("compare: seed " + std::to_string(seed) + " " + std::string(to_string(row.variant)));
      Predictor p(pack, detail::fit(ctx, pack, pc, seed, train));
      const Tensor probs = p.probabilities(feats);
      std::vector<Prediction> preds;
      for (std::size_t i = 0; i < test.size(); ++i) preds.push_back(make_prediction(probs.row(i)));
      row.per_seed.push_back(evaluate_predictions(std::move(preds), test.labels, test.k()));
    }
  }
  return rows;
}

inline int cmd_compare(const Context& ctx) {
  auto pack = detail::require_pack(ctx);
  auto test = detail::require_split(ctx, "test");
  auto rows = run_compare(ctx, pack, test);
  const auto seeds = ctx.config.seeds();

  std::string csv = "protocol,top1,top5,classwise_std,seeds\n";
  std::string per_seed = "protocol,seed,top1,top5,classwise_std\n";
  std::ostringstream table;
  table << "protocol        top1      top5      classwise_std\n";
  for (const auto& r : rows) {
    const std::string name(to_string(r.variant));
    const auto t1 = r.mean(&EvalReport::top1), t5 = r.mean(&EvalReport::top5),
               sd = r.mean(&EvalReport::classwise_std);
    csv += name + "," + format_sig6(t1) + "," + format_sig6(t5) + "," + format_sig6(sd) + "," +
           std::to_string(seeds.size()) + "\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto& e = r.per_seed[i];
      per_seed += name + "," + std::to_string(seeds[i]) + "," + format_sig6(e.top1) + "," +
                  format_sig6(e.top5) + "," + format_sig6(e.classwise_std) + "\n";
    }
    char line[128];
    std::snprintf(line, sizeof line, "%-14s  %-8s  %-8s  %s\n", name.c_str(), format_sig6(t1).c_str(),
                  format_sig6(t5).c_str(), format_sig6(sd).c_str());
    table << line;
  }
  const auto suffix = ctx.config.train.shots ? "-" + std::to_string(*ctx.config.train.shots) + "shot" : "";
  detail::write_file(ctx.layout.root / ("compare" + suffix + ".csv"), csv);
  detail::write_file(ctx.layout.root / ("compare" + suffix + "_seeds.csv"), per_seed);
  detail::write_file(ctx.layout.root / ("compare" + suffix + ".txt"), table.str());
  *ctx.out << table.str();
  return kOk;
}

/// Parses flags, loads the config, runs one command; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Prompt-tuning laboratory on a miniature dual encoder"};
  app.require_subcommand(1);
  std::string config_path, out_dir, protocol;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> shots;
  auto add_common = [&](CLI::App* sub, bool with_protocol) {
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out_dir, "overrides the config output directory");
    if (with_protocol) {
      sub->add_option("--protocol", protocol,
                      "zero-shot, ensemble, linear-probe, coop, target-opt or defo");
      sub->add_option("--shots", shots, "few-shot examples per class (1, 2, 4, 8, 16)");
    }
  };
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Context&);
    bool with_protocol;
  };
  const Cmd cmds[] = {
      {"gen-data", "generate train/test/pretrain toy splits", cmd_gen_data, false},
      {"pretrain", "contrastively pretrain and freeze the encoder pack", cmd_pretrain, false},
      {"train", "train one protocol", cmd_train, true},
      {"eval", "evaluate one protocol on the test split", cmd_eval, true},
      {"interpret", "nearest vocabulary words for learned query slots", cmd_interpret, true},
      {"gradcheck", "finite-difference check of every op and the DeFo loss", cmd_gradcheck, false},
      {"compare", "run all six protocols and tabulate test metrics", cmd_compare, true},
  };
  std::vector<std::pair<CLI::App*, const Cmd*>> subs;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, c.with_protocol);
    subs.push_back({sub, &c});
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  Log log = Log::from_env();
  log.err = &err;
  try {
    auto cfg = load_experiment(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output = out_dir;
    if (!protocol.empty()) {
      auto v = parse_variant(protocol);
      if (!v) throw config_error("unknown protocol '" + protocol + "'");
      cfg.protocol.variant = *v;
    }
    if (shots) cfg.train.shots = *shots;
    finalize(cfg);
    if (auto v = cfg.violations(); !v.empty()) throw config_error(defo::detail::join(v, "\n"));
    Context ctx{cfg, Layout{cfg.output}, log, &out};
    for (const auto& [sub, cmd] : subs)
      if (sub->parsed()) return cmd->fn(ctx);
    return kConfig;
  } catch (const config_error& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const data_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const dimension_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const numeric_error& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const io_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const format_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  }
}

}  // namespace defo::cli
