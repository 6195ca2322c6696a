#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "defo/io/keyvalue.hpp"
#include "defo/io/records.hpp"
#include "defo/trainer/sgd.hpp"

namespace defo {

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Training state sufficient to resume bit-exactly.
struct Checkpoint {
  ProtocolState state;  // config holds only the variant; tensors and masks are complete
  OptimizerState optimizer;
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string config_digest;
  std::map<std::string, std::string> rng_states;
  std::vector<EpochRecord> history;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.state.variant() == b.state.variant() && a.state.bank == b.state.bank &&
           a.state.head == b.state.head && a.state.probe == b.state.probe &&
           a.state.prompt == b.state.prompt && a.optimizer == b.optimizer && a.step == b.step &&
           a.epoch == b.epoch && a.config_digest == b.config_digest &&
           a.rng_states == b.rng_states && a.history == b.history;
  }
};

enum class DigestPolicy { fail, warn, ignore };

inline constexpr char kCheckpointMagic[] = "DFOCKPT1";

namespace detail {

template <class Int>
Tensor ints_to_tensor(const std::vector<Int>& v, shape_t shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<double>(v[i]);
  return t;
}

template <class Int>
std::vector<Int> tensor_to_ints(const Tensor& t) {
  std::vector<Int> out;
  for (double v : t.values()) out.push_back(static_cast<Int>(v));
  return out;
}

}  // namespace detail

inline io::RecordFile checkpoint_to_records(const Checkpoint& ck) {
  io::RecordFile f;
  f.magic = kCheckpointMagic;
  io::KeyValueDoc h;
  h.set("", "variant", std::string(to_string(ck.state.variant())));
  h.set("", "step", std::to_string(ck.step));
  h.set("", "epoch", std::to_string(ck.epoch));
  h.set("", "config_digest", ck.config_digest);
  h.set("", "head.logit_scale", io::format_double(ck.state.head.logit_scale));
  for (const auto& [name, s] : ck.rng_states) h.set("rng", name, s);
  for (std::size_t i = 0; i < ck.history.size(); ++i) {
    const auto& r = ck.history[i];
    h.set("history", std::to_string(i),
          std::to_string(r.epoch) + "," + io::format_double(r.loss) + "," +
              io::format_double(r.train_acc));
  }
  f.header = h.str();

  auto put = [&](const std::string& name, const Tensor& t) {
    if (!t.empty()) f.tensors.push_back({name, t});
  };
  const auto& s = ck.state;
  put("bank.values", s.bank.values);
  if (!s.bank.values.empty()) {
    const shape_t slots{s.bank.n(), s.bank.m()};
    put("bank.trainable", detail::ints_to_tensor(s.bank.trainable, slots));
    put("bank.token_ids", detail::ints_to_tensor(s.bank.token_ids, slots));
  }
  put("head.weight", s.head.weight);
  if (!s.head.weight.empty()) put("head.frozen", detail::ints_to_tensor(s.head.frozen, s.head.weight.shape()));
  put("head.bias", s.head.bias);
  put("probe.weight", s.probe.weight);
  put("probe.bias", s.probe.bias);
  put("prompt.context", s.prompt.context);
  if (!s.prompt.name_rows.empty()) {
    put("prompt.name_rows",
        detail::ints_to_tensor(s.prompt.name_rows, shape_t{s.prompt.name_rows.size()}));
  }
  for (const auto& [name, v] : ck.optimizer.velocity) put("velocity." + name, v);
  return f;
}

inline Checkpoint checkpoint_from_records(const io::RecordFile& f, const std::string& ctx) {
  const auto h = io::KeyValueDoc::parse(f.header, ctx);
  Checkpoint ck;
  const auto variant = parse_variant(h.require("variant", ctx));
  if (!variant) throw format_error(ctx + ": unknown variant '" + h.require("variant", ctx) + "'");
  ck.state.config.variant = *variant;
  auto num = [&](const char* key) {
    auto v = io::parse_number<std::size_t>(h.require(key, ctx));
    if (!v) throw format_error(ctx + ": bad integer for " + key);
    return *v;
  };
  ck.step = num("step");
  ck.epoch = num("epoch");
  ck.config_digest = h.require("config_digest", ctx);
  ck.state.head.logit_scale =
      io::parse_number<double>(h.require("head.logit_scale", ctx)).value_or(1.0);
  for (const auto& e : h.entries()) {
    if (e.section == "rng") ck.rng_states[e.key] = e.value;
    if (e.section == "history") {
      auto parts = io::split_list(e.value);
      if (parts.size() != 3) throw format_error(ctx + ": malformed history entry");
      ck.history.push_back({io::parse_number<std::size_t>(parts[0]).value_or(0),
                            io::parse_number<double>(parts[1]).value_or(0.0),
                            io::parse_number<double>(parts[2]).value_or(0.0)});
    }
  }

  auto& s = ck.state;
  for (const auto& [name, t] : f.tensors) {
    if (name == "bank.values") s.bank.values = t;
    else if (name == "bank.trainable") s.bank.trainable = detail::tensor_to_ints<std::uint8_t>(t);
    else if (name == "bank.token_ids") s.bank.token_ids = detail::tensor_to_ints<long>(t);
    else if (name == "head.weight") s.head.weight = t;
    else if (name == "head.frozen") s.head.frozen = detail::tensor_to_ints<std::uint8_t>(t);
    else if (name == "head.bias") s.head.bias = t;
    else if (name == "probe.weight") s.probe.weight = t;
    else if (name == "probe.bias") s.probe.bias = t;
    else if (name == "prompt.context") s.prompt.context = t;
    else if (name == "prompt.name_rows") s.prompt.name_rows = detail::tensor_to_ints<long>(t);
    else if (name.starts_with("velocity.")) ck.optimizer.velocity[name.substr(9)] = t;
    else throw format_error(ctx + ": unexpected record '" + name + "'");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::save(path, checkpoint_to_records(ck));
}

/// Loads and checks the variant and, per `policy`, the config digest.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<Variant> expected_variant = std::nullopt,
                                  const std::string& expected_digest = "",
                                  DigestPolicy policy = DigestPolicy::fail) {
  const std::string ctx = path.string();
  auto ck = checkpoint_from_records(io::load(path, kCheckpointMagic), ctx);
  if (expected_variant && *expected_variant != ck.state.variant()) {
    throw config_error(ctx + ": checkpoint holds a " + std::string(to_string(ck.state.variant())) +
                       " head, expected " + std::string(to_string(*expected_variant)));
  }
  if (!expected_digest.empty() && expected_digest != ck.config_digest) {
    const std::string msg = ctx + ": config digest " + ck.config_digest +
                            " does not match the current config (" + expected_digest + ")";
    if (policy == DigestPolicy::fail) throw config_error(msg);
    if (policy == DigestPolicy::warn) std::cerr << "warning: " << msg << '\n';
  }
  return ck;
}

}  // namespace defo
