// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <unistd.h>

#include "defo/cli/commands.hpp"

using namespace defo;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << detail << std::endl;
  failures += pass ? 0 : 1;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double accuracy(const EncoderPack& pack, const ProtocolState& s, const Tensor& feats, const Dataset& test) {
  Predictor p(pack, s);
  const Tensor z = p.logits(feats);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) hits += argmax(z.row(i)) == test.labels[i];
  return double(hits) / double(test.size());
}

std::string checkpoint_bytes(const Checkpoint& ck) { return io::encode(checkpoint_to_records(ck)); }

struct Lab {
  cli::Context ctx;
  EncoderPack pack;
  Dataset train, test;
  Tensor test_feats;
  double pretrain_seconds = 0.0;
};

ProtocolConfig protocol(const Lab& lab, Variant v) {
  ProtocolConfig pc = lab.ctx.config.protocol;
  pc.variant = v;
  return pc;
}

void criterion1(const Lab& lab) {
  const auto t0 = clock_type::now();
  double ops = 0.0, e2e = 0.0;
  std::string worst;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& e : op_gradcheck_suite(seed)) {
      if (e.error > ops) worst = e.name;
      ops = std::max(ops, e.error);
    }
    e2e = std::max(e2e, defo_gradcheck(lab.pack, seed, 2).max());
  }
  const double t = seconds_since(t0);
  report(1, ops < 1e-5 && e2e < 1e-4 && t < 120.0, "gradient suite",
         "ops max rel err " + fmt("%.2e", ops) + " (" + worst + ", limit 1e-5), end-to-end DeFo " +
             fmt("%.2e", e2e) + " (limit 1e-4), 10 seeds, " + fmt("%.1f", t) + " s (limit 120 s)");
}

void criterion2(const Lab& lab) {
  ProtocolConfig zs = protocol(lab, Variant::zero_shot);
  const std::size_t k = zs.k();
  const QueryBank bank = zero_shot_bank(lab.pack, zs, zs.templates.front());
  ClassifierHead head;
  head.weight = Tensor::identity(k);
  head.frozen.assign(k * k, 1);
  head.logit_scale = 1.0 / zs.tau;
  Rng rng(2024);
  const auto& c = lab.pack.config;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Tensor img({c.image_width, c.image_height, 3});
    for (auto& v : img.values()) v = rng.uniform();
    const auto a = defo_predict(lab.pack, zs, bank, head, img);
    const auto b = zero_shot_predict(lab.pack, zs, img);
    worst = std::max(worst, max_abs_diff(a.probabilities, b.probabilities));
  }
  report(2, worst <= 1e-10, "zero-shot reduction (n=k, W=I frozen, scale 1/tau)",
         "max |dp| " + fmt("%.2e", worst) + " over 100 random images (limit 1e-10)");
}

void criterion3(const Lab& lab) {
  double worst = 0.0;
  std::string detail;
  for (std::size_t prefix : {std::size_t{1}, std::size_t{4}}) {
    ProtocolConfig pc = protocol(lab, Variant::defo);
    pc.bank_init = BankInit::class_name_seeded;
    pc.identity_block = true;
    pc.seeded_prefix_len = prefix;
    pc.n_queries = 16;
    ProtocolState defo = make_state(lab.pack, pc, 0);
    ProtocolState retrieval;
    retrieval.config = protocol(lab, Variant::target_opt);
    retrieval.bank = take_queries(defo.bank, pc.k());
    Predictor a(lab.pack, defo), b(lab.pack, retrieval);
    const double d = max_abs_diff(a.probabilities(lab.test_feats), b.probabilities(lab.test_feats));
    worst = std::max(worst, d);
    detail += (detail.empty() ? "" : ", ") + std::string("prefix ") + std::to_string(prefix) + " max |dp| " +
              fmt("%.2e", d);
  }
  report(3, worst <= 1e-10, "step-0 few-shot anchor",
         detail + " over " + std::to_string(lab.test.size()) + " test images (limit 1e-10)");
}

void criterion4(const Lab& lab) {
  const auto t0 = clock_type::now();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset few = sample_few_shot(lab.train, 1, seed);
    TrainConfig tc = lab.ctx.config.train;
    tc.seed = seed;
    ProtocolState lp = make_state(lab.pack, protocol(lab, Variant::linear_probe), seed);
    train_protocol(lab.pack, lp, few, tc);
    ProtocolConfig dc = protocol(lab, Variant::defo);
    dc.bank_init = BankInit::class_name_seeded;
    dc.identity_block = true;
    ProtocolState df = make_state(lab.pack, dc, seed);
    train_protocol(lab.pack, df, few, tc);
    const double a_lp = accuracy(lab.pack, lp, lab.test_feats, lab.test);
    const double a_df = accuracy(lab.pack, df, lab.test_feats, lab.test);
    wins += a_df >= a_lp;
    detail += " s" + std::to_string(seed) + " " + fmt("%.3f", a_df) + "/" + fmt("%.3f", a_lp);
  }
  const double t = seconds_since(t0) + lab.pretrain_seconds;
  report(4, wins >= 4 && t < 600.0, "1-shot DeFo >= 1-shot linear probe",
         std::to_string(wins) + "/5 seeds (need 4); defo/lp:" + detail + "; " + fmt("%.1f", t) +
             " s incl. pretraining (limit 600 s)");
}

Tensor mean_rows(const std::vector<cli::CompareRow>& rows, Variant v) {
  for (const auto& r : rows)
    if (r.variant == v) {
      Tensor t({r.per_seed.size()});
      for (std::size_t i = 0; i < r.per_seed.size(); ++i) t[i] = r.per_seed[i].top1;
      return t;
    }
  throw std::logic_error("missing row");
}

std::vector<cli::CompareRow> criterion5(const Lab& lab) {
  auto rows = cli::run_compare(lab.ctx, lab.pack, lab.test);
  const Tensor zs = mean_rows(rows, Variant::zero_shot), co = mean_rows(rows, Variant::coop),
               df = mean_rows(rows, Variant::defo);
  int ordered = 0;
  std::string detail;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const bool ok = co[i] >= zs[i] - 0.01 && df[i] >= co[i] - 0.01;
    ordered += ok;
    detail += " s" + std::to_string(i) + " " + fmt("%.3f", zs[i]) + "<=" + fmt("%.3f", co[i]) + "<=" +
              fmt("%.3f", df[i]);
  }
  report(5, ordered >= 4, "ordering zero-shot <= CoOp <= DeFo (1-pt band, full train split)",
         std::to_string(ordered) + "/" + std::to_string(zs.size()) + " seeds (need 4); zs<=coop<=defo:" + detail);
  return rows;
}

void criterion6(const Lab& lab) {
  const std::size_t ns[] = {4, 8, 16, 32};
  std::vector<double> mean(4, 0.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig tc = lab.ctx.config.train;
    tc.seed = seed;
    for (std::size_t j = 0; j < 4; ++j) {
      ProtocolConfig dc = protocol(lab, Variant::defo);
      dc.n_queries = ns[j];
      ProtocolState s = make_state(lab.pack, dc, seed);
      train_protocol(lab.pack, s, lab.train, tc);
      mean[j] += accuracy(lab.pack, s, lab.test_feats, lab.test) / 5.0;
    }
  }
  bool ok = true;
  std::string detail;
  for (std::size_t j = 0; j < 4; ++j) {
    if (j > 0) ok = ok && mean[j] >= mean[j - 1] - 0.01;
    detail += " n" + std::to_string(ns[j]) + " " + fmt("%.4f", mean[j]);
  }
  report(6, ok, "query-size ablation non-decreasing (1-pt band, mean of 5 seeds)", detail.substr(1));
}

void criterion7(const Lab& lab) {
  ProtocolConfig dc = protocol(lab, Variant::defo);
  ProtocolState s = make_state(lab.pack, dc, 0);
  const std::size_t E = s.bank.embed_dim();
  std::vector<std::string> words = lab.ctx.config.data.spec.colors;
  for (const auto& w : lab.ctx.config.data.spec.shapes) words.push_back(w);
  bool planted = true;
  std::size_t slot = 0;
  for (const auto& w : words) {
    while (!s.bank.trainable[slot]) ++slot;
    const auto row = *lab.pack.row_of(w);
    std::copy_n(lab.pack.vocab_table.data() + row * E, E, s.bank.values.data() + slot * E);
    const auto in = interpret_queries(s.bank, lab.pack);
    planted = planted && in[slot].nearest().word == w && in[slot].nearest().distance == 0.0;
    ++slot;
  }

  // soft check on trained banks
  int seeds_with_grammar_word = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig tc = lab.ctx.config.train;
    tc.seed = seed;
    ProtocolState t = make_state(lab.pack, dc, seed);
    train_protocol(lab.pack, t, lab.train, tc);
    std::size_t hits = 0, slots = 0;
    for (const auto& si : interpret_queries(t.bank, lab.pack)) {
      if (!si.trainable) continue;
      ++slots;
      bool hit = false;
      for (const auto& nb : si.neighbors) hit = hit || std::find(words.begin(), words.end(), nb.word) != words.end();
      hits += hit;
    }
    seeds_with_grammar_word += hits > 0;
    detail += " s" + std::to_string(seed) + " " + std::to_string(hits) + "/" + std::to_string(slots);
  }
  report(7, planted, "interpretation planted recovery",
         std::string(planted ? "all " : "not all ") + std::to_string(words.size()) +
             " planted grammar words recovered at distance 0; soft check (not gated): " +
             std::to_string(seeds_with_grammar_word) + "/5 seeds (3 wanted) have a learned slot with a color/shape word in "
             "its top-5 (slots hit:" + detail + ")");
}

void criterion8(const Lab& lab, const std::filesystem::path& scratch) {
  bool ok = true;
  std::string detail;
  for (bool aug : {false, true}) {
    TrainConfig tc = lab.ctx.config.train;
    tc.epochs = aug ? 4 : 10;
    tc.augmentation = aug;
    const ProtocolConfig dc = protocol(lab, Variant::defo);
    auto full = [&] {
      ProtocolState s = make_state(lab.pack, dc, 0);
      Trainer t(lab.pack, s, lab.train, tc, "acceptance");
      auto r = t.run();
      return std::make_pair(checkpoint_bytes(t.checkpoint()), r.lines());
    };
    const auto a = full(), b = full();
    ProtocolState h = make_state(lab.pack, dc, 0);
    {
      Trainer first(lab.pack, h, lab.train, tc, "acceptance");
      first.run(tc.epochs / 2);
      save_checkpoint(first.checkpoint(), scratch / "half.bin");
    }
    ProtocolState r = make_state(lab.pack, dc, 0);
    Trainer second(lab.pack, r, lab.train, tc, "acceptance");
    second.restore(load_checkpoint(scratch / "half.bin", Variant::defo, "acceptance"));
    const auto rr = second.run();
    const bool rerun = a == b;
    const bool resume = checkpoint_bytes(second.checkpoint()) == a.first && rr.lines() == a.second;
    ok = ok && rerun && resume;
    detail += std::string(aug ? "; augmented " : "plain ") + std::to_string(tc.epochs) + " epochs: rerun " +
              (rerun ? "identical" : "DIFFERS") + ", resume at " + std::to_string(tc.epochs / 2) + " " +
              (resume ? "identical" : "DIFFERS");
  }

  // command level: the same train+eval twice gives identical files
  cli::Context ctx = lab.ctx;
  ctx.config.train.epochs = 5;
  std::ostringstream sink;
  ctx.out = &sink;
  const auto dir = ctx.layout.run(ctx.config);
  std::string first;
  bool cmd_same = true;
  for (int i = 0; i < 2; ++i) {
    cli::cmd_train(ctx);
    cli::cmd_eval(ctx);
    const std::string bytes = io::read_bytes(dir / "checkpoint.bin") + io::read_bytes(dir / "top5.csv") +
                              io::read_bytes(dir / "metrics.txt");
    if (i == 0) first = bytes;
    else cmd_same = bytes == first;
  }
  ok = ok && cmd_same;
  detail += std::string("; train+eval commands ") + (cmd_same ? "byte-identical" : "DIFFER");
  report(8, ok, "determinism and resume", detail);
}

// Independent recount: per example, rank of every class by (prob desc, index asc).
void criterion9() {
  Rng rng(99);
  std::size_t count_mismatch = 0;
  double std_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(11);
    const std::size_t n = 1 + rng.below(200);
    std::vector<std::size_t> labels(n);
    std::vector<std::vector<double>> probs(n);
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.below(k);
      probs[i].resize(k);
      double s = 0.0;
      for (auto& v : probs[i]) s += v = double(rng.below(5));
      if (s == 0.0) probs[i][0] = s = 1.0;
      for (auto& v : probs[i]) v /= s;
      preds.push_back(make_prediction(probs[i]));
    }
    const auto r = evaluate_predictions(preds, labels, k);

    auto rank = [&](std::size_t i, std::size_t c) {
      std::size_t ahead = 0;
      for (std::size_t j = 0; j < k; ++j)
        ahead += probs[i][j] > probs[i][c] || (probs[i][j] == probs[i][c] && j < c);
      return ahead;
    };
    std::vector<std::size_t> conf(k * k, 0), support(k, 0), correct(k, 0);
    std::size_t top1 = 0, top5 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c)
        if (rank(i, c) == 0) ++conf[labels[i] * k + c];
      const std::size_t ry = rank(i, labels[i]);
      top1 += ry == 0;
      top5 += ry < 5;
      ++support[labels[i]];
      correct[labels[i]] += ry == 0;
    }
    count_mismatch += conf != r.confusion;
    count_mismatch += std::size_t(std::lround(r.top1 * double(n))) != top1;
    count_mismatch += std::size_t(std::lround(r.top5 * double(n))) != top5;
    std::vector<double> acc(k);
    for (std::size_t c = 0; c < k; ++c) acc[c] = support[c] ? double(correct[c]) / double(support[c]) : 0.0;
    double sum = 0.0, sq = 0.0;
    for (double a : acc) {
      sum += a;
      sq += a * a;
    }
    const double var = std::max(0.0, sq / double(k) - (sum / double(k)) * (sum / double(k)));
    std_err = std::max({std_err, std::abs(r.classwise_std - std::sqrt(var)),
                        std::abs(classwise_std(acc) - std::sqrt(var))});
  }
  report(9, count_mismatch == 0 && std_err <= 1e-12, "metric correctness vs brute force",
         std::to_string(count_mismatch) + " count mismatches over 1000 random prediction sets, max std error " +
             fmt("%.2e", std_err) + " (limit 1e-12)");
}

}  // namespace

int main() {
  const auto t0 = clock_type::now();
  const auto scratch = std::filesystem::temp_directory_path() / ("defo-acceptance-" + std::to_string(getpid()));
  Lab lab;
  lab.ctx.config = load_experiment(std::string(DEFO_SOURCE_DIR) + "/configs/toy.cfg");
  lab.ctx.config.output = scratch;
  lab.ctx.layout = cli::Layout{scratch};
  lab.ctx.log = cli::Log{cli::LogLevel::quiet};
  std::ostringstream sink;
  lab.ctx.out = &sink;

  std::cerr << "setup: generating data and pretraining the toy encoder" << std::endl;
  cli::cmd_gen_data(lab.ctx);
  const auto tp = clock_type::now();
  cli::cmd_pretrain(lab.ctx);
  lab.pretrain_seconds = seconds_since(tp);
  lab.pack = load_pack(lab.ctx.layout.pack());
  lab.train = load_dataset(lab.ctx.layout.data("train"));
  lab.test = load_dataset(lab.ctx.layout.data("test"));
  lab.test_feats = encode_images(lab.pack, lab.test.images.values(), lab.test.size());
  std::cerr << "setup done in " << fmt("%.1f", seconds_since(t0)) << " s" << std::endl;

  criterion1(lab);
  criterion2(lab);
  criterion3(lab);
  criterion4(lab);
  criterion5(lab);
  criterion6(lab);
  criterion7(lab);
  criterion8(lab, scratch);
  criterion9();

  std::filesystem::remove_all(scratch);
  std::cerr << failures << " criteria failed; total " << fmt("%.1f", seconds_since(t0)) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
