#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "defo/datastore/toy.hpp"
#include "defo/numcore/gradcheck.hpp"
#include "defo/trainer/pretrain.hpp"
#include "defo/trainer/trainer.hpp"
#include "test_util.hpp"

using namespace defo;
using defo::testing::scratch_dir;
using defo::testing::small_config;

namespace {

Dataset color_set(std::size_t n, std::uint64_t seed, bool plain = false) {
  ToySpec spec;
  spec.width = spec.height = 8;
  spec.shapes = {"bar"};
  spec.colors = {"red", "blue", "green"};
  if (plain) spec.textures = {"plain"};
  return generate_toy_dataset(spec, n, seed);
}

ProtocolConfig defo_config(const Dataset& d, std::size_t n) {
  ProtocolConfig cfg;
  cfg.variant = Variant::defo;
  cfg.class_names = d.class_names;
  cfg.n_queries = n;
  return cfg;
}

std::vector<ParamRef> one_param(Tensor& t, std::vector<std::uint8_t> mask = {}) {
  return {ParamRef{"p", &t, std::move(mask)}};
}

EncoderPack aligned_pack(std::uint64_t seed) {
  auto pack = init_pack(small_config(), seed);
  PretrainConfig pc;
  pc.epochs = 10;
  pc.learning_rate = 1e-3;
  contrastive_pretrain(pack, color_set(240, seed + 100, true), pc);
  return pack;
}

}  // namespace

TEST(Sgd, PlainGradientDescent) {
  Tensor p = Tensor::vector({1.0, -2.0, 0.5});
  p.grad = {0.5, 1.0, -3.0};
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.learning_rate = 0.1;
  OptimizerState st;
  auto params = one_param(p);
  sgd_step(params, st, cfg);
  EXPECT_EQ(p[0], 1.0 - 0.1 * 0.5);
  EXPECT_EQ(p[1], -2.0 - 0.1 * 1.0);
  EXPECT_EQ(p[2], 0.5 - 0.1 * -3.0);
}

TEST(Sgd, MomentumCarryover) {
  Tensor p = Tensor::vector({1.0});
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.learning_rate = 0.1;
  OptimizerState st;
  st.velocity["p"] = Tensor::vector({2.0});
  p.grad = {0.0};
  auto params = one_param(p);
  sgd_step(params, st, cfg);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.1 * 0.9 * 2.0);
}

TEST(Sgd, ThreeStepRecurrence) {
  const double lr = 0.05, mu = 0.9, wd = 0.01;
  const double grads[] = {0.3, -0.7, 1.1};
  double p_ref = 2.0, v_ref = 0.0;
  for (double g : grads) {
    v_ref = mu * v_ref + g + wd * p_ref;
    p_ref -= lr * v_ref;
  }
  Tensor p = Tensor::vector({2.0});
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.momentum = mu;
  cfg.weight_decay = wd;
  OptimizerState st;
  auto params = one_param(p);
  for (double g : grads) {
    p.grad = {g};
    sgd_step(params, st, cfg);
  }
  EXPECT_EQ(p[0], p_ref);
  EXPECT_EQ(st.velocity["p"][0], v_ref);
}

TEST(Sgd, FrozenEntriesAndMissingGrad) {
  Tensor p = Tensor::vector({1.0, 1.0});
  p.grad = {1.0, 1.0};
  TrainConfig cfg;
  OptimizerState st;
  auto params = one_param(p, {0, 1});
  for (int i = 0; i < 3; ++i) sgd_step(params, st, cfg);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(st.velocity["p"][0], 0.0);
  EXPECT_LT(p[1], 1.0);
  Tensor q = Tensor::vector({1.0});
  auto missing = one_param(q);
  EXPECT_THROW(sgd_step(missing, st, cfg), numeric_error);
}

TEST(TrainConfigTest, Violations) {
  TrainConfig c;
  EXPECT_TRUE(c.violations().empty());
  c.shots = 3;
  c.batch_size = 0;
  c.momentum = 1.5;
  EXPECT_EQ(c.violations().size(), 3u);
}

TEST(FewShot, CountsSeedsAndErrors) {
  auto d = color_set(30, 0);
  auto s = sample_few_shot(d, 2, 0);
  EXPECT_EQ(s.size(), 6u);
  std::vector<std::size_t> counts(3);
  for (auto l : s.labels) ++counts[l];
  EXPECT_EQ(counts, (std::vector<std::size_t>{2, 2, 2}));
  auto s1 = sample_few_shot(d, 2, 1);
  EXPECT_FALSE(s1 == s);
  EXPECT_EQ(sample_few_shot(d, 10, 5), d);
  try {
    sample_few_shot(d, 11, 0);
    FAIL();
  } catch (const data_error& e) {
    EXPECT_NE(std::string(e.what()).find("red bar"), std::string::npos) << e.what();
  }
}

TEST(Augment, ReflectCropFlipIsSeededAndUsesSourcePixels) {
  auto d = color_set(3, 0);
  std::vector<double> a(d.image_values()), b(d.image_values());
  Rng r1(4), r2(4);
  augment_image(d.image(0), d.width, d.height, r1, a.data());
  augment_image(d.image(0), d.width, d.height, r2, b.data());
  EXPECT_EQ(a, b);
  auto src = d.image(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    bool found = false;
    for (std::size_t j = i % 3; j < src.size() && !found; j += 3) found = src[j] == a[i];
    ASSERT_TRUE(found);
  }
}

TEST(Train, RejectsUntrainableSetups) {
  const auto c = small_config();
  const auto pack = init_pack(c, 0);
  auto d = color_set(12, 0);
  auto zs_cfg = defo_config(d, 3);
  zs_cfg.variant = Variant::zero_shot;
  auto zs = make_state(pack, zs_cfg, 0);
  EXPECT_THROW(Trainer(pack, zs, d, TrainConfig{}), config_error);
  auto frozen_cfg = defo_config(d, 3);
  frozen_cfg.identity_block = true;
  frozen_cfg.freeze_queries = true;
  auto frozen = make_state(pack, frozen_cfg, 0);
  EXPECT_THROW(Trainer(pack, frozen, d, TrainConfig{}), config_error);
  auto ok = make_state(pack, defo_config(d, 4), 0);
  Dataset empty = d.subset(std::vector<std::size_t>{});
  EXPECT_THROW(Trainer(pack, ok, empty, TrainConfig{}), data_error);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto c = small_config();
  const auto pack = init_pack(c, 0);
  auto d = color_set(12, 0);
  auto s = make_state(pack, defo_config(d, 4), 0);
  const auto before = s;
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  tc.batch_size = 5;
  train_protocol(pack, s, d, tc);
  EXPECT_EQ(s.bank.values, before.bank.values);
  EXPECT_EQ(s.head.weight, before.head.weight);
}

TEST(Train, DeterministicFrozenInvariantAndResumable) {
  const auto c = small_config();
  const auto pack = init_pack(c, 0);
  auto d = color_set(18, 1);
  auto cfg = defo_config(d, 5);
  cfg.identity_block = true;
  cfg.bank_init = BankInit::class_name_seeded;
  cfg.seeded_prefix_len = 2;
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 4;
  tc.learning_rate = 0.05;
  tc.seed = 7;

  auto a = make_state(pack, cfg, 1);
  const auto init = a;
  Trainer ta(pack, a, d, tc, "digest");
  auto ra = ta.run();
  auto b = make_state(pack, cfg, 1);
  Trainer tb(pack, b, d, tc, "digest");
  auto rb = tb.run();
  EXPECT_EQ(ta.checkpoint(), tb.checkpoint());
  EXPECT_EQ(ra.lines(), rb.lines());
  EXPECT_EQ(ra.epochs.size(), 6u);

  // frozen W block and fixed query slots are bit-identical; others moved
  for (std::size_t i = 0; i < a.head.frozen.size(); ++i)
    if (a.head.frozen[i]) EXPECT_EQ(a.head.weight[i], init.head.weight[i]);
  const auto mask = a.bank.element_mask();
  bool moved = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) EXPECT_EQ(a.bank.values[i], init.bank.values[i]);
    else moved = moved || a.bank.values[i] != init.bank.values[i];
  }
  EXPECT_TRUE(moved);
  for (std::size_t i = 0; i < a.head.frozen.size(); ++i)
    if (a.head.frozen[i]) EXPECT_EQ(ta.optimizer().velocity.at("head.weight")[i], 0.0);

  // stop at 3, persist, resume in a fresh trainer
  auto dir = scratch_dir("resume");
  auto h = make_state(pack, cfg, 1);
  {
    Trainer first(pack, h, d, tc, "digest");
    first.run(3);
    save_checkpoint(first.checkpoint(), dir / "half.bin");
  }
  auto r = make_state(pack, cfg, 1);
  Trainer second(pack, r, d, tc, "digest");
  second.restore(load_checkpoint(dir / "half.bin", Variant::defo, "digest"));
  auto rr = second.run();
  EXPECT_EQ(second.checkpoint(), ta.checkpoint());
  EXPECT_EQ(rr.lines(), ra.lines());
  std::filesystem::remove_all(dir);
}

TEST(Train, ReportLinesAreJsonRecords) {
  TrainReport r;
  r.epochs = {{1, 0.5, 0.25}, {2, 0.25, 1.0}};
  EXPECT_EQ(r.lines(),
            "{\"epoch\":1,\"loss\":0.5,\"train_acc\":0.25}\n"
            "{\"epoch\":2,\"loss\":0.25,\"train_acc\":1.0}\n");
}

TEST(Train, SeparableSetReachesHighTrainAccuracy) {
  const auto pack = aligned_pack(3);
  auto d = color_set(90, 2, true);
  // Linear-probe oracle first: the frozen features must separate the classes.
  ProtocolConfig lp_cfg = defo_config(d, 3);
  lp_cfg.variant = Variant::linear_probe;
  auto lp = make_state(pack, lp_cfg, 0);
  TrainConfig lp_tc;
  lp_tc.learning_rate = 0.2;
  lp_tc.epochs = 100;
  Trainer lpt(pack, lp, d, lp_tc);
  lpt.run();
  ASSERT_GE(lpt.train_accuracy(), 0.95);

  auto s = make_state(pack, defo_config(d, 8), 0);
  TrainConfig tc;
  tc.learning_rate = 0.05;
  Trainer t(pack, s, d, tc);
  auto report = t.run();
  EXPECT_EQ(report.epochs.size(), 50u);
  EXPECT_GE(report.epochs.back().train_acc, 0.95);
}

TEST(Train, TargetOptLossDecreases) {
  const auto c = small_config();
  const auto pack = init_pack(c, 3);
  auto d = color_set(30, 4);
  ProtocolConfig cfg = defo_config(d, 3);
  cfg.variant = Variant::target_opt;
  auto s = make_state(pack, cfg, 0);
  TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.epochs = 50;
  tc.batch_size = 30;
  auto r = train_protocol(pack, s, d, tc);
  auto window = [&](std::size_t from) {
    double m = 0;
    for (std::size_t i = from; i < from + 10; ++i) m += r.epochs[i].loss;
    return m / 10;
  };
  EXPECT_LT(window(40), window(0));
}

TEST(Contrastive, IdenticalPairsGiveLnTwo) {
  for (double tau : {0.01, 0.07, 1.0, 5.0}) {
    Tape tape;
    Tensor f({2, 3}, {0.6, 0.8, 0.0, 0.6, 0.8, 0.0});
    Tensor g({2, 3}, {0.0, 0.6, 0.8, 0.0, 0.6, 0.8});
    Var loss = contrastive_loss(tape.constant(f), tape.constant(g), tau);
    EXPECT_NEAR(loss.value()[0], std::log(2.0), 1e-6) << tau;
  }
  Tape tape;
  EXPECT_THROW(contrastive_loss(tape.constant(Tensor({1, 3}, 1.0)), tape.constant(Tensor({1, 3}, 1.0)), 0.1),
               config_error);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  const auto c = small_config();
  const auto pack = init_pack(c, 5);
  auto d = color_set(3, 1);
  Tensor patches({2 * c.patches(), c.patch_dim()});
  for (std::size_t i = 0; i < 2; ++i)
    patchify_into(c, d.image(i), patches.data() + i * c.patches() * c.patch_dim());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < 2; ++i)
    for (long id : tokenize(pack, d.captions[i]).token_ids) rows.push_back(std::size_t(id));
  for (const char* name : {"vision.proj", "text.proj"}) {
    scalar_fn<double> f = [&](Tape& tape, Var x) {
      auto w = bind_frozen(tape, pack);
      w.weights[name] = x;
      Var fi = encode_patches(w, tape.constant_ref(patches));
      Var ft = encode_content(w, embed_rows(w, rows));
      return contrastive_loss(fi, ft, 0.5);
    };
    Tensor at = pack.weight(name);
    for (auto& v : at.values()) v *= 20.0;
    EXPECT_LT(gradcheck(f, at), 1e-4) << name;
  }
}

TEST(Contrastive, PretrainingAlignsHeldOutPairs) {
  auto c = small_config();
  auto pack = init_pack(c, 0);
  ToySpec spec;
  spec.width = spec.height = 8;
  spec.shapes = {"bar", "cross"};
  spec.colors = {"red", "blue", "green"};
  auto train = generate_toy_dataset(spec, 240, 0);
  spec.split = "test";
  auto test = generate_toy_dataset(spec, 60, 0);
  PretrainConfig pc;
  pc.epochs = 8;
  pc.learning_rate = 3e-3;
  auto report = contrastive_pretrain(pack, train, pc);
  EXPECT_TRUE(pack.frozen);
  pack.for_each_weight([](const std::string& n, const Tensor& t) {
    EXPECT_FALSE(t.requires_grad) << n;
    EXPECT_FALSE(t.has_grad()) << n;
  });
  EXPECT_LT(report.epoch_loss.back(), report.epoch_loss.front());

  auto fi = encode_images(pack, test.images.values(), test.size());
  std::vector<TokenSequence> seqs;
  for (const auto& cap : test.captions) seqs.push_back(tokenize(pack, cap));
  auto ft = encode_texts(pack, seqs);
  double matched = 0, mismatched = 0;
  std::size_t nm = 0;
  for (std::size_t i = 0; i < test.size(); ++i)
    for (std::size_t j = 0; j < test.size(); ++j) {
      double s = 0;
      for (std::size_t q = 0; q < c.latent_dim; ++q) s += fi.at(i, q) * ft.at(j, q);
      if (test.captions[i] == test.captions[j]) matched += s;
      else {
        mismatched += s;
        ++nm;
      }
    }
  std::size_t nmatch = test.size() * test.size() - nm;
  EXPECT_GT(matched / double(nmatch), mismatched / double(nm));
  EXPECT_THROW(contrastive_pretrain(pack, train, pc), config_error);
}
