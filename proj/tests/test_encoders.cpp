#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iomanip>

#include "defo/encoders/encoder.hpp"
#include "defo/numcore/gradcheck.hpp"
#include "test_util.hpp"

using namespace defo;
using defo::testing::pattern_image;
using defo::testing::random_image;
using defo::testing::scratch_dir;
using defo::testing::small_config;

namespace {

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Inflates the random weights so gradients through the towers are not vanishingly small.
EncoderPack sharpened_pack(const EncoderConfig& c, std::uint64_t seed) {
  EncoderPack p = init_pack(c, seed);
  p.for_each_weight([](const std::string& name, Tensor& t) {
    if (name.find(".ln") != std::string::npos || name.find("attn.wo") != std::string::npos) return;
    for (auto& v : t.values()) v *= 15.0;
  });
  return p;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EXPECT_TRUE(EncoderConfig{}.violations().empty());
  EncoderConfig bad;
  bad.patch_size = 5;
  bad.heads = 3;
  bad.latent_dim = 0;
  EXPECT_EQ(bad.violations().size(), 3u);
}

TEST(InitPack, DeterministicAndConventional) {
  const auto c = small_config();
  EXPECT_EQ(init_pack(c, 0), init_pack(c, 0));
  EXPECT_FALSE(init_pack(c, 0) == init_pack(c, 1));
  const auto p = init_pack(c, 0);
  for (const auto& [name, t] : p.text_weights) {
    if (name.ends_with(".g")) {
      for (double v : t.values()) EXPECT_EQ(v, 1.0) << name;
    }
    if (name.find("ln") != std::string::npos && name.ends_with(".b")) {
      for (double v : t.values()) EXPECT_EQ(v, 0.0) << name;
    }
  }
  EXPECT_EQ(p.vocab_words.size(), c.vocab_size);
  EXPECT_EQ(p.vocab_words[0], "<pad>");
  EXPECT_EQ(p.vocab_words[1], "<unk>");
  p.for_each_weight([](const std::string&, const Tensor& t) { EXPECT_FALSE(t.requires_grad); });
}

TEST(Tokenize, LookupPaddingAndUnknowns) {
  const auto c = small_config();
  const auto p = init_pack(c, 0);
  auto seq = tokenize(p, "a photo of a cat");
  ASSERT_EQ(seq.length(), c.text_len);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(seq.provenance[i], SlotKind::vocabulary_word);
  EXPECT_EQ(seq.provenance[5], SlotKind::pad);
  EXPECT_EQ(seq.token_ids[1], static_cast<long>(*p.row_of("photo")));
  for (std::size_t j = 0; j < c.embed_dim; ++j) {
    EXPECT_EQ(seq.embeddings.at(4, j), p.vocab_table.at(*p.row_of("cat"), j));
    EXPECT_EQ(seq.embeddings.at(5, j), p.vocab_table.at(kPadRow, j));
  }

  auto unk = tokenize(p, "A Zorblax, RED!");
  EXPECT_EQ(unk.provenance[1], SlotKind::unknown);
  EXPECT_EQ(unk.token_ids[1], static_cast<long>(kUnkRow));
  EXPECT_EQ(unk.token_ids[2], static_cast<long>(*p.row_of("red")));

  EXPECT_THROW(tokenize(p, ""), config_error);
  EXPECT_THROW(tokenize(p, " ,. "), config_error);

  auto longer = tokenize(p, "one two three four five six seven eight");
  EXPECT_EQ(longer.length(), c.text_len);
}

TEST(EncodeImage, UnitNormAndDeterministic) {
  const auto c = small_config();
  const auto p = init_pack(c, 3);
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    auto img = random_image(c, rng);
    auto f = encode_image(p, img);
    EXPECT_EQ(f.shape(), shape_t{c.latent_dim});
    EXPECT_NEAR(norm(f.values()), 1.0, 1e-9);
    EXPECT_EQ(f, encode_image(p, img));
  }
  Tensor wrong({c.image_width, c.image_height, 1});
  EXPECT_THROW(encode_image(p, wrong), dimension_error);
  auto nan_img = random_image(c, rng);
  nan_img[3] = std::nan("");
  EXPECT_THROW(encode_image(p, nan_img), data_error);
}

TEST(EncodeImage, BatchedMatchesSingle) {
  const auto c = small_config();
  const auto p = init_pack(c, 3);
  Rng rng(9);
  Tensor stack({3, c.image_width, c.image_height, 3});
  std::vector<Tensor> imgs;
  for (int i = 0; i < 3; ++i) {
    imgs.push_back(random_image(c, rng));
    std::copy_n(imgs.back().data(), imgs.back().size(), stack.data() + i * c.image_values());
  }
  auto batch = encode_images(p, stack.values(), 3, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    auto single = encode_image(p, imgs[i]);
    for (std::size_t j = 0; j < c.latent_dim; ++j) EXPECT_EQ(batch.at(i, j), single[j]);
  }
}

// Reference vector recorded once from the default geometry with seed-0 weights.
TEST(EncodeImage, GoldenSeedZero) {
  const EncoderConfig c;
  const auto p = init_pack(c, 0);
  auto f = encode_image(p, pattern_image(c));
  const std::string path = std::string(DEFO_TEST_DIR) + "/golden/encode_image_seed0.txt";
  if (std::getenv("DEFO_REGEN_GOLDEN")) {
    std::ofstream out(path);
    out << std::setprecision(17);
    for (double v : f.values()) out << v << '\n';
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << "missing golden file " << path;
  std::vector<double> ref;
  for (double v; in >> v;) ref.push_back(v);
  ASSERT_EQ(ref.size(), c.latent_dim);
  EXPECT_LT(max_abs_diff(f.values(), ref), 1e-10);
}

TEST(EncodeText, UnitNormAndFrozenContract) {
  const auto c = small_config();
  const auto p = init_pack(c, 5);
  for (const char* text : {"a red circle", "a photo of a blue square on stripes", "cat"}) {
    auto f = encode_text(p, tokenize(p, text));
    EXPECT_NEAR(norm(f.values()), 1.0, 1e-9);
  }

  auto seq = tokenize(p, "a red circle");
  Tensor slots = seq.embeddings;
  slots.requires_grad = true;
  std::vector<std::uint8_t> mask(slots.size(), 0);
  for (std::size_t j = 0; j < c.embed_dim; ++j) mask[0 * c.embed_dim + j] = 1;  // slot 0 trainable
  Tape tape;
  auto w = bind_frozen(tape, p);
  auto f = encode_content(w, mask_grad(tape.leaf(slots), mask));
  tape.backward(sum(f));
  ASSERT_TRUE(slots.has_grad());
  double slot_mag = 0;
  for (std::size_t j = 0; j < c.embed_dim; ++j) slot_mag += std::abs(slots.grad[j]);
  EXPECT_GT(slot_mag, 0.0);
  for (std::size_t i = c.embed_dim; i < slots.size(); ++i) EXPECT_EQ(slots.grad[i], 0.0);
  p.for_each_weight([](const std::string& n, const Tensor& t) { EXPECT_FALSE(t.has_grad()) << n; });
}

TEST(EncodeText, SlotGradientMatchesFiniteDifferences) {
  const auto c = small_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = sharpened_pack(c, seed);
    auto seq = tokenize(p, "a green triangle");
    Rng rng(seed + 100);
    Tensor target({c.latent_dim, 1});
    for (auto& v : target.values()) v = rng.normal();
    const std::size_t slot = 2;
    Tensor at({1, c.embed_dim});
    for (std::size_t j = 0; j < c.embed_dim; ++j) at[j] = seq.embeddings.at(slot, j);
    scalar_fn<double> f = [&](Tape& tape, Var x) {
      auto w = bind_frozen(tape, p);
      Tensor before({slot, c.embed_dim}), after({c.text_len - slot - 1, c.embed_dim});
      std::copy_n(seq.embeddings.data(), before.size(), before.data());
      std::copy_n(seq.embeddings.data() + (slot + 1) * c.embed_dim, after.size(), after.data());
      Var parts[] = {tape.constant(before), x, tape.constant(after)};
      Var feat = encode_content(w, concat_rows<double>(parts));
      return matmul(feat, tape.constant(target));
    };
    EXPECT_LT(gradcheck(f, at), 1e-4) << "seed " << seed;
  }
}

TEST(Pack, RoundTripIsBitIdentical) {
  const auto c = small_config();
  auto p = init_pack(c, 0);
  auto dir = scratch_dir("pack");
  save_pack(p, dir / "p.bin");
  auto q = load_pack(dir / "p.bin");
  EXPECT_EQ(p, q);
  EXPECT_TRUE(q.frozen);
  q.for_each_weight([](const std::string&, const Tensor& t) { EXPECT_FALSE(t.requires_grad); });
  auto q2 = load_pack(dir / "p.bin", c);
  EXPECT_EQ(p, q2);
  std::filesystem::remove_all(dir);
}

TEST(Pack, CorruptionVersionTruncationAndShape) {
  const auto c = small_config();
  auto p = init_pack(c, 0);
  auto bytes = io::encode(pack_to_records(p));

  auto corrupted = bytes;
  corrupted[corrupted.size() - 20] ^= 0x40;
  EXPECT_THROW(io::decode(corrupted, kPackMagic, "pack"), checksum_error);

  auto versioned = bytes;
  versioned[7] = '2';
  EXPECT_THROW(io::decode(versioned, kPackMagic, "pack"), version_error);

  auto truncated = bytes.substr(0, bytes.size() / 2);
  try {
    io::decode(truncated, kPackMagic, "pack");
    FAIL();
  } catch (const checksum_error&) {
    FAIL() << "truncation reported as checksum error";
  } catch (const format_error& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }

  auto other = c;
  other.latent_dim = c.latent_dim + 4;
  try {
    pack_from_records(io::decode(bytes, kPackMagic, "pack"), other, "pack");
    FAIL();
  } catch (const dimension_error& e) {
    EXPECT_NE(std::string(e.what()).find("vision.proj"), std::string::npos) << e.what();
  }
}
