#include <gtest/gtest.h>

#include <fstream>

#include "defo/datastore/checkpoint.hpp"
#include "defo/datastore/toy.hpp"
#include "defo/protocols/build.hpp"
#include "test_util.hpp"

using namespace defo;
using defo::testing::scratch_dir;
using defo::testing::small_config;

namespace {

void rewrite_key(const std::filesystem::path& manifest, const std::string& key,
                 const std::string& value) {
  auto doc = io::KeyValueDoc::parse(io::read_bytes(manifest), "manifest");
  io::KeyValueDoc out;
  for (const auto& e : doc.entries()) out.set(e.section, e.key, e.key == key ? value : e.value);
  io::write_bytes(manifest, out.str());
}

}  // namespace

TEST(ToyData, DeterministicAndBalanced) {
  ToySpec spec;
  auto a = generate_toy_dataset(spec, 600, 3);
  EXPECT_EQ(a, generate_toy_dataset(spec, 600, 3));
  EXPECT_FALSE(a == generate_toy_dataset(spec, 600, 4));
  EXPECT_EQ(a.k(), 6u);
  std::vector<std::size_t> counts(6);
  for (auto l : a.labels) ++counts[l];
  for (auto c : counts) EXPECT_EQ(c, 100u);
  for (double v : a.images.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
  EXPECT_EQ(a.captions.size(), 600u);
  EXPECT_TRUE(a.captions[0].starts_with("a " + a.class_names[a.labels[0]] + " on "))
      << a.captions[0];
  auto test_split = spec;
  test_split.split = "test";
  EXPECT_FALSE(generate_toy_dataset(test_split, 600, 3).images == a.images);
}

// The two colors are separable by mean red minus mean blue over the image.
TEST(ToyData, ColorIsRecoverableFromPixelStatistics) {
  ToySpec spec;
  auto d = generate_toy_dataset(spec, 600, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double r = 0, b = 0;
    auto px = d.image(i);
    for (std::size_t p = 0; p < px.size(); p += 3) {
      r += px[p];
      b += px[p + 2];
    }
    const bool says_red = r > b;
    const bool is_red = d.class_names[d.labels[i]].starts_with("red");
    hits += says_red == is_red;
  }
  EXPECT_EQ(hits, d.size());
}

TEST(ToyData, InvalidGrammar) {
  ToySpec spec;
  spec.shapes = {"blob"};
  EXPECT_THROW(generate_toy_dataset(spec, 10, 0), config_error);
  spec = ToySpec{};
  spec.colors = {"red"};
  spec.shapes = {"circle"};
  EXPECT_THROW(generate_toy_dataset(spec, 10, 0), config_error);
  EXPECT_THROW(generate_toy_dataset(ToySpec{}, 3, 0), config_error);
}

TEST(Dataset, RoundTripAndErrors) {
  ToySpec spec;
  spec.width = spec.height = 8;
  auto d = generate_toy_dataset(spec, 24, 1);
  auto dir = scratch_dir("dataset");
  save_dataset(d, dir / "train");
  EXPECT_EQ(load_dataset(dir / "train"), d);

  // label >= k once the manifest shrinks the class list
  std::filesystem::copy(dir / "train", dir / "shrunk");
  rewrite_key(dir / "shrunk" / "manifest.txt", "k", "5");
  rewrite_key(dir / "shrunk" / "manifest.txt", "class_names",
              "red circle,blue circle,red cross,blue cross,red bar");
  EXPECT_THROW(load_dataset(dir / "shrunk"), data_error);

  std::filesystem::copy(dir / "train", dir / "count");
  rewrite_key(dir / "count" / "manifest.txt", "n_examples", "25");
  EXPECT_THROW(load_dataset(dir / "count"), data_error);

  std::filesystem::copy(dir / "train", dir / "missing");
  std::filesystem::remove(dir / "missing" / "data.bin");
  try {
    load_dataset(dir / "missing");
    FAIL();
  } catch (const io_error& e) {
    EXPECT_NE(std::string(e.what()).find("data.bin"), std::string::npos);
  }

  std::filesystem::copy(dir / "train", dir / "corrupt");
  auto bytes = io::read_bytes(dir / "corrupt" / "data.bin");
  bytes[bytes.size() / 2] ^= 1;
  io::write_bytes(dir / "corrupt" / "data.bin", bytes);
  EXPECT_THROW(load_dataset(dir / "corrupt"), checksum_error);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ValidationAgainstPack) {
  const auto c = small_config();
  const auto pack = init_pack(c, 0);
  ToySpec spec;
  spec.width = spec.height = 8;
  auto d = generate_toy_dataset(spec, 12, 0);
  EXPECT_NO_THROW(validate_for_pack(d, pack));
  d.class_names[0] = "zorblax";
  EXPECT_THROW(validate_for_pack(d, pack), data_error);
  d = generate_toy_dataset(ToySpec{}, 12, 0);
  EXPECT_THROW(validate_for_pack(d, pack), dimension_error);
}

TEST(Vocabulary, AssetMatchesBuiltInList) {
  const auto words = load_vocabulary(std::string(DEFO_ASSET_DIR) + "/toy_vocab.txt");
  EXPECT_EQ(words, toy_vocabulary());
  ToySpec spec;
  for (const auto& w : spec.shapes) EXPECT_NE(std::find(words.begin(), words.end(), w), words.end());
  for (const auto& w : spec.colors) EXPECT_NE(std::find(words.begin(), words.end(), w), words.end());
  for (const auto& w : spec.textures) EXPECT_NE(std::find(words.begin(), words.end(), w), words.end());
}

TEST(Checkpoint, RoundTripVariantVersionAndDigest) {
  const auto c = small_config();
  const auto pack = init_pack(c, 0);
  ProtocolConfig cfg;
  cfg.variant = Variant::defo;
  cfg.class_names = {"red circle", "blue circle", "red cross"};
  cfg.n_queries = 5;
  cfg.identity_block = true;
  cfg.bank_init = BankInit::class_name_seeded;
  cfg.seeded_prefix_len = 1;
  Checkpoint ck;
  ck.state = make_state(pack, cfg, 2);
  ck.optimizer.velocity["head.weight"] = Tensor({5, 3}, 0.25);
  ck.step = 17;
  ck.epoch = 3;
  ck.config_digest = "0123456789abcdef";
  Rng r(5);
  r.normal();
  ck.rng_states["data"] = r.state();
  ck.history = {{1, 1.5, 0.25}, {2, 1.0 / 3.0, 0.5}};

  auto dir = scratch_dir("ckpt");
  save_checkpoint(ck, dir / "c.bin");
  auto back = load_checkpoint(dir / "c.bin", Variant::defo, ck.config_digest);
  EXPECT_EQ(back, ck);
  Rng r2;
  r2.restore(back.rng_states.at("data"));
  EXPECT_EQ(r2.normal(), r.normal());

  EXPECT_THROW(load_checkpoint(dir / "c.bin", Variant::coop), config_error);
  EXPECT_THROW(load_checkpoint(dir / "c.bin", Variant::defo, "ffff"), config_error);
  EXPECT_NO_THROW(load_checkpoint(dir / "c.bin", Variant::defo, "ffff", DigestPolicy::warn));

  auto bytes = io::read_bytes(dir / "c.bin");
  bytes[7] = '9';
  io::write_bytes(dir / "v.bin", bytes);
  EXPECT_THROW(load_checkpoint(dir / "v.bin"), version_error);
  std::filesystem::remove_all(dir);
}
