#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <random>

#include "clsm/checkpoint.hpp"
#include "clsm/training.hpp"
#include "helpers.hpp"

using namespace clsm;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST(Checkpoint, RoundTripPreservesOutputs) {
  test::TempDir dir;
  const auto cfg = test::small_config();
  ClsmModel<float> m(cfg, 1);
  test::randomize(m.params(), 0.05, 2);
  save_clsm(m, dir / "m.ckpt");
  const auto back = load_clsm<float>(dir / "m.ckpt");
  EXPECT_EQ(to_json(back.config()), to_json(cfg));
  ASSERT_EQ(back.params().size(), m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_EQ(back.params()[i].name, m.params()[i].name);
    EXPECT_TRUE(test::bit_equal(back.params()[i].value, m.params()[i].value)) << m.params()[i].name;
  }
  std::mt19937_64 rng(3);
  const auto x = test::random_window(cfg.K, rng);
  const ag::RowVec<float> z = test::random_mat(1, cfg.d_z, rng).cast<float>();
  EXPECT_TRUE(test::bit_equal(m.logits(x, {8, 16}, z), back.logits(x, {8, 16}, z)));

  const auto c = checkpoint::read(dir / "m.ckpt");
  EXPECT_EQ(c.kind(), "clsm");
  EXPECT_EQ(c.header.at("alphabet").size(), 32u);
  EXPECT_EQ(c.header.at("alphabet")[30], "R");
}

TEST(Checkpoint, DoubleModelLoadsFromFloatFile) {
  test::TempDir dir;
  ClsmModel<double> m(test::small_config(), 4);
  save_clsm(m, dir / "d.ckpt");
  const auto back = load_clsm<double>(dir / "d.ckpt");
  for (std::size_t i = 0; i < m.params().size(); ++i)
    EXPECT_TRUE(back.params()[i].value.isApprox(m.params()[i].value, 1e-6));
}

TEST(Checkpoint, RejectsVersionMagicAndTruncation) {
  test::TempDir dir;
  ClsmModel<float> m(test::small_config(), 1);
  save_clsm(m, dir / "m.ckpt");
  const auto bytes = slurp(dir / "m.ckpt");

  auto v = bytes;
  v[8] = 2;
  spit(dir / "v.ckpt", v);
  EXPECT_THROW(load_clsm<float>(dir / "v.ckpt"), CheckpointError);

  auto g = bytes;
  g[0] = 'X';
  spit(dir / "g.ckpt", g);
  EXPECT_THROW(checkpoint::read(dir / "g.ckpt"), CheckpointError);

  spit(dir / "t.ckpt", bytes.substr(0, bytes.size() - 17));
  EXPECT_THROW(checkpoint::read(dir / "t.ckpt"), CheckpointError);
  EXPECT_THROW(checkpoint::read(dir / "absent.ckpt"), CheckpointError);
}

TEST(Checkpoint, RejectsAlphabetMismatch) {
  test::TempDir dir;
  ClsmModel<float> m(test::small_config(), 1);
  save_clsm(m, dir / "m.ckpt");
  auto bytes = slurp(dir / "m.ckpt");
  const auto at = bytes.find("\"55\",\"56\"");
  ASSERT_NE(at, std::string::npos);
  bytes.replace(at, 9, "\"56\",\"55\"");
  spit(dir / "a.ckpt", bytes);
  EXPECT_THROW(load_clsm<float>(dir / "a.ckpt"), CheckpointError);
}

TEST(Checkpoint, RejectsShapeMissingTensorAndKind) {
  test::TempDir dir;
  ClsmModel<float> m(test::small_config(), 1);
  save_clsm(m, dir / "m.ckpt");
  const auto c = checkpoint::read(dir / "m.ckpt");

  auto other_cfg = test::small_config();
  other_cfg.hidden = 24;
  ClsmModel<float> other(other_cfg, 1);
  EXPECT_THROW(checkpoint::load_into(other.params(), c), CheckpointError);

  ParamStore<float> renamed;
  for (const auto& p : m.params()) renamed.add(p.name == "decoder.out.bias" ? "decoder.out.b" : p.name, p.value.rows(), p.value.cols());
  EXPECT_THROW(checkpoint::load_into(renamed, c), CheckpointError);

  ParamStore<float> fewer;
  fewer.add("decoder.out.bias", 1, 32);
  EXPECT_THROW(checkpoint::load_into(fewer, c), CheckpointError);

  EXPECT_THROW(checkpoint::expect_kind(c, "vae"), CheckpointError);
  checkpoint::save(dir / "x.ckpt", "vae", to_json(m.config()), m.params());
  EXPECT_THROW(load_clsm<float>(dir / "x.ckpt"), CheckpointError);
}
