#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clsm/lm.hpp"
#include "helpers.hpp"

using namespace clsm;
using ag::Mat;

namespace {

LmConfig small_lm() { return LmConfig::like(test::small_config()); }

}  // namespace

TEST(Lm, Causality) {
  const auto cfg = small_lm();
  LanguageModel<float> lm(cfg, 1);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> pos(0, cfg.max_len - 1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = test::random_window(cfg.max_len, rng);
    const int k = pos(rng);
    auto y = x;
    y[static_cast<std::size_t>(k)] = (y[static_cast<std::size_t>(k)] + 1) % alphabet::kDataSize;
    const Mat<float> a = lm.logits(x), b = lm.logits(y);
    // Row r predicts x[r] from x[0..r): rows up to k never see x[k].
    for (int r = 0; r <= k; ++r) EXPECT_TRUE(test::bit_equal(Mat<float>(a.row(r)), Mat<float>(b.row(r)))) << k;
    if (k + 1 < cfg.max_len) EXPECT_FALSE(test::bit_equal(Mat<float>(a.row(k + 1)), Mat<float>(b.row(k + 1))));
  }
}

TEST(Lm, UniformLogitsGiveLn32) {
  LanguageModel<double> lm(small_lm(), 3);
  lm.params().find("lm.out.weight")->value.setZero();
  lm.params().find("lm.out.bias")->value.setZero();
  std::mt19937_64 rng(4);
  EXPECT_NEAR(lm_nll(lm, {test::random_window(32, rng), test::random_window(20, rng)}), std::log(32.0), 1e-12);
}

TEST(Lm, RepeatedSequenceAndNonNegative) {
  LanguageModel<float> lm(small_lm(), 5);
  std::mt19937_64 rng(6);
  const auto x = test::random_window(32, rng);
  EXPECT_NEAR(lm_nll(lm, {x, x, x}), lm_nll(lm, {x}), 1e-6);
  for (int i = 0; i < 10; ++i) EXPECT_GE(lm_nll(lm, {test::random_window(32, rng)}), 0.0);
  EXPECT_THROW(lm_nll(lm, {}), EmptyEvaluation);
}

TEST(Lm, RejectsBadInput) {
  LanguageModel<float> lm(small_lm(), 7);
  TokenSeq x(8, 0);
  x[3] = alphabet::kConstraint;
  EXPECT_THROW(lm.logits(x), InvalidToken);
  EXPECT_THROW(lm.logits(TokenSeq{}), InvalidInput);
  EXPECT_THROW(lm.logits(TokenSeq(33, 0)), InvalidInput);
  EXPECT_THROW(LanguageModel<float>(LmConfig{10, 8, 3, 2, 8, 0.0}), InvalidConfig);
}

TEST(Lm, GradientCheck) {
  LanguageModel<double> lm(LmConfig{6, 8, 2, 2, 8, 0.0}, 8);
  std::mt19937_64 rng(9);
  const std::vector<TokenSeq> xs = {test::random_window(8, rng), test::random_window(5, rng)};
  const auto r = gradient_check(
      lm.params(), [&](bool record) { return lm_batch_loss(lm, xs, 1, record, false).total; }, 50, 1e-5, 1e-3, 10);
  EXPECT_TRUE(r.passed()) << r.max_rel_error;
}

TEST(Lm, TrainsBelowUniformAndRoundTrips) {
  test::TempDir dir;
  const auto cfg = small_lm();
  corpus::Manifest man;
  std::mt19937_64 rng(11);
  for (int i = 0; i < 48; ++i) {
    TokenSeq w;
    const int root = static_cast<int>(rng() % 10);
    for (int k = 0; k < cfg.max_len; ++k) w.push_back(k % 2 ? alphabet::kHold : (root + k / 2) % 30);
    man.records.push_back({i < 40 ? corpus::Split::Train2 : corpus::Split::Val2, "x", w});
  }
  TrainConfig tc;
  tc.batch = 8;
  tc.epochs = 3;
  tc.lr = 3e-3;
  LanguageModel<float> lm(cfg, 12);
  const auto r = train_eval_lm(lm, man, tc, dir.path());
  EXPECT_LT(r.validation.back().loss.total, std::log(32.0));
  EXPECT_LT(lm_nll(lm, man.windows(corpus::Split::Val2)), std::log(32.0));

  const auto back = load_lm<float>(r.final_checkpoint);
  const auto x = man.windows(corpus::Split::Val2)[0];
  EXPECT_TRUE(test::bit_equal(back.logits(x), lm.logits(x)));

  corpus::Manifest empty;
  EXPECT_THROW(train_eval_lm(lm, empty, tc, dir.path()), InsufficientData);
}
