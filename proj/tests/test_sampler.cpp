#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clsm/sampler.hpp"
#include "helpers.hpp"

using namespace clsm;
using ag::Mat;
using ag::RowVec;

namespace {

// Prior base fixed to N(0, I) regardless of context.
template <class S>
void standard_prior(ClsmModel<S>& m) {
  auto& p = m.params();
  p.find("prior.mean.1.weight")->value.setZero();
  p.find("prior.mean.1.bias")->value.setZero();
  p.find("prior.log_v.1.weight")->value.setZero();
  p.find("prior.log_v.1.bias")->value.setConstant(static_cast<S>(std::log(2.0)));
}

struct Ctx {
  TokenSeq window, left, right;
  TargetSpan span;
};

Ctx random_ctx(const ModelConfig& cfg, std::mt19937_64& rng) {
  Ctx c;
  c.window = test::random_window(cfg.K, rng);
  c.span = sample_target_span(rng, cfg.grid());
  std::tie(c.left, c.right) = contexts_of(c.window, c.span);
  return c;
}

class SamplerTest : public ::testing::Test {
 protected:
  SamplerTest() : cfg(test::small_config()), m(cfg, 11) { test::randomize_flow(m.params(), 0.2, 12); }
  ModelConfig cfg;
  ClsmModel<double> m;
  std::mt19937_64 rng{13};
};

}  // namespace

TEST_F(SamplerTest, PriorSamplingReproducible) {
  const auto c = random_ctx(cfg, rng);
  nn::Rng a(5), b(5), d(6);
  const auto z1 = sample_from_prior(m, c.left, c.right, c.span, a);
  const auto z2 = sample_from_prior(m, c.left, c.right, c.span, b);
  EXPECT_TRUE(test::bit_equal(z1, z2));
  EXPECT_FALSE(test::bit_equal(z1, sample_from_prior(m, c.left, c.right, c.span, d)));
}

TEST_F(SamplerTest, GreedyDecodeContract) {
  for (int trial = 0; trial < 10; ++trial) {
    const auto c = random_ctx(cfg, rng);
    nn::Rng r(trial);
    const auto z = sample_from_prior(m, c.left, c.right, c.span, r);
    const auto out = greedy_decode_target(m, z, c.left, c.right, c.span);
    ASSERT_EQ(static_cast<int>(out.size()), c.span.length);
    for (Token t : out) EXPECT_TRUE(alphabet::is_data(t));
    EXPECT_EQ(greedy_decode_target(m, z, c.left, c.right, c.span), out);

    // Full re-run with the finished target reproduces every argmax.
    const auto full = assemble(c.left, out, c.right);
    const Mat<double> logits = m.logits(full, c.span, z);
    for (int i = 0; i < c.span.length; ++i) {
      Eigen::Index best;
      logits.row(i).maxCoeff(&best);
      EXPECT_EQ(best, out[static_cast<std::size_t>(i)]) << "trial " << trial << " step " << i;
    }
  }
}

TEST_F(SamplerTest, TemperatureSampling) {
  const auto c = random_ctx(cfg, rng);
  const RowVec<double> z = RowVec<double>::Zero(cfg.d_z);
  nn::Rng a(1), b(1);
  const auto s1 = greedy_decode_target(m, z, c.left, c.right, c.span, {1.0, &a});
  const auto s2 = greedy_decode_target(m, z, c.left, c.right, c.span, {1.0, &b});
  EXPECT_EQ(s1, s2);
  for (Token t : s1) EXPECT_TRUE(alphabet::is_data(t));
  EXPECT_THROW(greedy_decode_target(m, z, c.left, c.right, c.span, {1.0, nullptr}), InvalidInput);
  EXPECT_THROW(greedy_decode_target(m, z, c.left, c.right, c.span, {-1.0, &a}), InvalidInput);
}

TEST_F(SamplerTest, ContextErrors) {
  const auto c = random_ctx(cfg, rng);
  const RowVec<double> z = RowVec<double>::Zero(cfg.d_z);
  nn::Rng r(0);
  auto shorter = c.left;
  shorter.push_back(0);
  EXPECT_THROW(sample_from_prior(m, shorter, c.right, c.span, r), InvalidSpan);
  EXPECT_THROW(greedy_decode_target(m, z, c.left, c.right, {c.span.start, c.span.length + 1}), InvalidSpan);
  if (!c.right.empty()) {
    auto bad = c.right;
    bad[0] = alphabet::kStart;
    EXPECT_THROW(greedy_decode_target(m, z, c.left, bad, c.span), InvalidToken);
  }
  EXPECT_THROW(vary_latent(m, z, -0.5, c.left, c.right, c.span, r), InvalidInput);
  EXPECT_THROW(interpolation_latents(m.flow(), z, z, 0), InvalidInput);
}

TEST_F(SamplerTest, InterpolationEndpointsAndContexts) {
  for (int trial = 0; trial < 5; ++trial) {
    const auto c = random_ctx(cfg, rng);
    nn::Rng r(100 + trial);
    const auto z1 = sample_from_prior(m, c.left, c.right, c.span, r);
    const auto z2 = sample_from_prior(m, c.left, c.right, c.span, r);
    const auto zs = interpolation_latents(m.flow(), z1, z2, 4);
    ASSERT_EQ(zs.size(), 5u);
    EXPECT_TRUE(test::bit_equal(zs.front(), z1));
    EXPECT_TRUE(test::bit_equal(zs.back(), z2));

    const auto seqs = interpolate_contextual(m, z1, z2, 4, c.left, c.right, c.span);
    ASSERT_EQ(seqs.size(), 5u);
    for (const auto& s : seqs) {
      ASSERT_EQ(static_cast<int>(s.size()), cfg.K);
      EXPECT_EQ(contexts_of(s, c.span).first, c.left);
      EXPECT_EQ(contexts_of(s, c.span).second, c.right);
    }
    EXPECT_EQ(target_of(seqs.front(), c.span), greedy_decode_target(m, z1, c.left, c.right, c.span));
    EXPECT_EQ(target_of(seqs.back(), c.span), greedy_decode_target(m, z2, c.left, c.right, c.span));
  }
}

TEST_F(SamplerTest, InterpolationIsCollinearInW) {
  const int d = cfg.d_z;
  for (int trial = 0; trial < 20; ++trial) {
    const RowVec<double> z1 = test::random_mat(1, d, rng), z2 = test::random_mat(1, d, rng);
    const int J = 8;
    const auto zs = interpolation_latents(m.flow(), z1, z2, J);
    const Mat<double> w1 = m.flow().forward_value(Mat<double>(z1)).first;
    const Mat<double> w2 = m.flow().forward_value(Mat<double>(z2)).first;
    for (int j = 0; j <= J; ++j) {
      const double a = static_cast<double>(j) / J;
      const Mat<double> w = m.flow().forward_value(Mat<double>(zs[static_cast<std::size_t>(j)])).first;
      EXPECT_LT((w - ((1 - a) * w1 + a * w2)).cwiseAbs().maxCoeff(), 1e-5);
    }
  }
}

TEST(Sampler, IdentityFlowInterpolatesLinearly) {
  const auto cfg = test::small_config();
  ClsmModel<double> m(cfg, 2);
  std::mt19937_64 rng(3);
  const RowVec<double> z1 = test::random_mat(1, cfg.d_z, rng), z2 = test::random_mat(1, cfg.d_z, rng);
  const auto zs = interpolation_latents(m.flow(), z1, z2, 5);
  for (int j = 0; j <= 5; ++j) {
    const double a = j / 5.0;
    EXPECT_LT((zs[static_cast<std::size_t>(j)] - ((1 - a) * z1 + a * z2)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST_F(SamplerTest, VaryDeltaZeroIsIdentity) {
  const auto c = random_ctx(cfg, rng);
  nn::Rng r(4);
  const auto z = sample_from_prior(m, c.left, c.right, c.span, r);
  EXPECT_TRUE(test::bit_equal(vary_latent(m, z, 0.0, c.left, c.right, c.span, r), z));
  nn::Rng a(9), b(9);
  const auto base = assemble(c.left, greedy_decode_target(m, z, c.left, c.right, c.span), c.right);
  EXPECT_EQ(vary_contextual(m, z, 0.0, c.left, c.right, c.span, a), base);
  nn::Rng x1(10), x2(10);
  EXPECT_EQ(vary_contextual(m, z, 1.0, c.left, c.right, c.span, x1),
            vary_contextual(m, z, 1.0, c.left, c.right, c.span, x2));
}

TEST(Sampler, IdentityFlowVaryAddsScaledNoise) {
  const auto cfg = test::small_config();
  ClsmModel<double> m(cfg, 2);
  std::mt19937_64 rng(3);
  const auto c = random_ctx(cfg, rng);
  const RowVec<double> z = test::random_mat(1, cfg.d_z, rng);
  const RowVec<double> sd = m.prior_base_params(c.left, c.right, c.span).stddev();
  nn::Rng a(21), b(21);
  const auto zd = vary_latent(m, z, 0.7, c.left, c.right, c.span, a);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < cfg.d_z; ++k) EXPECT_NEAR(zd(k), z(k) + 0.7 * sd(k) * n(b), 1e-12);
}

TEST(Sampler, VaryNoiseMatchesPriorVariance) {
  const auto cfg = test::small_config();
  ClsmModel<float> m(cfg, 5);
  std::mt19937_64 rng(6);
  const auto c = random_ctx(cfg, rng);
  const RowVec<float> sd = m.prior_base_params(c.left, c.right, c.span).stddev();
  const RowVec<float> z = RowVec<float>::Zero(cfg.d_z);
  constexpr int n = 10000;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(cfg.d_z), sq = Eigen::ArrayXd::Zero(cfg.d_z);
  nn::Rng r(7);
  for (int i = 0; i < n; ++i) {
    const Eigen::ArrayXd e = vary_latent(m, z, 1.0, c.left, c.right, c.span, r).cast<double>().transpose().array();
    sum += e;
    sq += e.square();
  }
  const Eigen::ArrayXd mean = sum / n;
  const Eigen::ArrayXd std = (sq / n - mean.square()).sqrt();
  for (int k = 0; k < cfg.d_z; ++k) EXPECT_NEAR(std(k) / sd(k), 1.0, 0.03) << k;
}

TEST(Sampler, PriorSampleMeanMatchesBase) {
  const auto cfg = test::small_config();
  ClsmModel<float> m(cfg, 8);
  standard_prior(m);
  std::mt19937_64 rng(9);
  const auto c = random_ctx(cfg, rng);
  const auto base = m.prior_base_params(c.left, c.right, c.span);
  EXPECT_TRUE(base.mean.isZero(0.0f));
  EXPECT_TRUE(base.variance().isOnes(1e-6f));
  constexpr int n = 10000;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(cfg.d_z);
  nn::Rng r(10);
  for (int i = 0; i < n; ++i) sum += sample_from_prior(m, c.left, c.right, c.span, r).cast<double>().transpose().array();
  EXPECT_LT((sum / n).abs().maxCoeff(), 0.05);
}
