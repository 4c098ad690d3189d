#include <gtest/gtest.h>

#include <Eigen/LU>
#include <cmath>
#include <limits>
#include <random>

#include "clsm/flow.hpp"
#include "helpers.hpp"

using namespace clsm;
using ag::Mat;

namespace {

struct Fixture {
  ParamStore<double> store;
  FlowStack<double> flow;
  Fixture(Eigen::Index d, int layers, Eigen::Index hidden, double scale, std::uint64_t seed) {
    nn::Rng rng(seed);
    flow = FlowStack<double>(store, "flow", d, layers, hidden, 0.01, rng);
    if (scale > 0) test::randomize(store, scale, seed + 1);
  }
};

double fd_log_abs_det(const FlowStack<double>& f, const Mat<double>& z, double h = 1e-5) {
  const auto d = z.cols();
  Mat<double> J(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Mat<double> up = z, down = z;
    up(0, j) += h;
    down(0, j) -= h;
    J.col(j) = ((f.forward_value(up).first - f.forward_value(down).first) / (2 * h)).transpose();
  }
  return std::log(std::abs(J.determinant()));
}

}  // namespace

TEST(Flow, IdentityAtInit) {
  Fixture fx(8, 4, 16, 0.0, 1);
  std::mt19937_64 rng(2);
  const Mat<double> z = test::random_mat(5, 8, rng);
  const auto [w, ld] = fx.flow.forward_value(z);
  EXPECT_TRUE(test::bit_equal(Mat<double>(w), z));
  EXPECT_TRUE(ld.isZero(0.0));
  EXPECT_TRUE(test::bit_equal(fx.flow.inverse(z), z));
}

TEST(Flow, AnalyticTwoDimensionalScale) {
  Fixture fx(2, 1, 4, 0.0, 1);
  auto& layer = fx.flow.layers()[0];
  ASSERT_TRUE(layer.transform_second);
  layer.scale.output_layer().bias()->value.setConstant(std::atanh(std::log(2.0)));
  Mat<double> z(1, 2);
  z << 0.7, -1.3;
  const auto [w, ld] = fx.flow.forward_value(z);
  EXPECT_NEAR(w(0, 0), 0.7, 1e-12);
  EXPECT_NEAR(w(0, 1), -2.6, 1e-12);
  EXPECT_NEAR(ld(0, 0), std::log(2.0), 1e-12);
  const Mat<double> back = fx.flow.inverse(w);
  EXPECT_NEAR(back(0, 0), 0.7, 1e-12);
  EXPECT_NEAR(back(0, 1), -1.3, 1e-12);
}

TEST(Flow, RoundTripDz128) {
  Fixture fx(128, 4, 64, 0.1, 3);
  std::mt19937_64 rng(4);
  const Mat<double> z = test::random_mat(1000, 128, rng);
  const auto [w, ld] = fx.flow.forward_value(z);
  EXPECT_GT((w - z).cwiseAbs().maxCoeff(), 1e-2);  // the flow is not trivially the identity
  EXPECT_LT((fx.flow.inverse(w) - z).cwiseAbs().maxCoeff(), 1e-5);
  const Mat<double> w2 = test::random_mat(1000, 128, rng);
  EXPECT_LT((fx.flow.forward_value(fx.flow.inverse(w2)).first - w2).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Flow, FloatRoundTrip) {
  ParamStore<float> store;
  nn::Rng rng(5);
  FlowStack<float> flow(store, "flow", 16, 4, 16, 0.01f, rng);
  test::randomize(store, 0.1, 6);
  std::mt19937_64 r(7);
  const Mat<float> z = test::random_mat(100, 16, r).cast<float>();
  EXPECT_LT((flow.inverse(flow.forward_value(z).first) - z).cwiseAbs().maxCoeff(), 1e-5f);
}

TEST(Flow, LogDetMatchesFiniteDifferenceJacobian) {
  Fixture fx(8, 4, 16, 0.3, 8);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat<double> z = test::random_mat(1, 8, rng);
    const double ld = fx.flow.forward_value(z).second(0, 0);
    const double fd = fd_log_abs_det(fx.flow, z);
    EXPECT_LE(std::abs(ld - fd), 1e-3 * std::max(1.0, std::abs(fd))) << ld << " vs " << fd;
  }
}

TEST(Flow, LogDetIsSumOfScales) {
  // Backprop of sum(log_det) through a fresh tape agrees with finite differences.
  Fixture fx(4, 2, 8, 0.3, 10);
  std::mt19937_64 rng(11);
  const double err = test::fd_max_rel_error({test::random_mat(3, 4, rng)}, [&](ag::Tape<double>& t, const auto& v) {
    auto r = fx.flow.forward(t, v[0]);
    return ag::add(ag::sum(r.log_det), ag::sum(ag::mul(r.w, r.w)));
  });
  EXPECT_LT(err, 1e-5);
}

TEST(Flow, NonFiniteInputThrows) {
  Fixture fx(4, 2, 8, 0.1, 12);
  Mat<double> z = Mat<double>::Zero(1, 4);
  z(0, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fx.flow.forward_value(z), NumericalError);
  EXPECT_THROW(fx.flow.inverse(z), NumericalError);
  z(0, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fx.flow.forward_value(z), NumericalError);
}

TEST(Flow, OddDimensionRejected) {
  ParamStore<double> store;
  nn::Rng rng(0);
  EXPECT_THROW(FlowStack<double>(store, "flow", 5, 2, 4, 0.01, rng), InvalidConfig);
}

TEST(PriorDensity, StandardNormalAtMode) {
  Fixture fx(2, 2, 4, 0.0, 1);
  ag::Tape<double> t(false);
  const auto z = t.constant(Mat<double>::Zero(1, 2));
  const auto mean = t.constant(Mat<double>::Zero(1, 2));
  const auto log_v = t.constant(Mat<double>::Constant(1, 2, std::log(2.0)));
  EXPECT_NEAR(prior_log_density(t, z, mean, log_v, fx.flow).scalar(), -std::log(2 * M_PI), 1e-12);
  EXPECT_NEAR(-std::log(2 * M_PI), -1.8379, 1e-4);

  std::mt19937_64 rng(3);
  const Mat<double> zz = test::random_mat(1, 2, rng), mm = test::random_mat(1, 2, rng), lv = test::random_mat(1, 2, rng);
  const double plain = ag::gaussian_log_density(t.constant(zz), t.constant(mm), t.constant(lv)).scalar();
  EXPECT_DOUBLE_EQ(prior_log_density(t, t.constant(zz), t.constant(mm), t.constant(lv), fx.flow).scalar(), plain);
}

TEST(PriorDensity, NormalizesOnGrid) {
  Fixture fx(2, 4, 8, 0.4, 21);
  constexpr int n = 600;
  constexpr double lo = -12, hi = 12, h = (hi - lo) / n;
  Mat<double> z(n * n, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) z.row(i * n + j) << lo + (i + 0.5) * h, lo + (j + 0.5) * h;
  ag::Tape<double> t(false);
  Mat<double> mean(n * n, 2), log_v(n * n, 2);
  mean.col(0).setConstant(0.3);
  mean.col(1).setConstant(-0.5);
  log_v.col(0).setConstant(std::log(2.0) + 0.4);
  log_v.col(1).setConstant(std::log(2.0) - 0.6);
  const Mat<double> lp =
      prior_log_density(t, t.constant(z), t.constant(mean), t.constant(log_v), fx.flow).value();
  EXPECT_GT(fx.flow.forward_value(z).second.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_NEAR(lp.array().exp().sum() * h * h, 1.0, 0.02);
}

TEST(Gaussian, VarianceIsHalfExp) {
  GaussianParams<double> g{ag::RowVec<double>::Zero(3), ag::RowVec<double>::Constant(3, std::log(2.0))};
  EXPECT_NEAR(g.variance()(0), 1.0, 1e-15);
  EXPECT_NEAR(g.stddev()(2), 1.0, 1e-15);
}
