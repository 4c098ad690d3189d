#pragma once

// Conditional-prior flow f: Z -> W, a stack of affine coupling layers.
//
// Layer l keeps one half of the coordinates (the conditioner) and maps the
// other half as  y = x * exp(s(c)) + t(c),  with s = tanh(MLP_s(c)). Even
// layers transform the second half, odd layers the first. The log-Jacobian
// determinant of a layer is sum(s(c)).

#include <cmath>
#include <string>
#include <vector>

#include "clsm/autograd.hpp"
#include "clsm/errors.hpp"
#include "clsm/nn.hpp"

namespace clsm {

// Diagonal Gaussian; variance = 0.5 * exp(log_v).
template <class S>
struct GaussianParams {
  ag::RowVec<S> mean;
  ag::RowVec<S> log_v;

  ag::RowVec<S> variance() const { return (S(0.5) * log_v.array().exp()).matrix(); }
  ag::RowVec<S> stddev() const { return variance().array().sqrt().matrix(); }
  Eigen::Index dim() const { return mean.size(); }
};

template <class S>
bool all_finite(const ag::Mat<S>& m) {
  return m.array().isFinite().all();
}

// Three linear layers with leaky-ReLU between them; the last layer starts at
// zero so a fresh flow is the identity.
template <class S>
class CouplingNet {
 public:
  CouplingNet() = default;
  CouplingNet(ParamStore<S>& store, const std::string& name, Eigen::Index io, Eigen::Index hidden, S slope,
              nn::Rng& rng)
      : slope_(slope),
        l0_(store, name + ".0", io, hidden, rng),
        l1_(store, name + ".1", hidden, hidden, rng),
        l2_(store, name + ".2", hidden, io, rng) {
    l2_.weight().value.setZero();
    l2_.bias()->value.setZero();
  }
  ag::Var<S> operator()(ag::Tape<S>& t, ag::Var<S> x) const {
    auto h = ag::leaky_relu(l0_(t, x), slope_);
    h = ag::leaky_relu(l1_(t, h), slope_);
    return l2_(t, h);
  }
  nn::Linear<S>& output_layer() { return l2_; }

 private:
  S slope_ = S(0.01);
  nn::Linear<S> l0_, l1_, l2_;
};

template <class S>
class FlowStack {
 public:
  struct Coupling {
    bool transform_second = true;
    CouplingNet<S> scale;
    CouplingNet<S> shift;
  };

  struct Result {
    ag::Var<S> w;
    ag::Var<S> log_det;  // rows x 1
  };

  FlowStack() = default;
  FlowStack(ParamStore<S>& store, const std::string& name, Eigen::Index d_z, int layers, Eigen::Index hidden,
            S slope, nn::Rng& rng)
      : dim_(d_z) {
    if (d_z % 2 != 0) throw InvalidConfig("flow dimension must be even");
    const Eigen::Index half = d_z / 2;
    for (int l = 0; l < layers; ++l) {
      const std::string pre = name + ".coupling" + std::to_string(l);
      layers_.push_back({l % 2 == 0, CouplingNet<S>(store, pre + ".scale", half, hidden, slope, rng),
                         CouplingNet<S>(store, pre + ".shift", half, hidden, slope, rng)});
    }
  }

  Eigen::Index dim() const { return dim_; }
  std::vector<Coupling>& layers() { return layers_; }

  // z: n x d_z, one latent per row.
  Result forward(ag::Tape<S>& t, ag::Var<S> z) const {
    if (!all_finite(z.value())) throw NumericalError("flow forward: non-finite input");
    const Eigen::Index h = dim_ / 2;
    ag::Var<S> x = z;
    ag::Var<S> log_det = t.constant(ag::Mat<S>::Zero(z.rows(), 1));
    for (const auto& c : layers_) {
      auto first = ag::cols(x, 0, h);
      auto second = ag::cols(x, h, h);
      auto cond = c.transform_second ? first : second;
      auto moved = c.transform_second ? second : first;
      auto s = ag::tanh(c.scale(t, cond));
      auto shifted = ag::add(ag::mul(moved, ag::exp(s)), c.shift(t, cond));
      x = c.transform_second ? ag::concat_cols<S>({cond, shifted}) : ag::concat_cols<S>({shifted, cond});
      log_det = ag::add(log_det, ag::matmul(s, t.constant(ag::Mat<S>::Ones(h, 1))));
    }
    return {x, log_det};
  }

  std::pair<ag::Mat<S>, ag::Mat<S>> forward_value(const ag::Mat<S>& z) const {
    ag::Tape<S> t(false);
    auto r = forward(t, t.constant(z));
    return {r.w.value(), r.log_det.value()};
  }

  ag::Mat<S> inverse(const ag::Mat<S>& w) const {
    if (!all_finite(w)) throw NumericalError("flow inverse: non-finite input");
    const Eigen::Index h = dim_ / 2;
    ag::Mat<S> x = w;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      ag::Tape<S> t(false);
      const ag::Mat<S> cond = it->transform_second ? x.leftCols(h) : x.rightCols(h);
      auto c = t.constant(cond);
      const ag::Mat<S> s = ag::tanh(it->scale(t, c)).value();
      const ag::Mat<S> shift = it->shift(t, c).value();
      auto moved = it->transform_second ? x.rightCols(h) : x.leftCols(h);
      moved = ((moved - shift).array() * (-s.array()).exp()).matrix();
    }
    return x;
  }

 private:
  Eigen::Index dim_ = 0;
  std::vector<Coupling> layers_;
};

// log N(f(z); base) + log|det df/dz|, one value per row of z.
template <class S>
ag::Var<S> prior_log_density(ag::Tape<S>& t, ag::Var<S> z, ag::Var<S> base_mean, ag::Var<S> base_log_v,
                             const FlowStack<S>& flow) {
  auto r = flow.forward(t, z);
  return ag::add(ag::gaussian_log_density(r.w, base_mean, base_log_v), r.log_det);
}

}  // namespace clsm
