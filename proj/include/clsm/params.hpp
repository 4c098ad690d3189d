#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "clsm/autograd.hpp"

namespace clsm {

template <class S>
struct Parameter {
  std::string name;
  ag::Mat<S> value;
  ag::Mat<S> grad;  // empty until first accumulation
};

// Named parameter collection. Element addresses are stable for the lifetime
// of the store, so modules keep raw pointers into it.
template <class S>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<S>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    params_.push_back({name, ag::Mat<S>::Zero(rows, cols), {}});
    index_.emplace(name, params_.size() - 1);
    return params_.back();
  }

  Parameter<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.resize(0, 0);
  }

  // Global L2 norm of all accumulated gradients.
  S grad_norm() const {
    S acc = 0;
    for (const auto& p : params_)
      if (p.grad.size()) acc += p.grad.squaredNorm();
    return std::sqrt(acc);
  }

  void scale_grads(S k) {
    for (auto& p : params_)
      if (p.grad.size()) p.grad *= k;
  }

 private:
  std::deque<Parameter<S>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class S>
ag::Var<S> use(ag::Tape<S>& tape, Parameter<S>& p) {
  return tape.leaf(p.value, tape.recording() ? &p.grad : nullptr);
}

namespace init {

template <class S, class Rng>
void uniform(ag::Mat<S>& m, S bound, Rng& rng) {
  std::uniform_real_distribution<double> d(-static_cast<double>(bound), static_cast<double>(bound));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(d(rng));
}

template <class S, class Rng>
void normal(ag::Mat<S>& m, S stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, static_cast<double>(stddev));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(d(rng));
}

}  // namespace init

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<S>& store) {
    if (m_.empty()) {
      for (auto& p : store) {
        m_.push_back(ag::Mat<S>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(ag::Mat<S>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S step = static_cast<S>(cfg_.lr / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    const S eps = static_cast<S>(cfg_.eps);
    std::size_t i = 0;
    for (auto& p : store) {
      auto& m = m_[i];
      auto& v = v_[i];
      ++i;
      if (p.grad.size() == 0) continue;
      m = b1 * m + (S(1) - b1) * p.grad;
      v = b2 * v + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      if (cfg_.lr == 0.0) continue;
      p.value.array() -= step * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<ag::Mat<S>> m_, v_;
};

}  // namespace clsm
