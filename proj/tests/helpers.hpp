#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "clsm/autograd.hpp"
#include "clsm/config.hpp"
#include "clsm/params.hpp"
#include "clsm/tokens.hpp"

namespace clsm::test {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "clsm") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

using Fn = std::function<ag::Var<double>(ag::Tape<double>&, const std::vector<ag::Var<double>>&)>;

// Max relative error between backprop and central differences for a scalar
// function of several matrix inputs.
inline double fd_max_rel_error(std::vector<ag::Mat<double>> inputs, const Fn& f, double h = 1e-6) {
  std::vector<ag::Mat<double>> grads(inputs.size());
  {
    ag::Tape<double> t;
    std::vector<ag::Var<double>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(t.leaf(inputs[i], &grads[i]));
    t.backward(f(t, vars));
  }
  const auto eval = [&] {
    ag::Tape<double> t(false);
    std::vector<ag::Var<double>> vars;
    for (auto& in : inputs) vars.push_back(t.leaf(in, nullptr));
    return f(t, vars).scalar();
  };
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      const double orig = inputs[i].data()[k];
      inputs[i].data()[k] = orig + h;
      const double up = eval();
      inputs[i].data()[k] = orig - h;
      const double down = eval();
      inputs[i].data()[k] = orig;
      const double num = (up - down) / (2 * h);
      const double ana = grads[i].size() ? grads[i].data()[k] : 0.0;
      worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
    }
  }
  return worst;
}

inline ag::Mat<double> random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  ag::Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

template <class S>
void randomize(ParamStore<S>& store, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& p : store)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += static_cast<S>(n(rng));
}

template <class S>
void randomize_flow(ParamStore<S>& store, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& p : store)
    if (p.name.rfind("flow.", 0) == 0)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += static_cast<S>(n(rng));
}

// Small but structurally complete configuration for fast model tests.
inline ModelConfig small_config() {
  ModelConfig c;
  c.d_z = 8;
  c.l_z = 2;
  c.token_embed = 16;
  c.hidden = 16;
  c.heads = 2;
  c.mlp_hidden = 16;
  c.n_transformer_layers = 2;
  c.n_lstm_layers = 2;
  c.n_coupling_layers = 4;
  c.coupling_mlp_hidden = 16;
  c.K = 32;
  c.bar = 8;
  c.dropout = 0.1;
  return c;
}

inline TokenSeq random_window(int K, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tok(0, alphabet::kDataSize - 1);
  TokenSeq x(static_cast<std::size_t>(K));
  for (auto& t : x) t = tok(rng);
  return x;
}

template <class M>
bool bit_equal(const M& a, const M& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace clsm::test
