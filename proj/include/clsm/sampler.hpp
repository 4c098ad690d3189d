#pragma once

// Generation with a trained CLSM: prior sampling, greedy target decoding,
// interpolation in W and variation around an anchor.

#include <cmath>
#include <random>
#include <vector>

#include "clsm/errors.hpp"
#include "clsm/model.hpp"
#include "clsm/tokens.hpp"

namespace clsm {

template <class S>
void check_contexts(const ModelConfig& cfg, const TokenSeq& left, const TokenSeq& right, const TargetSpan& span) {
  validate(span, cfg.grid());
  if (static_cast<int>(left.size()) != span.start ||
      static_cast<int>(left.size() + right.size()) + span.length != cfg.K)
    throw InvalidSpan("context lengths do not match the span");
  for (const TokenSeq* part : {&left, &right})
    for (Token t : *part)
      if (!alphabet::is_data(t)) throw InvalidToken("context contains a non-data token");
}

// w ~ N(prior base), z = f^-1(w)
template <class S>
ag::RowVec<S> sample_from_prior(const ClsmModel<S>& m, const TokenSeq& left, const TokenSeq& right,
                                const TargetSpan& span, nn::Rng& rng) {
  check_contexts<S>(m.config(), left, right, span);
  const auto base = m.prior_base_params(left, right, span);
  const ag::RowVec<S> sd = base.stddev();
  std::normal_distribution<double> n(0.0, 1.0);
  ag::Mat<S> w(1, base.dim());
  for (Eigen::Index i = 0; i < w.cols(); ++i) w(0, i) = base.mean(i) + sd(i) * static_cast<S>(n(rng));
  return m.flow().inverse(w).row(0);
}

struct DecodeOptions {
  double temperature = 0.0;  // 0 = argmax
  nn::Rng* rng = nullptr;    // required when temperature > 0
};

// Left to right over the target; step i re-runs the decoder with the chosen
// prefix in place and reads row i. Placeholders after the prefix are masked out.
template <class S>
TokenSeq greedy_decode_target(const ClsmModel<S>& m, const ag::RowVec<S>& z, const TokenSeq& left,
                              const TokenSeq& right, const TargetSpan& span, const DecodeOptions& opt = {}) {
  check_contexts<S>(m.config(), left, right, span);
  if (opt.temperature < 0) throw InvalidInput("temperature must be non-negative");
  if (opt.temperature > 0 && !opt.rng) throw InvalidInput("temperature sampling needs a generator");
  TokenSeq x = assemble(left, TokenSeq(static_cast<std::size_t>(span.length), alphabet::kRest), right);
  TokenSeq out(static_cast<std::size_t>(span.length));
  for (int i = 0; i < span.length; ++i) {
    const ag::Mat<S> logits = m.logits(x, span, z);
    Eigen::Index best = 0;
    if (opt.temperature > 0) {
      const auto row = logits.row(i);
      std::vector<double> w(static_cast<std::size_t>(row.size()));
      const double mx = static_cast<double>(row.maxCoeff());
      for (Eigen::Index k = 0; k < row.size(); ++k)
        w[static_cast<std::size_t>(k)] = std::exp((static_cast<double>(row(k)) - mx) / opt.temperature);
      std::discrete_distribution<int> d(w.begin(), w.end());
      best = d(*opt.rng);
    } else {
      logits.row(i).maxCoeff(&best);
    }
    out[static_cast<std::size_t>(i)] = static_cast<Token>(best);
    x[static_cast<std::size_t>(span.start + i)] = static_cast<Token>(best);
  }
  return out;
}

// z(a) = f^-1((1-a) f(z1) + a f(z2)) for a = j/J; the endpoints are the anchors themselves.
template <class S>
std::vector<ag::RowVec<S>> interpolation_latents(const FlowStack<S>& flow, const ag::RowVec<S>& z1,
                                                 const ag::RowVec<S>& z2, int J) {
  if (J < 1) throw InvalidInput("J must be at least 1");
  if (z1.size() != z2.size() || z1.size() != flow.dim()) throw InvalidInput("latent dimension mismatch");
  ag::Mat<S> both(2, z1.size());
  both.row(0) = z1;
  both.row(1) = z2;
  const ag::Mat<S> w = flow.forward_value(both).first;
  std::vector<ag::RowVec<S>> out;
  out.reserve(static_cast<std::size_t>(J) + 1);
  out.push_back(z1);
  if (J > 1) {
    ag::Mat<S> mid(J - 1, z1.size());
    for (int j = 1; j < J; ++j) {
      const S a = static_cast<S>(j) / static_cast<S>(J);
      mid.row(j - 1) = (S(1) - a) * w.row(0) + a * w.row(1);
    }
    const ag::Mat<S> zs = flow.inverse(mid);
    for (int j = 0; j < J - 1; ++j) out.push_back(zs.row(j));
  }
  out.push_back(z2);
  return out;
}

template <class S>
std::vector<TokenSeq> interpolate_contextual(const ClsmModel<S>& m, const ag::RowVec<S>& z1, const ag::RowVec<S>& z2,
                                             int J, const TokenSeq& left, const TokenSeq& right,
                                             const TargetSpan& span) {
  std::vector<TokenSeq> out;
  for (const auto& z : interpolation_latents(m.flow(), z1, z2, J))
    out.push_back(assemble(left, greedy_decode_target(m, z, left, right, span), right));
  return out;
}

// eps ~ N(0, diag(prior base variance)), z(delta) = f^-1(f(z) + delta * eps)
template <class S>
ag::RowVec<S> vary_latent(const ClsmModel<S>& m, const ag::RowVec<S>& z, double delta, const TokenSeq& left,
                          const TokenSeq& right, const TargetSpan& span, nn::Rng& rng) {
  if (!(delta >= 0)) throw InvalidInput("delta must be non-negative");
  check_contexts<S>(m.config(), left, right, span);
  const ag::RowVec<S> sd = m.prior_base_params(left, right, span).stddev();
  std::normal_distribution<double> n(0.0, 1.0);
  ag::RowVec<S> eps(sd.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = sd(i) * static_cast<S>(n(rng));
  if (delta == 0) return z;
  ag::Mat<S> w = m.flow().forward_value(ag::Mat<S>(z)).first;
  w.row(0) += static_cast<S>(delta) * eps;
  return m.flow().inverse(w).row(0);
}

template <class S>
TokenSeq vary_contextual(const ClsmModel<S>& m, const ag::RowVec<S>& z, double delta, const TokenSeq& left,
                         const TokenSeq& right, const TargetSpan& span, nn::Rng& rng) {
  const auto zd = vary_latent(m, z, delta, left, right, span, rng);
  return assemble(left, greedy_decode_target(m, zd, left, right, span), right);
}

}  // namespace clsm
