#pragma once

// Evaluation: edit distance, the interpolation edit distance ratio R(J), and
// left-contextual reconstruction accuracy.

#include <algorithm>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsm/errors.hpp"
#include "clsm/model.hpp"
#include "clsm/sampler.hpp"
#include "clsm/tokens.hpp"
#include "clsm/vae.hpp"

namespace clsm {

// Levenshtein distance with unit costs, two-row DP.
inline int edit_distance(const TokenSeq& a, const TokenSeq& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct PathRatio {
  int J = 0;
  int D = 0;        // distance between the endpoints
  int n_zero = 0;   // adjacent pairs at distance 0
  int sum = 0;      // sum of adjacent distances
  bool excluded() const { return D * (J - n_zero) == 0; }
  double ratio() const { return static_cast<double>(sum) / (static_cast<double>(D) * (J - n_zero)); }
};

inline PathRatio path_ratio(const std::vector<int>& adjacent, int D) {
  PathRatio p;
  p.J = static_cast<int>(adjacent.size());
  p.D = D;
  for (int d : adjacent) {
    p.sum += d;
    if (d == 0) ++p.n_zero;
  }
  return p;
}

// J+1 target sequences along one interpolation path.
inline PathRatio path_ratio(const std::vector<TokenSeq>& targets) {
  if (targets.size() < 2) throw InvalidInput("interpolation path needs at least two points");
  std::vector<int> adj;
  for (std::size_t j = 0; j + 1 < targets.size(); ++j) adj.push_back(edit_distance(targets[j], targets[j + 1]));
  return path_ratio(adj, edit_distance(targets.front(), targets.back()));
}

struct IEDRReport {
  int J = 0;
  double ratio = 0;
  long n_excluded_pairs = 0;
  long n_excluded_paths = 0;
  long n_paths = 0;  // evaluated (not excluded)
};

inline nlohmann::json to_json(const IEDRReport& r) {
  return {{"J", r.J}, {"ratio", r.ratio}, {"n_excluded_pairs", r.n_excluded_pairs},
          {"n_excluded_paths", r.n_excluded_paths}, {"n_paths", r.n_paths}};
}

inline IEDRReport aggregate_iedr(int J, const std::vector<PathRatio>& paths) {
  IEDRReport r;
  r.J = J;
  double total = 0;
  for (const auto& p : paths) {
    if (p.J != J) throw InvalidInput("path length does not match J");
    r.n_excluded_pairs += p.n_zero;
    if (p.excluded()) {
      ++r.n_excluded_paths;
      continue;
    }
    const double ratio = p.ratio();
    if (ratio < 1.0 / (J - p.n_zero) - 1e-12)
      throw NumericalError("interpolation path violates the triangle-inequality bound");
    total += ratio;
    ++r.n_paths;
  }
  if (r.n_paths == 0) throw EmptyEvaluation("every interpolation path was excluded");
  r.ratio = total / static_cast<double>(r.n_paths);
  return r;
}

// Produces the J+1 decoded target subsequences for one (window, span).
using PathFn = std::function<std::vector<TokenSeq>(const TokenSeq& window, const TargetSpan& span, int J,
                                                   nn::Rng& rng)>;

inline IEDRReport interpolation_edit_distance_ratio(const PathFn& path, const std::vector<TokenSeq>& windows,
                                                    const SpanGrid& grid, int J, std::uint64_t seed) {
  if (J < 1) throw InvalidInput("J must be at least 1");
  nn::Rng rng(seed);
  std::vector<PathRatio> ratios;
  for (const auto& w : windows) {
    const TargetSpan span = sample_target_span(rng, grid);
    ratios.push_back(path_ratio(path(w, span, J, rng)));
  }
  return aggregate_iedr(J, ratios);
}

template <class S>
PathFn clsm_path(const ClsmModel<S>& m) {
  return [&m](const TokenSeq& window, const TargetSpan& span, int J, nn::Rng& rng) {
    const auto [left, right] = contexts_of(window, span);
    const auto z1 = sample_from_prior(m, left, right, span, rng);
    const auto z2 = sample_from_prior(m, left, right, span, rng);
    std::vector<TokenSeq> targets;
    for (const auto& z : interpolation_latents(m.flow(), z1, z2, J))
      targets.push_back(greedy_decode_target(m, z, left, right, span));
    return targets;
  };
}

// z1, z2 ~ N(0, I), linear path in Z, decoding after the left context.
template <class S>
PathFn vae_path(const VaeModel<S>& m) {
  return [&m](const TokenSeq& window, const TargetSpan& span, int J, nn::Rng& rng) {
    const auto [left, right] = contexts_of(window, span);
    const auto z1 = sample_standard_normal<S>(m.config().d_z, rng);
    const auto z2 = sample_standard_normal<S>(m.config().d_z, rng);
    std::vector<TokenSeq> targets;
    for (const auto& x : vae_interpolate(m, z1, z2, J, left, right, span)) targets.push_back(target_of(x, span));
    return targets;
  };
}

// Produces a guess for x_T given the window (whose target the guesser may
// only use through an encoder) and a left-contextual span.
using ReconFn = std::function<TokenSeq(const TokenSeq& window, const TargetSpan& span)>;

// Mean fraction of exactly matching target tokens; spans end at the window
// edge so there is no right context. Context tokens are never scored.
inline double recon_accuracy(const ReconFn& guess, const std::vector<TokenSeq>& windows, const SpanGrid& grid,
                             std::uint64_t seed) {
  if (windows.empty()) throw EmptyEvaluation("no windows to evaluate");
  nn::Rng rng(seed);
  double total = 0;
  for (const auto& x : windows) {
    const TargetSpan span = sample_left_contextual_span(rng, grid);
    const TokenSeq g = guess(x, span);
    const TokenSeq truth = target_of(x, span);
    if (g.size() != truth.size()) throw InvalidInput("reconstruction has the wrong length");
    int hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += g[i] == truth[i];
    total += static_cast<double>(hits) / static_cast<double>(truth.size());
  }
  return total / static_cast<double>(windows.size());
}

// z is the posterior mean of the true window.
template <class S>
double left_contextual_recon_accuracy(const ClsmModel<S>& m, const std::vector<TokenSeq>& windows,
                                      std::uint64_t seed) {
  return recon_accuracy(
      [&m](const TokenSeq& x, const TargetSpan& span) {
        const auto q = m.encode_posterior(x, span);
        const auto [left, right] = contexts_of(x, span);
        return greedy_decode_target(m, q.mean, left, right, span);
      },
      windows, m.config().grid(), seed);
}

// VAE: posterior mean of the full window, decoded after the left context.
template <class S>
double left_contextual_recon_accuracy(const VaeModel<S>& m, const std::vector<TokenSeq>& windows, const SpanGrid& grid,
                                      std::uint64_t seed) {
  return recon_accuracy(
      [&m](const TokenSeq& x, const TargetSpan& span) {
        ag::Tape<S> t(false);
        const ag::RowVec<S> mean = m.encode({t}, x).mean.value().row(0);
        return m.decode_after(mean, contexts_of(x, span).first, span.length);
      },
      windows, grid, seed);
}

}  // namespace clsm
