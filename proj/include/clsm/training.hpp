#pragma once

// Objective, KL annealing, the optimisation loop, and finite-difference
// gradient verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsm/autograd.hpp"
#include "clsm/checkpoint.hpp"
#include "clsm/config.hpp"
#include "clsm/corpus.hpp"
#include "clsm/errors.hpp"
#include "clsm/model.hpp"
#include "clsm/params.hpp"

namespace clsm {

struct LossBreakdown {
  double rec = 0;    // mean log-likelihood per target token
  double kl = 0;     // single-sample KL estimate
  double beta = 0;   // KL weight in effect
  double total = 0;  // minimised loss

  LossBreakdown& operator+=(const LossBreakdown& o) {
    rec += o.rec;
    kl += o.kl;
    total += o.total;
    return *this;
  }
  LossBreakdown scaled(double k) const { return {rec * k, kl * k, beta, total * k}; }
};

inline double beta_schedule(long step, long total_anneal_steps, double beta_max) {
  if (total_anneal_steps <= 0) throw InvalidConfig("beta_schedule: total_anneal_steps must be positive");
  if (step < 0) throw InvalidConfig("beta_schedule: negative step");
  return beta_max * std::min(1.0, static_cast<double>(step) / static_cast<double>(total_anneal_steps));
}

// Seeds one generator per (base, index) pair so sample i's randomness does
// not depend on how the batch is traversed.
inline nn::Rng derive_rng(std::uint64_t base, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return nn::Rng(seq);
}

template <class S>
ag::Mat<S> standard_normal(Eigen::Index rows, Eigen::Index cols, nn::Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ag::Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
  return m;
}

// z = mean + sqrt(0.5 exp(log_v)) * eps
template <class S>
ag::Var<S> reparameterize(ag::Tape<S>& t, const GaussianVars<S>& q, const ag::Mat<S>& eps) {
  auto stddev = ag::exp(ag::scale(ag::add_scalar(q.log_v, std::log(S(0.5))), S(0.5)));
  return ag::add(q.mean, ag::mul(stddev, t.constant(eps)));
}

// log q(z | x, span) - log p(z | contexts, span) for one latent sample.
template <class S>
ag::Var<S> single_sample_kl(ag::Tape<S>& t, ag::Var<S> z, const GaussianVars<S>& posterior,
                            const GaussianVars<S>& prior_base, const FlowStack<S>& flow) {
  auto log_q = ag::gaussian_log_density(z, posterior.mean, posterior.log_v);
  auto log_p = prior_log_density(t, z, prior_base.mean, prior_base.log_v, flow);
  return ag::sub(log_q, log_p);
}

template <class S>
struct SampleLoss {
  ag::Var<S> total, rec, kl;
};

// -(rec/|x_T| - beta * kl) for one window and span, with z drawn from the
// posterior using the supplied noise.
template <class S>
SampleLoss<S> clsm_sample_loss(const nn::Pass<S>& p, const ClsmModel<S>& m, const TokenSeq& x,
                               const TargetSpan& span, S beta, const ag::Mat<S>& eps) {
  auto& t = p.tape;
  const auto q = m.posterior(p, x, span);
  auto z = reparameterize(t, q, eps);
  const auto [left, right] = contexts_of(x, span);
  const auto base = m.prior_base(p, left, right, span);
  auto kl = single_sample_kl(t, z, q, base, m.flow());
  auto logits = m.decode_logits(p, x, span, z);
  const TokenSeq target = target_of(x, span);
  auto rec = ag::scale(ag::cross_entropy_sum(logits, std::vector<int>(target.begin(), target.end())),
                       S(-1) / static_cast<S>(span.length));
  auto total = ag::sub(ag::scale(kl, beta), rec);
  return {total, rec, kl};
}

// Mean loss over a batch. With accumulate=true, gradients of the batch mean are
// added into the parameters' grad buffers.
template <class S>
LossBreakdown clsm_batch_loss(ClsmModel<S>& m, const std::vector<TokenSeq>& xs, const std::vector<TargetSpan>& spans,
                              double beta, std::uint64_t noise_seed, bool accumulate, bool train_mode) {
  if (xs.size() != spans.size() || xs.empty()) throw InvalidInput("batch: windows and spans differ in count");
  LossBreakdown acc;
  const S inv_b = S(1) / static_cast<S>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    nn::Rng rng = derive_rng(noise_seed, i);
    ag::Tape<S> t(accumulate);
    nn::Pass<S> pass{t, train_mode, &rng, static_cast<S>(m.config().dropout)};
    const auto eps = standard_normal<S>(1, m.config().d_z, rng);
    auto loss = clsm_sample_loss(pass, m, xs[i], spans[i], static_cast<S>(beta), eps);
    if (!std::isfinite(static_cast<double>(loss.total.scalar())))
      throw NumericalError("non-finite loss at batch element " + std::to_string(i));
    acc += {static_cast<double>(loss.rec.scalar()), static_cast<double>(loss.kl.scalar()), beta,
            static_cast<double>(loss.total.scalar())};
    if (accumulate) t.backward(ag::scale(loss.total, inv_b));
  }
  auto out = acc.scaled(1.0 / static_cast<double>(xs.size()));
  out.beta = beta;
  return out;
}

// ---------------------------------------------------------------------------
// generic optimisation loop

struct StepRecord {
  long step = 0;
  int epoch = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  int epoch = 0;  // 0 = before training
  long step = 0;
  LossBreakdown loss;
};

struct FitResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> validation;
  double best_validation = std::numeric_limits<double>::infinity();
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
};

// What the loop needs from a model family.
template <class S>
struct TrainTarget {
  ParamStore<S>* params = nullptr;
  // Loss over windows; spans are resampled inside if the family uses them.
  std::function<LossBreakdown(const std::vector<TokenSeq>& batch, double weight, nn::Rng& rng, bool accumulate)>
      batch_loss;
  std::function<LossBreakdown()> validate;
  std::function<void(const std::filesystem::path&)> save;
  double weight_max = 0;  // KL weight after annealing (0 disables)
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"rec", l.rec}, {"kl", l.kl}, {"beta", l.beta}, {"total", l.total}};
}

template <class S>
FitResult train_loop(TrainTarget<S>& target, const std::vector<TokenSeq>& train, const TrainConfig& tc,
                     const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  tc.validate();
  if (train.empty()) throw InsufficientData("training split is empty");
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "metrics.jsonl");
  FitResult result;
  result.best_checkpoint = out_dir / "best.ckpt";
  result.final_checkpoint = out_dir / "final.ckpt";
  const auto last_good = out_dir / "last_good.ckpt";

  Adam<S> adam({tc.lr, tc.adam_beta1, tc.adam_beta2});
  nn::Rng rng(tc.seed);
  const long steps_per_epoch = static_cast<long>((train.size() + static_cast<std::size_t>(tc.batch) - 1) /
                                                 static_cast<std::size_t>(tc.batch));
  const long anneal_steps = std::max<long>(1, std::lround(tc.anneal_epochs * static_cast<double>(steps_per_epoch)));

  const auto run_validation = [&](int epoch, long step) {
    EpochRecord rec{epoch, step, target.validate()};
    result.validation.push_back(rec);
    nlohmann::json j = to_json(rec.loss);
    j["kind"] = "val";
    j["epoch"] = epoch;
    j["step"] = step;
    log << j.dump() << '\n' << std::flush;
    if (progress)
      *progress << "epoch " << epoch << " validation: rec " << rec.loss.rec << " kl " << rec.loss.kl << " total "
                << rec.loss.total << std::endl;
    if (epoch > 0 && rec.loss.total < result.best_validation) {
      result.best_validation = rec.loss.total;
      target.save(result.best_checkpoint);
    }
  };

  run_validation(0, 0);
  std::vector<std::size_t> order(train.size());
  long step = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (long b = 0; b < steps_per_epoch; ++b) {
      std::vector<TokenSeq> batch;
      const std::size_t lo = static_cast<std::size_t>(b) * static_cast<std::size_t>(tc.batch);
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(tc.batch));
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(train[order[k]]);
      const double weight = target.weight_max > 0 ? beta_schedule(step, anneal_steps, target.weight_max) : 0.0;
      target.params->zero_grad();
      LossBreakdown loss;
      try {
        loss = target.batch_loss(batch, weight, rng, true);
        const S norm = target.params->grad_norm();
        if (!std::isfinite(static_cast<double>(norm))) throw NumericalError("non-finite gradient norm");
        if (tc.grad_clip > 0 && norm > static_cast<S>(tc.grad_clip))
          target.params->scale_grads(static_cast<S>(tc.grad_clip) / norm);
      } catch (const NumericalError&) {
        target.save(last_good);
        throw;
      }
      adam.step(*target.params);
      result.steps.push_back({step, epoch, loss});
      nlohmann::json j = to_json(loss);
      j["kind"] = "train";
      j["step"] = step;
      j["epoch"] = epoch;
      log << j.dump() << '\n';
      if (progress && (step % 10 == 0))
        *progress << "step " << step << " rec " << loss.rec << " kl " << loss.kl << " beta " << loss.beta
                  << " total " << loss.total << std::endl;
      ++step;
    }
    run_validation(epoch, step);
  }
  target.save(result.final_checkpoint);
  return result;
}

// ---------------------------------------------------------------------------
// CLSM wiring

template <class S>
void save_clsm(const ClsmModel<S>& m, const std::filesystem::path& path) {
  checkpoint::save(path, "clsm", to_json(m.config()), m.params());
}

template <class S>
ClsmModel<S> load_clsm(const std::filesystem::path& path) {
  const auto c = checkpoint::read(path);
  checkpoint::expect_kind(c, "clsm");
  ClsmModel<S> m(model_config_from_json(c.header.at("model")));
  checkpoint::load_into(m.params(), c);
  return m;
}

// Deterministic validation set: spans and noise fixed by the seed.
struct ValidationSet {
  std::vector<TokenSeq> windows;
  std::vector<TargetSpan> spans;
  std::uint64_t noise_seed = 0;
};

inline ValidationSet make_validation_set(const std::vector<TokenSeq>& windows, const SpanGrid& grid,
                                         std::uint64_t seed, int limit = 0) {
  ValidationSet v;
  nn::Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t n = limit > 0 ? std::min(windows.size(), static_cast<std::size_t>(limit)) : windows.size();
  for (std::size_t i = 0; i < n; ++i) {
    v.windows.push_back(windows[i]);
    v.spans.push_back(sample_target_span(rng, grid));
  }
  v.noise_seed = rng();
  return v;
}

template <class S>
LossBreakdown clsm_validation_loss(ClsmModel<S>& m, const ValidationSet& v, double beta) {
  LossBreakdown acc;
  constexpr std::size_t chunk = 64;
  for (std::size_t lo = 0; lo < v.windows.size(); lo += chunk) {
    const std::size_t hi = std::min(v.windows.size(), lo + chunk);
    std::vector<TokenSeq> xs(v.windows.begin() + static_cast<std::ptrdiff_t>(lo),
                             v.windows.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<TargetSpan> ss(v.spans.begin() + static_cast<std::ptrdiff_t>(lo),
                               v.spans.begin() + static_cast<std::ptrdiff_t>(hi));
    acc += clsm_batch_loss(m, xs, ss, beta, v.noise_seed + lo, false, false).scaled(static_cast<double>(hi - lo));
  }
  auto out = acc.scaled(1.0 / static_cast<double>(v.windows.size()));
  out.beta = beta;
  return out;
}

template <class S>
FitResult fit_clsm(ClsmModel<S>& m, const corpus::Manifest& corpus, const TrainConfig& tc,
                   const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  const auto train = corpus.windows(corpus::Split::Train1);
  const auto val_windows = corpus.windows(corpus::Split::Val1);
  if (val_windows.empty()) throw InsufficientData("validation split val1 is empty");
  const SpanGrid grid = m.config().grid();
  const ValidationSet val = make_validation_set(val_windows, grid, tc.seed, tc.val_limit);

  TrainTarget<S> target;
  target.params = &m.params();
  target.weight_max = tc.beta_max;
  target.batch_loss = [&](const std::vector<TokenSeq>& batch, double beta, nn::Rng& rng, bool accumulate) {
    std::vector<TargetSpan> spans;
    for (std::size_t i = 0; i < batch.size(); ++i) spans.push_back(sample_target_span(rng, grid));
    return clsm_batch_loss(m, batch, spans, beta, rng(), accumulate, true);
  };
  // Validation reports the loss at the final KL weight so epochs compare.
  target.validate = [&] { return clsm_validation_loss(m, val, tc.beta_max); };
  target.save = [&](const std::filesystem::path& p) { save_clsm(m, p); };
  return train_loop(target, train, tc, out_dir, progress);
}

// ---------------------------------------------------------------------------
// gradient check

struct GradCheckEntry {
  std::string parameter;
  Eigen::Index index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  std::vector<std::string> failures;  // "<name>[<index>]" above tolerance
  bool passed() const { return failures.empty(); }
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// loss(record) must be deterministic; with record=true it must also
// backpropagate into the store's grad buffers.
template <class Loss>
GradCheckReport gradient_check(ParamStore<double>& params, Loss&& loss, int samples, double step, double tolerance,
                               std::uint64_t seed) {
  params.zero_grad();
  loss(true);
  std::vector<std::pair<std::size_t, Eigen::Index>> all;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (Eigen::Index i = 0; i < params[p].value.size(); ++i) all.emplace_back(p, i);
  nn::Rng rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(all.size(), static_cast<std::size_t>(samples)));

  GradCheckReport report;
  for (const auto& [p, i] : all) {
    auto& par = params[p];
    const double analytic = par.grad.size() ? par.grad.data()[i] : 0.0;
    const double orig = par.value.data()[i];
    par.value.data()[i] = orig + step;
    const double up = loss(false);
    par.value.data()[i] = orig - step;
    const double down = loss(false);
    par.value.data()[i] = orig;
    const double numeric = (up - down) / (2 * step);
    GradCheckEntry e{par.name, i, analytic, numeric, relative_error(analytic, numeric)};
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    if (e.rel_error > tolerance) report.failures.push_back(par.name + "[" + std::to_string(i) + "]");
    report.entries.push_back(std::move(e));
  }
  return report;
}

// Tiny double-precision configuration for gradient verification.
inline ModelConfig gradcheck_config() {
  ModelConfig c;
  c.d_z = 4;
  c.l_z = 2;
  c.token_embed = 8;
  c.hidden = 8;
  c.heads = 2;
  c.mlp_hidden = 8;
  c.n_transformer_layers = 1;
  c.n_lstm_layers = 1;
  c.n_coupling_layers = 2;
  c.coupling_mlp_hidden = 8;
  c.K = 8;
  c.bar = 1;
  c.dropout = 0.0;
  return c;
}

// Finite-difference check of the full CLSM objective (reconstruction, KL
// through the flow prior) on a tiny model with randomised flow output layers.
inline GradCheckReport clsm_gradient_check(std::uint64_t seed = 0, int samples = 50, double step = 1e-5,
                                           double tolerance = 1e-3) {
  const ModelConfig cfg = gradcheck_config();
  ClsmModel<double> m(cfg, seed);
  nn::Rng rng(seed + 1);
  for (auto& layer : m.flow().layers()) {
    init::uniform(layer.scale.output_layer().weight().value, 0.3, rng);
    init::uniform(layer.shift.output_layer().weight().value, 0.3, rng);
  }
  std::uniform_int_distribution<int> tok(0, alphabet::kDataSize - 1);
  std::vector<TokenSeq> xs(3, TokenSeq(static_cast<std::size_t>(cfg.K)));
  for (auto& x : xs)
    for (auto& t : x) t = tok(rng);
  const std::vector<TargetSpan> spans = {{2, 3}, {0, 4}, {5, 3}};
  const std::uint64_t noise = rng();
  return gradient_check(
      m.params(),
      [&](bool record) { return clsm_batch_loss(m, xs, spans, 0.5, noise, record, false).total; }, samples, step,
      tolerance, seed + 2);
}

}  // namespace clsm
