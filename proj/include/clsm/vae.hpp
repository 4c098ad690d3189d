#pragma once

// Sequence VAE baseline: Bi-LSTM encoder over the whole window, autoregressive
// LSTM decoder conditioned on z, standard normal prior. Interpolation decodes
// after the left context only, so the right context has no influence.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsm/checkpoint.hpp"
#include "clsm/config.hpp"
#include "clsm/corpus.hpp"
#include "clsm/errors.hpp"
#include "clsm/nn.hpp"
#include "clsm/params.hpp"
#include "clsm/tokens.hpp"
#include "clsm/training.hpp"

namespace clsm {

struct VaeConfig {
  int d_z = 128;
  int token_embed = 128;
  int hidden = 256;
  int layers = 2;
  double dropout = 0.1;
  int K = 128;
  int bar = 16;

  SpanGrid grid() const { return {K, bar, 4}; }

  // Same LSTM sizes as the CLSM.
  static VaeConfig like(const ModelConfig& m) {
    return {m.d_z, m.token_embed, m.hidden, m.n_lstm_layers, m.dropout, m.K, m.bar};
  }

  void validate() const {
    if (d_z <= 0 || token_embed <= 0 || hidden <= 0 || layers <= 0 || K <= 0)
      throw InvalidConfig("invalid VAE dimensions");
    if (bar <= 0 || K % bar != 0 || 4 * bar > K) throw InvalidConfig("K must hold at least 4 bars");
    if (dropout < 0 || dropout >= 1) throw InvalidConfig("dropout must be in [0, 1)");
  }
};

inline nlohmann::json to_json(const VaeConfig& c) {
  return {{"d_z", c.d_z},       {"token_embed", c.token_embed}, {"hidden", c.hidden},
          {"layers", c.layers}, {"dropout", c.dropout},         {"K", c.K},
          {"bar", c.bar}};
}

inline VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.d_z = j.at("d_z").get<int>();
  c.token_embed = j.at("token_embed").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.layers = j.at("layers").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.K = j.at("K").get<int>();
  c.bar = j.at("bar").get<int>();
  c.validate();
  return c;
}

// KL(N(mean, exp(log_var)) || N(0, I)) = 0.5 * sum(mean^2 + var - 1 - log_var)
template <class S>
ag::Var<S> standard_normal_kl(ag::Var<S> mean, ag::Var<S> log_var) {
  auto terms = ag::sub(ag::add(ag::mul(mean, mean), ag::exp(log_var)), ag::add_scalar(log_var, S(1)));
  return ag::scale(ag::sum(terms), S(0.5));
}

inline double standard_normal_kl(const std::vector<double>& mean, const std::vector<double>& log_var) {
  if (mean.size() != log_var.size()) throw InvalidInput("kl: dimension mismatch");
  double kl = 0;
  for (std::size_t i = 0; i < mean.size(); ++i)
    kl += mean[i] * mean[i] + std::exp(log_var[i]) - 1.0 - log_var[i];
  return 0.5 * kl;
}

template <class S>
class VaeModel {
 public:
  static constexpr int kBos = alphabet::kDataSize;  // decoder start input

  struct Posterior {
    ag::Var<S> mean, log_var;
  };

  // Per-layer recurrent state of the decoder.
  using State = std::vector<typename nn::Lstm<S>::State>;

  explicit VaeModel(const VaeConfig& cfg, std::uint64_t seed = 0)
      : cfg_(cfg), store_(std::make_unique<ParamStore<S>>()) {
    cfg_.validate();
    nn::Rng rng(seed);
    auto& st = *store_;
    enc_embed_ = nn::Embedding<S>(st, "vae.encoder.embed", alphabet::kDataSize, cfg_.token_embed, rng);
    enc_lstm_ = nn::BiLstm<S>(st, "vae.encoder.bilstm", cfg_.token_embed, cfg_.hidden, cfg_.layers, rng);
    mean_ = nn::Linear<S>(st, "vae.encoder.mean", 2 * cfg_.hidden, cfg_.d_z, rng);
    log_var_ = nn::Linear<S>(st, "vae.encoder.log_var", 2 * cfg_.hidden, cfg_.d_z, rng);
    dec_embed_ = nn::Embedding<S>(st, "vae.decoder.embed", alphabet::kDataSize + 1, cfg_.token_embed, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string pre = "vae.decoder.l" + std::to_string(l);
      const Eigen::Index in = l == 0 ? cfg_.token_embed + cfg_.d_z : cfg_.hidden;
      dec_lstm_.emplace_back(st, pre + ".lstm", in, cfg_.hidden, rng);
      init_h_.emplace_back(st, pre + ".init_h", cfg_.d_z, cfg_.hidden, rng);
    }
    out_ = nn::Linear<S>(st, "vae.decoder.out", cfg_.hidden, alphabet::kDataSize, rng);
  }

  const VaeConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return *store_; }
  const ParamStore<S>& params() const { return *store_; }

  Posterior encode(const nn::Pass<S>& p, const TokenSeq& x) const {
    check(x);
    auto h = enc_lstm_.summarize(p, p.drop(enc_embed_(p.tape, std::vector<int>(x.begin(), x.end()))));
    return {mean_(p.tape, h), log_var_(p.tape, h)};
  }

  // h0 = tanh(W z), c0 = 0 for every layer.
  State initial_state(ag::Tape<S>& t, ag::Var<S> z) const {
    State s;
    for (std::size_t l = 0; l < dec_lstm_.size(); ++l)
      s.push_back({ag::tanh(init_h_[l](t, z)), t.constant(ag::Mat<S>::Zero(1, cfg_.hidden))});
    return s;
  }

  // Teacher-forced logits for every position of x (row k predicts x[k]).
  ag::Var<S> decode_logits(const nn::Pass<S>& p, const TokenSeq& x, ag::Var<S> z) const {
    check(x);
    auto& t = p.tape;
    std::vector<int> ids{kBos};
    ids.insert(ids.end(), x.begin(), x.end() - 1);
    const auto n = static_cast<Eigen::Index>(x.size());
    auto zs = ag::matmul(t.constant(ag::Mat<S>::Ones(n, 1)), z);
    ag::Var<S> h = ag::concat_cols<S>({p.drop(dec_embed_(t, std::move(ids))), zs});
    const State init = initial_state(t, z);
    for (std::size_t l = 0; l < dec_lstm_.size(); ++l) {
      if (l > 0) h = p.drop(h);
      h = ag::concat_rows(dec_lstm_[l].run(t, h, false, init[l]));
    }
    return out_(t, p.drop(h));
  }

  // One eval-mode decoder step: feeds `input` and returns the next-token logits.
  ag::RowVec<S> step(ag::Tape<S>& t, State& s, int input, ag::Var<S> z) const {
    ag::Var<S> h = ag::concat_cols<S>({dec_embed_(t, {input}), z});
    for (std::size_t l = 0; l < dec_lstm_.size(); ++l) {
      s[l] = dec_lstm_[l].step(t, dec_lstm_[l].input_projection(t, h), dec_lstm_[l].recurrent_weight(t), s[l]);
      h = s[l].h;
    }
    return out_(t, h).value().row(0);
  }

  // Teacher-forces `left`, then generates `length` tokens by argmax.
  TokenSeq decode_after(const ag::RowVec<S>& z_value, const TokenSeq& left, int length) const {
    if (z_value.size() != cfg_.d_z) throw InvalidInput("latent dimension mismatch");
    for (Token tok : left)
      if (!alphabet::is_data(tok)) throw InvalidToken("context contains a non-data token");
    ag::Tape<S> t(false);
    auto z = t.constant(z_value);
    State s = initial_state(t, z);
    int input = kBos;
    ag::RowVec<S> logits;
    for (Token tok : left) {
      logits = step(t, s, input, z);
      input = tok;
    }
    TokenSeq out;
    for (int i = 0; i < length; ++i) {
      logits = step(t, s, input, z);
      Eigen::Index best = 0;
      logits.maxCoeff(&best);
      out.push_back(static_cast<Token>(best));
      input = static_cast<int>(best);
    }
    return out;
  }

 private:
  void check(const TokenSeq& x) const {
    if (x.empty()) throw InvalidInput("empty sequence");
    for (Token t : x)
      if (!alphabet::is_data(t)) throw InvalidToken("sequence contains a non-data token");
  }

  VaeConfig cfg_;
  std::unique_ptr<ParamStore<S>> store_;
  nn::Embedding<S> enc_embed_;
  nn::BiLstm<S> enc_lstm_;
  nn::Linear<S> mean_, log_var_;
  nn::Embedding<S> dec_embed_;
  std::vector<nn::Lstm<S>> dec_lstm_;
  std::vector<nn::Linear<S>> init_h_;
  nn::Linear<S> out_;
};

// rec: mean per-token log-likelihood with one posterior sample; kl: analytic;
// total = -(rec - gamma * kl / |x|).
template <class S>
LossBreakdown vae_loss(VaeModel<S>& m, const std::vector<TokenSeq>& xs, double gamma, std::uint64_t seed,
                       bool accumulate, bool train_mode) {
  if (xs.empty()) throw InvalidInput("empty batch");
  LossBreakdown acc;
  const S inv_b = S(1) / static_cast<S>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    nn::Rng rng = derive_rng(seed, i);
    ag::Tape<S> t(accumulate);
    nn::Pass<S> pass{t, train_mode, &rng, static_cast<S>(m.config().dropout)};
    const auto q = m.encode(pass, xs[i]);
    const auto eps = standard_normal<S>(1, m.config().d_z, rng);
    auto z = ag::add(q.mean, ag::mul(ag::exp(ag::scale(q.log_var, S(0.5))), t.constant(eps)));
    const S len = static_cast<S>(xs[i].size());
    auto rec = ag::scale(ag::cross_entropy_sum(m.decode_logits(pass, xs[i], z), std::vector<int>(xs[i].begin(), xs[i].end())),
                         S(-1) / len);
    auto kl = standard_normal_kl(q.mean, q.log_var);
    auto total = ag::sub(ag::scale(kl, static_cast<S>(gamma) / len), rec);
    if (!std::isfinite(static_cast<double>(total.scalar()))) throw NumericalError("non-finite VAE loss");
    acc += {static_cast<double>(rec.scalar()), static_cast<double>(kl.scalar()), gamma,
            static_cast<double>(total.scalar())};
    if (accumulate) t.backward(ag::scale(total, inv_b));
  }
  auto out = acc.scaled(1.0 / static_cast<double>(xs.size()));
  out.beta = gamma;
  return out;
}

inline std::vector<double> linear_path(const std::vector<double>& z1, const std::vector<double>& z2, double a) {
  std::vector<double> z(z1.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (1 - a) * z1[i] + a * z2[i];
  return z;
}

// z(a) = (1-a) z1 + a z2, decoded after the left context; the right context is
// appended unchanged.
template <class S>
std::vector<TokenSeq> vae_interpolate(const VaeModel<S>& m, const ag::RowVec<S>& z1, const ag::RowVec<S>& z2, int J,
                                      const TokenSeq& left, const TokenSeq& right, const TargetSpan& span) {
  if (J < 1) throw InvalidInput("J must be at least 1");
  if (static_cast<int>(left.size()) != span.start ||
      static_cast<int>(left.size() + right.size()) + span.length != m.config().K)
    throw InvalidSpan("context lengths do not match the span");
  std::vector<TokenSeq> out;
  for (int j = 0; j <= J; ++j) {
    ag::RowVec<S> z;
    if (j == 0) {
      z = z1;
    } else if (j == J) {
      z = z2;
    } else {
      const S a = static_cast<S>(j) / static_cast<S>(J);
      z = (S(1) - a) * z1 + a * z2;
    }
    out.push_back(assemble(left, m.decode_after(z, left, span.length), right));
  }
  return out;
}

template <class S>
ag::RowVec<S> sample_standard_normal(Eigen::Index d, nn::Rng& rng) {
  return standard_normal<S>(1, d, rng).row(0);
}

template <class S>
void save_vae(const VaeModel<S>& m, const std::filesystem::path& path) {
  checkpoint::save(path, "vae", to_json(m.config()), m.params());
}

template <class S>
VaeModel<S> load_vae(const std::filesystem::path& path) {
  const auto c = checkpoint::read(path);
  checkpoint::expect_kind(c, "vae");
  VaeModel<S> m(vae_config_from_json(c.header.at("model")));
  checkpoint::load_into(m.params(), c);
  return m;
}

// Trains on train-1 with gamma annealed like the CLSM's beta.
template <class S>
FitResult fit_vae(VaeModel<S>& m, const corpus::Manifest& corpus, const TrainConfig& tc,
                  const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  const auto train = corpus.windows(corpus::Split::Train1);
  auto val = corpus.windows(corpus::Split::Val1);
  if (val.empty()) throw InsufficientData("validation split val1 is empty");
  if (tc.val_limit > 0 && val.size() > static_cast<std::size_t>(tc.val_limit))
    val.resize(static_cast<std::size_t>(tc.val_limit));

  TrainTarget<S> target;
  target.params = &m.params();
  target.weight_max = tc.gamma;
  target.batch_loss = [&](const std::vector<TokenSeq>& batch, double gamma, nn::Rng& rng, bool accumulate) {
    return vae_loss(m, batch, gamma, rng(), accumulate, true);
  };
  target.validate = [&] { return vae_loss(m, val, tc.gamma, tc.seed, false, false); };
  target.save = [&](const std::filesystem::path& p) { save_vae(m, p); };
  return train_loop(target, train, tc, out_dir, progress);
}

}  // namespace clsm
