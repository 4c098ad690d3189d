#pragma once

// Left-to-right transformer language model over the 32 data tokens, used only
// to score generated windows.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
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

struct LmConfig {
  int d_model = 128;
  int d_ff = 256;
  int heads = 8;
  int layers = 2;
  int max_len = 128;
  double dropout = 0.1;

  // Same widths as the CLSM decoder, two layers.
  static LmConfig like(const ModelConfig& m) {
    return {m.token_embed, m.hidden, m.heads, 2, m.K, m.dropout};
  }

  void validate() const {
    if (d_model <= 0 || d_ff <= 0 || heads <= 0 || layers <= 0 || max_len <= 0 || d_model % heads != 0)
      throw InvalidConfig("invalid language model dimensions");
    if (dropout < 0 || dropout >= 1) throw InvalidConfig("dropout must be in [0, 1)");
  }
};

inline nlohmann::json to_json(const LmConfig& c) {
  return {{"d_model", c.d_model}, {"d_ff", c.d_ff},       {"heads", c.heads},
          {"layers", c.layers},   {"max_len", c.max_len}, {"dropout", c.dropout}};
}

inline LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

inline ag::BoolMat causal_mask(Eigen::Index n) {
  ag::BoolMat m(n, n);
  for (Eigen::Index u = 0; u < n; ++u)
    for (Eigen::Index v = 0; v < n; ++v) m(u, v) = v <= u;
  return m;
}

template <class S>
class LanguageModel {
 public:
  static constexpr int kBos = alphabet::kDataSize;  // input-only start symbol

  explicit LanguageModel(const LmConfig& cfg, std::uint64_t seed = 0)
      : cfg_(cfg), store_(std::make_unique<ParamStore<S>>()) {
    cfg_.validate();
    nn::Rng rng(seed);
    auto& st = *store_;
    embed_ = nn::Embedding<S>(st, "lm.embed", alphabet::kDataSize + 1, cfg_.d_model, rng);
    pos_ = nn::Embedding<S>(st, "lm.pos", cfg_.max_len, cfg_.d_model, rng);
    transformer_ = nn::Transformer<S>(st, "lm.transformer", {cfg_.d_model, cfg_.d_ff, cfg_.heads, cfg_.layers, 0, 0},
                                      rng);
    out_ = nn::Linear<S>(st, "lm.out", cfg_.d_model, alphabet::kDataSize, rng);
  }

  const LmConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return *store_; }
  const ParamStore<S>& params() const { return *store_; }

  // Row k holds the logits for x[k] given x[0..k).
  ag::Var<S> logits(const nn::Pass<S>& p, const TokenSeq& x) const {
    check(x);
    auto& t = p.tape;
    const auto n = static_cast<Eigen::Index>(x.size());
    std::vector<int> ids{kBos};
    ids.insert(ids.end(), x.begin(), x.end() - 1);
    auto h = ag::add(embed_(t, std::move(ids)), pos_.prefix(t, n));
    const ag::BoolMat mask = causal_mask(n);
    return out_(t, transformer_(p, p.drop(h), &mask));
  }

  ag::Mat<S> logits(const TokenSeq& x) const {
    ag::Tape<S> t(false);
    return logits({t}, x).value();
  }

  // Summed negative log-likelihood of x.
  ag::Var<S> nll(const nn::Pass<S>& p, const TokenSeq& x) const {
    return ag::cross_entropy_sum(logits(p, x), std::vector<int>(x.begin(), x.end()));
  }

 private:
  void check(const TokenSeq& x) const {
    if (x.empty() || static_cast<int>(x.size()) > cfg_.max_len) throw InvalidInput("sequence length out of range");
    for (Token t : x)
      if (!alphabet::is_data(t)) throw InvalidToken("token outside the language model vocabulary");
  }

  LmConfig cfg_;
  std::unique_ptr<ParamStore<S>> store_;
  nn::Embedding<S> embed_, pos_;
  nn::Transformer<S> transformer_;
  nn::Linear<S> out_;
};

// Mean per-token NLL over all sequences.
template <class S>
double lm_nll(const LanguageModel<S>& lm, const std::vector<TokenSeq>& samples) {
  if (samples.empty()) throw EmptyEvaluation("no sequences to score");
  double total = 0;
  std::size_t tokens = 0;
  for (const auto& x : samples) {
    ag::Tape<S> t(false);
    total += static_cast<double>(lm.nll({t}, x).scalar());
    tokens += x.size();
  }
  return total / static_cast<double>(tokens);
}

template <class S>
LossBreakdown lm_batch_loss(LanguageModel<S>& lm, const std::vector<TokenSeq>& xs, std::uint64_t seed,
                            bool accumulate, bool train_mode) {
  if (xs.empty()) throw InvalidInput("empty batch");
  double total = 0;
  const S inv_b = S(1) / static_cast<S>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    nn::Rng rng = derive_rng(seed, i);
    ag::Tape<S> t(accumulate);
    nn::Pass<S> pass{t, train_mode, &rng, static_cast<S>(lm.config().dropout)};
    auto loss = ag::scale(lm.nll(pass, xs[i]), S(1) / static_cast<S>(xs[i].size()));
    if (!std::isfinite(static_cast<double>(loss.scalar()))) throw NumericalError("non-finite language model loss");
    total += static_cast<double>(loss.scalar());
    if (accumulate) t.backward(ag::scale(loss, inv_b));
  }
  const double mean = total / static_cast<double>(xs.size());
  return {-mean, 0.0, 0.0, mean};
}

template <class S>
void save_lm(const LanguageModel<S>& lm, const std::filesystem::path& path) {
  checkpoint::save(path, "lm", to_json(lm.config()), lm.params());
}

template <class S>
LanguageModel<S> load_lm(const std::filesystem::path& path) {
  const auto c = checkpoint::read(path);
  checkpoint::expect_kind(c, "lm");
  LanguageModel<S> lm(lm_config_from_json(c.header.at("model")));
  checkpoint::load_into(lm.params(), c);
  return lm;
}

// Trains on train-2 and validates on val-2.
template <class S>
FitResult train_eval_lm(LanguageModel<S>& lm, const corpus::Manifest& corpus, const TrainConfig& tc,
                        const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  const auto train = corpus.windows(corpus::Split::Train2);
  auto val = corpus.windows(corpus::Split::Val2);
  if (train.empty()) throw InsufficientData("training split train2 is empty");
  if (val.empty()) throw InsufficientData("validation split val2 is empty");
  if (tc.val_limit > 0 && val.size() > static_cast<std::size_t>(tc.val_limit))
    val.resize(static_cast<std::size_t>(tc.val_limit));

  TrainTarget<S> target;
  target.params = &lm.params();
  target.batch_loss = [&](const std::vector<TokenSeq>& batch, double, nn::Rng& rng, bool accumulate) {
    return lm_batch_loss(lm, batch, rng(), accumulate, true);
  };
  target.validate = [&] { return lm_batch_loss(lm, val, tc.seed, false, false); };
  target.save = [&](const std::filesystem::path& p) { save_lm(lm, p); };
  return train_loop(target, train, tc, out_dir, progress);
}

}  // namespace clsm
