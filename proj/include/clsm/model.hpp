#pragma once

// Contextual latent space model: posterior q(z | x, span), prior
// p(z | contexts, span) = base Gaussian over W pulled back through the flow,
// and the decoder p(x_T | z, contexts, span).

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "clsm/autograd.hpp"
#include "clsm/config.hpp"
#include "clsm/errors.hpp"
#include "clsm/flow.hpp"
#include "clsm/nn.hpp"
#include "clsm/params.hpp"
#include "clsm/tokens.hpp"

namespace clsm {

template <class S>
struct GaussianVars {
  ag::Var<S> mean;   // 1 x d_z
  ag::Var<S> log_v;  // 1 x d_z

  GaussianParams<S> value() const { return {mean.value().row(0), log_v.value().row(0)}; }
};

// Decoder self-attention mask over s (position 0) followed by x_1..x_K
// (positions 1..K). Non-target rows see every non-target column; target rows
// additionally see target columns up to and including their own position.
inline ag::BoolMat build_decoder_mask(const TargetSpan& span, int K) {
  const int n = K + 1;
  const auto is_target = [&](int pos) { return pos >= span.start + 1 && pos <= span.end(); };
  ag::BoolMat allow(n, n);
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) allow(u, v) = !is_target(v) || (is_target(u) && v <= u);
  return allow;
}

// Transformer (unmasked, relative attention) over the sequence, Bi-LSTM over
// the outputs at target positions, then two SELU MLPs to the Gaussian
// parameters. Used with different weights for the posterior and the prior
// base distribution.
template <class S>
class SpanEncoder {
 public:
  SpanEncoder() = default;
  SpanEncoder(ParamStore<S>& store, const std::string& name, const ModelConfig& c, nn::Rng& rng)
      : embed_(store, name + ".embed", alphabet::kModelSize, c.token_embed, rng),
        pos_(store, name + ".pos", c.K, c.token_embed, rng),
        transformer_(store, name + ".transformer",
                     {c.token_embed, c.hidden, c.heads, c.n_transformer_layers, c.K, 0}, rng),
        lstm_(store, name + ".bilstm", c.token_embed, c.hidden, c.n_lstm_layers, rng),
        mean_(store, name + ".mean", 2 * c.hidden, c.mlp_hidden, c.d_z, rng),
        log_v_(store, name + ".log_v", 2 * c.hidden, c.mlp_hidden, c.d_z, rng) {}

  GaussianVars<S> operator()(const nn::Pass<S>& p, const TokenSeq& ids, const TargetSpan& span) const {
    auto& t = p.tape;
    const auto n = static_cast<Eigen::Index>(ids.size());
    auto x = ag::add(embed_(t, std::vector<int>(ids.begin(), ids.end())), pos_.prefix(t, n));
    auto e = transformer_(p, p.drop(x), nullptr);
    auto summary = lstm_.summarize(p, ag::rows(e, span.start, span.length));
    return {mean_(t, summary), log_v_(t, summary)};
  }

 private:
  nn::Embedding<S> embed_;
  nn::Embedding<S> pos_;
  nn::Transformer<S> transformer_;
  nn::BiLstm<S> lstm_;
  nn::SeluMlp<S> mean_, log_v_;
};

template <class S>
class SpanDecoder {
 public:
  SpanDecoder() = default;
  SpanDecoder(ParamStore<S>& store, const std::string& name, const ModelConfig& c, nn::Rng& rng)
      : c_(c),
        embed_(store, name + ".embed", alphabet::kModelSize, c.token_embed, rng),
        pos_(store, name + ".pos", c.K + 1, c.token_embed, rng),
        latent_(store, name + ".latent_memory", c.d_z, static_cast<Eigen::Index>(c.d_z) * c.l_z, rng),
        transformer_(store, name + ".transformer",
                     {c.token_embed, c.hidden, c.heads, c.n_transformer_layers, c.K + 1, c.d_z}, rng),
        out_(store, name + ".out", c.token_embed, alphabet::kDataSize, rng) {}

  // l_z x d_z memory rows attended by every decoder layer.
  ag::Var<S> latent_memory(ag::Tape<S>& t, ag::Var<S> z) const { return ag::reshape(latent_(t, z), c_.l_z, c_.d_z); }

  // Final hidden state at every input position (K + 1 rows).
  ag::Var<S> hidden(const nn::Pass<S>& p, const TokenSeq& x_teacher, const TargetSpan& span, ag::Var<S> z) const {
    auto& t = p.tape;
    std::vector<int> ids;
    ids.reserve(x_teacher.size() + 1);
    ids.push_back(alphabet::kStart);
    ids.insert(ids.end(), x_teacher.begin(), x_teacher.end());
    auto x = ag::add(embed_(t, std::move(ids)), pos_.prefix(t, c_.K + 1));
    const ag::BoolMat mask = build_decoder_mask(span, c_.K);
    return transformer_(p, p.drop(x), &mask, latent_memory(t, z));
  }

  // Logits for x_T[0..len): row i is read at input position start + i.
  ag::Var<S> operator()(const nn::Pass<S>& p, const TokenSeq& x_teacher, const TargetSpan& span,
                        ag::Var<S> z) const {
    return out_(p.tape, ag::rows(hidden(p, x_teacher, span, z), span.start, span.length));
  }

 private:
  ModelConfig c_;
  nn::Embedding<S> embed_;
  nn::Embedding<S> pos_;
  nn::Linear<S> latent_;
  nn::Transformer<S> transformer_;
  nn::Linear<S> out_;
};

template <class S>
class ClsmModel {
 public:
  explicit ClsmModel(const ModelConfig& cfg, std::uint64_t seed = 0)
      : cfg_(cfg), store_(std::make_unique<ParamStore<S>>()) {
    cfg_.validate();
    nn::Rng rng(seed);
    auto& st = *store_;
    encoder_ = SpanEncoder<S>(st, "encoder", cfg_, rng);
    prior_ = SpanEncoder<S>(st, "prior", cfg_, rng);
    flow_ = FlowStack<S>(st, "flow", cfg_.d_z, cfg_.n_coupling_layers, cfg_.coupling_mlp_hidden,
                         static_cast<S>(cfg_.leaky_slope), rng);
    decoder_ = SpanDecoder<S>(st, "decoder", cfg_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return *store_; }
  const ParamStore<S>& params() const { return *store_; }
  const FlowStack<S>& flow() const { return flow_; }
  FlowStack<S>& flow() { return flow_; }

  // ---- differentiable pieces -------------------------------------------------

  GaussianVars<S> posterior(const nn::Pass<S>& p, const TokenSeq& x, const TargetSpan& span) const {
    check_window(x);
    validate(span, cfg_.grid());
    return encoder_(p, x, span);
  }

  GaussianVars<S> prior_base(const nn::Pass<S>& p, const TokenSeq& left, const TokenSeq& right,
                             const TargetSpan& span) const {
    validate(span, cfg_.grid());
    if (static_cast<int>(left.size()) != span.start ||
        static_cast<int>(left.size() + right.size()) + span.length != cfg_.K)
      throw InvalidSpan("prior: context lengths do not match the span");
    TokenSeq ids = left;
    ids.insert(ids.end(), static_cast<std::size_t>(span.length), alphabet::kConstraint);
    ids.insert(ids.end(), right.begin(), right.end());
    return prior_(p, ids, span);
  }

  ag::Var<S> decode_logits(const nn::Pass<S>& p, const TokenSeq& x_teacher, const TargetSpan& span,
                           ag::Var<S> z) const {
    if (static_cast<int>(x_teacher.size()) != cfg_.K) throw InvalidInput("decoder: teacher sequence length != K");
    validate(span, cfg_.grid());
    if (z.rows() != 1 || z.cols() != cfg_.d_z) throw InvalidInput("decoder: latent shape mismatch");
    return decoder_(p, x_teacher, span, z);
  }

  ag::Mat<S> decoder_hidden(const TokenSeq& x_teacher, const TargetSpan& span, const ag::RowVec<S>& z) const {
    if (static_cast<int>(x_teacher.size()) != cfg_.K) throw InvalidInput("decoder: teacher sequence length != K");
    validate(span, cfg_.grid());
    ag::Tape<S> t(false);
    return decoder_.hidden({t}, x_teacher, span, t.constant(z)).value();
  }

  // ---- eval-mode conveniences ---------------------------------------------

  GaussianParams<S> encode_posterior(const TokenSeq& x, const TargetSpan& span) const {
    ag::Tape<S> t(false);
    return posterior({t}, x, span).value();
  }

  GaussianParams<S> prior_base_params(const TokenSeq& left, const TokenSeq& right, const TargetSpan& span) const {
    ag::Tape<S> t(false);
    return prior_base({t}, left, right, span).value();
  }

  ag::Mat<S> logits(const TokenSeq& x_teacher, const TargetSpan& span, const ag::RowVec<S>& z) const {
    ag::Tape<S> t(false);
    return decode_logits({t}, x_teacher, span, t.constant(z)).value();
  }

  ag::Mat<S> probabilities(const TokenSeq& x_teacher, const TargetSpan& span, const ag::RowVec<S>& z) const {
    ag::Tape<S> t(false);
    return ag::softmax_rows(decode_logits({t}, x_teacher, span, t.constant(z))).value();
  }

 private:
  void check_window(const TokenSeq& x) const {
    if (static_cast<int>(x.size()) != cfg_.K) throw InvalidInput("window length != K");
    for (Token tok : x)
      if (!alphabet::is_data(tok)) throw InvalidToken("window contains a non-data token");
  }

  ModelConfig cfg_;
  std::unique_ptr<ParamStore<S>> store_;
  SpanEncoder<S> encoder_;
  SpanEncoder<S> prior_;
  FlowStack<S> flow_;
  SpanDecoder<S> decoder_;
};

}  // namespace clsm
