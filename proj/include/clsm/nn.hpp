#pragma once

// Layers used by the encoder, prior, decoder, baseline and evaluation LM.
// All activations are row-major: one row per sequence position.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "clsm/autograd.hpp"
#include "clsm/params.hpp"

namespace clsm::nn {

using Rng = std::mt19937_64;

// Per-forward-pass state: the tape, whether dropout is active, and the
// randomness source for dropout.
template <class S>
struct Pass {
  ag::Tape<S>& tape;
  bool train = false;
  Rng* rng = nullptr;
  S dropout = S(0);

  ag::Var<S> drop(ag::Var<S> x) const {
    if (!train || dropout <= S(0) || rng == nullptr) return x;
    return ag::dropout(x, dropout, *rng);
  }
};

template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<S>& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
         bool bias = true) {
    w_ = &store.add(name + ".weight", in, out);
    const S bound = S(1) / std::sqrt(static_cast<S>(in));
    init::uniform(w_->value, bound, rng);
    if (bias) {
      b_ = &store.add(name + ".bias", 1, out);
      init::uniform(b_->value, bound, rng);
    }
  }

  ag::Var<S> operator()(ag::Tape<S>& t, ag::Var<S> x) const {
    auto y = ag::matmul(x, use(t, *w_));
    return b_ ? ag::add_row(y, use(t, *b_)) : y;
  }

  Parameter<S>& weight() { return *w_; }
  Parameter<S>* bias() { return b_; }
  Eigen::Index in_features() const { return w_->value.rows(); }
  Eigen::Index out_features() const { return w_->value.cols(); }

 private:
  Parameter<S>* w_ = nullptr;
  Parameter<S>* b_ = nullptr;
};

template <class S>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<S>& store, const std::string& name, Eigen::Index dim) {
    g_ = &store.add(name + ".gain", 1, dim);
    g_->value.setOnes();
    b_ = &store.add(name + ".bias", 1, dim);
  }
  ag::Var<S> operator()(ag::Tape<S>& t, ag::Var<S> x) const {
    return ag::layer_norm(x, use(t, *g_), use(t, *b_));
  }

 private:
  Parameter<S>* g_ = nullptr;
  Parameter<S>* b_ = nullptr;
};

template <class S>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore<S>& store, const std::string& name, Eigen::Index count, Eigen::Index dim, Rng& rng,
            S stddev = S(1)) {
    table_ = &store.add(name, count, dim);
    init::normal(table_->value, stddev, rng);
  }
  ag::Var<S> operator()(ag::Tape<S>& t, std::vector<int> ids) const {
    return ag::gather_rows(use(t, *table_), std::move(ids));
  }
  // First n rows (positional embeddings).
  ag::Var<S> prefix(ag::Tape<S>& t, Eigen::Index n) const { return ag::rows(use(t, *table_), 0, n); }
  Eigen::Index count() const { return table_->value.rows(); }

 private:
  Parameter<S>* table_ = nullptr;
};

// Unidirectional LSTM layer. Gate layout in the fused weight: input, forget,
// cell, output.
template <class S>
class Lstm {
 public:
  Lstm() = default;
  Lstm(ParamStore<S>& store, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng)
      : hidden_(hidden) {
    const S bound = S(1) / std::sqrt(static_cast<S>(hidden));
    w_ih_ = &store.add(name + ".w_ih", in, 4 * hidden);
    w_hh_ = &store.add(name + ".w_hh", hidden, 4 * hidden);
    b_ = &store.add(name + ".bias", 1, 4 * hidden);
    init::uniform(w_ih_->value, bound, rng);
    init::uniform(w_hh_->value, bound, rng);
    init::uniform(b_->value, bound, rng);
  }

  struct State {
    ag::Var<S> h, c;
  };

  // Runs over the rows of x (T x in); returns one hidden row per step in
  // input order. reverse=true processes from the last row to the first.
  std::vector<ag::Var<S>> run(ag::Tape<S>& t, ag::Var<S> x, bool reverse = false,
                              std::optional<State> init = std::nullopt, State* final_state = nullptr) const {
    const Eigen::Index steps = x.rows();
    auto gx = ag::add_row(ag::matmul(x, use(t, *w_ih_)), use(t, *b_));
    auto w_hh = use(t, *w_hh_);
    State s = init ? *init : State{t.constant(ag::Mat<S>::Zero(1, hidden_)), t.constant(ag::Mat<S>::Zero(1, hidden_))};
    std::vector<ag::Var<S>> out(static_cast<std::size_t>(steps));
    for (Eigen::Index k = 0; k < steps; ++k) {
      const Eigen::Index idx = reverse ? steps - 1 - k : k;
      s = step(t, ag::rows(gx, idx, 1), w_hh, s);
      out[static_cast<std::size_t>(idx)] = s.h;
    }
    if (final_state) *final_state = s;
    return out;
  }

  // One step given precomputed input projection (1 x 4h, bias included).
  State step(ag::Tape<S>& t, ag::Var<S> gx_row, ag::Var<S> w_hh, State s) const {
    auto g = ag::add(gx_row, ag::matmul(s.h, w_hh));
    auto i = ag::sigmoid(ag::cols(g, 0, hidden_));
    auto f = ag::sigmoid(ag::cols(g, hidden_, hidden_));
    auto c_in = ag::tanh(ag::cols(g, 2 * hidden_, hidden_));
    auto o = ag::sigmoid(ag::cols(g, 3 * hidden_, hidden_));
    auto c = ag::add(ag::mul(f, s.c), ag::mul(i, c_in));
    auto h = ag::mul(o, ag::tanh(c));
    return {h, c};
  }

  ag::Var<S> input_projection(ag::Tape<S>& t, ag::Var<S> x) const {
    return ag::add_row(ag::matmul(x, use(t, *w_ih_)), use(t, *b_));
  }
  ag::Var<S> recurrent_weight(ag::Tape<S>& t) const { return use(t, *w_hh_); }

  Eigen::Index hidden() const { return hidden_; }

 private:
  Eigen::Index hidden_ = 0;
  Parameter<S>* w_ih_ = nullptr;
  Parameter<S>* w_hh_ = nullptr;
  Parameter<S>* b_ = nullptr;
};

// Stacked bidirectional LSTM. summarize() returns h_l (forward direction's
// last output) concatenated with h_r (backward direction's last output,
// i.e. the one at the first position), from the top layer.
template <class S>
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParamStore<S>& store, const std::string& name, Eigen::Index in, Eigen::Index hidden, int layers,
         Rng& rng) {
    for (int l = 0; l < layers; ++l) {
      const Eigen::Index layer_in = l == 0 ? in : 2 * hidden;
      fwd_.emplace_back(store, name + ".l" + std::to_string(l) + ".fwd", layer_in, hidden, rng);
      bwd_.emplace_back(store, name + ".l" + std::to_string(l) + ".bwd", layer_in, hidden, rng);
    }
  }

  ag::Var<S> summarize(const Pass<S>& p, ag::Var<S> x) const {
    ag::Var<S> layer_in = x;
    ag::Var<S> h_l{}, h_r{};
    for (std::size_t l = 0; l < fwd_.size(); ++l) {
      if (l > 0) layer_in = p.drop(layer_in);
      auto f = fwd_[l].run(p.tape, layer_in, false);
      auto b = bwd_[l].run(p.tape, layer_in, true);
      h_l = f.back();
      h_r = b.front();
      if (l + 1 < fwd_.size()) {
        layer_in = ag::concat_cols<S>({ag::concat_rows(f), ag::concat_rows(b)});
      }
    }
    return ag::concat_cols<S>({h_l, h_r});
  }

 private:
  std::vector<Lstm<S>> fwd_, bwd_;
};

// Two linear layers with SELU in between.
template <class S>
class SeluMlp {
 public:
  SeluMlp() = default;
  SeluMlp(ParamStore<S>& store, const std::string& name, Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
          Rng& rng)
      : l1_(store, name + ".0", in, hidden, rng), l2_(store, name + ".1", hidden, out, rng) {}
  ag::Var<S> operator()(ag::Tape<S>& t, ag::Var<S> x) const { return l2_(t, ag::selu(l1_(t, x))); }

 private:
  Linear<S> l1_, l2_;
};

// Multi-head attention, optionally with learned relative-position logits
// (one embedding per signed distance, split across heads by columns).
template <class S>
class Attention {
 public:
  Attention() = default;
  Attention(ParamStore<S>& store, const std::string& name, Eigen::Index d_model, Eigen::Index d_kv, int heads,
            Eigen::Index max_relative, Rng& rng)
      : heads_(heads), d_model_(d_model), max_rel_(max_relative) {
    if (d_model % heads != 0) throw std::invalid_argument("attention: d_model not divisible by heads");
    q_ = Linear<S>(store, name + ".q", d_model, d_model, rng);
    k_ = Linear<S>(store, name + ".k", d_kv, d_model, rng);
    v_ = Linear<S>(store, name + ".v", d_kv, d_model, rng);
    o_ = Linear<S>(store, name + ".o", d_model, d_model, rng);
    if (max_relative > 0) {
      rel_ = &store.add(name + ".relative", 2 * max_relative - 1, d_model);
      init::normal(rel_->value, S(1) / std::sqrt(static_cast<S>(d_model / heads)), rng);
    }
  }

  ag::Var<S> operator()(const Pass<S>& p, ag::Var<S> query, ag::Var<S> memory, const ag::BoolMat* allow) const {
    auto& t = p.tape;
    const Eigen::Index dh = d_model_ / heads_;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
    auto q = q_(t, query);
    auto k = k_(t, memory);
    auto v = v_(t, memory);
    std::optional<ag::Var<S>> rel;
    if (rel_) rel = use(t, *rel_);
    std::vector<ag::Var<S>> outs;
    outs.reserve(static_cast<std::size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
      auto qh = ag::cols(q, h * dh, dh);
      auto kh = ag::cols(k, h * dh, dh);
      auto vh = ag::cols(v, h * dh, dh);
      auto logits = ag::matmul_nt(qh, kh);
      if (rel) logits = ag::add(logits, ag::relative_logits(qh, ag::cols(*rel, h * dh, dh), max_rel_));
      auto probs = ag::softmax_rows(ag::scale(logits, inv_sqrt), allow);
      outs.push_back(ag::matmul(p.drop(probs), vh));
    }
    return o_(t, heads_ == 1 ? outs.front() : ag::concat_cols(outs));
  }

 private:
  int heads_ = 1;
  Eigen::Index d_model_ = 0;
  Eigen::Index max_rel_ = 0;
  Linear<S> q_, k_, v_, o_;
  Parameter<S>* rel_ = nullptr;
};

struct TransformerShape {
  Eigen::Index d_model = 128;
  Eigen::Index d_ff = 256;
  int heads = 8;
  int layers = 2;
  Eigen::Index max_len = 129;  // relative-attention span; 0 disables relative logits
  Eigen::Index d_memory = 0;   // > 0 adds cross-attention over a memory of this width
};

// Pre-norm transformer block stack with a final layer norm.
template <class S>
class Transformer {
 public:
  Transformer() = default;
  Transformer(ParamStore<S>& store, const std::string& name, const TransformerShape& shape, Rng& rng)
      : shape_(shape) {
    for (int l = 0; l < shape.layers; ++l) {
      const std::string pre = name + ".layer" + std::to_string(l);
      Block b;
      b.ln_self = LayerNorm<S>(store, pre + ".ln_self", shape.d_model);
      b.self = Attention<S>(store, pre + ".self", shape.d_model, shape.d_model, shape.heads, shape.max_len, rng);
      if (shape.d_memory > 0) {
        b.ln_cross = LayerNorm<S>(store, pre + ".ln_cross", shape.d_model);
        b.cross = Attention<S>(store, pre + ".cross", shape.d_model, shape.d_memory, shape.heads, 0, rng);
      }
      b.ln_ff = LayerNorm<S>(store, pre + ".ln_ff", shape.d_model);
      b.ff1 = Linear<S>(store, pre + ".ff1", shape.d_model, shape.d_ff, rng);
      b.ff2 = Linear<S>(store, pre + ".ff2", shape.d_ff, shape.d_model, rng);
      blocks_.push_back(std::move(b));
    }
    ln_out_ = LayerNorm<S>(store, name + ".ln_out", shape.d_model);
  }

  ag::Var<S> operator()(const Pass<S>& p, ag::Var<S> x, const ag::BoolMat* self_allow,
                        std::optional<ag::Var<S>> memory = std::nullopt) const {
    auto& t = p.tape;
    for (const auto& b : blocks_) {
      auto h = b.ln_self(t, x);
      x = ag::add(x, p.drop(b.self(p, h, h, self_allow)));
      if (shape_.d_memory > 0) {
        if (!memory) throw std::invalid_argument("transformer: memory required for cross-attention");
        x = ag::add(x, p.drop(b.cross(p, b.ln_cross(t, x), *memory, nullptr)));
      }
      auto f = b.ff2(t, p.drop(ag::relu(b.ff1(t, b.ln_ff(t, x)))));
      x = ag::add(x, p.drop(f));
    }
    return ln_out_(t, x);
  }

 private:
  struct Block {
    LayerNorm<S> ln_self, ln_cross, ln_ff;
    Attention<S> self, cross;
    Linear<S> ff1, ff2;
  };
  TransformerShape shape_;
  std::vector<Block> blocks_;
  LayerNorm<S> ln_out_;
};

}  // namespace clsm::nn
