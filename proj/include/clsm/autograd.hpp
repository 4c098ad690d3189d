#pragma once

// Minimal tape-based reverse-mode autodiff over row-major Eigen matrices.
//
// Every op appends a node holding its value and, when recording, a closure
// that pushes the node's gradient into its parents. A Tape is single-use:
// build the graph, call backward() once, read gradients.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace clsm::ag {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

// true = attention allowed
using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  std::size_t id = 0;

  const Mat<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
};

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<S>&)>;

  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<S> constant(Mat<S> v) {
    Node n;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  // Leaf referring to externally owned storage. The gradient, if any, is
  // added into *grad_sink by backward(). Repeated calls with the same storage
  // return the same node.
  Var<S> leaf(const Mat<S>& value, Mat<S>* grad_sink) {
    auto it = leaves_.find(&value);
    if (it != leaves_.end()) return {this, it->second};
    Node n;
    n.ext = &value;
    n.sink = grad_sink;
    n.requires_grad = record_ && grad_sink != nullptr;
    nodes_.push_back(std::move(n));
    leaves_.emplace(&value, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  const Mat<S>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  const Mat<S>& grad(std::size_t id) const { return nodes_[id].grad; }

  template <class Expr>
  void accum(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  Var<S> push(Mat<S> value, std::initializer_list<Var<S>> parents, Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push_if(std::move(value), needs, std::move(fn));
  }

  Var<S> push(Mat<S> value, const std::vector<Var<S>>& parents, Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push_if(std::move(value), needs, std::move(fn));
  }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var<S> root) {
    if (root.tape != this) throw std::logic_error("backward: foreign variable");
    if (value(root.id).size() != 1) throw std::logic_error("backward: root must be scalar");
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad = Mat<S>::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.sink) {
        if (n.sink->size() == 0) {
          *n.sink = n.grad;
        } else {
          *n.sink += n.grad;
        }
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Var<S> push_if(Mat<S> value, bool needs, Backward fn) {
    Node n;
    n.value = std::move(value);
    if (record_ && needs) {
      n.requires_grad = true;
      n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  struct Node {
    Mat<S> value;
    const Mat<S>* ext = nullptr;
    Mat<S>* sink = nullptr;
    Mat<S> grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::size_t> leaves_;
};

namespace detail {
inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// linear algebra

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Mat<S> out = a.value() * b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Mat<S>& g) {
    if (t.requires_grad(a.id)) t.accum(a.id, g * t.value(b.id).transpose());
    if (t.requires_grad(b.id)) t.accum(b.id, t.value(a.id).transpose() * g);
  });
}

// a * b^T
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Mat<S> out = a.value() * b.value().transpose();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Mat<S>& g) {
    if (t.requires_grad(a.id)) t.accum(a.id, g * t.value(b.id));
    if (t.requires_grad(b.id)) t.accum(b.id, g.transpose() * t.value(a.id));
  });
}

template <class S>
Var<S> transpose(Var<S> a) {
  Mat<S> out = a.value().transpose();
  return a.tape->push(std::move(out), {a}, [a](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, g.transpose());
  });
}

template <class S>
Var<S> reshape(Var<S> a, Eigen::Index rows, Eigen::Index cols) {
  detail::check(rows * cols == a.value().size(), "reshape: size mismatch");
  Mat<S> out = Eigen::Map<const Mat<S>>(a.value().data(), rows, cols);
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  return a.tape->push(std::move(out), {a}, [a, r0, c0](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, Eigen::Map<const Mat<S>>(g.data(), r0, c0));
  });
}

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat<S> out = a.value() + b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, g);
    t.accum(b.id, g);
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Mat<S> out = a.value() - b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, g);
    t.accum(b.id, -g);
  });
}

// a (n x m) + b (1 x m), b broadcast over rows
template <class S>
Var<S> add_row(Var<S> a, Var<S> b) {
  detail::check(b.rows() == 1 && a.cols() == b.cols(), "add_row: shape mismatch");
  Mat<S> out = a.value().rowwise() + b.value().row(0);
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, g);
    if (t.requires_grad(b.id)) t.accum(b.id, g.colwise().sum());
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Mat<S> out = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Mat<S>& g) {
    if (t.requires_grad(a.id)) t.accum(a.id, g.cwiseProduct(t.value(b.id)));
    if (t.requires_grad(b.id)) t.accum(b.id, g.cwiseProduct(t.value(a.id)));
  });
}

template <class S>
Var<S> scale(Var<S> a, S k) {
  Mat<S> out = a.value() * k;
  return a.tape->push(std::move(out), {a}, [a, k](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, g * k);
  });
}

template <class S>
Var<S> add_scalar(Var<S> a, S k) {
  Mat<S> out = a.value().array() + k;
  return a.tape->push(std::move(out), {a}, [a](Tape<S>& t, const Mat<S>& g) { t.accum(a.id, g); });
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities

template <class S>
Var<S> exp(Var<S> a) {
  Mat<S> out = a.value().array().exp();
  const auto self = a.tape->size();
  return a.tape->push(std::move(out), {a}, [a, self](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, g.cwiseProduct(t.value(self)));
  });
}

template <class S>
Var<S> tanh(Var<S> a) {
  Mat<S> out = a.value().array().tanh();
  const auto self = a.tape->size();
  return a.tape->push(std::move(out), {a}, [a, self](Tape<S>& t, const Mat<S>& g) {
    const auto& y = t.value(self);
    t.accum(a.id, (g.array() * (S(1) - y.array().square())).matrix());
  });
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  Mat<S> out = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  const auto self = a.tape->size();
  return a.tape->push(std::move(out), {a}, [a, self](Tape<S>& t, const Mat<S>& g) {
    const auto& y = t.value(self);
    t.accum(a.id, (g.array() * y.array() * (S(1) - y.array())).matrix());
  });
}

template <class S>
Var<S> relu(Var<S> a) {
  Mat<S> out = a.value().cwiseMax(S(0));
  return a.tape->push(std::move(out), {a}, [a](Tape<S>& t, const Mat<S>& g) {
    const auto& x = t.value(a.id);
    t.accum(a.id, (x.array() > S(0)).select(g, Mat<S>::Zero(g.rows(), g.cols())));
  });
}

template <class S>
Var<S> leaky_relu(Var<S> a, S slope) {
  Mat<S> out = (a.value().array() > S(0)).select(a.value(), a.value() * slope);
  return a.tape->push(std::move(out), {a}, [a, slope](Tape<S>& t, const Mat<S>& g) {
    const auto& x = t.value(a.id);
    t.accum(a.id, (x.array() > S(0)).select(g, g * slope));
  });
}

template <class S>
Var<S> selu(Var<S> a) {
  static constexpr S alpha = S(1.6732632423543772848170429916717);
  static constexpr S lambda = S(1.0507009873554804934193349852946);
  const auto& x = a.value();
  Mat<S> out = (x.array() > S(0)).select(lambda * x.array(), lambda * alpha * (x.array().exp() - S(1)));
  return a.tape->push(std::move(out), {a}, [a](Tape<S>& t, const Mat<S>& g) {
    const auto& xv = t.value(a.id);
    Mat<S> d = (xv.array() > S(0)).select(Mat<S>::Constant(xv.rows(), xv.cols(), lambda).array(),
                                          lambda * alpha * xv.array().exp());
    t.accum(a.id, g.cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// reductions

template <class S>
Var<S> sum(Var<S> a) {
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(std::move(out), {a}, [a, r, c](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, Mat<S>::Constant(r, c, g(0, 0)));
  });
}

template <class S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

// ---------------------------------------------------------------------------
// slicing and concatenation

template <class S>
Var<S> rows(Var<S> a, Eigen::Index begin, Eigen::Index count) {
  detail::check(begin >= 0 && count >= 0 && begin + count <= a.rows(), "rows: out of range");
  Mat<S> out = a.value().middleRows(begin, count);
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(std::move(out), {a}, [a, begin, count, r, c](Tape<S>& t, const Mat<S>& g) {
    Mat<S> full = Mat<S>::Zero(r, c);
    full.middleRows(begin, count) = g;
    t.accum(a.id, full);
  });
}

template <class S>
Var<S> cols(Var<S> a, Eigen::Index begin, Eigen::Index count) {
  detail::check(begin >= 0 && count >= 0 && begin + count <= a.cols(), "cols: out of range");
  Mat<S> out = a.value().middleCols(begin, count);
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(std::move(out), {a}, [a, begin, count, r, c](Tape<S>& t, const Mat<S>& g) {
    Mat<S> full = Mat<S>::Zero(r, c);
    full.middleCols(begin, count) = g;
    t.accum(a.id, full);
  });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  detail::check(!parts.empty(), "concat_cols: empty");
  Tape<S>& tape = *parts.front().tape;
  const Eigen::Index r = parts.front().rows();
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    detail::check(p.rows() == r, "concat_cols: row mismatch");
    c += p.cols();
  }
  Mat<S> out(r, c);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return tape.push(std::move(out), parts, [parts](Tape<S>& t, const Mat<S>& g) {
    Eigen::Index o = 0;
    for (const auto& p : parts) {
      const Eigen::Index w = t.value(p.id).cols();
      if (t.requires_grad(p.id)) t.accum(p.id, g.middleCols(o, w));
      o += w;
    }
  });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  detail::check(!parts.empty(), "concat_rows: empty");
  Tape<S>& tape = *parts.front().tape;
  const Eigen::Index c = parts.front().cols();
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    detail::check(p.cols() == c, "concat_rows: column mismatch");
    r += p.rows();
  }
  Mat<S> out(r, c);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return tape.push(std::move(out), parts, [parts](Tape<S>& t, const Mat<S>& g) {
    Eigen::Index o = 0;
    for (const auto& p : parts) {
      const Eigen::Index h = t.value(p.id).rows();
      if (t.requires_grad(p.id)) t.accum(p.id, g.middleRows(o, h));
      o += h;
    }
  });
}

// out.row(i) = table.row(ids[i])
template <class S>
Var<S> gather_rows(Var<S> table, std::vector<int> ids) {
  const auto& tv = table.value();
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::check(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const Eigen::Index r = tv.rows(), c = tv.cols();
  return table.tape->push(std::move(out), {table},
                          [table, ids = std::move(ids), r, c](Tape<S>& t, const Mat<S>& g) {
                            Mat<S> full = Mat<S>::Zero(r, c);
                            for (std::size_t i = 0; i < ids.size(); ++i)
                              full.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                            t.accum(table.id, full);
                          });
}

// ---------------------------------------------------------------------------
// fused ops

// Row-wise softmax. Entries where allow is false get probability exactly 0 and
// receive no gradient. Each row must allow at least one column.
template <class S>
Var<S> softmax_rows(Var<S> a, const BoolMat* allow = nullptr) {
  const auto& x = a.value();
  if (allow) detail::check(allow->rows() == x.rows() && allow->cols() == x.cols(), "softmax_rows: mask shape");
  Mat<S> out = Mat<S>::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (!allow || (*allow)(i, j)) mx = std::max(mx, x(i, j));
    detail::check(std::isfinite(mx), "softmax_rows: row fully masked or non-finite");
    S z = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (!allow || (*allow)(i, j)) {
        out(i, j) = std::exp(x(i, j) - mx);
        z += out(i, j);
      }
    }
    out.row(i) /= z;
  }
  const auto self = a.tape->size();
  return a.tape->push(std::move(out), {a}, [a, self](Tape<S>& t, const Mat<S>& g) {
    const auto& y = t.value(self);
    Mat<S> gy = g.cwiseProduct(y);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
    Mat<S> d = gy - (y.array().colwise() * dots.array()).matrix();
    t.accum(a.id, d);
  });
}

// Sum over rows of -log softmax(logits)[i, targets[i]]; returns 1x1.
template <class S>
Var<S> cross_entropy_sum(Var<S> logits, std::vector<int> targets) {
  const auto& x = logits.value();
  detail::check(static_cast<Eigen::Index>(targets.size()) == x.rows(), "cross_entropy_sum: target count");
  Mat<S> probs(x.rows(), x.cols());
  S total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int tgt = targets[static_cast<std::size_t>(i)];
    detail::check(tgt >= 0 && tgt < x.cols(), "cross_entropy_sum: target out of range");
    const S mx = x.row(i).maxCoeff();
    probs.row(i) = (x.row(i).array() - mx).exp();
    const S z = probs.row(i).sum();
    probs.row(i) /= z;
    total += -(x(i, tgt) - mx - std::log(z));
  }
  Mat<S> out(1, 1);
  out(0, 0) = total;
  return logits.tape->push(std::move(out), {logits},
                           [logits, targets = std::move(targets), probs = std::move(probs)](
                               Tape<S>& t, const Mat<S>& g) {
                             Mat<S> d = probs;
                             for (std::size_t i = 0; i < targets.size(); ++i)
                               d(static_cast<Eigen::Index>(i), targets[i]) -= S(1);
                             t.accum(logits.id, d * g(0, 0));
                           });
}

// Per-row layer normalization with affine gain/bias (each 1 x n).
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  const auto& xv = x.value();
  detail::check(gain.cols() == xv.cols() && bias.cols() == xv.cols(), "layer_norm: shape");
  const Eigen::Index n = xv.cols();
  Mat<S> xhat(xv.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const S mu = xv.row(i).mean();
    const S var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = S(1) / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Mat<S> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return x.tape->push(std::move(out), {x, gain, bias},
                      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n](
                          Tape<S>& t, const Mat<S>& g) {
                        if (t.requires_grad(gain.id)) t.accum(gain.id, g.cwiseProduct(xhat).colwise().sum());
                        if (t.requires_grad(bias.id)) t.accum(bias.id, g.colwise().sum());
                        if (t.requires_grad(x.id)) {
                          Mat<S> gh = g.array().rowwise() * t.value(gain.id).row(0).array();
                          Mat<S> d(gh.rows(), gh.cols());
                          for (Eigen::Index i = 0; i < gh.rows(); ++i) {
                            const S m1 = gh.row(i).mean();
                            const S m2 = gh.row(i).cwiseProduct(xhat.row(i)).mean();
                            d.row(i) = (gh.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                          }
                          t.accum(x.id, d);
                        }
                        (void)n;
                      });
}

// Relative-position attention logits: out(i, j) = q.row(i) . rel.row(j - i + max_len - 1),
// where rel holds 2*max_len - 1 embeddings for distances -(max_len-1) .. (max_len-1).
template <class S>
Var<S> relative_logits(Var<S> q, Var<S> rel, Eigen::Index max_len) {
  const Eigen::Index L = q.rows();
  detail::check(rel.rows() == 2 * max_len - 1 && rel.cols() == q.cols() && L <= max_len,
                "relative_logits: shape");
  Mat<S> full = q.value() * rel.value().transpose();
  Mat<S> out(L, L);
  for (Eigen::Index i = 0; i < L; ++i)
    for (Eigen::Index j = 0; j < L; ++j) out(i, j) = full(i, j - i + max_len - 1);
  return q.tape->push(std::move(out), {q, rel}, [q, rel, L, max_len](Tape<S>& t, const Mat<S>& g) {
    Mat<S> dfull = Mat<S>::Zero(L, 2 * max_len - 1);
    for (Eigen::Index i = 0; i < L; ++i)
      for (Eigen::Index j = 0; j < L; ++j) dfull(i, j - i + max_len - 1) = g(i, j);
    if (t.requires_grad(q.id)) t.accum(q.id, dfull * t.value(rel.id));
    if (t.requires_grad(rel.id)) t.accum(rel.id, dfull.transpose() * t.value(q.id));
  });
}

// Inverted dropout; identity when p == 0.
template <class S, class Rng>
Var<S> dropout(Var<S> a, S p, Rng& rng) {
  if (p <= S(0)) return a;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  Mat<S> m(a.rows(), a.cols());
  const S k = S(1) / (S(1) - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? k : S(0);
  Mat<S> out = a.value().cwiseProduct(m);
  return a.tape->push(std::move(out), {a}, [a, m = std::move(m)](Tape<S>& t, const Mat<S>& g) {
    t.accum(a.id, g.cwiseProduct(m));
  });
}

// Diagonal Gaussian log-density summed over columns, one value per row.
// Variance is 0.5 * exp(log_v).
template <class S>
Var<S> gaussian_log_density(Var<S> x, Var<S> mean, Var<S> log_v) {
  detail::check(x.rows() == mean.rows() && x.cols() == mean.cols() && x.rows() == log_v.rows() &&
                    x.cols() == log_v.cols(),
                "gaussian_log_density: shape");
  const S log_half = std::log(S(0.5));
  const S log_2pi = std::log(S(2) * S(3.14159265358979323846264338327950288));
  Mat<S> diff = x.value() - mean.value();
  Mat<S> inv_var = ((-log_v.value().array() - log_half).exp()).matrix();
  Mat<S> terms = ((log_2pi + log_half + log_v.value().array()) + diff.array().square() * inv_var.array()).matrix();
  Mat<S> out = -S(0.5) * terms.rowwise().sum();
  return x.tape->push(std::move(out), {x, mean, log_v},
                      [x, mean, log_v, diff = std::move(diff), inv_var = std::move(inv_var)](
                          Tape<S>& t, const Mat<S>& g) {
                        // g is rows x 1
                        Mat<S> dx = (diff.cwiseProduct(inv_var)).array().colwise() * g.col(0).array();
                        dx = -dx;
                        if (t.requires_grad(x.id)) t.accum(x.id, dx);
                        if (t.requires_grad(mean.id)) t.accum(mean.id, -dx);
                        if (t.requires_grad(log_v.id)) {
                          Mat<S> dl = (S(-0.5) * (S(1) - diff.array().square() * inv_var.array())).matrix();
                          t.accum(log_v.id, (dl.array().colwise() * g.col(0).array()).matrix());
                        }
                      });
}

}  // namespace clsm::ag
