#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "lfuse/nn/tape.hpp"

namespace lfuse::nn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> cmap(const Tensor<T>& t) {
  return CMapMat<T>(t.data.data(), t.rows, t.cols);
}
template <typename T>
MapMat<T> map(Tensor<T>& t) {
  return MapMat<T>(t.data.data(), t.rows, t.cols);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.value().same_shape(b.value())) throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

/// y = x * W^T + b, applied to every row of x. x: B x in, W: out x in, b: 1 x out.
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  if (x.cols() != w.cols()) throw ShapeMismatch("dense: input width does not match weight columns");
  if (b.rows() != 1 || b.cols() != w.rows()) throw ShapeMismatch("dense: bias must be 1 x out");
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.tape->make(
      {xi, wi, bi},
      [xi, wi, bi](Tape<T>& t, Tensor<T>& out) {
        const auto& X = t.value(xi);
        const auto& W = t.value(wi);
        const auto& B = t.value(bi);
        out = Tensor<T>(X.rows, W.rows);
        auto Y = detail::map(out);
        Y.noalias() = detail::cmap(X) * detail::cmap(W).transpose();
        Y.rowwise() += detail::cmap(B).row(0);
      },
      [xi, wi, bi](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        const auto G = detail::cmap(g);
        if (t.requires_grad(xi)) detail::map(t.grad(xi)).noalias() += G * detail::cmap(t.value(wi));
        if (t.requires_grad(wi)) detail::map(t.grad(wi)).noalias() += G.transpose() * detail::cmap(t.value(xi));
        if (t.requires_grad(bi)) detail::map(t.grad(bi)).row(0) += G.colwise().sum();
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  const int ai = a.id, bi = b.id;
  return a.tape->make(
      {ai, bi},
      [ai, bi](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        const auto& B = t.value(bi);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
      },
      [ai, bi](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        for (int p : {ai, bi}) {
          if (!t.requires_grad(p)) continue;
          auto& gp = t.grad(p);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  const int ai = a.id, bi = b.id;
  return a.tape->make(
      {ai, bi},
      [ai, bi](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        const auto& B = t.value(bi);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
      },
      [ai, bi](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        if (t.requires_grad(ai)) {
          auto& ga = t.grad(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(bi)) {
          auto& gb = t.grad(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  const int ai = a.id, bi = b.id;
  return a.tape->make(
      {ai, bi},
      [ai, bi](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        const auto& B = t.value(bi);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
      },
      [ai, bi](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        const auto& A = t.value(ai);
        const auto& B = t.value(bi);
        if (t.requires_grad(ai)) {
          auto& ga = t.grad(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (t.requires_grad(bi)) {
          auto& gb = t.grad(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
      });
}

/// Elementwise product with a constant tensor of the same shape.
template <typename T>
Var<T> mul_const(Var<T> a, Tensor<T> c) {
  if (!a.value().same_shape(c)) throw ShapeMismatch("mul_const: shape mismatch");
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai, c](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
      },
      [ai, c](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
      });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai, s](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        for (auto& v : out.data) v *= s;
      },
      [ai, s](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
      });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        for (auto& v : out.data) v = std::tanh(v);
      },
      [ai](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
      });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        for (auto& v : out.data) v = detail::stable_sigmoid(v);
      },
      [ai](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
      });
}

/// Inverted dropout: each element kept with probability `keep` and scaled by 1/keep.
/// The mask is drawn once from `rng` at record time and stored in the node.
template <typename T>
Var<T> dropout(Var<T> a, double keep, CounterRng& rng) {
  if (!(keep > 0.0 && keep <= 1.0)) throw InvalidArgument("dropout: keep probability must be in (0, 1]");
  if (keep == 1.0) return a;
  const int ai = a.id;
  std::vector<T> mask(a.value().size());
  const T inv = static_cast<T>(1.0 / keep);
  for (auto& m : mask) m = rng.bernoulli(keep) ? inv : T(0);
  return a.tape->make(
      {ai},
      [ai, mask](Tape<T>& t, Tensor<T>& out) {
        out = t.value(ai);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
      },
      [ai, mask](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
      });
}

/// Horizontal concatenation of tensors with equal row counts.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  std::vector<int> ids;
  const int rows = parts.front().rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    ids.push_back(p.id);
  }
  return parts.front().tape->make(
      ids,
      [ids, rows](Tape<T>& t, Tensor<T>& out) {
        int cols = 0;
        for (int id : ids) cols += t.value(id).cols;
        out = Tensor<T>(rows, cols);
        int off = 0;
        for (int id : ids) {
          const auto& v = t.value(id);
          for (int r = 0; r < rows; ++r)
            std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(r) * v.cols, v.cols,
                        out.data.begin() + static_cast<std::ptrdiff_t>(r) * cols + off);
          off += v.cols;
        }
      },
      [ids, rows](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        int off = 0;
        for (int id : ids) {
          const int c = t.value(id).cols;
          if (t.requires_grad(id)) {
            auto& gi = t.grad(id);
            for (int r = 0; r < rows; ++r)
              for (int j = 0; j < c; ++j) gi(r, j) += g(r, off + j);
          }
          off += c;
        }
      });
}

/// Columns [start, start + len) of every row.
template <typename T>
Var<T> slice_cols(Var<T> a, int start, int len) {
  if (start < 0 || len <= 0 || start + len > a.cols()) throw ShapeMismatch("slice_cols: range out of bounds");
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai, start, len](Tape<T>& t, Tensor<T>& out) {
        const auto& A = t.value(ai);
        out = Tensor<T>(A.rows, len);
        for (int r = 0; r < A.rows; ++r)
          for (int j = 0; j < len; ++j) out(r, j) = A(r, start + j);
      },
      [ai, start, len](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (int r = 0; r < g.rows; ++r)
          for (int j = 0; j < len; ++j) ga(r, start + j) += g(r, j);
      });
}

/// Row `r` as a 1 x cols tensor.
template <typename T>
Var<T> row(Var<T> a, int r) {
  if (r < 0 || r >= a.rows()) throw ShapeMismatch("row: index out of bounds");
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai, r](Tape<T>& t, Tensor<T>& out) {
        const auto& A = t.value(ai);
        out = Tensor<T>(1, A.cols);
        std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(r) * A.cols, A.cols, out.data.begin());
      },
      [ai, r](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (int j = 0; j < g.cols; ++j) ga(r, j) += g[j];
      });
}

/// Rows [first, first + count) flattened oldest-first into 1 x (count * cols).
/// Rows with index < `min_row` are zero (padding).
template <typename T>
Var<T> rows_flat(Var<T> a, int first, int count, int min_row = 0) {
  if (count <= 0 || first + count > a.rows()) throw ShapeMismatch("rows_flat: range out of bounds");
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai, first, count, min_row](Tape<T>& t, Tensor<T>& out) {
        const auto& A = t.value(ai);
        out = Tensor<T>(1, count * A.cols);
        for (int i = 0; i < count; ++i) {
          const int r = first + i;
          if (r < min_row || r < 0) continue;
          std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(r) * A.cols, A.cols,
                      out.data.begin() + static_cast<std::ptrdiff_t>(i) * A.cols);
        }
      },
      [ai, first, count, min_row](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        const int c = ga.cols;
        for (int i = 0; i < count; ++i) {
          const int r = first + i;
          if (r < min_row || r < 0) continue;
          for (int j = 0; j < c; ++j) ga(r, j) += g[static_cast<std::size_t>(i) * c + j];
        }
      });
}

/// Sum of all elements (accumulated in double).
template <typename T>
Var<T> sum(Var<T> a) {
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai](Tape<T>& t, Tensor<T>& out) {
        double s = 0.0;
        for (T v : t.value(ai).data) s += static_cast<double>(v);
        out = Tensor<T>(1, 1, static_cast<T>(s));
      },
      [ai](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        auto& ga = t.grad(ai);
        for (auto& v : ga.data) v += g[0];
      });
}

/// Sum of scalar nodes (accumulated in double, left to right).
template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms, Tape<T>& tape) {
  std::vector<int> ids;
  ids.reserve(terms.size());
  for (const auto& v : terms) {
    if (v.value().size() != 1) throw ShapeMismatch("add_n: terms must be scalars");
    ids.push_back(v.id);
  }
  return tape.make(
      ids,
      [ids](Tape<T>& t, Tensor<T>& out) {
        double s = 0.0;
        for (int id : ids) s += static_cast<double>(t.value(id)[0]);
        out = Tensor<T>(1, 1, static_cast<T>(s));
      },
      [ids](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        for (int id : ids)
          if (t.requires_grad(id)) t.grad(id)[0] += g[0];
      });
}

/// sum_i weights[i] * huber(a[i], delta) over a 1 x n tensor.
template <typename T>
Var<T> weighted_huber(Var<T> a, std::vector<double> weights, double delta) {
  if (static_cast<std::size_t>(a.cols()) != weights.size() || a.rows() != 1)
    throw ShapeMismatch("weighted_huber: weight count does not match input");
  if (!(delta > 0.0)) throw InvalidArgument("huber: delta must be > 0");
  const int ai = a.id;
  return a.tape->make(
      {ai},
      [ai, weights, delta](Tape<T>& t, Tensor<T>& out) {
        const auto& A = t.value(ai);
        double s = 0.0;
        for (std::size_t i = 0; i < A.size(); ++i) {
          const double x = static_cast<double>(A[i]);
          const double ax = std::abs(x);
          s += weights[i] * (ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta));
        }
        out = Tensor<T>(1, 1, static_cast<T>(s));
      },
      [ai, weights, delta](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        const auto& A = t.value(ai);
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < A.size(); ++i) {
          const double x = static_cast<double>(A[i]);
          const double d = std::abs(x) <= delta ? x : (x > 0 ? delta : -delta);
          ga[i] += static_cast<T>(static_cast<double>(g[0]) * weights[i] * d);
        }
      });
}

/// Mean over channels of the binary cross entropy between sigmoid(logits) and labels,
/// in the overflow-free form max(o,0) - o*y + log(1 + exp(-|o|)).
template <typename T>
Var<T> binary_cross_entropy(Var<T> logits, std::vector<double> labels) {
  if (logits.rows() != 1 || static_cast<std::size_t>(logits.cols()) != labels.size())
    throw ShapeMismatch("binary_cross_entropy: label count does not match logits");
  const int ai = logits.id;
  return logits.tape->make(
      {ai},
      [ai, labels](Tape<T>& t, Tensor<T>& out) {
        const auto& A = t.value(ai);
        double s = 0.0;
        for (std::size_t i = 0; i < A.size(); ++i) {
          const double o = static_cast<double>(A[i]);
          s += std::max(o, 0.0) - o * labels[i] + std::log1p(std::exp(-std::abs(o)));
        }
        out = Tensor<T>(1, 1, static_cast<T>(s / static_cast<double>(A.size())));
      },
      [ai, labels](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        const auto& A = t.value(ai);
        auto& ga = t.grad(ai);
        const double n = static_cast<double>(A.size());
        for (std::size_t i = 0; i < A.size(); ++i) {
          const double s = detail::stable_sigmoid(static_cast<double>(A[i]));
          ga[i] += static_cast<T>(static_cast<double>(g[0]) * (s - labels[i]) / n);
        }
      });
}

}  // namespace lfuse::nn
