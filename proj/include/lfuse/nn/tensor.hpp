#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lfuse/error.hpp"
#include "lfuse/rng.hpp"

namespace lfuse::nn {

/// Numeric storage, aligned for Eigen.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major matrix. Vectors are 1 x n.
template <typename T>
struct Tensor {
  int rows = 0;
  int cols = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int r, int c, T fill = T(0)) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}
  Tensor(int r, int c, Buffer<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(r) * c) throw ShapeMismatch("Tensor: value count does not match shape");
  }
  Tensor(int r, int c, const std::vector<T>& values) : Tensor(r, c, Buffer<T>(values.begin(), values.end())) {}

  static Tensor row_vector(std::vector<T> values) {
    const int n = static_cast<int>(values.size());
    return Tensor(1, n, std::move(values));
  }

  std::size_t size() const noexcept { return data.size(); }
  T& operator()(int r, int c) noexcept { return data[static_cast<std::size_t>(r) * cols + c]; }
  T operator()(int r, int c) const noexcept { return data[static_cast<std::size_t>(r) * cols + c]; }
  T& operator[](std::size_t i) noexcept { return data[i]; }
  T operator[](std::size_t i) const noexcept { return data[i]; }
  bool same_shape(const Tensor& o) const noexcept { return rows == o.rows && cols == o.cols; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }
};

/// A named trainable array with its gradient buffer.
template <typename T>
struct ParamTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  Buffer<T> values;
  Buffer<T> grad;

  std::size_t size() const noexcept { return values.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Ordered collection of parameters. Order is the registration order and is
/// the canonical order for checkpoints and gradient reductions.
template <typename T>
class ParamSet {
 public:
  int add(std::string name, int rows, int cols) {
    for (const auto& p : params_)
      if (p.name == name) throw InvalidArgument("duplicate parameter name: " + name);
    ParamTensor<T> p;
    p.name = std::move(name);
    p.rows = rows;
    p.cols = cols;
    p.values.assign(static_cast<std::size_t>(rows) * cols, T(0));
    p.grad.assign(p.values.size(), T(0));
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  /// Uniform in +-scale.
  void init_uniform(int idx, double scale, CounterRng& rng) {
    for (auto& v : params_[idx].values) v = static_cast<T>(rng.uniform(-scale, scale));
  }
  void fill(int idx, T value) { std::fill(params_[idx].values.begin(), params_[idx].values.end(), value); }

  ParamTensor<T>& operator[](int idx) { return params_.at(idx); }
  const ParamTensor<T>& operator[](int idx) const { return params_.at(idx); }
  int size() const noexcept { return static_cast<int>(params_.size()); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      const int idx = out.add(p.name, p.rows, p.cols);
      std::transform(p.values.begin(), p.values.end(), out[idx].values.begin(),
                     [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

 private:
  std::vector<ParamTensor<T>> params_;
};

/// Per-parameter gradient buffers shaped like a ParamSet. Gradients from
/// independent tapes are merged by calling `accumulate` in a fixed order.
template <typename T>
struct GradSet {
  std::vector<Buffer<T>> grads;

  GradSet() = default;
  explicit GradSet(const ParamSet<T>& ps) {
    grads.reserve(ps.size());
    for (const auto& p : ps) grads.emplace_back(p.size(), T(0));
  }

  void accumulate(const GradSet& other, T scale = T(1)) {
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += scale * other.grads[i][j];
  }

  double global_norm() const {
    double s = 0.0;
    for (const auto& g : grads)
      for (T v : g) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
  }
};

}  // namespace lfuse::nn
