#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "desknmt/error.hpp"

namespace desknmt {

using Vec = std::vector<double>;

// Dense row-major array of doubles. Parameters are 1-D (biases, vectors) or
// 2-D (matrices); nothing in the network needs a higher rank.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                       " values but shape holds " +
                       std::to_string(element_count(shape_)));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
  }
  static Tensor vector(std::size_t n) { return Tensor({n}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Small dense kernels. Widths are checked by callers at construction time;
// these run in the inner loops.

// y += W x
inline void gemv_acc(const Tensor& w, std::span<const double> x,
                     std::span<double> y) {
  const std::size_t cols = w.cols();
  const double* p = w.raw().data();
  for (std::size_t r = 0; r < y.size(); ++r, p += cols) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += p[c] * x[c];
    y[r] += acc;
  }
}

// dx += W^T dy
inline void gemv_t_acc(const Tensor& w, std::span<const double> dy,
                       std::span<double> dx) {
  const std::size_t cols = w.cols();
  const double* p = w.raw().data();
  for (std::size_t r = 0; r < dy.size(); ++r, p += cols) {
    const double g = dy[r];
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += p[c] * g;
  }
}

// dW += dy x^T
inline void outer_acc(Tensor& dw, std::span<const double> dy,
                      std::span<const double> x) {
  const std::size_t cols = dw.cols();
  double* p = dw.raw().data();
  for (std::size_t r = 0; r < dy.size(); ++r, p += cols) {
    const double g = dy[r];
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) p[c] += g * x[c];
  }
}

inline void add_to(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Log-softmax over entries where `allowed` is true (all entries when
// `allowed` is empty). Excluded entries and -inf logits come out as -inf.
inline Vec log_softmax(std::span<const double> logits,
                       const std::vector<bool>& allowed = {}) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const bool masked = !allowed.empty();
  double mx = kNegInf;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if ((!masked || allowed[i]) && logits[i] > mx) mx = logits[i];
  if (mx == kNegInf) throw NumericError("log_softmax over an empty support");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!masked || allowed[i]) sum += std::exp(logits[i] - mx);
  const double lse = mx + std::log(sum);
  Vec out(logits.size(), kNegInf);
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!masked || allowed[i]) out[i] = logits[i] - lse;
  return out;
}

}  // namespace desknmt
