#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "citecat/error.hpp"

// Small dense-linear-algebra and RNG layer shared by the model and the
// TF-IDF probe. Everything is double precision and deterministic.
namespace citecat::nn {

// Row-major matrix; vectors are rows == n, cols == 1.
struct Tensor {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(size_t r, size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

  double& at(size_t r, size_t c) { return v[r * cols + c]; }
  double at(size_t r, size_t c) const { return v[r * cols + c]; }
  size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

// y = W x + b  (W: m x n, x: n, b: m)
inline void affine(const Tensor& W, const std::vector<double>& x,
                   const Tensor& b, std::vector<double>& y) {
  if (W.cols != x.size() || W.rows != b.size())
    throw Error("affine: shape mismatch (" + std::to_string(W.rows) + "x" +
                std::to_string(W.cols) + " vs x[" + std::to_string(x.size()) + "])");
  y.assign(W.rows, 0.0);
  for (size_t r = 0; r < W.rows; ++r) {
    const double* wrow = W.v.data() + r * W.cols;
    double acc = b.v[r];
    for (size_t c = 0; c < W.cols; ++c) acc += wrow[c] * x[c];
    y[r] = acc;
  }
}

// y += W^T g  (gradient through an affine input)
inline void add_matT_vec(const Tensor& W, const std::vector<double>& g,
                         std::vector<double>& y) {
  for (size_t r = 0; r < W.rows; ++r) {
    const double* wrow = W.v.data() + r * W.cols;
    const double gr = g[r];
    for (size_t c = 0; c < W.cols; ++c) y[c] += wrow[c] * gr;
  }
}

// dW += g x^T, db += g
inline void accumulate_outer(Tensor& dW, Tensor& db, const std::vector<double>& g,
                             const std::vector<double>& x) {
  for (size_t r = 0; r < dW.rows; ++r) {
    double* wrow = dW.v.data() + r * dW.cols;
    const double gr = g[r];
    for (size_t c = 0; c < dW.cols; ++c) wrow[c] += gr * x[c];
    db.v[r] += gr;
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Stable log-sum-exp with max subtraction.
inline double log_sum_exp(const std::vector<double>& z) {
  double m = z[0];
  for (double x : z) m = std::max(m, x);
  double s = 0;
  for (double x : z) s += std::exp(x - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double lse = log_sum_exp(z);
  std::vector<double> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - lse);
  return p;
}

// -log softmax(logits)[label], natural log.
inline double cross_entropy(const std::vector<double>& logits, size_t label) {
  if (label >= logits.size()) throw Error("cross_entropy: label out of range");
  return log_sum_exp(logits) - logits[label];
}

// d loss / d logits = softmax - onehot
inline std::vector<double> cross_entropy_grad(const std::vector<double>& logits,
                                              size_t label) {
  auto g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// uniform draws below avoid std::uniform_real_distribution so streams are
// reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  // in [0, 1), 53-bit resolution
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // in [0, n)
  uint64_t below(uint64_t n) { return n == 0 ? 0 : gen_() % n; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  void fill_uniform(Tensor& t, double lo, double hi) {
    for (double& x : t.v) x = uniform(lo, hi);
  }

  // Uniform Glorot-style range from fan-in/fan-out.
  void fill_xavier(Tensor& t) {
    double r = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    fill_uniform(t, -r, r);
  }

 private:
  std::mt19937_64 gen_;
};

// Adam with bias correction. One state pair per parameter tensor; `step`
// is shared and incremented by the owner once per optimizer step.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  Tensor m;
  Tensor v;
};

// Applies one Adam update to `param` given `grad`. `t` is the 1-based step
// count. Throws on non-finite gradients, naming the parameter.
inline void adam_update(Tensor& param, const Tensor& grad, AdamSlot& slot,
                        const AdamConfig& cfg, uint64_t t, const std::string& name) {
  if (slot.m.v.empty()) {
    slot.m = Tensor(param.rows, param.cols);
    slot.v = Tensor(param.rows, param.cols);
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < param.v.size(); ++i) {
    double g = grad.v[i];
    if (!std::isfinite(g))
      throw Error("non-finite gradient in parameter \"" + name + "\"");
    slot.m.v[i] = cfg.beta1 * slot.m.v[i] + (1.0 - cfg.beta1) * g;
    slot.v.v[i] = cfg.beta2 * slot.v.v[i] + (1.0 - cfg.beta2) * g * g;
    double mhat = slot.m.v[i] / bc1;
    double vhat = slot.v.v[i] / bc2;
    param.v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace citecat::nn
