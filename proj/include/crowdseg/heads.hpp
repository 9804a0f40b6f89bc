#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdseg/rng.hpp"

namespace crowdseg {

/// A named dense parameter matrix (cols == 1 for vectors/scalars) with a
/// gradient slot of the same shape. All trainable state in the project lives
/// in these, so the optimizer and checkpoint code can treat heads uniformly.
struct Parameter {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<double> value, grad;

  Parameter() = default;
  Parameter(std::string n, int r, int c)
      : name(std::move(n)),
        rows(r),
        cols(c),
        value(std::size_t(r) * c, 0.0),
        grad(std::size_t(r) * c, 0.0) {}

  double& at(int r, int c) { return value[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return value[std::size_t(r) * cols + c]; }
  double& gat(int r, int c) { return grad[std::size_t(r) * cols + c]; }
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  bool finite() const {
    for (double v : value)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Residual per-cell MLP over semantic features: out = x + W2 relu(W1 x + b1) + b2.
/// W2 and b2 start at zero, so the untrained adapter is the identity and the
/// rest of the model sees unmodified backbone features until training moves it.
class AdapterHead {
 public:
  AdapterHead() = default;
  AdapterHead(int channels, std::uint64_t seed)
      : c_(channels),
        h_(channels),
        w1("adapter.w1", channels, channels),
        b1("adapter.b1", channels, 1),
        w2("adapter.w2", channels, channels),
        b2("adapter.b2", channels, 1) {
    Rng rng(hash_mix(seed, hash_str("adapter-init")));
    const double scale = std::sqrt(2.0 / channels);
    for (auto& v : w1.value) v = scale * rng.gaussian();
  }

  int channels() const { return c_; }
  int hidden() const { return h_; }

  // pre (size hidden()) receives W1 x + b1 for use in backward_cell.
  void forward_cell(const double* x, double* out, double* pre) const {
    for (int j = 0; j < h_; ++j) {
      double a = b1.value[std::size_t(j)];
      const double* w1row = &w1.value[std::size_t(j) * c_];
      for (int i = 0; i < c_; ++i) a += w1row[i] * x[i];
      pre[j] = a;
    }
    for (int i = 0; i < c_; ++i) out[i] = x[i] + b2.value[std::size_t(i)];
    for (int j = 0; j < h_; ++j) {
      const double r = pre[j] > 0.0 ? pre[j] : 0.0;
      if (r == 0.0) continue;
      for (int i = 0; i < c_; ++i) out[i] += w2.at(i, j) * r;
    }
  }

  // Accumulates parameter gradients; if dx is non-null, adds d loss/d x to it.
  void backward_cell(const double* x, const double* pre, const double* dout, double* dx) {
    for (int i = 0; i < c_; ++i) {
      b2.grad[std::size_t(i)] += dout[i];
      if (dx != nullptr) dx[i] += dout[i];
    }
    for (int j = 0; j < h_; ++j) {
      if (pre[j] <= 0.0) continue;
      const double r = pre[j];
      double dpre = 0.0;
      for (int i = 0; i < c_; ++i) {
        w2.gat(i, j) += dout[i] * r;
        dpre += dout[i] * w2.at(i, j);
      }
      b1.grad[std::size_t(j)] += dpre;
      double* w1g = &w1.grad[std::size_t(j) * c_];
      const double* w1row = &w1.value[std::size_t(j) * c_];
      for (int i = 0; i < c_; ++i) {
        w1g[i] += dpre * x[i];
        if (dx != nullptr) dx[i] += dpre * w1row[i];
      }
    }
  }

  std::vector<Parameter*> params() { return {&w1, &b1, &w2, &b2}; }

  Parameter w1, b1, w2, b2;

 private:
  int c_ = 0, h_ = 0;
};

/// Single linear binary-classification unit (logit = w.x + b), zero-initialized
/// so the initial heatmap is uniformly 0.5. One instance is shared by the
/// heatmap path and the semantic-token scorer; both accumulate into the same
/// gradient slots.
class ClsHead {
 public:
  ClsHead() = default;
  ClsHead(int channels, std::uint64_t /*seed*/)
      : c_(channels), w("cls.w", channels, 1), b("cls.b", 1, 1) {}

  int channels() const { return c_; }

  double forward(const double* x) const {
    double a = b.value[0];
    for (int i = 0; i < c_; ++i) a += w.value[std::size_t(i)] * x[i];
    return a;
  }

  void backward(const double* x, double dlogit, double* dx) {
    b.grad[0] += dlogit;
    for (int i = 0; i < c_; ++i) {
      w.grad[std::size_t(i)] += dlogit * x[i];
      if (dx != nullptr) dx[i] += dlogit * w.value[std::size_t(i)];
    }
  }

  std::vector<Parameter*> params() { return {&w, &b}; }

  Parameter w, b;

 private:
  int c_ = 0;
};

/// Trainable correction to the frozen decoder IoU estimate. Input is the
/// per-prompt IoU token concatenated with one mask token (2*C_tok), pushed
/// through one hidden relu layer of width C_tok. The final layer starts at
/// zero, so the untrained refined score equals the frozen estimate.
class ParallelIoUHead {
 public:
  ParallelIoUHead() = default;
  ParallelIoUHead(int token_channels, std::uint64_t seed)
      : ct_(token_channels),
        w1("par.w1", token_channels, 2 * token_channels),
        b1("par.b1", token_channels, 1),
        w2("par.w2", 1, token_channels),
        b2("par.b2", 1, 1) {
    Rng rng(hash_mix(seed, hash_str("par-init")));
    const double scale = std::sqrt(2.0 / (2.0 * token_channels));
    for (auto& v : w1.value) v = scale * rng.gaussian();
  }

  int token_channels() const { return ct_; }

  // u: IoU token (C_tok), m: mask token (C_tok); pre (C_tok) for backward.
  double forward(const double* u, const double* m, double* pre) const {
    double out = b2.value[0];
    for (int j = 0; j < ct_; ++j) {
      double a = b1.value[std::size_t(j)];
      const double* row = &w1.value[std::size_t(j) * 2 * ct_];
      for (int i = 0; i < ct_; ++i) a += row[i] * u[i];
      for (int i = 0; i < ct_; ++i) a += row[ct_ + i] * m[i];
      pre[j] = a;
      if (a > 0.0) out += w2.value[std::size_t(j)] * a;
    }
    return out;
  }

  void backward(const double* u, const double* m, const double* pre, double dscore,
                double* du, double* dm) {
    b2.grad[0] += dscore;
    for (int j = 0; j < ct_; ++j) {
      if (pre[j] <= 0.0) continue;
      w2.grad[std::size_t(j)] += dscore * pre[j];
      const double dpre = dscore * w2.value[std::size_t(j)];
      b1.grad[std::size_t(j)] += dpre;
      double* row_g = &w1.grad[std::size_t(j) * 2 * ct_];
      const double* row = &w1.value[std::size_t(j) * 2 * ct_];
      for (int i = 0; i < ct_; ++i) {
        row_g[i] += dpre * u[i];
        row_g[ct_ + i] += dpre * m[i];
        if (du != nullptr) du[i] += dpre * row[i];
        if (dm != nullptr) dm[i] += dpre * row[ct_ + i];
      }
    }
  }

  std::vector<Parameter*> params() { return {&w1, &b1, &w2, &b2}; }

  Parameter w1, b1, w2, b2;

 private:
  int ct_ = 0;
};

/// The full trainable state: adapter + shared classifier + parallel IoU head.
struct HeadSet {
  AdapterHead adapter;
  ClsHead cls;
  ParallelIoUHead par;

  HeadSet() = default;
  HeadSet(int feature_channels, int token_channels, std::uint64_t seed)
      : adapter(feature_channels, hash_mix(seed, 1)),
        cls(feature_channels, hash_mix(seed, 2)),
        par(token_channels, hash_mix(seed, 3)) {}

  std::vector<Parameter*> params() {
    std::vector<Parameter*> out;
    for (auto* p : adapter.params()) out.push_back(p);
    for (auto* p : cls.params()) out.push_back(p);
    for (auto* p : par.params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  bool finite() {
    for (auto* p : params())
      if (!p->finite()) return false;
    return true;
  }
};

}  // namespace crowdseg
