#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gcorn/errors.hpp"
#include "gcorn/matrix.hpp"

namespace gcorn {

struct OrthoConfig {
  int order = 1;        // truncation order of the inverse-square-root series
  int iterations = 15;  // Björck iterations k
  bool prescale = true;
  int power_iters = 50;
  double power_tol = 1e-6;

  void validate() const {
    if (order < 1) throw ValidationError("ortho.order must be >= 1");
    if (iterations < 0) throw ValidationError("ortho.iterations must be >= 0");
    if (power_iters < 1) throw ValidationError("ortho.power_iters must be >= 1");
    if (!(power_tol >= 0.0)) throw ValidationError("ortho.power_tol must be >= 0");
  }

  friend bool operator==(const OrthoConfig&, const OrthoConfig&) = default;
};

struct SpectralEstimate {
  double value = 0.0;
  std::vector<double> left;   // W v / |W v|
  std::vector<double> right;  // v
  int iterations = 0;
};

// Power iteration on W^T W from the normalized all-ones vector. Stops once the
// right singular vector moves by less than tol.
inline SpectralEstimate spectral_estimate(const DenseMatrix& w, int iters, double tol) {
  SpectralEstimate est;
  const std::size_t c = w.cols();
  if (w.empty()) return est;
  std::vector<double> v(c, 1.0 / std::sqrt(static_cast<double>(c)));
  auto normalize = [](std::vector<double>& x) {
    const double n = norm2(x);
    if (n > 0.0)
      for (double& e : x) e /= n;
    return n;
  };
  bool restarted = false;
  for (int it = 0; it < iters; ++it) {
    auto u = matvec(w, v);
    auto next = matvec_t(w, u);
    if (normalize(next) == 0.0) {
      if (restarted || max_abs(w) == 0.0) break;
      // Start vector was orthogonal to the row space; use a deterministic irregular one.
      restarted = true;
      for (std::size_t j = 0; j < c; ++j) v[j] = 1.0 + std::fmod(0.6180339887498949 * (j + 1), 1.0);
      normalize(v);
      continue;
    }
    double delta = 0.0;
    for (std::size_t j = 0; j < c; ++j) delta += (next[j] - v[j]) * (next[j] - v[j]);
    v = std::move(next);
    est.iterations = it + 1;
    if (std::sqrt(delta) < tol) break;
  }
  auto u = matvec(w, v);
  est.value = normalize(u);
  est.left = std::move(u);
  est.right = std::move(v);
  return est;
}

inline double spectral_norm(const DenseMatrix& w, int iters = 50, double tol = 1e-6) {
  return spectral_estimate(w, iters, tol).value;
}

// |W^T W - I|_F
inline double ortho_defect(const DenseMatrix& w) {
  DenseMatrix g = matmul_tn(w, w);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return frobenius_norm(g);
}

// Series coefficients a_j = (-1)^j binom(-1/2, j): 1, 1/2, 3/8, 5/16, ...
inline std::vector<double> bjorck_coefficients(int order) {
  std::vector<double> a(static_cast<std::size_t>(order) + 1);
  double binom = 1.0;
  a[0] = 1.0;
  for (int j = 1; j <= order; ++j) {
    binom = binom * (-0.5 - j + 1) / j;
    a[static_cast<std::size_t>(j)] = (j % 2 == 0 ? 1.0 : -1.0) * binom;
  }
  return a;
}

// Everything needed to differentiate a projection.
struct BjorckTrace {
  bool transposed = false;  // worked on W^T because rows < cols
  double scale = 1.0;       // prescale divisor, 1 when disabled
  bool scaled = false;
  std::vector<double> left, right;     // singular vectors behind `scale`
  DenseMatrix input;                   // working-orientation input
  std::vector<DenseMatrix> iterates;   // W_0 .. W_k (working orientation)
  std::vector<double> defects;         // |W_k^T W_k - I|_F
};

struct BjorckResult {
  DenseMatrix output;
  BjorckTrace trace;
};

namespace ortho_detail {

inline DenseMatrix gram_defect(const DenseMatrix& w) {  // I - W^T W
  DenseMatrix q = matmul_tn(w, w);
  q *= -1.0;
  for (std::size_t i = 0; i < q.rows(); ++i) q(i, i) += 1.0;
  return q;
}

// P = sum_j a_j Q^j by Horner's rule.
inline DenseMatrix series(const DenseMatrix& q, const std::vector<double>& a) {
  const std::size_t c = q.rows();
  DenseMatrix p = DenseMatrix::identity(c) * a.back();
  for (std::size_t j = a.size() - 1; j-- > 0;) {
    p = matmul(q, p);
    for (std::size_t i = 0; i < c; ++i) p(i, i) += a[j];
  }
  return p;
}

}  // namespace ortho_detail

// Projects W toward the nearest (semi-)orthonormal matrix. Tall or square
// inputs converge to W^T W = I; wide inputs are handled through their transpose
// so that W W^T = I. The input is not modified.
inline BjorckResult bjorck_project_traced(const DenseMatrix& w, const OrthoConfig& cfg,
                                          const std::string& layer = "") {
  cfg.validate();
  using namespace ortho_detail;
  BjorckResult res;
  auto& tr = res.trace;
  tr.transposed = w.rows() < w.cols();
  tr.input = tr.transposed ? transpose(w) : w;

  DenseMatrix cur = tr.input;
  if (cfg.prescale) {
    auto est = spectral_estimate(cur, cfg.power_iters, cfg.power_tol);
    if (est.value > 0.0) {
      tr.scaled = true;
      tr.scale = est.value;
      tr.left = std::move(est.left);
      tr.right = std::move(est.right);
      cur *= 1.0 / tr.scale;
    }
  }

  const auto coeff = bjorck_coefficients(cfg.order);
  tr.iterates.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
  tr.defects.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
  tr.iterates.push_back(cur);
  tr.defects.push_back(ortho_defect(cur));
  // Below this the defect only jitters at round-off level.
  constexpr double kDefectFloor = 1e-10;
  int growth_streak = 0;
  for (int k = 0; k < cfg.iterations; ++k) {
    const DenseMatrix q = gram_defect(cur);
    cur = matmul(cur, series(q, coeff));
    const double d = ortho_defect(cur);
    const bool grew = d > tr.defects.back() && d > kDefectFloor;
    if (!std::isfinite(d) || (grew && ++growth_streak >= 3)) {
      throw ConvergenceError("Björck projection diverged" +
                             (layer.empty() ? std::string() : " in layer " + layer) +
                             " at iteration " + std::to_string(k + 1) +
                             " (defect " + std::to_string(d) + ")");
    }
    if (!grew) growth_streak = 0;
    tr.iterates.push_back(cur);
    tr.defects.push_back(d);
  }
  res.output = tr.transposed ? transpose(cur) : cur;
  return res;
}

inline DenseMatrix bjorck_project(const DenseMatrix& w, const OrthoConfig& cfg,
                                  const std::string& layer = "") {
  return bjorck_project_traced(w, cfg, layer).output;
}

// Reverse-mode through the unrolled iterations and the spectral prescale.
// The prescale divisor is differentiated as s = |W v| with v held fixed, whose
// gradient u v^T matches d sigma_max / dW at a converged power iteration.
inline DenseMatrix bjorck_backward(const BjorckTrace& tr, const DenseMatrix& grad_output,
                                   const OrthoConfig& cfg) {
  using namespace ortho_detail;
  DenseMatrix g = tr.transposed ? transpose(grad_output) : grad_output;
  if (!g.same_shape(tr.input)) throw DimensionError("bjorck_backward: gradient shape mismatch");
  const auto a = bjorck_coefficients(cfg.order);

  for (std::size_t k = tr.iterates.size() - 1; k-- > 0;) {
    const DenseMatrix& wk = tr.iterates[k];
    const DenseMatrix q = gram_defect(wk);
    const DenseMatrix p = series(q, a);
    const DenseMatrix gp = matmul_tn(wk, g);  // dL/dP
    // dL/dQ = sum_j a_j sum_{i<j} Q^i gp Q^{j-1-i}
    const std::size_t c = q.rows();
    std::vector<DenseMatrix> qpow{DenseMatrix::identity(c)};
    for (std::size_t j = 1; j < a.size(); ++j) qpow.push_back(matmul(qpow.back(), q));
    DenseMatrix gq(c, c);
    for (std::size_t j = 1; j < a.size(); ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        DenseMatrix term = matmul(matmul(qpow[i], gp), qpow[j - 1 - i]);
        term *= a[j];
        gq += term;
      }
    }
    DenseMatrix next = matmul(g, p);
    DenseMatrix sym = gq + transpose(gq);
    next -= matmul(wk, sym);
    g = std::move(next);
  }

  if (tr.scaled) {
    double inner = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) inner += g.data()[i] * tr.input.data()[i];
    const double s = tr.scale;
    DenseMatrix out = g * (1.0 / s);
    const double coef = inner / (s * s);
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) -= coef * tr.left[i] * tr.right[j];
    g = std::move(out);
  }
  return tr.transposed ? transpose(g) : g;
}

}  // namespace gcorn
