#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

#include "gcorn/errors.hpp"
#include "gcorn/graph.hpp"
#include "gcorn/matrix.hpp"
#include "gcorn/nn.hpp"
#include "gcorn/parallel.hpp"
#include "gcorn/rng.hpp"

namespace gcorn {

struct SampleConfig {
  double epsilon = 10.0;
  std::size_t l_max = 100;
  double p = 2.0;  // +inf selects the max norm
  double sigma = 0.5;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  double r_ratio = 0.5;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("estimate.epsilon must be > 0");
    if (l_max < 1) throw ValidationError("estimate.l_max must be >= 1");
    if (!(p > 0.0)) throw ValidationError("estimate.p must be > 0");
    if (!(sigma > 0.0)) throw ValidationError("estimate.sigma must be > 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("estimate.alpha must lie in (0,1]");
  }
};

// Radius with density K/eps (r/eps)^(K-1) on [0, eps], by inverting its CDF (r/eps)^K.
inline double sample_radius(double epsilon, std::size_t K, Rng& rng) {
  if (!(epsilon > 0.0)) throw ValidationError("sample_radius: epsilon must be > 0");
  if (K < 1) throw ValidationError("sample_radius: K must be >= 1");
  return epsilon * std::pow(uniform_open(rng), 1.0 / static_cast<double>(K));
}

// Point with |z|_p = radius. For finite p the magnitudes are radius * O_j^(1/p)
// with (O_j) the spacings of K-1 sorted uniforms; for p = inf a random pivot
// coordinate carries the radius and the rest are uniform on [0, radius]. Signs
// are fair coin flips.
inline std::vector<double> sample_sphere_row(double radius, std::size_t K, double p, Rng& rng) {
  if (!(radius >= 0.0)) throw ValidationError("sample_sphere_row: radius must be >= 0");
  std::vector<double> z(K, 0.0);
  if (K == 0) return z;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  if (std::isinf(p)) {
    std::uniform_int_distribution<std::size_t> pick(0, K - 1);
    const std::size_t pivot = pick(rng);
    for (std::size_t j = 0; j < K; ++j) z[j] = j == pivot ? radius : radius * unif(rng);
  } else {
    std::vector<double> cuts(K - 1);
    for (double& c : cuts) c = unif(rng);
    std::sort(cuts.begin(), cuts.end());
    double prev = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      const double next = j + 1 < K ? cuts[j] : 1.0;
      const double spacing = next - prev;
      prev = next;
      z[j] = p == 1.0 ? radius * spacing : radius * std::pow(spacing, 1.0 / p);
    }
  }
  for (double& v : z)
    if (coin(rng)) v = -v;
  return z;
}

struct PerturbationSample {
  DenseMatrix z;
  std::vector<double> row_radii;
  std::size_t pivot_row = 0;
  double radius = 0.0;  // realized max row norm r
};

// Draws Z from the shell {max_i |Z_i|_p = r} with r from the radius density.
// The pivot row carries r exactly; other rows get radii from the same density
// rescaled to [0, r].
inline PerturbationSample sample_perturbation(double epsilon, std::size_t n, std::size_t K, double p,
                                              Rng& rng) {
  if (n < 1) throw ValidationError("sample_perturbation: n must be >= 1");
  PerturbationSample s;
  s.radius = sample_radius(epsilon, K, rng);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  s.pivot_row = pick(rng);
  s.z = DenseMatrix(n, K);
  s.row_radii.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ri = i == s.pivot_row ? s.radius : sample_radius(1.0, K, rng) * s.radius;
    s.row_radii[i] = ri;
    const auto row = sample_sphere_row(ri, K, p, rng);
    std::copy(row.begin(), row.end(), s.z.row(i).begin());
  }
  return s;
}

// Spectral norm of the output difference, divided by 2 sqrt(N_G).
inline double output_distance(const DenseMatrix& a, const DenseMatrix& b, std::size_t n_graph) {
  if (!a.same_shape(b)) throw DimensionError("output_distance: shape mismatch");
  if (n_graph < 1) throw ValidationError("output_distance: N_G must be >= 1");
  const DenseMatrix d = a - b;
  if (max_abs(d) == 0.0) return 0.0;
  return exact_spectral_norm(d) / (2.0 * std::sqrt(static_cast<double>(n_graph)));
}

// L_max >= log(alpha) / log(1 - (r/eps)^K), rounded up, at least 1.
inline std::size_t required_samples(double alpha, double r_ratio, std::size_t K) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("required_samples: alpha must lie in (0,1)");
  if (!(r_ratio > 0.0 && r_ratio <= 1.0))
    throw ValidationError("required_samples: degenerate ratio r/eps (must lie in (0,1])");
  if (K < 1) throw ValidationError("required_samples: K must be >= 1");
  const double hit = std::pow(r_ratio, static_cast<double>(K));
  if (hit >= 1.0) return 1;
  const double bound = std::log(alpha) / std::log1p(-hit);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(bound)));
}

// Output map evaluated on perturbed features of one graph.
using OutputFn = std::function<DenseMatrix(const DenseMatrix& features)>;

struct GraphInput {
  DenseMatrix features;
  OutputFn output;
};

struct RobustnessEstimate {
  double adv = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  std::vector<double> per_graph;
  SampleConfig config;
};

// Fraction of sampled perturbations whose normalized output distance exceeds
// sigma, averaged per graph and then across graphs. Sample l of graph g uses
// stream (seed, g, l); counts are integers, so the result is independent of
// the thread count.
inline RobustnessEstimate estimate_adv(const std::vector<GraphInput>& graphs, const SampleConfig& cfg,
                                       std::size_t threads = 1) {
  cfg.validate();
  if (graphs.empty()) throw ValidationError("estimate_adv: no graphs");
  RobustnessEstimate est;
  est.config = cfg;
  est.per_graph.resize(graphs.size());
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& gin = graphs[gi];
    const std::size_t n = gin.features.rows();
    const std::size_t K = gin.features.cols();
    const DenseMatrix base = gin.output(gin.features);
    std::vector<unsigned char> hit(cfg.l_max, 0);
    parallel_for(cfg.l_max, threads, [&](std::size_t l) {
      Rng rng = substream(cfg.seed, {0xe57, gi, l});
      auto s = sample_perturbation(cfg.epsilon, n, K, cfg.p, rng);
      s.z += gin.features;
      const DenseMatrix out = gin.output(s.z);
      hit[l] = output_distance(out, base, n) > cfg.sigma;
    });
    const auto count = std::accumulate(hit.begin(), hit.end(), std::size_t{0});
    est.per_graph[gi] = static_cast<double>(count) / static_cast<double>(cfg.l_max);
  }
  est.adv = std::accumulate(est.per_graph.begin(), est.per_graph.end(), 0.0) /
            static_cast<double>(graphs.size());
  est.samples = cfg.l_max * graphs.size();
  est.std_error = std::sqrt(est.adv * (1.0 - est.adv) / static_cast<double>(est.samples));
  return est;
}

// Node-classification form: one graph, softmax outputs of the model.
inline RobustnessEstimate estimate_adv(const Model& model, const Dataset& ds, const SampleConfig& cfg,
                                       std::size_t threads = 1) {
  auto op = std::make_shared<SparseOperator>(propagation_operator(model, ds.graph));
  GraphInput g{ds.features.values, [&model, op](const DenseMatrix& x) {
                 return softmax_rows(forward(model, *op, x).logits);
               }};
  return estimate_adv(std::vector<GraphInput>{std::move(g)}, cfg, threads);
}

}  // namespace gcorn
