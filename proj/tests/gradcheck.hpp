#pragma once

// Central-difference gradient checking for the forward/backward pair.

#include <algorithm>
#include <cmath>
#include <random>

#include "gcorn/nn.hpp"
#include "oracles.hpp"

namespace gradcheck {

using gcorn::DenseMatrix;
using gcorn::Model;

struct Report {
  double max_rel_error = 0.0;
  std::size_t compared = 0;
  std::size_t skipped_small = 0;
  std::size_t skipped_kink = 0;
};

// Scalar objective sum(R * logits); R plays the upstream gradient.
inline double objective(const DenseMatrix& logits, const DenseMatrix& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += logits.data()[i] * r.data()[i];
  return s;
}

// ReLU on/off pattern of every pre-activation, used to skip kink crossings.
inline std::vector<bool> pattern(const gcorn::ForwardCache& c) {
  std::vector<bool> p;
  for (std::size_t l = 0; l + 1 < c.preacts.size(); ++l)
    for (double v : c.preacts[l].data()) p.push_back(v > 0.0);
  return p;
}

inline Report check(const Model& model, const gcorn::SparseOperator& op, const DenseMatrix& x,
                    const DenseMatrix& r, double h = 1e-5, double small = 1e-8) {
  const auto base = gcorn::forward(model, op, x);
  const auto grads = gcorn::backward(model, base.cache, r);
  const auto base_pattern = pattern(base.cache);
  Report rep;

  auto compare = [&](double analytic, auto&& eval) {
    auto [fp, pp] = eval(+h);
    auto [fm, pm] = eval(-h);
    if (pp != base_pattern || pm != base_pattern) {
      ++rep.skipped_kink;
      return;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    if (std::abs(analytic) < small) {
      ++rep.skipped_small;
      return;
    }
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    ++rep.compared;
  };

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (std::size_t i = 0; i < model.layers[l].size(); ++i) {
      compare(grads.weights[l].data()[i], [&](double step) {
        Model m = model;
        m.layers[l].data()[i] += step;
        const auto fw = gcorn::forward(m, op, x);
        return std::pair{objective(fw.logits, r), pattern(fw.cache)};
      });
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    compare(grads.features.data()[i], [&](double step) {
      DenseMatrix xs = x;
      xs.data()[i] += step;
      const auto fw = gcorn::forward(model, op, xs);
      return std::pair{objective(fw.logits, r), pattern(fw.cache)};
    });
  }
  return rep;
}

struct Case {
  Model model;
  gcorn::Graph graph;
  DenseMatrix x;
  DenseMatrix r;
};

// Random small instance: n <= 10, K <= 5, L <= 3.
inline Case random_case(std::mt19937_64& rng, gcorn::ModelKind kind, bool gcorn_on) {
  std::uniform_int_distribution<std::size_t> nd(2, 10), kd(1, 5), ld(1, 3), hd(2, 4), cd(2, 3);
  std::uniform_real_distribution<double> pd(0.2, 0.7);
  const std::size_t n = nd(rng), K = kd(rng), L = ld(rng), C = cd(rng);
  Case c{{}, oracle::random_graph(n, pd(rng), rng), oracle::random_matrix(n, K, rng), {}};
  c.model.kind = kind;
  c.model.gcorn = gcorn_on;
  c.model.readout = std::bernoulli_distribution(0.5)(rng);
  c.model.ortho.power_iters = 2000;
  c.model.ortho.power_tol = 1e-13;
  // GIN sums grow with degree; keep the weights modest so logits stay O(1).
  const double scale = kind == gcorn::ModelKind::gin ? 0.4 : 1.0;
  std::size_t in = K;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t out = l + 1 == L ? C : hd(rng);
    c.model.layers.push_back(oracle::random_matrix(in, out, rng, -scale, scale));
    in = out;
  }
  c.r = oracle::random_matrix(n, C, rng);
  return c;
}

}  // namespace gradcheck
