#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "gcorn/errors.hpp"
#include "gcorn/graph.hpp"
#include "gcorn/matrix.hpp"
#include "gcorn/nn.hpp"
#include "gcorn/parallel.hpp"
#include "gcorn/rng.hpp"

namespace gcorn {

enum class AttackKind { random_feature, pgd_feature, random_structural };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::random_feature: return "random_feature";
    case AttackKind::pgd_feature: return "pgd_feature";
    case AttackKind::random_structural: return "random_structural";
  }
  return "?";
}

struct AttackSpec {
  AttackKind kind = AttackKind::random_feature;
  double psi = 1.0;          // Gaussian noise scale
  double epsilon = 0.5;      // PGD per-row radius
  double rate = 0.15;        // PGD fraction of rows allowed to change
  double flip_budget = 0.1;  // structural flips as a fraction of |E|
  int steps = 40;
  std::optional<double> step_size;  // defaults to 2.5 * epsilon / steps
  double norm_order = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;

  double effective_step() const { return step_size ? *step_size : 2.5 * epsilon / steps; }

  void validate() const {
    if (!(psi >= 0.0)) throw ValidationError("attack.psi must be >= 0");
    if (!(epsilon >= 0.0)) throw ValidationError("attack.epsilon must be >= 0");
    if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("attack.rate must lie in [0,1]");
    if (!(flip_budget >= 0.0 && flip_budget <= 1.0))
      throw ValidationError("attack.flip_budget must lie in [0,1]");
    if (steps < 1) throw ValidationError("attack.steps must be >= 1");
    if (step_size && !(*step_size >= 0.0)) throw ValidationError("attack.step_size must be >= 0");
    if (!(norm_order == 1.0 || norm_order == 2.0 || std::isinf(norm_order)))
      throw ValidationError("attack.p must be 1, 2 or inf");
  }
};

// X + psi * Z with Z i.i.d. standard normal.
inline DenseMatrix random_feature_attack(const DenseMatrix& x, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  DenseMatrix out = x;
  for (double& v : out.data()) v += spec.psi * standard_normal(rng);
  return out;
}

namespace attack_detail {

// Euclidean projection of v onto the L1 ball of the given radius.
inline void project_l1(std::span<double> v, double radius) {
  double total = 0.0;
  for (double x : v) total += std::abs(x);
  if (total <= radius) return;
  if (radius <= 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  std::vector<double> mag(v.size());
  std::transform(v.begin(), v.end(), mag.begin(), [](double x) { return std::abs(x); });
  std::sort(mag.begin(), mag.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    cum += mag[i];
    const double t = (cum - radius) / static_cast<double>(i + 1);
    if (mag[i] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::copysign(std::max(std::abs(x) - theta, 0.0), x);
}

// Projects row `r` of `adv` onto the L_p ball of radius eps around the same row of `x`.
inline void project_row(DenseMatrix& adv, const DenseMatrix& x, std::size_t r, double eps, double p) {
  auto a = adv.row(r);
  const auto c = x.row(r);
  std::vector<double> d(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) d[j] = a[j] - c[j];
  if (std::isinf(p)) {
    for (double& v : d) v = std::clamp(v, -eps, eps);
  } else if (p == 2.0) {
    const double n = norm2(d);
    if (n > eps) {
      const double s = eps / n;
      for (double& v : d) v *= s;
    }
  } else {
    project_l1(d, eps);
  }
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = c[j] + d[j];
}

// Steepest-ascent direction for the L_p geometry.
inline std::vector<double> ascent_direction(std::span<const double> g, double p) {
  std::vector<double> d(g.size(), 0.0);
  if (std::isinf(p)) {
    for (std::size_t j = 0; j < g.size(); ++j) d[j] = (g[j] > 0) - (g[j] < 0);
  } else if (p == 2.0) {
    const double n = norm2(g);
    if (n > 0.0)
      for (std::size_t j = 0; j < g.size(); ++j) d[j] = g[j] / n;
  } else {
    std::size_t best = 0;
    for (std::size_t j = 1; j < g.size(); ++j)
      if (std::abs(g[j]) > std::abs(g[best])) best = j;
    if (!g.empty() && g[best] != 0.0) d[best] = g[best] > 0 ? 1.0 : -1.0;
  }
  return d;
}

inline DenseMatrix feature_gradient(const Model& m, const SparseOperator& op, const DenseMatrix& x,
                                    const Dataset& ds, double* loss_out = nullptr) {
  auto fw = forward(m, op, x);
  auto loss = cross_entropy(fw.logits, ds.labels, ds.test);
  if (loss_out) *loss_out = loss.loss;
  auto g = backward(m, fw.cache, loss.grad).features;
  if (!g.all_finite()) throw DivergenceError("pgd_feature_attack: non-finite feature gradient");
  return g;
}

}  // namespace attack_detail

using PgdObserver = std::function<void(int step, const DenseMatrix& adv)>;

// Projected gradient ascent on the test-mask cross-entropy. Only the
// ceil(rate * n) rows with the largest clean-gradient norm may move, each
// within an L_p ball of radius epsilon around its clean features.
inline DenseMatrix pgd_feature_attack(const Model& model, const Dataset& ds, const AttackSpec& spec,
                                      Rng& /*rng*/, const PgdObserver& observer = {}) {
  using namespace attack_detail;
  spec.validate();
  if (ds.test.empty()) throw ValidationError("pgd_feature_attack: empty test mask");
  const auto& x = ds.features.values;
  const auto op = propagation_operator(model, ds.graph);
  const std::size_t n = x.rows();
  const auto budget_rows =
      std::min(n, static_cast<std::size_t>(std::ceil(spec.rate * static_cast<double>(n) - 1e-12)));

  DenseMatrix adv = x;
  if (budget_rows == 0 || spec.epsilon == 0.0) return adv;

  const DenseMatrix g0 = feature_gradient(model, op, x, ds);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> gnorm(n);
  for (std::size_t u = 0; u < n; ++u) gnorm[u] = norm2(g0.row(u));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return gnorm[a] > gnorm[b]; });
  order.resize(budget_rows);
  std::sort(order.begin(), order.end());

  const double step = spec.effective_step();
  for (int s = 0; s < spec.steps; ++s) {
    const DenseMatrix g = s == 0 ? g0 : feature_gradient(model, op, adv, ds);
    for (std::size_t u : order) {
      const auto dir = ascent_direction(g.row(u), spec.norm_order);
      auto row = adv.row(u);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += step * dir[j];
      project_row(adv, x, u, spec.epsilon, spec.norm_order);
    }
    if (observer) observer(s, adv);
  }
  return adv;
}

// Flips exactly floor(budget * |E|) distinct node pairs chosen uniformly at
// random: present edges are removed, absent ones added.
inline Graph random_structural_attack(const Graph& g, double flip_budget, Rng& rng) {
  if (!(flip_budget >= 0.0 && flip_budget <= 1.0))
    throw ValidationError("random_structural_attack: budget must lie in [0,1]");
  const std::size_t n = g.num_nodes();
  const auto flips = static_cast<std::size_t>(std::floor(flip_budget * static_cast<double>(g.num_edges())));
  if (flips == 0) return g;
  const std::uint64_t pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  if (flips > pairs) throw ValidationError("random_structural_attack: more flips than node pairs");

  auto decode = [n](std::uint64_t idx) {
    // Row-major index over pairs (u, v), u < v.
    std::size_t u = 0;
    std::uint64_t row_len = n - 1;
    while (idx >= row_len) {
      idx -= row_len;
      ++u;
      --row_len;
    }
    return std::pair<NodeId, NodeId>{u, u + 1 + static_cast<std::size_t>(idx)};
  };

  std::vector<std::uint64_t> chosen;
  if (2 * flips > pairs) {
    std::vector<std::uint64_t> all(pairs);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < flips; ++i) {
      std::uniform_int_distribution<std::uint64_t> pick(i, pairs - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    chosen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(flips));
  } else {
    std::unordered_set<std::uint64_t> seen;
    std::uniform_int_distribution<std::uint64_t> pick(0, pairs - 1);
    while (chosen.size() < flips) {
      const auto idx = pick(rng);
      if (seen.insert(idx).second) chosen.push_back(idx);
    }
  }

  std::vector<std::pair<NodeId, NodeId>> flipped;
  flipped.reserve(flips);
  for (auto idx : chosen) flipped.push_back(decode(idx));
  std::sort(flipped.begin(), flipped.end());
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::set_symmetric_difference(g.edges().begin(), g.edges().end(), flipped.begin(), flipped.end(),
                                std::back_inserter(edges));
  return Graph(n, edges);
}

struct AttackSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation across trials
  std::vector<double> trials;
};

// Test-mask accuracy under a freshly drawn attack per trial. Trial t uses the
// stream (spec.seed, t), so results do not depend on `threads`.
inline AttackSummary attacked_accuracy(const Model& model, const Dataset& ds, const AttackSpec& spec,
                                       int trials, std::size_t threads = 1) {
  spec.validate();
  if (trials < 1) throw ValidationError("attacked_accuracy: trials must be >= 1");
  if (ds.test.empty()) throw ValidationError("attacked_accuracy: empty test mask");
  const auto op = propagation_operator(model, ds.graph);
  AttackSummary s;
  s.trials.resize(static_cast<std::size_t>(trials));
  parallel_for(s.trials.size(), threads, [&](std::size_t t) {
    Rng rng = substream(spec.seed, {0xa77ac, t});
    switch (spec.kind) {
      case AttackKind::random_feature: {
        const auto xt = random_feature_attack(ds.features.values, spec, rng);
        s.trials[t] = accuracy_of(forward(model, op, xt).logits, ds.labels, ds.test);
        break;
      }
      case AttackKind::pgd_feature: {
        const auto xt = pgd_feature_attack(model, ds, spec, rng);
        s.trials[t] = accuracy_of(forward(model, op, xt).logits, ds.labels, ds.test);
        break;
      }
      case AttackKind::random_structural: {
        const auto gt = random_structural_attack(ds.graph, spec.flip_budget, rng);
        const auto opt = propagation_operator(model, gt);
        s.trials[t] = accuracy_of(forward(model, opt, ds.features.values).logits, ds.labels, ds.test);
        break;
      }
    }
  });
  s.mean = std::accumulate(s.trials.begin(), s.trials.end(), 0.0) / trials;
  if (trials > 1) {
    double ss = 0.0;
    for (double a : s.trials) ss += (a - s.mean) * (a - s.mean);
    s.stddev = std::sqrt(ss / (trials - 1));
  }
  return s;
}

}  // namespace gcorn
