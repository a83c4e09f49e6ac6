#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gcorn/errors.hpp"
#include "gcorn/graph.hpp"
#include "gcorn/matrix.hpp"
#include "gcorn/nn.hpp"
#include "gcorn/ortho.hpp"

namespace gcorn {

enum class NormChoice { one, infinity, two };
enum class DistanceKind { feature, structural, combined };

inline std::string to_string(NormChoice n) {
  switch (n) {
    case NormChoice::one: return "one";
    case NormChoice::infinity: return "infinity";
    case NormChoice::two: return "two";
  }
  return "?";
}

inline std::string to_string(DistanceKind d) {
  switch (d) {
    case DistanceKind::feature: return "feature";
    case DistanceKind::structural: return "structural";
    case DistanceKind::combined: return "combined";
  }
  return "?";
}

// Power-iteration settings for norms that enter a bound. Tight, since an
// underestimate would weaken the bound.
inline constexpr int kBoundPowerIters = 2000;
inline constexpr double kBoundPowerTol = 1e-13;

// one: max absolute column sum; infinity: max absolute row sum; two: spectral norm.
inline double matrix_norm(const DenseMatrix& w, NormChoice which) {
  switch (which) {
    case NormChoice::one: {
      std::vector<double> col(w.cols(), 0.0);
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) col[j] += std::abs(w(i, j));
      return col.empty() ? 0.0 : *std::max_element(col.begin(), col.end());
    }
    case NormChoice::infinity: {
      double best = 0.0;
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        for (double v : w.row(i)) s += std::abs(v);
        best = std::max(best, s);
      }
      return best;
    }
    case NormChoice::two:
      return spectral_norm(w, kBoundPowerIters, kBoundPowerTol);
  }
  return 0.0;
}

// Norm of the map h -> h W on row vectors, i.e. of the operator W^T.
inline double layer_operator_norm(const DenseMatrix& w, NormChoice which) {
  return matrix_norm(transpose(w), which);
}

struct BoundQuery {
  double epsilon = 0.0;
  double sigma = 1.0;
  NormChoice norm_choice = NormChoice::infinity;
  std::optional<double> feature_bound;
  DistanceKind distance_kind = DistanceKind::feature;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ValidationError("bound: epsilon must be >= 0");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("bound: sigma must be > 0");
    if (feature_bound && !(*feature_bound > 0.0))
      throw ValidationError("bound: feature bound B must be > 0");
  }
};

struct BoundFactor {
  std::string name;
  double value = 0.0;
};

struct BoundReport {
  std::string theorem;
  double gamma = 0.0;
  std::vector<BoundFactor> factors;

  double factor(const std::string& name) const {
    for (const auto& f : factors)
      if (f.name == name) return f.value;
    throw ValidationError("bound report has no factor '" + name + "'");
  }
};

inline constexpr const char* kGcnFeatureOne = "gcn-feature-one";
inline constexpr const char* kGcnFeatureInf = "gcn-feature-infinity";
inline constexpr const char* kGcnStructural = "gcn-structural";
inline constexpr const char* kGinFeature = "gin-feature";
inline constexpr const char* kCombined = "combined";

// Evaluates gamma from the factor list alone.
inline double recompute_gamma(const BoundReport& r) {
  const double np = r.factor("norm_product");
  const double eps = r.factor("epsilon");
  const double sigma = r.factor("sigma");
  if (r.theorem == kGcnFeatureOne || r.theorem == kGcnFeatureInf)
    return np * eps * r.factor("walk_sum_aggregate") / sigma;
  if (r.theorem == kGcnStructural) {
    const double layers = r.factor("layers");
    return np * r.factor("feature_norm") * eps * (1.0 + layers * np) / sigma;
  }
  if (r.theorem == kGinFeature) {
    return np * (r.factor("feature_bound") * r.factor("layers") * r.factor("max_degree") + eps) /
           sigma;
  }
  if (r.theorem == kCombined) {
    const double ws = r.factor("walk_sum_total");
    const double layers = r.factor("layers");
    return np * (ws * ws + r.factor("feature_bound") * (1.0 + layers * np)) * eps / sigma;
  }
  throw ValidationError("unknown bound theorem '" + r.theorem + "'");
}

inline double norm_product(const std::vector<DenseMatrix>& weights, NormChoice which) {
  double p = 1.0;
  for (const auto& w : weights) p *= layer_operator_norm(w, which);
  return p;
}

namespace bounds_detail {
inline BoundReport finish(BoundReport r) {
  r.gamma = recompute_gamma(r);
  return r;
}
}  // namespace bounds_detail

// Feature-attack bound for GCNs over walks of length L-1 under the normalized
// adjacency. The one-norm variant aggregates the walk sums over all nodes, the
// infinity variant takes their maximum.
inline BoundReport gcn_feature_bound(const Model& model, const Graph& g, const BoundQuery& q) {
  q.validate();
  model.validate();
  if (model.kind != ModelKind::gcn) throw ValidationError("gcn_feature_bound: model is not a GCN");
  if (q.norm_choice == NormChoice::two)
    throw ValidationError("gcn_feature_bound: only the one and infinity norms are supported");
  const auto weights = effective_weights(model);
  const std::size_t L = weights.size();
  const auto adj = normalize_adjacency(g);
  const auto ws = walk_sums(adj, L - 1);
  const bool one = q.norm_choice == NormChoice::one;
  return bounds_detail::finish(BoundReport{
      one ? kGcnFeatureOne : kGcnFeatureInf,
      0.0,
      {{"norm_product", norm_product(weights, q.norm_choice)},
       {"walk_sum_aggregate", one ? ws.sum() : ws.max()},
       {"walk_length", static_cast<double>(L - 1)},
       {"layers", static_cast<double>(L)},
       {"epsilon", q.epsilon},
       {"sigma", q.sigma}}});
}

// Structural-attack bound; |X|_2 is the spectral norm of the feature matrix.
inline BoundReport gcn_structural_bound(const Model& model, const DenseMatrix& x, const BoundQuery& q) {
  q.validate();
  model.validate();
  if (model.kind != ModelKind::gcn) throw ValidationError("gcn_structural_bound: model is not a GCN");
  if (q.norm_choice != NormChoice::two)
    throw ValidationError("gcn_structural_bound: requires the two-norm");
  if (x.empty()) throw ValidationError("gcn_structural_bound: missing features");
  const auto weights = effective_weights(model);
  return bounds_detail::finish(BoundReport{
      kGcnStructural,
      0.0,
      {{"norm_product", norm_product(weights, NormChoice::two)},
       {"feature_norm", spectral_norm(x, kBoundPowerIters, kBoundPowerTol)},
       {"layers", static_cast<double>(weights.size())},
       {"epsilon", q.epsilon},
       {"sigma", q.sigma}}});
}

inline BoundReport gin_feature_bound(const Model& model, const Graph& g, const BoundQuery& q) {
  q.validate();
  model.validate();
  if (model.kind != ModelKind::gin) throw ValidationError("gin_feature_bound: model is not a GIN");
  if (model.gin_zeta != 0.0) throw ValidationError("gin_feature_bound: requires zeta = 0");
  if (!q.feature_bound) throw ValidationError("gin_feature_bound: feature bound B is required");
  const auto weights = effective_weights(model);
  return bounds_detail::finish(BoundReport{
      kGinFeature,
      0.0,
      {{"norm_product", norm_product(weights, NormChoice::infinity)},
       {"feature_bound", *q.feature_bound},
       {"layers", static_cast<double>(weights.size())},
       {"max_degree", static_cast<double>(max_degree(g))},
       {"epsilon", q.epsilon},
       {"sigma", q.sigma}}});
}

// Joint structural + feature bound, spectral norms throughout.
inline BoundReport combined_bound(const Model& model, const Graph& g, const BoundQuery& q) {
  q.validate();
  model.validate();
  if (model.kind != ModelKind::gcn) throw ValidationError("combined_bound: model is not a GCN");
  if (!q.feature_bound) throw ValidationError("combined_bound: feature bound B is required");
  const auto weights = effective_weights(model);
  const std::size_t L = weights.size();
  const auto ws = walk_sums(normalize_adjacency(g), L - 1);
  return bounds_detail::finish(BoundReport{
      kCombined,
      0.0,
      {{"norm_product", norm_product(weights, NormChoice::two)},
       {"walk_sum_total", ws.sum()},
       {"walk_length", static_cast<double>(L - 1)},
       {"feature_bound", *q.feature_bound},
       {"layers", static_cast<double>(L)},
       {"epsilon", q.epsilon},
       {"sigma", q.sigma}}});
}

// Dispatches on the query's distance kind and the model kind.
inline BoundReport compute_bound(const Model& model, const Dataset& ds, const BoundQuery& q) {
  switch (q.distance_kind) {
    case DistanceKind::feature:
      return model.kind == ModelKind::gin ? gin_feature_bound(model, ds.graph, q)
                                          : gcn_feature_bound(model, ds.graph, q);
    case DistanceKind::structural:
      return gcn_structural_bound(model, ds.features.values, q);
    case DistanceKind::combined:
      return combined_bound(model, ds.graph, q);
  }
  throw ValidationError("unknown distance kind");
}

struct ConvertedGuarantee {
  double epsilon = 0.0;
  double gamma = 0.0;
  std::string note;
};

// Transfers a guarantee stated for the feature L2 distance to an L_p distance
// (p > 2, including infinity) or to the L1 distance, for feature dimension K.
inline ConvertedGuarantee convert_norm_guarantee(double gamma, double epsilon, double to_p,
                                                 std::size_t K) {
  if (K < 1) throw ValidationError("convert_norm_guarantee: K must be >= 1");
  const double k = static_cast<double>(K);
  if (to_p > 2.0) return {epsilon / std::sqrt(k), gamma, ""};
  if (to_p == 1.0) {
    return {epsilon / k, gamma * std::sqrt(k),
            "one-norm radius uses the 1/K constant (not 1/K^2)"};
  }
  throw ValidationError("convert_norm_guarantee: unsupported target norm p=" + std::to_string(to_p));
}

}  // namespace gcorn
