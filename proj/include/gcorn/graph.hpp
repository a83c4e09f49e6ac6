#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcorn/errors.hpp"
#include "gcorn/matrix.hpp"
#include "gcorn/rng.hpp"

namespace gcorn {

using NodeId = std::size_t;

// Simple undirected graph. Edges are deduplicated, self-loops are rejected and
// neighbor lists are kept sorted in CSR form.
class Graph {
 public:
  Graph() = default;

  explicit Graph(std::size_t n, std::span<const std::pair<NodeId, NodeId>> edges = {}) : n_(n) {
    std::vector<std::pair<NodeId, NodeId>> canon;
    canon.reserve(edges.size());
    for (auto [u, v] : edges) {
      if (u >= n || v >= n) {
        throw IndexError("Graph: edge (" + std::to_string(u) + "," + std::to_string(v) +
                         ") out of range for n=" + std::to_string(n));
      }
      if (u == v) throw ValidationError("Graph: self-loop on node " + std::to_string(u));
      canon.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(canon.begin(), canon.end());
    canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
    edges_ = std::move(canon);

    std::vector<std::size_t> deg(n, 0);
    for (auto [u, v] : edges_) {
      ++deg[u];
      ++deg[v];
    }
    offsets_.assign(n + 1, 0);
    for (std::size_t u = 0; u < n; ++u) offsets_[u + 1] = offsets_[u] + deg[u];
    neighbors_.resize(offsets_[n]);
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (auto [u, v] : edges_) {
      neighbors_[fill[u]++] = v;
      neighbors_[fill[v]++] = u;
    }
    for (std::size_t u = 0; u < n; ++u) {
      std::sort(neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[u]),
                neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[u + 1]));
    }
  }

  std::size_t num_nodes() const noexcept { return n_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }

  // Canonical edge list, u < v, sorted.
  const std::vector<std::pair<NodeId, NodeId>>& edges() const noexcept { return edges_; }

  std::span<const NodeId> neighbors(NodeId u) const noexcept {
    return {neighbors_.data() + offsets_[u], offsets_[u + 1] - offsets_[u]};
  }
  std::size_t degree(NodeId u) const noexcept { return offsets_[u + 1] - offsets_[u]; }

  bool has_edge(NodeId u, NodeId v) const noexcept {
    if (u >= n_ || v >= n_) return false;
    const auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> neighbors_;
};

inline std::size_t max_degree(const Graph& g) {
  std::size_t d = 0;
  for (NodeId u = 0; u < g.num_nodes(); ++u) d = std::max(d, g.degree(u));
  return d;
}

struct FeatureMatrix {
  DenseMatrix values;
  bool row_normalized = false;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
};

// Scale every nonzero row to unit L2 norm.
inline void normalize_rows(FeatureMatrix& x) {
  for (std::size_t i = 0; i < x.values.rows(); ++i) {
    auto r = x.values.row(i);
    const double nrm = norm2(r);
    if (nrm > 0.0)
      for (double& v : r) v /= nrm;
  }
  x.row_normalized = true;
}

struct Dataset {
  Graph graph;
  FeatureMatrix features;
  std::vector<int> labels;  // -1 marks an unlabeled node
  int num_classes = 0;
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;

  std::size_t num_nodes() const noexcept { return graph.num_nodes(); }

  void validate() const {
    const std::size_t n = graph.num_nodes();
    if (features.rows() != n)
      throw ValidationError("Dataset: feature rows do not match node count");
    if (labels.size() != n) throw ValidationError("Dataset: label count does not match node count");
    for (int y : labels) {
      if (y >= num_classes || y < -1) throw ValidationError("Dataset: label out of range");
    }
    std::vector<char> seen(n, 0);
    for (const auto* mask : {&train, &val, &test}) {
      for (NodeId u : *mask) {
        if (u >= n) throw IndexError("Dataset: mask index " + std::to_string(u) + " out of range");
        if (seen[u]) throw ValidationError("Dataset: masks overlap at node " + std::to_string(u));
        if (labels[u] < 0)
          throw ValidationError("Dataset: mask references unlabeled node " + std::to_string(u));
        seen[u] = 1;
      }
    }
  }
};

// Square sparse operator in CSR form.
class SparseOperator {
 public:
  SparseOperator() = default;
  SparseOperator(std::size_t n, std::vector<std::size_t> offsets, std::vector<NodeId> cols,
                 std::vector<double> values)
      : n_(n), offsets_(std::move(offsets)), cols_(std::move(cols)), values_(std::move(values)) {}

  std::size_t size() const noexcept { return n_; }
  std::size_t nonzeros() const noexcept { return values_.size(); }

  // Stored value at (u, v), zero when absent.
  double at(NodeId u, NodeId v) const noexcept {
    const auto b = cols_.begin() + static_cast<std::ptrdiff_t>(offsets_[u]);
    const auto e = cols_.begin() + static_cast<std::ptrdiff_t>(offsets_[u + 1]);
    const auto it = std::lower_bound(b, e, v);
    if (it == e || *it != v) return 0.0;
    return values_[static_cast<std::size_t>(it - cols_.begin())];
  }

  template <typename F>
  void for_each_in_row(NodeId u, F&& f) const {
    for (std::size_t k = offsets_[u]; k < offsets_[u + 1]; ++k) f(cols_[k], values_[k]);
  }

  std::vector<double> apply(std::span<const double> x) const {
    if (x.size() != n_) throw DimensionError("SparseOperator::apply: size mismatch");
    std::vector<double> y(n_, 0.0);
    for (std::size_t u = 0; u < n_; ++u) {
      double s = 0.0;
      for (std::size_t k = offsets_[u]; k < offsets_[u + 1]; ++k) s += values_[k] * x[cols_[k]];
      y[u] = s;
    }
    return y;
  }

  DenseMatrix apply(const DenseMatrix& x) const {
    if (x.rows() != n_) throw DimensionError("SparseOperator::apply: row mismatch");
    DenseMatrix y(n_, x.cols());
    for (std::size_t u = 0; u < n_; ++u) {
      double* yu = y.row(u).data();
      for (std::size_t k = offsets_[u]; k < offsets_[u + 1]; ++k) {
        const double a = values_[k];
        const double* xv = x.row(cols_[k]).data();
        for (std::size_t j = 0; j < x.cols(); ++j) yu[j] += a * xv[j];
      }
    }
    return y;
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(n_, n_);
    for (std::size_t u = 0; u < n_; ++u)
      for_each_in_row(u, [&](NodeId v, double a) { d(u, v) = a; });
    return d;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> cols_;
  std::vector<double> values_;
};

// Builds the operator diag_value * I + off_value(u, v) * A over the graph's
// sparsity pattern, rows sorted by column.
template <typename Diag, typename Off>
SparseOperator build_operator(const Graph& g, Diag&& diag_value, Off&& off_value) {
  const std::size_t n = g.num_nodes();
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<NodeId> cols;
  std::vector<double> values;
  cols.reserve(n + 2 * g.num_edges());
  values.reserve(n + 2 * g.num_edges());
  for (NodeId u = 0; u < n; ++u) {
    bool diag_done = false;
    for (NodeId v : g.neighbors(u)) {
      if (!diag_done && v > u) {
        cols.push_back(u);
        values.push_back(diag_value(u));
        diag_done = true;
      }
      cols.push_back(v);
      values.push_back(off_value(u, v));
    }
    if (!diag_done) {
      cols.push_back(u);
      values.push_back(diag_value(u));
    }
    offsets[u + 1] = cols.size();
  }
  return SparseOperator(n, std::move(offsets), std::move(cols), std::move(values));
}

// Self-loop renormalized adjacency: entries 1/sqrt((1+d_u)(1+d_v)) on N(u) ∪ {u}.
class NormalizedAdjacency : public SparseOperator {
 public:
  NormalizedAdjacency() = default;
  explicit NormalizedAdjacency(SparseOperator op) : SparseOperator(std::move(op)) {}
};

inline NormalizedAdjacency normalize_adjacency(const Graph& g) {
  auto weight = [&g](NodeId u, NodeId v) {
    return 1.0 / std::sqrt(static_cast<double>((1 + g.degree(u)) * (1 + g.degree(v))));
  };
  return NormalizedAdjacency(
      build_operator(g, [&](NodeId u) { return weight(u, u); }, weight));
}

// GIN aggregation operator (1 + zeta) I + A.
inline SparseOperator gin_operator(const Graph& g, double zeta) {
  return build_operator(
      g, [zeta](NodeId) { return 1.0 + zeta; }, [](NodeId, NodeId) { return 1.0; });
}

struct WalkSumVector {
  std::vector<double> values;
  std::size_t length = 0;

  double max() const noexcept {
    return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  }
  double sum() const noexcept { return std::accumulate(values.begin(), values.end(), 0.0); }
};

// Row sums of adj^m, by m matrix-vector products against the ones vector.
inline WalkSumVector walk_sums(const SparseOperator& adj, std::size_t m) {
  WalkSumVector w{std::vector<double>(adj.size(), 1.0), m};
  for (std::size_t step = 0; step < m; ++step) w.values = adj.apply(w.values);
  return w;
}

struct SbmFeatureModel {
  std::size_t dim = 16;
  // Distance between any two block means, in units of noise_std.
  double separation = 3.0;
  double noise_std = 1.0;
};

struct SbmConfig {
  std::vector<std::size_t> sizes{20, 20};
  double p_in = 0.5;
  double p_out = 0.05;
  SbmFeatureModel features;
  bool normalize_rows = false;
  double train_fraction = 0.1;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

// Stochastic block model with block-conditional Gaussian features. Block b has
// mean (separation * noise_std / sqrt 2) e_b, so any two means are separation
// standard deviations apart. Splits are stratified per block.
inline Dataset generate_sbm(const SbmConfig& cfg) {
  auto check_prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0))
      throw ValidationError(std::string("generate_sbm: ") + name + " must lie in [0,1]");
  };
  check_prob(cfg.p_in, "p_in");
  check_prob(cfg.p_out, "p_out");
  if (cfg.sizes.empty()) throw ValidationError("generate_sbm: no blocks");
  if (cfg.features.dim < cfg.sizes.size())
    throw ValidationError("generate_sbm: feature dim must be at least the block count");
  if (!(cfg.features.noise_std >= 0.0)) throw ValidationError("generate_sbm: negative noise_std");
  if (cfg.train_fraction < 0 || cfg.val_fraction < 0 || cfg.train_fraction + cfg.val_fraction > 1)
    throw ValidationError("generate_sbm: invalid split fractions");

  Rng rng = substream(cfg.seed, {0x5b3});
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<int> labels;
  for (std::size_t b = 0; b < cfg.sizes.size(); ++b)
    labels.insert(labels.end(), cfg.sizes[b], static_cast<int>(b));
  const std::size_t n = labels.size();

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? cfg.p_in : cfg.p_out;
      if (unif(rng) < p) edges.emplace_back(u, v);
    }
  }

  const auto& fm = cfg.features;
  const double offset = fm.separation * fm.noise_std / std::sqrt(2.0);
  FeatureMatrix x{DenseMatrix(n, fm.dim)};
  for (NodeId u = 0; u < n; ++u) {
    auto r = x.values.row(u);
    for (double& v : r) v = fm.noise_std * standard_normal(rng);
    r[static_cast<std::size_t>(labels[u])] += offset;
  }
  if (cfg.normalize_rows) normalize_rows(x);

  Dataset ds{Graph(n, edges), std::move(x), labels, static_cast<int>(cfg.sizes.size()), {}, {}, {}};
  std::size_t start = 0;
  for (std::size_t b = 0; b < cfg.sizes.size(); ++b) {
    std::vector<NodeId> members(cfg.sizes[b]);
    std::iota(members.begin(), members.end(), start);
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::ceil(cfg.train_fraction * members.size()));
    const auto n_val = std::min(members.size() - n_train,
                                static_cast<std::size_t>(std::ceil(cfg.val_fraction * members.size())));
    ds.train.insert(ds.train.end(), members.begin(), members.begin() + n_train);
    ds.val.insert(ds.val.end(), members.begin() + n_train, members.begin() + n_train + n_val);
    ds.test.insert(ds.test.end(), members.begin() + n_train + n_val, members.end());
    start += cfg.sizes[b];
  }
  for (auto* mask : {&ds.train, &ds.val, &ds.test}) std::sort(mask->begin(), mask->end());
  ds.validate();
  return ds;
}

}  // namespace gcorn
