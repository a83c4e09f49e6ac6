#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcorn/errors.hpp"
#include "gcorn/graph.hpp"
#include "gcorn/matrix.hpp"
#include "gcorn/ortho.hpp"
#include "gcorn/rng.hpp"

namespace gcorn {

enum class ModelKind { gcn, gin };
enum class Activation { relu, identity };

inline std::string to_string(ModelKind k) { return k == ModelKind::gcn ? "gcn" : "gin"; }
inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

// Layer stack W^(1..L), each stored (in x out) and applied to node rows as
// h <- phi(P h W), with P the propagation operator of the model kind. When
// `readout` is set the last layer skips propagation (a linear readout).
struct Model {
  ModelKind kind = ModelKind::gcn;
  std::vector<DenseMatrix> layers;
  Activation activation = Activation::relu;
  bool readout = false;
  bool gcorn = false;
  OrthoConfig ortho;
  double gin_zeta = 0.0;

  std::size_t num_layers() const noexcept { return layers.size(); }
  std::size_t input_dim() const { return layers.front().rows(); }
  std::size_t output_dim() const { return layers.back().cols(); }
  bool propagates(std::size_t layer) const noexcept {
    return !(readout && layer + 1 == layers.size());
  }
  std::size_t propagation_count() const noexcept {
    return readout ? layers.size() - 1 : layers.size();
  }

  void validate() const {
    if (layers.empty()) throw ValidationError("model needs at least one layer");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].rows() == 0 || layers[l].cols() == 0)
        throw ValidationError("layer " + std::to_string(l + 1) + " has an empty dimension");
      if (l + 1 < layers.size() && layers[l].cols() != layers[l + 1].rows())
        throw DimensionError("layer " + std::to_string(l + 1) + " output does not match layer " +
                             std::to_string(l + 2) + " input");
      if (!layers[l].all_finite())
        throw ValidationError("layer " + std::to_string(l + 1) + " has non-finite weights");
    }
    if (!std::isfinite(gin_zeta)) throw ValidationError("gin zeta must be finite");
    ortho.validate();
  }

  friend bool operator==(const Model&, const Model&) = default;
};

// Architecture description used to create freshly initialized models.
struct ModelArch {
  ModelKind kind = ModelKind::gcn;
  std::vector<std::size_t> hidden{16, 16};
  bool readout = true;
  Activation activation = Activation::relu;
  bool gcorn = false;
  OrthoConfig ortho;
  double gin_zeta = 0.0;
};

// Glorot-uniform initialization.
inline Model initialize_model(const ModelArch& arch, std::size_t in_dim, std::size_t out_dim,
                              std::uint64_t seed) {
  Model m{arch.kind, {}, arch.activation, arch.readout, arch.gcorn, arch.ortho, arch.gin_zeta};
  std::vector<std::size_t> dims{in_dim};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  dims.push_back(out_dim);
  Rng rng = substream(seed, {0x1a7});
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseMatrix w(dims[l], dims[l + 1]);
    for (double& v : w.data()) v = u(rng);
    m.layers.push_back(std::move(w));
  }
  m.validate();
  return m;
}

// FNV-1a over the raw weight bits; used to detect stale forward caches.
inline std::uint64_t weight_fingerprint(const Model& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t x) {
    for (int b = 0; b < 8; ++b) {
      h ^= (x >> (8 * b)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& w : m.layers) {
    mix(w.rows());
    mix(w.cols());
    for (double v : w.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  mix(m.gcorn);
  return h;
}

// Propagation operator for the model kind: normalized adjacency for GCN,
// (1 + zeta) I + A for GIN.
inline SparseOperator propagation_operator(const Model& m, const Graph& g) {
  if (m.kind == ModelKind::gcn) return normalize_adjacency(g);
  return gin_operator(g, m.gin_zeta);
}

struct ForwardCache {
  std::uint64_t fingerprint = 0;
  const SparseOperator* op = nullptr;
  std::vector<DenseMatrix> inputs;       // h^(l-1) for every layer
  std::vector<DenseMatrix> preacts;      // P h^(l-1) W^(l)
  std::vector<DenseMatrix> weights;      // effective (possibly projected) weights
  std::vector<BjorckTrace> traces;       // filled when the model is GCORN
};

struct ForwardResult {
  DenseMatrix logits;
  ForwardCache cache;
};

struct EffectiveWeights {
  std::vector<DenseMatrix> weights;
  std::vector<BjorckTrace> traces;
};

inline EffectiveWeights effective_weights_traced(const Model& m) {
  EffectiveWeights ew;
  if (!m.gcorn) {
    ew.weights = m.layers;
    return ew;
  }
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto r = bjorck_project_traced(m.layers[l], m.ortho, std::to_string(l + 1));
    ew.weights.push_back(std::move(r.output));
    ew.traces.push_back(std::move(r.trace));
  }
  return ew;
}

// Weights as used by the forward pass: Björck-projected for GCORN models.
inline std::vector<DenseMatrix> effective_weights(const Model& m) {
  return effective_weights_traced(m).weights;
}

// Generic forward over a prebuilt propagation operator. `op` must outlive the
// returned cache if backward is called.
inline ForwardResult forward(const Model& m, const SparseOperator& op, const DenseMatrix& x) {
  if (m.layers.empty()) throw ValidationError("forward: model has no layers");
  if (x.cols() != m.input_dim())
    throw DimensionError("forward: feature dim " + std::to_string(x.cols()) +
                         " does not match model input " + std::to_string(m.input_dim()));
  if (x.rows() != op.size()) throw DimensionError("forward: feature rows do not match graph");

  ForwardResult res;
  auto& c = res.cache;
  c.fingerprint = weight_fingerprint(m);
  c.op = &op;
  auto ew = effective_weights_traced(m);
  c.weights = std::move(ew.weights);
  c.traces = std::move(ew.traces);

  DenseMatrix h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    DenseMatrix z = matmul(h, c.weights[l]);
    if (m.propagates(l)) z = op.apply(z);
    c.inputs.push_back(std::move(h));
    const bool last = l + 1 == m.layers.size();
    h = z;
    if (!last && m.activation == Activation::relu)
      for (double& v : h.data()) v = std::max(0.0, v);
    c.preacts.push_back(std::move(z));
  }
  res.logits = std::move(h);
  return res;
}

inline ForwardResult gcn_forward(const Model& m, const NormalizedAdjacency& adj, const DenseMatrix& x) {
  if (m.kind != ModelKind::gcn) throw ValidationError("gcn_forward: model is not a GCN");
  return forward(m, adj, x);
}

// The GIN operator is built internally and owned by the returned holder.
struct GinForward {
  std::unique_ptr<SparseOperator> op;
  ForwardResult result;
};

inline GinForward gin_forward(const Model& m, const Graph& g, const DenseMatrix& x) {
  if (m.kind != ModelKind::gin) throw ValidationError("gin_forward: model is not a GIN");
  GinForward out{std::make_unique<SparseOperator>(gin_operator(g, m.gin_zeta)), {}};
  out.result = forward(m, *out.op, x);
  return out;
}

struct Gradients {
  std::vector<DenseMatrix> weights;  // w.r.t. raw (unprojected) layer weights
  DenseMatrix features;
};

inline Gradients backward(const Model& m, const ForwardCache& c, const DenseMatrix& loss_grad) {
  if (c.fingerprint != weight_fingerprint(m) || c.inputs.size() != m.layers.size())
    throw ValidationError("backward: stale forward cache");
  if (!loss_grad.same_shape(c.preacts.back()))
    throw DimensionError("backward: upstream gradient shape mismatch");

  Gradients g;
  g.weights.resize(m.layers.size());
  DenseMatrix dz = loss_grad;
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    DenseMatrix t = m.propagates(l) ? c.op->apply(dz) : std::move(dz);
    g.weights[l] = matmul_tn(c.inputs[l], t);
    DenseMatrix dh = matmul_nt(t, c.weights[l]);
    if (l == 0) {
      g.features = std::move(dh);
      break;
    }
    if (m.activation == Activation::relu) {
      const auto& z = c.preacts[l - 1];
      for (std::size_t i = 0; i < dh.size(); ++i)
        if (!(z.data()[i] > 0.0)) dh.data()[i] = 0.0;
    }
    dz = std::move(dh);
  }
  if (m.gcorn) {
    for (std::size_t l = 0; l < m.layers.size(); ++l)
      g.weights[l] = bjorck_backward(c.traces[l], g.weights[l], m.ortho);
  }
  return g;
}

inline DenseMatrix softmax_rows(const DenseMatrix& logits) {
  DenseMatrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    auto out = p.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s += (out[j] = std::exp(r[j] - mx));
    for (double& v : out) v /= s;
  }
  return p;
}

struct LossResult {
  double loss = 0.0;
  DenseMatrix grad;  // d loss / d logits
};

// Mean cross-entropy over `mask`.
inline LossResult cross_entropy(const DenseMatrix& logits, std::span<const int> labels,
                                std::span<const NodeId> mask) {
  if (mask.empty()) throw ValidationError("cross_entropy: empty mask");
  LossResult r{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const double w = 1.0 / static_cast<double>(mask.size());
  for (NodeId u : mask) {
    const auto row = logits.row(u);
    const int y = labels[u];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw ValidationError("cross_entropy: label out of range at node " + std::to_string(u));
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    r.loss += w * (lse - row[static_cast<std::size_t>(y)]);
    auto g = r.grad.row(u);
    for (std::size_t j = 0; j < row.size(); ++j) g[j] = w * std::exp(row[j] - lse);
    g[static_cast<std::size_t>(y)] -= w;
  }
  return r;
}

// Argmax per row, ties to the lowest index.
inline std::vector<int> predict(const DenseMatrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

inline double accuracy_of(const DenseMatrix& logits, std::span<const int> labels,
                          std::span<const NodeId> mask) {
  if (mask.empty()) throw ValidationError("accuracy: empty mask");
  std::size_t hit = 0;
  for (NodeId u : mask) {
    const auto r = logits.row(u);
    const int pred = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    hit += pred == labels[u];
  }
  return static_cast<double>(hit) / static_cast<double>(mask.size());
}

inline double accuracy(const Model& m, const Dataset& ds, std::span<const NodeId> mask) {
  const auto op = propagation_operator(m, ds.graph);
  return accuracy_of(forward(m, op, ds.features.values).logits, ds.labels, mask);
}

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-2;
  std::size_t hidden = 16;
  std::uint64_t seed = 0;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("train.lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be >= 0");
    if (hidden < 1) throw ValidationError("train.hidden must be >= 1");
  }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

// Full-batch Adam on the train-mask cross-entropy. GCORN models differentiate
// through the Björck iterations on every step.
inline TrainResult train(Model model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  ds.validate();
  if (ds.train.empty()) throw ValidationError("train: empty train mask");
  const auto op = propagation_operator(model, ds.graph);

  std::vector<DenseMatrix> m1, m2;
  for (const auto& w : model.layers) {
    m1.emplace_back(w.rows(), w.cols());
    m2.emplace_back(w.rows(), w.cols());
  }
  TrainResult out;
  out.history.reserve(static_cast<std::size_t>(cfg.epochs));
  double b1t = 1.0, b2t = 1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto fw = forward(model, op, ds.features.values);
    auto loss = cross_entropy(fw.logits, ds.labels, ds.train);
    if (!std::isfinite(loss.loss))
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                            ": loss is not finite");
    const double val_acc = ds.val.empty() ? 0.0 : accuracy_of(fw.logits, ds.labels, ds.val);
    out.history.push_back({epoch, loss.loss, val_acc});

    auto grads = backward(model, fw.cache, loss.grad);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      auto& w = model.layers[l].data();
      const auto& g = grads.weights[l].data();
      auto& a = m1[l].data();
      auto& b = m2[l].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + cfg.weight_decay * w[i];
        a[i] = cfg.beta1 * a[i] + (1 - cfg.beta1) * gi;
        b[i] = cfg.beta2 * b[i] + (1 - cfg.beta2) * gi * gi;
        const double mhat = a[i] / (1 - b1t);
        const double vhat = b[i] / (1 - b2t);
        w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
      if (!model.layers[l].all_finite())
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                              ": non-finite weights in layer " + std::to_string(l + 1));
    }
  }
  out.model = std::move(model);
  return out;
}

}  // namespace gcorn
