#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "gcorn/dataset_io.hpp"
#include "gcorn/errors.hpp"

namespace gcorn {

struct ConfigKey {
  const char* name;
  const char* fallback;
  const char* help;
};

// Every key accepted by config files and --set overrides.
inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys{
      {"seed", "0", "master seed"},
      {"threads", "1", "worker threads for attack trials and estimator samples"},
      {"data.dir", "", "dataset directory (edges.txt, features.csv, labels.csv, split.txt); empty generates an SBM"},
      {"data.normalize_features", "false", "L2-normalize feature rows after loading"},
      {"sbm.sizes", "150,150,150,150,150,150,150", "block sizes"},
      {"sbm.p_in", "0.035", "edge probability inside a block"},
      {"sbm.p_out", "0.0035", "edge probability across blocks"},
      {"sbm.dim", "32", "feature dimension"},
      {"sbm.separation", "2.5", "distance between block means"},
      {"sbm.noise_std", "1", "feature noise standard deviation"},
      {"sbm.normalize_rows", "false", "L2-normalize generated feature rows"},
      {"sbm.train_fraction", "0.5", "per-block share of train nodes"},
      {"sbm.val_fraction", "0.1", "per-block share of validation nodes"},
      {"model.path", "", "trained model file for project/bound/attack/estimate"},
      {"model.kind", "gcn", "gcn or gin"},
      {"model.hidden", "16,16", "hidden widths of the message-passing layers"},
      {"model.readout", "true", "append a linear readout without aggregation"},
      {"model.activation", "relu", "relu or identity"},
      {"model.gcorn", "false", "Björck-project weights in every forward pass"},
      {"model.gin_zeta", "0", "GIN self weight"},
      {"train.epochs", "300", "training epochs"},
      {"train.lr", "0.01", "Adam learning rate"},
      {"train.weight_decay", "0.0005", "L2 penalty"},
      {"ortho.order", "1", "Björck series order"},
      {"ortho.iterations", "15", "Björck iterations"},
      {"ortho.prescale", "true", "divide by the spectral norm estimate first"},
      {"ortho.power_iters", "50", "power iterations for the prescale"},
      {"ortho.power_tol", "1e-6", "power iteration tolerance"},
      {"attack.kind", "random_feature", "random_feature, pgd_feature or random_structural"},
      {"attack.psi", "1", "Gaussian noise scale"},
      {"attack.epsilon", "0.5", "PGD per-row radius"},
      {"attack.rate", "0.15", "PGD share of rows that may change"},
      {"attack.flip_budget", "0.1", "structural flips as a share of |E|"},
      {"attack.steps", "40", "PGD steps"},
      {"attack.step_size", "", "PGD step; empty means 2.5 * epsilon / steps"},
      {"attack.p", "inf", "PGD ball norm: 1, 2 or inf"},
      {"attack.trials", "10", "independent attack draws"},
      {"estimate.epsilon", "10", "ball radius"},
      {"estimate.sweep", "", "comma list of radii for the sweep CSV; empty uses estimate.epsilon"},
      {"estimate.l_max", "100", "samples per graph"},
      {"estimate.p", "2", "row norm of the ball"},
      {"estimate.sigma", "0.5", "output distance threshold"},
      {"estimate.alpha", "0.05", "confidence for the sample-size bound"},
      {"estimate.r_ratio", "0.5", "sub-ball ratio for the sample-size bound"},
      {"bound.epsilon", "0.1", "attack budget"},
      {"bound.sigma", "1", "output threshold"},
      {"bound.norm", "infinity", "one, infinity or two"},
      {"bound.distance", "feature", "feature, structural or combined"},
      {"bound.feature_bound", "", "B with row norms of X <= B; empty derives it from the data"},
  };
  return keys;
}

// Flat dotted-key configuration. Files hold `key = value` lines with '#'
// comments; later assignments win, so flags applied after the file override it.
class Config {
 public:
  Config() {
    for (const auto& k : config_schema()) values_[k.name] = k.fallback;
  }

  static bool known(std::string_view key) {
    const auto& s = config_schema();
    return std::any_of(s.begin(), s.end(), [&](const ConfigKey& k) { return key == k.name; });
  }

  void set(std::string_view key, std::string_view value, const std::string& origin = "") {
    if (!known(key))
      throw ConfigError("unknown config key '" + std::string(key) + "'" + (origin.empty() ? "" : " at " + origin));
    values_[std::string(key)] = std::string(io_detail::trim(value));
    explicit_.insert(std::string(key));
  }

  // Parses "key=value" as given to --set.
  void set_assignment(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
    set(io_detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1), "--set");
  }

  void load_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    const auto lines = io_detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string_view line = lines[i];
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = io_detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = path.string() + ":" + std::to_string(i + 1);
      if (eq == std::string_view::npos) throw ConfigError("expected 'key = value' at " + where);
      set(io_detail::trim(line.substr(0, eq)), line.substr(eq + 1), where);
    }
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  bool empty(const std::string& key) const { return str(key).empty(); }

  double real(const std::string& key) const {
    const auto v = io_detail::parse_double(str(key));
    if (!v) throw ConfigError(key + ": expected a number, got '" + str(key) + "'");
    return *v;
  }

  long long integer(const std::string& key) const {
    const auto v = io_detail::parse_int(str(key));
    if (!v) throw ConfigError(key + ": expected an integer, got '" + str(key) + "'");
    return *v;
  }

  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError(key + ": must be >= 0");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    if (empty(key)) return out;
    for (auto part : io_detail::split(str(key), ',')) {
      const auto v = io_detail::parse_double(part);
      if (!v) throw ConfigError(key + ": bad list entry '" + std::string(part) + "'");
      out.push_back(*v);
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    if (empty(key)) return out;
    for (auto part : io_detail::split(str(key), ',')) {
      const auto v = io_detail::parse_int(part);
      if (!v || *v < 0) throw ConfigError(key + ": bad list entry '" + std::string(part) + "'");
      out.push_back(static_cast<std::size_t>(*v));
    }
    return out;
  }

  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace gcorn
