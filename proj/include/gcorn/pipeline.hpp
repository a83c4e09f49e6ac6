#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gcorn/attacks.hpp"
#include "gcorn/bounds.hpp"
#include "gcorn/config.hpp"
#include "gcorn/dataset_io.hpp"
#include "gcorn/estimator.hpp"
#include "gcorn/model_io.hpp"
#include "gcorn/nn.hpp"
#include "gcorn/ortho.hpp"

namespace gcorn {

inline constexpr const char* kToolVersion = "1.0.0";

// Typed view of a Config.
struct Settings {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path data_dir;
  bool normalize_features = false;
  SbmConfig sbm;
  std::filesystem::path model_path;
  ModelArch arch;
  TrainConfig train;
  AttackSpec attack;
  int trials = 10;
  SampleConfig sample;
  std::vector<double> sweep;
  BoundQuery bound;
};

namespace pipeline_detail {

template <typename E>
E parse_choice(const Config& c, const std::string& key, std::initializer_list<std::pair<const char*, E>> opts) {
  const auto& v = c.str(key);
  std::string names;
  for (const auto& [name, value] : opts) {
    if (v == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(key + ": expected one of " + names + ", got '" + v + "'");
}

template <typename Fn>
void rethrow_as_config(Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

inline std::string csv_double(double v) { return io_detail::format_double(v); }

inline Json json_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace pipeline_detail

inline Settings settings_from(const Config& c) {
  using namespace pipeline_detail;
  Settings s;
  s.seed = static_cast<std::uint64_t>(c.integer("seed"));
  s.threads = std::max<std::size_t>(1, c.count("threads"));
  s.data_dir = c.str("data.dir");
  s.normalize_features = c.flag("data.normalize_features");

  s.sbm.sizes = c.counts("sbm.sizes");
  s.sbm.p_in = c.real("sbm.p_in");
  s.sbm.p_out = c.real("sbm.p_out");
  s.sbm.features.dim = c.count("sbm.dim");
  s.sbm.features.separation = c.real("sbm.separation");
  s.sbm.features.noise_std = c.real("sbm.noise_std");
  s.sbm.normalize_rows = c.flag("sbm.normalize_rows");
  s.sbm.train_fraction = c.real("sbm.train_fraction");
  s.sbm.val_fraction = c.real("sbm.val_fraction");
  s.sbm.seed = s.seed;

  s.model_path = c.str("model.path");
  s.arch.kind = parse_choice<ModelKind>(c, "model.kind", {{"gcn", ModelKind::gcn}, {"gin", ModelKind::gin}});
  s.arch.hidden = c.counts("model.hidden");
  s.arch.readout = c.flag("model.readout");
  s.arch.activation = parse_choice<Activation>(
      c, "model.activation", {{"relu", Activation::relu}, {"identity", Activation::identity}});
  s.arch.gcorn = c.flag("model.gcorn");
  s.arch.gin_zeta = c.real("model.gin_zeta");
  s.arch.ortho.order = static_cast<int>(c.integer("ortho.order"));
  s.arch.ortho.iterations = static_cast<int>(c.integer("ortho.iterations"));
  s.arch.ortho.prescale = c.flag("ortho.prescale");
  s.arch.ortho.power_iters = static_cast<int>(c.integer("ortho.power_iters"));
  s.arch.ortho.power_tol = c.real("ortho.power_tol");

  s.train.epochs = static_cast<int>(c.integer("train.epochs"));
  s.train.learning_rate = c.real("train.lr");
  s.train.weight_decay = c.real("train.weight_decay");
  s.train.seed = s.seed;
  if (!s.arch.hidden.empty()) s.train.hidden = s.arch.hidden.front();

  s.attack.kind = parse_choice<AttackKind>(c, "attack.kind",
                                           {{"random_feature", AttackKind::random_feature},
                                            {"pgd_feature", AttackKind::pgd_feature},
                                            {"random_structural", AttackKind::random_structural}});
  s.attack.psi = c.real("attack.psi");
  s.attack.epsilon = c.real("attack.epsilon");
  s.attack.rate = c.real("attack.rate");
  s.attack.flip_budget = c.real("attack.flip_budget");
  s.attack.steps = static_cast<int>(c.integer("attack.steps"));
  if (!c.empty("attack.step_size")) s.attack.step_size = c.real("attack.step_size");
  s.attack.norm_order = c.real("attack.p");
  s.attack.seed = s.seed;
  s.trials = static_cast<int>(c.integer("attack.trials"));

  s.sample.epsilon = c.real("estimate.epsilon");
  s.sample.l_max = c.count("estimate.l_max");
  s.sample.p = c.real("estimate.p");
  s.sample.sigma = c.real("estimate.sigma");
  s.sample.alpha = c.real("estimate.alpha");
  s.sample.r_ratio = c.real("estimate.r_ratio");
  s.sample.seed = s.seed;
  s.sweep = c.reals("estimate.sweep");
  if (s.sweep.empty()) s.sweep = {s.sample.epsilon};

  s.bound.epsilon = c.real("bound.epsilon");
  s.bound.sigma = c.real("bound.sigma");
  s.bound.norm_choice = parse_choice<NormChoice>(
      c, "bound.norm", {{"one", NormChoice::one}, {"infinity", NormChoice::infinity}, {"two", NormChoice::two}});
  s.bound.distance_kind = parse_choice<DistanceKind>(c, "bound.distance",
                                                     {{"feature", DistanceKind::feature},
                                                      {"structural", DistanceKind::structural},
                                                      {"combined", DistanceKind::combined}});
  if (!c.empty("bound.feature_bound")) s.bound.feature_bound = c.real("bound.feature_bound");

  rethrow_as_config([&] {
    s.arch.ortho.validate();
    s.train.validate();
    s.attack.validate();
    s.sample.validate();
    s.bound.validate();
  });
  if (s.trials < 1) throw ConfigError("attack.trials must be >= 1");
  for (double e : s.sweep)
    if (!(e > 0.0)) throw ConfigError("estimate.sweep entries must be > 0");
  return s;
}

// Fails with a config error naming the first missing input.
inline void require_inputs(const Settings& s, bool needs_model) {
  if (!s.data_dir.empty()) {
    if (!std::filesystem::is_directory(s.data_dir))
      throw ConfigError("data.dir is not a directory: " + s.data_dir.string());
    const auto p = dataset_paths_in(s.data_dir);
    for (const auto* f : {&p.edges, &p.features, &p.labels, &p.split})
      if (!std::filesystem::exists(*f)) throw ConfigError("missing dataset file: " + f->string());
  }
  if (needs_model) {
    if (s.model_path.empty()) throw ConfigError("model.path is required for this command");
    if (!std::filesystem::exists(s.model_path))
      throw ConfigError("model file not found: " + s.model_path.string());
  }
}

inline Dataset obtain_dataset(const Settings& s) {
  if (!s.data_dir.empty()) return load_dataset(dataset_paths_in(s.data_dir), {s.normalize_features});
  Dataset ds;
  pipeline_detail::rethrow_as_config([&] { ds = generate_sbm(s.sbm); });
  return ds;
}

inline std::string dataset_name(const Settings& s) {
  return s.data_dir.empty() ? "sbm" : s.data_dir.filename().string();
}

inline std::string model_name(const Model& m) { return to_string(m.kind) + (m.gcorn ? "+gcorn" : ""); }

// Output directory with a manifest naming inputs, seed, version and the files written.
class RunOutput {
 public:
  RunOutput(std::filesystem::path dir, std::string command, const Config& cfg,
            std::optional<std::filesystem::path> config_file)
      : dir_(std::move(dir)), command_(std::move(command)), cfg_(cfg), config_file_(std::move(config_file)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  void write(const std::string& name, const std::string& content) {
    io_detail::write_file(dir_ / name, content);
    files_.push_back(name);
  }
  void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }
  void note(const std::string& step) { steps_.push_back(step); }
  void record(const std::string& name) { files_.push_back(name); }

  void finish(const Error* error = nullptr) const {
    Json m;
    m["tool"] = "gcorn";
    m["version"] = kToolVersion;
    m["command"] = command_;
    m["status"] = error ? "failed" : "ok";
    const auto seed = io_detail::parse_int(cfg_.str("seed"));
    m["seed"] = seed ? Json(*seed) : Json(cfg_.str("seed"));
    Json inputs;
    inputs["config_file"] = config_file_ ? Json(config_file_->string()) : Json(nullptr);
    inputs["data"] = cfg_.empty("data.dir") ? Json("sbm generator") : Json(cfg_.str("data.dir"));
    inputs["model"] = cfg_.empty("model.path") ? Json(nullptr) : Json(cfg_.str("model.path"));
    m["inputs"] = inputs;
    Json conf = Json::object();
    for (const auto& [k, v] : cfg_.values()) conf[k] = v;
    m["config"] = conf;
    m["completed_steps"] = steps_;
    m["outputs"] = files_;
    if (error) {
      m["error"] = {{"message", error->what()}, {"exit_code", static_cast<int>(error->exit_code())}};
    }
    io_detail::write_file(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::string command_;
  const Config& cfg_;
  std::optional<std::filesystem::path> config_file_;
  std::vector<std::string> files_;
  std::vector<std::string> steps_;
};

inline Json bound_to_json(const BoundReport& r) {
  Json j;
  j["theorem"] = r.theorem;
  j["gamma"] = r.gamma;
  Json f = Json::object();
  for (const auto& x : r.factors) f[x.name] = x.value;
  j["factors"] = f;
  return j;
}

inline Json estimate_to_json(const RobustnessEstimate& e) {
  using pipeline_detail::json_double;
  return {{"adv", e.adv},
          {"stderr", e.std_error},
          {"l_max", e.config.l_max},
          {"epsilon", e.config.epsilon},
          {"sigma", e.config.sigma},
          {"p", json_double(e.config.p)},
          {"samples", e.samples}};
}

// Feature bound B for the query: max row infinity-norm for the GIN feature
// bound, spectral norm of X for the combined bound.
inline BoundQuery resolve_bound_query(const Settings& s, const Model& m, const Dataset& ds) {
  BoundQuery q = s.bound;
  if (!q.feature_bound) {
    const auto& x = ds.features.values;
    if (q.distance_kind == DistanceKind::combined) {
      q.feature_bound = spectral_norm(x, kBoundPowerIters, kBoundPowerTol);
    } else if (m.kind == ModelKind::gin) {
      double b = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) b = std::max(b, lp_norm(x.row(i), std::numeric_limits<double>::infinity()));
      q.feature_bound = b;
    }
  }
  return q;
}

inline std::string training_curve_csv(const std::vector<EpochStats>& h) {
  std::ostringstream o;
  o << "epoch,loss,val_accuracy\n";
  for (const auto& e : h)
    o << e.epoch << ',' << pipeline_detail::csv_double(e.loss) << ',' << pipeline_detail::csv_double(e.val_accuracy)
      << '\n';
  return o.str();
}

inline Model fresh_model(const Settings& s, const Dataset& ds, bool gcorn_on) {
  ModelArch arch = s.arch;
  arch.gcorn = gcorn_on;
  Model m;
  pipeline_detail::rethrow_as_config(
      [&] { m = initialize_model(arch, ds.features.cols(), static_cast<std::size_t>(ds.num_classes), s.seed); });
  return m;
}

inline Json accuracies(const Model& m, const Dataset& ds) {
  Json j;
  j["train_accuracy"] = ds.train.empty() ? Json(nullptr) : Json(accuracy(m, ds, ds.train));
  j["val_accuracy"] = ds.val.empty() ? Json(nullptr) : Json(accuracy(m, ds, ds.val));
  j["test_accuracy"] = ds.test.empty() ? Json(nullptr) : Json(accuracy(m, ds, ds.test));
  return j;
}

inline void cmd_train(const Settings& s, RunOutput& out) {
  require_inputs(s, false);
  const auto ds = obtain_dataset(s);
  out.note("dataset");
  const auto res = train(fresh_model(s, ds, s.arch.gcorn), ds, s.train);
  out.note("train");
  save_model(res.model, out.dir() / "model.json");
  out.record("model.json");
  out.write("training_curve.csv", training_curve_csv(res.history));
  Json metrics = accuracies(res.model, ds);
  metrics["model"] = model_name(res.model);
  metrics["dataset"] = dataset_name(s);
  out.write_json("metrics.json", metrics);
}

// Replaces every layer by its Björck projection and reports the norms.
inline void cmd_project(const Settings& s, RunOutput& out) {
  require_inputs(s, true);
  Model m = load_model(s.model_path);
  Json layers = Json::array();
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& w = m.layers[l];
    const auto p = bjorck_project(w, s.arch.ortho, std::to_string(l + 1));
    const auto& orient = w.rows() >= w.cols() ? p : transpose(p);
    layers.push_back({{"layer", l + 1},
                      {"rows", w.rows()},
                      {"cols", w.cols()},
                      {"spectral_norm_before", spectral_norm(w, kBoundPowerIters, kBoundPowerTol)},
                      {"spectral_norm_after", spectral_norm(p, kBoundPowerIters, kBoundPowerTol)},
                      {"defect_after", ortho_defect(orient)}});
    m.layers[l] = p;
  }
  m.gcorn = false;
  out.note("project");
  save_model(m, out.dir() / "projected_model.json");
  out.record("projected_model.json");
  Json report;
  report["ortho"] = ortho_to_json(s.arch.ortho);
  report["layers"] = layers;
  out.write_json("projection.json", report);
}

inline void cmd_bound(const Settings& s, RunOutput& out) {
  require_inputs(s, true);
  const auto m = load_model(s.model_path);
  const auto ds = obtain_dataset(s);
  BoundReport r;
  pipeline_detail::rethrow_as_config([&] { r = compute_bound(m, ds, resolve_bound_query(s, m, ds)); });
  out.note("bound");
  out.write_json("bound.json", bound_to_json(r));
}

inline std::string attack_csv_header() { return "attack,dataset,model,mean,std,trials\n"; }

inline std::string attack_csv_row(const AttackSpec& spec, const std::string& dataset, const Model& m,
                                  const AttackSummary& a) {
  using pipeline_detail::csv_double;
  return to_string(spec.kind) + ',' + dataset + ',' + model_name(m) + ',' + csv_double(a.mean) + ',' +
         csv_double(a.stddev) + ',' + std::to_string(a.trials.size()) + '\n';
}

inline void cmd_attack(const Settings& s, RunOutput& out) {
  require_inputs(s, true);
  const auto m = load_model(s.model_path);
  const auto ds = obtain_dataset(s);
  const auto a = attacked_accuracy(m, ds, s.attack, s.trials, s.threads);
  out.note("attack");
  out.write("attack.csv", attack_csv_header() + attack_csv_row(s.attack, dataset_name(s), m, a));
}

inline std::vector<RobustnessEstimate> sweep_estimates(const Model& m, const Dataset& ds, const Settings& s) {
  std::vector<RobustnessEstimate> out;
  for (double eps : s.sweep) {
    SampleConfig cfg = s.sample;
    cfg.epsilon = eps;
    out.push_back(estimate_adv(m, ds, cfg, s.threads));
  }
  return out;
}

inline void cmd_estimate(const Settings& s, RunOutput& out) {
  require_inputs(s, true);
  const auto m = load_model(s.model_path);
  const auto ds = obtain_dataset(s);
  const auto main = estimate_adv(m, ds, s.sample, s.threads);
  const auto sweep = sweep_estimates(m, ds, s);
  out.note("estimate");
  Json j = estimate_to_json(main);
  j["required_samples"] = required_samples(s.sample.alpha, s.sample.r_ratio, ds.features.cols());
  out.write_json("estimate.json", j);
  std::ostringstream csv;
  csv << "epsilon,adv,stderr\n";
  for (const auto& e : sweep)
    csv << pipeline_detail::csv_double(e.config.epsilon) << ',' << pipeline_detail::csv_double(e.adv) << ','
        << pipeline_detail::csv_double(e.std_error) << '\n';
  out.write("sweep.csv", csv.str());
}

// Trains a plain and a GCORN model with identical settings, then attacks,
// bounds and estimates both.
inline void cmd_experiment(const Settings& s, RunOutput& out) {
  using pipeline_detail::csv_double;
  require_inputs(s, false);
  const auto ds = obtain_dataset(s);
  out.note("dataset");

  struct Arm {
    std::string name;
    Model model;
  };
  std::vector<Arm> arms;
  for (bool gc : {false, true}) {
    const auto res = train(fresh_model(s, ds, gc), ds, s.train);
    const std::string name = gc ? "gcorn" : to_string(s.arch.kind);
    save_model(res.model, out.dir() / (name + "_model.json"));
    out.record(name + "_model.json");
    out.write(name + "_training_curve.csv", training_curve_csv(res.history));
    arms.push_back({name, res.model});
    out.note("train " + name);
  }

  Json report;
  report["dataset"] = dataset_name(s);
  report["nodes"] = ds.num_nodes();
  report["edges"] = ds.graph.num_edges();
  report["features"] = ds.features.cols();
  report["classes"] = ds.num_classes;
  Json models = Json::object();
  std::string attack_rows = attack_csv_header();
  std::vector<std::vector<RobustnessEstimate>> sweeps;
  for (const auto& arm : arms) {
    Json mj = accuracies(arm.model, ds);
    const auto a = attacked_accuracy(arm.model, ds, s.attack, s.trials, s.threads);
    mj["attack"] = {{"kind", to_string(s.attack.kind)}, {"mean", a.mean}, {"std", a.stddev}, {"trials", a.trials}};
    attack_rows += attack_csv_row(s.attack, dataset_name(s), arm.model, a);
    out.note("attack " + arm.name);
    if (arm.model.kind == ModelKind::gcn || s.bound.distance_kind == DistanceKind::feature) {
      BoundReport b;
      pipeline_detail::rethrow_as_config(
          [&] { b = compute_bound(arm.model, ds, resolve_bound_query(s, arm.model, ds)); });
      mj["bound"] = bound_to_json(b);
      out.note("bound " + arm.name);
    }
    sweeps.push_back(sweep_estimates(arm.model, ds, s));
    Json est = Json::array();
    for (const auto& e : sweeps.back()) est.push_back(estimate_to_json(e));
    mj["estimates"] = est;
    out.note("estimate " + arm.name);
    models[arm.name] = mj;
  }
  report["models"] = models;
  out.write("attack.csv", attack_rows);

  std::ostringstream csv;
  csv << "epsilon";
  for (const auto& arm : arms) csv << ",adv_" << arm.name << ",stderr_" << arm.name;
  csv << '\n';
  for (std::size_t i = 0; i < s.sweep.size(); ++i) {
    csv << csv_double(s.sweep[i]);
    for (const auto& sw : sweeps) csv << ',' << csv_double(sw[i].adv) << ',' << csv_double(sw[i].std_error);
    csv << '\n';
  }
  out.write("sweep.csv", csv.str());
  out.write_json("report.json", report);
}

inline void cmd_gen_sbm(const Settings& s, RunOutput& out) {
  Dataset ds;
  pipeline_detail::rethrow_as_config([&] { ds = generate_sbm(s.sbm); });
  for (const auto& f : {"edges.txt", "features.csv", "labels.csv", "split.txt"}) out.record(f);
  save_dataset(ds, out.dir());
  out.note("generate");
}

using Command = std::function<void(const Settings&, RunOutput&)>;

inline const std::vector<std::pair<std::string, Command>>& commands() {
  static const std::vector<std::pair<std::string, Command>> table{
      {"train", cmd_train},       {"project", cmd_project},       {"bound", cmd_bound},
      {"attack", cmd_attack},     {"estimate", cmd_estimate},     {"experiment", cmd_experiment},
      {"gen-sbm", cmd_gen_sbm}};
  return table;
}

// Runs one command and always writes the manifest, including after failures.
inline ExitCode run_command(const std::string& name, const Config& cfg,
                            const std::optional<std::filesystem::path>& config_file,
                            const std::filesystem::path& out_dir, std::ostream& err) {
  std::optional<RunOutput> out;
  try {
    const auto& table = commands();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& c) { return c.first == name; });
    if (it == table.end()) throw ConfigError("unknown command '" + name + "'");
    out.emplace(out_dir, name, cfg, config_file);
    const Settings s = settings_from(cfg);
    it->second(s, *out);
    out->finish();
    return ExitCode::ok;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (out) {
      try {
        out->finish(&e);
      } catch (const Error& inner) {
        err << "error: could not write manifest: " << inner.what() << '\n';
      }
    }
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::io;
  }
}

}  // namespace gcorn
