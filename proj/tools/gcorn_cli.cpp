// gcorn command-line driver: train, project, bound, attack, estimate,
// experiment and gen-sbm over a dotted-key config.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gcorn/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<long long> seed;
  std::optional<std::size_t> threads;
  std::string data;
  std::string model;
  std::string out = "gcorn_out";
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("-c,--config", f.config_file, "config file with `key = value` lines");
  sub->add_option("-s,--set", f.overrides, "override a config key, e.g. --set ortho.order=2")->take_all();
  sub->add_option("--seed", f.seed, "master seed (overrides `seed`)");
  sub->add_option("--threads", f.threads, "worker threads; results do not depend on it");
  sub->add_option("--data", f.data, "dataset directory (overrides `data.dir`)");
  sub->add_option("--model", f.model, "model file (overrides `model.path`)");
  sub->add_option("-o,--out", f.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robustness toolkit for graph convolutional networks with orthonormal weights"};
  app.require_subcommand(1);
  CommonFlags flags;
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  const std::vector<std::pair<std::string, std::string>> descriptions{
      {"train", "train a model and write model.json and training_curve.csv"},
      {"project", "replace each weight matrix of a model by its Björck projection"},
      {"bound", "evaluate a closed-form robustness bound for a model"},
      {"attack", "attacked test accuracy under random or PGD feature noise or edge flips"},
      {"estimate", "sampling estimate of expected adversarial vulnerability"},
      {"experiment", "train plain and GCORN models, then attack, bound and estimate both"},
      {"gen-sbm", "write a stochastic block model dataset"}};
  for (const auto& [name, help] : descriptions) add_common(app.add_subcommand(name, help), flags);
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(gcorn::ExitCode::config);
  }

  if (list_keys) {
    for (const auto& k : gcorn::config_schema())
      std::cout << k.name << " = " << k.fallback << "    # " << k.help << '\n';
    return 0;
  }
  const auto subs = app.get_subcommands();
  if (subs.empty()) {
    std::cerr << app.help();
    return static_cast<int>(gcorn::ExitCode::config);
  }

  gcorn::Config cfg;
  std::optional<std::filesystem::path> config_file;
  try {
    if (!flags.config_file.empty()) {
      config_file = flags.config_file;
      cfg.load_file(*config_file);
    }
    for (const auto& o : flags.overrides) cfg.set_assignment(o);
    if (flags.seed) cfg.set("seed", std::to_string(*flags.seed), "--seed");
    if (flags.threads) cfg.set("threads", std::to_string(*flags.threads), "--threads");
    if (!flags.data.empty()) cfg.set("data.dir", flags.data, "--data");
    if (!flags.model.empty()) cfg.set("model.path", flags.model, "--model");
  } catch (const gcorn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  }
  return static_cast<int>(gcorn::run_command(subs.front()->get_name(), cfg, config_file, flags.out, std::cerr));
}
