#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <fstream>
#include <sstream>

#include "gcorn/pipeline.hpp"

using namespace gcorn;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / (std::string("gcorn_cli_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

// A small SBM that trains in well under a second.
Config small_config() {
  Config c;
  c.set("sbm.sizes", "20,20,20");
  c.set("sbm.dim", "8");
  c.set("sbm.p_in", "0.2");
  c.set("sbm.p_out", "0.02");
  c.set("train.epochs", "30");
  c.set("attack.trials", "3");
  c.set("estimate.l_max", "20");
  c.set("estimate.sweep", "0.5,2");
  return c;
}

struct Run {
  ExitCode code;
  std::string err;
};

Run run(const std::string& cmd, const Config& c, const fs::path& out) {
  std::ostringstream err;
  const auto code = run_command(cmd, c, std::nullopt, out, err);
  return {code, err.str()};
}

int run_binary(const std::string& args) {
  const int status = std::system((std::string(GCORN_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsCoverSchema) {
  const Config c;
  EXPECT_EQ(c.values().size(), config_schema().size());
  EXPECT_EQ(c.str("ortho.order"), "1");
  EXPECT_FALSE(c.is_explicit("ortho.order"));
  EXPECT_NO_THROW(settings_from(c));
}

TEST(Config, UnknownKeysRejected) {
  Config c;
  EXPECT_THROW(c.set("ortho.ordr", "2"), ConfigError);
  EXPECT_THROW(c.set_assignment("no_equals_sign"), ConfigError);
  try {
    c.set_assignment("model.widht=3");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.widht"), std::string::npos);
    EXPECT_EQ(e.exit_code(), ExitCode::config);
  }
}

TEST(Config, FileParsingAndOverride) {
  const auto dir = scratch();
  io_detail::write_file(dir / "run.cfg",
                        "# comment line\n"
                        "ortho.order = 2   # trailing comment\n"
                        "\n"
                        "train.lr=0.05\n"
                        "model.hidden = 8, 4\n");
  Config c;
  c.load_file(dir / "run.cfg");
  EXPECT_EQ(c.integer("ortho.order"), 2);
  EXPECT_EQ(c.real("train.lr"), 0.05);
  EXPECT_EQ(c.counts("model.hidden"), (std::vector<std::size_t>{8, 4}));
  EXPECT_TRUE(c.is_explicit("train.lr"));
  c.set_assignment("train.lr=0.2");
  EXPECT_EQ(c.real("train.lr"), 0.2);

  io_detail::write_file(dir / "bad.cfg", "seed = 1\nnot.a.key = 3\n");
  try {
    Config d;
    d.load_file(dir / "bad.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.cfg:2"), std::string::npos) << e.what();
  }
  Config d;
  EXPECT_THROW(d.load_file(dir / "absent.cfg"), ConfigError);
}

TEST(Config, TypedAccessorsValidate) {
  Config c;
  c.set("model.readout", "maybe");
  EXPECT_THROW(c.flag("model.readout"), ConfigError);
  c.set("model.readout", "off");
  EXPECT_FALSE(c.flag("model.readout"));
  c.set("train.epochs", "-3");
  EXPECT_THROW(c.count("train.epochs"), ConfigError);
  c.set("train.lr", "fast");
  EXPECT_THROW(c.real("train.lr"), ConfigError);
}

TEST(Settings, RejectsBadValues) {
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{{"model.kind", "mlp"},
                                                                            {"attack.kind", "pgd"},
                                                                            {"attack.p", "3"},
                                                                            {"attack.trials", "0"},
                                                                            {"bound.norm", "frobenius"},
                                                                            {"estimate.sweep", "1,-2"},
                                                                            {"ortho.order", "0"},
                                                                            {"sbm.p_in", "1.5"}}) {
    Config c;
    c.set(k, v);
    EXPECT_THROW(
        {
          const auto s = settings_from(c);
          if (k == "sbm.p_in") generate_sbm(s.sbm);
        },
        Error)
        << k << "=" << v;
  }
}

TEST(Commands, MissingFeatureFileIsConfigError) {
  const auto dir = scratch();
  auto c = small_config();
  ASSERT_EQ(run("gen-sbm", c, dir / "data").code, ExitCode::ok);
  fs::remove(dir / "data" / "features.csv");
  c.set("data.dir", (dir / "data").string());
  const auto r = run("train", c, dir / "out");
  EXPECT_EQ(r.code, ExitCode::config);
  EXPECT_NE(r.err.find((dir / "data" / "features.csv").string()), std::string::npos) << r.err;
  const auto m = read_json(dir / "out" / "manifest.json");
  EXPECT_EQ(m["status"], "failed");
  EXPECT_EQ(m["error"]["exit_code"], 2);
}

TEST(Commands, TrainIsDeterministicAndRoundTrips) {
  const auto dir = scratch();
  auto c = small_config();
  c.set("seed", "7");
  c.set("model.gcorn", "true");
  ASSERT_EQ(run("train", c, dir / "a").code, ExitCode::ok);
  ASSERT_EQ(run("train", c, dir / "b").code, ExitCode::ok);
  EXPECT_EQ(slurp(dir / "a" / "model.json"), slurp(dir / "b" / "model.json"));
  EXPECT_EQ(first_line(dir / "a" / "training_curve.csv"), "epoch,loss,val_accuracy");

  const auto m = load_model(dir / "a" / "model.json");
  EXPECT_TRUE(m.gcorn);
  const auto ds = obtain_dataset(settings_from(c));
  EXPECT_EQ(accuracy(m, ds, ds.test), read_json(dir / "a" / "metrics.json")["test_accuracy"].get<double>());

  c.set("seed", "8");
  ASSERT_EQ(run("train", c, dir / "c").code, ExitCode::ok);
  EXPECT_NE(slurp(dir / "a" / "model.json"), slurp(dir / "c" / "model.json"));
}

TEST(Commands, DivergenceExitsWithThree) {
  const auto dir = scratch();
  auto c = small_config();
  c.set("train.lr", "1e300");
  const auto r = run("train", c, dir);
  EXPECT_EQ(r.code, ExitCode::divergence);
  EXPECT_EQ(read_json(dir / "manifest.json")["status"], "failed");
}

TEST(Commands, ManifestWrittenForBadSettings) {
  const auto dir = scratch();
  auto c = small_config();
  c.set("attack.kind", "nonsense");
  EXPECT_EQ(run("attack", c, dir).code, ExitCode::config);
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["command"], "attack");
  EXPECT_EQ(m["status"], "failed");
  EXPECT_TRUE(m["completed_steps"].empty());
}

TEST(Commands, ModelRequiredForModelCommands) {
  const auto dir = scratch();
  for (const char* cmd : {"project", "bound", "attack", "estimate"}) {
    auto c = small_config();
    EXPECT_EQ(run(cmd, c, dir / cmd).code, ExitCode::config) << cmd;
    c.set("model.path", (dir / "nope.json").string());
    const auto r = run(cmd, c, dir / cmd);
    EXPECT_EQ(r.code, ExitCode::config) << cmd;
    EXPECT_NE(r.err.find("nope.json"), std::string::npos);
  }
}

TEST(Commands, MalformedModelIsIoError) {
  const auto dir = scratch();
  io_detail::write_file(dir / "model.json", "{ not json");
  auto c = small_config();
  c.set("model.path", (dir / "model.json").string());
  EXPECT_EQ(run("bound", c, dir / "out").code, ExitCode::io);
}

TEST(Commands, ProjectBoundAttackEstimate) {
  const auto dir = scratch();
  auto c = small_config();
  ASSERT_EQ(run("train", c, dir / "train").code, ExitCode::ok);
  c.set("model.path", (dir / "train" / "model.json").string());

  ASSERT_EQ(run("project", c, dir / "proj").code, ExitCode::ok);
  const auto projected = load_model(dir / "proj" / "projected_model.json");
  EXPECT_FALSE(projected.gcorn);
  for (const auto& layer : read_json(dir / "proj" / "projection.json")["layers"])
    EXPECT_NEAR(layer["spectral_norm_after"].get<double>(), 1.0, 1e-3);

  ASSERT_EQ(run("bound", c, dir / "bound").code, ExitCode::ok);
  const auto before = read_json(dir / "bound" / "bound.json");
  EXPECT_EQ(before["theorem"], "gcn-feature-infinity");
  c.set("model.path", (dir / "proj" / "projected_model.json").string());
  ASSERT_EQ(run("bound", c, dir / "bound2").code, ExitCode::ok);
  EXPECT_LT(read_json(dir / "bound2" / "bound.json")["gamma"].get<double>(), before["gamma"].get<double>());

  c.set("model.path", (dir / "train" / "model.json").string());
  ASSERT_EQ(run("attack", c, dir / "attack").code, ExitCode::ok);
  EXPECT_EQ(first_line(dir / "attack" / "attack.csv"), "attack,dataset,model,mean,std,trials");

  ASSERT_EQ(run("estimate", c, dir / "est").code, ExitCode::ok);
  EXPECT_EQ(first_line(dir / "est" / "sweep.csv"), "epsilon,adv,stderr");
  std::ifstream sweep(dir / "est" / "sweep.csv");
  std::string line;
  int rows = -1;
  while (std::getline(sweep, line)) ++rows;
  EXPECT_EQ(rows, 2);
  const auto est = read_json(dir / "est" / "estimate.json");
  for (const char* key : {"adv", "stderr", "l_max", "epsilon", "sigma", "p", "samples", "required_samples"})
    EXPECT_TRUE(est.contains(key)) << key;
}

TEST(Commands, ConstantModelHasZeroVulnerability) {
  const auto dir = scratch();
  Model m;
  m.layers = {DenseMatrix(8, 3)};
  save_model(m, dir / "zero.json");
  auto c = small_config();
  c.set("model.path", (dir / "zero.json").string());
  c.set("estimate.sigma", "0.001");
  ASSERT_EQ(run("estimate", c, dir / "est").code, ExitCode::ok);
  EXPECT_EQ(read_json(dir / "est" / "estimate.json")["adv"].get<double>(), 0.0);
}

TEST(Commands, ThreadsDoNotChangeResults) {
  const auto dir = scratch();
  auto c = small_config();
  c.set("estimate.sigma", "0.01");
  c.set("threads", "1");
  ASSERT_EQ(run("experiment", c, dir / "t1").code, ExitCode::ok);
  c.set("threads", "3");
  ASSERT_EQ(run("experiment", c, dir / "t3").code, ExitCode::ok);
  for (const char* f : {"attack.csv", "sweep.csv", "report.json", "gcn_model.json", "gcorn_model.json"})
    EXPECT_EQ(slurp(dir / "t1" / f), slurp(dir / "t3" / f)) << f;
}

TEST(Commands, ExperimentReportSchemaAndRerun) {
  const auto dir = scratch();
  const auto c = small_config();
  ASSERT_EQ(run("experiment", c, dir / "a").code, ExitCode::ok);
  ASSERT_EQ(run("experiment", c, dir / "b").code, ExitCode::ok);
  for (const char* f : {"attack.csv", "sweep.csv", "report.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;

  EXPECT_EQ(first_line(dir / "a" / "sweep.csv"), "epsilon,adv_gcn,stderr_gcn,adv_gcorn,stderr_gcorn");
  const auto report = read_json(dir / "a" / "report.json");
  for (const char* key : {"dataset", "nodes", "edges", "features", "classes", "models"})
    EXPECT_TRUE(report.contains(key)) << key;
  for (const char* arm : {"gcn", "gcorn"}) {
    const auto& m = report["models"][arm];
    for (const char* key : {"train_accuracy", "val_accuracy", "test_accuracy", "attack", "bound", "estimates"})
      EXPECT_TRUE(m.contains(key)) << arm << "." << key;
    EXPECT_EQ(m["attack"]["trials"].size(), 3u);
    EXPECT_EQ(m["estimates"].size(), 2u);
  }

  const auto manifest = read_json(dir / "a" / "manifest.json");
  std::vector<std::string> keys;
  for (const auto& [k, v] : manifest.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"tool", "version", "command", "status", "seed", "inputs", "config",
                                            "completed_steps", "outputs"}));
  EXPECT_EQ(manifest["config"].size(), config_schema().size());
}

TEST(Binary, ExitCodesAndFlagPrecedence) {
  const auto dir = scratch();
  io_detail::write_file(dir / "run.cfg",
                        "seed = 3\nsbm.sizes = 10,10\nsbm.dim = 4\ntrain.epochs = 5\n");
  const std::string cfg = "--config " + (dir / "run.cfg").string();
  EXPECT_EQ(run_binary("--help"), 0);
  EXPECT_EQ(run_binary(""), 2);
  EXPECT_EQ(run_binary("train --no-such-flag"), 2);
  EXPECT_EQ(run_binary("train --set bogus.key=1 --out " + (dir / "x").string()), 2);
  EXPECT_EQ(run_binary("train --config " + (dir / "absent.cfg").string()), 2);

  ASSERT_EQ(run_binary("train " + cfg + " --seed 11 --set train.epochs=2 --out " + (dir / "o").string()), 0);
  const auto m = read_json(dir / "o" / "manifest.json");
  EXPECT_EQ(m["seed"], 11);
  EXPECT_EQ(m["config"]["train.epochs"], "2");
  EXPECT_EQ(m["config"]["sbm.dim"], "4");
  EXPECT_EQ(m["inputs"]["config_file"], (dir / "run.cfg").string());

  EXPECT_EQ(run_binary("train " + cfg + " --set train.lr=1e300 --out " + (dir / "d").string()), 3);
  fs::create_directories(dir / "ro");
  io_detail::write_file(dir / "ro" / "blocker", "");
  EXPECT_EQ(run_binary("gen-sbm " + cfg + " --out " + (dir / "ro" / "blocker" / "sub").string()), 4);
}

TEST(Commands, DefaultSbmExperimentUnderFiveMinutes) {
  const auto dir = scratch();
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(run("experiment", Config{}, dir).code, ExitCode::ok);
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
  EXPECT_LT(took.count(), 300.0);
  EXPECT_EQ(read_json(dir / "manifest.json")["status"], "ok");
}
