#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "koopcon/config.hpp"

using namespace koopcon;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("koopcon_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

struct CliRun {
  int code;
  std::string output;
};

CliRun cli(const std::string& args, const fs::path& cwd, const std::string& env = "") {
  const fs::path log = cwd / "cli.log";
  const std::string cmd =
      "cd '" + cwd.string() + "' && " + env + " '" KOOPCON_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::stringstream ss;
  ss << std::ifstream(log).rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string toy_config(const fs::path& out) {
  return R"({"dataset": "toy", "output_dir": ")" + out.string() +
         R"(", "epochs": 3, "batch_per_class": 8, "img_per_class": 4, "latent_dim": 8,
             "classifier_width": 4, "eval_epochs": 3, "eval_repeats": 2, "seed": 5})";
}

}  // namespace

TEST(LoadConfig, MinimalConfigFillsDefaults) {
  const RunConfig c = parse_config_text(R"({"dataset": "mnist", "img_per_class": 10})");
  EXPECT_EQ(c.condense.img_per_class, 10u);
  EXPECT_EQ(c.condense.batch_per_class, CondenseConfig{}.batch_per_class);
  EXPECT_EQ(c.condense.weights.alpha2, LossWeights{}.alpha2);
  EXPECT_EQ(c.eval.repeats, EvalConfig{}.repeats);
  EXPECT_EQ(c.dataset_dir, "data/mnist");
  EXPECT_EQ(c.output_dir, "out");
}

TEST(LoadConfig, NegativeWeightNamesKey) {
  try {
    parse_config_text(R"({"alpha2": -1})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha2"), std::string::npos) << e.what();
  }
}

TEST(LoadConfig, UnknownKeyRejected) {
  try {
    parse_config_text(R"({"img_per_clas": 10})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("img_per_clas"), std::string::npos);
  }
}

TEST(LoadConfig, WrongTypesRejected) {
  EXPECT_THROW(parse_config_text(R"({"epochs": "ten"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"epochs": -3})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"learning_rate": true})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"depth": "tall"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"dataset": "imagenet"})"), ConfigError);
  EXPECT_THROW(parse_config_text("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_config_text("{not json"), ConfigError);
}

TEST(LoadConfig, HashStableUnderKeyReordering) {
  const RunConfig a = parse_config_text(R"({"dataset": "mnist", "img_per_class": 10, "alpha3": 0.5, "seed": 4})");
  const RunConfig b = parse_config_text(R"({"seed": 4, "alpha3": 0.5, "img_per_class": 10, "dataset": "mnist"})");
  EXPECT_EQ(a.hash, b.hash);
  const RunConfig c = parse_config_text(R"({"seed": 5, "alpha3": 0.5, "img_per_class": 10, "dataset": "mnist"})");
  EXPECT_NE(a.hash, c.hash);
}

TEST(LoadConfig, SeedPropagatesToStages) {
  const RunConfig c = parse_config_text(R"({"seed": 42, "classifier_width": 16})");
  EXPECT_EQ(c.condense.seed, 42u);
  EXPECT_EQ(c.eval.seed, 42u);
  EXPECT_EQ(c.eval.classifier_width, 16u);
}

TEST(LoadConfig, MissingFileNamesPath) {
  try {
    load_config("/nonexistent/run.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.json"), std::string::npos);
  }
}

TEST(LoadRunData, ToyIsGeneratedFromConfig) {
  const RunConfig c = parse_config_text(R"({"dataset": "toy", "toy_classes": 3, "toy_per_class": 2, "toy_size": 12})");
  const RunData d = load_run_data(c);
  EXPECT_EQ(d.train.size(), 6u);
  EXPECT_EQ(d.test.size(), 6u);
  EXPECT_EQ(d.train.height(), 12u);
}

TEST(LoadRunData, BundledMnistSubsetLoads) {
  RunConfig c = parse_config_text(R"({"dataset": "mnist"})");
  c.dataset_dir = std::string(KOOPCON_SOURCE_DIR) + "/data/mnist5k";
  const RunData d = load_run_data(c);
  EXPECT_EQ(d.train.size(), 4000u);
  EXPECT_EQ(d.test.size(), 1000u);
}

TEST(Cli, CondenseWritesArtifactsAndManifest) {
  const fs::path dir = fresh_dir("condense");
  write(dir / "run.json", toy_config(dir / "out"));
  const CliRun r = cli("condense --config run.json", dir);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"condensed.kpcn", "checkpoint.kpck", "losses.csv", "spread.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  const auto m = nlohmann::json::parse(std::ifstream(dir / "out" / "manifest.json"));
  EXPECT_EQ(m.at("seed"), 5);
  EXPECT_EQ(m.at("artifacts").at("losses.csv").get<std::string>(),
            to_hex(sha256_of(read_file(dir / "out" / "losses.csv"))));
  EXPECT_EQ(m.at("config_hash").get<std::string>(), to_hex(load_config(dir / "run.json").hash));
}

TEST(Cli, EvalWritesReportCsv) {
  const fs::path dir = fresh_dir("eval");
  write(dir / "run.json", toy_config(dir / "out"));
  ASSERT_EQ(cli("condense --config run.json --quiet", dir).code, 0);
  const CliRun r = cli("eval --condensed out/condensed.kpcn --config run.json", dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "out" / "report.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "eval_manifest.json"));
  std::ifstream csv(dir / "out" / "report.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "row,seed,synth_accuracy,real_accuracy,gap");
}

TEST(Cli, WritesOnlyIntoOutputDir) {
  const fs::path dir = fresh_dir("confined");
  write(dir / "run.json", toy_config(dir / "out"));
  ASSERT_EQ(cli("condense --config run.json --quiet", dir).code, 0);
  std::set<std::string> top;
  for (const auto& e : fs::directory_iterator(dir)) top.insert(e.path().filename().string());
  EXPECT_EQ(top, (std::set<std::string>{"cli.log", "out", "run.json"}));
}

TEST(Cli, MissingConfigExitsTwoNamingPath) {
  const fs::path dir = fresh_dir("missing");
  const CliRun r = cli("condense --config missing.json", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("missing.json"), std::string::npos) << r.output;
}

TEST(Cli, ErrorCategoriesMapToExitCodes) {
  const fs::path dir = fresh_dir("codes");
  EXPECT_EQ(cli("", dir).code, 2);
  EXPECT_EQ(cli("condense", dir).code, 2);
  write(dir / "bad.json", R"({"alpha2": -1})");
  EXPECT_EQ(cli("condense --config bad.json", dir).code, 2);
  write(dir / "nodata.json", R"({"dataset": "mnist", "dataset_dir": "no_such_dir", "output_dir": "o"})");
  EXPECT_EQ(cli("condense --config nodata.json", dir).code, 3);
  write(dir / "run.json", toy_config(dir / "out"));
  write(dir / "junk.kpcn", "KPCN garbage");
  EXPECT_EQ(cli("eval --condensed junk.kpcn --config run.json", dir).code, 3);
}

TEST(Cli, ThreadsVariableValidated) {
  const fs::path dir = fresh_dir("threads");
  write(dir / "run.json", toy_config(dir / "out"));
  EXPECT_EQ(cli("condense --config run.json --quiet", dir).code, 0);
  EXPECT_EQ(cli("condense --config run.json --quiet", dir, "KOOPCON_THREADS=zero").code, 2);
  EXPECT_EQ(cli("condense --config run.json --quiet", dir, "KOOPCON_THREADS=1").code, 0);
}
