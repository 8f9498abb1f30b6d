#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "koopcon/koopcon.hpp"
#include "koopcon/testing/suites.hpp"

namespace fs = std::filesystem;
using namespace koopcon;

namespace {

constexpr int kExitUsage = 2, kExitData = 3, kExitNumeric = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kExitUsage;
    case ErrorKind::numeric: return kExitNumeric;
    case ErrorKind::contract: return 1;
    default: return kExitData;
  }
}

// All computation is single-threaded, so any cap >= 1 is honoured.
std::size_t thread_cap() {
  const char* raw = std::getenv("KOOPCON_THREADS");
  if (!raw || !*raw) return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("KOOPCON_THREADS must be a positive integer, got '" + std::string(raw) + "'");
  return static_cast<std::size_t>(v);
}

nlohmann::json manifest(const std::string& command, const RunConfig& cfg, const fs::path& out,
                        const std::vector<std::string>& artifacts) {
  nlohmann::json m;
  m["command"] = command;
  m["config_hash"] = to_hex(cfg.hash);
  m["seed"] = cfg.seed;
  m["threads"] = thread_cap();
  m["config"] = cfg.to_json();
  for (const auto& name : artifacts) m["artifacts"][name] = to_hex(sha256_of(read_file(out / name)));
  return m;
}

fs::path prepare_output(const RunConfig& cfg) {
  const fs::path out(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  return out;
}

int run_condense(const std::string& config_path, bool quiet) {
  const RunConfig cfg = load_config(config_path);
  thread_cap();
  const RunData data = load_run_data(cfg);
  const fs::path out = prepare_output(cfg);
  const std::size_t classes = data.train.class_count;
  std::printf("condensing %s: %zu images, %zu classes, %zu epochs, %zu img/class\n", cfg.dataset.c_str(),
              data.train.size(), classes, cfg.condense.epochs, cfg.condense.img_per_class);
  const auto t0 = std::chrono::steady_clock::now();
  LossRecord acc{};
  auto progress = [&](const LossRecord& r) {
    if (quiet) return;
    acc.l_re += r.l_re, acc.l_ce += r.l_ce, acc.l_w += r.l_w, acc.l_cov += r.l_cov, acc.total += r.total;
    if (static_cast<std::size_t>(r.class_id) + 1 != classes) return;
    const double k = static_cast<double>(classes);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %zu/%zu  total %.5f  re %.5f  ce %.5f  w %.5f  cov %.5f  (%.1fs)\n", r.epoch,
                cfg.condense.epochs, acc.total / k, acc.l_re / k, acc.l_ce / k, acc.l_w / k, acc.l_cov / k, secs);
    std::fflush(stdout);
    acc = LossRecord{};
  };
  const CondensationResult r = run_condensation(data.train, cfg.condense, progress);

  export_condensed(r.condensed, out / "condensed.kpcn");
  save_checkpoint(r.pipeline, cfg.condense, out / "checkpoint.kpck");
  write_text(out / "losses.csv", loss_history_csv(r.history));
  write_text(out / "spread.csv", spread_csv(r.history));
  const std::vector<std::string> names{"condensed.kpcn", "checkpoint.kpck", "losses.csv", "spread.csv"};
  nlohmann::json m = manifest("condense", cfg, out, names);
  m["condense_config_hash"] = to_hex(cfg.condense.hash());
  write_text(out / "manifest.json", m.dump(2) + "\n");
  std::printf("wrote %zu condensed images to %s\n", r.condensed.size(), (out / "condensed.kpcn").string().c_str());
  return 0;
}

int run_eval(const std::string& condensed_path, const std::string& config_path) {
  const RunConfig cfg = load_config(config_path);
  thread_cap();
  const CondensedSet condensed = import_condensed(condensed_path);
  const RunData data = load_run_data(cfg);
  const fs::path out = prepare_output(cfg);
  std::printf("evaluating %s: %zu condensed images vs %zu real per class, %zu seeds\n", condensed_path.c_str(),
              condensed.size(), condensed.per_class, cfg.eval.repeats);
  const EvalReport report = run_comparison(data.train, data.test, condensed, cfg.eval, cfg.dataset);
  write_text(out / "report.csv", report_csv(report));
  write_text(out / "report.txt", report_table(report));
  nlohmann::json m = manifest("eval", cfg, out, {"report.csv", "report.txt"});
  m["condensed"] = {{"path", condensed_path},
                    {"sha256", to_hex(sha256_of(read_file(condensed_path)))},
                    {"config_hash", to_hex(condensed.provenance.config_hash)}};
  write_text(out / "eval_manifest.json", m.dump(2) + "\n");
  std::fputs(report_table(report).c_str(), stdout);
  return 0;
}

int run_selftest() {
  bool ok = true;
  for (const auto& suite : {testing::gradient_suite(), testing::ot_oracle_suite(), testing::hand_value_suite(),
                            testing::parser_suite()}) {
    testing::print_suite(suite);
    ok = ok && suite.passed();
  }
  std::printf("selftest %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space dataset condensation"};
  app.require_subcommand(1);

  std::string config_path, condensed_path;
  bool quiet = false;
  auto* condense = app.add_subcommand("condense", "Condense the training set and write the condensed images");
  condense->add_option("--config", config_path, "Run configuration (JSON)")->required();
  condense->add_flag("--quiet", quiet, "Suppress per-epoch progress");
  auto* eval = app.add_subcommand("eval", "Compare condensed-set and real-subset training");
  eval->add_option("--condensed", condensed_path, "Condensed set (.kpcn)")->required();
  eval->add_option("--config", config_path, "Run configuration (JSON)")->required();
  auto* selftest = app.add_subcommand("selftest", "Gradient, transport, hand-value and parser checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*condense) return run_condense(config_path, quiet);
    if (*eval) return run_eval(condensed_path, config_path);
    if (*selftest) return run_selftest();
  } catch (const Error& e) {
    std::cerr << "koopcon: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "koopcon: internal error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
