// Acceptance runner: one PASS/FAIL line per criterion.
//
//   koopcon_acceptance [--expect-fail N ...] [criterion ...]   (default: all of 1-8)
//
// Criteria named with --expect-fail still print FAIL but do not affect the
// exit status.
// Work files go to the current directory under acceptance_work/.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "koopcon/koopcon.hpp"
#include "koopcon/testing/suites.hpp"

namespace fs = std::filesystem;
using namespace koopcon;

namespace {

struct Outcome {
  bool passed;
  std::string detail;
};

const fs::path kSource = KOOPCON_SOURCE_DIR;
const fs::path kWork = fs::absolute("acceptance_work");

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Outcome from_suites(std::initializer_list<testing::SuiteResult> suites, double limit_seconds) {
  bool ok = true;
  double secs = 0.0;
  std::string failed;
  for (const auto& s : suites) {
    testing::print_suite(s);
    ok = ok && s.passed();
    secs += s.seconds;
    for (const auto& c : s.checks)
      if (!c.passed) failed += " " + c.name;
  }
  const bool fast = secs < limit_seconds;
  return {ok && fast, fmt("%.1f s (limit %.0f s)", secs, limit_seconds) + (failed.empty() ? "" : ", failed:" + failed)};
}

// Desk configuration with paths made absolute and outputs redirected.
nlohmann::json desk_config(const std::string& run) {
  std::ifstream in(kSource / "configs" / "mnist_desk.json");
  nlohmann::json j = nlohmann::json::parse(in);
  j["dataset_dir"] = (kSource / j.at("dataset_dir").get<std::string>()).string();
  j["output_dir"] = (kWork / run).string();
  return j;
}

fs::path write_config(const nlohmann::json& j, const std::string& name) {
  fs::create_directories(kWork);
  const fs::path p = kWork / (name + ".json");
  std::ofstream(p) << j.dump(2);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = "KOOPCON_THREADS=1 '" KOOPCON_CLI_PATH "' " + args;
  std::printf("  $ %s\n", cmd.c_str());
  std::fflush(stdout);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// State shared between the end-to-end criteria so each expensive stage runs once.
struct Shared {
  std::optional<RunConfig> desk;
  std::optional<RunData> data;
  std::optional<CondensedSet> shallow;
  std::vector<double> real;
  std::vector<double> shallow_synth;
  std::string shallow_origin;

  const RunConfig& config() {
    if (!desk) desk = load_config(write_config(desk_config("desk"), "desk"));
    return *desk;
  }
  const RunData& dataset() {
    if (!data) data = load_run_data(config());
    return *data;
  }
  const std::vector<double>& real_arm() {
    if (real.empty()) {
      const auto t0 = std::chrono::steady_clock::now();
      real = run_real_arm(dataset().train, config().condense.img_per_class, dataset().test, config().eval);
      std::printf("  real-subset arm: %s (%.0f s)\n", fmt("mean %.4f", summarize(real).mean).c_str(), seconds_since(t0));
    }
    return real;
  }
  const CondensedSet& shallow_set() {
    if (!shallow) {
      std::printf("  condensing shallow preset in-process\n");
      shallow = run_condensation(dataset().train, config().condense).condensed;
      shallow_origin = "in-process";
    }
    return *shallow;
  }
} shared;

Outcome criterion_1() { return from_suites({testing::gradient_suite(20, 1e-4)}, 60.0); }

Outcome criterion_2() { return from_suites({testing::ot_oracle_suite(50, 0.02, 1e-6)}, 60.0); }

Outcome criterion_3() { return from_suites({testing::hand_value_suite()}, 60.0); }

Outcome criterion_4() {
  const fs::path a = write_config(desk_config("determinism_a"), "determinism_a");
  const fs::path b = write_config(desk_config("determinism_b"), "determinism_b");
  const auto t0 = std::chrono::steady_clock::now();
  const int ra = run_cli("condense --quiet --config '" + a.string() + "'");
  const int rb = run_cli("condense --quiet --config '" + b.string() + "'");
  if (ra != 0 || rb != 0) return {false, fmt("condense exit codes %.0f and %.0f", ra, rb)};
  bool same = true;
  std::string detail;
  for (const char* f : {"condensed.kpcn", "losses.csv"}) {
    const Bytes x = read_file(kWork / "determinism_a" / f), y = read_file(kWork / "determinism_b" / f);
    const bool eq = x == y;
    same = same && eq;
    detail += std::string(f) + (eq ? " identical (" : " DIFFERS (") + to_hex(sha256_of(x)).substr(0, 12) + "), ";
  }
  // The first run doubles as the shallow set for the end-to-end criteria.
  shared.shallow = import_condensed(kWork / "determinism_a" / "condensed.kpcn");
  shared.shallow_origin = "CLI run";
  return {same, detail + fmt("two runs in %.0f s", seconds_since(t0))};
}

Outcome criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig& cfg = shared.config();
  const CondensedSet& set = shared.shallow_set();
  const auto& real = shared.real_arm();
  shared.shallow_synth = run_synth_arm(set, shared.dataset().test, cfg.eval);
  const EvalReport r = make_report("mnist", set.per_class, cfg.eval, shared.shallow_synth, real, seconds_since(t0));
  std::fputs(report_table(r).c_str(), stdout);
  write_text(kWork / "criterion5_report.csv", report_csv(r));
  const double synth = r.synth_summary.mean, base = r.real_summary.mean;
  const bool absolute = synth >= 0.80, relative = synth >= base - 0.03;
  return {absolute && relative && set.per_class == 10 && cfg.condense.epochs == 100 && cfg.eval.repeats == 5,
          fmt("condensed %.1f%%, real subset %.1f%%; (a) >= 80%%: ", 100 * synth, 100 * base) +
              (absolute ? "yes" : "no") + ", (b) >= real - 3 pp: " + (relative ? "yes" : "no") + ", set from " +
              shared.shallow_origin};
}

Outcome criterion_6() {
  const RunConfig& cfg = shared.config();
  const LabeledImages& train = shared.dataset().train;
  const ImageGeometry g{train.channels(), train.height(), train.width()};
  const std::map<DepthPreset, std::size_t> expected{
      {DepthPreset::shallow, 5}, {DepthPreset::medium, 7}, {DepthPreset::deep, 9}};
  bool ok = true;
  std::string detail;
  for (const auto& [preset, layers] : expected) {
    const std::size_t got = EncoderDecoder(preset, g, cfg.condense.latent_dim, 0).conv_layer_count();
    ok = ok && got == layers;
    detail += std::string(to_string(preset)) + "=" + std::to_string(got) + " ";
  }
  detail += "conv layers; ";

  const auto& real = shared.real_arm();
  const Summary rs = summarize(real);
  std::ostringstream csv;
  csv << "preset,conv_layers,img_per_class,synth_mean,synth_std,real_mean,real_std\n";
  for (const auto& [preset, layers] : expected) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> synth;
    try {
      if (preset == DepthPreset::shallow) {
        synth = shared.shallow_synth.empty() ? run_synth_arm(shared.shallow_set(), shared.dataset().test, cfg.eval)
                                             : shared.shallow_synth;
      } else {
        CondenseConfig c = cfg.condense;
        c.depth = preset;
        const CondensationResult r = run_condensation(train, c);
        for (const auto& h : r.history)
          for (double v : {h.l_re, h.l_ce, h.l_w, h.l_cov})
            if (!std::isfinite(v)) throw NumericError("non-finite loss in history");
        synth = run_synth_arm(r.condensed, shared.dataset().test, cfg.eval);
      }
    } catch (const Error& e) {
      ok = false;
      detail += std::string(to_string(preset)) + " diverged (" + e.what() + "); ";
      continue;
    }
    const Summary s = summarize(synth);
    csv << to_string(preset) << ',' << layers << ',' << cfg.condense.img_per_class << ',' << format_double(s.mean)
        << ',' << format_double(s.std) << ',' << format_double(rs.mean) << ',' << format_double(rs.std) << '\n';
    std::printf("  %-7s %zu layers: condensed %.1f +- %.1f %% (%.0f s)\n", to_string(preset), layers, 100 * s.mean,
                100 * s.std, seconds_since(t0));
    detail += to_string(preset) + fmt(" %.1f%%, ", 100 * s.mean);
  }
  const fs::path out = kWork / "depth_presets.csv";
  write_text(out, csv.str());
  std::fputs(csv.str().c_str(), stdout);
  return {ok, detail + "CSV " + out.string()};
}

Outcome criterion_7() { return from_suites({testing::parser_suite(200)}, 10.0); }

Outcome criterion_8() {
  RunConfig cfg = load_config(kSource / "configs" / "toy.json");
  const LabeledImages toy = load_run_data(cfg).train;
  const auto means = epoch_means(run_condensation(toy, cfg.condense).history);
  bool finite = true;
  for (const auto& m : means)
    for (double v : {m.l_re, m.l_ce, m.l_w, m.l_cov, m.total}) finite = finite && std::isfinite(v);
  const double first = means.front().total, last = means.back().total;
  return {finite && means.size() == 200 && toy.class_count == 2 && last < 0.25 * first,
          fmt("epoch 1 total %.4f, epoch 200 total %.4f (ratio %.3f, limit 0.25), ", first, last, last / first) +
              (finite ? "all terms finite" : "NON-FINITE terms")};
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient suite", criterion_1}},
      {2, {"OT oracle equivalence", criterion_2}},
      {3, {"hand values", criterion_3}},
      {4, {"determinism of condense", criterion_4}},
      {5, {"desk-scale MNIST end-to-end", criterion_5}},
      {6, {"depth presets", criterion_6}},
      {7, {"parser golden files and fuzz", criterion_7}},
      {8, {"toy loss descent", criterion_8}},
  };
  std::set<int> selected, expected_fail;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--expect-fail" && i + 1 < argc) {
      expected_fail.insert(std::atoi(argv[++i]));
    } else {
      selected.insert(std::atoi(argv[i]));
    }
  }
  if (selected.empty())
    for (const auto& [k, v] : criteria) selected.insert(k);

  std::map<int, Outcome> results;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", k);
      return 2;
    }
    std::printf("== criterion %d: %s\n", k, it->second.first);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    o.detail += fmt(" [%.0f s]", seconds_since(t0));
    std::printf("criterion %d %s: %s\n", k, o.passed ? "PASS" : "FAIL", o.detail.c_str());
    results[k] = o;
  }

  std::printf("\n== summary\n");
  int failures = 0;
  for (const auto& [k, o] : results) {
    const bool known = expected_fail.contains(k);
    std::printf("criterion %d: %s  %s%s\n", k, o.passed ? "PASS" : "FAIL", criteria.at(k).first,
                known ? (o.passed ? "  (listed as expected failure)" : "  (known failure)") : "");
    failures += o.passed || known ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
