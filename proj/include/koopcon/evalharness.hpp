#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "koopcon/adam.hpp"
#include "koopcon/condense.hpp"
#include "koopcon/datasets.hpp"
#include "koopcon/losses.hpp"
#include "koopcon/networks.hpp"

namespace koopcon {

struct EvalConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t full_batch_limit = 1000;  // train full-batch at or below this many samples
  std::size_t batch_size = 256;
  std::size_t repeats = 5;  // R
  std::uint64_t seed = 0;
  std::size_t classifier_width = 128;

  void validate() const {
    if (repeats == 0) throw ConfigError("eval_repeats must be >= 1");
    if (batch_size == 0) throw ConfigError("eval_batch_size must be >= 1");
    if (classifier_width == 0) throw ConfigError("classifier_width must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("eval_learning_rate must be > 0");
  }

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> out(repeats);
    for (std::size_t r = 0; r < repeats; ++r) out[r] = seed + r;
    return out;
  }
};

inline ConvNetClassifier make_classifier(const LabeledImages& like, const EvalConfig& cfg, std::uint64_t seed) {
  return ConvNetClassifier({like.channels(), like.height(), like.width()}, like.class_count, cfg.classifier_width,
                           seed);
}

// Fresh seeded classifier trained with Adam on cross-entropy.
inline ConvNetClassifier train_classifier(const LabeledImages& train, const EvalConfig& cfg, std::uint64_t seed) {
  if (train.empty()) throw DataError("train_classifier: empty training set");
  ConvNetClassifier net = make_classifier(train, cfg, Rng::mix(seed, 0xF00D));
  std::vector<Tensor> params = net.parameters();
  AdamState adam = AdamState::for_params(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  const std::size_t n = train.size();
  const std::size_t batch = n <= cfg.full_batch_limit ? n : cfg.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(seed, 0x5EED));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const LabeledImages mb = batch == n ? train : select_samples(train, idx);
      zero_grads(std::span(params));
      backward(cross_entropy_loss(net(mb.images), mb.labels));
      adam_step(std::span(params), adam);
    }
  }
  return net;
}

// Fraction of argmax-correct predictions. `model` maps an image batch to logits.
template <class Model>
double evaluate(const Model& model, const LabeledImages& test, std::size_t batch = 500) {
  if (test.empty()) throw DataError("evaluate: empty test set");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += batch) {
    const std::size_t end = std::min(test.size(), start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const LabeledImages mb = select_samples(test, idx);
    const std::vector<int> pred = predict_labels(model(mb.images));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == mb.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct EvalReport {
  std::string label;
  std::size_t per_class = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> synth;  // per-seed test accuracy, condensed-trained
  std::vector<double> real;   // per-seed test accuracy, real-subset-trained
  Summary synth_summary, real_summary, gap_summary;  // gap = synth − real
  double runtime_seconds = 0.0;
};

inline std::vector<double> run_synth_arm(const CondensedSet& condensed, const LabeledImages& test,
                                         const EvalConfig& cfg) {
  const LabeledImages train = condensed.as_labeled();
  std::vector<double> out;
  for (std::uint64_t s : cfg.seeds()) out.push_back(evaluate(train_classifier(train, cfg, Rng::mix(s, 1)), test));
  return out;
}

// A fresh real subset of exactly `per_class` images per class for every seed.
inline std::vector<double> run_real_arm(const LabeledImages& train, std::size_t per_class, const LabeledImages& test,
                                        const EvalConfig& cfg) {
  std::vector<double> out;
  for (std::uint64_t s : cfg.seeds()) {
    const LabeledImages subset = holdout_split(train, per_class, Rng::mix(s, 0x5B5E7)).subset;
    out.push_back(evaluate(train_classifier(subset, cfg, Rng::mix(s, 2)), test));
  }
  return out;
}

inline EvalReport make_report(std::string label, std::size_t per_class, const EvalConfig& cfg,
                              std::vector<double> synth, std::vector<double> real, double runtime_seconds) {
  EvalReport r;
  r.label = std::move(label);
  r.per_class = per_class;
  r.seeds = cfg.seeds();
  r.synth = std::move(synth);
  r.real = std::move(real);
  std::vector<double> gap(r.synth.size());
  for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = r.synth[i] - r.real[i];
  r.synth_summary = summarize(r.synth);
  r.real_summary = summarize(r.real);
  r.gap_summary = summarize(gap);
  r.runtime_seconds = runtime_seconds;
  return r;
}

inline EvalReport run_comparison(const LabeledImages& train, const LabeledImages& test, const CondensedSet& condensed,
                                 const EvalConfig& cfg, std::string label = "condensed") {
  cfg.validate();
  if (condensed.class_count != train.class_count) {
    throw ConsistencyError("run_comparison: condensed set has " + std::to_string(condensed.class_count) +
                           " classes, training data has " + std::to_string(train.class_count));
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> synth = run_synth_arm(condensed, test, cfg);
  std::vector<double> real = run_real_arm(train, condensed.per_class, test, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return make_report(std::move(label), condensed.per_class, cfg, std::move(synth), std::move(real), secs);
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "row,seed,synth_accuracy,real_accuracy,gap\n";
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    out += "seed," + std::to_string(r.seeds[i]) + "," + format_double(r.synth[i]) + "," + format_double(r.real[i]) +
           "," + format_double(r.synth[i] - r.real[i]) + "\n";
  }
  out += "mean,," + format_double(r.synth_summary.mean) + "," + format_double(r.real_summary.mean) + "," +
         format_double(r.gap_summary.mean) + "\n";
  out += "std,," + format_double(r.synth_summary.std) + "," + format_double(r.real_summary.std) + "," +
         format_double(r.gap_summary.std) + "\n";
  return out;
}

inline std::string report_table(const EvalReport& r) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-12s %8s %18s %18s\n", "set", "Img/Cls", "condensed (%)", "real subset (%)");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %8zu %11.1f +- %4.1f %11.1f +- %4.1f\n", r.label.c_str(), r.per_class,
                100.0 * r.synth_summary.mean, 100.0 * r.synth_summary.std, 100.0 * r.real_summary.mean,
                100.0 * r.real_summary.std);
  out += buf;
  std::snprintf(buf, sizeof buf, "runs: %zu, gap %+.1f pp, %.1f s\n", r.seeds.size(), 100.0 * r.gap_summary.mean,
                r.runtime_seconds);
  out += buf;
  return out;
}

}  // namespace koopcon
