#pragma once

#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "koopcon/bytes.hpp"
#include "koopcon/condense.hpp"
#include "koopcon/datasets.hpp"
#include "koopcon/error.hpp"
#include "koopcon/evalharness.hpp"

namespace koopcon {

// Parameters of the generated constant-image dataset ("toy").
struct ToyConfig {
  std::size_t classes = 2;
  std::size_t per_class = 8;
  std::size_t channels = 1;
  std::size_t size = 8;
  double noise = 0.05;
};

struct RunConfig {
  std::string dataset = "mnist";  // mnist | fashion_mnist | cifar10 | toy
  std::string dataset_dir;  // defaults to data/<dataset>
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  CondenseConfig condense;
  EvalConfig eval;
  ToyConfig toy;
  Digest hash{};  // SHA-256 of the canonical JSON, set by parse_config

  nlohmann::json to_json() const;
};

namespace detail {

using json = nlohmann::json;

struct Field {
  const char* key;
  std::function<json(const RunConfig&)> get;
  std::function<void(const json&, RunConfig&)> set;
};

inline ConfigError type_error(const std::string& key, const char* want, const json& got) {
  return ConfigError("config key '" + key + "' must be " + want + ", got " + got.dump());
}

inline std::uint64_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw type_error(key, "a nonnegative integer", v);
  }
  return v.get<std::uint64_t>();
}

inline double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) throw type_error(key, "a number", v);
  return v.get<double>();
}

inline std::string as_text(const std::string& key, const json& v) {
  if (!v.is_string()) throw type_error(key, "a string", v);
  return v.get<std::string>();
}

template <class T>
Field count_field(const char* key, T RunConfig::*outer, std::size_t T::*inner) {
  return {key, [=](const RunConfig& c) { return json((c.*outer).*inner); },
          [=](const json& v, RunConfig& c) { (c.*outer).*inner = as_count(key, v); }};
}

template <class T>
Field real_field(const char* key, T RunConfig::*outer, double T::*inner) {
  return {key, [=](const RunConfig& c) { return json((c.*outer).*inner); },
          [=](const json& v, RunConfig& c) { (c.*outer).*inner = as_real(key, v); }};
}

inline Field weight_field(const char* key, double LossWeights::*inner) {
  return {key, [=](const RunConfig& c) { return json(c.condense.weights.*inner); },
          [=](const json& v, RunConfig& c) { c.condense.weights.*inner = as_real(key, v); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"dataset", [](const RunConfig& c) { return json(c.dataset); },
                 [](const json& v, RunConfig& c) { c.dataset = as_text("dataset", v); }});
    f.push_back({"dataset_dir", [](const RunConfig& c) { return json(c.dataset_dir); },
                 [](const json& v, RunConfig& c) { c.dataset_dir = as_text("dataset_dir", v); }});
    f.push_back({"output_dir", [](const RunConfig& c) { return json(c.output_dir); },
                 [](const json& v, RunConfig& c) { c.output_dir = as_text("output_dir", v); }});
    f.push_back({"seed", [](const RunConfig& c) { return json(c.seed); },
                 [](const json& v, RunConfig& c) { c.seed = as_count("seed", v); }});
    f.push_back({"depth", [](const RunConfig& c) { return json(to_string(c.condense.depth)); },
                 [](const json& v, RunConfig& c) { c.condense.depth = parse_depth_preset(as_text("depth", v)); }});
    f.push_back(count_field("img_per_class", &RunConfig::condense, &CondenseConfig::img_per_class));
    f.push_back(count_field("batch_per_class", &RunConfig::condense, &CondenseConfig::batch_per_class));
    f.push_back(count_field("latent_dim", &RunConfig::condense, &CondenseConfig::latent_dim));
    f.push_back(count_field("epochs", &RunConfig::condense, &CondenseConfig::epochs));
    f.push_back(count_field("classifier_width", &RunConfig::condense, &CondenseConfig::classifier_width));
    f.push_back(real_field("learning_rate", &RunConfig::condense, &CondenseConfig::learning_rate));
    f.push_back(real_field("beta1", &RunConfig::condense, &CondenseConfig::beta1));
    f.push_back(real_field("beta2", &RunConfig::condense, &CondenseConfig::beta2));
    f.push_back(real_field("adam_epsilon", &RunConfig::condense, &CondenseConfig::adam_epsilon));
    f.push_back(weight_field("alpha0", &LossWeights::alpha0));
    f.push_back(weight_field("alpha1", &LossWeights::alpha1));
    f.push_back(weight_field("alpha2", &LossWeights::alpha2));
    f.push_back(weight_field("alpha3", &LossWeights::alpha3));
    f.push_back(weight_field("sinkhorn_epsilon", &LossWeights::sinkhorn_epsilon));
    f.push_back({"sinkhorn_epsilon_mode",
                 [](const RunConfig& c) {
                   return json(c.condense.weights.sinkhorn_epsilon_mode == EpsilonMode::relative ? "relative"
                                                                                                  : "absolute");
                 },
                 [](const json& v, RunConfig& c) {
                   const std::string s = as_text("sinkhorn_epsilon_mode", v);
                   if (s != "relative" && s != "absolute") {
                     throw ConfigError("config key 'sinkhorn_epsilon_mode' must be relative|absolute, got '" + s + "'");
                   }
                   c.condense.weights.sinkhorn_epsilon_mode =
                       s == "relative" ? EpsilonMode::relative : EpsilonMode::absolute;
                 }});
    f.push_back({"sinkhorn_max_iters", [](const RunConfig& c) { return json(c.condense.weights.sinkhorn_max_iters); },
                 [](const json& v, RunConfig& c) {
                   c.condense.weights.sinkhorn_max_iters = as_count("sinkhorn_max_iters", v);
                 }});
    f.push_back(weight_field("sinkhorn_tolerance", &LossWeights::sinkhorn_tolerance));
    f.push_back(count_field("eval_epochs", &RunConfig::eval, &EvalConfig::epochs));
    f.push_back(real_field("eval_learning_rate", &RunConfig::eval, &EvalConfig::learning_rate));
    f.push_back(count_field("eval_batch_size", &RunConfig::eval, &EvalConfig::batch_size));
    f.push_back(count_field("eval_full_batch_limit", &RunConfig::eval, &EvalConfig::full_batch_limit));
    f.push_back(count_field("eval_repeats", &RunConfig::eval, &EvalConfig::repeats));
    f.push_back(count_field("toy_classes", &RunConfig::toy, &ToyConfig::classes));
    f.push_back(count_field("toy_per_class", &RunConfig::toy, &ToyConfig::per_class));
    f.push_back(count_field("toy_channels", &RunConfig::toy, &ToyConfig::channels));
    f.push_back(count_field("toy_size", &RunConfig::toy, &ToyConfig::size));
    f.push_back(real_field("toy_noise", &RunConfig::toy, &ToyConfig::noise));
    return f;
  }();
  return table;
}

}  // namespace detail

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::fields()) j[f.key] = f.get(*this);
  return j;
}

inline void validate(const RunConfig& c) {
  static const std::set<std::string> kinds{"mnist", "fashion_mnist", "cifar10", "toy"};
  if (!kinds.contains(c.dataset)) {
    throw ConfigError("config key 'dataset' must be one of mnist|fashion_mnist|cifar10|toy, got '" + c.dataset + "'");
  }
  if (c.output_dir.empty()) throw ConfigError("config key 'output_dir' must not be empty");
  if (c.toy.classes < 1 || c.toy.per_class < 1 || c.toy.channels < 1) {
    throw ConfigError("config keys toy_classes, toy_per_class and toy_channels must be >= 1");
  }
  if (c.toy.classes > 256) throw ConfigError("config key 'toy_classes' must be <= 256");
  if (c.toy.size < 8 || c.toy.size % 4 != 0) throw ConfigError("config key 'toy_size' must be a multiple of 4, >= 8");
  if (!(c.toy.noise >= 0.0 && c.toy.noise <= 1.0)) throw ConfigError("config key 'toy_noise' must lie in [0, 1]");
  if (c.eval.full_batch_limit == 0) throw ConfigError("config key 'eval_full_batch_limit' must be >= 1");
  c.condense.validate();
  c.eval.validate();
}

// Defaults fill absent keys; unknown keys, wrong types and out-of-range values
// raise ConfigError naming the key.
inline RunConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object, got " + std::string(j.type_name()));
  RunConfig c;
  std::set<std::string> known;
  for (const auto& f : detail::fields()) known.insert(f.key);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  for (const auto& f : detail::fields()) {
    if (j.contains(f.key)) f.set(j.at(f.key), c);
  }
  if (c.dataset_dir.empty() && c.dataset != "toy") c.dataset_dir = "data/" + c.dataset;
  c.condense.dataset = c.dataset;
  c.condense.seed = c.seed;
  c.eval.seed = c.seed;
  c.eval.classifier_width = c.condense.classifier_width;
  validate(c);
  c.hash = sha256_of(c.to_json().dump());
  return c;
}

inline RunConfig parse_config_text(std::string_view text, const std::string& origin = "config") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": not valid JSON (" + e.what() + ")");
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  Bytes raw;
  try {
    raw = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file '" + path.string() + "'");
  }
  return parse_config_text(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()), path.string());
}

struct RunData {
  LabeledImages train;
  LabeledImages test;
};

inline RunData load_run_data(const RunConfig& c) {
  if (c.dataset == "toy") {
    const ToyConfig& t = c.toy;
    return {make_constant_toy(t.classes, t.per_class, t.channels, t.size, t.size, Rng::mix(c.seed, 0x70), t.noise),
            make_constant_toy(t.classes, t.per_class, t.channels, t.size, t.size, Rng::mix(c.seed, 0x71), t.noise)};
  }
  if (c.dataset == "cifar10") return {load_cifar10_dir(c.dataset_dir, "train"), load_cifar10_dir(c.dataset_dir, "test")};
  return {load_mnist_dir(c.dataset_dir, "train", c.dataset), load_mnist_dir(c.dataset_dir, "test", c.dataset)};
}

}  // namespace koopcon
