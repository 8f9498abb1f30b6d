#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "koopcon/adam.hpp"
#include "koopcon/bytes.hpp"
#include "koopcon/datasets.hpp"
#include "koopcon/error.hpp"
#include "koopcon/losses.hpp"
#include "koopcon/networks.hpp"

namespace koopcon {

struct CondenseConfig {
  std::string dataset = "mnist";
  std::size_t batch_per_class = 128;  // n_b
  std::size_t img_per_class = 10;     // n′
  DepthPreset depth = DepthPreset::shallow;
  std::size_t latent_dim = 64;
  std::size_t epochs = 100;
  LossWeights weights;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t classifier_width = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (img_per_class == 0) throw ConfigError("img_per_class must be >= 1");
    if (batch_per_class == 0) throw ConfigError("batch_per_class must be >= 1");
    if (latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
    if (classifier_width == 0) throw ConfigError("classifier_width must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
    weights.validate();
  }

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"batch_per_class", batch_per_class},
            {"img_per_class", img_per_class},
            {"depth", to_string(depth)},
            {"latent_dim", latent_dim},
            {"epochs", epochs},
            {"alpha0", weights.alpha0},
            {"alpha1", weights.alpha1},
            {"alpha2", weights.alpha2},
            {"alpha3", weights.alpha3},
            {"sinkhorn_epsilon", weights.sinkhorn_epsilon},
            {"sinkhorn_epsilon_mode", weights.sinkhorn_epsilon_mode == EpsilonMode::relative ? "relative" : "absolute"},
            {"sinkhorn_max_iters", weights.sinkhorn_max_iters},
            {"sinkhorn_tolerance", weights.sinkhorn_tolerance},
            {"learning_rate", learning_rate},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_epsilon", adam_epsilon},
            {"classifier_width", classifier_width},
            {"seed", seed}};
  }

  static CondenseConfig from_json(const nlohmann::json& j) {
    CondenseConfig c;
    c.dataset = j.at("dataset").get<std::string>();
    c.batch_per_class = j.at("batch_per_class").get<std::size_t>();
    c.img_per_class = j.at("img_per_class").get<std::size_t>();
    c.depth = parse_depth_preset(j.at("depth").get<std::string>());
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.weights.alpha0 = j.at("alpha0").get<double>();
    c.weights.alpha1 = j.at("alpha1").get<double>();
    c.weights.alpha2 = j.at("alpha2").get<double>();
    c.weights.alpha3 = j.at("alpha3").get<double>();
    c.weights.sinkhorn_epsilon = j.at("sinkhorn_epsilon").get<double>();
    c.weights.sinkhorn_epsilon_mode =
        j.at("sinkhorn_epsilon_mode").get<std::string>() == "absolute" ? EpsilonMode::absolute : EpsilonMode::relative;
    c.weights.sinkhorn_max_iters = j.at("sinkhorn_max_iters").get<std::size_t>();
    c.weights.sinkhorn_tolerance = j.at("sinkhorn_tolerance").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
    c.classifier_width = j.at("classifier_width").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }

  // SHA-256 of the key-sorted compact JSON.
  Digest hash() const { return sha256_of(to_json().dump()); }
};

struct LossRecord {
  std::size_t epoch = 0;
  int class_id = 0;
  double l_re = 0, l_ce = 0, l_w = 0, l_cov = 0, total = 0;
  double spread = 0;  // mean pairwise distance between rows of Y′
};

struct Provenance {
  Digest config_hash{};
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  LossRecord final_losses;
  nlohmann::json config;  // the CondenseConfig that produced the set, when known

  nlohmann::json to_json() const {
    return {{"config_hash", to_hex(config_hash)},
            {"seed", seed},
            {"epochs", epochs},
            {"final_losses",
             {{"l_re", final_losses.l_re},
              {"l_ce", final_losses.l_ce},
              {"l_w", final_losses.l_w},
              {"l_cov", final_losses.l_cov},
              {"total", final_losses.total}}},
            {"config", config}};
  }

  static Provenance from_json(const nlohmann::json& j, const Digest& hash) {
    Provenance p;
    p.config_hash = hash;
    p.seed = j.value("seed", std::uint64_t{0});
    p.epochs = j.value("epochs", std::size_t{0});
    if (j.contains("final_losses")) {
      const auto& f = j["final_losses"];
      p.final_losses.l_re = f.value("l_re", 0.0);
      p.final_losses.l_ce = f.value("l_ce", 0.0);
      p.final_losses.l_w = f.value("l_w", 0.0);
      p.final_losses.l_cov = f.value("l_cov", 0.0);
      p.final_losses.total = f.value("total", 0.0);
    }
    p.config = j.value("config", nlohmann::json::object());
    return p;
  }
};

struct CondensedSet {
  Tensor images;            // (M·n′)×c×h×w, values in [0,1], f32-representable
  std::vector<int> labels;  // n′ per class, grouped by class
  std::size_t class_count = 0;
  std::size_t per_class = 0;
  Provenance provenance;

  std::size_t size() const { return labels.size(); }

  LabeledImages as_labeled() const {
    LabeledImages out;
    out.images = images;
    out.labels = labels;
    out.class_count = class_count;
    out.source_name = "condensed";
    return out;
  }
};

// Autoencoder, attention/condensation head and the auxiliary classifier,
// trained jointly.
struct Pipeline {
  EncoderDecoder autoencoder;
  CondenserHead head;
  ConvNetClassifier classifier;

  Pipeline(const CondenseConfig& cfg, const ImageGeometry& geometry, std::size_t classes)
      : autoencoder(cfg.depth, geometry, cfg.latent_dim, Rng::mix(cfg.seed, 1)),
        head(cfg.latent_dim, cfg.batch_per_class, cfg.img_per_class, Rng::mix(cfg.seed, 2)),
        classifier(geometry, classes, cfg.classifier_width, Rng::mix(cfg.seed, 3)) {}

  NamedParameters named_parameters() const {
    NamedParameters out = autoencoder.named_parameters();
    for (auto& p : head.named_parameters()) out.push_back(p);
    for (auto& p : classifier.named_parameters()) out.push_back(p);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  // X (n_b images) → Y′ (n′ latents) → X′ (n′ images)
  Tensor condense(const Tensor& x) const { return autoencoder.decode(head(autoencoder.encode(x))); }
};

// Graph of one training step for a single class batch.
struct StepTerms {
  Tensor l_re, l_ce, l_w, l_cov, total;
  Tensor condensed_latents;
};

inline StepTerms step_terms(const Pipeline& p, const Tensor& x, int class_id, const LossWeights& w) {
  StepTerms s;
  const Tensor y = p.autoencoder.encode(x);
  const Tensor y_prime = p.head(y);
  const Tensor x_prime = p.autoencoder.decode(y_prime);
  s.condensed_latents = y_prime;
  s.l_re = w.alpha0 != 0.0 ? reconstruction_loss(x, p.autoencoder.decode(y)) : Tensor::scalar(0.0);
  if (w.alpha1 != 0.0) {
    const std::vector<int> labels(x.dim(0) + x_prime.dim(0), class_id);
    s.l_ce = cross_entropy_loss(p.classifier(concat_rows({x, x_prime})), labels);
  } else {
    s.l_ce = Tensor::scalar(0.0);
  }
  s.l_w = w.alpha2 != 0.0 ? sinkhorn_wasserstein(y, y_prime, w).value : Tensor::scalar(0.0);
  s.l_cov = w.alpha3 != 0.0 ? covariance_loss(y_prime).value : Tensor::scalar(0.0);
  s.total = total_loss(s.l_re, s.l_ce, s.l_w, s.l_cov, w);
  return s;
}

inline double mean_pairwise_distance(const Tensor& rows) {
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  if (n < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = rows.at(i * d + k) - rows.at(j * d + k);
        s += diff * diff;
      }
      acc += std::sqrt(s);
    }
  return acc / static_cast<double>(n * (n - 1) / 2);
}

struct CondensationResult {
  CondensedSet condensed;
  Pipeline pipeline;
  std::vector<LossRecord> history;
};

using ProgressFn = std::function<void(const LossRecord&)>;

inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t epoch, int class_id) {
  return Rng::mix(Rng::mix(seed, 0xBA7C + epoch), static_cast<std::uint64_t>(class_id));
}

inline std::uint64_t export_seed(std::uint64_t seed, int class_id) {
  return Rng::mix(Rng::mix(seed, 0xE4907), static_cast<std::uint64_t>(class_id));
}

// Frozen pass: one seeded batch per class through encode → SA → T → decode.
inline CondensedSet export_condensed_set(const Pipeline& p, const LabeledImages& data, const CondenseConfig& cfg) {
  NoGradGuard no_grad;
  CondensedSet out;
  out.class_count = data.class_count;
  out.per_class = cfg.img_per_class;
  std::vector<double> pixels;
  for (std::size_t k = 0; k < data.class_count; ++k) {
    const int cls = static_cast<int>(k);
    const ClassBatch b = class_batch(data, cls, cfg.batch_per_class, export_seed(cfg.seed, cls));
    const Tensor x_prime = p.condense(b.images);
    for (double v : x_prime.data()) pixels.push_back(static_cast<double>(static_cast<float>(v)));
    out.labels.insert(out.labels.end(), cfg.img_per_class, cls);
  }
  Shape shape = data.images.shape();
  shape[0] = out.labels.size();
  out.images = Tensor(std::move(shape), std::move(pixels));
  out.provenance.config_hash = cfg.hash();
  out.provenance.seed = cfg.seed;
  out.provenance.epochs = cfg.epochs;
  out.provenance.config = cfg.to_json();
  return out;
}

inline CondensationResult run_condensation(const LabeledImages& data, const CondenseConfig& cfg,
                                           const ProgressFn& progress = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("run_condensation: empty dataset");
  const auto counts = data.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (counts[k] == 0) throw DataError("run_condensation: class " + std::to_string(k) + " has no samples");
  if (cfg.batch_per_class < cfg.img_per_class) {
    std::cerr << "warning: batch_per_class " << cfg.batch_per_class << " is below img_per_class " << cfg.img_per_class
              << "\n";
  }

  const ImageGeometry geometry{data.channels(), data.height(), data.width()};
  CondensationResult result{{}, Pipeline(cfg, geometry, data.class_count), {}};
  Pipeline& p = result.pipeline;
  std::vector<Tensor> params = p.parameters();
  AdamState adam = AdamState::for_params(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < data.class_count; ++k, ++step) {
      const int cls = static_cast<int>(k);
      const ClassBatch b = class_batch(data, cls, cfg.batch_per_class, batch_seed(cfg.seed, epoch, cls));
      StepTerms s;
      try {
        s = step_terms(p, b.images, cls, cfg.weights);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + ", class " + std::to_string(cls) + ")");
      }
      LossRecord rec{epoch, cls, s.l_re.item(), s.l_ce.item(), s.l_w.item(), s.l_cov.item(), s.total.item(),
                     mean_pairwise_distance(s.condensed_latents)};
      zero_grads(std::span(params));
      backward(s.total);
      adam_step(std::span(params), adam);
      result.history.push_back(rec);
      if (progress) progress(rec);
    }
  }

  result.condensed = export_condensed_set(p, data, cfg);
  if (!result.history.empty()) result.condensed.provenance.final_losses = result.history.back();
  return result;
}

// Per-epoch averages over classes.
inline std::vector<LossRecord> epoch_means(const std::vector<LossRecord>& history) {
  std::map<std::size_t, std::pair<LossRecord, std::size_t>> acc;
  for (const auto& r : history) {
    auto& [sum, n] = acc[r.epoch];
    sum.epoch = r.epoch;
    sum.l_re += r.l_re;
    sum.l_ce += r.l_ce;
    sum.l_w += r.l_w;
    sum.l_cov += r.l_cov;
    sum.total += r.total;
    sum.spread += r.spread;
    ++n;
  }
  std::vector<LossRecord> out;
  for (auto& [epoch, entry] : acc) {
    auto [m, n] = entry;
    const double k = 1.0 / static_cast<double>(n);
    m.l_re *= k, m.l_ce *= k, m.l_w *= k, m.l_cov *= k, m.total *= k, m.spread *= k;
    m.class_id = -1;
    out.push_back(m);
  }
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string loss_history_csv(const std::vector<LossRecord>& history) {
  std::string out = "epoch,class,l_re,l_ce,l_w,l_cov,total\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.class_id) + "," + format_double(r.l_re) + "," +
           format_double(r.l_ce) + "," + format_double(r.l_w) + "," + format_double(r.l_cov) + "," +
           format_double(r.total) + "\n";
  }
  return out;
}

inline std::string spread_csv(const std::vector<LossRecord>& history) {
  std::string out = "epoch,class,mean_pairwise_distance\n";
  for (const auto& r : history)
    out += std::to_string(r.epoch) + "," + std::to_string(r.class_id) + "," + format_double(r.spread) + "\n";
  return out;
}

// ---- containers -------------------------------------------------------------

inline constexpr std::uint16_t kCondensedVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void check_magic(std::span<const std::uint8_t> bytes, const char* magic, const char* what) {
  if (bytes.size() < 6) {
    throw FormatError(std::string(what) + ": file of " + std::to_string(bytes.size()) + " bytes is too short");
  }
  if (std::string(bytes.begin(), bytes.begin() + 4) != magic) {
    throw FormatError(std::string(what) + ": bad magic at offset 0, expected '" + magic + "'");
  }
}

inline void append_crc(Bytes& out) {
  const std::uint32_t crc = crc32_of(std::span(out).subspan(6));
  write_be32(out, crc);
}

inline void verify_crc(std::span<const std::uint8_t> bytes, const char* what) {
  if (bytes.size() < 10) throw FormatError(std::string(what) + ": truncated before checksum");
  const std::size_t end = bytes.size() - 4;
  const std::uint32_t stored = read_be32(bytes, end);
  const std::uint32_t actual = crc32_of(bytes.subspan(6, end - 6));
  if (stored != actual) {
    throw ChecksumError(std::string(what) + ": CRC-32 mismatch, stored " + hex32(stored) + ", computed " +
                        hex32(actual));
  }
}

// Bounds-checked cursor over a payload.
struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  const char* what = "";

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) {
      throw FormatError(std::string(what) + ": truncated at offset " + std::to_string(pos) + ", need " +
                        std::to_string(n) + " more bytes, have " + std::to_string(bytes.size() - pos));
    }
  }
  std::uint32_t u32() {
    need(4);
    pos += 4;
    return read_be32(bytes, pos - 4);
  }
  std::uint16_t u16() {
    need(2);
    pos += 2;
    return read_be16(bytes, pos - 2);
  }
  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    pos += n;
    return bytes.subspan(pos - n, n);
  }
};

}  // namespace detail

// "KPCN" | u16 version | 32-byte config hash | M, n′, c, h, w (BE u32) |
// labels (u8) | pixels (LE f32) | u32 length + provenance JSON | CRC-32.
inline Bytes encode_condensed(const CondensedSet& set) {
  if (set.class_count > 256) throw ContractError("condensed container stores labels as u8, got " +
                                                 std::to_string(set.class_count) + " classes");
  Bytes out{'K', 'P', 'C', 'N'};
  write_be16(out, kCondensedVersion);
  out.insert(out.end(), set.provenance.config_hash.begin(), set.provenance.config_hash.end());
  write_be32(out, static_cast<std::uint32_t>(set.class_count));
  write_be32(out, static_cast<std::uint32_t>(set.per_class));
  for (std::size_t axis = 1; axis < 4; ++axis) write_be32(out, static_cast<std::uint32_t>(set.images.dim(axis)));
  for (int l : set.labels) out.push_back(static_cast<std::uint8_t>(l));
  for (double v : set.images.data()) write_le_f32(out, static_cast<float>(v));
  const std::string prov = set.provenance.to_json().dump();
  write_be32(out, static_cast<std::uint32_t>(prov.size()));
  out.insert(out.end(), prov.begin(), prov.end());
  detail::append_crc(out);
  return out;
}

inline CondensedSet decode_condensed(std::span<const std::uint8_t> bytes) {
  constexpr const char* what = "condensed set";
  detail::check_magic(bytes, "KPCN", what);
  const std::uint16_t version = read_be16(bytes, 4);
  if (version != kCondensedVersion) {
    throw FormatError(std::string(what) + ": unsupported version " + std::to_string(version) + ", expected " +
                      std::to_string(kCondensedVersion));
  }
  detail::verify_crc(bytes, what);
  detail::Reader r{bytes.first(bytes.size() - 4), 6, what};
  Digest hash{};
  const auto h = r.take(32);
  std::copy(h.begin(), h.end(), hash.begin());
  CondensedSet set;
  set.class_count = r.u32();
  set.per_class = r.u32();
  const std::size_t c = r.u32(), height = r.u32(), width = r.u32();
  const std::size_t count = set.class_count * set.per_class;
  if (count == 0 || c == 0 || height == 0 || width == 0) throw FormatError(std::string(what) + ": zero extent in header");
  for (std::uint8_t l : r.take(count)) {
    if (l >= set.class_count) {
      throw FormatError(std::string(what) + ": label " + std::to_string(l) + " outside [0, " +
                        std::to_string(set.class_count) + ")");
    }
    set.labels.push_back(l);
  }
  std::vector<std::size_t> per(set.class_count, 0);
  for (int l : set.labels) ++per[static_cast<std::size_t>(l)];
  for (std::size_t k = 0; k < per.size(); ++k) {
    if (per[k] != set.per_class) {
      throw ConsistencyError(std::string(what) + ": class " + std::to_string(k) + " has " + std::to_string(per[k]) +
                             " records, header says " + std::to_string(set.per_class));
    }
  }
  const std::size_t n_px = count * c * height * width;
  const auto px = r.take(n_px * 4);
  std::vector<double> pixels(n_px);
  for (std::size_t i = 0; i < n_px; ++i) pixels[i] = static_cast<double>(read_le_f32(px, i * 4));
  set.images = Tensor({count, c, height, width}, std::move(pixels));
  const std::size_t prov_len = r.u32();
  const auto prov = r.take(prov_len);
  if (r.pos != r.bytes.size()) {
    throw FormatError(std::string(what) + ": " + std::to_string(r.bytes.size() - r.pos) + " trailing bytes");
  }
  try {
    set.provenance = Provenance::from_json(nlohmann::json::parse(prov.begin(), prov.end()), hash);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(what) + ": provenance block is not valid JSON (" + e.what() + ")");
  }
  return set;
}

inline void export_condensed(const CondensedSet& set, const std::filesystem::path& path) {
  write_file(path, encode_condensed(set));
}

inline CondensedSet import_condensed(const std::filesystem::path& path) { return decode_condensed(read_file(path)); }

struct Checkpoint {
  CondenseConfig config;
  ImageGeometry geometry;
  std::size_t class_count = 0;
  Digest config_hash{};
  NamedParameters parameters;
};

// "KPCK" | u16 version | 32-byte config hash | u32 length + JSON header |
// u32 tensor count | per tensor: u16 name length, name, u8 rank, BE u32 dims,
// LE f64 values | CRC-32.
inline Bytes encode_checkpoint(const Pipeline& p, const CondenseConfig& cfg) {
  Bytes out{'K', 'P', 'C', 'K'};
  write_be16(out, kCheckpointVersion);
  const Digest hash = cfg.hash();
  out.insert(out.end(), hash.begin(), hash.end());
  const ImageGeometry& g = p.autoencoder.geometry();
  const std::string header =
      nlohmann::json{{"config", cfg.to_json()},
                     {"geometry", {g.channels, g.height, g.width}},
                     {"classes", p.classifier.class_count()}}
          .dump();
  write_be32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const NamedParameters params = p.named_parameters();
  write_be32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_be16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) write_be32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) write_le_f64(out, v);
  }
  detail::append_crc(out);
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  constexpr const char* what = "checkpoint";
  detail::check_magic(bytes, "KPCK", what);
  const std::uint16_t version = read_be16(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CompatibilityError(std::string(what) + ": version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  detail::verify_crc(bytes, what);
  detail::Reader r{bytes.first(bytes.size() - 4), 6, what};
  Checkpoint ck;
  const auto h = r.take(32);
  std::copy(h.begin(), h.end(), ck.config_hash.begin());
  const auto header_bytes = r.take(r.u32());
  try {
    const auto header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
    ck.config = CondenseConfig::from_json(header.at("config"));
    const auto& g = header.at("geometry");
    ck.geometry = {g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>(), g.at(2).get<std::size_t>()};
    ck.class_count = header.at("classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(what) + ": malformed header (" + e.what() + ")");
  }
  if (ck.config.hash() != ck.config_hash) {
    throw CompatibilityError(std::string(what) + ": embedded config hashes to " + to_hex(ck.config.hash()) +
                             " but the file records " + to_hex(ck.config_hash));
  }
  const std::size_t count = r.u32();
  for (std::size_t i = 0; i < count; ++i) {
    const auto name_bytes = r.take(r.u16());
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::size_t rank = r.u8();
    Shape shape;
    for (std::size_t a = 0; a < rank; ++a) shape.push_back(r.u32());
    const std::size_t n = shape_numel(shape);
    if (rank == 0 || n == 0) throw FormatError(std::string(what) + ": tensor '" + name + "' has an empty shape");
    const auto raw = r.take(n * 8);
    std::vector<double> values(n);
    for (std::size_t k = 0; k < n; ++k) values[k] = read_le_f64(raw, k * 8);
    ck.parameters.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.pos != r.bytes.size()) {
    throw FormatError(std::string(what) + ": " + std::to_string(r.bytes.size() - r.pos) + " trailing bytes");
  }
  return ck;
}

inline void save_checkpoint(const Pipeline& p, const CondenseConfig& cfg, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(p, cfg));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// Rebuilds the pipeline described by a checkpoint, with its stored weights.
// When `expected` is given, architecture-defining fields must agree with it.
inline Pipeline restore_pipeline(const Checkpoint& ck, const CondenseConfig* expected = nullptr) {
  if (expected) {
    auto mismatch = [](const char* key, auto want, auto got) {
      return CompatibilityError(std::string("checkpoint: ") + key + " is " + std::to_string(got) +
                                " in the checkpoint but " + std::to_string(want) + " in the config");
    };
    if (expected->latent_dim != ck.config.latent_dim) throw mismatch("latent_dim", expected->latent_dim, ck.config.latent_dim);
    if (expected->batch_per_class != ck.config.batch_per_class)
      throw mismatch("batch_per_class", expected->batch_per_class, ck.config.batch_per_class);
    if (expected->img_per_class != ck.config.img_per_class)
      throw mismatch("img_per_class", expected->img_per_class, ck.config.img_per_class);
    if (expected->classifier_width != ck.config.classifier_width)
      throw mismatch("classifier_width", expected->classifier_width, ck.config.classifier_width);
    if (expected->depth != ck.config.depth) {
      throw CompatibilityError(std::string("checkpoint: depth is ") + to_string(ck.config.depth) +
                               " in the checkpoint but " + to_string(expected->depth) + " in the config");
    }
  }
  Pipeline p(ck.config, ck.geometry, ck.class_count);
  NamedParameters target = p.named_parameters();
  if (target.size() != ck.parameters.size()) {
    throw CompatibilityError("checkpoint: holds " + std::to_string(ck.parameters.size()) + " tensors, pipeline has " +
                             std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& [name, src] = ck.parameters[i];
    auto& [want_name, dst] = target[i];
    if (name != want_name || src.shape() != dst.shape()) {
      throw CompatibilityError("checkpoint: tensor " + std::to_string(i) + " is '" + name + "' " +
                               shape_str(src.shape()) + ", pipeline expects '" + want_name + "' " +
                               shape_str(dst.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }
  return p;
}

}  // namespace koopcon
