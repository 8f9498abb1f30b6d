#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "koopcon/bytes.hpp"
#include "koopcon/error.hpp"
#include "koopcon/rng.hpp"
#include "koopcon/tensor.hpp"

namespace koopcon {

// Image set with one class label per sample. `images` is n×c×h×w in [0,1]
// and is left undefined for an empty set.
struct LabeledImages {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::string source_name;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t sample_numel() const { return images.numel() / images.dim(0); }

  std::vector<std::vector<std::size_t>> indices_by_class() const {
    std::vector<std::vector<std::size_t>> out(class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_count, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    return counts;
  }
};

struct ClassBatch {
  int class_id = 0;
  Tensor images;
  std::vector<std::size_t> sample_indices;
};

// Gathers samples by index (duplicates allowed) into a new set.
inline LabeledImages select_samples(const LabeledImages& data, std::span<const std::size_t> indices) {
  LabeledImages out;
  out.class_count = data.class_count;
  out.source_name = data.source_name;
  if (indices.empty()) return out;
  const std::size_t per = data.sample_numel();
  std::vector<double> pixels;
  pixels.reserve(indices.size() * per);
  for (std::size_t idx : indices) {
    if (idx >= data.size()) throw ContractError("select_samples: index " + std::to_string(idx) + " out of range");
    auto src = data.images.data().subspan(idx * per, per);
    pixels.insert(pixels.end(), src.begin(), src.end());
    out.labels.push_back(data.labels[idx]);
  }
  out.images = Tensor({indices.size(), data.channels(), data.height(), data.width()}, std::move(pixels));
  return out;
}

namespace detail {

constexpr std::uint32_t kIdxUbyte3 = 0x00000803;
constexpr std::uint32_t kIdxUbyte4 = 0x00000804;
constexpr std::uint32_t kIdxUbyte1 = 0x00000801;

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

inline Bytes maybe_gunzip(std::span<const std::uint8_t> bytes) {
  if (is_gzip(bytes)) return gunzip(bytes);
  return Bytes(bytes.begin(), bytes.end());
}

}  // namespace detail

// Parses an IDX image file (3-D u8, or 4-D n×c×h×w u8) plus its IDX label
// file. Either input may be gzip-compressed. Pixels are scaled by 1/255.
// class_count == 0 infers M as max(label)+1.
inline LabeledImages parse_idx(std::span<const std::uint8_t> image_file, std::span<const std::uint8_t> label_file,
                               std::size_t class_count = 0, std::string source_name = "idx") {
  const Bytes img = detail::maybe_gunzip(image_file);
  const Bytes lab = detail::maybe_gunzip(label_file);

  if (img.size() < 4) {
    throw LengthError("IDX image file: header needs at least 4 bytes, got " + std::to_string(img.size()));
  }
  const std::uint32_t magic = read_be32(img, 0);
  if (magic != detail::kIdxUbyte3 && magic != detail::kIdxUbyte4) {
    throw FormatError("IDX image file: bad magic " + detail::hex32(magic) + " at offset 0 (expected " +
                      detail::hex32(detail::kIdxUbyte3) + ")");
  }
  const std::size_t rank = magic & 0xFF;
  const std::size_t header = 4 + 4 * rank;
  if (img.size() < header) {
    throw LengthError("IDX image file: header needs " + std::to_string(header) + " bytes, got " +
                      std::to_string(img.size()));
  }
  std::vector<std::size_t> dims(rank);
  for (std::size_t i = 0; i < rank; ++i) dims[i] = read_be32(img, 4 + 4 * i);
  for (std::size_t i = 0; i < rank; ++i) {
    if (dims[i] == 0) throw FormatError("IDX image file: zero extent in dimension " + std::to_string(i));
  }
  const std::size_t n = dims[0];
  const std::size_t c = rank == 4 ? dims[1] : 1;
  const std::size_t h = dims[rank - 2], w = dims[rank - 1];
  const std::size_t expected = header + n * c * h * w;
  if (img.size() != expected) {
    throw LengthError("IDX image file: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(img.size()));
  }

  if (lab.size() < 8) {
    throw LengthError("IDX label file: header needs 8 bytes, got " + std::to_string(lab.size()));
  }
  const std::uint32_t lmagic = read_be32(lab, 0);
  if (lmagic != detail::kIdxUbyte1) {
    throw FormatError("IDX label file: bad magic " + detail::hex32(lmagic) + " at offset 0 (expected " +
                      detail::hex32(detail::kIdxUbyte1) + ")");
  }
  const std::size_t ln = read_be32(lab, 4);
  if (lab.size() != 8 + ln) {
    throw LengthError("IDX label file: expected " + std::to_string(8 + ln) + " bytes, got " +
                      std::to_string(lab.size()));
  }
  if (ln != n) {
    throw ConsistencyError("IDX files disagree: " + std::to_string(n) + " images but " + std::to_string(ln) +
                           " labels");
  }

  LabeledImages out;
  out.source_name = std::move(source_name);
  out.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.class_count = class_count ? class_count : static_cast<std::size_t>(max_label) + 1;
  if (static_cast<std::size_t>(max_label) >= out.class_count) {
    throw DataError("IDX label " + std::to_string(max_label) + " outside [0, " + std::to_string(out.class_count) +
                    ")");
  }
  std::vector<double> pixels(n * c * h * w);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = img[header + i] / 255.0;
  out.images = Tensor({n, c, h, w}, std::move(pixels));
  return out;
}

// Serializes to raw IDX bytes (images, labels). Pixels are quantized back to
// u8 with round-to-nearest, which is exact for sets parsed from IDX.
inline std::pair<Bytes, Bytes> write_idx(const LabeledImages& data) {
  if (data.empty()) throw ContractError("write_idx: empty set");
  Bytes img, lab;
  const bool mono = data.channels() == 1;
  write_be32(img, mono ? detail::kIdxUbyte3 : detail::kIdxUbyte4);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  if (!mono) write_be32(img, static_cast<std::uint32_t>(data.channels()));
  write_be32(img, static_cast<std::uint32_t>(data.height()));
  write_be32(img, static_cast<std::uint32_t>(data.width()));
  for (double v : data.images.data()) {
    img.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_be32(lab, detail::kIdxUbyte1);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.push_back(static_cast<std::uint8_t>(l));
  return {std::move(img), std::move(lab)};
}

inline constexpr std::size_t kCifarRecordBytes = 3073;

// CIFAR-10 binary batch: records of 1 label byte + 3×32×32 channel-planar pixels.
inline LabeledImages parse_cifar10(std::span<const std::uint8_t> batch_file, std::string source_name = "cifar10") {
  const Bytes bytes = detail::maybe_gunzip(batch_file);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 batch: " + std::to_string(bytes.size()) + " bytes = " +
                      std::to_string(bytes.size() / kCifarRecordBytes) + " x 3073 + " +
                      std::to_string(bytes.size() % kCifarRecordBytes) + "; expected a positive multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  LabeledImages out;
  out.source_name = std::move(source_name);
  out.class_count = 10;
  out.labels.resize(n);
  std::vector<double> pixels(n * 3072);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * kCifarRecordBytes;
    const int label = bytes[base];
    if (label >= 10) {
      throw DataError("CIFAR-10 batch: record " + std::to_string(r) + " has label " + std::to_string(label));
    }
    out.labels[r] = label;
    for (std::size_t i = 0; i < 3072; ++i) pixels[r * 3072 + i] = bytes[base + 1 + i] / 255.0;
  }
  out.images = Tensor({n, 3, 32, 32}, std::move(pixels));
  return out;
}

inline Bytes write_cifar10(const LabeledImages& data) {
  if (data.empty() || data.images.shape() != Shape{data.size(), 3, 32, 32}) {
    throw ContractError("write_cifar10: expected n x 3 x 32 x 32 images");
  }
  Bytes out;
  out.reserve(data.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < data.size(); ++r) {
    out.push_back(static_cast<std::uint8_t>(data.labels[r]));
    for (std::size_t i = 0; i < 3072; ++i) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(data.images.at(r * 3072 + i), 0.0, 1.0) * 255.0)));
    }
  }
  return out;
}

inline LabeledImages concat_sets(const std::vector<LabeledImages>& parts) {
  if (parts.empty()) throw ContractError("concat_sets: no inputs");
  LabeledImages out;
  out.class_count = parts[0].class_count;
  out.source_name = parts[0].source_name;
  std::vector<double> pixels;
  Shape shape;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (shape.empty()) shape = p.images.shape();
    else if (p.channels() != shape[1] || p.height() != shape[2] || p.width() != shape[3]) {
      throw DimensionError("concat_sets: geometry mismatch " + shape_str(shape) + " vs " +
                           shape_str(p.images.shape()));
    }
    pixels.insert(pixels.end(), p.images.data().begin(), p.images.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.class_count = std::max(out.class_count, p.class_count);
  }
  if (!out.labels.empty()) {
    shape[0] = out.labels.size();
    out.images = Tensor(shape, std::move(pixels));
  }
  return out;
}

namespace detail {

inline std::filesystem::path find_data_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* suffix : {"", ".gz"}) {
    auto p = dir / (stem + suffix);
    if (std::filesystem::exists(p)) return p;
  }
  // torchvision-style alternate spelling
  std::string dotted = stem;
  if (auto pos = dotted.rfind("-ubyte"); pos != std::string::npos) dotted.replace(pos, 1, ".");
  for (const char* suffix : {"", ".gz"}) {
    auto p = dir / (dotted + suffix);
    if (std::filesystem::exists(p)) return p;
  }
  throw IoError("dataset file " + stem + "[.gz] not found under " + dir.string());
}

}  // namespace detail

// MNIST / FashionMNIST under their standard file names. split: "train" or "test".
inline LabeledImages load_mnist_dir(const std::filesystem::path& dir, const std::string& split,
                                    const std::string& source_name = "mnist") {
  const std::string prefix = split == "train" ? "train" : "t10k";
  if (split != "train" && split != "test") throw ConfigError("unknown split '" + split + "'");
  const Bytes img = read_file(detail::find_data_file(dir, prefix + "-images-idx3-ubyte"));
  const Bytes lab = read_file(detail::find_data_file(dir, prefix + "-labels-idx1-ubyte"));
  return parse_idx(img, lab, 10, source_name + ":" + split);
}

inline LabeledImages load_cifar10_dir(const std::filesystem::path& dir, const std::string& split) {
  std::vector<LabeledImages> parts;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) {
      parts.push_back(parse_cifar10(read_file(detail::find_data_file(dir, "data_batch_" + std::to_string(i) + ".bin")),
                                    "cifar10:train"));
    }
  } else if (split == "test") {
    parts.push_back(parse_cifar10(read_file(detail::find_data_file(dir, "test_batch.bin")), "cifar10:test"));
  } else {
    throw ConfigError("unknown split '" + split + "'");
  }
  return concat_sets(parts);
}

// Draws exactly n_b samples of one class: without replacement when the
// class has at least n_b members, with replacement otherwise.
inline ClassBatch class_batch(const LabeledImages& data, int class_id, std::size_t n_b, std::uint64_t seed) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= data.class_count) {
    throw ContractError("class_batch: class " + std::to_string(class_id) + " outside [0, " +
                        std::to_string(data.class_count) + ")");
  }
  if (n_b == 0) throw ContractError("class_batch: batch size must be positive");
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == class_id) members.push_back(i);
  }
  if (members.empty()) throw DataError("class " + std::to_string(class_id) + " has no samples");

  Rng rng(seed);
  ClassBatch batch;
  batch.class_id = class_id;
  if (members.size() >= n_b) {
    rng.shuffle(std::span(members));
    batch.sample_indices.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_b));
  } else {
    for (std::size_t i = 0; i < n_b; ++i) batch.sample_indices.push_back(members[rng.below(members.size())]);
  }
  batch.images = select_samples(data, batch.sample_indices).images;
  return batch;
}

struct HoldoutSplit {
  LabeledImages subset;
  LabeledImages rest;
};

// Exactly per_class samples of every class go to `subset`; the remainder to `rest`.
inline HoldoutSplit holdout_split(const LabeledImages& data, std::size_t per_class, std::uint64_t seed) {
  auto by_class = data.indices_by_class();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < per_class) {
      throw DataError("holdout_split: class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " samples, need " + std::to_string(per_class));
    }
  }
  Rng rng(seed);
  std::vector<std::size_t> picked, rest;
  for (auto& members : by_class) {
    rng.shuffle(std::span(members));
    picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
    rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(per_class), members.end());
  }
  std::sort(picked.begin(), picked.end());
  std::sort(rest.begin(), rest.end());
  return {select_samples(data, picked), select_samples(data, rest)};
}

// Two or more classes of constant-valued images: class k is filled with
// k/(classes-1), plus optional uniform noise clipped to [0,1].
inline LabeledImages make_constant_toy(std::size_t classes, std::size_t per_class, std::size_t c, std::size_t h,
                                       std::size_t w, std::uint64_t seed, double noise = 0.0) {
  if (classes < 1 || per_class < 1) throw ContractError("make_constant_toy: need at least one class and sample");
  Rng rng(seed);
  LabeledImages out;
  out.class_count = classes;
  out.source_name = "toy";
  const std::size_t per = c * h * w;
  std::vector<double> pixels;
  pixels.reserve(classes * per_class * per);
  for (std::size_t k = 0; k < classes; ++k) {
    const double level = classes == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(classes - 1);
    for (std::size_t i = 0; i < per_class; ++i) {
      out.labels.push_back(static_cast<int>(k));
      for (std::size_t p = 0; p < per; ++p) {
        const double v = noise > 0.0 ? level + rng.uniform(-noise, noise) : level;
        pixels.push_back(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  out.images = Tensor({classes * per_class, c, h, w}, std::move(pixels));
  return out;
}

}  // namespace koopcon
