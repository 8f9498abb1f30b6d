#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "koopcon/error.hpp"
#include "koopcon/ops.hpp"
#include "koopcon/rng.hpp"
#include "koopcon/tensor.hpp"

namespace koopcon {

struct ImageGeometry {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageGeometry&) const = default;
};

inline std::string geometry_str(const ImageGeometry& g) {
  return std::to_string(g.channels) + "x" + std::to_string(g.height) + "x" + std::to_string(g.width);
}

inline void check_geometry(const Tensor& x, const ImageGeometry& g, const char* who) {
  if (x.rank() != 4 || x.dim(1) != g.channels || x.dim(2) != g.height || x.dim(3) != g.width) {
    throw DimensionError(std::string(who) + ": input " + shape_str(x.shape()) + " does not match geometry n x " +
                         geometry_str(g));
  }
}

enum class DepthPreset { shallow, medium, deep };

inline const char* to_string(DepthPreset p) {
  switch (p) {
    case DepthPreset::shallow: return "shallow";
    case DepthPreset::medium: return "medium";
    case DepthPreset::deep: return "deep";
  }
  return "?";
}

inline DepthPreset parse_depth_preset(const std::string& s) {
  if (s == "shallow") return DepthPreset::shallow;
  if (s == "medium") return DepthPreset::medium;
  if (s == "deep") return DepthPreset::deep;
  throw ConfigError("depth must be one of shallow|medium|deep, got '" + s + "'");
}

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

namespace nn {

// He-style uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad();
  return t;
}

inline Tensor zeros_param(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad();
  return t;
}

struct Dense {
  Tensor weight;  // in × out
  Tensor bias;    // out

  Dense() = default;
  Dense(std::size_t in, std::size_t out, Rng& rng) : weight(he_uniform({in, out}, in, rng)), bias(zeros_param({out})) {}

  Tensor operator()(const Tensor& x) const { return add_row_broadcast(matmul(x, weight), bias); }
};

struct Conv {
  Tensor weight;  // f × c × k × k
  Tensor bias;
  std::size_t stride = 1, padding = 0;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_, Rng& rng)
      : weight(he_uniform({out, in, k, k}, in * k * k, rng)), bias(zeros_param({out})), stride(stride_),
        padding(padding_) {}

  Tensor operator()(const Tensor& x) const { return add_channel_bias(conv2d(x, weight, stride, padding), bias); }
};

struct ConvTranspose {
  Tensor weight;  // cin × cout × k × k
  Tensor bias;
  std::size_t stride = 1, padding = 0;

  ConvTranspose() = default;
  ConvTranspose(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_, Rng& rng)
      : weight(he_uniform({in, out, k, k}, in * k * k, rng)), bias(zeros_param({out})), stride(stride_),
        padding(padding_) {}

  Tensor operator()(const Tensor& x) const {
    return add_channel_bias(conv_transpose2d(x, weight, stride, padding), bias);
  }
};

inline std::size_t strided_extent(std::size_t in) { return (in + 2 - 3) / 2 + 1; }

}  // namespace nn

// Convolutional autoencoder φ / φ⁻¹. Layer plan per preset (encoder + decoder
// conv layers): shallow 3+2, medium 4+3, deep 5+4. The first three encoder
// convs downsample by 2; the decoder starts from a dense projection to
// 128×(h/4)×(w/4) and ends with two stride-2 transposed convs and a sigmoid.
class EncoderDecoder {
 public:
  static constexpr std::size_t kDecoderBaseChannels = 128;

  EncoderDecoder(DepthPreset preset, ImageGeometry geometry, std::size_t latent_dim, std::uint64_t seed)
      : preset_(preset), geometry_(geometry), latent_dim_(latent_dim) {
    if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
    if (geometry.height % 4 != 0 || geometry.width % 4 != 0 || geometry.height < 8 || geometry.width < 8) {
      throw ConfigError("autoencoder needs image sides divisible by 4 and at least 8, got " + geometry_str(geometry));
    }
    if (latent_dim >= geometry.numel()) {
      throw ConfigError("latent_dim " + std::to_string(latent_dim) + " must be below input size " +
                        std::to_string(geometry.numel()));
    }
    Rng rng(Rng::mix(seed, 0xE1C0DE));
    const std::size_t enc_layers = encoder_conv_count(preset);
    const std::size_t widths[] = {32, 64, 128, 128, 128};
    std::size_t in_ch = geometry.channels, h = geometry.height, w = geometry.width;
    for (std::size_t i = 0; i < enc_layers; ++i) {
      const std::size_t stride = i < 3 ? 2 : 1;
      encoder_convs_.emplace_back(in_ch, widths[i], 3, stride, 1, rng);
      in_ch = widths[i];
      if (stride == 2) {
        h = nn::strided_extent(h);
        w = nn::strided_extent(w);
      }
    }
    enc_shape_ = {in_ch, h, w};
    encoder_head_ = nn::Dense(in_ch * h * w, latent_dim, rng);

    const std::size_t bh = geometry.height / 4, bw = geometry.width / 4;
    dec_base_ = {kDecoderBaseChannels, bh, bw};
    decoder_head_ = nn::Dense(latent_dim, kDecoderBaseChannels * bh * bw, rng);
    const std::size_t extra = decoder_conv_count(preset) - 2;
    for (std::size_t i = 0; i < extra; ++i) {
      decoder_convs_.emplace_back(kDecoderBaseChannels, kDecoderBaseChannels, 3, 1, 1, rng);
    }
    decoder_convs_.emplace_back(kDecoderBaseChannels, 64, 4, 2, 1, rng);
    decoder_convs_.emplace_back(64, geometry.channels, 4, 2, 1, rng);
  }

  static std::size_t encoder_conv_count(DepthPreset p) {
    switch (p) {
      case DepthPreset::shallow: return 3;
      case DepthPreset::medium: return 4;
      case DepthPreset::deep: return 5;
    }
    return 0;
  }

  static std::size_t decoder_conv_count(DepthPreset p) { return encoder_conv_count(p) - 1; }

  std::size_t conv_layer_count() const { return encoder_convs_.size() + decoder_convs_.size(); }

  // n×c×h×w → n×d
  Tensor encode(const Tensor& x) const {
    check_geometry(x, geometry_, "encode");
    Tensor h = x;
    for (const auto& conv : encoder_convs_) h = relu(conv(h));
    h = reshape(h, {x.dim(0), enc_shape_[0] * enc_shape_[1] * enc_shape_[2]});
    return encoder_head_(h);
  }

  // k×d → k×c×h×w in [0,1]
  Tensor decode(const Tensor& y) const {
    if (y.rank() != 2 || y.dim(1) != latent_dim_) {
      throw DimensionError("decode: latent batch " + shape_str(y.shape()) + " needs width " +
                           std::to_string(latent_dim_));
    }
    Tensor h = relu(decoder_head_(y));
    h = reshape(h, {y.dim(0), dec_base_[0], dec_base_[1], dec_base_[2]});
    for (std::size_t i = 0; i + 1 < decoder_convs_.size(); ++i) h = relu(decoder_convs_[i](h));
    return sigmoid(decoder_convs_.back()(h));
  }

  NamedParameters named_parameters() const {
    NamedParameters out;
    for (std::size_t i = 0; i < encoder_convs_.size(); ++i) {
      out.emplace_back("encoder.conv" + std::to_string(i) + ".weight", encoder_convs_[i].weight);
      out.emplace_back("encoder.conv" + std::to_string(i) + ".bias", encoder_convs_[i].bias);
    }
    out.emplace_back("encoder.head.weight", encoder_head_.weight);
    out.emplace_back("encoder.head.bias", encoder_head_.bias);
    out.emplace_back("decoder.head.weight", decoder_head_.weight);
    out.emplace_back("decoder.head.bias", decoder_head_.bias);
    for (std::size_t i = 0; i < decoder_convs_.size(); ++i) {
      out.emplace_back("decoder.convt" + std::to_string(i) + ".weight", decoder_convs_[i].weight);
      out.emplace_back("decoder.convt" + std::to_string(i) + ".bias", decoder_convs_[i].bias);
    }
    return out;
  }

  std::vector<Tensor> encoder_parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_parameters())
      if (name.starts_with("encoder.")) out.push_back(t);
    return out;
  }

  std::vector<Tensor> decoder_parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_parameters())
      if (name.starts_with("decoder.")) out.push_back(t);
    return out;
  }

  DepthPreset preset() const { return preset_; }
  const ImageGeometry& geometry() const { return geometry_; }
  std::size_t latent_dim() const { return latent_dim_; }

 private:
  DepthPreset preset_;
  ImageGeometry geometry_;
  std::size_t latent_dim_;
  std::vector<nn::Conv> encoder_convs_;
  std::array<std::size_t, 3> enc_shape_{};
  nn::Dense encoder_head_;
  nn::Dense decoder_head_;
  std::array<std::size_t, 3> dec_base_{};
  std::vector<nn::ConvTranspose> decoder_convs_;
};

// Single-head self-attention SA followed by the linear condensation map T,
// realized as an n′×n_b mixing matrix. One head is shared by every class.
class CondenserHead {
 public:
  CondenserHead(std::size_t latent_dim, std::size_t batch_size, std::size_t condensed_size, std::uint64_t seed)
      : d_(latent_dim), n_b_(batch_size), n_prime_(condensed_size) {
    if (d_ == 0 || n_b_ == 0 || n_prime_ == 0) throw ConfigError("condenser head extents must be positive");
    Rng rng(Rng::mix(seed, 0x5A7E));
    const double qk = std::sqrt(3.0 / static_cast<double>(d_));
    auto uniform_param = [&](Shape shape, double lo, double hi) {
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = rng.uniform(lo, hi);
      Tensor t(std::move(shape), std::move(v));
      t.set_requires_grad();
      return t;
    };
    w_query_ = uniform_param({d_, d_}, -qk, qk);
    w_key_ = uniform_param({d_, d_}, -qk, qk);
    // Value projection starts near identity so Y′ begins in the encoder's latent space.
    w_value_ = uniform_param({d_, d_}, -0.01, 0.01);
    for (std::size_t i = 0; i < d_; ++i) w_value_.data()[i * d_ + i] += 1.0;
    // Rows start as noisy averages over the batch (row sums ≈ 1).
    mixing_ = uniform_param({n_prime_, n_b_}, 0.0, 2.0 / static_cast<double>(n_b_));
  }

  // softmax(QKᵀ/√d)·V with Q = yW_Q, K = yW_K, V = yW_V.
  Tensor self_attention(const Tensor& y) const {
    if (y.rank() != 2 || y.dim(1) != d_) {
      throw DimensionError("self_attention: latent batch " + shape_str(y.shape()) + " needs width " +
                           std::to_string(d_));
    }
    const Tensor q = matmul(y, w_query_);
    const Tensor k = matmul(y, w_key_);
    const Tensor v = matmul(y, w_value_);
    const Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_)));
    return matmul(softmax(logits, 1), v);
  }

  // Y′ = M · y_att; the row count must equal the configured n_b.
  Tensor condense_map(const Tensor& y_att) const {
    if (y_att.rank() != 2 || y_att.dim(0) != n_b_ || y_att.dim(1) != d_) {
      throw DimensionError("condense_map: expected " + std::to_string(n_b_) + "x" + std::to_string(d_) +
                           " latents, got " + shape_str(y_att.shape()));
    }
    return matmul(mixing_, y_att);
  }

  Tensor operator()(const Tensor& y) const { return condense_map(self_attention(y)); }

  NamedParameters named_parameters() const {
    return {{"attention.query", w_query_},
            {"attention.key", w_key_},
            {"attention.value", w_value_},
            {"condense.mixing", mixing_}};
  }

  std::vector<Tensor> attention_parameters() const { return {w_query_, w_key_, w_value_}; }
  std::vector<Tensor> mixing_parameters() const { return {mixing_}; }

  Tensor& w_query() { return w_query_; }
  Tensor& w_key() { return w_key_; }
  Tensor& w_value() { return w_value_; }
  Tensor& mixing() { return mixing_; }

  std::size_t latent_dim() const { return d_; }
  std::size_t batch_size() const { return n_b_; }
  std::size_t condensed_size() const { return n_prime_; }

 private:
  std::size_t d_, n_b_, n_prime_;
  Tensor w_query_, w_key_, w_value_, mixing_;
};

// Three blocks of conv3×3 → ReLU → 2×2 average pool, then a dense head to M logits.
class ConvNetClassifier {
 public:
  ConvNetClassifier(ImageGeometry geometry, std::size_t classes, std::size_t width, std::uint64_t seed)
      : geometry_(geometry), classes_(classes), width_(width) {
    if (classes == 0 || width == 0) throw ConfigError("classifier needs positive class count and width");
    if (geometry.height < 8 || geometry.width < 8) {
      throw ConfigError("classifier needs images of at least 8x8, got " + geometry_str(geometry));
    }
    Rng rng(Rng::mix(seed, 0xC1A5));
    std::size_t in = geometry.channels, h = geometry.height, w = geometry.width;
    for (int b = 0; b < 3; ++b) {
      blocks_.emplace_back(in, width, 3, 1, 1, rng);
      in = width;
      h /= 2;
      w /= 2;
    }
    flat_ = width * h * w;
    head_ = nn::Dense(flat_, classes, rng);
  }

  Tensor operator()(const Tensor& x) const {
    check_geometry(x, geometry_, "classify");
    Tensor h = x;
    for (const auto& conv : blocks_) h = avg_pool2d(relu(conv(h)), 2);
    return head_(reshape(h, {x.dim(0), flat_}));
  }

  NamedParameters named_parameters() const {
    NamedParameters out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      out.emplace_back("classifier.conv" + std::to_string(i) + ".weight", blocks_[i].weight);
      out.emplace_back("classifier.conv" + std::to_string(i) + ".bias", blocks_[i].bias);
    }
    out.emplace_back("classifier.head.weight", head_.weight);
    out.emplace_back("classifier.head.bias", head_.bias);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t class_count() const { return classes_; }
  std::size_t width() const { return width_; }
  const ImageGeometry& geometry() const { return geometry_; }

 private:
  ImageGeometry geometry_;
  std::size_t classes_, width_, flat_ = 0;
  std::vector<nn::Conv> blocks_;
  nn::Dense head_;
};

// argmax per row of an n×M logit matrix.
inline std::vector<int> predict_labels(const Tensor& logits) {
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (logits.data()[i * m + j] > logits.data()[i * m + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace koopcon
