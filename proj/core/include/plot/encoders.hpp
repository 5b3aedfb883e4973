#pragma once

// Prompt parameterisation, the frozen toy text encoder and the synthetic
// visual-feature generator that stands in for an image backbone.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plot/numerics.hpp"

namespace plot {

// Dense N x L x D tensor, row-major with D fastest.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t n, std::size_t l, std::size_t d, double fill = 0.0);
  Tensor3(std::size_t n, std::size_t l, std::size_t d, std::vector<double> data);

  std::size_t dim0() const { return n_; }
  std::size_t dim1() const { return l_; }
  std::size_t dim2() const { return d_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * l_ + j) * d_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * l_ + j) * d_ + k];
  }

  std::span<double> token(std::size_t i, std::size_t j) {
    return {data_.data() + (i * l_ + j) * d_, d_};
  }
  std::span<const double> token(std::size_t i, std::size_t j) const {
    return {data_.data() + (i * l_ + j) * d_, d_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t l_ = 0;
  std::size_t d_ = 0;
  std::vector<double> data_;
};

// Learnable context ctx (N x L x d_e) shared by all classes, plus one frozen
// token per class (K x d_e).
struct PromptBank {
  Tensor3 ctx;
  Mat class_tokens;

  std::size_t n_prompts() const { return ctx.dim0(); }
  std::size_t ctx_len() const { return ctx.dim1(); }
  std::size_t embed_dim() const { return ctx.dim2(); }
  std::size_t n_classes() const { return class_tokens.rows(); }

  void validate() const;
};

// Frozen linear text encoder: g = normalize(proj^T pool), proj is d_e x C.
struct TextEncoder {
  Mat proj;

  std::size_t embed_dim() const { return proj.rows(); }
  std::size_t feat_dim() const { return proj.cols(); }

  // Gaussian entries scaled by 1/sqrt(d_e).
  static TextEncoder seeded(std::uint64_t seed, std::size_t embed_dim, std::size_t feat_dim);
};

// Per class k, an N x C matrix of unit-norm prompt features.
using PromptFeatures = std::vector<Mat>;

PromptFeatures encode_prompts(const PromptBank& bank, const TextEncoder& enc);

// Reverse-mode gradient of a scalar with respect to ctx, given its gradient
// with respect to every encoded prompt feature. Class tokens get nothing.
Tensor3 encode_prompts_backward(const PromptFeatures& grad_g, const PromptBank& bank,
                                const TextEncoder& enc);

enum class ContextInit { random, preset_ensemble };

inline constexpr double kContextInitStd = 0.02;
inline constexpr std::size_t kPresetCount = 4;

// Names of the hand-written prompts whose hashes seed the preset tensors.
std::span<const std::string_view> preset_names();

Tensor3 init_context(ContextInit strategy, std::size_t n_prompts, std::size_t ctx_len,
                     std::size_t embed_dim, Rng& rng);

// Frozen text side of the synthetic world: encoder plus class tokens. Both
// the generator and freshly initialised models build it from the same seed.
struct Backbone {
  TextEncoder encoder;
  Mat class_tokens;
};

Backbone make_backbone(std::uint64_t seed, std::size_t n_classes, std::size_t feat_dim);

struct SynthConfig {
  std::size_t n_classes = 5;
  std::size_t n_attributes = 4;
  std::size_t shots = 16;
  std::size_t test_per_class = 20;
  std::size_t m_locals = 49;
  std::size_t feat_dim = 64;
  double noise_sigma = 0.1;
  std::size_t background_prototypes = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kBackgroundProbability = 0.3;

struct Image {
  Mat locals;  // M x C, unit rows
  Vec global;  // C, unit norm
  std::uint32_t label = 0;

  bool operator==(const Image&) const = default;
};

struct Dataset {
  std::vector<Image> images;  // training images first, then test images
  std::size_t n_train = 0;
  std::size_t n_classes = 0;
  SynthConfig config;
  std::uint64_t backbone_seed = 0;

  std::span<const Image> train() const { return {images.data(), n_train}; }
  std::span<const Image> test() const {
    return {images.data() + n_train, images.size() - n_train};
  }
  std::size_t m_locals() const { return images.empty() ? 0 : images.front().locals.rows(); }
  std::size_t feat_dim() const { return images.empty() ? 0 : images.front().global.size(); }
};

std::uint64_t backbone_seed_for(const SynthConfig& cfg);

// Prototypes of the generator's world for a given config.
struct SynthWorld {
  std::vector<Mat> attributes;  // per class, A x C unit rows
  Mat background;               // bg x C unit rows (0 rows when bg = 0)
};

SynthWorld synth_world(const SynthConfig& cfg);

Dataset gen_synthetic(const SynthConfig& cfg);

}  // namespace plot
