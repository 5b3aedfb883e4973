#pragma once

// Classification heads over prompt features: the OT head, the single-prompt
// cosine baseline and the ablation variants, with their losses and exact
// context gradients.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plot/encoders.hpp"
#include "plot/numerics.hpp"
#include "plot/ot.hpp"

namespace plot {

// PLOT: OT distance between local features and N prompts.
// COOP: cosine between the global feature and a single prompt.
// G, G_V, G_E: global feature against the normalised prompt mean.
// M, M_V: mean cost over all (local feature, prompt) pairs.
// *_V add a prompt-diversity penalty; G_E starts from the preset prompts.
enum class MethodTag { plot, coop, g, g_v, g_e, m, m_v };

inline constexpr MethodTag kAllMethods[] = {MethodTag::plot, MethodTag::coop, MethodTag::g,
                                            MethodTag::g_v,  MethodTag::g_e,  MethodTag::m,
                                            MethodTag::m_v};

// "PLOT", "COOP", "G", "G+V", "G+E", "M", "M+V"
std::string_view method_name(MethodTag tag);

// Case-insensitive; accepts the display names and '_' for '+'.
MethodTag parse_method(std::string_view text);

inline constexpr double kDefaultVarWeight = 0.1;

struct Method {
  MethodTag tag = MethodTag::plot;
  double var_weight = 0.0;

  // var_weight = kDefaultVarWeight for the *_V variants, 0 otherwise.
  static Method of(MethodTag tag);

  bool uses_local_features() const;
  bool has_variance_term() const { return tag == MethodTag::g_v || tag == MethodTag::m_v; }
  ContextInit context_init() const;
  void validate() const;
};

struct HeadConfig {
  double tau = 0.01;
  SinkhornConfig sinkhorn;
  std::size_t n_prompts = 4;
  // Report <T,C> - lambda*h(T) instead of <T,C> as the OT distance.
  bool entropic_distance = false;

  void validate() const;
};

struct ClassScores {
  Vec distances;
  Vec probabilities;
  std::optional<std::vector<TransportPlan>> plans;  // OT head only
  std::vector<int> iterations;                      // OT head only, per class
};

inline constexpr double kUnitNormTolerance = 1e-6;
inline constexpr double kProbabilityFloor = 1e-12;

// C = 1 - F G^T. Rows of both inputs must be unit length.
CostMatrix cost_matrix(const Mat& f, const Mat& g_k);

ClassScores plot_distances(const Mat& f, const PromptFeatures& g, const HeadConfig& cfg);

// softmax((1 - d) / tau)
Vec class_probabilities(std::span<const double> distances, double tau);

// g_single is K x C (one prompt per class).
ClassScores coop_logits(std::span<const double> f_global, const Mat& g_single, double tau);

// 1 - cos(f, normalize(mean of the rows of g_k))
double ensemble_distance(std::span<const double> f_global, const Mat& g_k);

double mean_pair_distance(const Mat& f, const Mat& g_k);

// Mean cosine similarity over prompt pairs; 0 when N = 1.
double variance_regularizer(const Mat& g_k);

double cross_entropy_loss(std::span<const Vec> probs, std::span<const std::uint32_t> labels);

ClassScores score_image(const Image& image, const PromptFeatures& g, const Method& method,
                        const HeadConfig& cfg);

// Plans per batch image, per class.
using FrozenPlans = std::vector<std::vector<TransportPlan>>;

struct LossGrad {
  double loss = 0.0;
  Tensor3 grad;       // d loss / d ctx
  FrozenPlans plans;  // plans used for the OT head (empty otherwise)
};

// Mean cross-entropy over the batch plus var_weight times the mean per-class
// variance penalty. For the OT head the plans are solved (or taken from
// `frozen`) and held fixed, so the gradient flows through the cost only.
LossGrad loss_and_grad(std::span<const Image* const> batch, const PromptBank& bank,
                       const TextEncoder& enc, const Method& method, const HeadConfig& cfg,
                       const FrozenPlans* frozen = nullptr);

// Forward pass of loss_and_grad only.
double batch_loss(std::span<const Image* const> batch, const PromptBank& bank,
                  const TextEncoder& enc, const Method& method, const HeadConfig& cfg,
                  const FrozenPlans* frozen = nullptr);

}  // namespace plot
