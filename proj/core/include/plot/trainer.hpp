#pragma once

// Few-shot prompt training (plain SGD, warmup then cosine schedule),
// evaluation and the finite-difference gradient audit.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "plot/encoders.hpp"
#include "plot/head.hpp"

namespace plot {

struct TrainConfig {
  double lr = 0.002;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double warmup_lr = 1e-5;
  std::uint64_t seed = 0;
  Method method;
  HeadConfig head;
  bool shuffle = true;
  std::size_t ctx_len = 16;
  // Frozen encoder and class tokens come from this seed when set, otherwise
  // from the dataset's backbone seed.
  std::optional<std::uint64_t> backbone_seed;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;

  bool operator==(const EpochLog&) const = default;
};

struct ModelState {
  PromptBank bank;
  TextEncoder encoder;
  HeadConfig head;
  Method method;
  std::vector<EpochLog> train_log;
  std::uint64_t seed = 0;
  std::uint64_t backbone_seed = 0;
};

// epoch 0: warmup_lr; epoch e >= 1: 0.5 lr (1 + cos(pi (e-1) / max(1, epochs-1))).
double lr_at(const TrainConfig& cfg, std::size_t epoch);

// params <- params - lr * grads
void sgd_step(Tensor3& params, const Tensor3& grads, double lr);

// Untrained model for a dataset with `n_classes` classes of width `feat_dim`.
// COOP always gets a single prompt.
ModelState init_model(std::size_t n_classes, std::size_t feat_dim,
                      std::uint64_t dataset_backbone_seed, const TrainConfig& cfg);

// Called after every epoch; used for progress output.
using EpochCallback = void (*)(const EpochLog&, void* user);

ModelState train(const Dataset& data, const TrainConfig& cfg, EpochCallback on_epoch = nullptr,
                 void* user = nullptr);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_count;
  std::size_t n_images = 0;
  double mean_sinkhorn_iterations = 0.0;  // 0 for heads without OT
  double seconds_total = 0.0;
  double seconds_per_image = 0.0;
};

// Classifies `images` by the highest class probability.
EvalReport evaluate(std::span<const Image> images, const ModelState& model);

// Test split of `data`.
EvalReport evaluate(const Dataset& data, const ModelState& model);

struct GradCheckReport {
  std::size_t coordinates = 0;  // sampled
  std::size_t compared = 0;     // used in the error statistics
  std::size_t saturated = 0;    // both gradients ~0, excluded
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double max_abs_error = 0.0;
};

inline constexpr double kSaturationThreshold = 1e-12;

// Central finite differences of the frozen-plan loss at `n_coords` random
// context coordinates against the analytic gradient. Relative error is
// |a - n| / max(|a|, |n|).
GradCheckReport grad_check(const ModelState& model, std::span<const Image* const> batch,
                           double eps, std::size_t n_coords, std::uint64_t seed);

}  // namespace plot
