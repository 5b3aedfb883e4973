#pragma once

// Method comparison over several seeds: every head with the default prompt
// count, then the OT head at N = 1, 2, 4, 8.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "plot/encoders.hpp"
#include "plot/trainer.hpp"

namespace plot {

struct AblationRow {
  std::string group;  // "methods" or "prompts"
  Method method;
  std::size_t n_prompts = 0;
  std::vector<double> accuracies;  // one per seed, in seed order
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one seed
};

struct AblationSpec {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  TrainConfig base;  // method, n_prompts and seed are overridden per run
  std::vector<std::size_t> prompt_counts{1, 2, 4, 8};
  // Fixed dataset; when empty, a dataset is generated per seed from
  // `generator` with its seed replaced.
  std::optional<Dataset> dataset;
  SynthConfig generator;
  std::size_t threads = 0;  // 0 or 1 = sequential
};

using AblationProgress = std::function<void(const std::string& line)>;

std::vector<AblationRow> run_ablation(const AblationSpec& spec,
                                      const AblationProgress& progress = {});

std::string ablation_csv(const std::vector<AblationRow>& rows,
                         const std::vector<std::uint64_t>& seeds);

}  // namespace plot
