#pragma once

// Persistence.
//
// Dataset file (little-endian throughout):
//   "PLOTFS01"                     8 bytes
//   n_images, M, C, K              u32 each
//   per image: label (u32), M*C float32 locals (row-major), C float32 global
// A JSON sidecar "<path>.manifest.json" records the train/test split, class
// names, the generator config and seeds. Features are narrowed to float32 on
// save; everything else round-trips exactly.
//
// Model file: JSON, version 1. Doubles are written in shortest round-trip
// form, so load(save(m)) is bit-exact.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "plot/encoders.hpp"
#include "plot/head.hpp"
#include "plot/trainer.hpp"

namespace plot {

inline constexpr char kDatasetMagic[] = "PLOTFS01";
inline constexpr int kModelFormatVersion = 1;

std::filesystem::path manifest_path(const std::filesystem::path& dataset);

// Spatial layout of the M local features, when M is a perfect square.
std::optional<std::pair<std::size_t, std::size_t>> feature_grid(std::size_t m);

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Rounds every feature through float32, i.e. what a save/load cycle yields.
Dataset narrowed_to_float32(const Dataset& d);

void save_model(const ModelState& m, const std::filesystem::path& path);
ModelState load_model(const std::filesystem::path& path);

std::string model_to_json(const ModelState& m);
ModelState model_from_json(const std::string& text);

void save_eval_report(const EvalReport& r, const ModelState& m,
                      const std::filesystem::path& path);

struct PlanExportResult {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> notices;
};

// One CSV (M rows, plan column) and, when `grid` is given and H*W = M, one P5
// graymap per (class, prompt), named img{i}_class{k}_prompt{n}. `only_class`
// restricts the export to a single class.
PlanExportResult export_plan(const ClassScores& scores, std::size_t image_index,
                             std::optional<std::pair<std::size_t, std::size_t>> grid,
                             const std::filesystem::path& out_dir,
                             std::optional<std::size_t> only_class = std::nullopt);

// Max-normalised 8-bit pixels for one plan column; an all-zero column maps
// to zeros.
std::vector<std::uint8_t> column_to_pixels(const TransportPlan& plan, std::size_t column);

}  // namespace plot
