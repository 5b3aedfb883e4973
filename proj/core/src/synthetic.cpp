#include <cmath>
#include <string>

#include "plot/encoders.hpp"
#include "plot/errors.hpp"

namespace plot {
namespace {

// Attribute prototypes sit near the class anchor normalize(proj^T c_k) but
// are dominated by "views" shared across classes, so that no single feature
// direction identifies a class.
constexpr double kAnchorWeight = 0.2;
constexpr double kJitterWeight = 0.2;

}  // namespace

void SynthConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValueError(std::string("SynthConfig: ") + name + " must be at least 1");
  };
  positive(n_classes, "n_classes");
  positive(n_attributes, "n_attributes");
  positive(shots, "shots");
  positive(test_per_class, "test_per_class");
  positive(m_locals, "m_locals");
  positive(feat_dim, "feat_dim");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ValueError("SynthConfig: noise_sigma must be non-negative");
  }
}

std::uint64_t backbone_seed_for(const SynthConfig& cfg) {
  return derive_seed(cfg.seed, "backbone");
}

SynthWorld synth_world(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t c_dim = cfg.feat_dim;
  const Backbone backbone = make_backbone(backbone_seed_for(cfg), cfg.n_classes, c_dim);
  const Mat anchors = l2_normalize_rows(matmul(backbone.class_tokens, backbone.encoder.proj));

  Rng rng(derive_seed(cfg.seed, "prototypes"));
  Mat views(cfg.n_attributes, c_dim);
  for (double& x : views.values()) x = rng.gaussian();
  views = l2_normalize_rows(views);

  SynthWorld world;
  for (std::size_t k = 0; k < cfg.n_classes; ++k) {
    Mat protos(cfg.n_attributes, c_dim);
    for (std::size_t a = 0; a < cfg.n_attributes; ++a)
      for (std::size_t c = 0; c < c_dim; ++c)
        protos(a, c) = kAnchorWeight * anchors(k, c) + views(a, c) + kJitterWeight * rng.gaussian();
    world.attributes.push_back(l2_normalize_rows(protos));
  }
  world.background = Mat(cfg.background_prototypes, c_dim);
  for (double& x : world.background.values()) x = rng.gaussian();
  if (cfg.background_prototypes > 0) world.background = l2_normalize_rows(world.background);
  return world;
}

Dataset gen_synthetic(const SynthConfig& cfg) {
  const SynthWorld world = synth_world(cfg);
  Rng rng(derive_seed(cfg.seed, "images"));
  const std::size_t m = cfg.m_locals;
  const std::size_t c_dim = cfg.feat_dim;

  auto make_image = [&](std::uint32_t label) {
    Image img;
    img.label = label;
    img.locals = Mat(m, c_dim);
    for (std::size_t i = 0; i < m; ++i) {
      std::span<const double> src;
      if (cfg.background_prototypes > 0 && rng.uniform() < kBackgroundProbability) {
        src = world.background.row(rng.uniform_index(cfg.background_prototypes));
      } else {
        src = world.attributes[label].row(rng.uniform_index(cfg.n_attributes));
      }
      auto dst = img.locals.row(i);
      for (std::size_t c = 0; c < c_dim; ++c) dst[c] = src[c];
      if (cfg.noise_sigma > 0.0)
        for (std::size_t c = 0; c < c_dim; ++c) dst[c] += cfg.noise_sigma * rng.gaussian();
    }
    img.locals = l2_normalize_rows(img.locals);
    Vec mean(c_dim, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto row = img.locals.row(i);
      for (std::size_t c = 0; c < c_dim; ++c) mean[c] += row[c];
    }
    img.global = normalized(mean);
    return img;
  };

  Dataset d;
  d.config = cfg;
  d.n_classes = cfg.n_classes;
  d.backbone_seed = backbone_seed_for(cfg);
  d.images.reserve(cfg.n_classes * (cfg.shots + cfg.test_per_class));
  for (std::size_t k = 0; k < cfg.n_classes; ++k)
    for (std::size_t s = 0; s < cfg.shots; ++s)
      d.images.push_back(make_image(static_cast<std::uint32_t>(k)));
  d.n_train = d.images.size();
  for (std::size_t k = 0; k < cfg.n_classes; ++k)
    for (std::size_t s = 0; s < cfg.test_per_class; ++s)
      d.images.push_back(make_image(static_cast<std::uint32_t>(k)));
  return d;
}

}  // namespace plot
