#include "plot/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "plot/errors.hpp"

namespace plot {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValueError("TrainConfig: lr must be positive");
  if (epochs < 1) throw ValueError("TrainConfig: epochs must be at least 1");
  if (batch_size < 1) throw ValueError("TrainConfig: batch_size must be at least 1");
  if (!(warmup_lr > 0.0) || !std::isfinite(warmup_lr)) {
    throw ValueError("TrainConfig: warmup_lr must be positive");
  }
  if (ctx_len < 1) throw ValueError("TrainConfig: ctx_len must be at least 1");
  method.validate();
  head.validate();
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch >= cfg.epochs) {
    throw ValueError("lr_at: epoch " + std::to_string(epoch) + " outside schedule of " +
                     std::to_string(cfg.epochs) + " epochs");
  }
  if (epoch == 0) return cfg.warmup_lr;
  const double span = static_cast<double>(std::max<std::size_t>(1, cfg.epochs - 1));
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch - 1) / span));
}

void sgd_step(Tensor3& params, const Tensor3& grads, double lr) {
  if (!(lr > 0.0)) throw ValueError("sgd_step: lr must be positive");
  if (params.dim0() != grads.dim0() || params.dim1() != grads.dim1() ||
      params.dim2() != grads.dim2()) {
    throw ShapeError("sgd_step: parameter and gradient shapes differ");
  }
  auto p = params.values();
  const auto g = grads.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

ModelState init_model(std::size_t n_classes, std::size_t feat_dim,
                      std::uint64_t dataset_backbone_seed, const TrainConfig& cfg) {
  cfg.validate();
  ModelState model;
  model.method = cfg.method;
  model.head = cfg.head;
  if (cfg.method.tag == MethodTag::coop) model.head.n_prompts = 1;
  model.seed = cfg.seed;
  model.backbone_seed = cfg.backbone_seed.value_or(dataset_backbone_seed);
  Backbone backbone = make_backbone(model.backbone_seed, n_classes, feat_dim);
  model.encoder = std::move(backbone.encoder);
  Rng rng(derive_seed(cfg.seed, "context"));
  model.bank.ctx = init_context(cfg.method.context_init(), model.head.n_prompts, cfg.ctx_len,
                                feat_dim, rng);
  model.bank.class_tokens = std::move(backbone.class_tokens);
  return model;
}

ModelState train(const Dataset& data, const TrainConfig& cfg, EpochCallback on_epoch,
                 void* user) {
  cfg.validate();
  if (data.n_train == 0) throw ValueError("train: dataset has no training images");
  ModelState model = init_model(data.n_classes, data.feat_dim(), data.backbone_seed, cfg);

  const auto train_images = data.train();
  std::vector<std::size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<const Image*> batch;
  batch.reserve(cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_images[order[i]]);
      LossGrad lg;
      try {
        lg = loss_and_grad(batch, model.bank, model.encoder, model.method, model.head);
      } catch (const Error& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(n_batches) + ": " + e.what());
      }
      sgd_step(model.bank.ctx, lg.grad, lr);
      loss_sum += lg.loss;
      ++n_batches;
    }
    model.train_log.push_back({epoch, lr, loss_sum / static_cast<double>(n_batches)});
    if (on_epoch) on_epoch(model.train_log.back(), user);
  }
  return model;
}

EvalReport evaluate(std::span<const Image> images, const ModelState& model) {
  const std::size_t k_classes = model.bank.n_classes();
  const std::size_t c_dim = model.encoder.feat_dim();
  if (images.empty()) throw ValueError("evaluate: no images");
  for (const Image& img : images) {
    if (img.global.size() != c_dim || img.locals.cols() != c_dim) {
      throw ShapeError("evaluate: model expects " + std::to_string(k_classes) +
                       " classes x " + std::to_string(c_dim) +
                       " features, dataset image has " + std::to_string(img.locals.rows()) +
                       "x" + std::to_string(img.locals.cols()) + " features");
    }
    if (img.label >= k_classes) {
      throw ShapeError("evaluate: model has " + std::to_string(k_classes) +
                       " classes, dataset label " + std::to_string(img.label));
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  const PromptFeatures g = encode_prompts(model.bank, model.encoder);
  EvalReport r;
  r.n_images = images.size();
  r.per_class_accuracy.assign(k_classes, 0.0);
  r.per_class_count.assign(k_classes, 0);
  std::size_t correct = 0;
  double iterations = 0.0;
  for (const Image& img : images) {
    const ClassScores s = score_image(img, g, model.method, model.head);
    const auto best = static_cast<std::size_t>(
        std::max_element(s.probabilities.begin(), s.probabilities.end()) -
        s.probabilities.begin());
    ++r.per_class_count[img.label];
    if (best == img.label) {
      ++correct;
      r.per_class_accuracy[img.label] += 1.0;
    }
    for (int it : s.iterations) iterations += it;
  }
  const auto t1 = std::chrono::steady_clock::now();

  r.accuracy = static_cast<double>(correct) / static_cast<double>(images.size());
  for (std::size_t k = 0; k < k_classes; ++k)
    if (r.per_class_count[k] > 0) r.per_class_accuracy[k] /= static_cast<double>(r.per_class_count[k]);
  if (model.method.tag == MethodTag::plot) {
    iterations /= static_cast<double>(images.size() * k_classes);
    r.mean_sinkhorn_iterations = iterations;
  }
  r.seconds_total = std::chrono::duration<double>(t1 - t0).count();
  r.seconds_per_image = r.seconds_total / static_cast<double>(images.size());
  return r;
}

EvalReport evaluate(const Dataset& data, const ModelState& model) {
  if (data.n_classes != model.bank.n_classes() || data.feat_dim() != model.encoder.feat_dim()) {
    throw ShapeError("evaluate: model is " + std::to_string(model.bank.n_classes()) +
                     " classes x " + std::to_string(model.encoder.feat_dim()) +
                     " features, dataset is " + std::to_string(data.n_classes) +
                     " classes x " + std::to_string(data.feat_dim()) + " features");
  }
  return evaluate(data.test(), model);
}

GradCheckReport grad_check(const ModelState& model, std::span<const Image* const> batch,
                           double eps, std::size_t n_coords, std::uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ValueError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  if (n_coords == 0) throw ValueError("grad_check: need at least one coordinate");
  const LossGrad base =
      loss_and_grad(batch, model.bank, model.encoder, model.method, model.head);
  const FrozenPlans* frozen = model.method.tag == MethodTag::plot ? &base.plans : nullptr;

  PromptBank probe = model.bank;
  Rng rng(seed);
  const std::size_t total = probe.ctx.size();
  GradCheckReport r;
  double rel_sum = 0.0;
  for (std::size_t s = 0; s < n_coords; ++s) {
    const std::size_t idx = rng.uniform_index(total);
    double& x = probe.ctx.values()[idx];
    const double saved = x;
    x = saved + eps;
    const double up = batch_loss(batch, probe, model.encoder, model.method, model.head, frozen);
    x = saved - eps;
    const double down =
        batch_loss(batch, probe, model.encoder, model.method, model.head, frozen);
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = base.grad.values()[idx];
    ++r.coordinates;
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double abs_err = std::abs(analytic - numeric);
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (scale < kSaturationThreshold) {
      ++r.saturated;
      continue;
    }
    const double rel = abs_err / scale;
    ++r.compared;
    rel_sum += rel;
    r.max_rel_error = std::max(r.max_rel_error, rel);
  }
  if (r.compared > 0) r.mean_rel_error = rel_sum / static_cast<double>(r.compared);
  return r;
}

}  // namespace plot
