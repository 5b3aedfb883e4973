#include "plot/head.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "plot/errors.hpp"

namespace plot {
namespace {

void check_unit_rows(const Mat& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = l2_norm(m.row(r));
    if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
      throw ValueError(std::string(what) + ": row " + std::to_string(r) + " has norm " +
                       std::to_string(n) + ", expected unit length");
    }
  }
}

void check_unit(std::span<const double> v, const char* what) {
  const double n = l2_norm(v);
  if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
    throw ValueError(std::string(what) + ": norm " + std::to_string(n) +
                     ", expected unit length");
  }
}

std::string class_tag(std::size_t k) { return "class " + std::to_string(k) + ": "; }

// Re-throws solver errors with the class index prepended, keeping the type.
SinkhornResult solve_for_class(const CostMatrix& c, const DiscreteMeasure& u,
                               const DiscreteMeasure& v, const SinkhornConfig& cfg,
                               std::size_t k) {
  try {
    return solve_entropic(c, u, v, cfg);
  } catch (const UnderflowError& e) {
    throw UnderflowError(class_tag(k) + e.what());
  } catch (const NumericError& e) {
    throw NumericError(class_tag(k) + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(class_tag(k) + e.what());
  } catch (const ValueError& e) {
    throw ValueError(class_tag(k) + e.what());
  }
}

double ot_distance(const TransportPlan& t, const CostMatrix& c, const HeadConfig& cfg) {
  double d = transport_cost(t, c);
  if (cfg.entropic_distance) d -= cfg.sinkhorn.lambda * plan_entropy(t);
  return d;
}

struct Forward {
  double loss = 0.0;
  PromptFeatures grad_g;
  FrozenPlans plans;
};

void check_features(const PromptFeatures& g, const Method& method) {
  if (g.empty()) throw ShapeError("no classes");
  if (method.tag == MethodTag::coop && g.front().rows() != 1) {
    throw ShapeError("COOP uses a single prompt, got " + std::to_string(g.front().rows()));
  }
}

void check_frozen(const FrozenPlans& frozen, std::span<const Image* const> batch,
                  std::size_t k, std::size_t n) {
  if (frozen.size() != batch.size()) {
    throw ShapeError("frozen plans cover " + std::to_string(frozen.size()) +
                     " images, batch has " + std::to_string(batch.size()));
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (frozen[b].size() != k) {
      throw ShapeError("frozen plans for image " + std::to_string(b) + " cover " +
                       std::to_string(frozen[b].size()) + " classes, expected " +
                       std::to_string(k));
    }
    for (const auto& t : frozen[b]) {
      if (t.rows() != batch[b]->locals.rows() || t.cols() != n) {
        throw ShapeError("frozen plan for image " + std::to_string(b) + " is " +
                         std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
      }
    }
  }
}

Forward forward(std::span<const Image* const> batch, const PromptFeatures& g,
                const Method& method, const HeadConfig& cfg, const FrozenPlans* frozen,
                bool want_grad) {
  method.validate();
  cfg.validate();
  check_features(g, method);
  if (batch.empty()) throw ValueError("empty batch");
  const std::size_t k_classes = g.size();
  const std::size_t n = g.front().rows();
  const std::size_t c_dim = g.front().cols();
  const bool ot_head = method.tag == MethodTag::plot;
  if (ot_head && frozen) check_frozen(*frozen, batch, k_classes, n);

  Forward out;
  if (want_grad) out.grad_g.assign(k_classes, Mat(n, c_dim));
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const DiscreteMeasure v = uniform_measure(n);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Image& img = *batch[b];
    if (img.label >= k_classes) {
      throw ValueError("label " + std::to_string(img.label) + " out of range for " +
                       std::to_string(k_classes) + " classes");
    }
    if (img.global.size() != c_dim || img.locals.cols() != c_dim) {
      throw ShapeError("image features have width " + std::to_string(img.global.size()) +
                       ", prompts have " + std::to_string(c_dim));
    }
    Vec d(k_classes);
    std::vector<TransportPlan> plans;
    if (ot_head) {
      const DiscreteMeasure u = uniform_measure(img.locals.rows());
      plans.reserve(k_classes);
      for (std::size_t k = 0; k < k_classes; ++k) {
        const CostMatrix c = cost_matrix(img.locals, g[k]);
        if (frozen) {
          plans.push_back((*frozen)[b][k]);
        } else {
          plans.push_back(solve_for_class(c, u, v, cfg.sinkhorn, k).plan);
        }
        d[k] = ot_distance(plans.back(), c, cfg);
      }
    } else {
      for (std::size_t k = 0; k < k_classes; ++k) {
        switch (method.tag) {
          case MethodTag::coop:
            check_unit(img.global, "global feature");
            d[k] = 1.0 - dot(img.global, g[k].row(0));
            break;
          case MethodTag::m:
          case MethodTag::m_v:
            d[k] = mean_pair_distance(img.locals, g[k]);
            break;
          default:
            d[k] = ensemble_distance(img.global, g[k]);
            break;
        }
      }
    }

    const Vec p = class_probabilities(d, cfg.tau);
    const double py = p[img.label];
    out.loss -= std::log(std::max(py, kProbabilityFloor)) * inv_batch;

    if (want_grad && py > kProbabilityFloor) {
      const std::size_t m = img.locals.rows();
      Vec local_sum;
      if (method.tag == MethodTag::m || method.tag == MethodTag::m_v) {
        local_sum.assign(c_dim, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          const auto row = img.locals.row(i);
          for (std::size_t c = 0; c < c_dim; ++c) local_sum[c] += row[c];
        }
      }
      for (std::size_t k = 0; k < k_classes; ++k) {
        // d loss / d d_k
        const double w =
            -(p[k] - (k == img.label ? 1.0 : 0.0)) / cfg.tau * inv_batch;
        if (w == 0.0) continue;
        Mat& gk = out.grad_g[k];
        switch (method.tag) {
          case MethodTag::plot: {
            const Mat& t = plans[k].mass;
            for (std::size_t i = 0; i < m; ++i) {
              const auto f = img.locals.row(i);
              for (std::size_t j = 0; j < n; ++j) {
                const double s = -w * t(i, j);
                auto dst = gk.row(j);
                for (std::size_t c = 0; c < c_dim; ++c) dst[c] += s * f[c];
              }
            }
            break;
          }
          case MethodTag::coop: {
            auto dst = gk.row(0);
            for (std::size_t c = 0; c < c_dim; ++c) dst[c] -= w * img.global[c];
            break;
          }
          case MethodTag::m:
          case MethodTag::m_v: {
            const double s = -w / static_cast<double>(m * n);
            for (std::size_t j = 0; j < n; ++j) {
              auto dst = gk.row(j);
              for (std::size_t c = 0; c < c_dim; ++c) dst[c] += s * local_sum[c];
            }
            break;
          }
          default: {
            Vec h(c_dim, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
              const auto row = g[k].row(j);
              for (std::size_t c = 0; c < c_dim; ++c) h[c] += row[c];
            }
            for (double& x : h) x /= static_cast<double>(n);
            const double hn = l2_norm(h);
            for (double& x : h) x /= hn;
            const double along = dot(h, img.global);
            const double s = -w / (hn * static_cast<double>(n));
            for (std::size_t j = 0; j < n; ++j) {
              auto dst = gk.row(j);
              for (std::size_t c = 0; c < c_dim; ++c)
                dst[c] += s * (img.global[c] - along * h[c]);
            }
            break;
          }
        }
      }
    }
    if (ot_head) out.plans.push_back(std::move(plans));
  }

  if (method.var_weight > 0.0 && n > 1) {
    const double beta = method.var_weight / static_cast<double>(k_classes);
    const double pair_scale = 2.0 / static_cast<double>(n * (n - 1));
    for (std::size_t k = 0; k < k_classes; ++k) {
      out.loss += beta * variance_regularizer(g[k]);
      if (!want_grad) continue;
      Vec total(c_dim, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const auto row = g[k].row(j);
        for (std::size_t c = 0; c < c_dim; ++c) total[c] += row[c];
      }
      for (std::size_t j = 0; j < n; ++j) {
        const auto row = g[k].row(j);
        auto dst = out.grad_g[k].row(j);
        for (std::size_t c = 0; c < c_dim; ++c)
          dst[c] += beta * pair_scale * (total[c] - row[c]);
      }
    }
  }

  if (std::isnan(out.loss)) throw NumericError("loss is NaN");
  return out;
}

}  // namespace

std::string_view method_name(MethodTag tag) {
  switch (tag) {
    case MethodTag::plot: return "PLOT";
    case MethodTag::coop: return "COOP";
    case MethodTag::g: return "G";
    case MethodTag::g_v: return "G+V";
    case MethodTag::g_e: return "G+E";
    case MethodTag::m: return "M";
    case MethodTag::m_v: return "M+V";
  }
  return "?";
}

MethodTag parse_method(std::string_view text) {
  std::string norm;
  for (char ch : text) {
    norm.push_back(ch == '_' ? '+' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  }
  for (MethodTag tag : kAllMethods)
    if (method_name(tag) == norm) return tag;
  throw ValueError("unknown method '" + std::string(text) +
                   "' (expected plot, coop, g, g+v, g+e, m or m+v)");
}

Method Method::of(MethodTag tag) {
  Method m{tag, 0.0};
  if (m.has_variance_term()) m.var_weight = kDefaultVarWeight;
  return m;
}

bool Method::uses_local_features() const {
  return tag == MethodTag::plot || tag == MethodTag::m || tag == MethodTag::m_v;
}

ContextInit Method::context_init() const {
  return tag == MethodTag::g_e ? ContextInit::preset_ensemble : ContextInit::random;
}

void Method::validate() const {
  if (!(var_weight >= 0.0) || !std::isfinite(var_weight)) {
    throw ValueError("Method: var_weight must be non-negative");
  }
  if (var_weight != 0.0 && !has_variance_term()) {
    throw ValueError("Method: var_weight is only used by G+V and M+V");
  }
}

void HeadConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValueError("HeadConfig: tau must be positive");
  if (n_prompts == 0) throw ValueError("HeadConfig: n_prompts must be at least 1");
  sinkhorn.validate();
}

CostMatrix cost_matrix(const Mat& f, const Mat& g_k) {
  if (f.cols() != g_k.cols()) {
    throw ShapeError("cost_matrix: features have width " + std::to_string(f.cols()) +
                     ", prompts have " + std::to_string(g_k.cols()));
  }
  check_unit_rows(f, "cost_matrix: visual feature");
  check_unit_rows(g_k, "cost_matrix: prompt feature");
  Mat c(f.rows(), g_k.rows());
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t j = 0; j < g_k.rows(); ++j) c(i, j) = 1.0 - dot(f.row(i), g_k.row(j));
  return CostMatrix(std::move(c));
}

ClassScores plot_distances(const Mat& f, const PromptFeatures& g, const HeadConfig& cfg) {
  cfg.validate();
  if (g.empty()) throw ShapeError("plot_distances: no classes");
  const DiscreteMeasure u = uniform_measure(f.rows());
  const DiscreteMeasure v = uniform_measure(g.front().rows());
  ClassScores out;
  out.distances.resize(g.size());
  out.plans.emplace();
  out.plans->reserve(g.size());
  out.iterations.reserve(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const CostMatrix c = cost_matrix(f, g[k]);
    SinkhornResult r = solve_for_class(c, u, v, cfg.sinkhorn, k);
    out.distances[k] = ot_distance(r.plan, c, cfg);
    out.iterations.push_back(r.iterations);
    out.plans->push_back(std::move(r.plan));
  }
  out.probabilities = class_probabilities(out.distances, cfg.tau);
  return out;
}

Vec class_probabilities(std::span<const double> distances, double tau) {
  Vec scores(distances.size());
  for (std::size_t k = 0; k < distances.size(); ++k) scores[k] = 1.0 - distances[k];
  return softmax_temp(scores, tau);
}

ClassScores coop_logits(std::span<const double> f_global, const Mat& g_single, double tau) {
  if (f_global.size() != g_single.cols()) {
    throw ShapeError("coop_logits: feature width " + std::to_string(f_global.size()) +
                     ", prompt width " + std::to_string(g_single.cols()));
  }
  check_unit(f_global, "coop_logits: global feature");
  check_unit_rows(g_single, "coop_logits: prompt feature");
  ClassScores out;
  out.distances.resize(g_single.rows());
  for (std::size_t k = 0; k < g_single.rows(); ++k)
    out.distances[k] = 1.0 - dot(f_global, g_single.row(k));
  out.probabilities = class_probabilities(out.distances, tau);
  return out;
}

double ensemble_distance(std::span<const double> f_global, const Mat& g_k) {
  if (f_global.size() != g_k.cols()) {
    throw ShapeError("ensemble_distance: feature width " + std::to_string(f_global.size()) +
                     ", prompt width " + std::to_string(g_k.cols()));
  }
  check_unit(f_global, "ensemble_distance: global feature");
  check_unit_rows(g_k, "ensemble_distance: prompt feature");
  Vec mean(g_k.cols(), 0.0);
  for (std::size_t j = 0; j < g_k.rows(); ++j) {
    const auto row = g_k.row(j);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += row[c];
  }
  const double norm = l2_norm(mean);
  if (!(norm > 1e-12 * static_cast<double>(g_k.rows()))) {
    throw ValueError("ensemble_distance: prompt mean has zero norm");
  }
  return 1.0 - dot(f_global, mean) / norm;
}

double mean_pair_distance(const Mat& f, const Mat& g_k) {
  const CostMatrix c = cost_matrix(f, g_k);
  double s = 0.0;
  for (double x : c.values().values()) s += x;
  return s / static_cast<double>(c.rows() * c.cols());
}

double variance_regularizer(const Mat& g_k) {
  const std::size_t n = g_k.rows();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += dot(g_k.row(i), g_k.row(j));
  return s * 2.0 / static_cast<double>(n * (n - 1));
}

double cross_entropy_loss(std::span<const Vec> probs, std::span<const std::uint32_t> labels) {
  if (probs.size() != labels.size()) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(probs.size()) +
                     " probability vectors, " + std::to_string(labels.size()) + " labels");
  }
  if (probs.empty()) throw ValueError("cross_entropy_loss: empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    const Vec& p = probs[b];
    if (labels[b] >= p.size()) {
      throw ValueError("cross_entropy_loss: label " + std::to_string(labels[b]) +
                       " out of range for " + std::to_string(p.size()) + " classes");
    }
    double sum = 0.0;
    for (double x : p) sum += x;
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValueError("cross_entropy_loss: probabilities of example " + std::to_string(b) +
                       " sum to " + std::to_string(sum));
    }
    total -= std::log(std::max(p[labels[b]], kProbabilityFloor));
  }
  return total / static_cast<double>(probs.size());
}

ClassScores score_image(const Image& image, const PromptFeatures& g, const Method& method,
                        const HeadConfig& cfg) {
  cfg.validate();
  check_features(g, method);
  switch (method.tag) {
    case MethodTag::plot:
      return plot_distances(image.locals, g, cfg);
    case MethodTag::coop: {
      Mat single(g.size(), g.front().cols());
      for (std::size_t k = 0; k < g.size(); ++k) {
        const auto src = g[k].row(0);
        std::copy(src.begin(), src.end(), single.row(k).begin());
      }
      return coop_logits(image.global, single, cfg.tau);
    }
    default:
      break;
  }
  ClassScores out;
  out.distances.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    out.distances[k] = method.uses_local_features() ? mean_pair_distance(image.locals, g[k])
                                                    : ensemble_distance(image.global, g[k]);
  }
  out.probabilities = class_probabilities(out.distances, cfg.tau);
  return out;
}

LossGrad loss_and_grad(std::span<const Image* const> batch, const PromptBank& bank,
                       const TextEncoder& enc, const Method& method, const HeadConfig& cfg,
                       const FrozenPlans* frozen) {
  const PromptFeatures g = encode_prompts(bank, enc);
  Forward fw = forward(batch, g, method, cfg, frozen, true);
  LossGrad out;
  out.loss = fw.loss;
  out.grad = encode_prompts_backward(fw.grad_g, bank, enc);
  out.plans = std::move(fw.plans);
  return out;
}

double batch_loss(std::span<const Image* const> batch, const PromptBank& bank,
                  const TextEncoder& enc, const Method& method, const HeadConfig& cfg,
                  const FrozenPlans* frozen) {
  const PromptFeatures g = encode_prompts(bank, enc);
  return forward(batch, g, method, cfg, frozen, false).loss;
}

}  // namespace plot
