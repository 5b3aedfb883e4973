#include "plot/encoders.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "plot/errors.hpp"

namespace plot {

Tensor3::Tensor3(std::size_t n, std::size_t l, std::size_t d, double fill)
    : n_(n), l_(l), d_(d), data_(n * l * d, fill) {}

Tensor3::Tensor3(std::size_t n, std::size_t l, std::size_t d, std::vector<double> data)
    : n_(n), l_(l), d_(d), data_(std::move(data)) {
  if (data_.size() != n_ * l_ * d_) {
    throw ShapeError("Tensor3: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(n_) + "x" + std::to_string(l_) +
                     "x" + std::to_string(d_));
  }
}

void PromptBank::validate() const {
  if (n_prompts() == 0 || ctx_len() == 0 || embed_dim() == 0) {
    throw ShapeError("PromptBank: empty context tensor");
  }
  if (class_tokens.rows() == 0) throw ShapeError("PromptBank: no classes");
  if (class_tokens.cols() != embed_dim()) {
    throw ShapeError("PromptBank: class tokens have width " +
                     std::to_string(class_tokens.cols()) + " but context has " +
                     std::to_string(embed_dim()));
  }
  if (!all_finite(ctx.values()) || !all_finite(class_tokens.values())) {
    throw NumericError("PromptBank: non-finite parameter");
  }
}

TextEncoder TextEncoder::seeded(std::uint64_t seed, std::size_t embed_dim,
                                std::size_t feat_dim) {
  Rng rng(seed);
  TextEncoder enc{Mat(embed_dim, feat_dim)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  for (double& x : enc.proj.values()) x = rng.gaussian() * scale;
  return enc;
}

namespace {

void check_encoder(const PromptBank& bank, const TextEncoder& enc) {
  bank.validate();
  if (enc.embed_dim() != bank.embed_dim()) {
    throw ShapeError("encoder expects embeddings of width " + std::to_string(enc.embed_dim()) +
                     " but prompts have width " + std::to_string(bank.embed_dim()));
  }
}

// Mean of the L context tokens of prompt n and the class token of class k.
Vec pooled(const PromptBank& bank, std::size_t k, std::size_t n) {
  const std::size_t d = bank.embed_dim();
  Vec pool(d, 0.0);
  for (std::size_t l = 0; l < bank.ctx_len(); ++l) {
    const auto tok = bank.ctx.token(n, l);
    for (std::size_t e = 0; e < d; ++e) pool[e] += tok[e];
  }
  const auto cls = bank.class_tokens.row(k);
  const double inv = 1.0 / static_cast<double>(bank.ctx_len() + 1);
  for (std::size_t e = 0; e < d; ++e) pool[e] = (pool[e] + cls[e]) * inv;
  return pool;
}

// proj^T pool
Vec project(const TextEncoder& enc, std::span<const double> pool) {
  Vec x(enc.feat_dim(), 0.0);
  for (std::size_t e = 0; e < enc.embed_dim(); ++e) {
    const double pe = pool[e];
    const auto prow = enc.proj.row(e);
    for (std::size_t c = 0; c < x.size(); ++c) x[c] += pe * prow[c];
  }
  return x;
}

}  // namespace

PromptFeatures encode_prompts(const PromptBank& bank, const TextEncoder& enc) {
  check_encoder(bank, enc);
  PromptFeatures out;
  out.reserve(bank.n_classes());
  for (std::size_t k = 0; k < bank.n_classes(); ++k) {
    Mat g(bank.n_prompts(), enc.feat_dim());
    for (std::size_t n = 0; n < bank.n_prompts(); ++n) {
      const Vec x = project(enc, pooled(bank, k, n));
      const double norm = l2_norm(x);
      if (!(norm > 0.0)) {
        throw ValueError("encode_prompts: zero-norm feature for class " + std::to_string(k) +
                         ", prompt " + std::to_string(n));
      }
      auto row = g.row(n);
      for (std::size_t c = 0; c < x.size(); ++c) row[c] = x[c] / norm;
    }
    out.push_back(std::move(g));
  }
  return out;
}

Tensor3 encode_prompts_backward(const PromptFeatures& grad_g, const PromptBank& bank,
                                const TextEncoder& enc) {
  check_encoder(bank, enc);
  if (grad_g.size() != bank.n_classes()) {
    throw ShapeError("encode_prompts_backward: gradient for " + std::to_string(grad_g.size()) +
                     " classes, bank has " + std::to_string(bank.n_classes()));
  }
  const std::size_t d = bank.embed_dim();
  const std::size_t c_dim = enc.feat_dim();
  // Every context token of prompt n receives the same pooled gradient.
  Mat pool_grad(bank.n_prompts(), d);
  for (std::size_t k = 0; k < bank.n_classes(); ++k) {
    const Mat& gk = grad_g[k];
    if (gk.rows() != bank.n_prompts() || gk.cols() != c_dim) {
      throw ShapeError("encode_prompts_backward: class " + std::to_string(k) + " gradient is " +
                       std::to_string(gk.rows()) + "x" + std::to_string(gk.cols()) +
                       ", expected " + std::to_string(bank.n_prompts()) + "x" +
                       std::to_string(c_dim));
    }
    for (std::size_t n = 0; n < bank.n_prompts(); ++n) {
      const auto up = gk.row(n);
      if (std::all_of(up.begin(), up.end(), [](double v) { return v == 0.0; })) continue;
      Vec x = project(enc, pooled(bank, k, n));
      const double norm = l2_norm(x);
      for (double& v : x) v /= norm;
      // (I - g g^T) up / |x|
      const double along = dot(x, up);
      Vec dx(c_dim);
      for (std::size_t c = 0; c < c_dim; ++c) dx[c] = (up[c] - along * x[c]) / norm;
      auto dst = pool_grad.row(n);
      for (std::size_t e = 0; e < d; ++e) dst[e] += dot(enc.proj.row(e), dx);
    }
  }
  Tensor3 out(bank.n_prompts(), bank.ctx_len(), d);
  const double inv = 1.0 / static_cast<double>(bank.ctx_len() + 1);
  for (std::size_t n = 0; n < bank.n_prompts(); ++n)
    for (std::size_t l = 0; l < bank.ctx_len(); ++l) {
      auto tok = out.token(n, l);
      const auto src = pool_grad.row(n);
      for (std::size_t e = 0; e < d; ++e) tok[e] = src[e] * inv;
    }
  return out;
}

std::span<const std::string_view> preset_names() {
  static constexpr std::array<std::string_view, kPresetCount> names = {
      "a photo of a", "this is a photo", "this is a", "one picture of a"};
  return names;
}

Tensor3 init_context(ContextInit strategy, std::size_t n_prompts, std::size_t ctx_len,
                     std::size_t embed_dim, Rng& rng) {
  if (n_prompts == 0 || ctx_len == 0 || embed_dim == 0) {
    throw ValueError("init_context: dimensions must be positive");
  }
  Tensor3 ctx(n_prompts, ctx_len, embed_dim);
  if (strategy == ContextInit::random) {
    for (double& x : ctx.values()) x = rng.gaussian() * kContextInitStd;
    return ctx;
  }
  if (n_prompts > kPresetCount) {
    throw ValueError("init_context: preset ensemble has " + std::to_string(kPresetCount) +
                     " prompts, " + std::to_string(n_prompts) + " requested");
  }
  const auto names = preset_names();
  for (std::size_t n = 0; n < n_prompts; ++n) {
    Rng preset(fnv1a64(names[n]));
    for (std::size_t l = 0; l < ctx_len; ++l)
      for (double& x : ctx.token(n, l)) x = preset.gaussian() * kContextInitStd;
  }
  return ctx;
}

Backbone make_backbone(std::uint64_t seed, std::size_t n_classes, std::size_t feat_dim) {
  if (n_classes == 0 || feat_dim == 0) throw ValueError("make_backbone: empty dimensions");
  Backbone b{TextEncoder::seeded(derive_seed(seed, "projection"), feat_dim, feat_dim),
             Mat(n_classes, feat_dim)};
  Rng rng(derive_seed(seed, "class-tokens"));
  for (double& x : b.class_tokens.values()) x = rng.gaussian() * kContextInitStd;
  return b;
}

}  // namespace plot
