#include <gtest/gtest.h>

#include <cmath>

#include "plot/errors.hpp"
#include "plot/head.hpp"

namespace plot {
namespace {

Mat random_unit_rows(Rng& rng, std::size_t r, std::size_t c) {
  Mat m(r, c);
  for (double& x : m.values()) x = rng.gaussian();
  return l2_normalize_rows(m);
}

Image random_image(Rng& rng, std::size_t m, std::size_t c, std::uint32_t label) {
  Image img;
  img.locals = random_unit_rows(rng, m, c);
  Vec mean(c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += img.locals(i, j);
  img.global = normalized(mean);
  img.label = label;
  return img;
}

PromptFeatures random_features(Rng& rng, std::size_t k, std::size_t n, std::size_t c) {
  PromptFeatures g;
  for (std::size_t i = 0; i < k; ++i) g.push_back(random_unit_rows(rng, n, c));
  return g;
}

struct Fixture {
  std::vector<Image> images;
  std::vector<const Image*> batch;
  PromptBank bank;
  TextEncoder enc;
};

// Context scale comparable to the class tokens keeps the softmax at tau = 0.1
// away from saturation.
Fixture make_fixture(std::uint64_t seed, std::size_t k, std::size_t n, std::size_t m,
                     std::size_t c, std::size_t l, std::size_t batch) {
  Rng rng(seed);
  Fixture f;
  for (std::size_t b = 0; b < batch; ++b)
    f.images.push_back(random_image(rng, m, c, static_cast<std::uint32_t>(b % k)));
  for (const Image& img : f.images) f.batch.push_back(&img);
  f.bank.ctx = Tensor3(n, l, c);
  for (double& x : f.bank.ctx.values()) x = 0.3 * rng.gaussian();
  f.bank.class_tokens = Mat(k, c);
  for (double& x : f.bank.class_tokens.values()) x = rng.gaussian();
  f.enc = TextEncoder::seeded(seed + 1, c, c);
  return f;
}

TEST(MethodNames, RoundTrip) {
  for (MethodTag tag : kAllMethods) EXPECT_EQ(parse_method(method_name(tag)), tag);
  EXPECT_EQ(parse_method("g+v"), MethodTag::g_v);
  EXPECT_EQ(parse_method("m_v"), MethodTag::m_v);
  EXPECT_EQ(parse_method("coop"), MethodTag::coop);
  EXPECT_THROW(parse_method("tip"), ValueError);
}

TEST(MethodNames, VarianceWeightOnlyForVariants) {
  EXPECT_EQ(Method::of(MethodTag::g_v).var_weight, 0.1);
  EXPECT_EQ(Method::of(MethodTag::m_v).var_weight, 0.1);
  EXPECT_EQ(Method::of(MethodTag::plot).var_weight, 0.0);
  EXPECT_THROW((Method{MethodTag::g, 0.5}.validate()), ValueError);
  EXPECT_EQ(Method::of(MethodTag::g_e).context_init(), ContextInit::preset_ensemble);
}

TEST(CostMatrixOp, Examples) {
  const CostMatrix c = cost_matrix(Mat::from_rows({{1, 0}, {0, 1}}), Mat::from_rows({{1, 0}}));
  EXPECT_EQ(c.values(), Mat::from_rows({{0}, {1}}));
  EXPECT_EQ(cost_matrix(Mat::from_rows({{0, 1}}), Mat::from_rows({{0, 1}}))(0, 0), 0.0);
  EXPECT_EQ(cost_matrix(Mat::from_rows({{0, 1}}), Mat::from_rows({{0, -1}}))(0, 0), 2.0);
}

TEST(CostMatrixOp, RejectsNonUnitRows) {
  EXPECT_THROW(cost_matrix(Mat::from_rows({{2, 0}}), Mat::from_rows({{1, 0}})), ValueError);
  EXPECT_THROW(cost_matrix(Mat::from_rows({{1, 0}}), Mat::from_rows({{0.5, 0}})), ValueError);
}

TEST(CostMatrixOp, EntriesInRange) {
  Rng rng(1);
  const CostMatrix c = cost_matrix(random_unit_rows(rng, 49, 16), random_unit_rows(rng, 4, 16));
  for (double x : c.values().values()) {
    EXPECT_GE(x, -1e-9);
    EXPECT_LE(x, 2.0 + 1e-9);
  }
}

TEST(PlotDistances, SinglePromptIsColumnMean) {
  Rng rng(2);
  const Mat f = random_unit_rows(rng, 49, 16);
  const PromptFeatures g = random_features(rng, 3, 1, 16);
  const ClassScores s = plot_distances(f, g, HeadConfig{});
  ASSERT_TRUE(s.plans.has_value());
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (std::size_t m = 0; m < 49; ++m) mean += 1.0 - dot(f.row(m), g[k].row(0));
    EXPECT_NEAR(s.distances[k], mean / 49.0, 1e-12);
    EXPECT_NEAR(s.distances[k], mean_pair_distance(f, g[k]), 1e-12);
  }
}

TEST(PlotDistances, SingleFeatureSinglePrompt) {
  Rng rng(3);
  const Mat f = random_unit_rows(rng, 1, 8);
  const PromptFeatures g = random_features(rng, 4, 1, 8);
  const ClassScores s = plot_distances(f, g, HeadConfig{});
  for (std::size_t k = 0; k < 4; ++k)
    EXPECT_NEAR(s.distances[k], 1.0 - dot(f.row(0), g[k].row(0)), 1e-12);
}

TEST(PlotDistances, OracleDominancePerClass) {
  Rng rng(4);
  const Mat f = random_unit_rows(rng, 4, 8);
  const PromptFeatures g = random_features(rng, 3, 2, 8);
  HeadConfig cfg;
  const ClassScores s = plot_distances(f, g, cfg);
  for (std::size_t k = 0; k < 3; ++k) {
    const CostMatrix c = cost_matrix(f, g[k]);
    const auto r = sinkhorn(c, uniform_measure(4), uniform_measure(2), cfg.sinkhorn);
    EXPECT_EQ(r.cost, s.distances[k]);
    EXPECT_GE(s.distances[k], exact_ot_uniform(c).cost - 10 * r.marginal_residual);
  }
  double sum = 0.0;
  for (double p : s.probabilities) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(PlotDistances, SolverErrorsNameTheClass) {
  const Mat f = Mat::from_rows({{1, 0}, {0, 1}});
  const PromptFeatures g{Mat::from_rows({{1, 0}}), Mat::from_rows({{-1, 0}, {0, -1}})};
  HeadConfig cfg;
  cfg.sinkhorn.lambda = 1e-3;
  try {
    plot_distances(f, {g[1]}, cfg);
    FAIL() << "expected UnderflowError";
  } catch (const UnderflowError& e) {
    EXPECT_NE(std::string(e.what()).find("class 0"), std::string::npos);
  }
}

TEST(ClassProbabilities, Examples) {
  const Vec p = class_probabilities(Vec{0.2, 0.8}, 1.0);
  EXPECT_NEAR(p[0], std::exp(0.8) / (std::exp(0.8) + std::exp(0.2)), 1e-12);
  EXPECT_NEAR(p[0], 0.6457, 1e-4);
  EXPECT_NEAR(p[1], 0.3543, 1e-4);
  const Vec q = class_probabilities(Vec{0.4, 0.4, 0.4}, 0.01);
  for (double x : q) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(class_probabilities(Vec{0.7}, 0.01), Vec{1.0});
  EXPECT_THROW(class_probabilities(Vec{0.1}, 0.0), ValueError);
}

TEST(ClassProbabilities, CommonDistanceOffsetCancels) {
  Rng rng(5);
  Vec d(6);
  for (double& x : d) x = 2.0 * rng.uniform();
  Vec shifted = d;
  for (double& x : shifted) x += 0.37;
  const Vec p = class_probabilities(d, 0.05);
  const Vec q = class_probabilities(shifted, 0.05);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
}

TEST(CoopLogits, Examples) {
  const ClassScores s = coop_logits(Vec{1, 0}, Mat::from_rows({{1, 0}, {0, 1}}), 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(s.probabilities[0], e / (e + 1), 1e-12);
  EXPECT_NEAR(s.probabilities[0], 0.7311, 1e-4);
  EXPECT_NEAR(s.probabilities[1], 0.2689, 1e-4);
  EXPECT_EQ(s.distances, (Vec{0.0, 1.0}));
  EXPECT_FALSE(s.plans.has_value());

  const ClassScores same = coop_logits(Vec{0.6, 0.8}, Mat::from_rows({{1, 0}, {1, 0}}), 0.01);
  EXPECT_NEAR(same.probabilities[0], 0.5, 1e-15);

  const double c = std::cos(0.3);
  const Mat g = Mat::from_rows({{1, 0}, {c, std::sqrt(1 - c * c)}});
  const Vec f{std::cos(0.1), std::sin(0.1)};
  const auto argmax = [](const Vec& p) { return std::max_element(p.begin(), p.end()) - p.begin(); };
  EXPECT_EQ(argmax(coop_logits(f, g, 0.01).probabilities), argmax(coop_logits(f, g, 1.0).probabilities));

  EXPECT_THROW(coop_logits(Vec{2, 0}, Mat::from_rows({{1, 0}}), 1.0), ValueError);
}

TEST(EnsembleDistance, Examples) {
  const Vec f{0.6, 0.8};
  EXPECT_NEAR(ensemble_distance(f, Mat::from_rows({{0.6, 0.8}, {0.6, 0.8}})), 0.0, 1e-15);
  EXPECT_THROW(ensemble_distance(f, Mat::from_rows({{1, 0}, {-1, 0}})), ValueError);

  Rng rng(6);
  const Mat g = random_unit_rows(rng, 4, 10);
  const Vec fg = normalized(rng_gaussian(rng, 10));
  Vec mean(10, 0.0);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 0; c < 10; ++c) mean[c] += g(n, c) / 4.0;
  const Vec h = normalized(mean);
  EXPECT_NEAR(ensemble_distance(fg, g), 1.0 - dot(fg, h), 1e-12);
}

TEST(MeanPairDistance, Examples) {
  EXPECT_NEAR(mean_pair_distance(Mat::from_rows({{1, 0}, {0, 1}}), Mat::from_rows({{1, 0}})), 0.5,
              1e-15);
  EXPECT_NEAR(mean_pair_distance(Mat::from_rows({{0.6, 0.8}}), Mat::from_rows({{1, 0}})), 0.4,
              1e-15);
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const Mat f = random_unit_rows(rng, 9, 6);
    const Mat g = random_unit_rows(rng, 3, 6);
    const TransportPlan uniform{Mat(9, 3, 1.0 / 27.0)};
    EXPECT_NEAR(mean_pair_distance(f, g), transport_cost(uniform, cost_matrix(f, g)), 1e-12);
  }
  EXPECT_THROW(mean_pair_distance(Mat(2, 3), Mat(2, 4)), ShapeError);
}

TEST(VarianceRegularizer, Examples) {
  EXPECT_EQ(variance_regularizer(Mat::from_rows({{1, 0}})), 0.0);
  EXPECT_NEAR(variance_regularizer(Mat::from_rows({{0.6, 0.8}, {0.6, 0.8}})), 1.0, 1e-15);
  EXPECT_EQ(variance_regularizer(Mat::from_rows({{1, 0}, {0, 1}})), 0.0);
  // Three prompts: pairs (1,2)=0, (1,3)=1, (2,3)=0.
  EXPECT_NEAR(variance_regularizer(Mat::from_rows({{1, 0}, {0, 1}, {1, 0}})), 1.0 / 3.0, 1e-15);
}

TEST(CrossEntropy, Examples) {
  EXPECT_EQ(cross_entropy_loss(std::vector<Vec>{{1.0, 0.0}}, std::vector<std::uint32_t>{0}), 0.0);
  EXPECT_NEAR(cross_entropy_loss(std::vector<Vec>{{0.5, 0.5}}, std::vector<std::uint32_t>{1}),
              std::log(2.0), 1e-15);
  const double a = -std::log(0.7);
  const double b = -std::log(0.4);
  EXPECT_NEAR(cross_entropy_loss(std::vector<Vec>{{0.7, 0.3}, {0.6, 0.4}},
                                 std::vector<std::uint32_t>{0, 1}),
              (a + b) / 2, 1e-15);
  EXPECT_NEAR(cross_entropy_loss(std::vector<Vec>{{1.0, 0.0}}, std::vector<std::uint32_t>{1}),
              -std::log(1e-12), 1e-9);
  EXPECT_THROW(cross_entropy_loss(std::vector<Vec>{{0.5, 0.5}}, std::vector<std::uint32_t>{2}),
               ValueError);
  EXPECT_THROW(cross_entropy_loss(std::vector<Vec>{{0.5, 0.6}}, std::vector<std::uint32_t>{0}),
               ValueError);
}

TEST(ScoreImage, ProbabilitiesSumToOneForEveryMethod) {
  Fixture f = make_fixture(8, 4, 3, 9, 8, 4, 1);
  const PromptFeatures g = encode_prompts(f.bank, f.enc);
  for (MethodTag tag : kAllMethods) {
    PromptFeatures gg = g;
    if (tag == MethodTag::coop)
      for (Mat& m : gg) m = Mat(1, m.cols(), std::vector<double>(m.row(0).begin(), m.row(0).end()));
    const ClassScores s = score_image(f.images[0], gg, Method::of(tag), HeadConfig{});
    double sum = 0.0;
    for (double p : s.probabilities) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-9) << method_name(tag);
    EXPECT_EQ(s.plans.has_value(), tag == MethodTag::plot);
  }
}

TEST(LossAndGrad, SinglePromptSingleFeatureMatchesCoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Fixture f = make_fixture(100 + seed, 5, 1, 1, 8, 4, 6);
    HeadConfig cfg;
    cfg.n_prompts = 1;
    const LossGrad plot = loss_and_grad(f.batch, f.bank, f.enc, Method::of(MethodTag::plot), cfg);
    const LossGrad coop = loss_and_grad(f.batch, f.bank, f.enc, Method::of(MethodTag::coop), cfg);
    EXPECT_NEAR(plot.loss, coop.loss, 1e-10);
    for (std::size_t i = 0; i < plot.grad.size(); ++i)
      EXPECT_NEAR(plot.grad.values()[i], coop.grad.values()[i], 1e-10);
  }
}

TEST(LossAndGrad, SaturatedSampleHasZeroGradient) {
  // Two orthogonal classes with tau tiny: p(true) is 1 to machine precision.
  PromptBank bank{Tensor3(1, 1, 2, {1.0, 0.0}), Mat::from_rows({{1.0, 0.0}, {0.0, 1.0}})};
  const TextEncoder enc{Mat::identity(2)};
  Image img;
  img.locals = Mat::from_rows({{1.0, 0.0}});
  img.global = Vec{1.0, 0.0};
  img.label = 0;
  const std::vector<const Image*> batch{&img};
  HeadConfig cfg;
  cfg.tau = 1e-4;
  cfg.n_prompts = 1;
  const LossGrad lg = loss_and_grad(batch, bank, enc, Method::of(MethodTag::plot), cfg);
  EXPECT_EQ(lg.loss, 0.0);
  for (double x : lg.grad.values()) EXPECT_EQ(x, 0.0);

  img.label = 1;  // p(true) underflows below the clamp
  const LossGrad wrong = loss_and_grad(batch, bank, enc, Method::of(MethodTag::plot), cfg);
  EXPECT_NEAR(wrong.loss, -std::log(1e-12), 1e-9);
  for (double x : wrong.grad.values()) EXPECT_EQ(x, 0.0);
}

TEST(LossAndGrad, UniformPlanTurnsOtHeadIntoMeanHead) {
  Fixture f = make_fixture(9, 3, 4, 6, 8, 3, 5);
  HeadConfig cfg;
  FrozenPlans uniform(f.batch.size(), std::vector<TransportPlan>(3, {Mat(6, 4, 1.0 / 24.0)}));
  const double plot = batch_loss(f.batch, f.bank, f.enc, Method::of(MethodTag::plot), cfg, &uniform);
  const double mean = batch_loss(f.batch, f.bank, f.enc, Method::of(MethodTag::m), cfg);
  EXPECT_NEAR(plot, mean, 1e-12);
}

TEST(LossAndGrad, FrozenPlansMustMatchBatch) {
  Fixture f = make_fixture(10, 3, 2, 4, 6, 2, 2);
  FrozenPlans bad(1);
  EXPECT_THROW(loss_and_grad(f.batch, f.bank, f.enc, Method::of(MethodTag::plot), HeadConfig{}, &bad),
               ShapeError);
}

TEST(LossAndGrad, CoopRejectsSeveralPrompts) {
  Fixture f = make_fixture(10, 3, 2, 4, 6, 2, 2);
  EXPECT_THROW(loss_and_grad(f.batch, f.bank, f.enc, Method::of(MethodTag::coop), HeadConfig{}),
               ShapeError);
}

// Central differences of the frozen-plan surrogate, evaluated independently
// of grad_check.
void expect_gradient_matches(MethodTag tag, std::uint64_t seed) {
  const std::size_t n = tag == MethodTag::coop ? 1 : 4;
  Fixture f = make_fixture(seed, 4, n, 9, 8, 3, 6);
  HeadConfig cfg;
  cfg.tau = 0.1;
  cfg.n_prompts = n;
  const Method method = Method::of(tag);
  const LossGrad base = loss_and_grad(f.batch, f.bank, f.enc, method, cfg);
  const FrozenPlans* frozen = tag == MethodTag::plot ? &base.plans : nullptr;
  PromptBank probe = f.bank;
  const double eps = 1e-5;
  for (std::size_t i = 0; i < probe.ctx.size(); ++i) {
    double& x = probe.ctx.values()[i];
    const double saved = x;
    x = saved + eps;
    const double up = batch_loss(f.batch, probe, f.enc, method, cfg, frozen);
    x = saved - eps;
    const double down = batch_loss(f.batch, probe, f.enc, method, cfg, frozen);
    x = saved;
    const double numeric = (up - down) / (2 * eps);
    const double analytic = base.grad.values()[i];
    const double scale = std::max(std::abs(numeric), std::abs(analytic));
    if (scale < 1e-12) continue;
    EXPECT_LE(std::abs(numeric - analytic) / scale, 1e-4)
        << method_name(tag) << " coordinate " << i;
  }
}

TEST(LossAndGrad, GradientMatchesFiniteDifferencesForEveryMethod) {
  for (MethodTag tag : kAllMethods) expect_gradient_matches(tag, 40);
}

TEST(LossAndGrad, EntropicDistanceDanskinCheck) {
  Fixture f = make_fixture(41, 3, 3, 6, 6, 2, 4);
  HeadConfig cfg;
  cfg.tau = 0.1;
  cfg.n_prompts = 3;
  cfg.entropic_distance = true;
  cfg.sinkhorn.delta = 1e-12;
  cfg.sinkhorn.max_iter = 100000;
  const Method method = Method::of(MethodTag::plot);
  const LossGrad base = loss_and_grad(f.batch, f.bank, f.enc, method, cfg);
  PromptBank probe = f.bank;
  const double eps = 1e-5;
  Rng rng(41);
  for (int t = 0; t < 30; ++t) {
    const std::size_t i = rng.uniform_index(probe.ctx.size());
    double& x = probe.ctx.values()[i];
    const double saved = x;
    x = saved + eps;
    const double up = batch_loss(f.batch, probe, f.enc, method, cfg);
    x = saved - eps;
    const double down = batch_loss(f.batch, probe, f.enc, method, cfg);
    x = saved;
    EXPECT_NEAR((up - down) / (2 * eps), base.grad.values()[i], 1e-3);
  }
}

}  // namespace
}  // namespace plot
