// Acceptance suite. Prints one PASS/FAIL line per criterion; with an integer
// argument only that criterion runs. Exit status is 1 when any selected
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "plot/ablation.hpp"
#include "plot/dataio.hpp"
#include "plot/head.hpp"
#include "plot/ot.hpp"
#include "plot/trainer.hpp"

namespace fs = std::filesystem;
using namespace plot;

namespace {

// Pinned tolerances.
constexpr double kOracleGapTol = 0.05;
constexpr double kOracleSeconds = 2.0;
constexpr double kResidualTol = 0.01;
constexpr double kExactTol = 1e-12;
constexpr double kCoopMatchTol = 1e-10;
constexpr double kGradRelTol = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr std::size_t kGradCoords = 100;
constexpr double kDanskinTol = 1e-3;
constexpr double kPropertyTol = 1e-9;
constexpr double kAblationSeconds = 600.0;
constexpr double kChanceSigmas = 3.0;
constexpr double kOverheadRatio = 2.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Mat random_unit_rows(Rng& rng, std::size_t r, std::size_t c) {
  Mat m(r, c);
  for (double& x : m.values()) x = rng.gaussian();
  return l2_normalize_rows(m);
}

// Uniform-marginal square OT is attained at a scaled permutation matrix.
double brute_force_square(const Mat& c) {
  std::vector<std::size_t> perm(c.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += c(i, perm[i]);
    best = std::min(best, s / static_cast<double>(perm.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

SinkhornConfig tight() {
  SinkhornConfig cfg;
  cfg.delta = 1e-13;
  cfg.max_iter = 200000;
  return cfg;
}

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double max_gap_01 = 0.0, mean_gap_01 = 0.0, mean_gap_1 = 0.0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    Mat c(4, 4);
    for (double& x : c.values()) x = rng.uniform();
    const double exact = brute_force_square(c);
    SinkhornConfig cfg;
    cfg.lambda = 0.01;
    const double gap01 =
        std::abs(sinkhorn(CostMatrix(c), uniform_measure(4), uniform_measure(4), cfg).cost - exact);
    cfg.lambda = 0.1;
    const double gap1 =
        std::abs(sinkhorn(CostMatrix(c), uniform_measure(4), uniform_measure(4), cfg).cost - exact);
    max_gap_01 = std::max(max_gap_01, gap01);
    mean_gap_01 += gap01 / trials;
    mean_gap_1 += gap1 / trials;
  }
  const double secs = seconds_since(t0);
  return {max_gap_01 <= kOracleGapTol && mean_gap_01 < mean_gap_1 && secs < kOracleSeconds,
          "max gap(0.01) " + fmt("%.3g", max_gap_01) + ", mean gap 0.01/0.1 " +
              fmt("%.3g", mean_gap_01) + "/" + fmt("%.3g", mean_gap_1) + ", " +
              fmt("%.3f", secs) + " s"};
}

Outcome feasibility() {
  Rng rng(7);
  double worst = 0.0;
  int not_converged = 0;
  for (int t = 0; t < 100; ++t) {
    const Mat f = random_unit_rows(rng, 49, 64);
    const Mat g = random_unit_rows(rng, 4, 64);
    const auto r = sinkhorn(cost_matrix(f, g), uniform_measure(49), uniform_measure(4),
                            SinkhornConfig{});
    worst = std::max({worst, r.row_residual, r.col_residual});
    if (!r.converged) ++not_converged;
  }
  return {worst <= kResidualTol, "worst L1 residual " + fmt("%.3g", worst) + ", " +
                                     std::to_string(not_converged) + " hit max_iter"};
}

Outcome degeneracy() {
  Rng rng(3);
  double err_1x1 = 0.0, err_mean = 0.0, err_coop = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double c = 2.0 * rng.uniform();
    const auto r = sinkhorn(CostMatrix(Mat(1, 1, c)), uniform_measure(1), uniform_measure(1),
                            SinkhornConfig{});
    err_1x1 = std::max(err_1x1, std::abs(r.cost - c));

    const Mat f = random_unit_rows(rng, 49, 16);
    const Mat g = random_unit_rows(rng, 1, 16);
    double mean = 0.0;
    for (std::size_t m = 0; m < 49; ++m) mean += (1.0 - dot(f.row(m), g.row(0))) / 49.0;
    err_mean = std::max(err_mean, std::abs(plot_distances(f, {g}, HeadConfig{}).distances[0] - mean));

    // Single local feature and single prompt.
    std::vector<Image> images(4);
    std::vector<const Image*> batch;
    for (std::size_t b = 0; b < images.size(); ++b) {
      images[b].locals = random_unit_rows(rng, 1, 8);
      images[b].global = Vec(images[b].locals.row(0).begin(), images[b].locals.row(0).end());
      images[b].label = static_cast<std::uint32_t>(b % 3);
      batch.push_back(&images[b]);
    }
    PromptBank bank;
    bank.ctx = Tensor3(1, 3, 8);
    for (double& x : bank.ctx.values()) x = 0.3 * rng.gaussian();
    bank.class_tokens = Mat(3, 8);
    for (double& x : bank.class_tokens.values()) x = rng.gaussian();
    const TextEncoder enc = TextEncoder::seeded(100 + t, 8, 8);
    HeadConfig cfg;
    cfg.n_prompts = 1;
    cfg.tau = 0.1;
    const LossGrad a = loss_and_grad(batch, bank, enc, Method::of(MethodTag::plot), cfg);
    const LossGrad b = loss_and_grad(batch, bank, enc, Method::of(MethodTag::coop), cfg);
    err_coop = std::max(err_coop, std::abs(a.loss - b.loss));
    for (std::size_t i = 0; i < a.grad.size(); ++i)
      err_coop = std::max(err_coop, std::abs(a.grad.values()[i] - b.grad.values()[i]));
  }
  return {err_1x1 <= kExactTol && err_mean <= kExactTol && err_coop <= kCoopMatchTol,
          "1x1 " + fmt("%.2g", err_1x1) + ", N=1 mean " + fmt("%.2g", err_mean) +
              ", vs CoOp " + fmt("%.2g", err_coop)};
}

Outcome gradient_audit() {
  double worst = 0.0;
  std::size_t compared = 0, sampled = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    SynthConfig s;
    s.n_classes = 3 + i % 3;
    s.n_attributes = 2 + i % 3;
    s.shots = 4;
    s.test_per_class = 1;
    s.m_locals = i % 2 == 0 ? 9 : 16;
    s.feat_dim = 16 + 8 * (i % 2);
    s.seed = i;
    const Dataset data = gen_synthetic(s);
    TrainConfig cfg;
    cfg.seed = 50 + i;
    cfg.ctx_len = 2 + i % 4;
    cfg.head.n_prompts = 1 + i % 4;
    cfg.head.tau = i < 5 ? 0.01 : 0.1;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const ModelState m = train(data, cfg);
    std::vector<const Image*> batch;
    for (std::size_t b = 0; b < 8; ++b) batch.push_back(&data.images[b]);
    const GradCheckReport r = grad_check(m, batch, kFdStep, kGradCoords, 1000 + i);
    worst = std::max(worst, r.max_rel_error);
    compared += r.compared;
    sampled += r.coordinates;
  }

  // Danskin: with the entropic value as distance, the plan is the exact
  // derivative of the distance w.r.t. the cost, so a live (unfrozen) finite
  // difference must agree with the frozen-plan gradient.
  SynthConfig s;
  s.n_classes = 3;
  s.n_attributes = 2;
  s.shots = 3;
  s.m_locals = 9;
  s.feat_dim = 12;
  s.seed = 77;
  const Dataset data = gen_synthetic(s);
  TrainConfig cfg;
  cfg.ctx_len = 3;
  cfg.head.n_prompts = 3;
  cfg.head.tau = 0.1;
  cfg.head.entropic_distance = true;
  cfg.head.sinkhorn = tight();
  const ModelState m = init_model(data.n_classes, data.feat_dim(), data.backbone_seed, cfg);
  std::vector<const Image*> batch;
  for (std::size_t b = 0; b < 6; ++b) batch.push_back(&data.images[b]);
  const LossGrad base = loss_and_grad(batch, m.bank, m.encoder, m.method, m.head);
  PromptBank probe = m.bank;
  Rng rng(5);
  double danskin = 0.0;
  for (int t = 0; t < 30; ++t) {
    const std::size_t idx = rng.uniform_index(probe.ctx.size());
    double& x = probe.ctx.values()[idx];
    const double saved = x;
    x = saved + kFdStep;
    const double up = batch_loss(batch, probe, m.encoder, m.method, m.head);
    x = saved - kFdStep;
    const double down = batch_loss(batch, probe, m.encoder, m.method, m.head);
    x = saved;
    danskin = std::max(danskin, std::abs((up - down) / (2 * kFdStep) - base.grad.values()[idx]));
  }
  return {worst <= kGradRelTol && sampled >= 10 * kGradCoords && danskin <= kDanskinTol,
          "max rel err " + fmt("%.3g", worst) + " over " + std::to_string(compared) + "/" +
              std::to_string(sampled) + " coords, Danskin abs err " + fmt("%.3g", danskin)};
}

Outcome sinkhorn_properties() {
  Rng rng(11);
  const SinkhornConfig base = tight();
  double scale_err = 0.0, perm_err = 0.0, sym_err = 0.0, mono_violation = 0.0;
  for (int t = 0; t < 10; ++t) {
    Mat c(5, 3);
    for (double& x : c.values()) x = rng.uniform();
    const auto u = uniform_measure(5);
    const auto v = uniform_measure(3);
    const auto ref = sinkhorn(CostMatrix(c), u, v, base);
    for (double s : {0.5, 2.0, 10.0}) {
      Mat sc = c;
      for (double& x : sc.values()) x *= s;
      SinkhornConfig cfg = base;
      cfg.lambda *= s;
      const auto r = sinkhorn(CostMatrix(sc), u, v, cfg);
      scale_err = std::max(scale_err, std::abs(r.cost - s * ref.cost));
      for (std::size_t i = 0; i < c.size(); ++i)
        scale_err = std::max(scale_err, std::abs(r.plan.mass.values()[i] - ref.plan.mass.values()[i]));
    }

    std::vector<std::size_t> rp{3, 0, 4, 1, 2}, cp{2, 0, 1};
    Mat pc(5, 3);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) pc(i, j) = c(rp[i], cp[j]);
    const auto pr = sinkhorn(CostMatrix(pc), u, v, base);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        perm_err = std::max(perm_err, std::abs(pr.plan(i, j) - ref.plan(rp[i], cp[j])));

    Mat sym(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j <= i; ++j) sym(i, j) = sym(j, i) = rng.uniform();
    const auto sr = sinkhorn(CostMatrix(sym), uniform_measure(4), uniform_measure(4), base);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        sym_err = std::max(sym_err, std::abs(sr.plan(i, j) - sr.plan(j, i)));

    double prev = -INFINITY;
    for (double lambda : {0.01, 0.05, 0.1, 0.5}) {
      SinkhornConfig cfg = base;
      cfg.lambda = lambda;
      const double cost = sinkhorn(CostMatrix(c), u, v, cfg).cost;
      mono_violation = std::max(mono_violation, prev - cost);
      prev = cost;
    }
  }
  const bool pass = scale_err <= kPropertyTol && perm_err <= kPropertyTol &&
                    sym_err <= kPropertyTol && mono_violation <= kPropertyTol;
  return {pass, "scale " + fmt("%.2g", scale_err) + ", permutation " + fmt("%.2g", perm_err) +
                    ", symmetry " + fmt("%.2g", sym_err) + ", monotone violation " +
                    fmt("%.2g", std::max(0.0, mono_violation))};
}

Outcome trend_reproduction() {
  AblationSpec spec;  // default generator, seeds 0..4, N in {1, 2, 4, 8}
  spec.threads = std::max(1u, std::thread::hardware_concurrency());
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation(spec);
  const double secs = seconds_since(t0);
  auto find = [&](const std::string& group, MethodTag tag, std::size_t n) {
    for (const AblationRow& r : rows)
      if (r.group == group && r.method.tag == tag && (n == 0 || r.n_prompts == n)) return r.mean;
    return std::nan("");
  };
  const double plot4 = find("prompts", MethodTag::plot, 4);
  const double plot1 = find("prompts", MethodTag::plot, 1);
  const double g = find("methods", MethodTag::g, 0);
  const double m = find("methods", MethodTag::m, 0);
  return {plot4 > plot1 && g > m && secs < kAblationSeconds,
          "PLOT N=4 " + fmt("%.4f", plot4) + " vs N=1 " + fmt("%.4f", plot1) + ", G " +
              fmt("%.4f", g) + " vs M " + fmt("%.4f", m) + ", " + fmt("%.1f", secs) + " s"};
}

Outcome convergence_sanity() {
  SynthConfig s;
  s.n_attributes = 1;
  s.noise_sigma = 0.0;
  const Dataset sep = gen_synthetic(s);
  TrainConfig cfg;
  cfg.epochs = 50;
  const ModelState trained = train(sep, cfg);
  const double acc = evaluate(sep, trained).accuracy;

  // Chance check: the untrained model's text side comes from a backbone
  // unrelated to the generator's, so it carries no class information.
  SynthConfig big;
  big.test_per_class = 100;
  big.seed = 1;
  const Dataset d = gen_synthetic(big);
  TrainConfig untrained;
  untrained.backbone_seed = derive_seed(12345, "unrelated-backbone");
  const ModelState m0 = init_model(d.n_classes, d.feat_dim(), d.backbone_seed, untrained);
  const EvalReport r = evaluate(d, m0);
  const double p = 1.0 / static_cast<double>(d.n_classes);
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(r.n_images));
  const bool chance = std::abs(r.accuracy - p) <= kChanceSigmas * sigma;
  return {acc == 1.0 && chance && r.n_images >= 500,
          "separable accuracy " + fmt("%.4f", acc) + ", untrained " + fmt("%.4f", r.accuracy) +
              " on " + std::to_string(r.n_images) + " images (chance " + fmt("%.3f", p) +
              " +/- " + fmt("%.4f", kChanceSigmas * sigma) + ")"};
}

double best_eval_seconds(const Dataset& d, const ModelState& m) {
  double best = INFINITY;
  for (int rep = 0; rep < 5; ++rep) best = std::min(best, evaluate(d, m).seconds_total);
  return best;
}

Outcome overhead_bound() {
  const Dataset d = gen_synthetic(SynthConfig{});
  TrainConfig cfg;
  cfg.epochs = 10;
  const ModelState plot = train(d, cfg);
  cfg.method = Method::of(MethodTag::coop);
  const ModelState coop = train(d, cfg);
  const double tp = best_eval_seconds(d, plot);
  const double tc = best_eval_seconds(d, coop);
  const double ratio = tp / tc;
  return {ratio <= kOverheadRatio, "PLOT(N=4) " + fmt("%.3g", tp) + " s vs CoOp " +
                                       fmt("%.3g", tc) + " s, ratio " + fmt("%.1f", ratio)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome persistence() {
  const fs::path dir = fs::temp_directory_path() / "plot_acceptance";
  fs::create_directories(dir);
  SynthConfig s;
  s.shots = 4;
  s.test_per_class = 5;
  const Dataset d = gen_synthetic(s);
  save_dataset(d, dir / "a.bin");
  const Dataset back = load_dataset(dir / "a.bin");
  save_dataset(back, dir / "b.bin");
  const bool data_ok = back.images == narrowed_to_float32(d).images && back.n_train == d.n_train &&
                       back.backbone_seed == d.backbone_seed &&
                       slurp(dir / "a.bin") == slurp(dir / "b.bin");

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 9;
  const ModelState m1 = train(back, cfg);
  const ModelState m2 = train(load_dataset(dir / "a.bin"), cfg);
  const bool repro = m1.bank.ctx == m2.bank.ctx && m1.train_log == m2.train_log;

  save_model(m1, dir / "m.json");
  const ModelState loaded = load_model(dir / "m.json");
  const bool model_ok = loaded.bank.ctx == m1.bank.ctx &&
                        loaded.bank.class_tokens == m1.bank.class_tokens &&
                        loaded.encoder.proj == m1.encoder.proj &&
                        loaded.train_log == m1.train_log &&
                        evaluate(back, loaded).accuracy == evaluate(back, m1).accuracy;
  fs::remove_all(dir);
  return {data_ok && repro && model_ok, std::string("dataset ") + (data_ok ? "ok" : "MISMATCH") +
                                            ", model " + (model_ok ? "ok" : "MISMATCH") +
                                            ", training " + (repro ? "bit-identical" : "DIFFERS")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion> kCriteria = {
    {"oracle equivalence", oracle_equivalence},
    {"feasibility", feasibility},
    {"degeneracy identities", degeneracy},
    {"gradient audit", gradient_audit},
    {"sinkhorn properties", sinkhorn_properties},
    {"trend reproduction", trend_reproduction},
    {"convergence sanity", convergence_sanity},
    {"overhead bound", overhead_bound},
    {"persistence", persistence},
};

}  // namespace

int main(int argc, char** argv) {
  std::size_t first = 1, last = kCriteria.size();
  if (argc > 1) {
    const int n = std::atoi(argv[1]);
    if (n < 1 || n > static_cast<int>(kCriteria.size())) {
      std::fprintf(stderr, "usage: %s [1-%zu]\n", argv[0], kCriteria.size());
      return 2;
    }
    first = last = static_cast<std::size_t>(n);
  }
  bool all = true;
  for (std::size_t i = first; i <= last; ++i) {
    Outcome o;
    try {
      o = kCriteria[i - 1].run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %zu %-22s %s  %s\n", i, kCriteria[i - 1].name, o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
