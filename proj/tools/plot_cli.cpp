// plot: generate synthetic data, train and evaluate prompt heads, run the
// method comparison and the numerical self-checks.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or validation failure.

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "plot/ablation.hpp"
#include "plot/dataio.hpp"
#include "plot/encoders.hpp"
#include "plot/errors.hpp"
#include "plot/head.hpp"
#include "plot/ot.hpp"
#include "plot/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenFlags {
  plot::SynthConfig cfg;
  std::string out;
};

struct TrainFlags {
  std::string method = "plot";
  std::size_t n_prompts = 4;
  std::size_t ctx_len = 16;
  double lr = 0.002;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double warmup_lr = 1e-5;
  double tau = 0.01;
  double lambda = 0.1;
  int max_iter = 100;
  double delta = 0.01;
  bool log_domain = false;
  std::optional<double> var_weight;
  std::uint64_t seed = 0;
  bool no_shuffle = false;
  std::optional<std::uint64_t> backbone_seed;
};

std::string fixed(double v, int digits = 4) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
  return std::string(buf, r.ptr);
}

std::string general(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 6);
  return std::string(buf, r.ptr);
}

void add_generator_flags(CLI::App* app, plot::SynthConfig& c) {
  app->add_option("--classes", c.n_classes, "Number of classes K")->check(CLI::PositiveNumber);
  app->add_option("--attributes", c.n_attributes, "Attribute prototypes per class")
      ->check(CLI::PositiveNumber);
  app->add_option("--shots", c.shots, "Training images per class")->check(CLI::PositiveNumber);
  app->add_option("--test", c.test_per_class, "Test images per class")->check(CLI::PositiveNumber);
  app->add_option("--m", c.m_locals, "Local features per image")->check(CLI::PositiveNumber);
  app->add_option("--dim", c.feat_dim, "Feature dimension C")->check(CLI::PositiveNumber);
  app->add_option("--sigma", c.noise_sigma, "Feature noise scale")->check(CLI::NonNegativeNumber);
  app->add_option("--background", c.background_prototypes, "Shared background prototypes")
      ->check(CLI::NonNegativeNumber);
}

void add_train_flags(CLI::App* app, TrainFlags& f, bool with_method) {
  if (with_method) {
    app->add_option("--method", f.method, "plot, coop, g, g+v, g+e, m or m+v");
    app->add_option("--n-prompts", f.n_prompts, "Prompts per class N")->check(CLI::PositiveNumber);
  }
  app->add_option("--ctx-len", f.ctx_len, "Context tokens per prompt L")->check(CLI::PositiveNumber);
  app->add_option("--lr", f.lr, "Initial learning rate")->check(CLI::PositiveNumber);
  app->add_option("--epochs", f.epochs, "Training epochs")->check(CLI::PositiveNumber);
  app->add_option("--batch-size", f.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  app->add_option("--warmup-lr", f.warmup_lr, "Learning rate of epoch 0")->check(CLI::PositiveNumber);
  app->add_option("--tau", f.tau, "Softmax temperature")->check(CLI::PositiveNumber);
  app->add_option("--lambda", f.lambda, "Entropic weight")->check(CLI::PositiveNumber);
  app->add_option("--max-iter", f.max_iter, "Sinkhorn iteration cap")->check(CLI::PositiveNumber);
  app->add_option("--delta", f.delta, "Sinkhorn early-stop threshold")->check(CLI::PositiveNumber);
  app->add_flag("--log-domain", f.log_domain, "Use the log-domain Sinkhorn solver");
  app->add_option("--var-weight", f.var_weight, "Prompt-diversity weight for g+v / m+v")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--seed", f.seed, "Training seed");
  app->add_flag("--no-shuffle", f.no_shuffle, "Keep minibatches in dataset order");
  app->add_option("--backbone-seed", f.backbone_seed,
                  "Seed of the frozen encoder (default: the dataset's)");
}

plot::TrainConfig to_train_config(const TrainFlags& f) {
  plot::TrainConfig cfg;
  try {
    cfg.method = plot::Method::of(plot::parse_method(f.method));
    if (f.var_weight) cfg.method.var_weight = *f.var_weight;
    cfg.lr = f.lr;
    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch_size;
    cfg.warmup_lr = f.warmup_lr;
    cfg.seed = f.seed;
    cfg.shuffle = !f.no_shuffle;
    cfg.ctx_len = f.ctx_len;
    cfg.backbone_seed = f.backbone_seed;
    cfg.head.tau = f.tau;
    cfg.head.n_prompts = f.n_prompts;
    cfg.head.sinkhorn.lambda = f.lambda;
    cfg.head.sinkhorn.max_iter = f.max_iter;
    cfg.head.sinkhorn.delta = f.delta;
    cfg.head.sinkhorn.log_domain = f.log_domain;
    cfg.validate();
    if (cfg.method.context_init() == plot::ContextInit::preset_ensemble &&
        cfg.head.n_prompts > plot::kPresetCount) {
      throw plot::ValueError("g+e supports at most " + std::to_string(plot::kPresetCount) +
                             " prompts");
    }
  } catch (const plot::Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::size_t thread_cap() {
  const char* env = std::getenv("PLOT_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  std::size_t n = 0;
  const std::string_view s(env);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), n);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw UsageError("PLOT_THREADS must be a non-negative integer, got '" + std::string(s) + "'");
  }
  return n;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw UsageError("--seeds expects a comma-separated list of integers, got '" + text + "'");
    }
    seeds.push_back(v);
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  return seeds;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw plot::FormatError("cannot write " + path.string());
  out << text;
}

std::span<const plot::Image> split_of(const plot::Dataset& d, const std::string& split) {
  return split == "train" ? d.train() : d.test();
}

int cmd_gen(const GenFlags& f) {
  try {
    f.cfg.validate();
  } catch (const plot::Error& e) {
    throw UsageError(e.what());
  }
  const plot::Dataset d = plot::gen_synthetic(f.cfg);
  plot::save_dataset(d, f.out);
  std::cout << "wrote " << f.out << ": K=" << f.cfg.n_classes << " A=" << f.cfg.n_attributes
            << " M=" << f.cfg.m_locals << " C=" << f.cfg.feat_dim << " shots=" << f.cfg.shots
            << " test=" << f.cfg.test_per_class << " images=" << d.images.size() << "\n";
  return kExitOk;
}

int cmd_train(const TrainFlags& f, const std::string& data_path, const std::string& out,
              bool quiet) {
  const plot::TrainConfig cfg = to_train_config(f);
  const plot::Dataset data = plot::load_dataset(data_path);
  auto print = [](const plot::EpochLog& e, void*) {
    std::cout << "epoch " << e.epoch << " lr " << general(e.lr) << " loss "
              << fixed(e.mean_loss, 6) << "\n";
  };
  const plot::ModelState model =
      plot::train(data, cfg, quiet ? nullptr : +print, nullptr);
  plot::save_model(model, out);
  std::cout << "wrote " << out << " (" << plot::method_name(model.method.tag)
            << ", N=" << model.head.n_prompts << ", epochs=" << model.train_log.size() << ")\n";
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& out, const std::string& split) {
  const plot::ModelState model = plot::load_model(model_path);
  const plot::Dataset data = plot::load_dataset(data_path);
  if (data.n_classes != model.bank.n_classes() || data.feat_dim() != model.encoder.feat_dim()) {
    throw plot::ShapeError("model is " + std::to_string(model.bank.n_classes()) + " classes x " +
                           std::to_string(model.encoder.feat_dim()) + " features, dataset is " +
                           std::to_string(data.n_classes) + " classes x " +
                           std::to_string(data.feat_dim()) + " features");
  }
  const plot::EvalReport r = plot::evaluate(split_of(data, split), model);
  if (!out.empty()) plot::save_eval_report(r, model, out);
  std::cout << "method " << plot::method_name(model.method.tag) << " N=" << model.head.n_prompts
            << "\naccuracy " << fixed(r.accuracy) << " (" << r.n_images << " images)\n";
  for (std::size_t k = 0; k < r.per_class_accuracy.size(); ++k)
    std::cout << "class " << k << " " << fixed(r.per_class_accuracy[k]) << "\n";
  std::cout << "mean sinkhorn iterations " << fixed(r.mean_sinkhorn_iterations, 2)
            << "\nseconds per image " << general(r.seconds_per_image) << "\n";
  return kExitOk;
}

int cmd_ablate(const TrainFlags& f, const plot::SynthConfig& gen, const std::string& data_path,
               const std::string& seeds_text, const std::string& out, bool quiet) {
  plot::AblationSpec spec;
  spec.seeds = parse_seeds(seeds_text);
  spec.base = to_train_config(f);
  spec.generator = gen;
  try {
    gen.validate();
  } catch (const plot::Error& e) {
    throw UsageError(e.what());
  }
  spec.threads = thread_cap();
  if (!data_path.empty()) spec.dataset = plot::load_dataset(data_path);
  plot::AblationProgress progress;
  if (!quiet) progress = [](const std::string& line) { std::cerr << line << "\n"; };
  const auto rows = plot::run_ablation(spec, progress);
  const std::string csv = plot::ablation_csv(rows, spec.seeds);
  if (!out.empty()) write_text(out, csv);
  std::cout << csv;
  return kExitOk;
}

int cmd_oracle_check(std::size_t rows, std::size_t cols, std::size_t trials,
                     const plot::SinkhornConfig& cfg, std::uint64_t seed,
                     std::optional<double> max_gap) {
  if (std::lcm(rows, cols) > plot::kExactOtMaxSize) {
    throw UsageError("lcm(--rows, --cols) must not exceed " +
                     std::to_string(plot::kExactOtMaxSize));
  }
  try {
    cfg.validate();
  } catch (const plot::Error& e) {
    throw UsageError(e.what());
  }
  const plot::OracleReport r = plot::oracle_check(rows, cols, trials, cfg, seed);
  std::cout << "trials " << r.trials << "\nmax_gap " << general(r.max_gap) << "\nmean_gap "
            << general(r.mean_gap) << "\nmax_marginal_residual " << general(r.max_residual)
            << "\nconverged " << r.converged << "\n";
  if (max_gap && r.max_gap > *max_gap) {
    std::cerr << "max gap " << general(r.max_gap) << " exceeds " << general(*max_gap) << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_grad_check(const std::string& model_path, const std::string& data_path,
                   std::size_t batch_size, double eps, std::size_t coords, std::uint64_t seed,
                   double tolerance) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw UsageError("--eps must lie in [1e-7, 1e-3]");
  const plot::ModelState model = plot::load_model(model_path);
  const plot::Dataset data = plot::load_dataset(data_path);
  const auto train = data.train();
  plot::Rng rng(plot::derive_seed(seed, "grad-check-batch"));
  std::vector<const plot::Image*> batch;
  for (std::size_t i = 0; i < batch_size; ++i)
    batch.push_back(&train[rng.uniform_index(train.size())]);
  const plot::GradCheckReport r = plot::grad_check(model, batch, eps, coords, seed);
  std::cout << "coordinates " << r.coordinates << "\ncompared " << r.compared << "\nsaturated "
            << r.saturated << "\nmax_rel_error " << general(r.max_rel_error)
            << "\nmean_rel_error " << general(r.mean_rel_error) << "\n";
  return r.max_rel_error <= tolerance ? kExitOk : kExitFailure;
}

int cmd_inspect_plan(const std::string& model_path, const std::string& data_path,
                     std::size_t image_index, std::optional<std::size_t> only_class,
                     const std::string& split, const std::string& out_dir) {
  const plot::ModelState model = plot::load_model(model_path);
  if (model.method.tag != plot::MethodTag::plot) {
    throw plot::ValueError("inspect-plan needs a PLOT model, got " +
                           std::string(plot::method_name(model.method.tag)));
  }
  const plot::Dataset data = plot::load_dataset(data_path);
  const auto images = split_of(data, split);
  if (image_index >= images.size()) {
    throw plot::ValueError("--image-index " + std::to_string(image_index) + " out of range (" +
                           std::to_string(images.size()) + " " + split + " images)");
  }
  const plot::PromptFeatures g = plot::encode_prompts(model.bank, model.encoder);
  const plot::ClassScores scores =
      plot::score_image(images[image_index], g, model.method, model.head);
  const auto res = plot::export_plan(scores, image_index, plot::feature_grid(data.m_locals()),
                                     out_dir, only_class);
  for (const auto& n : res.notices) std::cerr << "note: " << n << "\n";
  std::cout << "wrote " << res.files.size() << " files to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt learning with optimal transport"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file of option values; flags on the command line win");
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic feature dataset");
  add_generator_flags(gen_cmd, gen.cfg);
  gen_cmd->add_option("--seed", gen.cfg.seed, "Generator seed");
  gen_cmd->add_option("--out", gen.out, "Output dataset path")->required();

  TrainFlags train_flags;
  std::string train_data;
  std::string train_out;
  bool train_quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train prompts on a dataset");
  add_train_flags(train_cmd, train_flags, true);
  train_cmd->add_option("--data", train_data, "Dataset path")->required();
  train_cmd->add_option("--out", train_out, "Output model path")->required();
  train_cmd->add_flag("--quiet", train_quiet, "Do not print per-epoch losses");

  std::string eval_model, eval_data, eval_out, eval_split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained model");
  eval_cmd->add_option("--model", eval_model, "Model path")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset path")->required();
  eval_cmd->add_option("--out", eval_out, "Write the report as JSON");
  eval_cmd->add_option("--split", eval_split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));

  TrainFlags ablate_flags;
  plot::SynthConfig ablate_gen;
  std::string ablate_data, ablate_seeds = "0,1,2,3,4", ablate_out;
  bool ablate_quiet = false;
  auto* ablate_cmd =
      app.add_subcommand("ablate", "Compare all heads and prompt counts over several seeds");
  add_train_flags(ablate_cmd, ablate_flags, false);
  ablate_cmd->add_option("--n-prompts", ablate_flags.n_prompts, "Prompts for the method rows")
      ->check(CLI::PositiveNumber);
  add_generator_flags(ablate_cmd, ablate_gen);
  ablate_cmd->add_option("--data", ablate_data, "Fixed dataset (default: generate per seed)");
  ablate_cmd->add_option("--seeds", ablate_seeds, "Comma-separated seeds");
  ablate_cmd->add_option("--out", ablate_out, "Write the CSV table here");
  ablate_cmd->add_flag("--quiet", ablate_quiet, "No per-run progress");

  std::size_t oc_rows = 4, oc_cols = 4, oc_trials = 100;
  plot::SinkhornConfig oc_cfg;
  std::uint64_t oc_seed = 0;
  std::optional<double> oc_max_gap;
  auto* oracle_cmd =
      app.add_subcommand("oracle-check", "Compare Sinkhorn against exact OT on random costs");
  oracle_cmd->add_option("--rows", oc_rows, "M")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--cols", oc_cols, "N")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--trials", oc_trials, "Random instances")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--lambda", oc_cfg.lambda, "Entropic weight")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--max-iter", oc_cfg.max_iter, "Iteration cap")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--delta", oc_cfg.delta, "Early-stop threshold")->check(CLI::PositiveNumber);
  oracle_cmd->add_flag("--log-domain", oc_cfg.log_domain, "Use the log-domain solver");
  oracle_cmd->add_option("--seed", oc_seed, "Seed for the random costs");
  oracle_cmd->add_option("--max-gap", oc_max_gap, "Exit 2 when the largest gap exceeds this");

  std::string gc_model, gc_data;
  std::size_t gc_batch = 8, gc_coords = 100;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  auto* grad_cmd =
      app.add_subcommand("grad-check", "Finite-difference audit of the context gradient");
  grad_cmd->add_option("--model", gc_model, "Model path")->required();
  grad_cmd->add_option("--data", gc_data, "Dataset path")->required();
  grad_cmd->add_option("--batch-size", gc_batch, "Training images in the batch")
      ->check(CLI::PositiveNumber);
  grad_cmd->add_option("--eps", gc_eps, "Finite-difference step");
  grad_cmd->add_option("--coords", gc_coords, "Sampled coordinates")->check(CLI::Range(100, 1000000));
  grad_cmd->add_option("--seed", gc_seed, "Sampling seed");
  grad_cmd->add_option("--tolerance", gc_tol, "Largest accepted relative error")
      ->check(CLI::PositiveNumber);

  std::string ip_model, ip_data, ip_out = "plans", ip_split = "test";
  std::size_t ip_image = 0;
  std::optional<std::size_t> ip_class;
  auto* inspect_cmd =
      app.add_subcommand("inspect-plan", "Export transport plans of one image as CSV and PGM");
  inspect_cmd->add_option("--model", ip_model, "Model path")->required();
  inspect_cmd->add_option("--data", ip_data, "Dataset path")->required();
  inspect_cmd->add_option("--image-index", ip_image, "Index within the split");
  inspect_cmd->add_option("--class", ip_class, "Export only this class");
  inspect_cmd->add_option("--split", ip_split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  inspect_cmd->add_option("--out-dir", ip_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(train_flags, train_data, train_out, train_quiet);
    if (*eval_cmd) return cmd_eval(eval_model, eval_data, eval_out, eval_split);
    if (*ablate_cmd)
      return cmd_ablate(ablate_flags, ablate_gen, ablate_data, ablate_seeds, ablate_out,
                        ablate_quiet);
    if (*oracle_cmd)
      return cmd_oracle_check(oc_rows, oc_cols, oc_trials, oc_cfg, oc_seed, oc_max_gap);
    if (*grad_cmd) return cmd_grad_check(gc_model, gc_data, gc_batch, gc_eps, gc_coords, gc_seed, gc_tol);
    if (*inspect_cmd)
      return cmd_inspect_plan(ip_model, ip_data, ip_image, ip_class, ip_split, ip_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
