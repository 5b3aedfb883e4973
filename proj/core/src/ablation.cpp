#include "plot/ablation.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "plot/errors.hpp"

namespace plot {
namespace {

struct Job {
  std::size_t seed_index;
  Method method;
  std::size_t n_prompts;
};

using RunKey = std::tuple<MethodTag, std::size_t, std::size_t>;

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 4);
  return std::string(buf, r.ptr);
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationSpec& spec, const AblationProgress& progress) {
  if (spec.seeds.empty()) throw ValueError("run_ablation: no seeds");
  spec.base.validate();

  std::vector<Dataset> datasets;
  if (spec.dataset) {
    datasets.push_back(*spec.dataset);
  } else {
    for (std::uint64_t s : spec.seeds) {
      SynthConfig g = spec.generator;
      g.seed = s;
      datasets.push_back(gen_synthetic(g));
    }
  }

  std::vector<AblationRow> rows;
  for (MethodTag tag : kAllMethods) {
    Method m = Method::of(tag);
    if (m.has_variance_term() && spec.base.method.has_variance_term())
      m.var_weight = spec.base.method.var_weight;
    rows.push_back({"methods", m, tag == MethodTag::coop ? 1 : spec.base.head.n_prompts, {}, 0, 0});
  }
  for (std::size_t n : spec.prompt_counts)
    rows.push_back({"prompts", Method::of(MethodTag::plot), n, {}, 0, 0});

  // Identical (method, N, seed) runs are trained once.
  std::map<RunKey, std::size_t> job_index;
  std::vector<Job> jobs;
  for (const AblationRow& row : rows)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      const RunKey key{row.method.tag, row.n_prompts, s};
      if (job_index.emplace(key, jobs.size()).second) jobs.push_back({s, row.method, row.n_prompts});
    }

  std::vector<double> results(jobs.size(), 0.0);
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      try {
        TrainConfig cfg = spec.base;
        cfg.method = job.method;
        cfg.head.n_prompts = job.n_prompts;
        cfg.seed = spec.seeds[job.seed_index];
        const Dataset& data = datasets[spec.dataset ? 0 : job.seed_index];
        const ModelState model = train(data, cfg);
        results[j] = evaluate(data, model).accuracy;
        if (progress) {
          std::lock_guard lock(progress_mutex);
          progress(std::string(method_name(job.method.tag)) + " N=" +
                   std::to_string(job.n_prompts) + " seed=" + std::to_string(cfg.seed) +
                   " accuracy=" + fmt(results[j]));
        }
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };

  const std::size_t n_threads = std::min(std::max<std::size_t>(spec.threads, 1), jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (AblationRow& row : rows) {
    for (std::size_t s = 0; s < spec.seeds.size(); ++s)
      row.accuracies.push_back(results[job_index.at({row.method.tag, row.n_prompts, s})]);
    double sum = 0.0;
    for (double a : row.accuracies) sum += a;
    row.mean = sum / static_cast<double>(row.accuracies.size());
    if (row.accuracies.size() > 1) {
      double ss = 0.0;
      for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(row.accuracies.size() - 1));
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows,
                         const std::vector<std::uint64_t>& seeds) {
  std::string out = "group,method,n_prompts,mean_accuracy,std_accuracy";
  for (std::uint64_t s : seeds) out += ",seed_" + std::to_string(s);
  out += '\n';
  for (const AblationRow& r : rows) {
    out += r.group + ',' + std::string(method_name(r.method.tag)) + ',' +
           std::to_string(r.n_prompts) + ',' + fmt(r.mean) + ',' + fmt(r.stddev);
    for (double a : r.accuracies) out += ',' + fmt(a);
    out += '\n';
  }
  return out;
}

}  // namespace plot
