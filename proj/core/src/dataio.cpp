#include "plot/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "plot/errors.hpp"

namespace plot {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kMagicSize = 8;
constexpr std::size_t kHeaderSize = kMagicSize + 4 * sizeof(std::uint32_t);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

double get_f32(const std::string& in, std::size_t& pos) {
  return static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw FormatError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

json synth_config_json(const SynthConfig& c) {
  return {{"n_classes", c.n_classes},
          {"n_attributes", c.n_attributes},
          {"shots", c.shots},
          {"test_per_class", c.test_per_class},
          {"m_locals", c.m_locals},
          {"feat_dim", c.feat_dim},
          {"noise_sigma", c.noise_sigma},
          {"background_prototypes", c.background_prototypes},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.n_attributes = j.at("n_attributes").get<std::size_t>();
  c.shots = j.at("shots").get<std::size_t>();
  c.test_per_class = j.at("test_per_class").get<std::size_t>();
  c.m_locals = j.at("m_locals").get<std::size_t>();
  c.feat_dim = j.at("feat_dim").get<std::size_t>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.background_prototypes = j.at("background_prototypes").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json flat(std::span<const double> values) { return json(std::vector<double>(values.begin(), values.end())); }

std::vector<double> flat_from(const json& j, std::size_t expected, const char* what) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != expected) {
    throw FormatError(std::string("model file: ") + what + " has " + std::to_string(v.size()) +
                      " values, expected " + std::to_string(expected));
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

fs::path manifest_path(const fs::path& dataset) {
  fs::path p = dataset;
  p += ".manifest.json";
  return p;
}

std::optional<std::pair<std::size_t, std::size_t>> feature_grid(std::size_t m) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
  if (side * side != m) return std::nullopt;
  return std::make_pair(side, side);
}

void save_dataset(const Dataset& d, const fs::path& path) {
  if (d.images.empty()) throw ValueError("save_dataset: empty dataset");
  const std::size_t m = d.m_locals();
  const std::size_t c = d.feat_dim();
  std::string bytes(kDatasetMagic, kMagicSize);
  bytes.reserve(kHeaderSize + d.images.size() * (4 + 4 * c * (m + 1)));
  put_u32(bytes, checked_u32(d.images.size(), "image count"));
  put_u32(bytes, checked_u32(m, "M"));
  put_u32(bytes, checked_u32(c, "C"));
  put_u32(bytes, checked_u32(d.n_classes, "K"));
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    const Image& img = d.images[i];
    if (img.locals.rows() != m || img.locals.cols() != c || img.global.size() != c) {
      throw ShapeError("save_dataset: image " + std::to_string(i) + " has inconsistent shape");
    }
    if (img.label >= d.n_classes) {
      throw ValueError("save_dataset: image " + std::to_string(i) + " label out of range");
    }
    put_u32(bytes, img.label);
    for (double x : img.locals.values()) put_f32(bytes, x);
    for (double x : img.global) put_f32(bytes, x);
  }
  write_file(path, bytes);

  json names = json::array();
  for (std::size_t k = 0; k < d.n_classes; ++k) names.push_back("class_" + std::to_string(k));
  json manifest = {{"format", kDatasetMagic},
                   {"n_images", d.images.size()},
                   {"n_train", d.n_train},
                   {"n_test", d.images.size() - d.n_train},
                   {"n_classes", d.n_classes},
                   {"class_names", names},
                   {"generator", synth_config_json(d.config)},
                   {"seed", d.config.seed},
                   {"backbone_seed", d.backbone_seed}};
  if (const auto grid = feature_grid(m)) {
    manifest["grid"] = {grid->first, grid->second};
  } else {
    manifest["grid"] = nullptr;
  }
  write_file(manifest_path(path), manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kDatasetMagic) != 0) {
    throw FormatError(where + "bad magic, expected \"" + std::string(kDatasetMagic) + "\"");
  }
  if (bytes.size() < kHeaderSize) {
    throw FormatError(where + "truncated header: " + std::to_string(bytes.size()) +
                      " bytes, expected at least " + std::to_string(kHeaderSize));
  }
  std::size_t pos = kMagicSize;
  const std::size_t n = get_u32(bytes, pos);
  const std::size_t m = get_u32(bytes, pos);
  const std::size_t c = get_u32(bytes, pos);
  const std::size_t k = get_u32(bytes, pos);
  const std::size_t per_image = 4 + 4 * c * (m + 1);
  const std::size_t expected = kHeaderSize + n * per_image;
  if (bytes.size() != expected) {
    throw FormatError(where + "length mismatch: header implies " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(bytes.size()));
  }
  if (n == 0 || m == 0 || c == 0 || k == 0) throw FormatError(where + "zero dimension in header");

  const fs::path mpath = manifest_path(path);
  if (!fs::exists(mpath)) throw FormatError(where + "missing manifest " + mpath.string());
  const json manifest = parse_json(read_file(mpath), mpath.string());

  Dataset d;
  try {
    if (manifest.at("format").get<std::string>() != kDatasetMagic) {
      throw FormatError(mpath.string() + ": unexpected format tag");
    }
    d.n_train = manifest.at("n_train").get<std::size_t>();
    d.n_classes = manifest.at("n_classes").get<std::size_t>();
    d.config = synth_config_from_json(manifest.at("generator"));
    d.backbone_seed = manifest.at("backbone_seed").get<std::uint64_t>();
    if (manifest.at("n_images").get<std::size_t>() != n) {
      throw FormatError(mpath.string() + ": image count disagrees with the data file");
    }
  } catch (const json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  if (d.n_classes != k) {
    throw FormatError(where + "manifest has " + std::to_string(d.n_classes) +
                      " classes, data file " + std::to_string(k));
  }
  if (d.n_train > n) throw FormatError(mpath.string() + ": n_train exceeds image count");

  d.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Image img;
    img.label = get_u32(bytes, pos);
    if (img.label >= k) {
      throw FormatError(where + "image " + std::to_string(i) + " has label " +
                        std::to_string(img.label) + " >= K=" + std::to_string(k));
    }
    img.locals = Mat(m, c);
    for (double& x : img.locals.values()) x = get_f32(bytes, pos);
    img.global.resize(c);
    for (double& x : img.global) x = get_f32(bytes, pos);
    if (!all_finite(img.locals.values()) || !all_finite(img.global)) {
      throw FormatError(where + "image " + std::to_string(i) + " has non-finite features");
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

Dataset narrowed_to_float32(const Dataset& d) {
  Dataset out = d;
  for (Image& img : out.images) {
    for (double& x : img.locals.values()) x = static_cast<double>(static_cast<float>(x));
    for (double& x : img.global) x = static_cast<double>(static_cast<float>(x));
  }
  return out;
}

std::string model_to_json(const ModelState& m) {
  json log = json::array();
  for (const EpochLog& e : m.train_log) {
    log.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss}});
  }
  const json doc = {
      {"version", kModelFormatVersion},
      {"method", std::string(method_name(m.method.tag))},
      {"var_weight", m.method.var_weight},
      {"head",
       {{"tau", m.head.tau},
        {"lambda", m.head.sinkhorn.lambda},
        {"max_iter", m.head.sinkhorn.max_iter},
        {"delta", m.head.sinkhorn.delta},
        {"log_domain", m.head.sinkhorn.log_domain},
        {"n_prompts", m.head.n_prompts},
        {"entropic_distance", m.head.entropic_distance}}},
      {"dims",
       {{"n_prompts", m.bank.n_prompts()},
        {"ctx_len", m.bank.ctx_len()},
        {"embed_dim", m.bank.embed_dim()},
        {"feat_dim", m.encoder.feat_dim()},
        {"n_classes", m.bank.n_classes()}}},
      {"seed", m.seed},
      {"backbone_seed", m.backbone_seed},
      {"ctx", flat(m.bank.ctx.values())},
      {"class_tokens", flat(m.bank.class_tokens.values())},
      {"proj", flat(m.encoder.proj.values())},
      {"train_log", log}};
  return doc.dump(1) + "\n";
}

ModelState model_from_json(const std::string& text) {
  const json doc = parse_json(text, "model file");
  ModelState m;
  try {
    const int version = doc.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw FormatError("model file: unsupported version " + std::to_string(version) +
                        " (expected " + std::to_string(kModelFormatVersion) + ")");
    }
    m.method.tag = parse_method(doc.at("method").get<std::string>());
    m.method.var_weight = doc.at("var_weight").get<double>();
    const json& h = doc.at("head");
    m.head.tau = h.at("tau").get<double>();
    m.head.sinkhorn.lambda = h.at("lambda").get<double>();
    m.head.sinkhorn.max_iter = h.at("max_iter").get<int>();
    m.head.sinkhorn.delta = h.at("delta").get<double>();
    m.head.sinkhorn.log_domain = h.at("log_domain").get<bool>();
    m.head.n_prompts = h.at("n_prompts").get<std::size_t>();
    m.head.entropic_distance = h.at("entropic_distance").get<bool>();
    const json& dims = doc.at("dims");
    const auto n = dims.at("n_prompts").get<std::size_t>();
    const auto l = dims.at("ctx_len").get<std::size_t>();
    const auto e = dims.at("embed_dim").get<std::size_t>();
    const auto c = dims.at("feat_dim").get<std::size_t>();
    const auto k = dims.at("n_classes").get<std::size_t>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.backbone_seed = doc.at("backbone_seed").get<std::uint64_t>();
    m.bank.ctx = Tensor3(n, l, e, flat_from(doc.at("ctx"), n * l * e, "ctx"));
    m.bank.class_tokens = Mat(k, e, flat_from(doc.at("class_tokens"), k * e, "class_tokens"));
    m.encoder.proj = Mat(e, c, flat_from(doc.at("proj"), e * c, "proj"));
    for (const json& entry : doc.at("train_log")) {
      m.train_log.push_back({entry.at("epoch").get<std::size_t>(), entry.at("lr").get<double>(),
                             entry.at("mean_loss").get<double>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  m.method.validate();
  m.head.validate();
  m.bank.validate();
  if (m.bank.n_prompts() != m.head.n_prompts) {
    throw FormatError("model file: ctx has " + std::to_string(m.bank.n_prompts()) +
                      " prompts, head config says " + std::to_string(m.head.n_prompts));
  }
  return m;
}

void save_model(const ModelState& m, const fs::path& path) { write_file(path, model_to_json(m)); }

ModelState load_model(const fs::path& path) {
  if (!fs::exists(path)) throw FormatError("model file " + path.string() + " does not exist");
  return model_from_json(read_file(path));
}

void save_eval_report(const EvalReport& r, const ModelState& m, const fs::path& path) {
  const json doc = {{"version", kModelFormatVersion},
                    {"method", std::string(method_name(m.method.tag))},
                    {"n_prompts", m.head.n_prompts},
                    {"seed", m.seed},
                    {"accuracy", r.accuracy},
                    {"n_images", r.n_images},
                    {"per_class_accuracy", r.per_class_accuracy},
                    {"per_class_count", r.per_class_count},
                    {"mean_sinkhorn_iterations", r.mean_sinkhorn_iterations},
                    {"seconds_total", r.seconds_total},
                    {"seconds_per_image", r.seconds_per_image}};
  write_file(path, doc.dump(2) + "\n");
}

std::vector<std::uint8_t> column_to_pixels(const TransportPlan& plan, std::size_t column) {
  if (column >= plan.cols()) throw ShapeError("column_to_pixels: column out of range");
  double mx = 0.0;
  for (std::size_t i = 0; i < plan.rows(); ++i) mx = std::max(mx, plan(i, column));
  std::vector<std::uint8_t> px(plan.rows(), 0);
  if (!(mx > 0.0)) return px;
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const double v = std::clamp(plan(i, column) / mx, 0.0, 1.0);
    px[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  return px;
}

PlanExportResult export_plan(const ClassScores& scores, std::size_t image_index,
                             std::optional<std::pair<std::size_t, std::size_t>> grid,
                             const fs::path& out_dir, std::optional<std::size_t> only_class) {
  if (!scores.plans) throw ValueError("export_plan: scores carry no transport plans");
  const auto& plans = *scores.plans;
  if (only_class && *only_class >= plans.size()) {
    throw ValueError("export_plan: class " + std::to_string(*only_class) + " out of range for " +
                     std::to_string(plans.size()) + " classes");
  }
  fs::create_directories(out_dir);
  PlanExportResult result;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    if (only_class && k != *only_class) continue;
    const TransportPlan& t = plans[k];
    const std::size_t m = t.rows();
    const bool use_grid = grid && grid->first * grid->second == m;
    if (!use_grid && k == (only_class ? *only_class : 0)) {
      result.notices.push_back("M=" + std::to_string(m) +
                               " has no H x W layout; graymaps skipped, CSV only");
    }
    const std::size_t width = use_grid ? grid->second : 1;
    for (std::size_t n = 0; n < t.cols(); ++n) {
      const std::string stem = "img" + std::to_string(image_index) + "_class" +
                               std::to_string(k) + "_prompt" + std::to_string(n);
      std::string csv;
      for (std::size_t i = 0; i < m; ++i) {
        csv += format_double(t(i, n));
        csv += ((i + 1) % width == 0) ? '\n' : ',';
      }
      const fs::path csv_path = out_dir / (stem + ".csv");
      write_file(csv_path, csv);
      result.files.push_back(csv_path);
      if (!use_grid) continue;
      const auto px = column_to_pixels(t, n);
      std::string pgm = "P5\n" + std::to_string(grid->second) + " " +
                        std::to_string(grid->first) + "\n255\n";
      pgm.append(px.begin(), px.end());
      const fs::path pgm_path = out_dir / (stem + ".pgm");
      write_file(pgm_path, pgm);
      result.files.push_back(pgm_path);
    }
  }
  return result;
}

}  // namespace plot
