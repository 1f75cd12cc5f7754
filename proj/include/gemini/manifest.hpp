#pragma once

// Experiment manifest: one JSON file per experiment. Every section is
// optional except output_dir; unknown keys are rejected at every level.
//
// {
//   "output_dir": "runs/exp1",
//   "dataset":  {"source": "synthetic" | "directory", "path": "...", "classes": [...],
//                "views": ["SUR", "SEC"],
//                "synthetic": {"n_classes": 6, "images_per_class": 20, "width": 512, "height": 512, "seed": 0},
//                "patch_size": 256, "max_overlap": 20, "mask_threshold": 0.5,
//                "train_fraction": 0.8, "split_seed": 0},
//   "model":    {"teacher": {"stream": {...}, "global": {...}},
//                "student": {"preset": "default" | "full_depth", "backbone": {...}}},
//   "loss":     {"beta": 0.5, "margin": 1.0, "gamma": 0.5, "baseline_margin": 1.0},
//   "training": {"epochs": 20, "learning_rate": 0.001, "batch_size": 32, "samples_per_epoch": 0},
//   "sweep":    {"dims": [32], "ks": [1, 5], "seeds": [0, 1, 2]},
//   "eval":     {"target": "student", "scatter": true},
//   "fusion":   {"strategy": "concat", "epochs": 10, "learning_rate": 0.001, "batch_size": 8,
//                "seed": 0, "surface_dim": 32, "section_dim": 32, "k": 5}
// }

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"
#include "gemini/fusion.hpp"
#include "gemini/models.hpp"
#include "gemini/training.hpp"

namespace gemini::cli {

using nlohmann::json;

/// Environment variable that relative output directories are resolved against.
inline constexpr const char* kOutputRootEnv = "GEMINI_OUTPUT_ROOT";

namespace detail {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("manifest: '" + name() + "' must be an object");
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("manifest: '" + qualified(key) + "' has the wrong type");
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError("manifest: missing required key '" + qualified(key) + "'");
    return get<T>(key, T{});
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return {j_.contains(key) ? j_.at(key) : empty, qualified(key)};
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("manifest: unknown key '" + qualified(key) + "'");
    }
  }

  [[nodiscard]] std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  [[nodiscard]] std::string name() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

struct DatasetSection {
  std::string source = "synthetic";
  std::filesystem::path path;
  std::vector<std::string> classes;  // empty: the default subtype list (directory) or generated names
  std::vector<data::View> views{data::View::SUR, data::View::SEC};
  data::SyntheticOptions synthetic;
  int patch_size = 256;
  int max_overlap = 20;
  double mask_threshold = 0.5;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
};

struct ModelSection {
  models::StreamSpec stream;
  models::GlobalSpec global;
  models::BackboneSpec backbone;
};

struct LossSection {
  double beta = 0.5;
  double margin = 1.0;
  double gamma = 0.5;
  double baseline_margin = 1.0;
};

struct TrainingSection {
  int epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int samples_per_epoch = 0;
};

struct SweepSection {
  std::vector<int> dims{32};
  std::vector<int> ks{1, 5};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct EvalSection {
  std::string target = "student";
  bool scatter = true;
};

struct FusionSection {
  fusion::Strategy strategy = fusion::Strategy::Concat;
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int surface_dim = 0;  // 0: first sweep dim
  int section_dim = 0;
  int k = 5;
};

struct Manifest {
  DatasetSection dataset;
  ModelSection model;
  LossSection loss;
  TrainingSection training;
  SweepSection sweep;
  EvalSection eval;
  FusionSection fusion;
  std::filesystem::path output_dir;

  [[nodiscard]] int surface_dim() const { return fusion.surface_dim > 0 ? fusion.surface_dim : sweep.dims.front(); }
  [[nodiscard]] int section_dim() const { return fusion.section_dim > 0 ? fusion.section_dim : sweep.dims.front(); }

  [[nodiscard]] training::RunConfig run_config(std::uint64_t seed) const {
    return training::RunConfig{training.epochs, training.learning_rate, training.batch_size,
                               training.samples_per_epoch, seed};
  }

  [[nodiscard]] fusion::FusionConfig fusion_config() const {
    return {fusion.strategy, fusion.epochs, fusion.learning_rate, fusion.batch_size, fusion.seed};
  }

  /// Whole-manifest checks; run again after command-line overrides.
  void validate() const {
    if (dataset.source != "synthetic" && dataset.source != "directory") {
      throw ConfigError("manifest: dataset.source must be 'synthetic' or 'directory', got '" + dataset.source + "'");
    }
    if (dataset.source == "directory" && dataset.path.empty()) {
      throw ConfigError("manifest: dataset.path is required when dataset.source is 'directory'");
    }
    if (dataset.views.empty()) throw ConfigError("manifest: dataset.views must not be empty");
    if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0)) {
      throw ConfigError("manifest: dataset.train_fraction must lie in (0,1)");
    }
    if (dataset.patch_size <= 0 || dataset.max_overlap < 0 || dataset.max_overlap >= dataset.patch_size) {
      throw ConfigError("manifest: need 0 <= dataset.max_overlap < dataset.patch_size");
    }
    if (!(dataset.mask_threshold >= 0.0 && dataset.mask_threshold <= 1.0)) {
      throw ConfigError("manifest: dataset.mask_threshold must lie in [0,1]");
    }
    if (dataset.source == "synthetic") {
      if (!dataset.classes.empty()) throw ConfigError("manifest: dataset.classes only applies to directory datasets");
      const auto& s = dataset.synthetic;
      if (s.n_classes < 2 || s.images_per_class < 2) {
        throw ConfigError("manifest: synthetic data needs n_classes >= 2 and images_per_class >= 2");
      }
      if (s.width < dataset.patch_size || s.height < dataset.patch_size) {
        throw ConfigError("manifest: synthetic images must be at least patch_size on each side");
      }
    }
    losses::GeminiLossParams{loss.beta, loss.margin}.validate();
    losses::HybridLossParams{loss.gamma}.validate();
    if (!(loss.baseline_margin > 0.0)) throw ConfigError("manifest: loss.baseline_margin must be > 0");
    run_config(0).validate();
    if (sweep.dims.empty() || sweep.ks.empty() || sweep.seeds.empty()) {
      throw ConfigError("manifest: sweep.dims, sweep.ks and sweep.seeds must be non-empty");
    }
    for (int d : sweep.dims) {
      if (!models::is_supported_embedding_dim(d)) {
        throw ConfigError("manifest: sweep dim " + std::to_string(d) + " is not one of 8,16,...,1024");
      }
    }
    for (int k : sweep.ks) {
      if (k < 1) throw ConfigError("manifest: sweep k values must be >= 1");
    }
    std::set<std::uint64_t> unique(sweep.seeds.begin(), sweep.seeds.end());
    if (unique.size() != sweep.seeds.size()) throw ConfigError("manifest: sweep.seeds contains duplicates");
    if (eval.target != "student" && eval.target != "siamese" && eval.target != "triplet" &&
        eval.target != "untrained") {
      throw ConfigError("manifest: eval.target must be one of student, siamese, triplet, untrained");
    }
    fusion_config().validate();
    if (!models::is_supported_embedding_dim(surface_dim()) || !models::is_supported_embedding_dim(section_dim())) {
      throw ConfigError("manifest: fusion dims must be one of 8,16,...,1024");
    }
    if (fusion.k < 1) throw ConfigError("manifest: fusion.k must be >= 1");
    if (output_dir.empty()) throw ConfigError("manifest: output_dir must not be empty");
  }
};

namespace detail {

inline models::StreamSpec parse_stream(Section s) {
  models::StreamSpec out;
  out.input_pool = s.get("input_pool", out.input_pool);
  out.channels = s.get("channels", out.channels);
  out.pools = s.get("pools", out.pools);
  out.kernel = s.get("kernel", out.kernel);
  s.finish();
  return out;
}

inline models::BackboneSpec parse_student(Section s) {
  const auto preset = s.get<std::string>("preset", "default");
  models::BackboneSpec out;
  if (preset == "full_depth") {
    out = models::BackboneSpec::full_depth();
  } else if (preset != "default") {
    throw ConfigError("manifest: model.student.preset must be 'default' or 'full_depth'");
  }
  if (s.has("backbone")) {
    Section b = s.child("backbone");
    out.input_pool = b.get("input_pool", out.input_pool);
    out.stem_channels = b.get("stem_channels", out.stem_channels);
    if (b.has("stages")) {
      out.stages.clear();
      const json& stages = b.raw("stages");
      if (!stages.is_array()) throw ConfigError("manifest: model.student.backbone.stages must be an array");
      for (std::size_t i = 0; i < stages.size(); ++i) {
        Section st(stages[i], b.qualified("stages[" + std::to_string(i) + "]"));
        out.stages.push_back({st.require<int>("channels"), st.require<int>("blocks")});
        st.finish();
      }
    }
    b.finish();
  }
  s.finish();
  return out;
}

}  // namespace detail

/// Parses and validates a manifest. Relative dataset paths are taken
/// relative to `base_dir` (the manifest's directory).
inline Manifest parse_manifest(const json& j, const std::filesystem::path& base_dir = {}) {
  Manifest m;
  detail::Section root(j, "");
  m.output_dir = root.require<std::string>("output_dir");

  {
    auto d = root.child("dataset");
    auto& ds = m.dataset;
    ds.source = d.get("source", ds.source);
    if (d.has("path")) {
      std::filesystem::path p = d.get<std::string>("path", "");
      ds.path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    ds.classes = d.get("classes", ds.classes);
    if (d.has("views")) {
      ds.views.clear();
      for (const auto& v : d.get<std::vector<std::string>>("views", {})) ds.views.push_back(data::parse_view(v));
    }
    {
      auto s = d.child("synthetic");
      auto& so = ds.synthetic;
      so.n_classes = s.get("n_classes", so.n_classes);
      so.images_per_class = s.get("images_per_class", so.images_per_class);
      so.width = s.get("width", so.width);
      so.height = s.get("height", so.height);
      so.seed = s.get("seed", so.seed);
      s.finish();
    }
    ds.patch_size = d.get("patch_size", ds.patch_size);
    ds.max_overlap = d.get("max_overlap", ds.max_overlap);
    ds.mask_threshold = d.get("mask_threshold", ds.mask_threshold);
    ds.train_fraction = d.get("train_fraction", ds.train_fraction);
    ds.split_seed = d.get("split_seed", ds.split_seed);
    d.finish();
  }
  {
    auto md = root.child("model");
    {
      auto t = md.child("teacher");
      if (t.has("stream")) m.model.stream = detail::parse_stream(t.child("stream"));
      if (t.has("global")) {
        auto g = t.child("global");
        m.model.global.hidden = g.get("hidden", m.model.global.hidden);
        g.finish();
      }
      t.finish();
    }
    if (md.has("student")) m.model.backbone = detail::parse_student(md.child("student"));
    md.finish();
  }
  {
    auto l = root.child("loss");
    m.loss.beta = l.get("beta", m.loss.beta);
    m.loss.margin = l.get("margin", m.loss.margin);
    m.loss.gamma = l.get("gamma", m.loss.gamma);
    m.loss.baseline_margin = l.get("baseline_margin", m.loss.baseline_margin);
    l.finish();
  }
  {
    auto t = root.child("training");
    m.training.epochs = t.get("epochs", m.training.epochs);
    m.training.learning_rate = t.get("learning_rate", m.training.learning_rate);
    m.training.batch_size = t.get("batch_size", m.training.batch_size);
    m.training.samples_per_epoch = t.get("samples_per_epoch", m.training.samples_per_epoch);
    t.finish();
  }
  {
    auto s = root.child("sweep");
    m.sweep.dims = s.get("dims", m.sweep.dims);
    m.sweep.ks = s.get("ks", m.sweep.ks);
    m.sweep.seeds = s.get("seeds", m.sweep.seeds);
    s.finish();
  }
  {
    auto e = root.child("eval");
    m.eval.target = e.get("target", m.eval.target);
    m.eval.scatter = e.get("scatter", m.eval.scatter);
    e.finish();
  }
  {
    auto f = root.child("fusion");
    if (f.has("strategy")) m.fusion.strategy = fusion::parse_strategy(f.get<std::string>("strategy", ""));
    m.fusion.epochs = f.get("epochs", m.fusion.epochs);
    m.fusion.learning_rate = f.get("learning_rate", m.fusion.learning_rate);
    m.fusion.batch_size = f.get("batch_size", m.fusion.batch_size);
    m.fusion.seed = f.get("seed", m.fusion.seed);
    m.fusion.surface_dim = f.get("surface_dim", m.fusion.surface_dim);
    m.fusion.section_dim = f.get("section_dim", m.fusion.section_dim);
    m.fusion.k = f.get("k", m.fusion.k);
    f.finish();
  }
  root.finish();
  m.validate();
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

/// Relative output directories go under $GEMINI_OUTPUT_ROOT when it is set.
inline std::filesystem::path resolve_output_dir(const Manifest& m) {
  if (m.output_dir.is_absolute()) return m.output_dir;
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / m.output_dir;
  }
  return m.output_dir;
}

}  // namespace gemini::cli
