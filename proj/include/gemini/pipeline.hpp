#pragma once

// The prepare / train / eval / fuse / plot commands as library calls. All
// artifacts go under the resolved output directory:
//
//   store/<VIEW>/                                   patch store (split.json, sources.json, patches/)
//   runs/<VIEW>/<target>/dim<D>/seed<S>/checkpoint  params.bin, config.json, meta.json
//   runs/<VIEW>/<target>/dim<D>/seed<S>/loss.csv    per-epoch loss terms
//   runs/<VIEW>/<target>/dim<D>/seed<S>/run.json    configuration the checkpoint was trained with
//   runs/<VIEW>/<target>/dim<D>/seed<S>/progress.json  resume state of an unfinished run
//   eval/<target>/results.csv|json, scatter/*.csv, plots/*.svg
//   fusion/<strategy>/checkpoint, fusion.csv, loss.csv, summary.json

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"
#include "gemini/evaluation.hpp"
#include "gemini/fusion.hpp"
#include "gemini/image_io.hpp"
#include "gemini/manifest.hpp"
#include "gemini/models.hpp"
#include "gemini/plot.hpp"
#include "gemini/store.hpp"
#include "gemini/training.hpp"

namespace gemini::cli {

enum class Target { Teacher, Student, Siamese, Triplet };

inline std::string to_string(Target t) {
  switch (t) {
    case Target::Teacher: return "teacher";
    case Target::Student: return "student";
    case Target::Siamese: return "siamese";
    case Target::Triplet: return "triplet";
  }
  return "?";
}

inline Target parse_target(const std::string& s) {
  if (s == "teacher") return Target::Teacher;
  if (s == "student") return Target::Student;
  if (s == "siamese") return Target::Siamese;
  if (s == "triplet") return Target::Triplet;
  throw ConfigError("unknown training target '" + s + "' (valid: teacher, student, siamese, triplet)");
}

struct Layout {
  std::filesystem::path root;

  [[nodiscard]] std::filesystem::path store(data::View v) const { return root / "store" / data::to_string(v); }
  [[nodiscard]] std::filesystem::path run(data::View v, const std::string& target, int dim, std::uint64_t seed) const {
    return root / "runs" / data::to_string(v) / target / ("dim" + std::to_string(dim)) / ("seed" + std::to_string(seed));
  }
  [[nodiscard]] std::filesystem::path eval(const std::string& target) const { return root / "eval" / target; }
  [[nodiscard]] std::filesystem::path fusion(fusion::Strategy s) const { return root / "fusion" / fusion::to_string(s); }
};

inline Layout layout(const Manifest& m) { return {resolve_output_dir(m)}; }

inline models::TeacherConfig teacher_config(const Manifest& m, int n_classes, int dim) {
  models::TeacherConfig c;
  c.n_classes = n_classes;
  c.input_size = m.dataset.patch_size;
  c.stream = m.model.stream;
  c.global = m.model.global;
  c.embedding_dim = dim;
  return c;
}

inline models::StudentConfig student_config(const Manifest& m, int n_classes, int dim) {
  models::StudentConfig c;
  c.n_classes = n_classes;
  c.input_size = m.dataset.patch_size;
  c.backbone = m.model.backbone;
  c.embedding_dim = dim;
  return c;
}

namespace detail {

// Writes via a temporary file and a rename so readers never see a torn file.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os << bytes;
    if (!os) throw Error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return {};
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::string loss_csv(const std::vector<models::EpochLoss>& curve) {
  std::string s = "epoch,total,first,second\n";
  for (const auto& e : curve) {
    s += std::to_string(e.epoch) + ',' + eval::format_fixed(e.total) + ',' + eval::format_fixed(e.first) + ',' +
         eval::format_fixed(e.second) + '\n';
  }
  return s;
}

inline json progress_to_json(const training::Progress& p, const json& signature) {
  return {{"signature", signature},
          {"epochs_done", p.epochs_done},
          {"best_epoch", p.best_epoch},
          {"loss_curve", p.loss_curve},
          {"params", p.params},
          {"best_params", p.best_params},
          {"optimizer", {{"step", p.optimizer.step}, {"m", p.optimizer.m}, {"v", p.optimizer.v}}}};
}

inline std::optional<training::Progress> progress_from_json(const json& j, const json& signature) {
  if (j.at("signature") != signature) return std::nullopt;
  training::Progress p;
  p.epochs_done = j.at("epochs_done").get<int>();
  p.best_epoch = j.at("best_epoch").get<int>();
  p.loss_curve = j.at("loss_curve").get<std::vector<models::EpochLoss>>();
  p.params = j.at("params").get<std::vector<std::vector<float>>>();
  p.best_params = j.at("best_params").get<std::vector<std::vector<float>>>();
  p.optimizer.step = j.at("optimizer").at("step").get<std::int64_t>();
  p.optimizer.m = j.at("optimizer").at("m").get<std::vector<std::vector<float>>>();
  p.optimizer.v = j.at("optimizer").at("v").get<std::vector<std::vector<float>>>();
  return p;
}

// Thrown from the epoch hook to stop a chunked run after its epoch allowance.
struct Halt {
  int epochs_done = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// prepare

struct PrepareSummary {
  data::View view = data::View::SUR;
  std::size_t n_sources = 0;
  std::size_t n_train_patches = 0;
  std::size_t n_test_patches = 0;
  std::filesystem::path store;
};

inline std::vector<data::SourceImage> load_sources(const Manifest& m, data::View view, data::ClassSet& classes) {
  if (m.dataset.source == "synthetic") {
    data::SyntheticOptions opt = m.dataset.synthetic;
    opt.view = view;
    classes = data::ClassSet::with_size(opt.n_classes);
    return data::generate_synthetic_dataset(opt);
  }
  classes = m.dataset.classes.empty() ? data::ClassSet::kidney_stone_subtypes() : data::ClassSet(m.dataset.classes);
  if (!std::filesystem::is_directory(m.dataset.path)) {
    throw ConfigError("dataset directory " + m.dataset.path.string() + " does not exist");
  }
  return data::load_image_tree(m.dataset.path, view, classes);
}

/// Extracts and splits every view into its patch store. Re-running with the
/// same manifest rewrites byte-identical stores.
inline std::vector<PrepareSummary> cmd_prepare(const Manifest& m, std::ostream& log) {
  const Layout lay = layout(m);
  std::vector<PrepareSummary> out;
  for (const data::View view : m.dataset.views) {
    data::ClassSet classes;
    const auto images = load_sources(m, view, classes);
    if (images.empty()) throw InvalidInputError("no images found for view " + data::to_string(view));
    const auto ids = data::split_images(images, m.dataset.train_fraction, m.dataset.split_seed);
    const std::set<std::string> train_set(ids.train_ids.begin(), ids.train_ids.end());

    const auto dir = lay.store(view);
    std::filesystem::remove_all(dir / "patches");
    std::filesystem::create_directories(dir / "patches");
    data::ExtractOptions opt;
    opt.patch_size = m.dataset.patch_size;
    opt.max_overlap = m.dataset.max_overlap;
    opt.mask_threshold = m.dataset.mask_threshold;
    opt.whiten = false;

    PrepareSummary s{view, images.size(), 0, 0, dir};
    std::vector<std::string> train_ids, test_ids;
    std::vector<data::SourceEntry> sources;
    for (const auto& img : images) {
      const bool train = train_set.contains(img.image_id);
      for (const auto& p : data::extract_patches(img, opt)) {
        data::write_patch(dir / "patches", p);
        (train ? train_ids : test_ids).push_back(p.patch_id);
      }
      sources.push_back({img.image_id, img.label, view, img.width, img.height, train ? "train" : "test"});
    }
    s.n_train_patches = train_ids.size();
    s.n_test_patches = test_ids.size();
    detail::write_atomic(dir / "split.json",
                         data::split_manifest(train_ids, test_ids, m.dataset.split_seed, view, classes).dump(2) + "\n");
    data::write_sources(dir, sources);
    log << "prepared " << data::to_string(view) << ": " << s.n_sources << " images, " << s.n_train_patches
        << " train / " << s.n_test_patches << " test patches -> " << dir.string() << "\n";
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::optional<data::View> view;  // default: every manifest view
  int halt_after = 0;              // > 0: stop after this many epochs in this invocation
};

struct TrainOutcome {
  std::filesystem::path run_dir;
  bool skipped = false;  // an up-to-date checkpoint already existed
  bool halted = false;
  int epochs_done = 0;
};

inline std::vector<data::View> selected_views(const Manifest& m, const std::optional<data::View>& v) {
  if (!v) return m.dataset.views;
  if (std::find(m.dataset.views.begin(), m.dataset.views.end(), *v) == m.dataset.views.end()) {
    throw ConfigError("view " + data::to_string(*v) + " is not listed in dataset.views");
  }
  return {*v};
}

inline models::ModelState load_run_checkpoint(const Layout& lay, data::View view, const std::string& target, int dim,
                                              std::uint64_t seed) {
  const auto dir = lay.run(view, target, dim, seed);
  if (!std::filesystem::exists(dir / "run.json") || !models::checkpoint_exists(dir / "checkpoint")) {
    throw ConfigError("missing " + target + " checkpoint for " + data::to_string(view) + " dim " + std::to_string(dim) +
                      " seed " + std::to_string(seed) + " at " + dir.string() + " (run `train --target " + target +
                      "` first)");
  }
  return models::load_checkpoint(dir / "checkpoint");
}

/// One checkpoint, loss CSV and run record per (view, dim, seed). Finished
/// runs with an identical configuration are skipped; unfinished ones resume
/// from progress.json.
inline std::vector<TrainOutcome> cmd_train(const Manifest& m, Target target, const TrainOptions& topt,
                                           std::ostream& log) {
  const Layout lay = layout(m);
  const std::string name = to_string(target);
  std::vector<TrainOutcome> out;
  for (const data::View view : selected_views(m, topt.view)) {
    const data::PatchStore store = data::read_patch_store(lay.store(view));
    const int n_classes = static_cast<int>(store.classes.size());
    for (int dim : m.sweep.dims) {
      for (std::uint64_t seed : m.sweep.seeds) {
        const auto dir = lay.run(view, name, dim, seed);
        const training::RunConfig run = m.run_config(seed);
        json signature = {{"target", name}, {"view", data::to_string(view)}, {"run", training::to_json(run)},
                          {"split_seed", store.split.seed}};
        if (target == Target::Teacher) {
          signature["model"] = teacher_config(m, n_classes, dim);
          signature["loss"] = {{"beta", m.loss.beta}, {"margin", m.loss.margin}};
        } else {
          signature["model"] = student_config(m, n_classes, dim);
          if (target == Target::Student) {
            signature["loss"] = {{"gamma", m.loss.gamma}};
            signature["teacher_params"] = models::checkpoint_exists(lay.run(view, "teacher", dim, seed) / "checkpoint")
                                              ? detail::read_file(lay.run(view, "teacher", dim, seed) / "checkpoint" / "meta.json")
                                              : "";
          } else {
            signature["loss"] = {{"margin", m.loss.baseline_margin}};
          }
        }
        const std::string sig_text = signature.dump(2) + "\n";

        TrainOutcome oc{dir, false, false, 0};
        if (models::checkpoint_exists(dir / "checkpoint") && detail::read_file(dir / "run.json") == sig_text) {
          oc.skipped = true;
          oc.epochs_done = run.max_epochs;
          log << name << " " << data::to_string(view) << " dim " << dim << " seed " << seed << ": up to date\n";
          out.push_back(oc);
          continue;
        }
        std::filesystem::create_directories(dir);
        std::filesystem::remove(dir / "run.json");

        training::TrainHooks hooks;
        const auto progress_path = dir / "progress.json";
        if (std::filesystem::exists(progress_path)) {
          std::ifstream is(progress_path);
          hooks.resume = detail::progress_from_json(json::parse(is), signature);
          if (hooks.resume) {
            log << name << " " << data::to_string(view) << " dim " << dim << " seed " << seed << ": resuming after epoch "
                << hooks.resume->epochs_done << "\n";
          }
        }
        const int start_epoch = hooks.resume ? hooks.resume->epochs_done : 0;
        hooks.on_epoch_end = [&, start_epoch](const training::Progress& p) {
          detail::write_atomic(progress_path, detail::progress_to_json(p, signature).dump() + "\n");
          if (topt.halt_after > 0 && p.epochs_done - start_epoch >= topt.halt_after && p.epochs_done < run.max_epochs) {
            throw detail::Halt{p.epochs_done};
          }
        };

        training::TrainRun result;
        try {
          switch (target) {
            case Target::Teacher:
              result = training::train_teacher(store.split, teacher_config(m, n_classes, dim),
                                               {m.loss.beta, m.loss.margin}, run, hooks);
              break;
            case Target::Student: {
              const auto teacher = load_run_checkpoint(lay, view, "teacher", dim, seed);
              const auto targets = training::compute_distillation_targets(teacher, store.split);
              result = training::train_student(store.split, targets, student_config(m, n_classes, dim), {m.loss.gamma},
                                               run, hooks);
              break;
            }
            case Target::Siamese:
            case Target::Triplet:
              result = training::train_baseline(
                  store.split, target == Target::Siamese ? training::BaselineKind::Siamese : training::BaselineKind::Triplet,
                  student_config(m, n_classes, dim), m.loss.baseline_margin, run, hooks);
              break;
          }
        } catch (const detail::Halt& h) {
          oc.halted = true;
          oc.epochs_done = h.epochs_done;
          log << name << " " << data::to_string(view) << " dim " << dim << " seed " << seed << ": halted after epoch "
              << h.epochs_done << " (re-run to resume)\n";
          out.push_back(oc);
          return out;
        }

        models::save_checkpoint(dir / "checkpoint", result.state);
        detail::write_atomic(dir / "loss.csv", detail::loss_csv(result.loss_curve));
        detail::write_atomic(dir / "run.json", sig_text);
        std::filesystem::remove(progress_path);
        oc.epochs_done = static_cast<int>(result.loss_curve.size());
        log << name << " " << data::to_string(view) << " dim " << dim << " seed " << seed << ": " << oc.epochs_done
            << " epochs, best epoch " << result.best_epoch << " (loss " << eval::format_fixed(result.loss_curve[
                   static_cast<std::size_t>(result.best_epoch - 1)].total) << ")\n";
        out.push_back(oc);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOutcome {
  std::vector<eval::SweepRow> rows;
  std::filesystem::path dir;
  std::vector<std::filesystem::path> scatter_files;
};

inline models::StudentModel<float> eval_model(const Manifest& m, const Layout& lay, data::View view,
                                              const std::string& target, int n_classes, int dim, std::uint64_t seed) {
  if (target == "untrained") return models::StudentModel<float>(student_config(m, n_classes, dim), seed);
  return models::StudentModel<float>(load_run_checkpoint(lay, view, target, dim, seed));
}

/// k-NN sweep over (view, dim, k) with seed aggregation, plus PCA scatter
/// data and plots for the first seed of every (view, dim).
inline EvalOutcome cmd_eval(const Manifest& m, std::optional<data::View> view_filter, std::ostream& log) {
  const Layout lay = layout(m);
  const std::string target = m.eval.target;
  EvalOutcome out;
  out.dir = lay.eval(target);
  const auto views = selected_views(m, view_filter);
  // Fail before doing any work if a checkpoint is missing.
  if (target != "untrained") {
    for (const auto view : views) {
      for (int dim : m.sweep.dims) {
        for (auto seed : m.sweep.seeds) load_run_checkpoint(lay, view, target, dim, seed);
      }
    }
  }
  std::filesystem::create_directories(out.dir / "scatter");
  std::filesystem::create_directories(out.dir / "plots");
  const eval::SweepGrid grid{m.sweep.dims, m.sweep.ks, m.sweep.seeds};
  for (const auto view : views) {
    const data::PatchStore store = data::read_patch_store(lay.store(view));
    const int n_classes = static_cast<int>(store.classes.size());
    const auto train_fn = [&](int dim, std::uint64_t seed) {
      const auto model = eval_model(m, lay, view, target, n_classes, dim, seed);
      const std::string id = data::to_string(view) + "_" + target + "_dim" + std::to_string(dim) + "_seed" +
                             std::to_string(seed);
      auto train = eval::embed_patches(model, store.split.train, eval::SplitTag::Train, {id, seed, dim});
      auto test = eval::embed_patches(model, store.split.test, eval::SplitTag::Test, {id, seed, dim});
      if (m.eval.scatter && seed == m.sweep.seeds.front()) {
        eval::EmbeddingSet both = train;
        both.values.insert(both.values.end(), test.values.begin(), test.values.end());
        both.labels.insert(both.labels.end(), test.labels.begin(), test.labels.end());
        std::vector<eval::SplitTag> tags(train.size(), eval::SplitTag::Train);
        tags.resize(both.size(), eval::SplitTag::Test);
        const auto pca = eval::pca_project(both, 2);
        std::ostringstream csv;
        eval::write_scatter_csv(csv, pca, both.labels, tags, store.classes.names());
        const auto path = out.dir / "scatter" / (id + ".csv");
        detail::write_atomic(path, csv.str());
        plot::render(path, out.dir / "plots" / (id + "_scatter.svg"));
        out.scatter_files.push_back(path);
      }
      return std::make_pair(std::move(train), std::move(test));
    };
    auto rows = eval::sweep(train_fn, grid, n_classes, data::to_string(view));
    for (auto& r : rows) {
      log << "eval " << target << " " << r.view << " dim " << r.embedding_dim << " k " << r.k << ": accuracy "
          << eval::format_fixed(r.report.accuracy, 4) << " +/- " << eval::format_fixed(r.report.ci95_halfwidth.accuracy, 4)
          << "\n";
      out.rows.push_back(std::move(r));
    }
  }
  std::ostringstream csv;
  eval::write_sweep_csv(csv, out.rows);
  detail::write_atomic(out.dir / "results.csv", csv.str());
  detail::write_atomic(out.dir / "results.json", eval::sweep_to_json(out.rows).dump(2) + "\n");
  plot::render(out.dir / "results.csv", out.dir / "plots" / "recall_vs_k.svg");
  log << "wrote " << (out.dir / "results.csv").string() << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// fuse

struct FuseOutcome {
  fusion::FusionResult result;
  eval::MetricsRow surface_knn;
  eval::MetricsRow section_knn;
  std::filesystem::path dir;
};

/// Trains the fusion head on the frozen SUR/SEC students at the manifest's
/// fusion dims and seed; single-view k-NN rows are reported alongside.
inline FuseOutcome cmd_fuse(const Manifest& m, std::ostream& log) {
  const Layout lay = layout(m);
  for (const auto v : {data::View::SUR, data::View::SEC}) {
    if (std::find(m.dataset.views.begin(), m.dataset.views.end(), v) == m.dataset.views.end()) {
      throw ConfigError("fusion needs both SUR and SEC in dataset.views");
    }
  }
  const auto seed = m.fusion.seed;
  const auto sur_state = load_run_checkpoint(lay, data::View::SUR, "student", m.surface_dim(), seed);
  const auto sec_state = load_run_checkpoint(lay, data::View::SEC, "student", m.section_dim(), seed);
  const data::PatchStore sur = data::read_patch_store(lay.store(data::View::SUR));
  const data::PatchStore sec = data::read_patch_store(lay.store(data::View::SEC));
  if (sur.classes.names() != sec.classes.names()) throw ConfigError("SUR and SEC stores disagree on classes");
  const models::StudentModel<float> sur_model(sur_state), sec_model(sec_state);

  FuseOutcome out;
  out.dir = lay.fusion(m.fusion.strategy);
  const int n_classes = static_cast<int>(sur.classes.size());
  auto knn = [&](const models::StudentModel<float>& model, const data::PatchStore& s) {
    const auto train = eval::embed_patches(model, s.split.train, eval::SplitTag::Train);
    const auto test = eval::embed_patches(model, s.split.test, eval::SplitTag::Test);
    return eval::compute_metrics(test.labels, eval::knn_classify(train, test, m.fusion.k), n_classes);
  };
  out.surface_knn = knn(sur_model, sur);
  out.section_knn = knn(sec_model, sec);
  out.result = fusion::train_fusion({&sur_model, sur.split.train, sur.split.test},
                                    {&sec_model, sec.split.train, sec.split.test}, m.fusion_config());

  models::save_checkpoint(out.dir / "checkpoint", out.result.head);
  std::ostringstream csv;
  fusion::write_fusion_csv(csv, "SUR_knn", out.surface_knn, m.fusion.strategy, true);
  fusion::write_fusion_csv(csv, "SEC_knn", out.section_knn, m.fusion.strategy, false);
  fusion::write_fusion_csv(csv, "fused", out.result.test_metrics, m.fusion.strategy, false);
  detail::write_atomic(out.dir / "fusion.csv", csv.str());
  detail::write_atomic(out.dir / "loss.csv", detail::loss_csv(out.result.loss_curve));
  const json summary = {{"strategy", fusion::to_string(m.fusion.strategy)},
                        {"fused_dim", out.result.fused_dim},
                        {"surface_dim", m.surface_dim()},
                        {"section_dim", m.section_dim()},
                        {"epochs", out.result.epochs_run},
                        {"seed", seed},
                        {"k", m.fusion.k}};
  detail::write_atomic(out.dir / "summary.json", summary.dump(2) + "\n");
  log << "fusion " << fusion::to_string(m.fusion.strategy) << ": fused_dim " << out.result.fused_dim << ", "
      << out.result.epochs_run << " epochs, accuracy " << eval::format_fixed(out.result.test_metrics.accuracy, 4)
      << " (SUR k-NN " << eval::format_fixed(out.surface_knn.accuracy, 4) << ", SEC k-NN "
      << eval::format_fixed(out.section_knn.accuracy, 4) << ")\n";
  return out;
}

// ---------------------------------------------------------------------------
// plot

/// Re-renders every CSV under eval/ into eval/<target>/plots.
inline std::vector<std::filesystem::path> cmd_plot(const Manifest& m, std::ostream& log) {
  const auto eval_root = layout(m).root / "eval";
  if (!std::filesystem::is_directory(eval_root)) throw ConfigError("no evaluation output under " + eval_root.string());
  std::vector<std::filesystem::path> targets;
  for (const auto& e : std::filesystem::directory_iterator(eval_root)) {
    if (e.is_directory()) targets.push_back(e.path());
  }
  std::sort(targets.begin(), targets.end());
  std::vector<std::filesystem::path> written;
  for (const auto& dir : targets) {
    auto add = [&](const std::vector<std::filesystem::path>& w) { written.insert(written.end(), w.begin(), w.end()); };
    if (std::filesystem::exists(dir / "results.csv")) add(plot::render(dir / "results.csv", dir / "plots" / "recall_vs_k.svg"));
    if (std::filesystem::is_directory(dir / "scatter")) {
      std::vector<std::filesystem::path> csvs;
      for (const auto& e : std::filesystem::directory_iterator(dir / "scatter")) {
        if (e.path().extension() == ".csv") csvs.push_back(e.path());
      }
      std::sort(csvs.begin(), csvs.end());
      for (const auto& c : csvs) add(plot::render(c, dir / "plots" / (c.stem().string() + "_scatter.svg")));
    }
  }
  for (const auto& w : written) log << "wrote " << w.string() << "\n";
  return written;
}

}  // namespace gemini::cli
