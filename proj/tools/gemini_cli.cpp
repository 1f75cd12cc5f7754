// gemini: prepare patch stores, train, evaluate, fuse and plot from an
// experiment manifest.
//
// Exit codes: 0 ok, 2 validation error (bad flags, manifest, dataset tree,
// missing prerequisites), 3 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gemini/pipeline.hpp"

namespace {

using namespace gemini;

struct Overrides {
  std::string output;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  std::vector<std::uint64_t> seeds;
  std::vector<int> dims;
  std::vector<int> ks;
  std::optional<double> beta, margin, gamma, baseline_margin;
  std::optional<std::uint64_t> split_seed;
};

void add_overrides(CLI::App* cmd, Overrides& o, bool training, bool sweep) {
  cmd->add_option("--output", o.output, "Override output_dir");
  cmd->add_option("--split-seed", o.split_seed, "Override dataset.split_seed");
  if (training) {
    cmd->add_option("--epochs", o.epochs, "Override training.epochs (1-60)")->check(CLI::Range(1, training::kMaxEpochs));
    cmd->add_option("--lr", o.learning_rate, "Override training.learning_rate")->check(CLI::PositiveNumber);
    cmd->add_option("--batch-size", o.batch_size, "Override training.batch_size")->check(CLI::PositiveNumber);
    cmd->add_option("--beta", o.beta, "Override loss.beta")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--margin", o.margin, "Override loss.margin")->check(CLI::PositiveNumber);
    cmd->add_option("--gamma", o.gamma, "Override loss.gamma");
    cmd->add_option("--baseline-margin", o.baseline_margin, "Override loss.baseline_margin")->check(CLI::PositiveNumber);
  }
  if (sweep) {
    cmd->add_option("--seeds", o.seeds, "Override sweep.seeds")->delimiter(',');
    cmd->add_option("--dims", o.dims, "Override sweep.dims")->delimiter(',');
    cmd->add_option("--ks", o.ks, "Override sweep.ks")->delimiter(',');
  }
}

void apply(const Overrides& o, cli::Manifest& m) {
  if (!o.output.empty()) m.output_dir = o.output;
  if (o.split_seed) m.dataset.split_seed = *o.split_seed;
  if (o.epochs) m.training.epochs = *o.epochs;
  if (o.learning_rate) m.training.learning_rate = *o.learning_rate;
  if (o.batch_size) m.training.batch_size = *o.batch_size;
  if (o.beta) m.loss.beta = *o.beta;
  if (o.margin) m.loss.margin = *o.margin;
  if (o.gamma) m.loss.gamma = *o.gamma;
  if (o.baseline_margin) m.loss.baseline_margin = *o.baseline_margin;
  if (!o.seeds.empty()) m.sweep.seeds = o.seeds;
  if (!o.dims.empty()) m.sweep.dims = o.dims;
  if (!o.ks.empty()) m.sweep.ks = o.ks;
  m.validate();
}

std::optional<data::View> view_flag(const std::string& v) {
  if (v.empty()) return std::nullopt;
  return data::parse_view(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stream teacher distillation for patch embeddings"};
  app.require_subcommand(1);
  std::string manifest_path;
  Overrides ov;

  auto* prepare = app.add_subcommand("prepare", "Extract and split patches into per-view stores");
  prepare->add_option("--manifest,-m", manifest_path, "Experiment manifest (JSON)")->required();
  add_overrides(prepare, ov, false, false);

  auto* train = app.add_subcommand("train", "Train one checkpoint per (view, dim, seed)");
  std::string target = "student", view;
  int halt_after = 0;
  train->add_option("--manifest,-m", manifest_path, "Experiment manifest (JSON)")->required();
  train->add_option("--target,-t", target, "teacher, student, siamese or triplet")->capture_default_str();
  train->add_option("--view", view, "Only this view (SUR or SEC)");
  train->add_option("--halt-after", halt_after, "Stop after this many epochs; a re-run resumes")
      ->check(CLI::NonNegativeNumber);
  add_overrides(train, ov, true, true);

  auto* evalc = app.add_subcommand("eval", "k-NN sweep, PCA scatter data and plots");
  std::string eval_target;
  evalc->add_option("--manifest,-m", manifest_path, "Experiment manifest (JSON)")->required();
  evalc->add_option("--target,-t", eval_target, "student, siamese, triplet or untrained (default: eval.target)");
  evalc->add_option("--view", view, "Only this view (SUR or SEC)");
  add_overrides(evalc, ov, false, true);

  auto* fuse = app.add_subcommand("fuse", "Train a fusion head on frozen SUR and SEC students");
  std::string strategy;
  std::optional<int> fusion_epochs, surface_dim, section_dim;
  std::optional<std::uint64_t> fusion_seed;
  fuse->add_option("--manifest,-m", manifest_path, "Experiment manifest (JSON)")->required();
  fuse->add_option("--strategy,-s", strategy, "concat or stack_maxpool (default: fusion.strategy)");
  fuse->add_option("--epochs", fusion_epochs, "Override fusion.epochs (1-60)")->check(CLI::Range(1, training::kMaxEpochs));
  fuse->add_option("--surface-dim", surface_dim, "Override fusion.surface_dim");
  fuse->add_option("--section-dim", section_dim, "Override fusion.section_dim");
  fuse->add_option("--seed", fusion_seed, "Override fusion.seed");
  add_overrides(fuse, ov, false, false);

  auto* plotc = app.add_subcommand("plot", "Render evaluation CSVs to SVG");
  std::string plot_in, plot_out;
  plotc->add_option("--manifest,-m", manifest_path, "Re-render every CSV under the manifest's eval/ directory");
  plotc->add_option("--input,-i", plot_in, "Single scatter or results CSV");
  plotc->add_option("--output,-o", plot_out, "SVG path for --input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (plotc->parsed() && !plot_in.empty()) {
      if (plot_out.empty()) throw ConfigError("plot --input needs --output");
      for (const auto& p : plot::render(plot_in, plot_out)) std::cout << "wrote " << p.string() << "\n";
      return 0;
    }
    if (manifest_path.empty()) throw ConfigError("--manifest is required");
    cli::Manifest m = cli::load_manifest(manifest_path);
    apply(ov, m);

    if (prepare->parsed()) {
      cli::cmd_prepare(m, std::cout);
    } else if (train->parsed()) {
      cli::cmd_train(m, cli::parse_target(target), {view_flag(view), halt_after}, std::cout);
    } else if (evalc->parsed()) {
      if (!eval_target.empty()) m.eval.target = eval_target;
      m.validate();
      cli::cmd_eval(m, view_flag(view), std::cout);
    } else if (fuse->parsed()) {
      if (!strategy.empty()) m.fusion.strategy = fusion::parse_strategy(strategy);
      if (fusion_epochs) m.fusion.epochs = *fusion_epochs;
      if (surface_dim) m.fusion.surface_dim = *surface_dim;
      if (section_dim) m.fusion.section_dim = *section_dim;
      if (fusion_seed) m.fusion.seed = *fusion_seed;
      m.validate();
      cli::cmd_fuse(m, std::cout);
    } else if (plotc->parsed()) {
      cli::cmd_plot(m, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
