#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "test_support.hpp"

using nlohmann::json;
using testing_support::fresh_dir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const fs::path& cwd, const std::string& env = "") {
  const auto log = cwd / "cli.log";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" GEMINI_CLI_PATH "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(log);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, {std::istreambuf_iterator<char>(is), {}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

// Small synthetic experiment: 64 px images, 32 px patches (a 2x2 grid each).
json tiny_manifest(const fs::path& out, int classes = 3, int images = 4) {
  return {{"output_dir", out.string()},
          {"dataset",
           {{"views", {"SUR"}},
            {"synthetic", {{"n_classes", classes}, {"images_per_class", images}, {"width", 64}, {"height", 64}}},
            {"patch_size", 32},
            {"max_overlap", 8}}},
          {"training", {{"epochs", 2}, {"batch_size", 8}}},
          {"sweep", {{"dims", {8}}, {"ks", {1, 3}}, {"seeds", {0, 1}}}},
          {"fusion", {{"epochs", 2}}}};
}

fs::path write_manifest(const fs::path& dir, const json& j) {
  const auto p = dir / "manifest.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

void expect_ok(const Result& r) { ASSERT_EQ(r.code, 0) << r.output; }

}  // namespace

TEST(CliPrepare, SourcesSplitAndIdempotence) {
  const auto dir = fresh_dir("cli_prepare");
  auto j = tiny_manifest(dir / "out", 6, 20);
  j["dataset"]["synthetic"]["width"] = 32;
  j["dataset"]["synthetic"]["height"] = 32;
  const auto m = write_manifest(dir, j);
  expect_ok(run("prepare -m manifest.json", dir));
  const auto store = dir / "out" / "store" / "SUR";
  const auto sources = json::parse(slurp(store / "sources.json"));
  EXPECT_EQ(sources.size(), 120u);
  const auto split = json::parse(slurp(store / "split.json"));
  EXPECT_EQ(split["train"].size(), 96u);  // 16 of 20 images per class, one patch each
  EXPECT_EQ(split["test"].size(), 24u);
  const std::string first = slurp(store / "split.json");
  expect_ok(run("prepare -m manifest.json", dir));
  EXPECT_EQ(slurp(store / "split.json"), first);
  expect_ok(run("prepare -m manifest.json --split-seed 5", dir));
  EXPECT_NE(slurp(store / "split.json"), first);
}

TEST(CliPrepare, MissingClassDirectoryIsValidationError) {
  const auto dir = fresh_dir("cli_missing_class");
  fs::create_directories(dir / "data" / "SUR" / "WW");
  const json j = {{"output_dir", (dir / "out").string()},
                  {"dataset", {{"source", "directory"}, {"path", "data"}, {"classes", {"WW", "UA"}}, {"views", {"SUR"}}}}};
  write_manifest(dir, j);
  const auto r = run("prepare -m manifest.json", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("UA"), std::string::npos) << r.output;
}

TEST(CliManifest, ValidationErrors) {
  const auto dir = fresh_dir("cli_manifest");
  auto j = tiny_manifest(dir / "out");
  j["training"]["epoch"] = 3;
  write_manifest(dir, j);
  auto r = run("prepare -m manifest.json", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("training.epoch"), std::string::npos) << r.output;

  std::ofstream(dir / "manifest.json") << "{not json";
  EXPECT_EQ(run("prepare -m manifest.json", dir).code, 2);
  EXPECT_EQ(run("prepare -m absent.json", dir).code, 2);
  EXPECT_EQ(run("bogus", dir).code, 2);
  EXPECT_EQ(run("", dir).code, 2);
  EXPECT_EQ(run("--help", dir).code, 0);
}

TEST(CliTrain, EpochCapAndOrdering) {
  const auto dir = fresh_dir("cli_train_cap");
  write_manifest(dir, tiny_manifest(dir / "out"));
  auto r = run("train -m manifest.json --epochs 61", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("61"), std::string::npos) << r.output;
  r = run("train -m manifest.json -t teacher", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("prepare"), std::string::npos) << r.output;
  expect_ok(run("prepare -m manifest.json", dir));
  r = run("train -m manifest.json -t student", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("teacher"), std::string::npos) << r.output;
  EXPECT_EQ(run("train -m manifest.json -t nonsense", dir).code, 2);
}

TEST(CliTrain, OneCheckpointAndLossCurvePerSeed) {
  const auto dir = fresh_dir("cli_train_seeds");
  write_manifest(dir, tiny_manifest(dir / "out"));
  expect_ok(run("prepare -m manifest.json", dir));
  expect_ok(run("train -m manifest.json -t teacher --seeds 0,1,2", dir));
  expect_ok(run("train -m manifest.json --seeds 0,1,2", dir));
  for (int seed = 0; seed < 3; ++seed) {
    const auto run_dir = dir / "out" / "runs" / "SUR" / "student" / "dim8" / ("seed" + std::to_string(seed));
    EXPECT_TRUE(fs::exists(run_dir / "checkpoint" / "params.bin"));
    const auto curve = lines(run_dir / "loss.csv");
    ASSERT_EQ(curve.size(), 3u);
    EXPECT_EQ(curve[0], "epoch,total,first,second");
  }
  const auto before = slurp(dir / "out" / "runs" / "SUR" / "student" / "dim8" / "seed0" / "checkpoint" / "params.bin");
  const auto r = run("train -m manifest.json --seeds 0", dir);
  expect_ok(r);
  EXPECT_NE(r.output.find("up to date"), std::string::npos) << r.output;
  EXPECT_EQ(slurp(dir / "out" / "runs" / "SUR" / "student" / "dim8" / "seed0" / "checkpoint" / "params.bin"), before);
}

TEST(CliTrain, HaltedRunResumesToSameCheckpoint) {
  const auto a = fresh_dir("cli_resume_a");
  const auto b = fresh_dir("cli_resume_b");
  for (const auto& dir : {a, b}) {
    auto j = tiny_manifest(dir / "out");
    j["training"]["epochs"] = 4;
    j["sweep"]["seeds"] = {0};
    write_manifest(dir, j);
    expect_ok(run("prepare -m manifest.json", dir));
  }
  expect_ok(run("train -m manifest.json -t teacher", a));
  expect_ok(run("train -m manifest.json -t teacher --halt-after 2", b));
  const auto ckpt = fs::path("out") / "runs" / "SUR" / "teacher" / "dim8" / "seed0";
  EXPECT_FALSE(fs::exists(b / ckpt / "checkpoint" / "params.bin"));
  EXPECT_TRUE(fs::exists(b / ckpt / "progress.json"));
  const auto r = run("train -m manifest.json -t teacher", b);
  expect_ok(r);
  EXPECT_NE(r.output.find("resum"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(b / ckpt / "progress.json"));
  EXPECT_EQ(slurp(a / ckpt / "checkpoint" / "params.bin"), slurp(b / ckpt / "checkpoint" / "params.bin"));
  EXPECT_EQ(slurp(a / ckpt / "loss.csv"), slurp(b / ckpt / "loss.csv"));
}

TEST(CliEval, GridRowsScatterAndByteIdenticalReruns) {
  const auto dir = fresh_dir("cli_eval");
  auto j = tiny_manifest(dir / "out");
  j["sweep"]["dims"] = {8, 16};
  write_manifest(dir, j);
  expect_ok(run("prepare -m manifest.json", dir));
  expect_ok(run("train -m manifest.json -t teacher", dir));
  expect_ok(run("train -m manifest.json", dir));
  expect_ok(run("eval -m manifest.json", dir));
  const auto eval = dir / "out" / "eval" / "student";
  const auto csv = lines(eval / "results.csv");
  ASSERT_EQ(csv.size(), 5u);
  EXPECT_EQ(csv[1].rfind("SUR,8,1,", 0), 0u);
  EXPECT_EQ(csv[4].rfind("SUR,16,3,", 0), 0u);
  EXPECT_EQ(json::parse(slurp(eval / "results.json")).size(), 4u);
  const auto scatter = lines(eval / "scatter" / "SUR_student_dim8_seed0.csv");
  ASSERT_FALSE(scatter.empty());
  EXPECT_EQ(scatter[0], "x,y,label,split");
  EXPECT_EQ(scatter.size(), 1u + 12u * 4u);  // every train and test patch, 2x2 per image
  EXPECT_TRUE(fs::exists(eval / "plots" / "recall_vs_k.svg"));

  const auto first = slurp(eval / "results.csv");
  const auto first_scatter = slurp(eval / "scatter" / "SUR_student_dim8_seed0.csv");
  expect_ok(run("eval -m manifest.json", dir));
  EXPECT_EQ(slurp(eval / "results.csv"), first);
  EXPECT_EQ(slurp(eval / "scatter" / "SUR_student_dim8_seed0.csv"), first_scatter);

  expect_ok(run("eval -m manifest.json --target untrained", dir));
  EXPECT_EQ(lines(dir / "out" / "eval" / "untrained" / "results.csv").size(), 5u);
  EXPECT_EQ(run("eval -m manifest.json --target siamese", dir).code, 2);
}

TEST(CliFuse, ConcatDimsDefaultsAndStrategyErrors) {
  const auto dir = fresh_dir("cli_fuse");
  auto j = tiny_manifest(dir / "out");
  j["dataset"]["views"] = {"SUR", "SEC"};
  j["sweep"] = {{"dims", {16, 128}}, {"ks", {1}}, {"seeds", {0}}};
  j["training"]["epochs"] = 1;
  j.erase("fusion");
  write_manifest(dir, j);
  expect_ok(run("prepare -m manifest.json", dir));
  expect_ok(run("train -m manifest.json -t teacher", dir));
  expect_ok(run("train -m manifest.json", dir));
  const auto r = run("fuse -m manifest.json --strategy concat --surface-dim 128 --section-dim 16", dir);
  expect_ok(r);
  EXPECT_NE(r.output.find("fused_dim 144"), std::string::npos) << r.output;
  const auto summary = json::parse(slurp(dir / "out" / "fusion" / "concat" / "summary.json"));
  EXPECT_EQ(summary["fused_dim"], 144);
  EXPECT_EQ(summary["epochs"], 10);
  const auto csv = lines(dir / "out" / "fusion" / "concat" / "fusion.csv");
  ASSERT_EQ(csv.size(), 4u);
  EXPECT_EQ(csv[0], "method,accuracy,precision,recall,f1,strategy");
  EXPECT_EQ(csv[3].rfind("fused,", 0), 0u);

  expect_ok(run("fuse -m manifest.json -s stack_maxpool --surface-dim 16 --section-dim 16", dir));
  EXPECT_EQ(json::parse(slurp(dir / "out" / "fusion" / "stack_maxpool" / "summary.json"))["epochs"], 10);

  const auto bad = run("fuse -m manifest.json --strategy average", dir);
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("concat"), std::string::npos) << bad.output;
  EXPECT_NE(bad.output.find("stack_maxpool"), std::string::npos) << bad.output;
}

TEST(CliPlot, RendersSvgFromCsv) {
  const auto dir = fresh_dir("cli_plot");
  std::ofstream(dir / "results.csv")
      << "view,embedding_dim,k,accuracy,accuracy_ci95,precision,precision_ci95,recall,recall_ci95,f1,f1_ci95,n_seeds\n"
         "SUR,8,1,0.5,0.1,0.5,0.1,0.5,0.1,0.5,0.1,3\n"
         "SUR,8,5,0.7,0.1,0.7,0.1,0.7,0.1,0.7,0.1,3\n";
  expect_ok(run("plot --input results.csv --output recall.svg", dir));
  const auto svg = slurp(dir / "recall.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);

  std::ofstream(dir / "scatter.csv") << "x,y,label,split\n0.1,0.2,WW,train\n-0.3,0.4,UA,test\n";
  expect_ok(run("plot --input scatter.csv --output scatter.svg", dir));
  EXPECT_NE(slurp(dir / "scatter.svg").find("WW"), std::string::npos);
  EXPECT_EQ(run("plot --input absent.csv --output x.svg", dir).code, 2);
}

TEST(CliEnv, OutputRootVariable) {
  const auto dir = fresh_dir("cli_env");
  auto j = tiny_manifest("rel_out");
  write_manifest(dir, j);
  fs::create_directories(dir / "root");
  expect_ok(run("prepare -m manifest.json", dir, "GEMINI_OUTPUT_ROOT='" + (dir / "root").string() + "'"));
  EXPECT_TRUE(fs::exists(dir / "root" / "rel_out" / "store" / "SUR" / "split.json"));
  EXPECT_FALSE(fs::exists(dir / "rel_out"));
}
