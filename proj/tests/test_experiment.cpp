#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cli_support.hpp"
#include "ntklab/experiment.hpp"

using namespace ntklab;
using clitest::run_cli;
using clitest::scratch;
using clitest::slurp;

namespace {

json minimal_config(const fs::path& out, std::uint64_t seed = 3) {
  return {{"master_seed", seed},
          {"output_dir", out.string()},
          {"data", {{"kind", "sinusoid"}, {"d", 2}, {"modes", 2}, {"n", 64}, {"noise_std", 0.0}}},
          {"model",
           {{"fourier_dim", 4}, {"fourier_sigma", 0.3}, {"hidden_width", 32}, {"depth", 2}, {"alpha", 0.5}}},
          {"train", {{"lr_scale", 0.5}, {"epochs", 10}, {"snapshot_stride", 5}}},
          {"comparisons", {"EcrnFull", "MlpBaseline"}}};
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  const fs::path p = dir / "config.json";
  clitest::write_file(p, cfg.dump(2));
  return p;
}

std::vector<double> read_numbers(const fs::path& p) {
  std::ifstream in(p);
  std::vector<double> v;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) v.push_back(std::stod(line));
  return v;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    rows.push_back(fields);
  }
  return rows;
}

std::size_t count_lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

// ------------------------------------------------------------------ gen

TEST(CliGen, WritesRequestedRowsAndMetadata) {
  const auto dir = scratch("gen_rows");
  ASSERT_EQ(run_cli("gen --task sinusoid --d 20 --modes 10 --n 1000 --noise 0.1 --seed 42 --out " +
                    (dir / "s.csv").string()),
            0);
  ASSERT_TRUE(fs::exists(dir / "s.csv"));
  ASSERT_TRUE(fs::exists(dir / "s.meta.json"));
  EXPECT_EQ(count_lines(dir / "s.csv"), 1001u);
  const json meta = json::parse(slurp(dir / "s.meta.json"));
  EXPECT_EQ(meta["n"], 1000);
  EXPECT_EQ(meta["d"], 20);
  EXPECT_EQ(meta["provenance"]["modes"], 10);
  EXPECT_EQ(meta["provenance"]["noise_std"], 0.1);
  EXPECT_EQ(meta["provenance"]["seed"], 42);
  EXPECT_EQ(meta["sha256"], clitest::external_sha256(dir / "s.csv"));
}

TEST(CliGen, RerunIsByteIdentical) {
  const auto dir = scratch("gen_repeat");
  const std::string flags = "gen --task sinusoid --d 3 --modes 2 --n 50 --noise 0.1 --seed 9 --out ";
  ASSERT_EQ(run_cli(flags + (dir / "a.csv").string()), 0);
  ASSERT_EQ(run_cli(flags + (dir / "b.csv").string()), 0);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  ASSERT_EQ(run_cli("gen --task gmm --d 2 --classes 3 --n 60 --seed 4 --out " + (dir / "g1.csv").string()), 0);
  ASSERT_EQ(run_cli("gen --task gmm --d 2 --classes 3 --n 60 --seed 4 --out " + (dir / "g2.csv").string()), 0);
  EXPECT_EQ(slurp(dir / "g1.csv"), slurp(dir / "g2.csv"));
}

TEST(CliGen, InvalidFlagsAreUsageErrors) {
  const auto dir = scratch("gen_usage");
  EXPECT_EQ(run_cli("gen --task sinusoid --modes 0 --out " + (dir / "x.csv").string()), 1);
  EXPECT_FALSE(fs::exists(dir / "x.csv"));
  EXPECT_EQ(run_cli("gen --task cubes --out " + (dir / "x.csv").string()), 1);
  EXPECT_EQ(run_cli("gen --n 10"), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli(""), 1);
}

// --------------------------------------------------------------- config

TEST(RunConfigParse, RejectsBadInput) {
  json c = minimal_config("unused");
  c["model"]["widht"] = 3;
  EXPECT_THROW(parse_run_config(c), ConfigError);
  c = minimal_config("unused");
  c["train"]["learning_rate"] = 0.1;
  EXPECT_THROW(parse_run_config(c), ConfigError);
  c = minimal_config("unused");
  c["comparisons"] = {"ResNet18"};
  EXPECT_THROW(parse_run_config(c), ConfigError);
  c = minimal_config("unused");
  c["data"]["kind"] = "images";
  EXPECT_THROW(parse_run_config(c), ConfigError);
  c = minimal_config("unused");
  c["train"]["epochs"] = 0;
  EXPECT_THROW(parse_run_config(c), ConfigError);
}

TEST(RunConfigParse, ResolvedConfigRoundTrips) {
  const RunConfig a = parse_run_config(minimal_config("out"));
  const RunConfig b = parse_run_config(to_json(a));
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(a.model.alphas, (std::vector<double>{0.5, 0.5}));
  ASSERT_TRUE(a.train.lr_gain.has_value());
  EXPECT_EQ(*a.train.lr_gain, 0.5);
}

TEST(RunConfigParse, ClassificationDefaultsToCrossEntropy) {
  json c = minimal_config("out");
  c["data"] = {{"kind", "gmm"}, {"d", 2}, {"classes", 3}, {"n", 90}};
  EXPECT_EQ(parse_run_config(c).train.loss, LossKind::CrossEntropy);
}

TEST(SubSeeds, LabelsGiveDistinctStreams) {
  for (std::uint64_t m : {0ull, 1ull, 42ull, 1ull << 40}) {
    const SubSeeds s = derive_sub_seeds(m);
    const std::set<std::uint64_t> all{s.init, s.data, s.mask, s.split};
    EXPECT_EQ(all.size(), 4u);
    EXPECT_EQ(s.init, derive_seed(m, "init"));
  }
}

TEST(SubSeeds, InitSeedChangeLeavesDataUntouched) {
  RunConfig a = parse_run_config(minimal_config("out", 5));
  const PreparedData pa = prepare_dataset(a);
  const PreparedData pb = prepare_dataset(a);
  EXPECT_EQ(pa.raw.x, pb.raw.x);
  EXPECT_EQ(pa.raw.splits.train, pb.raw.splits.train);
  const ModelConfig m1 = model_for(a, pa.data, Comparison::EcrnFull);
  const ModelConfig m2 = model_for(a, pa.data, Comparison::MlpBaseline);
  EXPECT_EQ(m1.init_seed, m2.init_seed);
  EXPECT_TRUE(m1.residual_enabled);
  EXPECT_FALSE(m2.residual_enabled);
  EXPECT_FALSE(m2.fourier_enabled);
}

// ---------------------------------------------------------------- train

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("trained"));
    const json cfg = minimal_config(*root_ / "run");
    json with_lin = cfg;
    with_lin["comparisons"] = {"EcrnFull", "MlpBaseline", "LinearizedNtk"};
    exit_code_ = run_cli("train " + write_config(*root_, with_lin).string());
  }
  static void TearDownTestSuite() {
    delete root_;
    clitest::cleanup_scratch();
  }

  static fs::path run_dir(const std::string& label) { return *root_ / "run" / label; }

  static inline fs::path* root_ = nullptr;
  static inline int exit_code_ = -1;
};

TEST_F(TrainedRun, AllDeclaredFilesPresent) {
  ASSERT_EQ(exit_code_, 0);
  EXPECT_TRUE(fs::exists(*root_ / "run" / "dataset.csv"));
  EXPECT_TRUE(fs::exists(*root_ / "run" / "dataset.meta.json"));
  for (const char* label : {"EcrnFull", "MlpBaseline", "LinearizedNtk"}) {
    SCOPED_TRACE(label);
    const auto dir = run_dir(label);
    for (const char* f : {"manifest.json", "trace.csv", "kernel_trace.csv", "spectrum_epoch0.csv", "theta_epoch0.csv",
                          "modes.csv", "bound.json", "params_final.csv", "drift.csv", "metrics.json", "model.json",
                          "outputs.csv", "train_targets.csv"})
      EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_FALSE(fs::exists(dir / "ERROR"));
    EXPECT_EQ(count_lines(dir / "trace.csv"), 12u);
  }
  for (const char* f : {"spectrum_epoch5.csv", "spectrum_epoch10.csv", "theta_epoch10.csv"})
    EXPECT_TRUE(fs::exists(run_dir("EcrnFull") / f)) << f;
}

TEST_F(TrainedRun, ComparisonsShareTheDatasetHash) {
  ASSERT_EQ(exit_code_, 0);
  const std::string expected = clitest::external_sha256(*root_ / "run" / "dataset.csv");
  for (const char* label : {"EcrnFull", "MlpBaseline", "LinearizedNtk"}) {
    const json m = json::parse(slurp(run_dir(label) / "manifest.json"));
    EXPECT_EQ(m["dataset_sha256"].get<std::string>(), expected) << label;
  }
}

TEST_F(TrainedRun, ManifestArtifactsExistAndHashesMatch) {
  ASSERT_EQ(exit_code_, 0);
  for (const char* label : {"EcrnFull", "MlpBaseline", "LinearizedNtk"}) {
    const json m = json::parse(slurp(run_dir(label) / "manifest.json"));
    EXPECT_EQ(m["version"], kVersion);
    EXPECT_EQ(m["status"], "ok");
    EXPECT_FALSE(m["started_at"].get<std::string>().empty());
    EXPECT_FALSE(m["finished_at"].get<std::string>().empty());
    ASSERT_FALSE(m["artifacts"].empty());
    for (const auto& a : m["artifacts"]) {
      const fs::path p = run_dir(label) / a["file"].get<std::string>();
      ASSERT_TRUE(fs::exists(p)) << p;
      EXPECT_EQ(a["sha256"].get<std::string>(), clitest::external_sha256(p)) << p;
      EXPECT_EQ(a["bytes"].get<std::uintmax_t>(), fs::file_size(p)) << p;
    }
  }
}

TEST_F(TrainedRun, ReproducibleFromManifestConfig) {
  ASSERT_EQ(exit_code_, 0);
  json cfg = json::parse(slurp(run_dir("EcrnFull") / "manifest.json"))["config"];
  const auto again = scratch("trained_again");
  cfg["output_dir"] = (again / "run").string();
  ASSERT_EQ(run_cli("train " + write_config(again, cfg).string()), 0);
  for (const char* label : {"EcrnFull", "MlpBaseline", "LinearizedNtk"})
    EXPECT_EQ(slurp(run_dir(label) / "trace.csv"), slurp(again / "run" / label / "trace.csv")) << label;
}

TEST_F(TrainedRun, TraceColumnsAreStable) {
  ASSERT_EQ(exit_code_, 0);
  const auto rows = read_rows(run_dir("EcrnFull") / "trace.csv");
  EXPECT_EQ(rows.front(), (std::vector<std::string>{"epoch", "train_loss", "val_loss", "metric", "lambda_max",
                                                     "frob_deviation", "lin_divergence"}));
  EXPECT_EQ(rows[1][5], "0");
  EXPECT_EQ(rows[2][4], "nan");
}

TEST_F(TrainedRun, SpectrumEpochZeroMatchesKernelTrace) {
  ASSERT_EQ(exit_code_, 0);
  for (const char* label : {"EcrnFull", "MlpBaseline"}) {
    const auto dir = run_dir(label);
    const auto rows = read_rows(dir / "kernel_trace.csv");
    ASSERT_GE(rows.size(), 2u);
    const json out = json::parse(clitest::cli_output("spectrum " + dir.string() + " --epoch 0 --json"));
    EXPECT_EQ(out["lambda_max"].get<double>(), std::stod(rows[1][1])) << label;
  }
}

TEST_F(TrainedRun, ConditionNumberRecomputedFromFile) {
  ASSERT_EQ(exit_code_, 0);
  const auto dir = run_dir("EcrnFull");
  for (int epoch : {0, 5, 10}) {
    const auto eig = read_numbers(dir / ("spectrum_epoch" + std::to_string(epoch) + ".csv"));
    double lo = eig[0], hi = eig[0], sum = 0.0;
    for (double v : eig) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    const double floor = 1e-8 * hi;
    const json out =
        json::parse(clitest::cli_output("spectrum " + dir.string() + " --json --epoch " + std::to_string(epoch)));
    EXPECT_NEAR(out["condition_number"].get<double>(), hi / std::max(lo, floor), 1e-12 * hi / std::max(lo, floor));
    EXPECT_NEAR(out["effective_rank"].get<double>(), sum / hi, 1e-12 * eig.size());
    EXPECT_EQ(out["lambda_min"].get<double>(), lo);
  }
}

TEST_F(TrainedRun, SpectrumOutWritesEigenvalueCsv) {
  ASSERT_EQ(exit_code_, 0);
  const auto out = *root_ / "spec.csv";
  ASSERT_EQ(run_cli("spectrum " + run_dir("EcrnFull").string() + " --epoch 5 --out " + out.string()), 0);
  const auto rows = read_rows(out);
  const auto eig = read_numbers(run_dir("EcrnFull") / "spectrum_epoch5.csv");
  ASSERT_EQ(rows.size(), eig.size() + 1);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"index", "eigenvalue"}));
  EXPECT_EQ(std::stod(rows[1][1]), eig[0]);
}

TEST_F(TrainedRun, MissingSnapshotListsAvailableEpochs) {
  ASSERT_EQ(exit_code_, 0);
  try {
    spectrum_of_run(run_dir("EcrnFull"), 3);
    FAIL() << "expected NotFoundError";
  } catch (const NotFoundError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("0, 5, 10"), std::string::npos) << msg;
  }
  EXPECT_EQ(run_cli("spectrum " + run_dir("EcrnFull").string() + " --epoch 3"), 2);
  EXPECT_EQ(run_cli("spectrum " + (*root_ / "nowhere").string()), 2);
}

TEST_F(TrainedRun, LinearizedSelfComparisonIsZero) {
  ASSERT_EQ(exit_code_, 0);
  const auto dir = run_dir("LinearizedNtk");
  ASSERT_EQ(run_cli("compare-linearized " + dir.string()), 0);
  const auto rows = read_rows(dir / "linearized_divergence.csv");
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "divergence"}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::stod(rows[i][1]), 0.0) << "epoch " << rows[i][0];
}

TEST_F(TrainedRun, DivergenceStartsAtZeroAndMatchesTrace) {
  ASSERT_EQ(exit_code_, 0);
  const auto rows = compare_linearized(run_dir("EcrnFull"));
  ASSERT_EQ(rows.size(), 11u);
  EXPECT_EQ(rows[0].epoch, 0);
  EXPECT_EQ(rows[0].divergence, 0.0);
  const auto trace = read_rows(run_dir("EcrnFull") / "trace.csv");
  for (std::size_t t = 1; t < rows.size(); ++t) {
    EXPECT_GT(rows[t].divergence, 0.0);
    EXPECT_NEAR(rows[t].divergence, std::stod(trace[t + 1][6]), 1e-9 * (1.0 + rows[t].divergence));
  }
}

TEST_F(TrainedRun, ReportSingleRunHasZeroStd) {
  ASSERT_EQ(exit_code_, 0);
  const Report rep = build_report({*root_ / "run"});
  EXPECT_EQ(rep.task, "regression");
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[0].label, "EcrnFull");
  EXPECT_EQ(rep.rows[1].label, "MlpBaseline");
  EXPECT_EQ(rep.rows[2].label, "LinearizedNtk");
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.runs, 1u);
    ASSERT_TRUE(row.columns.count("test_mse")) << row.label;
    ASSERT_TRUE(row.columns.count("test_r2")) << row.label;
    for (const auto& [col, v] : row.columns) EXPECT_EQ(v.second, 0.0) << row.label << " " << col;
  }
  const json m = json::parse(slurp(run_dir("EcrnFull") / "metrics.json"));
  EXPECT_EQ(rep.rows[0].columns.at("test_mse").first, m["test_mse"].get<double>());
}

TEST_F(TrainedRun, ReportWritesCsvAndJsonWithReferenceAnnotation) {
  ASSERT_EQ(exit_code_, 0);
  const auto prefix = *root_ / "report" / "summary";
  ASSERT_EQ(run_cli("report " + (*root_ / "run").string() + " --out " + prefix.string()), 0);
  const std::string csv = slurp(prefix.string() + ".csv");
  EXPECT_NE(csv.find("label,runs,test_mse_mean,test_mse_std,test_r2_mean"), std::string::npos);
  EXPECT_NE(csv.find("final_frob_deviation_mean"), std::string::npos);
  EXPECT_NE(csv.find("published reference (display only): EcrnFull"), std::string::npos);
  const json j = json::parse(slurp(prefix.string() + ".json"));
  EXPECT_EQ(j["rows"].size(), 3u);
  const json& ref = j["published_reference_display_only"]["rows"];
  EXPECT_EQ(ref["EcrnFull"]["test_mse"][0].get<double>(), 0.045);
  EXPECT_EQ(ref["EcrnFull"]["test_mse"][1].get<double>(), 0.004);
  EXPECT_EQ(ref["MlpBaseline"]["test_mse"][0].get<double>(), 0.085);
  EXPECT_EQ(ref["MlpBaseline"]["test_mse"][1].get<double>(), 0.007);
}

TEST_F(TrainedRun, ReportWithoutShareFileOmitsAnnotation) {
  ASSERT_EQ(exit_code_, 0);
  const auto empty_share = scratch("empty_share");
  setenv("NTKLAB_SHARE_DIR", empty_share.c_str(), 1);
  const Report rep = build_report({*root_ / "run"});
  unsetenv("NTKLAB_SHARE_DIR");
  EXPECT_TRUE(rep.reference.is_null());
  EXPECT_EQ(report_csv(rep).find("published reference"), std::string::npos);
}

// ---------------------------------------------------- report aggregation

TEST(Report, MeanAndSampleStdAcrossSeeds) {
  const auto root = scratch("report_seeds");
  std::vector<double> mse;
  std::vector<fs::path> dirs;
  for (std::uint64_t seed : {1, 2, 3}) {
    json cfg = minimal_config(root / ("s" + std::to_string(seed)), seed);
    cfg["train"]["epochs"] = 3;
    cfg["comparisons"] = {"EcrnFull"};
    const auto outcomes = run_experiment(parse_run_config(cfg));
    mse.push_back(outcomes[0].metrics["test_mse"].get<double>());
    dirs.push_back(root / ("s" + std::to_string(seed)));
  }
  const double mean = (mse[0] + mse[1] + mse[2]) / 3.0;
  double ss = 0.0;
  for (double v : mse) ss += (v - mean) * (v - mean);
  const Report rep = build_report(dirs);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].runs, 3u);
  EXPECT_NEAR(rep.rows[0].columns.at("test_mse").first, mean, 1e-14);
  EXPECT_NEAR(rep.rows[0].columns.at("test_mse").second, std::sqrt(ss / 2.0), 1e-14);
}

TEST(Report, MixedTasksAreRejected) {
  const auto root = scratch("report_mixed");
  json reg = minimal_config(root / "reg");
  reg["train"]["epochs"] = 2;
  reg["comparisons"] = {"EcrnFull"};
  run_experiment(parse_run_config(reg));
  json cls = minimal_config(root / "cls");
  cls["data"] = {{"kind", "gmm"}, {"d", 2}, {"classes", 3}, {"n", 90}, {"separation", 3.0}};
  cls["train"] = {{"learning_rate", 0.1}, {"epochs", 2}};
  cls["comparisons"] = {"EcrnFull"};
  run_experiment(parse_run_config(cls));
  EXPECT_THROW(build_report({root / "reg", root / "cls"}), ConfigError);
  EXPECT_EQ(run_cli("report " + (root / "reg").string() + " " + (root / "cls").string()), 1);
  const Report c = build_report({root / "cls"});
  EXPECT_EQ(c.task, "classification");
  EXPECT_TRUE(c.rows[0].columns.count("test_accuracy"));
  EXPECT_TRUE(c.rows[0].columns.count("test_cross_entropy"));
  EXPECT_THROW(build_report({root / "missing"}), NotFoundError);
}

// ------------------------------------------------------- task handling

TEST(TaskSupport, ClassificationRunCannotBeLinearized) {
  const auto root = scratch("cls_linear");
  json cls = minimal_config(root / "cls");
  cls["data"] = {{"kind", "gmm"}, {"d", 2}, {"classes", 3}, {"n", 90}, {"separation", 3.0}};
  cls["train"] = {{"learning_rate", 0.1}, {"epochs", 2}};
  cls["comparisons"] = {"EcrnFull"};
  run_experiment(parse_run_config(cls));
  const auto dir = root / "cls" / "EcrnFull";
  EXPECT_THROW(compare_linearized(dir), UnsupportedTaskError);
  EXPECT_EQ(run_cli("compare-linearized " + dir.string()), 2);
  const json bound = json::parse(slurp(dir / "bound.json"));
  EXPECT_FALSE(bound["available"].get<bool>());

  cls["comparisons"] = {"LinearizedNtk"};
  EXPECT_THROW(run_experiment(parse_run_config(cls)), UnsupportedTaskError);
}

TEST(TaskSupport, CsvSourceRunsEndToEnd) {
  const auto root = scratch("csv_source");
  std::string csv = "a,b,y\n";
  SeededRng rng(3);
  for (int i = 0; i < 40; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    csv += format_double(a) + "," + format_double(b) + "," + format_double(std::sin(3.0 * a) + b) + "\n";
  }
  clitest::write_file(root / "data.csv", csv);
  json cfg = minimal_config(root / "run");
  cfg["data"] = {{"kind", "csv"}, {"path", (root / "data.csv").string()}, {"target", "y"}};
  cfg["comparisons"] = {"EcrnFull"};
  ASSERT_EQ(run_cli("train " + write_config(root, cfg).string()), 0);
  const json m = json::parse(slurp(root / "run" / "EcrnFull" / "metrics.json"));
  EXPECT_EQ(m["n_train"], 28);
}

TEST(Divergence, UnstableRunKeepsPartialDirectoryWithErrorMarker) {
  const auto root = scratch("diverge");
  json cfg = minimal_config(root / "run");
  cfg["train"] = {{"learning_rate", 50.0}, {"epochs", 200}, {"divergence_factor", 100.0}};
  cfg["comparisons"] = {"EcrnFull"};
  EXPECT_EQ(run_cli("train " + write_config(root, cfg).string()), 2);
  const auto dir = root / "run" / "EcrnFull";
  ASSERT_TRUE(fs::exists(dir / "ERROR"));
  EXPECT_NE(slurp(dir / "ERROR").find("diverged"), std::string::npos);
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "diverged");
  EXPECT_GE(count_lines(dir / "trace.csv"), 2u);
  EXPECT_LT(count_lines(dir / "trace.csv"), 202u);
  EXPECT_TRUE(fs::exists(dir / "spectrum_epoch0.csv"));
}

// ------------------------------------------------------- spectrum math

TEST(SpectrumSummary, IdentityFixtureHasFullEffectiveRank) {
  const auto dir = scratch("identity_fixture");
  clitest::write_file(dir / "spectrum_epoch0.csv", "1\n1\n1\n1\n");
  const SpectrumSummary s = spectrum_of_run(dir, 0);
  EXPECT_EQ(s.effective_rank, 4.0);
  EXPECT_EQ(s.condition_number, 1.0);
  EXPECT_EQ(s.size, 4u);
  const json out = json::parse(clitest::cli_output("spectrum " + dir.string() + " --json"));
  EXPECT_EQ(out["effective_rank"].get<double>(), 4.0);
}

TEST(SpectrumSummary, FloorCapsConditionNumber) {
  const Vec64 eig{10.0, 1.0, 0.0, -1e-12};
  const SpectrumSummary s = summarize_spectrum(eig);
  EXPECT_EQ(s.lambda_min, -1e-12);
  EXPECT_DOUBLE_EQ(s.condition_number, 10.0 / 1e-7);
  EXPECT_DOUBLE_EQ(s.effective_rank, (11.0 - 1e-12) / 10.0);
  EXPECT_THROW(summarize_spectrum({}), EmptyInputError);
  EXPECT_THROW(summarize_spectrum({0.0, 0.0}), IllConditionedError);
}

TEST(SpectrumSummary, RunDirectoryListing) {
  const auto dir = scratch("listing");
  for (int e : {12, 0, 3}) clitest::write_file(dir / ("spectrum_epoch" + std::to_string(e) + ".csv"), "1\n");
  clitest::write_file(dir / "spectrum_epochX.csv", "1\n");
  EXPECT_EQ(available_spectrum_epochs(dir), (std::vector<int>{0, 3, 12}));
}

// ------------------------------------------------- width and linearization

TEST(LinearizationVsWidth, WiderNetworksStayCloserToTheirLinearization) {
  const auto root = scratch("width_sweep");
  std::vector<double> narrow, wide;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (std::size_t w : {64, 512}) {
      json cfg = minimal_config(root / ("w" + std::to_string(w) + "_s" + std::to_string(seed)), 100 + seed);
      cfg["data"]["n"] = 40;
      cfg["model"]["hidden_width"] = w;
      cfg["train"] = {{"lr_scale", 0.5}, {"epochs", 30}, {"snapshot_stride", 30}};
      cfg["comparisons"] = {"EcrnFull"};
      const auto dir = root / ("w" + std::to_string(w) + "_s" + std::to_string(seed));
      ASSERT_EQ(run_cli("train " + write_config(root / ("c" + std::to_string(w) + std::to_string(seed)), cfg).string()),
                0);
      ASSERT_EQ(run_cli("compare-linearized " + (dir / "EcrnFull").string()), 0);
      const auto rows = read_rows(dir / "EcrnFull" / "linearized_divergence.csv");
      (w == 64 ? narrow : wide).push_back(std::stod(rows.back()[1]));
    }
  }
  std::sort(narrow.begin(), narrow.end());
  std::sort(wide.begin(), wide.end());
  EXPECT_LT(wide[2], narrow[2]);
  clitest::cleanup_scratch();
}

namespace {

class ScratchCleanup : public ::testing::Environment {
 public:
  void TearDown() override { clitest::cleanup_scratch(); }
};

const auto* const kScratchCleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

}  // namespace
