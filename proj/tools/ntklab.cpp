#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ntklab/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct GenArgs {
  std::string task = "sinusoid";
  std::size_t d = 2;
  std::size_t modes = 4;
  std::size_t n = 200;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::size_t classes = 3;
  double separation = 2.0;
  std::string out;
};

int run_gen(const GenArgs& a) {
  ntklab::Dataset ds;
  if (a.task == "sinusoid") {
    if (a.modes == 0) throw ntklab::ConfigError("gen: --modes must be >= 1");
    ntklab::SinusoidSpec spec;
    spec.d = a.d;
    spec.modes = a.modes;
    spec.noise_std = a.noise;
    spec.n = a.n;
    spec.seed = a.seed;
    ds = ntklab::gen_sinusoid(spec);
  } else {
    ds = ntklab::gen_gmm(ntklab::make_gmm_spec(a.d, a.classes, a.separation, a.n, a.seed));
  }
  const std::filesystem::path out(a.out);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  ntklab::save_dataset(out, ds);
  std::cout << "wrote " << out.string() << " (" << ds.size() << " rows, sha256 " << ntklab::sha256_file(out)
            << ")\n";
  return kExitOk;
}

int run_train(const std::string& config_path) {
  const ntklab::RunConfig rc = ntklab::load_run_config(config_path);
  const auto outcomes = ntklab::run_experiment(rc);
  bool diverged = false;
  for (const auto& o : outcomes) {
    std::cout << ntklab::to_string(o.kind) << ": " << o.dir.string();
    if (o.diverged) {
      std::cout << "  DIVERGED (see ERROR)";
      diverged = true;
    } else if (o.metrics.contains("test_mse")) {
      std::cout << "  test_mse=" << ntklab::format_double(o.metrics["test_mse"].get<double>());
    } else if (o.metrics.contains("test_accuracy")) {
      std::cout << "  test_accuracy=" << ntklab::format_double(o.metrics["test_accuracy"].get<double>());
    }
    std::cout << '\n';
  }
  return diverged ? kExitRuntime : kExitOk;
}

int run_spectrum(const std::string& dir, int epoch, bool as_json, const std::string& out) {
  const auto s = ntklab::spectrum_of_run(dir, epoch);
  if (!out.empty()) {
    const auto eig = ntklab::load_vector_csv(std::filesystem::path(dir) / ("spectrum_epoch" + std::to_string(epoch) + ".csv"));
    std::ofstream os(out, std::ios::binary);
    os << "index,eigenvalue\n";
    for (std::size_t i = 0; i < eig.size(); ++i) os << i << ',' << ntklab::format_double(eig[i]) << '\n';
  }
  if (as_json) {
    std::cout << ntklab::to_json(s).dump(2) << '\n';
    return kExitOk;
  }
  std::cout << "epoch            " << s.epoch << '\n'
            << "size             " << s.size << '\n'
            << "lambda_max       " << ntklab::format_double(s.lambda_max) << '\n'
            << "lambda_min       " << ntklab::format_double(s.lambda_min) << '\n'
            << "condition_number " << ntklab::format_double(s.condition_number) << '\n'
            << "effective_rank   " << ntklab::format_double(s.effective_rank) << '\n';
  return kExitOk;
}

int run_compare(const std::string& dir) {
  const auto rows = ntklab::compare_linearized(dir);
  std::ostringstream os;
  os << "epoch,divergence\n";
  double worst = 0.0;
  for (const auto& r : rows) {
    os << r.epoch << ',' << ntklab::format_double(r.divergence) << '\n';
    worst = std::max(worst, r.divergence);
  }
  const auto out = std::filesystem::path(dir) / "linearized_divergence.csv";
  std::ofstream(out, std::ios::binary) << os.str();
  std::cout << "wrote " << out.string() << " (" << rows.size() << " epochs, max divergence "
            << ntklab::format_double(worst) << ")\n";
  return kExitOk;
}

int run_report(const std::vector<std::string>& dirs, const std::string& prefix) {
  std::vector<std::filesystem::path> roots(dirs.begin(), dirs.end());
  const auto rep = ntklab::build_report(roots);
  const std::string csv = ntklab::report_csv(rep);
  std::cout << csv;
  if (!prefix.empty()) {
    const std::filesystem::path p(prefix);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream(prefix + ".csv", std::ios::binary) << csv;
    std::ofstream(prefix + ".json", std::ios::binary) << ntklab::report_json(rep).dump(2) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural tangent kernel experiments for residual networks"};
  app.set_version_flag("--version", std::string(ntklab::kVersion));
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--task", gen.task, "sinusoid or gmm")->check(CLI::IsMember({"sinusoid", "gmm"}));
  gen_cmd->add_option("--d", gen.d, "Input dimension")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--modes", gen.modes, "Sinusoid modes");
  gen_cmd->add_option("--n", gen.n, "Samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--noise", gen.noise, "Target noise std")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.seed, "Seed");
  gen_cmd->add_option("--classes", gen.classes, "Mixture classes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--separation", gen.separation, "Mixture mean separation");
  gen_cmd->add_option("--out", gen.out, "Output CSV path")->required();

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "Run every comparison in a config");
  train_cmd->add_option("config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);

  std::string spectrum_dir;
  int spectrum_epoch = 0;
  bool spectrum_json = false;
  std::string spectrum_out;
  auto* spectrum_cmd = app.add_subcommand("spectrum", "Summarize a stored kernel spectrum");
  spectrum_cmd->add_option("run_dir", spectrum_dir, "Comparison run directory")->required();
  spectrum_cmd->add_option("--epoch", spectrum_epoch, "Snapshot epoch")->check(CLI::NonNegativeNumber);
  spectrum_cmd->add_flag("--json", spectrum_json, "Print JSON");
  spectrum_cmd->add_option("--out", spectrum_out, "Also write the eigenvalues as index,eigenvalue CSV");

  std::string compare_dir;
  auto* compare_cmd =
      app.add_subcommand("compare-linearized", "Measure drift from the linearized trajectory of a run");
  compare_cmd->add_option("run_dir", compare_dir, "Comparison run directory")->required();

  std::vector<std::string> report_dirs;
  std::string report_prefix;
  auto* report_cmd = app.add_subcommand("report", "Aggregate metrics across runs");
  report_cmd->add_option("dirs", report_dirs, "Experiment or run directories")->required();
  report_cmd->add_option("--out", report_prefix, "Write <prefix>.csv and <prefix>.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(config_path);
    if (*spectrum_cmd) return run_spectrum(spectrum_dir, spectrum_epoch, spectrum_json, spectrum_out);
    if (*compare_cmd) return run_compare(compare_dir);
    if (*report_cmd) return run_report(report_dirs, report_prefix);
  } catch (const ntklab::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
