#pragma once

// Seeded experiment runs: JSON run configs, dataset preparation, one run
// directory per comparison model, and the readers used by the CLI to
// summarize spectra, replay linearized dynamics and aggregate reports.
//
// Run directory layout (one per comparison, under output_dir/<Label>/):
//   manifest.json      config, timestamps, artifact hashes, dataset hash
//   trace.csv          epoch,train_loss,val_loss,metric,lambda_max,frob_deviation,lin_divergence
//   kernel_trace.csv   epoch,lambda_max,frob_deviation
//   spectrum_epoch{t}.csv, theta_epoch{t}.csv
//   modes.csv          epoch,mode,projection
//   drift.csv          per snapshot pair drift against the reference bound
//   outputs.csv        epoch,f_0..f_{n-1} on the train split (scalar regression)
//   train_targets.csv  train targets, one per line
//   bound.json, metrics.json, model.json, params_final.csv
//   ERROR              present only when training diverged

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ntklab/data.hpp"
#include "ntklab/dynamics.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/hashing.hpp"
#include "ntklab/kernel.hpp"
#include "ntklab/linalg.hpp"
#include "ntklab/model.hpp"
#include "ntklab/rng.hpp"

#ifndef NTKLAB_VERSION
#define NTKLAB_VERSION "0.0.0"
#endif

namespace ntklab {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = NTKLAB_VERSION;

/// theta_epoch{t}.csv is written for every snapshot up to this many train
/// samples; epoch 0 is always written because the linearized replay needs it.
inline constexpr std::size_t kThetaExportLimit = 512;

enum class Comparison { EcrnFull, MlpBaseline, LinearizedNtk };

inline std::string to_string(Comparison c) {
  switch (c) {
    case Comparison::EcrnFull: return "EcrnFull";
    case Comparison::MlpBaseline: return "MlpBaseline";
    case Comparison::LinearizedNtk: return "LinearizedNtk";
  }
  return "?";
}

inline Comparison parse_comparison(const std::string& s) {
  if (s == "EcrnFull") return Comparison::EcrnFull;
  if (s == "MlpBaseline") return Comparison::MlpBaseline;
  if (s == "LinearizedNtk") return Comparison::LinearizedNtk;
  throw ConfigError("unknown comparison '" + s + "' (expected EcrnFull, MlpBaseline or LinearizedNtk)");
}

struct SubSeeds {
  std::uint64_t init = 0;
  std::uint64_t data = 0;
  std::uint64_t mask = 0;
  std::uint64_t split = 0;
};

inline SubSeeds derive_sub_seeds(std::uint64_t master) {
  return {derive_seed(master, "init"), derive_seed(master, "data"), derive_seed(master, "mask"),
          derive_seed(master, "split")};
}

struct DataSource {
  std::string kind = "sinusoid";  // sinusoid | gmm | csv
  std::size_t d = 2;
  std::size_t n = 200;
  std::size_t modes = 4;
  double noise_std = 0.0;
  std::size_t classes = 3;
  double separation = 2.0;
  std::string path;
  CsvSchema schema;
  bool standardize = true;
};

struct RunConfig {
  std::uint64_t master_seed = 0;
  std::string output_dir = "runs/default";
  DataSource data;
  ModelConfig model;                // input_dim/output_dim are filled from the data
  json baseline = json::object();   // overrides applied to the MLP baseline
  TrainConfig train;
  double epsilon = 0.0;
  std::vector<Comparison> comparisons{Comparison::EcrnFull};
};

// ------------------------------------------------------------ config I/O

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

inline void apply_model_json(ModelConfig& m, const json& j, const std::string& where) {
  reject_unknown(j,
                 {"fourier_dim", "fourier_enabled", "fourier_sigma", "hidden_width", "depth", "alpha", "alphas",
                  "drop_prob", "drop_probs", "activation", "residual_enabled"},
                 where);
  m.fourier_dim = get_or(j, "fourier_dim", m.fourier_dim);
  m.fourier_enabled = get_or(j, "fourier_enabled", m.fourier_enabled);
  m.fourier_sigma = get_or(j, "fourier_sigma", m.fourier_sigma);
  m.hidden_width = get_or(j, "hidden_width", m.hidden_width);
  const std::size_t old_depth = m.depth;
  m.depth = get_or(j, "depth", m.depth);
  if (j.contains("activation")) m.activation = parse_activation(j.at("activation").get<std::string>());
  m.residual_enabled = get_or(j, "residual_enabled", m.residual_enabled);
  if (j.contains("alphas")) {
    m.alphas = j.at("alphas").get<std::vector<double>>();
  } else if (j.contains("alpha") || m.alphas.size() != m.depth || old_depth != m.depth) {
    const double a = get_or(j, "alpha", m.alphas.empty() ? 1.0 : m.alphas.back());
    m.alphas.assign(m.depth, a);
  }
  if (j.contains("drop_probs")) {
    m.drop_probs = j.at("drop_probs").get<std::vector<double>>();
  } else if (j.contains("drop_prob") || m.drop_probs.size() != m.depth || old_depth != m.depth) {
    const double p = get_or(j, "drop_prob", m.drop_probs.empty() ? 0.0 : m.drop_probs.back());
    m.drop_probs.assign(m.depth, p);
  }
}

inline json model_to_json(const ModelConfig& m) {
  return {{"fourier_dim", m.fourier_dim},   {"fourier_enabled", m.fourier_enabled},
          {"fourier_sigma", m.fourier_sigma}, {"hidden_width", m.hidden_width},
          {"depth", m.depth},               {"alphas", m.alphas},
          {"drop_probs", m.drop_probs},     {"activation", std::string(to_string(m.activation))},
          {"residual_enabled", m.residual_enabled}};
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  detail::reject_unknown(j, {"master_seed", "output_dir", "data", "model", "baseline", "train", "comparisons"},
                         "config");
  RunConfig rc;
  try {
    rc.master_seed = detail::get_or<std::uint64_t>(j, "master_seed", 0);
    rc.output_dir = detail::get_or<std::string>(j, "output_dir", rc.output_dir);

    const json data = j.value("data", json::object());
    detail::reject_unknown(data,
                           {"kind", "d", "n", "modes", "noise_std", "classes", "separation", "path", "target",
                            "task", "header", "standardize"},
                           "data");
    DataSource& ds = rc.data;
    ds.kind = detail::get_or<std::string>(data, "kind", ds.kind);
    if (ds.kind != "sinusoid" && ds.kind != "gmm" && ds.kind != "csv")
      throw ConfigError("data.kind must be sinusoid, gmm or csv");
    ds.d = detail::get_or(data, "d", ds.d);
    ds.n = detail::get_or(data, "n", ds.n);
    ds.modes = detail::get_or(data, "modes", ds.modes);
    ds.noise_std = detail::get_or(data, "noise_std", ds.noise_std);
    ds.classes = detail::get_or(data, "classes", ds.classes);
    ds.separation = detail::get_or(data, "separation", ds.separation);
    ds.path = detail::get_or<std::string>(data, "path", "");
    ds.schema.target_column = detail::get_or<std::string>(data, "target", "");
    ds.schema.task = parse_task(detail::get_or<std::string>(data, "task", "regression"));
    ds.schema.has_header = detail::get_or(data, "header", true);
    ds.standardize = detail::get_or(data, "standardize", true);
    if (ds.kind == "csv" && ds.path.empty()) throw ConfigError("data.path is required for csv data");

    rc.model.set_uniform_scaling(1.0);
    detail::apply_model_json(rc.model, j.value("model", json::object()), "model");
    rc.baseline = j.value("baseline", json::object());
    {
      ModelConfig probe = rc.model;
      detail::apply_model_json(probe, rc.baseline, "baseline");
    }

    const json tr = j.value("train", json::object());
    detail::reject_unknown(tr,
                           {"learning_rate", "lr_scale", "epochs", "batch_size", "loss", "snapshot_stride",
                            "stochastic_depth", "epsilon", "divergence_factor"},
                           "train");
    if (tr.contains("learning_rate") && tr.contains("lr_scale"))
      throw ConfigError("train: give either learning_rate or lr_scale, not both");
    if (tr.contains("learning_rate")) {
      rc.train.learning_rate = tr.at("learning_rate").get<double>();
    } else {
      rc.train.lr_gain = detail::get_or(tr, "lr_scale", 0.5);
    }
    rc.train.epochs = detail::get_or(tr, "epochs", rc.train.epochs);
    rc.train.batch_size = detail::get_or(tr, "batch_size", rc.train.batch_size);
    const bool classification = ds.kind == "gmm" || (ds.kind == "csv" && ds.schema.task == TaskKind::Classification);
    rc.train.loss = parse_loss(detail::get_or<std::string>(tr, "loss", classification ? "cross_entropy" : "mse"));
    rc.train.snapshot_stride = detail::get_or(tr, "snapshot_stride", rc.train.snapshot_stride);
    rc.train.stochastic_depth = detail::get_or(tr, "stochastic_depth", false);
    rc.train.divergence_factor = detail::get_or(tr, "divergence_factor", rc.train.divergence_factor);
    rc.epsilon = detail::get_or(tr, "epsilon", 0.0);
    if (!(rc.epsilon >= 0.0)) throw ConfigError("train.epsilon must be >= 0");

    if (j.contains("comparisons")) {
      rc.comparisons.clear();
      for (const auto& c : j.at("comparisons")) rc.comparisons.push_back(parse_comparison(c.get<std::string>()));
      if (rc.comparisons.empty()) throw ConfigError("comparisons must not be empty");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  rc.train.validate();
  return rc;
}

inline RunConfig load_run_config(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_run_config(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

/// Fully resolved config; parsing it back yields the same run.
inline json to_json(const RunConfig& rc) {
  json data = {{"kind", rc.data.kind}, {"standardize", rc.data.standardize}};
  if (rc.data.kind == "csv") {
    data["path"] = rc.data.path;
    data["target"] = rc.data.schema.target_column;
    data["task"] = std::string(to_string(rc.data.schema.task));
    data["header"] = rc.data.schema.has_header;
  } else {
    data["d"] = rc.data.d;
    data["n"] = rc.data.n;
    if (rc.data.kind == "sinusoid") {
      data["modes"] = rc.data.modes;
      data["noise_std"] = rc.data.noise_std;
    } else {
      data["classes"] = rc.data.classes;
      data["separation"] = rc.data.separation;
    }
  }
  json train = {{"epochs", rc.train.epochs},
                {"batch_size", rc.train.batch_size},
                {"loss", std::string(to_string(rc.train.loss))},
                {"snapshot_stride", rc.train.snapshot_stride},
                {"stochastic_depth", rc.train.stochastic_depth},
                {"epsilon", rc.epsilon},
                {"divergence_factor", rc.train.divergence_factor}};
  if (rc.train.lr_gain) {
    train["lr_scale"] = *rc.train.lr_gain;
  } else {
    train["learning_rate"] = rc.train.learning_rate;
  }
  json comps = json::array();
  for (auto c : rc.comparisons) comps.push_back(to_string(c));
  return {{"master_seed", rc.master_seed}, {"output_dir", rc.output_dir},
          {"data", data},                  {"model", detail::model_to_json(rc.model)},
          {"baseline", rc.baseline},       {"train", train},
          {"comparisons", comps}};
}

// -------------------------------------------------------------- datasets

struct PreparedData {
  Dataset raw;       // as generated or loaded, with splits
  Dataset data;      // features standardized on the train split
  ScalerParams scaler;
};

inline PreparedData prepare_dataset(const RunConfig& rc) {
  const SubSeeds seeds = derive_sub_seeds(rc.master_seed);
  Dataset ds;
  if (rc.data.kind == "sinusoid") {
    SinusoidSpec spec;
    spec.d = rc.data.d;
    spec.modes = rc.data.modes;
    spec.noise_std = rc.data.noise_std;
    spec.n = rc.data.n;
    spec.seed = seeds.data;
    ds = gen_sinusoid(spec);
  } else if (rc.data.kind == "gmm") {
    ds = gen_gmm(make_gmm_spec(rc.data.d, rc.data.classes, rc.data.separation, rc.data.n, seeds.data));
  } else {
    ds = load_csv(rc.data.path, rc.data.schema);
  }
  PreparedData out;
  out.raw = split(ds, {}, true, seeds.split);
  if (rc.data.standardize) {
    std::tie(out.data, out.scaler) = standardize(out.raw);
  } else {
    out.data = out.raw;
    out.scaler = {Vec64(ds.feature_dim(), 0.0), Vec64(ds.feature_dim(), 1.0)};
  }
  return out;
}

/// Model configuration of one comparison, shaped to the dataset.
inline ModelConfig model_for(const RunConfig& rc, const Dataset& data, Comparison c) {
  ModelConfig m = rc.model;
  if (c == Comparison::MlpBaseline) {
    m.residual_enabled = false;
    m.fourier_enabled = false;
    detail::apply_model_json(m, rc.baseline, "baseline");
  }
  m.input_dim = data.feature_dim();
  m.output_dim = data.task == TaskKind::Classification ? data.num_classes : data.y.cols();
  m.init_seed = derive_sub_seeds(rc.master_seed).init;
  m.validate();
  return m;
}

// -------------------------------------------------------------- writers

namespace detail {

inline std::string csv_number(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string trace_csv(const std::vector<EpochRecord>& records) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,metric,lambda_max,frob_deviation,lin_divergence\n";
  for (const auto& r : records)
    os << r.epoch << ',' << csv_number(r.train_loss) << ',' << csv_number(r.val_loss) << ','
       << csv_number(r.metric) << ',' << csv_number(r.lambda_max) << ',' << csv_number(r.frob_deviation) << ','
       << csv_number(r.lin_divergence) << '\n';
  return os.str();
}

inline std::string matrix_csv(const DenseMatrix& m) {
  std::ostringstream os;
  write_matrix_csv(os, m);
  return os.str();
}

inline std::string vector_csv(std::span<const double> v) {
  std::ostringstream os;
  write_vector_csv(os, v);
  return os.str();
}

/// Artifact writer that remembers every file for the manifest.
class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }

  void text(const std::string& name, const std::string& body) {
    write_text(dir_ / name, body);
    files_.push_back(name);
  }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

  json artifacts() const {
    json list = json::array();
    for (const auto& f : files_)
      list.push_back({{"file", f}, {"sha256", sha256_file(dir_ / f)}, {"bytes", fs::file_size(dir_ / f)}});
    return list;
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

inline void write_snapshots(RunWriter& w, const std::vector<KernelSnapshot>& snaps, std::size_t n) {
  std::ostringstream kt;
  kt << "epoch,lambda_max,frob_deviation\n";
  for (const auto& s : snaps) {
    kt << s.epoch << ',' << format_double(s.lambda_max) << ',' << format_double(s.frob_deviation) << '\n';
    w.text("spectrum_epoch" + std::to_string(s.epoch) + ".csv", vector_csv(s.eigenvalues));
    if (s.epoch == 0 || n <= kThetaExportLimit)
      w.text("theta_epoch" + std::to_string(s.epoch) + ".csv", matrix_csv(s.theta));
  }
  w.text("kernel_trace.csv", kt.str());
}

inline void write_modes(RunWriter& w, const std::vector<ModeRecord>& modes) {
  std::ostringstream os;
  os << "epoch,mode,projection\n";
  for (const auto& m : modes)
    for (std::size_t i = 0; i < m.projections.size(); ++i)
      os << m.epoch << ',' << i << ',' << format_double(m.projections[i]) << '\n';
  w.text("modes.csv", os.str());
}

inline void write_drift(RunWriter& w, const std::vector<DriftRecord>& drift, double reference) {
  std::ostringstream os;
  os << "from_epoch,to_epoch,step_drift,deviation_before,deviation_after,reference_bound,step_within_reference,"
        "triangle_holds\n";
  for (const auto& d : drift)
    os << d.from_epoch << ',' << d.to_epoch << ',' << format_double(d.step_drift) << ','
       << format_double(d.deviation_before) << ',' << format_double(d.deviation_after) << ','
       << format_double(reference) << ',' << (d.step_drift <= reference ? 1 : 0) << ',' << (d.triangle_holds ? 1 : 0)
       << '\n';
  w.text("drift.csv", os.str());
}

inline void write_outputs(RunWriter& w, const std::vector<Vec64>& outputs, std::span<const double> targets) {
  std::ostringstream os;
  os << "epoch";
  const std::size_t n = targets.size();
  for (std::size_t i = 0; i < n; ++i) os << ",f" << i;
  os << '\n';
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    os << t;
    for (double v : outputs[t]) os << ',' << format_double(v);
    os << '\n';
  }
  w.text("outputs.csv", os.str());
  w.text("train_targets.csv", vector_csv(targets));
}

inline json model_json(const ModelConfig& cfg, const ModelParams& p) {
  json j = model_to_json(cfg);
  j["input_dim"] = cfg.input_dim;
  j["output_dim"] = cfg.output_dim;
  j["init_seed"] = cfg.init_seed;
  j["parameter_count"] = p.layout.total();
  json blocks = json::array();
  for (const auto& b : p.layout.blocks())
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  j["blocks"] = blocks;
  json freq = json::array();
  for (std::size_t r = 0; r < p.fourier.rows(); ++r) freq.push_back(Vec64(p.fourier.row(r).begin(), p.fourier.row(r).end()));
  j["fourier_frequencies"] = freq;
  return j;
}

inline json bound_json(const KernelSnapshot& snap, std::span<const double> f, std::span<const double> y,
                       double epsilon) {
  try {
    const auto b = generalization_bound(snap, f, y, epsilon);
    return {{"available", true},         {"epoch", snap.epoch},         {"value", b.value},
            {"epsilon", b.epsilon},      {"lambda_floor", b.lambda_floor}, {"floored_modes", b.floored_modes}};
  } catch (const IllConditionedError& e) {
    return {{"available", false}, {"epoch", snap.epoch}, {"epsilon", epsilon}, {"reason", e.what()}};
  }
}

}  // namespace detail

// ------------------------------------------------------------- running

struct ComparisonOutcome {
  Comparison kind = Comparison::EcrnFull;
  fs::path dir;
  bool diverged = false;
  json metrics;
};

namespace detail {

inline void split_metrics(json& m, const std::string& prefix, TaskKind task, LossKind loss, const DenseMatrix& pred,
                          const SplitView& s) {
  if (s.x.rows() == 0) return;
  if (task == TaskKind::Regression) {
    m[prefix + "_mse"] = mse_loss(pred, s.y);
    m[prefix + "_r2"] = evaluate_metric(task, pred, s);
    if (std::isnan(m[prefix + "_r2"].get<double>())) m[prefix + "_r2"] = nullptr;
  } else {
    m[prefix + "_accuracy"] = accuracy(pred, s.labels);
    m[prefix + "_cross_entropy"] = cross_entropy_loss(pred, s.labels);
  }
  (void)loss;
}

inline json kernel_summary(const std::vector<KernelSnapshot>& snaps, const std::vector<DriftRecord>& drift) {
  json k = {{"initial_lambda_max", snaps.front().lambda_max},
            {"final_lambda_max", snaps.back().lambda_max},
            {"final_frob_deviation", snaps.back().frob_deviation}};
  double max_step = 0.0;
  bool triangle = true;
  for (const auto& d : drift) {
    max_step = std::max(max_step, d.step_drift);
    triangle = triangle && d.triangle_holds;
  }
  k["max_step_drift"] = max_step;
  k["triangle_holds"] = triangle;
  return k;
}

inline void finish_manifest(RunWriter& w, const RunConfig& rc, Comparison c, const std::string& started,
                            const std::string& dataset_sha, std::size_t params, const std::string& status) {
  json manifest = {{"version", kVersion},
                   {"label", to_string(c)},
                   {"status", status},
                   {"config", to_json(rc)},
                   {"started_at", started},
                   {"finished_at", utc_timestamp()},
                   {"dataset_sha256", dataset_sha},
                   {"parameter_count", params},
                   {"threads", worker_count()}};
  manifest["artifacts"] = w.artifacts();
  write_json(w.dir() / "manifest.json", manifest);
}

inline ComparisonOutcome run_trained(const RunConfig& rc, const PreparedData& pd, Comparison c, RunWriter& w,
                                     const std::string& dataset_sha) {
  const std::string started = utc_timestamp();
  const Dataset& data = pd.data;
  const ModelConfig cfg = model_for(rc, data, c);
  const ModelParams init = init_params(cfg);
  TrainConfig tcfg = rc.train;
  tcfg.seed = derive_sub_seeds(rc.master_seed).mask;

  ComparisonOutcome out{c, w.dir(), false, json::object()};
  TrainingTrace trace;
  ModelParams final_params = init;
  std::string status = "ok";
  try {
    TrainResult res = train(init, cfg, data, tcfg);
    trace = std::move(res.trace);
    final_params = std::move(res.params);
  } catch (const TrainingDiverged& e) {
    trace = e.partial();
    out.diverged = true;
    status = "diverged";
    w.text("ERROR", std::string(e.what()) + "\n");
  }

  const double drift_ref = drift_reference_bound(cfg);
  w.text("trace.csv", trace_csv(trace.records));
  if (!trace.snapshots.empty()) write_snapshots(w, trace.snapshots, trace.n_train);
  write_modes(w, trace.modes);
  write_drift(w, trace.drift, drift_ref);
  if (!trace.train_outputs.empty()) write_outputs(w, trace.train_outputs, trace.train_targets);
  w.text("params_final.csv", vector_csv(final_params.values));
  w.json_file("model.json", model_json(cfg, final_params));

  json m = {{"label", to_string(c)},
            {"task", std::string(to_string(data.task))},
            {"loss", std::string(to_string(tcfg.loss))},
            {"learning_rate", trace.learning_rate},
            {"epochs_completed", trace.records.empty() ? 0 : trace.records.back().epoch},
            {"n_train", trace.n_train},
            {"parameter_count", init.layout.total()},
            {"output_dim", cfg.output_dim},
            {"drift_reference_bound", drift_ref},
            {"diverged", out.diverged}};
  if (!trace.snapshots.empty()) m["kernel"] = kernel_summary(trace.snapshots, trace.drift);
  if (!out.diverged) {
    for (const auto& [name, idx] : {std::pair{"train", &data.splits.train}, {"val", &data.splits.val},
                                    {"test", &data.splits.test}}) {
      const SplitView s = take_split(data, *idx);
      if (s.x.rows() == 0) continue;
      split_metrics(m, name, data.task, tcfg.loss, predict(final_params, cfg, s.x), s);
    }
  }
  if (!trace.train_outputs.empty() && !trace.snapshots.empty()) {
    w.json_file("bound.json",
                bound_json(trace.snapshots.back(), trace.train_outputs.back(), trace.train_targets, rc.epsilon));
  } else {
    w.json_file("bound.json", {{"available", false}, {"epsilon", rc.epsilon},
                               {"reason", "bound is defined for scalar regression runs"}});
  }
  w.json_file("metrics.json", m);
  out.metrics = m;
  finish_manifest(w, rc, c, started, dataset_sha, init.layout.total(), status);
  return out;
}

/// Frozen-kernel model: the network linearized at initialization and
/// trained by gradient descent on MSE in closed form.
inline ComparisonOutcome run_linearized(const RunConfig& rc, const PreparedData& pd, RunWriter& w,
                                        const std::string& dataset_sha) {
  const std::string started = utc_timestamp();
  const Dataset& data = pd.data;
  if (data.task != TaskKind::Regression || data.y.cols() != 1 || rc.train.loss != LossKind::Mse)
    throw UnsupportedTaskError("LinearizedNtk needs a scalar regression task with MSE loss");
  const ModelConfig cfg = model_for(rc, data, Comparison::EcrnFull);
  const ModelParams init = init_params(cfg);
  const SplitView tr = take_split(data, data.splits.train);
  const SplitView va = take_split(data, data.splits.val);
  const SplitView te = take_split(data, data.splits.test);
  const std::size_t n = tr.x.rows();

  KernelSnapshot k0 = compute_ntk(init, cfg, tr.x);
  const double eta = rc.train.lr_gain ? learning_rate_for_gain(k0, *rc.train.lr_gain) : rc.train.learning_rate;
  const Vec64 f0 = predict(init, cfg, tr.x).column(0);
  const Vec64 y = tr.y.column(0);
  const LinearizedTrajectory traj = linearized_trajectory(k0, f0, y, eta, rc.train.epochs);

  auto query = [&](const SplitView& s) -> std::vector<Vec64> {
    if (s.x.rows() == 0) return {};
    return linearized_predictions(compute_cross_ntk(init, cfg, s.x, tr.x), predict(init, cfg, s.x).column(0), traj,
                                  y, eta);
  };
  const auto val_traj = query(va);
  const auto test_traj = query(te);

  std::vector<EpochRecord> records;
  std::vector<ModeRecord> modes;
  for (std::size_t t = 0; t <= rc.train.epochs; ++t) {
    EpochRecord r;
    r.epoch = static_cast<int>(t);
    r.train_loss = mse_loss(DenseMatrix::column_vector(traj.outputs[t]), tr.y);
    if (!val_traj.empty()) {
      const DenseMatrix vp = DenseMatrix::column_vector(val_traj[t]);
      r.val_loss = mse_loss(vp, va.y);
      r.metric = evaluate_metric(TaskKind::Regression, vp, va);
    }
    r.lambda_max = k0.lambda_max;
    r.frob_deviation = 0.0;
    r.lin_divergence = 0.0;
    records.push_back(r);
    modes.push_back({r.epoch, traj.projections[t]});
  }

  w.text("trace.csv", trace_csv(records));
  write_snapshots(w, {k0}, n);
  write_modes(w, modes);
  write_drift(w, {}, drift_reference_bound(cfg));
  write_outputs(w, traj.outputs, y);
  w.text("params_final.csv", vector_csv(init.values));
  w.json_file("model.json", model_json(cfg, init));
  w.json_file("bound.json", bound_json(k0, traj.outputs.back(), y, rc.epsilon));

  json m = {{"label", to_string(Comparison::LinearizedNtk)},
            {"task", "regression"},
            {"loss", "mse"},
            {"learning_rate", eta},
            {"epochs_completed", rc.train.epochs},
            {"n_train", n},
            {"parameter_count", init.layout.total()},
            {"output_dim", 1},
            {"drift_reference_bound", drift_reference_bound(cfg)},
            {"diverged", false},
            {"unstable", traj.unstable}};
  m["kernel"] = kernel_summary({k0}, {});
  split_metrics(m, "train", TaskKind::Regression, LossKind::Mse, DenseMatrix::column_vector(traj.outputs.back()), tr);
  if (!val_traj.empty())
    split_metrics(m, "val", TaskKind::Regression, LossKind::Mse, DenseMatrix::column_vector(val_traj.back()), va);
  if (!test_traj.empty())
    split_metrics(m, "test", TaskKind::Regression, LossKind::Mse, DenseMatrix::column_vector(test_traj.back()), te);
  w.json_file("metrics.json", m);
  finish_manifest(w, rc, Comparison::LinearizedNtk, started, dataset_sha, init.layout.total(), "ok");
  return {Comparison::LinearizedNtk, w.dir(), false, m};
}

}  // namespace detail

/// Writes the shared dataset once, then one run directory per comparison.
inline std::vector<ComparisonOutcome> run_experiment(const RunConfig& rc) {
  const fs::path root(rc.output_dir);
  fs::create_directories(root);
  const PreparedData pd = prepare_dataset(rc);
  json meta_extra = {{"train", pd.raw.splits.train}, {"val", pd.raw.splits.val}, {"test", pd.raw.splits.test}};
  save_dataset(root / "dataset.csv", pd.raw);
  {
    const fs::path meta_path = root / "dataset.meta.json";
    json meta = json::parse(read_file(meta_path));
    meta["splits"] = meta_extra;
    meta["split_warnings"] = pd.raw.splits.warnings;
    meta["scaler"] = {{"mean", pd.scaler.mean}, {"stddev", pd.scaler.stddev}};
    detail::write_json(meta_path, meta);
  }
  const std::string dataset_sha = sha256_file(root / "dataset.csv");
  detail::write_json(root / "config.json", to_json(rc));

  std::vector<ComparisonOutcome> outcomes;
  for (Comparison c : rc.comparisons) {
    const fs::path dir = root / to_string(c);
    fs::remove_all(dir);
    detail::RunWriter w(dir);
    if (c == Comparison::LinearizedNtk) {
      outcomes.push_back(detail::run_linearized(rc, pd, w, dataset_sha));
    } else {
      outcomes.push_back(detail::run_trained(rc, pd, c, w, dataset_sha));
    }
  }
  return outcomes;
}

// ------------------------------------------------------------- readers

inline DenseMatrix load_matrix_csv(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("missing " + path.string());
  std::ifstream in(path);
  return read_matrix_csv(in);
}

inline Vec64 load_vector_csv(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("missing " + path.string());
  std::ifstream in(path);
  return read_vector_csv(in);
}

inline json load_json(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("missing " + path.string());
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Epochs that have a stored spectrum, ascending.
inline std::vector<int> available_spectrum_epochs(const fs::path& run_dir) {
  std::vector<int> epochs;
  if (!fs::is_directory(run_dir)) throw NotFoundError("no run directory " + run_dir.string());
  static const std::regex pattern(R"(spectrum_epoch(\d+)\.csv)");
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) epochs.push_back(std::stoi(m[1].str()));
  }
  std::sort(epochs.begin(), epochs.end());
  return epochs;
}

struct SpectrumSummary {
  int epoch = 0;
  std::size_t size = 0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double floor = 0.0;
  double condition_number = 0.0;  // lambda_max / max(lambda_min, floor)
  double effective_rank = 0.0;    // sum(lambda) / lambda_max
};

/// The floor is relative to lambda_max, matching the generalization bound.
inline SpectrumSummary summarize_spectrum(const Vec64& eigenvalues, int epoch = 0, double relative_floor = 1e-8) {
  if (eigenvalues.empty()) throw EmptyInputError("spectrum is empty");
  SpectrumSummary s;
  s.epoch = epoch;
  s.size = eigenvalues.size();
  s.lambda_max = *std::max_element(eigenvalues.begin(), eigenvalues.end());
  s.lambda_min = *std::min_element(eigenvalues.begin(), eigenvalues.end());
  if (!(s.lambda_max > 0.0)) throw IllConditionedError("spectrum has no positive eigenvalue");
  s.floor = relative_floor * s.lambda_max;
  s.condition_number = s.lambda_max / std::max(s.lambda_min, s.floor);
  double sum = 0.0;
  for (double l : eigenvalues) sum += l;
  s.effective_rank = sum / s.lambda_max;
  return s;
}

inline SpectrumSummary spectrum_of_run(const fs::path& run_dir, int epoch) {
  const fs::path file = run_dir / ("spectrum_epoch" + std::to_string(epoch) + ".csv");
  if (!fs::exists(file)) {
    std::string list;
    for (int e : available_spectrum_epochs(run_dir)) list += (list.empty() ? "" : ", ") + std::to_string(e);
    throw NotFoundError("no snapshot at epoch " + std::to_string(epoch) + " in " + run_dir.string() +
                        "; available epochs: " + (list.empty() ? "none" : list));
  }
  return summarize_spectrum(load_vector_csv(file), epoch);
}

inline json to_json(const SpectrumSummary& s) {
  return {{"epoch", s.epoch},
          {"size", s.size},
          {"lambda_max", s.lambda_max},
          {"lambda_min", s.lambda_min},
          {"floor", s.floor},
          {"condition_number", s.condition_number},
          {"effective_rank", s.effective_rank}};
}

struct DivergenceRow {
  int epoch = 0;
  double divergence = 0.0;  // ||f_actual - f_lin||_2 / sqrt(n)
};

/// Replays the linearized trajectory from the stored initial kernel and
/// outputs, and measures how far the recorded outputs drift from it.
inline std::vector<DivergenceRow> compare_linearized(const fs::path& run_dir) {
  const json metrics = load_json(run_dir / "metrics.json");
  if (metrics.at("task").get<std::string>() != "regression" || metrics.value("output_dim", 1) != 1)
    throw UnsupportedTaskError("compare-linearized needs a scalar regression run (" + run_dir.string() + " is " +
                               metrics.at("task").get<std::string>() + ")");
  if (!fs::exists(run_dir / "outputs.csv"))
    throw NotFoundError("run " + run_dir.string() + " has no recorded outputs");
  KernelSnapshot k0;
  k0.theta = load_matrix_csv(run_dir / "theta_epoch0.csv");
  auto eig = sym_eigen(k0.theta);
  k0.eigenvalues = eig.eigenvalues;
  k0.eigenvectors = eig.eigenvectors;
  k0.lambda_max = k0.eigenvalues.front();
  const Vec64 y = load_vector_csv(run_dir / "train_targets.csv");
  const double eta = metrics.at("learning_rate").get<double>();

  std::ifstream in(run_dir / "outputs.csv");
  std::string header;
  std::getline(in, header);
  const DenseMatrix table = read_matrix_csv(in);
  if (table.rows() == 0 || table.cols() != y.size() + 1) throw ParseError("outputs.csv does not match targets.csv");
  const Vec64 f0(table.row(0).begin() + 1, table.row(0).end());
  const auto traj = linearized_trajectory(k0, f0, y, eta, table.rows() - 1);

  std::vector<DivergenceRow> rows;
  const std::size_t n = y.size();
  for (std::size_t t = 0; t < table.rows(); ++t) {
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = table(t, i + 1) - traj.outputs[t][i];
      s2 += d * d;
    }
    rows.push_back({static_cast<int>(table(t, 0)), std::sqrt(s2 / static_cast<double>(n))});
  }
  return rows;
}

// ------------------------------------------------------------- reports

struct ReportRow {
  std::string label;
  std::size_t runs = 0;
  std::map<std::string, std::pair<double, double>> columns;  // mean, sample std
};

struct Report {
  std::string task;
  std::vector<std::string> columns;
  std::vector<ReportRow> rows;
  json reference;  // published values for display, empty when unavailable
};

/// Comparison run directories below each argument: a directory holding
/// metrics.json counts itself, otherwise its immediate children are scanned.
inline std::vector<fs::path> collect_runs(const std::vector<fs::path>& roots) {
  std::vector<fs::path> runs;
  for (const auto& r : roots) {
    if (!fs::is_directory(r)) throw NotFoundError("no run directory " + r.string());
    if (fs::exists(r / "metrics.json")) {
      runs.push_back(r);
      continue;
    }
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(r))
      if (e.is_directory() && fs::exists(e.path() / "metrics.json")) children.push_back(e.path());
    std::sort(children.begin(), children.end());
    runs.insert(runs.end(), children.begin(), children.end());
  }
  if (runs.empty()) throw NotFoundError("no completed runs found");
  return runs;
}

inline fs::path share_dir() {
  if (const char* env = std::getenv("NTKLAB_SHARE_DIR"); env != nullptr && *env != '\0') return env;
#ifdef NTKLAB_SHARE_DIR
  return NTKLAB_SHARE_DIR;
#else
  return "share";
#endif
}

inline Report build_report(const std::vector<fs::path>& roots) {
  const auto runs = collect_runs(roots);
  Report rep;
  std::map<std::string, std::vector<json>> by_label;
  for (const auto& dir : runs) {
    json m = load_json(dir / "metrics.json");
    const std::string task = m.at("task").get<std::string>();
    if (rep.task.empty()) rep.task = task;
    if (task != rep.task)
      throw ConfigError("report mixes task kinds (" + rep.task + " and " + task + " in " + dir.string() + ")");
    by_label[m.at("label").get<std::string>()].push_back(std::move(m));
  }
  rep.columns = rep.task == "regression" ? std::vector<std::string>{"test_mse", "test_r2"}
                                         : std::vector<std::string>{"test_accuracy", "test_cross_entropy"};
  for (const char* k : {"final_lambda_max", "final_frob_deviation", "max_step_drift"}) rep.columns.push_back(k);

  std::vector<std::string> order{"EcrnFull", "MlpBaseline", "LinearizedNtk"};
  for (const auto& [label, _] : by_label)
    if (std::find(order.begin(), order.end(), label) == order.end()) order.push_back(label);
  for (const auto& label : order) {
    const auto it = by_label.find(label);
    if (it == by_label.end()) continue;
    ReportRow row;
    row.label = label;
    row.runs = it->second.size();
    for (const auto& col : rep.columns) {
      std::vector<double> vals;
      for (const auto& m : it->second) {
        const json* src = &m;
        if (col.rfind("final_", 0) == 0 || col == "max_step_drift") {
          if (!m.contains("kernel")) continue;
          src = &m.at("kernel");
        }
        if (src->contains(col) && src->at(col).is_number()) vals.push_back(src->at(col).get<double>());
      }
      if (vals.empty()) continue;
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      const double sd = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
      row.columns[col] = {mean, sd};
    }
    rep.rows.push_back(std::move(row));
  }

  const fs::path ref = share_dir() / "reference_values.json";
  if (fs::exists(ref)) {
    const json all = load_json(ref);
    if (all.contains(rep.task)) {
      rep.reference = all.at(rep.task);
      rep.reference["note"] = all.value("note", "published reference (display only)");
    }
  }
  return rep;
}

inline std::string report_csv(const Report& rep) {
  std::ostringstream os;
  os << "label,runs";
  for (const auto& c : rep.columns) os << ',' << c << "_mean," << c << "_std";
  os << '\n';
  for (const auto& row : rep.rows) {
    os << row.label << ',' << row.runs;
    for (const auto& c : rep.columns) {
      const auto it = row.columns.find(c);
      if (it == row.columns.end()) {
        os << ",,";
      } else {
        os << ',' << format_double(it->second.first) << ',' << format_double(it->second.second);
      }
    }
    os << '\n';
  }
  if (!rep.reference.is_null() && rep.reference.contains("rows")) {
    for (const auto& [label, vals] : rep.reference.at("rows").items()) {
      os << "published reference (display only): " << label << ",";
      for (const auto& c : rep.columns) {
        if (vals.contains(c)) {
          os << ',' << format_double(vals.at(c)[0].get<double>()) << ','
             << format_double(vals.at(c)[1].get<double>());
        } else {
          os << ",,";
        }
      }
      os << '\n';
    }
  }
  return os.str();
}

inline json report_json(const Report& rep) {
  json rows = json::array();
  for (const auto& row : rep.rows) {
    json cols = json::object();
    for (const auto& [c, v] : row.columns) cols[c] = {{"mean", v.first}, {"std", v.second}};
    rows.push_back({{"label", row.label}, {"runs", row.runs}, {"metrics", cols}});
  }
  json j = {{"task", rep.task}, {"columns", rep.columns}, {"rows", rows}};
  if (!rep.reference.is_null()) j["published_reference_display_only"] = rep.reference;
  return j;
}

}  // namespace ntklab
