#pragma once

// Datasets: synthetic sinusoid regression and Gaussian-mixture
// classification generators, train-split standardization, stratified
// 70/15/15 splitting and CSV ingestion/export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ntklab/errors.hpp"
#include "ntklab/hashing.hpp"
#include "ntklab/linalg.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

enum class TaskKind { Regression, Classification };

inline std::string_view to_string(TaskKind t) {
  return t == TaskKind::Regression ? "regression" : "classification";
}

inline TaskKind parse_task(std::string_view s) {
  if (s == "regression") return TaskKind::Regression;
  if (s == "classification") return TaskKind::Classification;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;

  bool empty() const { return train.empty() && val.empty() && test.empty(); }
};

struct Dataset {
  DenseMatrix x;  // n x d
  DenseMatrix y;  // n x k targets; for classification the label as a double, n x 1
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  TaskKind task = TaskKind::Regression;
  Splits splits;
  nlohmann::json provenance;

  std::size_t size() const { return x.rows(); }
  std::size_t feature_dim() const { return x.cols(); }

  std::vector<std::size_t> select_labels(std::span<const std::size_t> idx) const {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels.at(i));
    return out;
  }
};

// ---------------------------------------------------------------- sinusoid

/// Mode parameters of y = sum_k a_k sin(w_k . x + phi_k).
struct SinusoidModes {
  Vec64 amplitudes;
  DenseMatrix frequencies;  // K x d
  Vec64 phases;
};

struct SinusoidSpec {
  std::size_t d = 1;
  std::size_t modes = 1;
  double noise_std = 0.0;
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::optional<Vec64> amplitude_override;

  void validate() const {
    if (d == 0) throw ConfigError("sinusoid: d must be >= 1");
    if (modes == 0) throw ConfigError("sinusoid: modes must be >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("sinusoid: noise_std must be >= 0");
    if (amplitude_override && amplitude_override->size() != modes)
      throw ConfigError("sinusoid: amplitude override needs one value per mode");
  }
};

/// Noise-free targets for the rows of X.
inline Vec64 sinusoid_targets(const DenseMatrix& x, const SinusoidModes& m) {
  Vec64 y(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.amplitudes.size(); ++k)
      s += m.amplitudes[k] * std::sin(dot(m.frequencies.row(k), x.row(i)) + m.phases[k]);
    y[i] = s;
  }
  return y;
}

inline SinusoidModes sinusoid_modes_from(const nlohmann::json& provenance) {
  SinusoidModes m;
  m.amplitudes = provenance.at("amplitudes").get<Vec64>();
  const auto rows = provenance.at("frequencies").get<std::vector<Vec64>>();
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  m.frequencies = DenseMatrix(rows.size(), d);
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy(rows[k].begin(), rows[k].end(), m.frequencies.row(k).begin());
  m.phases = provenance.at("phases").get<Vec64>();
  return m;
}

/// x ~ N(0, I), a_k ~ U(0,1), w_k ~ N(0, I), phi_k ~ U(0, 2 pi), noise ~ N(0, s^2).
/// Mode parameters are drawn first, then each sample's features and noise.
inline Dataset gen_sinusoid(const SinusoidSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  SinusoidModes m{Vec64(spec.modes), DenseMatrix(spec.modes, spec.d), Vec64(spec.modes)};
  for (std::size_t k = 0; k < spec.modes; ++k) {
    m.amplitudes[k] = rng.uniform();
    for (std::size_t j = 0; j < spec.d; ++j) m.frequencies(k, j) = rng.normal();
    m.phases[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  if (spec.amplitude_override) m.amplitudes = *spec.amplitude_override;

  Dataset ds;
  ds.task = TaskKind::Regression;
  ds.x = DenseMatrix(spec.n, spec.d);
  Vec64 noise(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (double& v : ds.x.row(i)) v = rng.normal();
    noise[i] = rng.normal(0.0, spec.noise_std);
  }
  const Vec64 clean = sinusoid_targets(ds.x, m);
  ds.y = DenseMatrix(spec.n, 1);
  for (std::size_t i = 0; i < spec.n; ++i) ds.y(i, 0) = clean[i] + noise[i];

  std::vector<Vec64> freq_rows;
  for (std::size_t k = 0; k < spec.modes; ++k) freq_rows.emplace_back(m.frequencies.row(k).begin(), m.frequencies.row(k).end());
  ds.provenance = {{"generator", "sinusoid"}, {"d", spec.d},           {"modes", spec.modes},
                   {"n", spec.n},             {"noise_std", spec.noise_std}, {"seed", spec.seed},
                   {"amplitudes", m.amplitudes}, {"frequencies", freq_rows}, {"phases", m.phases}};
  return ds;
}

// --------------------------------------------------------------------- GMM

/// Mixture with diagonal covariances.
struct GmmSpec {
  std::size_t d = 1;
  std::size_t classes = 2;
  Vec64 weights;
  DenseMatrix means;      // classes x d
  DenseMatrix variances;  // classes x d, diagonal covariance entries
  std::size_t n = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (d == 0 || classes == 0) throw ConfigError("gmm: d and classes must be >= 1");
    if (weights.size() != classes) throw ConfigError("gmm: need one weight per class");
    double total = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw ConfigError("gmm: weights must be positive");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("gmm: weights must sum to 1");
    if (means.rows() != classes || means.cols() != d) throw ConfigError("gmm: means must be classes x d");
    if (variances.rows() != classes || variances.cols() != d)
      throw ConfigError("gmm: variances must be classes x d");
    for (double v : variances.values())
      if (!(v >= 0.0)) throw ConfigError("gmm: variances must be >= 0");
  }
};

/// Equal weights, unit variances, means drawn from N(0, separation^2 I).
inline GmmSpec make_gmm_spec(std::size_t d, std::size_t classes, double separation, std::size_t n,
                             std::uint64_t seed) {
  GmmSpec s;
  s.d = d;
  s.classes = classes;
  s.n = n;
  s.seed = seed;
  s.weights.assign(classes, 1.0 / static_cast<double>(classes));
  s.means = DenseMatrix(classes, d);
  s.variances = DenseMatrix(classes, d, 1.0);
  SeededRng rng(derive_seed(seed, "gmm-means"));
  for (double& v : s.means.values()) v = rng.normal(0.0, separation);
  return s;
}

inline Dataset gen_gmm(const GmmSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  Vec64 cumulative(spec.classes);
  std::partial_sum(spec.weights.begin(), spec.weights.end(), cumulative.begin());

  Dataset ds;
  ds.task = TaskKind::Classification;
  ds.num_classes = spec.classes;
  ds.x = DenseMatrix(spec.n, spec.d);
  ds.y = DenseMatrix(spec.n, 1);
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double u = rng.uniform() * cumulative.back();
    std::size_t c = 0;
    while (c + 1 < spec.classes && u >= cumulative[c]) ++c;
    for (std::size_t j = 0; j < spec.d; ++j)
      ds.x(i, j) = spec.means(c, j) + std::sqrt(spec.variances(c, j)) * rng.normal();
    ds.labels[i] = c;
    ds.y(i, 0) = static_cast<double>(c);
  }
  std::vector<Vec64> means, vars;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    means.emplace_back(spec.means.row(c).begin(), spec.means.row(c).end());
    vars.emplace_back(spec.variances.row(c).begin(), spec.variances.row(c).end());
  }
  ds.provenance = {{"generator", "gmm"}, {"d", spec.d},         {"classes", spec.classes},
                   {"n", spec.n},        {"seed", spec.seed},   {"weights", spec.weights},
                   {"means", means},     {"variances", vars}};
  return ds;
}

// ---------------------------------------------------------- standardization

struct ScalerParams {
  Vec64 mean;
  Vec64 stddev;  // 1 for features whose train-split std is below 1e-12

  DenseMatrix transform(const DenseMatrix& x) const {
    DenseMatrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / stddev[j];
    return out;
  }

  DenseMatrix inverse(const DenseMatrix& z) const {
    DenseMatrix out = z;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = z(i, j) * stddev[j] + mean[j];
    return out;
  }
};

/// Population mean/std per feature over the train split (the whole set when
/// no split exists yet), applied to every row.
inline std::pair<Dataset, ScalerParams> standardize(const Dataset& data) {
  std::vector<std::size_t> fit_rows = data.splits.train;
  if (data.splits.empty()) {
    fit_rows.resize(data.size());
    std::iota(fit_rows.begin(), fit_rows.end(), 0);
  }
  if (fit_rows.empty()) throw EmptyInputError("standardize: train split is empty");
  const std::size_t d = data.feature_dim();
  ScalerParams sp{Vec64(d, 0.0), Vec64(d, 0.0)};
  const double m = static_cast<double>(fit_rows.size());
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i : fit_rows) s += data.x(i, j);
    const double mu = s / m;
    double ss = 0.0;
    for (std::size_t i : fit_rows) ss += (data.x(i, j) - mu) * (data.x(i, j) - mu);
    const double sd = std::sqrt(ss / m);
    sp.mean[j] = mu;
    sp.stddev[j] = sd < 1e-12 ? 1.0 : sd;
  }
  Dataset out = data;
  out.x = sp.transform(data.x);
  return {std::move(out), std::move(sp)};
}

// ---------------------------------------------------------------- splitting

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

namespace detail {

// Largest-remainder allocation of `target` slots across strata proportional
// to their sizes, never exceeding each stratum's remaining capacity.
inline std::vector<std::size_t> allocate(const std::vector<std::size_t>& sizes, std::vector<std::size_t>& capacity,
                                         double fraction, std::size_t target) {
  const std::size_t g = sizes.size();
  std::vector<std::size_t> alloc(g, 0);
  std::vector<double> remainder(g, 0.0);
  std::size_t placed = 0;
  for (std::size_t s = 0; s < g; ++s) {
    const double quota = fraction * static_cast<double>(sizes[s]);
    alloc[s] = std::min(capacity[s], static_cast<std::size_t>(std::floor(quota)));
    remainder[s] = quota - static_cast<double>(alloc[s]);
    placed += alloc[s];
  }
  std::vector<std::size_t> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  while (placed < target) {
    bool progress = false;
    for (std::size_t s : order) {
      if (placed == target) break;
      if (alloc[s] < capacity[s]) {
        ++alloc[s];
        ++placed;
        progress = true;
      }
    }
    if (!progress) break;
  }
  while (placed > target) {  // floors overshoot only if target was rounded down
    for (auto it = order.rbegin(); it != order.rend() && placed > target; ++it)
      if (alloc[*it] > 0) {
        --alloc[*it];
        --placed;
      }
  }
  for (std::size_t s = 0; s < g; ++s) capacity[s] -= alloc[s];
  return alloc;
}

}  // namespace detail

/// Stratified 70/15/15 split. Classification strata are labels; regression
/// strata are 10 quantile bins of the first target column. Classes with
/// fewer than 3 samples are pooled into one unstratified group.
inline Dataset split(const Dataset& data, SplitFractions fr = {}, bool stratify = true, std::uint64_t seed = 0) {
  const std::size_t n = data.size();
  if (n < 10) throw ConfigError("split: need at least 10 samples, got " + std::to_string(n));
  if (fr.train < 0 || fr.val < 0 || fr.test < 0 || std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9)
    throw ConfigError("split: fractions must be non-negative and sum to 1");

  Splits out;
  std::vector<std::vector<std::size_t>> strata;
  if (!stratify) {
    strata.emplace_back(n);
    std::iota(strata[0].begin(), strata[0].end(), 0);
  } else if (data.task == TaskKind::Classification) {
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < n; ++i) by_label[data.labels.at(i)].push_back(i);
    std::vector<std::size_t> pooled;
    for (auto& [label, idx] : by_label) {
      if (idx.size() < 3) {
        out.warnings.push_back("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                               " samples; split unstratified");
        pooled.insert(pooled.end(), idx.begin(), idx.end());
      } else {
        strata.push_back(std::move(idx));
      }
    }
    if (!pooled.empty()) {
      std::sort(pooled.begin(), pooled.end());
      strata.push_back(std::move(pooled));
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.y(a, 0) < data.y(b, 0); });
    constexpr std::size_t kBins = 10;
    strata.assign(kBins, {});
    for (std::size_t r = 0; r < n; ++r) strata[r * kBins / n].push_back(order[r]);
    std::erase_if(strata, [](const auto& s) { return s.empty(); });
    for (auto& s : strata) std::sort(s.begin(), s.end());
  }

  SeededRng rng(seed);
  for (auto& s : strata) rng.shuffle(s.begin(), s.end());

  const auto n_val = static_cast<std::size_t>(std::llround(fr.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(fr.test * static_cast<double>(n)));
  std::vector<std::size_t> sizes, capacity;
  for (const auto& s : strata) sizes.push_back(s.size());
  capacity = sizes;
  const auto val_alloc = detail::allocate(sizes, capacity, fr.val, n_val);
  const auto test_alloc = detail::allocate(sizes, capacity, fr.test, n_test);

  for (std::size_t g = 0; g < strata.size(); ++g) {
    const auto& s = strata[g];
    std::size_t pos = 0;
    for (std::size_t k = 0; k < val_alloc[g]; ++k) out.val.push_back(s[pos++]);
    for (std::size_t k = 0; k < test_alloc[g]; ++k) out.test.push_back(s[pos++]);
    while (pos < s.size()) out.train.push_back(s[pos++]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());

  Dataset result = data;
  result.splits = std::move(out);
  return result;
}

// ---------------------------------------------------------------------- CSV

struct CsvSchema {
  /// Column name (requires a header) or decimal index; empty means last column.
  std::string target_column;
  TaskKind task = TaskKind::Regression;
  bool has_header = true;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses a comma-separated table from text; no split or scaling applied.
inline Dataset parse_csv_dataset(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    for (auto& f : fields) f = detail::trim(f);
    if (schema.has_header && header.empty()) {
      header = std::move(fields);
      width = header.size();
      continue;
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(width) + " fields, found " +
                       std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
    row_lines.push_back(lineno);
  }
  if (rows.empty()) throw EmptyInputError("csv: no data rows");
  if (width < 2) throw ParseError("csv: need at least one feature column and a target column");

  std::size_t target = width - 1;
  if (!schema.target_column.empty()) {
    const auto it = std::find(header.begin(), header.end(), schema.target_column);
    if (it != header.end()) {
      target = static_cast<std::size_t>(it - header.begin());
    } else {
      try {
        std::size_t used = 0;
        target = std::stoul(schema.target_column, &used);
        if (used != schema.target_column.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("csv: target column '" + schema.target_column + "' not found");
      }
      if (target >= width) throw ConfigError("csv: target column index out of range");
    }
  }

  Dataset ds;
  ds.task = schema.task;
  const std::size_t n = rows.size();
  ds.x = DenseMatrix(n, width - 1);
  ds.y = DenseMatrix(n, 1);
  std::map<std::string, std::size_t> label_ids;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t col = 0;
    for (std::size_t j = 0; j < width; ++j) {
      if (j == target) continue;
      ds.x(i, col++) = detail::parse_double(rows[i][j], row_lines[i]);
    }
    const std::string& t = rows[i][target];
    if (schema.task == TaskKind::Regression) {
      ds.y(i, 0) = detail::parse_double(t, row_lines[i]);
    } else {
      const auto [it, inserted] = label_ids.try_emplace(t, label_ids.size());
      ds.labels.push_back(it->second);
      ds.y(i, 0) = static_cast<double>(it->second);
    }
  }
  if (schema.task == TaskKind::Classification) {
    ds.num_classes = label_ids.size();
    std::vector<std::string> names(label_ids.size());
    for (const auto& [name, id] : label_ids) names[id] = name;
    ds.provenance["label_names"] = names;
  }
  ds.provenance["sha256"] = sha256_hex(text);
  return ds;
}

inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  if (!std::filesystem::exists(path)) throw NotFoundError("csv: no such file " + path.string());
  const std::string text = read_file(path);
  if (detail::trim(text).empty()) throw EmptyInputError("csv: file " + path.string() + " is empty");
  Dataset ds = parse_csv_dataset(text, schema);
  ds.provenance["source"] = path.string();
  return ds;
}

/// Header `f0,...,f{d-1},target`, 17 significant digits.
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) os << 'f' << j << ',';
  os << "target\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.feature_dim(); ++j) os << format_double(ds.x(i, j)) << ',';
    if (ds.task == TaskKind::Classification) {
      os << ds.labels.at(i);
    } else {
      os << format_double(ds.y(i, 0));
    }
    os << '\n';
  }
}

inline nlohmann::json dataset_metadata(const Dataset& ds) {
  nlohmann::json meta = {{"task", to_string(ds.task)},
                         {"n", ds.size()},
                         {"d", ds.feature_dim()},
                         {"provenance", ds.provenance}};
  if (ds.task == TaskKind::Classification) meta["classes"] = ds.num_classes;
  return meta;
}

/// Writes `<stem>.csv` and `<stem>.meta.json`; returns the CSV path.
inline std::filesystem::path save_dataset(const std::filesystem::path& csv_path, const Dataset& ds) {
  {
    std::ofstream os(csv_path, std::ios::binary);
    if (!os) throw Error("cannot write " + csv_path.string());
    write_dataset_csv(os, ds);
  }
  auto meta_path = csv_path;
  meta_path.replace_extension(".meta.json");
  nlohmann::json meta = dataset_metadata(ds);
  meta["sha256"] = sha256_file(csv_path);
  std::ofstream ms(meta_path, std::ios::binary);
  ms << meta.dump(2) << '\n';
  return csv_path;
}

}  // namespace ntklab
