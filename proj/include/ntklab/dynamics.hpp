#pragma once

// Training and kernel-regime analysis: losses and metrics, the gradient
// descent loop with kernel tracking, the discrete linearized trajectory
// under the initial kernel, per-mode decay fits and the spectral
// generalization bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntklab/activation.hpp"
#include "ntklab/data.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/kernel.hpp"
#include "ntklab/linalg.hpp"
#include "ntklab/model.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ------------------------------------------------------------------ losses

/// (1/n) sum_i ||pred_i - target_i||^2.
inline double mse_loss(const DenseMatrix& pred, const DenseMatrix& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  if (pred.rows() == 0) throw EmptyInputError("mse_loss: no samples");
  double s = 0.0;
  auto p = pred.values();
  auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / static_cast<double>(pred.rows());
}

inline DenseMatrix mse_grad(const DenseMatrix& pred, const DenseMatrix& target) {
  detail::require_same_shape(pred, target, "mse_grad");
  DenseMatrix g = sub(pred, target);
  const double f = 2.0 / static_cast<double>(pred.rows());
  for (double& v : g.values()) v *= f;
  return g;
}

namespace detail {

inline void check_labels(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  if (logits.cols() < 2) throw DimensionError("cross_entropy: need at least 2 classes");
  if (labels.size() != logits.rows()) throw DimensionError("cross_entropy: one label per row required");
  for (std::size_t l : labels)
    if (l >= logits.cols())
      throw ConfigError("cross_entropy: label " + std::to_string(l) + " out of range [0, " +
                        std::to_string(logits.cols()) + ")");
}

// Row softmax with the row maximum subtracted; also returns log-sum-exp.
inline std::pair<Vec64, double> softmax_row(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  Vec64 p(z.size());
  double s = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    p[c] = std::exp(z[c] - m);
    s += p[c];
  }
  for (double& v : p) v /= s;
  return {std::move(p), m + std::log(s)};
}

}  // namespace detail

/// Softmax cross-entropy averaged over rows.
inline double cross_entropy_loss(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  detail::check_labels(logits, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto [p, lse] = detail::softmax_row(logits.row(i));
    s += lse - logits(i, labels[i]);
  }
  return s / static_cast<double>(logits.rows());
}

inline DenseMatrix cross_entropy_grad(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  detail::check_labels(logits, labels);
  DenseMatrix g(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto [p, lse] = detail::softmax_row(logits.row(i));
    for (std::size_t c = 0; c < p.size(); ++c) g(i, c) = (p[c] - (c == labels[i] ? 1.0 : 0.0)) * inv_n;
  }
  return g;
}

/// 1 - SS_res / SS_tot, SS_tot about each target column's mean.
inline double r2_score(const DenseMatrix& pred, const DenseMatrix& target) {
  detail::require_same_shape(pred, target, "r2_score");
  if (target.rows() < 2) throw ConfigError("r2_score: need at least 2 samples");
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t j = 0; j < target.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < target.rows(); ++i) mean += target(i, j);
    mean /= static_cast<double>(target.rows());
    for (std::size_t i = 0; i < target.rows(); ++i) {
      ss_res += (pred(i, j) - target(i, j)) * (pred(i, j) - target(i, j));
      ss_tot += (target(i, j) - mean) * (target(i, j) - mean);
    }
  }
  if (ss_tot == 0.0) throw IllConditionedError("r2_score: target has zero variance");
  return 1.0 - ss_res / ss_tot;
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
inline double accuracy(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw DimensionError("accuracy: one label per row required");
  if (logits.rows() == 0) throw EmptyInputError("accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

// ------------------------------------------------------------- linearized

struct LinearizedTrajectory {
  std::vector<Vec64> outputs;      // outputs[t], t = 0..steps
  std::vector<Vec64> projections;  // residual in the eigenbasis, r(t) = V^T (f(t) - y)
  Vec64 mode_rates;                // 1 - eta (2/n) lambda_i
  bool unstable = false;           // eta (2/n) lambda_max >= 2
};

/// Discrete gradient descent on MSE under a frozen kernel, solved mode by
/// mode: r_i(t+1) = (1 - eta (2/n) lambda_i) r_i(t), f(t) = y + V r(t).
inline LinearizedTrajectory linearized_trajectory(const KernelSnapshot& theta0, std::span<const double> f0,
                                                  std::span<const double> y, double eta, std::size_t steps) {
  const std::size_t n = theta0.eigenvalues.size();
  if (f0.size() != n || y.size() != n) throw DimensionError("linearized_trajectory: length mismatch with kernel");
  if (theta0.eigenvectors.rows() != n) throw DimensionError("linearized_trajectory: snapshot lacks eigenvectors");
  const double gain = eta * 2.0 / static_cast<double>(n);
  LinearizedTrajectory out;
  out.mode_rates.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.mode_rates[i] = 1.0 - gain * theta0.eigenvalues[i];
  out.unstable = gain * theta0.eigenvalues.front() >= 2.0;

  const DenseMatrix& v = theta0.eigenvectors;
  Vec64 resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = f0[i] - y[i];
  Vec64 r(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) r[i] = dot(v.column(i), resid);

  auto reconstruct = [&](const Vec64& proj) {
    Vec64 f(y.begin(), y.end());
    for (std::size_t row = 0; row < n; ++row) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += v(row, i) * proj[i];
      f[row] += s;
    }
    return f;
  };
  out.outputs.reserve(steps + 1);
  out.projections.reserve(steps + 1);
  out.outputs.emplace_back(f0.begin(), f0.end());
  out.projections.push_back(r);
  for (std::size_t t = 1; t <= steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) r[i] *= out.mode_rates[i];
    out.projections.push_back(r);
    out.outputs.push_back(reconstruct(r));
  }
  return out;
}

// --------------------------------------------------------------- training

enum class LossKind { Mse, CrossEntropy };

inline std::string_view to_string(LossKind k) { return k == LossKind::Mse ? "mse" : "cross_entropy"; }

inline LossKind parse_loss(std::string_view s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "cross_entropy" || s == "ce") return LossKind::CrossEntropy;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 10;
  std::size_t batch_size = 0;  // 0 = full batch
  LossKind loss = LossKind::Mse;
  std::size_t snapshot_stride = 1;
  bool stochastic_depth = false;
  std::uint64_t seed = 0;
  /// Abort when the train loss exceeds this multiple of the initial loss.
  double divergence_factor = 1e6;
  /// When set, learning_rate is ignored and replaced by the rate that puts
  /// the top mode of the initial kernel at eta (2/n) lambda_max = lr_gain.
  std::optional<double> lr_gain;

  void validate() const {
    if (lr_gain) {
      if (!(*lr_gain > 0.0) || !std::isfinite(*lr_gain)) throw ConfigError("train: lr_scale must be finite and > 0");
    } else if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("train: learning_rate must be finite and > 0");
    }
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (snapshot_stride == 0) throw ConfigError("train: snapshot_stride must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = kNaN;
  double val_loss = kNaN;
  double metric = kNaN;  // R^2 (regression) or accuracy (classification) on the validation split
  double lambda_max = kNaN;
  double frob_deviation = kNaN;
  double lin_divergence = kNaN;
};

struct ModeRecord {
  int epoch = 0;
  Vec64 projections;  // v_i^T (f - y) over the eigenpairs of the initial kernel
};

/// Kernel drift between consecutive snapshots.
struct DriftRecord {
  int from_epoch = 0;
  int to_epoch = 0;
  double step_drift = 0.0;        // ||Theta_next - Theta_prev||_F
  double deviation_before = 0.0;  // ||Theta_prev - Theta_0||_F
  double deviation_after = 0.0;   // ||Theta_next - Theta_0||_F
  double reference_bound = 0.0;   // max_l alpha_l^2 (sup |act'|)^2, reported only
  bool triangle_holds = true;     // after <= before + step + 1e-9
};

struct TrainingTrace {
  std::vector<EpochRecord> records;
  std::vector<KernelSnapshot> snapshots;
  std::vector<ModeRecord> modes;
  std::vector<DriftRecord> drift;
  std::vector<Vec64> train_outputs;  // per epoch, scalar-output MSE runs only
  Vec64 train_targets;
  double learning_rate = 0.0;
  std::size_t n_train = 0;
};

struct TrainResult {
  TrainingTrace trace;
  ModelParams params;
};

/// Thrown by train() when the loss blows up; carries the partial trace.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(int epoch, std::shared_ptr<const TrainingTrace> partial)
      : NumericError("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch), partial_(std::move(partial)) {}
  int epoch() const { return epoch_; }
  const TrainingTrace& partial() const { return *partial_; }

 private:
  int epoch_;
  std::shared_ptr<const TrainingTrace> partial_;
};

/// Drift reference alpha_l^2 (sup |act'|)^2, maximized over residual blocks.
inline double drift_reference_bound(const ModelConfig& cfg) {
  const double sup = sup_derivative(cfg.activation);
  if (!cfg.residual_enabled || cfg.depth < 2) return sup * sup;
  double a2 = 0.0;
  for (std::size_t l = 1; l < cfg.depth; ++l) a2 = std::max(a2, cfg.alphas[l] * cfg.alphas[l]);
  return a2 * sup * sup;
}

struct SplitView {
  DenseMatrix x;
  DenseMatrix y;
  std::vector<std::size_t> labels;
};

inline SplitView take_split(const Dataset& data, std::span<const std::size_t> idx) {
  SplitView v;
  v.x = data.x.select_rows(idx);
  v.y = data.y.select_rows(idx);
  if (data.task == TaskKind::Classification) v.labels = data.select_labels(idx);
  return v;
}

inline double evaluate_loss(LossKind loss, const DenseMatrix& pred, const SplitView& s) {
  return loss == LossKind::Mse ? mse_loss(pred, s.y) : cross_entropy_loss(pred, s.labels);
}

inline double evaluate_metric(TaskKind task, const DenseMatrix& pred, const SplitView& s) {
  if (s.x.rows() == 0) return kNaN;
  if (task == TaskKind::Classification) return accuracy(pred, s.labels);
  try {
    return r2_score(pred, s.y);
  } catch (const Error&) {
    return kNaN;
  }
}

namespace detail {

inline void check_task(const ModelConfig& cfg, const Dataset& data, LossKind loss) {
  if (data.splits.train.empty()) throw ConfigError("train: dataset has no train split");
  if (data.feature_dim() != cfg.input_dim) throw DimensionError("train: dataset feature count differs from input_dim");
  if (loss == LossKind::Mse) {
    if (data.task != TaskKind::Regression) throw ConfigError("train: MSE loss requires a regression task");
    if (data.y.cols() != cfg.output_dim) throw DimensionError("train: target width differs from output_dim");
  } else {
    if (data.task != TaskKind::Classification)
      throw ConfigError("train: cross-entropy loss requires a classification task");
    if (data.num_classes != cfg.output_dim) throw DimensionError("train: class count differs from output_dim");
  }
}

}  // namespace detail

/// Learning rate placing the top linearized mode at eta (2/n) lambda_max = target_gain.
inline double learning_rate_for_gain(const KernelSnapshot& theta0, double target_gain) {
  const double n = static_cast<double>(theta0.eigenvalues.size());
  if (!(theta0.lambda_max > 0.0)) throw IllConditionedError("learning_rate_for_gain: lambda_max is not positive");
  return target_gain * n / (2.0 * theta0.lambda_max);
}

/// Gradient descent with kernel tracking.
///
/// Epoch 0 records the initial state. Snapshots of the deterministic network
/// are taken at epoch 0, every snapshot_stride epochs and at the final
/// epoch. With stochastic depth one mask is drawn per step and shared by the
/// batch. For scalar MSE runs the trace also holds the initial-kernel mode
/// projections every epoch and, with full batches, the divergence from the
/// linearized trajectory.
inline TrainResult train(const ModelParams& initial, const ModelConfig& cfg, const Dataset& data,
                         const TrainConfig& tcfg) {
  cfg.validate();
  tcfg.validate();
  detail::check_task(cfg, data, tcfg.loss);
  check_params(initial, cfg);

  const SplitView tr = take_split(data, data.splits.train);
  const SplitView va = take_split(data, data.splits.val);
  const std::size_t n = tr.x.rows();
  const bool scalar_mse = tcfg.loss == LossKind::Mse && cfg.output_dim == 1;
  const bool full_batch = tcfg.batch_size == 0 || tcfg.batch_size >= n;
  const auto ones = DepthMask::all_ones(cfg.depth);

  TrainResult res{TrainingTrace{}, initial};
  TrainingTrace& trace = res.trace;
  double eta = tcfg.learning_rate;
  trace.learning_rate = eta;
  trace.n_train = n;
  ModelParams& params = res.params;

  SeededRng mask_rng(derive_seed(tcfg.seed, "mask"));
  SeededRng shuffle_rng(derive_seed(tcfg.seed, "shuffle"));
  const double drift_ref = drift_reference_bound(cfg);

  std::optional<LinearizedTrajectory> lin;
  double initial_loss = 0.0;

  auto record_epoch = [&](int epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const DenseMatrix pred = predict(params, cfg, tr.x);
    rec.train_loss = evaluate_loss(tcfg.loss, pred, tr);
    if (va.x.rows() > 0) {
      const DenseMatrix vpred = predict(params, cfg, va.x);
      rec.val_loss = evaluate_loss(tcfg.loss, vpred, va);
      rec.metric = evaluate_metric(data.task, vpred, va);
    }
    const bool snap_now = epoch == 0 || epoch % static_cast<int>(tcfg.snapshot_stride) == 0 ||
                          epoch == static_cast<int>(tcfg.epochs);
    if (snap_now) {
      KernelSnapshot s = compute_ntk(params, cfg, tr.x, NtkOptions{epoch, std::nullopt});
      if (!trace.snapshots.empty()) {
        const KernelSnapshot& prev = trace.snapshots.back();
        s.frob_deviation = kernel_deviation(s, trace.snapshots.front()).frob;
        DriftRecord d;
        d.from_epoch = prev.epoch;
        d.to_epoch = epoch;
        d.step_drift = frobenius_norm(sub(s.theta, prev.theta));
        d.deviation_before = prev.frob_deviation;
        d.deviation_after = s.frob_deviation;
        d.reference_bound = drift_ref;
        d.triangle_holds = d.deviation_after <= d.deviation_before + d.step_drift + 1e-9;
        trace.drift.push_back(d);
      }
      if (epoch == 0 && tcfg.lr_gain) {
        eta = learning_rate_for_gain(s, *tcfg.lr_gain);
        trace.learning_rate = eta;
      }
      rec.lambda_max = s.lambda_max;
      rec.frob_deviation = s.frob_deviation;
      trace.snapshots.push_back(std::move(s));
    }
    if (scalar_mse) {
      const Vec64 f(pred.values().begin(), pred.values().end());
      const KernelSnapshot& k0 = trace.snapshots.front();
      ModeRecord mr;
      mr.epoch = epoch;
      Vec64 resid(n);
      for (std::size_t i = 0; i < n; ++i) resid[i] = f[i] - tr.y(i, 0);
      mr.projections.resize(n);
      for (std::size_t i = 0; i < n; ++i) mr.projections[i] = dot(k0.eigenvectors.column(i), resid);
      trace.modes.push_back(std::move(mr));
      if (epoch == 0) {
        trace.train_targets = tr.y.column(0);
        if (full_batch) lin = linearized_trajectory(k0, f, trace.train_targets, eta, tcfg.epochs);
      }
      if (lin) {
        const Vec64& fl = lin->outputs.at(static_cast<std::size_t>(epoch));
        double s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) s2 += (f[i] - fl[i]) * (f[i] - fl[i]);
        rec.lin_divergence = std::sqrt(s2 / static_cast<double>(n));
      }
      trace.train_outputs.push_back(f);
    }
    trace.records.push_back(rec);
    return rec.train_loss;
  };

  initial_loss = record_epoch(0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = full_batch ? n : tcfg.batch_size;

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    if (!full_batch) shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      SplitView mini;
      if (!full_batch) {
        std::vector<std::size_t> global;
        for (std::size_t i : idx) global.push_back(data.splits.train[i]);
        mini = take_split(data, global);
      }
      const SplitView& bt = full_batch ? tr : mini;
      const DepthMask mask = tcfg.stochastic_depth ? sample_depth_mask(cfg, mask_rng) : ones;
      ForwardTrace ft;
      try {
        ft = forward_batch(params, cfg, bt.x, mask);
      } catch (const NumericError&) {
        throw TrainingDiverged(static_cast<int>(epoch), std::make_shared<TrainingTrace>(trace));
      }
      const DenseMatrix seed =
          tcfg.loss == LossKind::Mse ? mse_grad(ft.output, bt.y) : cross_entropy_grad(ft.output, bt.labels);
      const Vec64 g = parameter_gradient(params, cfg, ft, seed);
      for (std::size_t i = 0; i < g.size(); ++i) params.values[i] -= eta * g[i];
    }
    double loss;
    try {
      loss = record_epoch(static_cast<int>(epoch));
    } catch (const NumericError&) {
      throw TrainingDiverged(static_cast<int>(epoch), std::make_shared<TrainingTrace>(trace));
    }
    if (!std::isfinite(loss) || loss > tcfg.divergence_factor * initial_loss)
      throw TrainingDiverged(static_cast<int>(epoch), std::make_shared<TrainingTrace>(trace));
  }
  return res;
}

/// Frozen-kernel predictions on query points during linearized training:
/// f_q(t+1) = f_q(t) - eta Theta(Xq, X) (2/n)(f(t) - y).
inline std::vector<Vec64> linearized_predictions(const DenseMatrix& cross_kernel, std::span<const double> fq0,
                                                 const LinearizedTrajectory& train_traj, std::span<const double> y,
                                                 double eta) {
  const std::size_t n = y.size();
  const std::size_t q = fq0.size();
  if (cross_kernel.rows() != q || cross_kernel.cols() != n)
    throw DimensionError("linearized_predictions: cross kernel shape mismatch");
  const double gain = eta * 2.0 / static_cast<double>(n);
  std::vector<Vec64> out;
  out.emplace_back(fq0.begin(), fq0.end());
  for (std::size_t t = 0; t + 1 < train_traj.outputs.size(); ++t) {
    const Vec64& f = train_traj.outputs[t];
    Vec64 resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = f[i] - y[i];
    Vec64 next = out.back();
    for (std::size_t r = 0; r < q; ++r) next[r] -= gain * dot(cross_kernel.row(r), resid);
    out.push_back(std::move(next));
  }
  return out;
}

// ------------------------------------------------------------ mode decay

struct ModeFit {
  std::size_t mode = 0;
  double eigenvalue = 0.0;
  double predicted_rate = kNaN;  // 1 - eta (2/n) lambda
  double fitted_rate = kNaN;     // exp(slope of log|r_i(t)|)
  double relative_gap = kNaN;    // |fitted - |predicted|| / |predicted|
  double predicted_exponent = kNaN;  // -log|predicted|
  double fitted_exponent = kNaN;     // -slope
  double exponent_gap = kNaN;        // relative gap of the exponents
  std::size_t points = 0;
  bool skipped = false;
};

/// Least-squares fit of log|r_i(t)| against epoch for every mode of the
/// initial kernel. A mode's series stops at its first |r| <= 1e-12; modes
/// with |r_i(0)| < 1e-12 or fewer than two points are skipped.
/// `last_epoch` limits the fit window.
inline std::vector<ModeFit> mode_decay_analysis(const std::vector<ModeRecord>& modes, const KernelSnapshot& theta0,
                                                double eta, std::optional<int> last_epoch = std::nullopt) {
  if (modes.size() < 3) throw ConfigError("mode_decay_analysis: need at least 3 records, have " + std::to_string(modes.size()));
  const std::size_t n = theta0.eigenvalues.size();
  const double gain = eta * 2.0 / static_cast<double>(n);
  std::vector<ModeFit> fits;
  for (std::size_t i = 0; i < n; ++i) {
    ModeFit f;
    f.mode = i;
    f.eigenvalue = theta0.eigenvalues[i];
    f.predicted_rate = 1.0 - gain * f.eigenvalue;
    f.predicted_exponent = -std::log(std::abs(f.predicted_rate));
    std::vector<double> ts, ls;
    if (std::abs(modes.front().projections.at(i)) >= 1e-12) {
      for (const auto& rec : modes) {
        if (last_epoch && rec.epoch > *last_epoch) break;
        const double r = std::abs(rec.projections.at(i));
        if (r <= 1e-12) break;
        ts.push_back(static_cast<double>(rec.epoch));
        ls.push_back(std::log(r));
      }
    }
    f.points = ts.size();
    if (ts.size() < 2) {
      f.skipped = true;
      fits.push_back(f);
      continue;
    }
    const double m = static_cast<double>(ts.size());
    const double tm = std::accumulate(ts.begin(), ts.end(), 0.0) / m;
    const double lm = std::accumulate(ls.begin(), ls.end(), 0.0) / m;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
      sxy += (ts[k] - tm) * (ls[k] - lm);
      sxx += (ts[k] - tm) * (ts[k] - tm);
    }
    const double slope = sxy / sxx;
    f.fitted_rate = std::exp(slope);
    f.fitted_exponent = -slope;
    f.relative_gap = std::abs(f.fitted_rate - std::abs(f.predicted_rate)) / std::abs(f.predicted_rate);
    if (f.predicted_exponent != 0.0)
      f.exponent_gap = std::abs(f.fitted_exponent - f.predicted_exponent) / std::abs(f.predicted_exponent);
    fits.push_back(f);
  }
  return fits;
}

inline std::vector<ModeFit> mode_decay_analysis(const TrainingTrace& trace, std::optional<int> last_epoch = std::nullopt) {
  if (trace.snapshots.empty()) throw ConfigError("mode_decay_analysis: trace has no snapshots");
  return mode_decay_analysis(trace.modes, trace.snapshots.front(), trace.learning_rate, last_epoch);
}

// -------------------------------------------------------------- the bound

struct GeneralizationBound {
  double value = 0.0;
  double epsilon = 0.0;
  double lambda_floor = 0.0;
  std::size_t floored_modes = 0;
};

/// sum_i r_i^2 / max(lambda_i, floor) + epsilon with r = V^T (f - y);
/// the floor defaults to 1e-8 lambda_max.
inline GeneralizationBound generalization_bound(const KernelSnapshot& theta, std::span<const double> f,
                                                std::span<const double> y, double epsilon,
                                                std::optional<double> lambda_floor = std::nullopt) {
  const std::size_t n = theta.eigenvalues.size();
  if (f.size() != n || y.size() != n) throw DimensionError("generalization_bound: length mismatch with kernel");
  if (!(epsilon >= 0.0)) throw ConfigError("generalization_bound: epsilon must be >= 0");
  GeneralizationBound b;
  b.epsilon = epsilon;
  b.lambda_floor = lambda_floor.value_or(1e-8 * theta.eigenvalues.front());
  if (!(b.lambda_floor > 0.0) || std::all_of(theta.eigenvalues.begin(), theta.eigenvalues.end(),
                                             [&](double l) { return l < b.lambda_floor; }))
    throw IllConditionedError("generalization_bound: every eigenvalue is below the floor");
  Vec64 resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = f[i] - y[i];
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = dot(theta.eigenvectors.column(i), resid);
    double lam = theta.eigenvalues[i];
    if (lam < b.lambda_floor) {
      lam = b.lambda_floor;
      ++b.floored_modes;
    }
    s += r * r / lam;
  }
  b.value = s + epsilon;
  return b;
}

}  // namespace ntklab
