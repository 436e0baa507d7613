#pragma once

// Empirical neural tangent kernel.
//
// Theta(x_i, x_j) = sum_c <d f_c(x_i)/d theta, d f_c(x_j)/d theta>, i.e. the
// per-output Gram matrices summed over output coordinates. Every parameter
// block is a dense layer z = W u + b, whose Jacobian factorizes as
// delta (x) [u, 1], so its kernel contribution is
//
//   C_b(i, j) = s_b^2 (u_i . u_j + 1) sum_c delta_ci . delta_cj
//
// with s_b the branch multiplier (m_l alpha_l for residual blocks). That is
// exact and costs O(n^2 width) per block instead of O(n^2 P). The
// materialized path (Theta = J J^T over the full n x kP Jacobian) is kept as
// an independent route.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ntklab/errors.hpp"
#include "ntklab/linalg.hpp"
#include "ntklab/model.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

struct KernelSnapshot {
  int epoch = 0;
  DenseMatrix theta;
  Vec64 eigenvalues;  // descending
  DenseMatrix eigenvectors;
  double frob_deviation = 0.0;
  double lambda_max = 0.0;
  std::vector<DenseMatrix> layer_contributions;  // one per parameter block, may be empty
};

/// Per-layer contributions are retained up to this many samples.
inline constexpr std::size_t kLayerContributionLimit = 512;

namespace detail {

// Pairwise row products A_i . B_j; exactly symmetric when a and b alias.
inline DenseMatrix row_products(const DenseMatrix& a, const DenseMatrix& b) {
  if (&a == &b) return gram_rows(a);
  if (a.cols() != b.cols()) throw DimensionError("row_products: width mismatch");
  DenseMatrix out(a.rows(), b.rows());
  parallel_for(0, a.rows(), [&](std::size_t i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  });
  return out;
}

struct KernelFactors {
  ForwardTrace trace;
  std::vector<BlockDeltas> per_output;  // one backward pass per output coordinate
};

inline KernelFactors kernel_factors(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& x,
                                    const DepthMask& mask) {
  KernelFactors f;
  f.trace = forward_batch(params, cfg, x, mask);
  for (std::size_t c = 0; c < cfg.output_dim; ++c) {
    DenseMatrix seed(x.rows(), cfg.output_dim);
    for (std::size_t i = 0; i < x.rows(); ++i) seed(i, c) = 1.0;
    f.per_output.push_back(backward_deltas(params, cfg, f.trace, seed));
  }
  return f;
}

inline std::vector<DenseMatrix> block_contributions(const KernelFactors& a, const KernelFactors& b,
                                                    std::size_t blocks, bool same) {
  std::vector<DenseMatrix> out;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const double s = a.per_output.front().scale[blk];
    const double sb = b.per_output.front().scale[blk];
    const DenseMatrix& ua = a.trace.block_input(blk);
    DenseMatrix inputs = same ? row_products(ua, ua) : row_products(ua, b.trace.block_input(blk));
    DenseMatrix deltas(inputs.rows(), inputs.cols());
    for (std::size_t c = 0; c < a.per_output.size(); ++c) {
      const DenseMatrix& da = a.per_output[c].unscaled[blk];
      add_in_place(deltas, same ? row_products(da, da) : row_products(da, b.per_output[c].unscaled[blk]));
    }
    DenseMatrix contrib(inputs.rows(), inputs.cols());
    const double factor = s * sb;
    for (std::size_t i = 0; i < contrib.rows(); ++i)
      for (std::size_t j = 0; j < contrib.cols(); ++j)
        contrib(i, j) = factor == 0.0 ? 0.0 : factor * deltas(i, j) * (inputs(i, j) + 1.0);
    out.push_back(std::move(contrib));
  }
  return out;
}

}  // namespace detail

/// One n x n contribution per parameter block (entry, residual blocks,
/// head). Their running sums realize the layerwise kernel recursion.
inline std::vector<DenseMatrix> layerwise_decomposition(const ModelParams& params, const ModelConfig& cfg,
                                                        const DenseMatrix& x, const DepthMask& mask) {
  if (x.rows() == 0) throw EmptyInputError("kernel: no samples");
  const auto f = detail::kernel_factors(params, cfg, x, mask);
  return detail::block_contributions(f, f, params.layout.block_count(), true);
}

inline std::vector<DenseMatrix> layerwise_decomposition(const ModelParams& params, const ModelConfig& cfg,
                                                        const DenseMatrix& x) {
  return layerwise_decomposition(params, cfg, x, DepthMask::all_ones(cfg.depth));
}

inline DenseMatrix sum_contributions(const std::vector<DenseMatrix>& parts) {
  DenseMatrix total(parts.front().rows(), parts.front().cols());
  for (const auto& p : parts) add_in_place(total, p);
  return total;
}

/// Kernel between two sample sets, Theta(Xa, Xb), deterministic network.
inline DenseMatrix compute_cross_ntk(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& xa,
                                     const DenseMatrix& xb) {
  const auto ones = DepthMask::all_ones(cfg.depth);
  const auto fa = detail::kernel_factors(params, cfg, xa, ones);
  const auto fb = detail::kernel_factors(params, cfg, xb, ones);
  return sum_contributions(detail::block_contributions(fa, fb, params.layout.block_count(), false));
}

struct NtkOptions {
  int epoch = 0;
  /// Keep per-block contributions; defaults to n <= kLayerContributionLimit.
  std::optional<bool> keep_layers;
};

/// Kernel snapshot of the deterministic (all-ones mask) network on X.
inline KernelSnapshot compute_ntk(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& x,
                                  const NtkOptions& opts = {}) {
  if (x.rows() == 0) throw EmptyInputError("compute_ntk: no samples");
  auto parts = layerwise_decomposition(params, cfg, x);
  KernelSnapshot snap;
  snap.epoch = opts.epoch;
  snap.theta = sum_contributions(parts);
  auto eig = sym_eigen(snap.theta);
  snap.eigenvalues = std::move(eig.eigenvalues);
  snap.eigenvectors = std::move(eig.eigenvectors);
  snap.lambda_max = snap.eigenvalues.front();
  if (opts.keep_layers.value_or(x.rows() <= kLayerContributionLimit)) snap.layer_contributions = std::move(parts);
  return snap;
}

/// Full stacked Jacobian: row i is [d f_0(x_i)/d theta, ..., d f_{k-1}(x_i)/d theta].
inline DenseMatrix jacobian_matrix(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& x,
                                   const DepthMask& mask) {
  const std::size_t p = params.layout.total();
  DenseMatrix jac(x.rows(), cfg.output_dim * p);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const DenseMatrix ji = jacobian(params, cfg, x.row(i), mask);
    auto dst = jac.row(i);
    std::copy(ji.values().begin(), ji.values().end(), dst.begin());
  }
  return jac;
}

/// Theta = J J^T through the materialized Jacobian.
inline DenseMatrix compute_ntk_materialized(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& x) {
  if (x.rows() == 0) throw EmptyInputError("compute_ntk: no samples");
  return gram_rows(jacobian_matrix(params, cfg, x, DepthMask::all_ones(cfg.depth)));
}

/// Jacobian of block b with its branch multiplier factored out, stacked over
/// outputs: n x (k * block size). The block's kernel contribution is
/// branch_scale^2 * J J^T.
inline DenseMatrix block_jacobian(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& x,
                                  std::size_t block, const DepthMask& mask) {
  const auto f = detail::kernel_factors(params, cfg, x, mask);
  const auto& blk = params.layout.block(block);
  const DenseMatrix& u = f.trace.block_input(block);
  DenseMatrix jac(x.rows(), cfg.output_dim * blk.size());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = jac.row(i);
    for (std::size_t c = 0; c < cfg.output_dim; ++c) {
      const DenseMatrix& d = f.per_output[c].unscaled[block];
      double* dst = row.data() + c * blk.size();
      for (std::size_t r = 0; r < blk.rows; ++r)
        for (std::size_t q = 0; q < blk.cols; ++q) dst[r * blk.cols + q] = d(i, r) * u(i, q);
      for (std::size_t r = 0; r < blk.rows; ++r) dst[blk.weight_size() + r] = d(i, r);
    }
  }
  return jac;
}

struct KernelDeviation {
  DenseMatrix delta;
  double frob = 0.0;
};

/// Theta_t - Theta_0 and its Frobenius norm.
inline KernelDeviation kernel_deviation(const KernelSnapshot& current, const KernelSnapshot& initial) {
  KernelDeviation d;
  d.delta = sub(current.theta, initial.theta);
  d.frob = frobenius_norm(d.delta);
  return d;
}

struct BoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  bool satisfied = false;
};

/// lambda_max(P + a^2 J J^T) against lambda_max(P) + a^2 ||J||_2^2.
inline BoundReport check_lambda_max_bound(const DenseMatrix& prefix, const DenseMatrix& block_jac, double alpha) {
  if (!prefix.is_square() || block_jac.rows() != prefix.rows())
    throw DimensionError("check_lambda_max_bound: prefix is " + std::to_string(prefix.rows()) + "x" +
                         std::to_string(prefix.cols()) + " but the Jacobian has " +
                         std::to_string(block_jac.rows()) + " rows");
  const double a2 = alpha * alpha;
  const DenseMatrix next = add(prefix, scale(gram_rows(block_jac), a2));
  BoundReport r;
  r.lhs = sym_eigen(next).eigenvalues.front();
  const double sn = spectral_norm(block_jac);
  r.rhs = sym_eigen(prefix).eigenvalues.front() + a2 * sn * sn;
  r.satisfied = r.lhs <= r.rhs + 1e-8;
  return r;
}

struct LayerTransition {
  std::size_t block = 0;
  double alpha = 1.0;
  BoundReport report;
};

/// The largest-eigenvalue growth bound at every block transition of the
/// deterministic network: the prefix accumulates a^2 J J^T block by block.
inline std::vector<LayerTransition> layer_transition_bounds(const ModelParams& params, const ModelConfig& cfg,
                                                            const DenseMatrix& x) {
  const auto ones = DepthMask::all_ones(cfg.depth);
  DenseMatrix prefix(x.rows(), x.rows());
  std::vector<LayerTransition> out;
  for (std::size_t b = 0; b < params.layout.block_count(); ++b) {
    const DenseMatrix jac = block_jacobian(params, cfg, x, b, ones);
    const double alpha = branch_scale(cfg, ones, b);
    out.push_back({b, alpha, check_lambda_max_bound(prefix, jac, alpha)});
    add_in_place(prefix, scale(gram_rows(jac), alpha * alpha));
  }
  return out;
}

struct ExpectationReport {
  double mc_mean_frob_gap = 0.0;
  double tolerance = 0.0;
  bool satisfied = false;
  std::size_t kept = 0;  // draws with the block kept
  std::size_t draws = 0;
};

/// Monte-Carlo check that masking residual block `layer` with
/// m ~ Bernoulli(1 - p) scales its expected kernel contribution by (1 - p).
///
/// Only block `layer` is masked; the other blocks stay kept so the
/// comparison target is (1 - p) times the deterministic contribution. The
/// tolerance is four binomial standard deviations of the kept fraction.
inline ExpectationReport stochastic_expectation_check(const ModelParams& params, const ModelConfig& cfg,
                                                      const DenseMatrix& x, std::size_t layer, std::size_t draws,
                                                      SeededRng& rng) {
  if (draws < 100) throw ConfigError("stochastic_expectation_check: need at least 100 draws");
  if (!cfg.residual_enabled || layer == 0 || layer >= cfg.depth)
    throw ConfigError("stochastic_expectation_check: layer " + std::to_string(layer) + " is not a residual block");
  const double p = cfg.drop_probs.at(layer);
  const DenseMatrix full = layerwise_decomposition(params, cfg, x).at(layer);

  DenseMatrix sum(x.rows(), x.rows());
  ExpectationReport r;
  r.draws = draws;
  for (std::size_t d = 0; d < draws; ++d) {
    DepthMask mask = DepthMask::all_ones(cfg.depth);
    mask.keep[layer] = rng.bernoulli(1.0 - p) ? 1 : 0;
    r.kept += mask.keep[layer];
    add_in_place(sum, layerwise_decomposition(params, cfg, x, mask).at(layer));
  }
  const DenseMatrix mean = scale(sum, 1.0 / static_cast<double>(draws));
  r.mc_mean_frob_gap = frobenius_norm(sub(mean, scale(full, 1.0 - p)));
  r.tolerance = 4.0 * std::sqrt(p * (1.0 - p)) * frobenius_norm(full) / std::sqrt(static_cast<double>(draws));
  r.satisfied = r.mc_mean_frob_gap <= r.tolerance;
  return r;
}

struct WidthStat {
  std::size_t width = 0;
  double normalized_std = 0.0;  // mean over entries of the across-seed std of Theta_ij / scale
  double mean_diagonal = 0.0;   // the scale
};

/// Across-seed spread of the initial kernel for each width. Seeds for each
/// list position are independent sub-streams of base_seed, so repeated
/// widths are repeated measurements. The Fourier frequencies are drawn once
/// from base_seed and shared by every seed and width; only the layer
/// weights are resampled.
inline std::vector<WidthStat> width_convergence_probe(const ModelConfig& templ, const std::vector<std::size_t>& widths,
                                                      std::size_t seeds, const DenseMatrix& x,
                                                      std::uint64_t base_seed) {
  if (widths.empty() || seeds == 0) throw ConfigError("width_convergence_probe: need widths and seeds");
  std::vector<WidthStat> out;
  const std::size_t n = x.rows();
  DenseMatrix shared_fourier;
  if (templ.fourier_enabled) {
    SeededRng frng(derive_seed(base_seed, "width-probe-fourier"));
    shared_fourier = DenseMatrix(templ.fourier_dim, templ.input_dim);
    for (double& v : shared_fourier.values()) v = frng.normal(0.0, templ.fourier_sigma);
  }
  for (std::size_t pos = 0; pos < widths.size(); ++pos) {
    ModelConfig cfg = templ;
    cfg.hidden_width = widths[pos];
    std::vector<DenseMatrix> kernels;
    double diag_sum = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      cfg.init_seed = derive_seed(base_seed, "width-probe", pos * 1000003ULL + s);
      ModelParams params = init_params(cfg);
      if (cfg.fourier_enabled) params.fourier = shared_fourier;
      kernels.push_back(sum_contributions(layerwise_decomposition(params, cfg, x)));
      diag_sum += trace(kernels.back()) / static_cast<double>(n);
    }
    const double scale_ = diag_sum / static_cast<double>(seeds);
    double acc = 0.0;
    for (std::size_t e = 0; e < n * n; ++e) {
      double mean = 0.0;
      for (const auto& k : kernels) mean += k.values()[e] / scale_;
      mean /= static_cast<double>(seeds);
      double var = 0.0;
      for (const auto& k : kernels) {
        const double dv = k.values()[e] / scale_ - mean;
        var += dv * dv;
      }
      acc += std::sqrt(var / static_cast<double>(seeds));
    }
    out.push_back({widths[pos], acc / static_cast<double>(n * n), scale_});
  }
  return out;
}

struct SnapshotCheck {
  double asymmetry = 0.0;
  double min_eigenvalue = 0.0;
  double partition_error = 0.0;  // 0 when no contributions are stored
  bool lambda_max_consistent = true;

  bool ok() const {
    return asymmetry <= 1e-9 && min_eigenvalue >= -1e-8 && partition_error <= 1e-9 && lambda_max_consistent;
  }
};

/// Structural invariants of a snapshot: symmetry, PSD spectrum and the
/// block partition of the parameter set.
inline SnapshotCheck validate_snapshot(const KernelSnapshot& s) {
  SnapshotCheck c;
  c.asymmetry = asymmetry(s.theta);
  c.min_eigenvalue = s.eigenvalues.empty() ? 0.0 : s.eigenvalues.back();
  c.lambda_max_consistent = !s.eigenvalues.empty() && s.lambda_max == s.eigenvalues.front();
  if (!s.layer_contributions.empty()) c.partition_error = max_abs_diff(sum_contributions(s.layer_contributions), s.theta);
  return c;
}

}  // namespace ntklab
