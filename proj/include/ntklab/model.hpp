#pragma once

// Residual network with a Fourier input embedding, scaled residual branches,
// optional stochastic depth and a linear head. Gradients are exact,
// computed by reverse-mode accumulation over whole batches.
//
// Architecture, for a depth-L network of hidden width w:
//
//   e       = [sin(2 pi B x), cos(2 pi B x)]        (or x when the embedding is off)
//   h(1)    = act(W0 e + b0)                         entry block, no skip
//   h(l+1)  = h(l) + m_l a_l act(Wl h(l) + bl)       l = 1 .. L-1
//   y       = Wh h(L) + bh                           head
//
// With residual_enabled = false the hidden blocks become h(l+1) = act(...),
// a plain MLP with the same parameter count. Entry 0 of alphas and
// drop_probs belongs to the entry block and is never applied.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntklab/activation.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/linalg.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

struct ModelConfig {
  std::size_t input_dim = 1;
  std::size_t fourier_dim = 8;
  bool fourier_enabled = true;
  double fourier_sigma = 1.0;
  std::size_t hidden_width = 32;
  std::size_t depth = 2;
  std::vector<double> alphas;      // length depth
  std::vector<double> drop_probs;  // length depth
  ActivationKind activation = ActivationKind::Tanh;
  std::size_t output_dim = 1;
  bool residual_enabled = true;
  std::uint64_t init_seed = 0;

  std::size_t embed_dim() const { return fourier_enabled ? 2 * fourier_dim : input_dim; }

  /// Fills alphas/drop_probs with uniform values for the current depth.
  ModelConfig& set_uniform_scaling(double alpha, double drop_prob = 0.0) {
    alphas.assign(depth, alpha);
    drop_probs.assign(depth, drop_prob);
    return *this;
  }

  void validate() const {
    if (input_dim == 0) throw ConfigError("model: input_dim must be >= 1");
    if (fourier_enabled && fourier_dim == 0) throw ConfigError("model: fourier_dim must be >= 1");
    if (!(fourier_sigma >= 0.0) || !std::isfinite(fourier_sigma))
      throw ConfigError("model: fourier_sigma must be finite and >= 0");
    if (hidden_width == 0) throw ConfigError("model: hidden_width must be >= 1");
    if (depth == 0) throw ConfigError("model: depth must be >= 1");
    if (output_dim == 0) throw ConfigError("model: output_dim must be >= 1");
    if (alphas.size() != depth || drop_probs.size() != depth)
      throw ConfigError("model: alphas and drop_probs need one entry per block (" +
                        std::to_string(depth) + ")");
    for (double a : alphas)
      if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("model: every alpha must be finite and >= 0");
    for (double p : drop_probs)
      if (!(p >= 0.0 && p < 1.0)) throw ConfigError("model: every drop_prob must be in [0, 1)");
  }
};

/// Contiguous slice of the flat parameter vector: a rows x cols weight
/// (row-major) followed by a length-rows bias.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t weight_size() const { return rows * cols; }
  std::size_t bias_offset() const { return offset + weight_size(); }
  std::size_t size() const { return weight_size() + rows; }
  std::size_t end() const { return offset + size(); }
};

/// Block 0 is the entry layer, blocks 1..L-1 the residual blocks, block L the head.
class ParamLayout {
 public:
  ParamLayout() = default;

  explicit ParamLayout(const ModelConfig& cfg) {
    std::size_t off = 0;
    auto push = [&](std::string name, std::size_t rows, std::size_t cols) {
      blocks_.push_back(ParamBlock{std::move(name), off, rows, cols});
      off += rows * cols + rows;
    };
    push("entry", cfg.hidden_width, cfg.embed_dim());
    for (std::size_t l = 1; l < cfg.depth; ++l) push("block" + std::to_string(l), cfg.hidden_width, cfg.hidden_width);
    push("head", cfg.output_dim, cfg.hidden_width);
    total_ = off;
  }

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::size_t b) const { return blocks_.at(b); }
  std::size_t block_count() const { return blocks_.size(); }
  std::size_t head_index() const { return blocks_.size() - 1; }
  std::size_t total() const { return total_; }

  struct Location {
    std::size_t block;
    bool is_bias;
    std::size_t row;
    std::size_t col;  // 0 for biases
  };

  /// Inverse of the index map.
  Location locate(std::size_t index) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      if (index < blk.end()) {
        const std::size_t local = index - blk.offset;
        if (local < blk.weight_size()) return {b, false, local / blk.cols, local % blk.cols};
        return {b, true, local - blk.weight_size(), 0};
      }
    }
    throw DimensionError("ParamLayout::locate: index " + std::to_string(index) + " out of range");
  }

  std::size_t weight_index(std::size_t b, std::size_t row, std::size_t col) const {
    const auto& blk = blocks_.at(b);
    return blk.offset + row * blk.cols + col;
  }
  std::size_t bias_index(std::size_t b, std::size_t row) const {
    return blocks_.at(b).bias_offset() + row;
  }

  bool operator==(const ParamLayout& other) const {
    if (total_ != other.total_ || blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& x = blocks_[b];
      const auto& y = other.blocks_[b];
      if (x.offset != y.offset || x.rows != y.rows || x.cols != y.cols) return false;
    }
    return true;
  }

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

/// Trainable parameters plus the fixed Fourier frequency matrix.
struct ModelParams {
  ParamLayout layout;
  Vec64 values;
  DenseMatrix fourier;  // fourier_dim x input_dim; empty when the embedding is off

  DenseMatrix weight(std::size_t b) const {
    const auto& blk = layout.block(b);
    const auto first = values.begin() + static_cast<std::ptrdiff_t>(blk.offset);
    return DenseMatrix(blk.rows, blk.cols, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(blk.weight_size())));
  }

  std::span<const double> bias(std::size_t b) const {
    const auto& blk = layout.block(b);
    return {values.data() + blk.bias_offset(), blk.rows};
  }
};

struct DepthMask {
  std::vector<std::uint8_t> keep;

  static DepthMask all_ones(std::size_t depth) { return DepthMask{std::vector<std::uint8_t>(depth, 1)}; }
  std::size_t size() const { return keep.size(); }
  bool operator==(const DepthMask&) const = default;
};

inline void check_params(const ModelParams& params, const ModelConfig& cfg) {
  if (!(params.layout == ParamLayout(cfg)) || params.values.size() != params.layout.total())
    throw DimensionError("model parameters do not match the model configuration");
  if (cfg.fourier_enabled &&
      (params.fourier.rows() != cfg.fourier_dim || params.fourier.cols() != cfg.input_dim))
    throw DimensionError("Fourier frequency matrix does not match the model configuration");
}

/// [sin(2 pi B x), cos(2 pi B x)].
inline Vec64 fourier_embed(std::span<const double> x, const DenseMatrix& frequencies) {
  if (x.size() != frequencies.cols()) {
    throw DimensionError("fourier_embed: input has length " + std::to_string(x.size()) +
                         ", frequency matrix expects " + std::to_string(frequencies.cols()));
  }
  const std::size_t df = frequencies.rows();
  Vec64 out(2 * df);
  for (std::size_t r = 0; r < df; ++r) {
    const double arg = 2.0 * std::numbers::pi * dot(frequencies.row(r), x);
    out[r] = std::sin(arg);
    out[df + r] = std::cos(arg);
  }
  return out;
}

/// Embeds every row of X (n x d); identity copy when the embedding is off.
inline DenseMatrix embed_batch(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& x) {
  if (x.cols() != cfg.input_dim) {
    throw DimensionError("model input has " + std::to_string(x.cols()) + " features, expected " +
                         std::to_string(cfg.input_dim));
  }
  if (!cfg.fourier_enabled) return x;
  DenseMatrix e(x.rows(), cfg.embed_dim());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vec64 row = fourier_embed(x.row(i), params.fourier);
    std::copy(row.begin(), row.end(), e.row(i).begin());
  }
  return e;
}

/// Gaussian weights with variance 1/fan_in, zero biases, Gaussian frequencies
/// with standard deviation fourier_sigma. Frequencies are drawn first.
inline ModelParams init_params(const ModelConfig& cfg, SeededRng& rng) {
  cfg.validate();
  ModelParams p;
  p.layout = ParamLayout(cfg);
  p.values.assign(p.layout.total(), 0.0);
  if (cfg.fourier_enabled) {
    p.fourier = DenseMatrix(cfg.fourier_dim, cfg.input_dim);
    for (double& v : p.fourier.values()) v = rng.normal(0.0, cfg.fourier_sigma);
  }
  for (const auto& blk : p.layout.blocks()) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(blk.cols));
    for (std::size_t i = 0; i < blk.weight_size(); ++i) p.values[blk.offset + i] = rng.normal(0.0, stddev);
  }
  return p;
}

inline ModelParams init_params(const ModelConfig& cfg) {
  SeededRng rng(cfg.init_seed);
  return init_params(cfg, rng);
}

/// Independent Bernoulli(1 - p_l) keep flags. Entry 0 is drawn too so the
/// stream layout does not depend on which blocks are residual.
inline DepthMask sample_depth_mask(const ModelConfig& cfg, SeededRng& rng) {
  DepthMask m;
  m.keep.resize(cfg.depth);
  for (std::size_t l = 0; l < cfg.depth; ++l) m.keep[l] = rng.bernoulli(1.0 - cfg.drop_probs.at(l)) ? 1 : 0;
  return m;
}

/// Multiplier on block b's branch: m_l * alpha_l for residual blocks, else 1.
inline double branch_scale(const ModelConfig& cfg, const DepthMask& mask, std::size_t b) {
  if (!cfg.residual_enabled || b == 0 || b >= cfg.depth) return 1.0;
  return mask.keep.at(b) ? cfg.alphas.at(b) : 0.0;
}

struct ForwardTrace {
  DenseMatrix embedding;            // n x embed_dim
  std::vector<DenseMatrix> pre;     // pre[l] = pre-activation of hidden block l, n x w
  std::vector<DenseMatrix> hidden;  // hidden[l] = h(l+1), n x w
  DenseMatrix output;               // n x k
  DepthMask mask;

  /// Input rows consumed by parameter block b.
  const DenseMatrix& block_input(std::size_t b) const { return b == 0 ? embedding : hidden.at(b - 1); }
};

namespace detail {

// Z = H W^T + b for parameter block b.
inline DenseMatrix affine(const ModelParams& params, std::size_t b, const DenseMatrix& h) {
  DenseMatrix z = matmul(h, params.weight(b).transposed());
  const auto bias = params.bias(b);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
  return z;
}

inline void require_finite(const DenseMatrix& m, const std::string& where) {
  if (!all_finite(m)) throw NumericError("forward: non-finite value in " + where);
}

}  // namespace detail

/// Batched forward pass over the rows of X (n x d).
inline ForwardTrace forward_batch(const ModelParams& params, const ModelConfig& cfg,
                                  const DenseMatrix& x, const DepthMask& mask) {
  check_params(params, cfg);
  if (mask.size() != cfg.depth) throw DimensionError("forward: depth mask length differs from depth");
  ForwardTrace t;
  t.mask = mask;
  t.embedding = embed_batch(params, cfg, x);
  detail::require_finite(t.embedding, "input embedding");
  const auto act = cfg.activation;

  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const DenseMatrix& input = l == 0 ? t.embedding : t.hidden.back();
    DenseMatrix z = detail::affine(params, l, input);
    DenseMatrix h(z.rows(), z.cols());
    const double s = branch_scale(cfg, mask, l);
    const bool skip = cfg.residual_enabled && l > 0;
    auto zv = z.values();
    auto hv = h.values();
    if (skip) {
      auto in = input.values();
      for (std::size_t i = 0; i < zv.size(); ++i) hv[i] = s == 0.0 ? in[i] : in[i] + s * activate(act, zv[i]);
    } else {
      for (std::size_t i = 0; i < zv.size(); ++i) hv[i] = activate(act, zv[i]);
    }
    detail::require_finite(h, "hidden block " + std::to_string(l));
    t.pre.push_back(std::move(z));
    t.hidden.push_back(std::move(h));
  }
  t.output = detail::affine(params, cfg.depth, t.hidden.back());
  detail::require_finite(t.output, "output head");
  return t;
}

/// Single-sample forward; returns the prediction and keeps the trace.
inline std::pair<Vec64, ForwardTrace> forward(const ModelParams& params, const ModelConfig& cfg,
                                              std::span<const double> x, const DepthMask& mask) {
  ForwardTrace t = forward_batch(params, cfg, DenseMatrix(1, x.size(), Vec64(x.begin(), x.end())), mask);
  Vec64 y(t.output.values().begin(), t.output.values().end());
  return {std::move(y), std::move(t)};
}

inline DenseMatrix predict(const ModelParams& params, const ModelConfig& cfg, const DenseMatrix& x) {
  return forward_batch(params, cfg, x, DepthMask::all_ones(cfg.depth)).output;
}

/// Per-block sensitivities of a scalar seed G (n x k) pulled back through
/// the network. For block b, dL/dZ_b = scale[b] * unscaled[b]; the unscaled
/// form is the branch Jacobian with m_l alpha_l factored out.
struct BlockDeltas {
  std::vector<DenseMatrix> unscaled;  // per block, n x rows_b
  std::vector<double> scale;
};

inline BlockDeltas backward_deltas(const ModelParams& params, const ModelConfig& cfg,
                                   const ForwardTrace& t, const DenseMatrix& seed) {
  const std::size_t n = t.output.rows();
  if (seed.rows() != n || seed.cols() != cfg.output_dim) throw DimensionError("backward: seed shape mismatch");
  const std::size_t blocks = cfg.depth + 1;
  BlockDeltas d;
  d.unscaled.resize(blocks);
  d.scale.assign(blocks, 1.0);
  d.unscaled[cfg.depth] = seed;

  DenseMatrix g_h = matmul(seed, params.weight(cfg.depth));  // dL/dh(L)
  for (std::size_t l = cfg.depth; l-- > 0;) {
    const DenseMatrix& z = t.pre[l];
    DenseMatrix u(n, z.cols());
    auto uv = u.values();
    auto zv = z.values();
    auto gv = g_h.values();
    for (std::size_t i = 0; i < uv.size(); ++i) uv[i] = activate_derivative(cfg.activation, zv[i]) * gv[i];
    const double s = branch_scale(cfg, t.mask, l);
    d.scale[l] = s;
    if (l > 0) {
      if (cfg.residual_enabled) {
        if (s != 0.0) add_in_place(g_h, matmul(scale(u, s), params.weight(l)));
      } else {
        g_h = matmul(u, params.weight(l));
      }
    }
    d.unscaled[l] = std::move(u);
  }
  return d;
}

/// Gradient over the flat parameter vector of sum_i <seed_i, y_i>.
inline Vec64 parameter_gradient(const ModelParams& params, const ModelConfig& cfg,
                                const ForwardTrace& t, const DenseMatrix& seed) {
  const BlockDeltas d = backward_deltas(params, cfg, t, seed);
  Vec64 grad(params.layout.total(), 0.0);
  for (std::size_t b = 0; b < params.layout.block_count(); ++b) {
    const auto& blk = params.layout.block(b);
    if (d.scale[b] == 0.0) continue;
    const DenseMatrix gz = d.scale[b] == 1.0 ? d.unscaled[b] : scale(d.unscaled[b], d.scale[b]);
    const DenseMatrix gw = matmul_tn(gz, t.block_input(b));
    std::copy(gw.values().begin(), gw.values().end(), grad.begin() + static_cast<std::ptrdiff_t>(blk.offset));
    for (std::size_t i = 0; i < gz.rows(); ++i) {
      auto row = gz.row(i);
      for (std::size_t r = 0; r < blk.rows; ++r) grad[blk.bias_offset() + r] += row[r];
    }
  }
  return grad;
}

/// Rows c = 0..k-1 hold d y_c / d theta for a single input x.
inline DenseMatrix jacobian(const ModelParams& params, const ModelConfig& cfg,
                            std::span<const double> x, const DepthMask& mask) {
  const auto [y, t] = forward(params, cfg, x, mask);
  DenseMatrix jac(cfg.output_dim, params.layout.total());
  for (std::size_t c = 0; c < cfg.output_dim; ++c) {
    DenseMatrix seed(1, cfg.output_dim);
    seed(0, c) = 1.0;
    const Vec64 g = parameter_gradient(params, cfg, t, seed);
    std::copy(g.begin(), g.end(), jac.row(c).begin());
  }
  return jac;
}

}  // namespace ntklab
