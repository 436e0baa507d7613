#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "ntklab/errors.hpp"

namespace ntklab {

enum class ActivationKind { Tanh, Gelu };

inline std::string_view to_string(ActivationKind kind) {
  return kind == ActivationKind::Tanh ? "tanh" : "gelu";
}

inline ActivationKind parse_activation(std::string_view name) {
  if (name == "tanh") return ActivationKind::Tanh;
  if (name == "gelu") return ActivationKind::Gelu;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected tanh or gelu)");
}

inline double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double gaussian_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// tanh, or the exact GELU x * Phi(x).
inline double activate(ActivationKind kind, double x) {
  if (kind == ActivationKind::Tanh) return std::tanh(x);
  return x * gaussian_cdf(x);
}

inline double activate_derivative(ActivationKind kind, double x) {
  if (kind == ActivationKind::Tanh) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  }
  return gaussian_cdf(x) + x * gaussian_pdf(x);
}

namespace detail {

// Grid scan of [lo, hi] followed by golden-section refinement to 1e-10.
inline double maximize_derivative(ActivationKind kind, double lo, double hi, double step) {
  const auto f = [kind](double x) { return activate_derivative(kind, x); };
  double best_x = lo;
  double best = f(lo);
  const auto count = static_cast<long>(std::floor((hi - lo) / step + 0.5));
  for (long i = 1; i <= count; ++i) {
    const double x = lo + static_cast<double>(i) * step;
    const double v = f(x);
    if (v > best) {
      best = v;
      best_x = x;
    }
  }
  double a = best_x - step;
  double b = best_x + step;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > 1e-10) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return std::max(best, f(0.5 * (a + b)));
}

}  // namespace detail

/// sup_x |sigma'(x)|. Exactly 1 for tanh; numerically maximized for GELU.
inline double sup_derivative(ActivationKind kind, double grid_step = 1e-4) {
  if (kind == ActivationKind::Tanh) return 1.0;
  if (grid_step == 1e-4) {
    static const double cached = detail::maximize_derivative(kind, -10.0, 10.0, 1e-4);
    return cached;
  }
  return detail::maximize_derivative(kind, -10.0, 10.0, grid_step);
}

}  // namespace ntklab
