#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "vbl/bits.hpp"
#include "vbl/error.hpp"
#include "vbl/scene.hpp"

namespace vbl {

using Rng = std::mt19937_64;

struct NoiseSpec {
  double sigma_prime = 1.0;       // native units
  double range_half_width = 1.0;  // W_k, native units
};

struct PixelObservation {
  Eigen::Vector2d coords = Eigen::Vector2d::Zero();  // pixels, in [0, 2W_k]
  std::array<bool, 2> present = {false, false};     // axes transmitted with b > 0
  std::size_t feature_index = 0;
  std::size_t vehicle_index = 0;
};

struct RangeObservation {
  double value = 0.0;  // m
  std::size_t first = 0;
  std::size_t second = 0;
};

struct ObservationSet {
  std::vector<PixelObservation> pixels;
  std::vector<RangeObservation> ranges;
  std::size_t clamped = 0;  // inputs clamped into [0, 2W] before quantization

  bool empty() const { return pixels.empty() && ranges.empty(); }
};

/// Noiseless pixel coordinates of p: u = K R^T (p - x), returns (u1/u3, u2/u3).
inline Eigen::Vector2d project(const Eigen::Vector3d& p, const VehiclePose& pose, const Eigen::Matrix3d& K) {
  const Eigen::Vector3d u = K * (pose.rotation.transpose() * (p - pose.position));
  if (!(u.z() > kDepthEpsilon)) {
    throw Error(ErrorCode::cheirality, "point is not in front of the camera");
  }
  return u.head<2>() / u.z();
}

inline double true_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return (a - b).norm(); }

/// 2^b - 1, accurate for small b.
inline double grid_levels(double b) { return std::expm1(b * std::numbers::ln2); }

/// Photographing plus quantization variance for `b` bits. Zero bits means the
/// measurement is not transmitted: the variance is +inf (zero information).
inline double effective_variance(double sigma_prime, double half_width, double b) {
  if (!(b >= 0.0)) throw Error(ErrorCode::invalid_input, "bit count must be nonnegative");
  if (b == 0.0) return std::numeric_limits<double>::infinity();
  const double q = half_width / grid_levels(b);
  return sigma_prime * sigma_prime + q * q;
}

/// 1 / effective_variance, with 0 for b = 0.
inline double information(double sigma_prime, double half_width, double b) {
  if (b == 0.0) return 0.0;
  return 1.0 / effective_variance(sigma_prime, half_width, b);
}

/// d(1/sigma^2)/db. Defined as 0 at b = 0, where the measurement is absent.
inline double information_slope(double sigma_prime, double half_width, double b) {
  if (!(b > 0.0) || std::isinf(b)) return 0.0;
  const double inv = 1.0 / grid_levels(b);  // 1 / (2^b - 1)
  // d(W^2/(2^b-1)^2)/db = -2 ln2 W^2 2^b/(2^b-1)^3, and 2^b/(2^b-1)^3 = inv^2 + inv^3
  const double dvar = -2.0 * std::numbers::ln2 * half_width * half_width * (inv * inv + inv * inv * inv);
  const double var = effective_variance(sigma_prime, half_width, b);
  return -dvar / (var * var);
}

struct QuantizeDiagnostics {
  std::size_t clamped = 0;
};

/// Probabilistic quantizer on [0, 2W] with 2^b - 1 intervals. Rounds down or
/// up to the neighbouring grid points with probabilities that make the output
/// an unbiased estimate of x. Inputs outside [0, 2W] are clamped first.
inline double quantize(double x, double half_width, int b, Rng& rng, QuantizeDiagnostics* diag = nullptr) {
  if (b < 1 || b > 62) throw Error(ErrorCode::invalid_input, "quantizer needs 1..62 bits");
  if (!(half_width > 0.0) || !std::isfinite(x)) throw Error(ErrorCode::invalid_input, "invalid quantizer input");
  const double top = 2.0 * half_width;
  if (x < 0.0 || x > top) {
    x = std::clamp(x, 0.0, top);
    if (diag) ++diag->clamped;
  }
  const double levels = std::ldexp(1.0, b) - 1.0;
  const double step = top / levels;
  double n = std::floor(x / step);
  if (n >= levels) return top;
  const double frac = std::clamp((x - n * step) / step, 0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (frac > 0.0 && u(rng) < frac) n += 1.0;
  return n >= levels ? top : n * step;
}

namespace detail {

inline int bit_count(double b) {
  if (b != std::floor(b)) throw Error(ErrorCode::invalid_input, "simulation needs integer bit counts");
  return static_cast<int>(b);
}

}  // namespace detail

/// Noisy, quantized observations for an integer allocation. Pixel coordinates
/// already lie in [0, 2W_k] when W_k is half the resolution, so they are
/// quantized as is. Measurements with zero bits are not transmitted.
inline ObservationSet simulate_observation_set(const Scenario& s, const BitAllocation& bits, Rng& rng) {
  check_allocation(s, bits.span());
  const MeasurementLayout lay = s.layout();
  const Eigen::Matrix3d K = build_calibration_matrix(s.intrinsics);
  std::normal_distribution<double> gauss(0.0, 1.0);
  QuantizeDiagnostics diag;
  ObservationSet out;

  for (std::size_t i = 0; i < s.n_features(); ++i) {
    for (std::size_t j = 0; j < s.n_vehicles(); ++j) {
      const Eigen::Vector2d clean = project(s.features[i].position, s.vehicles[j], K);
      PixelObservation obs;
      obs.feature_index = i;
      obs.vehicle_index = j;
      for (int k = 0; k < 2; ++k) {
        const std::size_t t = lay.pixel(i, j, k);
        const double noisy = clean[k] + s.sigma_pixel[t] * gauss(rng);
        const int b = detail::bit_count(bits[t]);
        if (b == 0) continue;
        obs.coords[k] = quantize(noisy, s.limits[k], b, rng, &diag);
        obs.present[k] = true;
      }
      if (obs.present[0] || obs.present[1]) out.pixels.push_back(obs);
    }
  }
  for (std::size_t a = 0; a < s.n_vehicles(); ++a) {
    for (std::size_t c = a + 1; c < s.n_vehicles(); ++c) {
      const std::size_t t = lay.range(a, c);
      const double noisy = true_distance(s.vehicles[a].position, s.vehicles[c].position) +
                           s.sigma_range[t - lay.pixel_count()] * gauss(rng);
      const int b = detail::bit_count(bits[t]);
      if (b == 0) continue;
      out.ranges.push_back({quantize(noisy, s.limits.w3, b, rng, &diag), a, c});
    }
  }
  out.clamped = diag.clamped;
  return out;
}

}  // namespace vbl
