#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "vbl/error.hpp"
#include "vbl/layout.hpp"

namespace vbl {

inline constexpr double kDepthEpsilon = 1e-6;  // m

struct CameraIntrinsics {
  double focal_length_mm = 0.0;
  double sensor_width_mm = 0.0;
  double sensor_height_mm = 0.0;
  int resolution_x = 0;
  int resolution_y = 0;
  double skew = 0.0;
  Eigen::Vector2d principal_point = Eigen::Vector2d::Zero();

  /// Intrinsics with zero skew and the principal point at the image center.
  static CameraIntrinsics centered(double focal_mm, double sensor_w_mm, double sensor_h_mm,
                                   int res_x, int res_y) {
    CameraIntrinsics k;
    k.focal_length_mm = focal_mm;
    k.sensor_width_mm = sensor_w_mm;
    k.sensor_height_mm = sensor_h_mm;
    k.resolution_x = res_x;
    k.resolution_y = res_y;
    k.principal_point = {0.5 * res_x, 0.5 * res_y};
    return k;
  }
};

struct VehiclePose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // camera-to-world
};

struct FeaturePoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Half-widths W_k of the quantizer input ranges: pixels for the two image
/// axes, meters for ranges.
struct RangeLimits {
  double w1 = 0.0;
  double w2 = 0.0;
  double w3 = 0.0;

  double operator[](int axis) const { return axis == 0 ? w1 : (axis == 1 ? w2 : w3); }
};

inline Eigen::Matrix3d build_calibration_matrix(const CameraIntrinsics& k) {
  if (!(k.focal_length_mm > 0.0) || !(k.sensor_width_mm > 0.0) || !(k.sensor_height_mm > 0.0) ||
      k.resolution_x <= 0 || k.resolution_y <= 0) {
    throw Error(ErrorCode::invalid_input, "camera intrinsics must be strictly positive");
  }
  if (!std::isfinite(k.skew) || !k.principal_point.allFinite()) {
    throw Error(ErrorCode::invalid_input, "camera intrinsics must be finite");
  }
  const double fx = k.focal_length_mm * k.resolution_x / k.sensor_width_mm;
  const double fy = k.focal_length_mm * k.resolution_y / k.sensor_height_mm;
  Eigen::Matrix3d K;
  K << fx, k.skew, k.principal_point.x(),
       0.0, fy, k.principal_point.y(),
       0.0, 0.0, 1.0;
  return K;
}

/// Camera-to-world rotation whose optical axis (third column) points from
/// `eye` toward `target`; image x is resolved against `up`, image y points down.
inline Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                        const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ()) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-12) {
    throw Error(ErrorCode::degenerate_geometry, "look-at direction parallel to up vector");
  }
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return r;
}

struct Scenario {
  std::vector<VehiclePose> vehicles;
  std::vector<FeaturePoint> features;
  CameraIntrinsics intrinsics;
  /// Photographing noise std per pixel measurement, in allocation order (pixels).
  std::vector<double> sigma_pixel;
  /// Ranging noise std per vehicle pair, in allocation order (m).
  std::vector<double> sigma_range;
  RangeLimits limits;
  std::uint64_t seed = 0;
  std::string preset = "custom";

  std::size_t n_vehicles() const { return vehicles.size(); }
  std::size_t n_features() const { return features.size(); }
  MeasurementLayout layout() const { return {features.size(), vehicles.size()}; }
  std::size_t dimension() const { return layout().dimension(); }

  /// Photographing/ranging noise std of measurement `index` (allocation order).
  double sigma_prime(std::size_t index) const {
    const std::size_t np = 2 * features.size() * vehicles.size();
    return index < np ? sigma_pixel[index] : sigma_range[index - np];
  }

  /// Quantizer half-width of measurement `index`.
  double half_width(std::size_t index) const {
    const MeasurementId id = layout().decode(index);
    return limits[id.axis];
  }

  /// Throws `Error` if any structural invariant is violated.
  void validate() const;
};

/// Optical-axis depth of point p in the camera of `pose`.
inline double camera_depth(const Eigen::Vector3d& p, const VehiclePose& pose) {
  return pose.rotation.col(2).dot(p - pose.position);
}

inline bool cheirality_check(const Scenario& s) {
  for (const auto& f : s.features) {
    for (const auto& v : s.vehicles) {
      if (!(camera_depth(f.position, v) > kDepthEpsilon)) return false;
    }
  }
  return true;
}

inline void Scenario::validate() const {
  if (vehicles.size() < 2) throw Error(ErrorCode::invalid_input, "scenario needs at least 2 vehicles");
  if (features.empty()) throw Error(ErrorCode::invalid_input, "scenario needs at least 1 feature");
  build_calibration_matrix(intrinsics);
  const MeasurementLayout lay = layout();
  if (sigma_pixel.size() != lay.pixel_count() || sigma_range.size() != lay.pair_count()) {
    throw Error(ErrorCode::dimension_mismatch, "noise table size does not match scenario");
  }
  for (double s : sigma_pixel) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::invalid_input, "pixel noise std must be positive");
  }
  for (double s : sigma_range) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::invalid_input, "range noise std must be positive");
  }
  if (!(limits.w1 > 0.0) || !(limits.w2 > 0.0) || !(limits.w3 > 0.0)) {
    throw Error(ErrorCode::invalid_input, "range limits W_k must be positive");
  }
  for (const auto& v : vehicles) {
    if (!v.position.allFinite() || !v.rotation.allFinite()) {
      throw Error(ErrorCode::invalid_input, "vehicle pose must be finite");
    }
    const double orth = (v.rotation.transpose() * v.rotation - Eigen::Matrix3d::Identity()).norm();
    if (orth > 1e-9 || std::abs(v.rotation.determinant() - 1.0) > 1e-9) {
      throw Error(ErrorCode::invalid_input, "vehicle rotation is not a proper rotation");
    }
  }
  for (const auto& f : features) {
    if (!f.position.allFinite()) throw Error(ErrorCode::invalid_input, "feature position must be finite");
  }
  if (!cheirality_check(*this)) {
    throw Error(ErrorCode::cheirality, "a feature lies behind or on a camera");
  }
}

/// Positions stacked as [features..., vehicles...], 3 entries per node.
inline Eigen::VectorXd stack_positions(const Scenario& s) {
  Eigen::VectorXd out(3 * (s.n_features() + s.n_vehicles()));
  std::size_t n = 0;
  for (const auto& f : s.features) out.segment<3>(3 * n++) = f.position;
  for (const auto& v : s.vehicles) out.segment<3>(3 * n++) = v.position;
  return out;
}

struct ScenarioDefaults {
  double sigma_pixel = 40.0;  // px
  double sigma_range = 4.0;   // m
  double w3 = 250.0;          // m
};

namespace detail {

inline Scenario ring_scenario(std::size_t n_vehicles, double radius, double angle_step,
                              std::size_t n_features, const Eigen::Vector3d& half_extent,
                              const CameraIntrinsics& intrinsics, const ScenarioDefaults& d,
                              std::uint64_t seed) {
  Scenario s;
  s.seed = seed;
  s.intrinsics = intrinsics;
  for (std::size_t j = 0; j < n_vehicles; ++j) {
    const double a = angle_step * static_cast<double>(j);
    VehiclePose v;
    v.position = {radius * std::cos(a), radius * std::sin(a), 0.0};
    v.rotation = look_at_rotation(v.position, Eigen::Vector3d::Zero());
    s.vehicles.push_back(v);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t i = 0; i < n_features; ++i) {
    FeaturePoint f;
    const double x = unit(rng);
    const double y = unit(rng);
    const double z = unit(rng);
    f.position = {x * half_extent.x(), y * half_extent.y(), z * half_extent.z()};
    s.features.push_back(f);
  }
  const MeasurementLayout lay = s.layout();
  s.sigma_pixel.assign(lay.pixel_count(), d.sigma_pixel);
  s.sigma_range.assign(lay.pair_count(), d.sigma_range);
  s.limits = {0.5 * intrinsics.resolution_x, 0.5 * intrinsics.resolution_y, d.w3};
  return s;
}

}  // namespace detail

/// Five vehicles evenly spaced on a 5 m circle looking at the origin, seventy
/// features uniform in a 5 m x 5 m x 2 m cuboid, 600 mm lens on a 36 x 23.9 mm
/// sensor at 3264 x 2488 pixels.
inline Scenario generate_paper_scenario(std::uint64_t seed, const ScenarioDefaults& d = {}) {
  const auto k = CameraIntrinsics::centered(600.0, 36.0, 23.9, 3264, 2488);
  Scenario s = detail::ring_scenario(5, 5.0, 2.0 * std::numbers::pi / 5.0, 70, {2.5, 2.5, 1.0}, k, d, seed);
  s.preset = "paper";
  return s;
}

/// Two vehicles a quarter circle apart and three features, small enough for
/// brute-force oracles. Uses an 18 mm lens so every feature stays in frame.
inline Scenario generate_toy_scenario(std::uint64_t seed, const ScenarioDefaults& d = {}) {
  const auto k = CameraIntrinsics::centered(18.0, 36.0, 23.9, 3264, 2488);
  Scenario s = detail::ring_scenario(2, 5.0, 0.5 * std::numbers::pi, 3, {1.0, 1.0, 0.5}, k, d, seed);
  s.preset = "toy";
  return s;
}

/// Randomized small instance: jittered ring of vehicles with perturbed
/// orientations and heterogeneous noise levels. Used by property tests.
inline Scenario generate_random_scenario(std::size_t n_vehicles, std::size_t n_features, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Scenario s;
  s.seed = seed;
  s.preset = "random";
  s.intrinsics = CameraIntrinsics::centered(18.0, 36.0, 23.9, 3264, 2488);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(n_vehicles);
  const double phase = 2.0 * std::numbers::pi * u01(rng);
  for (std::size_t j = 0; j < n_vehicles; ++j) {
    const double a = phase + step * (static_cast<double>(j) + 0.3 * (u01(rng) - 0.5));
    const double r = 4.0 + 2.0 * u01(rng);
    VehiclePose v;
    v.position = {r * std::cos(a), r * std::sin(a), u01(rng) - 0.5};
    const Eigen::Matrix3d base = look_at_rotation(v.position, Eigen::Vector3d::Zero());
    const Eigen::Vector3d axis = Eigen::Vector3d(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5).normalized();
    v.rotation = base * Eigen::AngleAxisd(0.05 * u01(rng), axis).toRotationMatrix();
    s.vehicles.push_back(v);
  }
  for (std::size_t i = 0; i < n_features; ++i) {
    FeaturePoint f;
    const double x = u01(rng);
    const double y = u01(rng);
    const double z = u01(rng);
    f.position = {2.0 * x - 1.0, 2.0 * y - 1.0, z - 0.5};
    s.features.push_back(f);
  }
  const MeasurementLayout lay = s.layout();
  for (std::size_t t = 0; t < lay.pixel_count(); ++t) s.sigma_pixel.push_back(20.0 + 40.0 * u01(rng));
  for (std::size_t t = 0; t < lay.pair_count(); ++t) s.sigma_range.push_back(2.0 + 4.0 * u01(rng));
  s.limits = {0.5 * s.intrinsics.resolution_x, 0.5 * s.intrinsics.resolution_y, 250.0};
  return s;
}

}  // namespace vbl
