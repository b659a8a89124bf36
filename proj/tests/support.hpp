#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "vbl/vbl.hpp"

namespace vbl::testing {

/// Unit-focal, unit-pixel camera: K = I.
inline CameraIntrinsics identity_intrinsics() {
  CameraIntrinsics k;
  k.focal_length_mm = 1.0;
  k.sensor_width_mm = 1.0;
  k.sensor_height_mm = 1.0;
  k.resolution_x = 1;
  k.resolution_y = 1;
  return k;
}

inline Scenario make_scenario(std::vector<VehiclePose> vehicles, std::vector<Eigen::Vector3d> features,
                              CameraIntrinsics k, double sigma_pixel, double sigma_range,
                              RangeLimits limits = {1632.0, 1244.0, 250.0}) {
  Scenario s;
  s.vehicles = std::move(vehicles);
  for (const auto& f : features) s.features.push_back({f});
  s.intrinsics = k;
  const MeasurementLayout lay = s.layout();
  s.sigma_pixel.assign(lay.pixel_count(), sigma_pixel);
  s.sigma_range.assign(lay.pair_count(), sigma_range);
  s.limits = limits;
  return s;
}

/// Vehicles on a ring of radius `r` looking at the origin, with the given features.
inline Scenario ring(std::size_t n_vehicles, std::vector<Eigen::Vector3d> features, double r = 5.0) {
  std::vector<VehiclePose> v;
  for (std::size_t j = 0; j < n_vehicles; ++j) {
    const double a = 2.0 * std::acos(-1.0) * static_cast<double>(j) / static_cast<double>(n_vehicles);
    VehiclePose p;
    p.position = {r * std::cos(a), r * std::sin(a), 0.1 * static_cast<double>(j)};
    p.rotation = look_at_rotation(p.position, Eigen::Vector3d::Zero());
    v.push_back(p);
  }
  return make_scenario(v, std::move(features), CameraIntrinsics::centered(18.0, 36.0, 23.9, 3264, 2488), 40.0, 4.0);
}

/// Pixel coordinate along `axis` written out from the pinhole model:
/// camera-frame point c = R^T (p - x), then (f_x c_x + s c_y)/c_z + c_x etc.
inline double pixel_model(const Scenario& s, const Eigen::Vector3d& p, const Eigen::Vector3d& x,
                          const Eigen::Matrix3d& r, int axis) {
  const auto& k = s.intrinsics;
  const double fx = k.focal_length_mm * k.resolution_x / k.sensor_width_mm;
  const double fy = k.focal_length_mm * k.resolution_y / k.sensor_height_mm;
  const Eigen::Vector3d c = r.transpose() * (p - x);
  if (axis == 0) return (fx * c.x() + k.skew * c.y()) / c.z() + k.principal_point.x();
  return fy * c.y() / c.z() + k.principal_point.y();
}

/// Gaussian-model FIM G^T Sigma^{-1} G with G the central-difference
/// Jacobian of every measurement with respect to the stacked positions.
inline Eigen::MatrixXd finite_difference_fim(const Scenario& s, const BitAllocation& b, double h = 1e-6) {
  const MeasurementLayout lay = s.layout();
  const auto n = static_cast<Eigen::Index>(lay.fim_size());
  const Eigen::VectorXd p0 = stack_positions(s);
  auto measure = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(lay.dimension()));
    for (std::size_t t = 0; t < lay.dimension(); ++t) {
      const MeasurementId id = lay.decode(t);
      if (id.kind == MeasurementKind::pixel) {
        const Eigen::Vector3d f = p.segment<3>(static_cast<Eigen::Index>(3 * lay.feature_node(id.first)));
        const Eigen::Vector3d x = p.segment<3>(static_cast<Eigen::Index>(3 * lay.vehicle_node(id.second)));
        z[static_cast<Eigen::Index>(t)] = pixel_model(s, f, x, s.vehicles[id.second].rotation, id.axis);
      } else {
        const Eigen::Vector3d a = p.segment<3>(static_cast<Eigen::Index>(3 * lay.vehicle_node(id.first)));
        const Eigen::Vector3d c = p.segment<3>(static_cast<Eigen::Index>(3 * lay.vehicle_node(id.second)));
        z[static_cast<Eigen::Index>(t)] = (a - c).norm();
      }
    }
    return z;
  };
  Eigen::MatrixXd g(static_cast<Eigen::Index>(lay.dimension()), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::VectorXd up = p0, dn = p0;
    up[c] += h;
    dn[c] -= h;
    g.col(c) = (measure(up) - measure(dn)) / (2.0 * h);
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(lay.dimension()));
  for (std::size_t t = 0; t < lay.dimension(); ++t) {
    const double sp = s.sigma_prime(t);
    const double q = b[t] == 0.0 ? 0.0 : s.half_width(t) / (std::pow(2.0, b[t]) - 1.0);
    w[static_cast<Eigen::Index>(t)] = b[t] == 0.0 ? 0.0 : 1.0 / (sp * sp + q * q);
  }
  return g.transpose() * w.asDiagonal() * g;
}

/// Trace of the pseudoinverse from a full eigendecomposition, dropping the
/// three smallest eigenvalues (the translation null space).
inline double eigen_speb(const Eigen::MatrixXd& j) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (j + j.transpose()));
  double sum = 0.0;
  for (Eigen::Index k = 3; k < j.rows(); ++k) sum += 1.0 / eig.eigenvalues()[k];
  return sum;
}

inline double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

inline std::vector<double> random_bits(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> b(n);
  for (double& x : b) x = u(rng);
  return b;
}

/// Lower bound of the convex region for every measurement.
inline std::vector<double> convex_thresholds(const Scenario& s) {
  std::vector<double> t(s.dimension());
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = std::log2(s.half_width(k) / s.sigma_prime(k));
  return t;
}

/// Normalized information of a quantized measurement, 1 / (1 + a^2/(2^x - 1)^2).
inline double normalized_information(double x, double a) {
  const double q = a / std::expm1(x * std::log(2.0));
  return 1.0 / (1.0 + q * q);
}

/// Relative SPEB in extended precision: J assembled in long double, then
/// trace((J + T T^T)^{-1}) - 3 with T the orthonormal translation basis.
inline long double extended_speb(const Scenario& s, const std::vector<double>& bits) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const auto dirs = information_directions(s);
  const std::size_t nodes = s.n_features() + s.n_vehicles();
  const auto n = static_cast<Eigen::Index>(3 * nodes);
  MatL j = MatL::Zero(n, n);
  for (std::size_t t = 0; t < dirs.size(); ++t) {
    if (bits[t] == 0.0) continue;
    const long double sp = s.sigma_prime(t);
    const long double q = static_cast<long double>(s.half_width(t)) / std::expm1(bits[t] * std::log(2.0L));
    const long double w = 1.0L / (sp * sp + q * q);
    const Eigen::Matrix<long double, 3, 1> d = dirs[t].direction.cast<long double>();
    const Eigen::Matrix<long double, 3, 3> g = w * d * d.transpose();
    const auto a = static_cast<Eigen::Index>(3 * dirs[t].node_a);
    const auto c = static_cast<Eigen::Index>(3 * dirs[t].node_b);
    j.block<3, 3>(a, a) += g;
    j.block<3, 3>(c, c) += g;
    j.block<3, 3>(a, c) -= g;
    j.block<3, 3>(c, a) -= g;
  }
  const long double inv_nodes = 1.0L / static_cast<long double>(nodes);
  for (std::size_t p = 0; p < nodes; ++p)
    for (std::size_t r = 0; r < nodes; ++r)
      j.block<3, 3>(static_cast<Eigen::Index>(3 * p), static_cast<Eigen::Index>(3 * r)).diagonal().array() += inv_nodes;
  Eigen::LLT<MatL> llt(j);
  return llt.solve(MatL::Identity(n, n)).trace() - 3.0L;
}

/// Five-point central difference of extended_speb in entry t.
inline double extended_partial(const Scenario& s, const std::vector<double>& bits, std::size_t t, double h = 1e-3) {
  auto at = [&](double dx) {
    std::vector<double> b = bits;
    b[t] += dx;
    return extended_speb(s, b);
  };
  const long double num = -at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h);
  return static_cast<double>(num / (12.0L * h));
}

}  // namespace vbl::testing
