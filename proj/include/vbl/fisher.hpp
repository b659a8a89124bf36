#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "vbl/bits.hpp"
#include "vbl/error.hpp"
#include "vbl/measurement.hpp"
#include "vbl/scene.hpp"

namespace vbl {

/// Condition number beyond which the projected information is treated as singular.
inline constexpr double kMaxCondition = 1e12;

// ---------------------------------------------------------------------------
// Measurement geometry
// ---------------------------------------------------------------------------

/// Information direction of one scalar measurement. Its Fisher contribution
/// is info * e e^T, where e holds `direction` at node `node_a` and
/// `-direction` at node `node_b`.
struct InformationDirection {
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
  std::size_t node_a = 0;
  std::size_t node_b = 0;
};

/// Gradient of the k-th pixel coordinate with respect to the feature position:
/// (f_3 v_k - f_k v_3) with v_k the rows of K R^T and f_k = v_k.d / (v_3.d)^2.
inline Eigen::Vector3d pixel_direction(const Eigen::Vector3d& p, const VehiclePose& pose,
                                       const Eigen::Matrix3d& K, int axis) {
  const Eigen::Matrix3d krt = K * pose.rotation.transpose();
  const Eigen::Vector3d d = p - pose.position;
  const double depth = krt.row(2).dot(d);
  if (!(depth > kDepthEpsilon)) throw Error(ErrorCode::cheirality, "feature behind camera");
  const double f3 = 1.0 / depth;
  const double fk = krt.row(axis).dot(d) / (depth * depth);
  return f3 * krt.row(axis).transpose() - fk * krt.row(2).transpose();
}

inline Eigen::Vector3d range_direction(const Eigen::Vector3d& xa, const Eigen::Vector3d& xb) {
  const Eigen::Vector3d d = xa - xb;
  const double n = d.norm();
  if (!(n > 1e-12)) throw Error(ErrorCode::degenerate_geometry, "coincident vehicles");
  return d / n;
}

inline std::vector<InformationDirection> information_directions(const Scenario& s) {
  const MeasurementLayout lay = s.layout();
  const Eigen::Matrix3d K = build_calibration_matrix(s.intrinsics);
  std::vector<InformationDirection> out(lay.dimension());
  for (std::size_t t = 0; t < lay.dimension(); ++t) {
    const MeasurementId id = lay.decode(t);
    if (id.kind == MeasurementKind::pixel) {
      out[t].direction = pixel_direction(s.features[id.first].position, s.vehicles[id.second], K, id.axis);
      out[t].node_a = lay.feature_node(id.first);
      out[t].node_b = lay.vehicle_node(id.second);
    } else {
      out[t].direction = range_direction(s.vehicles[id.first].position, s.vehicles[id.second].position);
      out[t].node_a = lay.vehicle_node(id.first);
      out[t].node_b = lay.vehicle_node(id.second);
    }
  }
  return out;
}

inline std::vector<double> information_weights(const Scenario& s, std::span<const double> bits) {
  std::vector<double> w(bits.size());
  for (std::size_t t = 0; t < bits.size(); ++t) w[t] = information(s.sigma_prime(t), s.half_width(t), bits[t]);
  return w;
}

// ---------------------------------------------------------------------------
// Dense FIM
// ---------------------------------------------------------------------------

/// Image information of feature i at vehicle j (rank <= 2).
inline Eigen::Matrix3d g_matrix(std::size_t i, std::size_t j, const Scenario& s, const BitAllocation& b) {
  check_allocation(s, b.span());
  const MeasurementLayout lay = s.layout();
  const Eigen::Matrix3d K = build_calibration_matrix(s.intrinsics);
  Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
  for (int k = 0; k < 2; ++k) {
    const std::size_t t = lay.pixel(i, j, k);
    const double w = information(s.sigma_pixel[t], s.limits[k], b[t]);
    const Eigen::Vector3d v = pixel_direction(s.features[i].position, s.vehicles[j], K, k);
    g += w * v * v.transpose();
  }
  return g;
}

/// Range information between vehicles i and j (rank 1).
inline Eigen::Matrix3d s_matrix(std::size_t i, std::size_t j, const Scenario& s, const BitAllocation& b) {
  check_allocation(s, b.span());
  const MeasurementLayout lay = s.layout();
  const std::size_t t = lay.range(i, j);
  const double w = information(s.sigma_range[t - lay.pixel_count()], s.limits.w3, b[t]);
  const Eigen::Vector3d v = range_direction(s.vehicles[i].position, s.vehicles[j].position);
  return w * v * v.transpose();
}

struct FimMatrix {
  Eigen::MatrixXd matrix;  // features first, then vehicles; 1/m^2
  MeasurementLayout layout;
};

inline FimMatrix assemble_fim(const Scenario& s, const BitAllocation& b) {
  check_allocation(s, b.span());
  const MeasurementLayout lay = s.layout();
  const auto dirs = information_directions(s);
  const auto w = information_weights(s, b.span());
  FimMatrix fim{Eigen::MatrixXd::Zero(lay.fim_size(), lay.fim_size()), lay};
  for (std::size_t t = 0; t < dirs.size(); ++t) {
    if (w[t] == 0.0) continue;
    const Eigen::Matrix3d g = w[t] * dirs[t].direction * dirs[t].direction.transpose();
    const auto a = static_cast<Eigen::Index>(3 * dirs[t].node_a);
    const auto c = static_cast<Eigen::Index>(3 * dirs[t].node_b);
    fim.matrix.block<3, 3>(a, a) += g;
    fim.matrix.block<3, 3>(c, c) += g;
    fim.matrix.block<3, 3>(a, c) -= g;
    fim.matrix.block<3, 3>(c, a) -= g;
  }
  return fim;
}

// ---------------------------------------------------------------------------
// Translation subspace
// ---------------------------------------------------------------------------

/// Orthonormal basis of global translations: columns v_x, v_y, v_z normalized.
inline Eigen::MatrixXd translation_basis(std::size_t n_nodes) {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * n_nodes), 3);
  const double s = 1.0 / std::sqrt(static_cast<double>(n_nodes));
  for (std::size_t n = 0; n < n_nodes; ++n) u.block<3, 3>(static_cast<Eigen::Index>(3 * n), 0).diagonal().setConstant(s);
  return u;
}

struct ProjectionBasis {
  Eigen::MatrixXd u_tilde;  // 3N x 3
  Eigen::MatrixXd u;        // 3N x (3N - 3)
};

/// Fixed orthonormal complement of the translation space. The identity
/// columns of every node except the last are orthonormalized against the
/// translation basis by Householder QR; the last node's three columns are the
/// dependent ones and are dropped.
inline ProjectionBasis projection_basis(std::size_t n_features, std::size_t n_vehicles) {
  const std::size_t nodes = n_features + n_vehicles;
  if (nodes < 2) throw Error(ErrorCode::invalid_input, "need at least two nodes");
  const auto n = static_cast<Eigen::Index>(3 * nodes);
  Eigen::MatrixXd seed(n, n);
  seed.leftCols(3) = translation_basis(nodes);
  seed.rightCols(n - 3) = Eigen::MatrixXd::Identity(n, n - 3);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(seed);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  return {translation_basis(nodes), q.rightCols(n - 3)};
}

/// Relative SPEB by the projected route: trace((U^T J U)^{-1}) with the fixed
/// basis U. Throws `unobservable` when U^T J U is singular or its condition
/// number exceeds kMaxCondition.
inline double relative_speb(const Scenario& s, const BitAllocation& b) {
  const FimMatrix fim = assemble_fim(s, b);
  const ProjectionBasis basis = projection_basis(s.n_features(), s.n_vehicles());
  const Eigen::MatrixXd ju = fim.matrix * basis.u;
  Eigen::MatrixXd m = basis.u.transpose() * ju;
  m = 0.5 * (m + m.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || !(lo > hi / kMaxCondition)) {
    throw Error(ErrorCode::unobservable, "projected FIM is singular (too few bits or degenerate geometry)");
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  return inv.trace();
}

// ---------------------------------------------------------------------------
// Structured evaluator
// ---------------------------------------------------------------------------

/// Fast relative-SPEB evaluator used by the optimizers.
///
/// The translation gauge is fixed by pinning vehicle 0, which turns J into a
/// nonsingular reduced matrix whose feature block is block diagonal. The
/// reduced inverse X is formed through the Schur complement on the vehicle
/// block, and the relative SPEB follows as trace(P X P) with P the projector
/// onto the complement of translations. This equals trace((U^T J U)^{-1}) for
/// any orthonormal complement U, since P X P is the pseudoinverse of J.
///
/// A feature whose 3x3 block is singular carries a null direction of J of its
/// own, so the block check is exact, not a heuristic.
class SpebEvaluator {
 public:
  struct Workspace {
    std::vector<Eigen::Matrix3d> a;       // feature blocks, then their inverses
    Eigen::MatrixXd b;                    // 3 n_f x m coupling to free vehicles
    Eigen::MatrixXd e;                    // A^{-1} B
    Eigen::MatrixXd v;                    // m x m free-vehicle block
    Eigen::MatrixXd schur;                // m x m
    Eigen::MatrixXd t;                    // I + E^T E
    Eigen::MatrixXd r;                    // m x 3
    Eigen::LLT<Eigen::MatrixXd> llt;
    std::vector<double> info;
    double trace_a_inv = 0.0;
  };

  explicit SpebEvaluator(const Scenario& s)
      : layout_(s.layout()), dirs_(information_directions(s)) {
    s.validate();
    sigma_.resize(layout_.dimension());
    width_.resize(layout_.dimension());
    for (std::size_t t = 0; t < layout_.dimension(); ++t) {
      sigma_[t] = s.sigma_prime(t);
      width_[t] = s.half_width(t);
    }
  }

  const MeasurementLayout& layout() const { return layout_; }
  std::size_t dimension() const { return layout_.dimension(); }
  double sigma_prime(std::size_t t) const { return sigma_[t]; }
  double half_width(std::size_t t) const { return width_[t]; }

  /// Relative SPEB, or +inf when the configuration is unobservable.
  double speb_or_inf(std::span<const double> bits, Workspace& ws) const {
    check_size(bits);
    fill_information(bits, ws.info);
    return factor(ws) ? value(ws) : std::numeric_limits<double>::infinity();
  }

  double speb_or_inf(std::span<const double> bits) const {
    Workspace ws;
    return speb_or_inf(bits, ws);
  }

  double speb(std::span<const double> bits) const {
    const double v = speb_or_inf(bits);
    if (!std::isfinite(v)) throw Error(ErrorCode::unobservable, "configuration is unobservable");
    return v;
  }

  /// Relative SPEB from per-measurement information weights 1/sigma^2.
  double speb_from_information(std::span<const double> info) const {
    check_size(info);
    Workspace ws;
    ws.info.assign(info.begin(), info.end());
    if (!factor(ws)) throw Error(ErrorCode::unobservable, "configuration is unobservable");
    return value(ws);
  }

  /// Bound with unlimited bits: every measurement at its photographing noise.
  double infinite_bit_speb() const {
    std::vector<double> info(dimension());
    for (std::size_t t = 0; t < info.size(); ++t) info[t] = 1.0 / (sigma_[t] * sigma_[t]);
    return speb_from_information(info);
  }

  /// dP_r/db for every entry (or only `subset`, others left 0). Entries with
  /// b = 0 get 0. Returns the relative SPEB at `bits`.
  double gradient(std::span<const double> bits, std::span<double> grad, Workspace& ws,
                  std::span<const std::size_t> subset = {}) const {
    check_size(bits);
    check_size(grad);
    fill_information(bits, ws.info);
    if (!factor(ws)) throw Error(ErrorCode::unobservable, "configuration is unobservable");
    const double pr = value(ws);
    std::fill(grad.begin(), grad.end(), 0.0);
    auto one = [&](std::size_t t) {
      const double slope = information_slope(sigma_[t], width_[t], bits[t]);
      if (slope == 0.0) return;
      grad[t] = -slope * projected_norm2(dirs_[t], ws);
    };
    if (subset.empty()) {
      for (std::size_t t = 0; t < dimension(); ++t) one(t);
    } else {
      for (std::size_t t : subset) one(t);
    }
    return pr;
  }

  std::vector<double> gradient(std::span<const double> bits) const {
    std::vector<double> g(dimension());
    Workspace ws;
    gradient(bits, g, ws);
    return g;
  }

 private:
  void check_size(std::span<const double> v) const {
    if (v.size() != dimension()) throw Error(ErrorCode::dimension_mismatch, "allocation size mismatch");
  }

  void fill_information(std::span<const double> bits, std::vector<double>& info) const {
    info.resize(bits.size());
    for (std::size_t t = 0; t < bits.size(); ++t) {
      if (!(bits[t] >= 0.0)) throw Error(ErrorCode::invalid_input, "negative bit count");
      info[t] = information(sigma_[t], width_[t], bits[t]);
    }
  }

  Eigen::Index free_vehicle_offset(std::size_t node) const {
    // node -> column offset among free vehicles (vehicle 0 pinned); -1 if pinned/feature
    const std::size_t nf = layout_.n_features();
    if (node <= nf) return -1;
    return static_cast<Eigen::Index>(3 * (node - nf - 1));
  }

  bool factor(Workspace& ws) const {
    const std::size_t nf = layout_.n_features();
    const std::size_t nv = layout_.n_vehicles();
    const auto m = static_cast<Eigen::Index>(3 * (nv - 1));
    ws.a.assign(nf, Eigen::Matrix3d::Zero());
    ws.b.setZero(static_cast<Eigen::Index>(3 * nf), m);
    ws.v.setZero(m, m);
    Eigen::Matrix3d pinned = Eigen::Matrix3d::Zero();

    for (std::size_t t = 0; t < dirs_.size(); ++t) {
      const double w = ws.info[t];
      if (w == 0.0) continue;
      const auto& d = dirs_[t];
      const Eigen::Matrix3d g = w * d.direction * d.direction.transpose();
      const Eigen::Index ob = free_vehicle_offset(d.node_b);
      if (d.node_a < nf) {
        ws.a[d.node_a] += g;
        if (ob >= 0) {
          ws.b.block<3, 3>(static_cast<Eigen::Index>(3 * d.node_a), ob) -= g;
        }
      } else {
        const Eigen::Index oa = free_vehicle_offset(d.node_a);
        if (oa >= 0) ws.v.block<3, 3>(oa, oa) += g;
        else pinned += g;
        if (oa >= 0 && ob >= 0) {
          ws.v.block<3, 3>(oa, ob) -= g;
          ws.v.block<3, 3>(ob, oa) -= g;
        }
      }
      if (ob >= 0) ws.v.block<3, 3>(ob, ob) += g;
      else pinned += g;
    }

    double scale = pinned.trace();
    for (const auto& a : ws.a) scale = std::max(scale, a.trace());
    for (Eigen::Index k = 0; k < m; k += 3) scale = std::max(scale, ws.v.block<3, 3>(k, k).trace());
    if (!(scale > 0.0)) return false;
    const double floor = scale / kMaxCondition;

    ws.e.resize(ws.b.rows(), m);
    ws.trace_a_inv = 0.0;
    for (std::size_t i = 0; i < nf; ++i) {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
      es.computeDirect(ws.a[i], Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues()(0) > floor)) return false;
      ws.a[i] = ws.a[i].inverse().eval();
      ws.trace_a_inv += ws.a[i].trace();
      const auto row = static_cast<Eigen::Index>(3 * i);
      ws.e.middleRows<3>(row).noalias() = ws.a[i] * ws.b.middleRows<3>(row);
    }

    ws.schur = ws.v;
    ws.schur.noalias() -= ws.b.transpose() * ws.e;
    ws.schur = (0.5 * (ws.schur + ws.schur.transpose())).eval();
    if (m > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ws.schur, Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > floor)) return false;
      ws.llt.compute(ws.schur);
      if (ws.llt.info() != Eigen::Success) return false;
    }
    return true;
  }

  double value(Workspace& ws) const {
    const std::size_t nf = layout_.n_features();
    const std::size_t nv = layout_.n_vehicles();
    const double nodes = static_cast<double>(nf + nv);
    const auto m = ws.schur.rows();
    double pr = (1.0 - 1.0 / nodes) * ws.trace_a_inv;
    if (m == 0) return pr;

    ws.t = Eigen::MatrixXd::Identity(m, m);
    ws.t.noalias() += ws.e.transpose() * ws.e;
    // r_a = s_a(vehicles) - sum_i E_i^T e_a
    ws.r.setZero(m, 3);
    for (Eigen::Index k = 0; k < m; k += 3) ws.r.block<3, 3>(k, 0).setIdentity();
    for (std::size_t i = 0; i < nf; ++i) {
      ws.r.noalias() -= ws.e.middleRows<3>(static_cast<Eigen::Index>(3 * i)).transpose();
    }
    pr += ws.llt.solve(ws.t).trace();
    pr -= (ws.r.transpose() * ws.llt.solve(ws.r)).trace() / nodes;
    return pr;
  }

  /// || P X e ||^2 for the measurement vector e of `d`.
  double projected_norm2(const InformationDirection& d, const Workspace& ws) const {
    const std::size_t nf = layout_.n_features();
    const std::size_t nv = layout_.n_vehicles();
    const auto m = ws.schur.rows();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    // vehicle part of e, then subtract E_i^T e_f for the feature part
    const Eigen::Index oa = free_vehicle_offset(d.node_a);
    const Eigen::Index ob = free_vehicle_offset(d.node_b);
    if (d.node_a < nf) {
      rhs.noalias() -= ws.e.middleRows<3>(static_cast<Eigen::Index>(3 * d.node_a)).transpose() * d.direction;
    } else if (oa >= 0) {
      rhs.segment<3>(oa) += d.direction;
    }
    if (ob >= 0) rhs.segment<3>(ob) -= d.direction;

    Eigen::VectorXd yv = m > 0 ? Eigen::VectorXd(ws.llt.solve(rhs)) : Eigen::VectorXd();
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double norm2 = 0.0;
    for (std::size_t i = 0; i < nf; ++i) {
      Eigen::Vector3d y = Eigen::Vector3d::Zero();
      if (m > 0) y.noalias() = -ws.e.middleRows<3>(static_cast<Eigen::Index>(3 * i)) * yv;
      if (d.node_a == i) y.noalias() += ws.a[i] * d.direction;
      sum += y;
      norm2 += y.squaredNorm();
    }
    for (Eigen::Index k = 0; k < m; k += 3) {
      const Eigen::Vector3d y = yv.segment<3>(k);
      sum += y;
      norm2 += y.squaredNorm();
    }
    // subtract the translation component
    return norm2 - sum.squaredNorm() / static_cast<double>(nf + nv);
  }

  MeasurementLayout layout_;
  std::vector<InformationDirection> dirs_;
  std::vector<double> sigma_;
  std::vector<double> width_;
};

/// dP_r/db at `b` through the structured evaluator.
inline std::vector<double> speb_gradient(const Scenario& s, const BitAllocation& b) {
  check_allocation(s, b.span());
  for (double x : b.values()) {
    if (!(x > 0.0)) throw Error(ErrorCode::invalid_input, "gradient needs strictly positive bits");
  }
  return SpebEvaluator(s).gradient(b.span());
}

inline double infinite_bit_speb(const Scenario& s) { return SpebEvaluator(s).infinite_bit_speb(); }

}  // namespace vbl
