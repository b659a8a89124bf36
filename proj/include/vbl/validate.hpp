#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vbl/alloc.hpp"
#include "vbl/bits.hpp"
#include "vbl/error.hpp"
#include "vbl/fisher.hpp"
#include "vbl/measurement.hpp"
#include "vbl/scene.hpp"

namespace vbl {

struct Alignment {
  Eigen::Vector3d alpha = Eigen::Vector3d::Zero();
  Eigen::VectorXd aligned;
};

namespace detail {

inline void check_stacked(const Eigen::VectorXd& truth, const Eigen::VectorXd& estimate) {
  if (truth.size() != estimate.size() || truth.size() == 0 || truth.size() % 3 != 0) {
    throw Error(ErrorCode::dimension_mismatch, "stacked position vectors must have equal length, a multiple of 3");
  }
}

}  // namespace detail

/// Translation minimizing ||truth - (estimate + alpha on every node)||.
inline Alignment align_translation(const Eigen::VectorXd& truth, const Eigen::VectorXd& estimate) {
  detail::check_stacked(truth, estimate);
  const Eigen::Index nodes = truth.size() / 3;
  const Eigen::VectorXd diff = truth - estimate;
  Alignment out;
  for (Eigen::Index n = 0; n < nodes; ++n) out.alpha += diff.segment<3>(3 * n);
  out.alpha /= static_cast<double>(nodes);
  out.aligned = estimate;
  for (Eigen::Index n = 0; n < nodes; ++n) out.aligned.segment<3>(3 * n) += out.alpha;
  return out;
}

struct RelativeError {
  double epsilon_t = 0.0;           // translation part, m^2
  double epsilon_r = 0.0;           // error after alignment, m^2
  double epsilon_r_features = 0.0;  // feature nodes only, m^2
};

/// Splits ||truth - estimate||^2 into the removable translation and the rest.
inline RelativeError relative_error(const Eigen::VectorXd& truth, const Eigen::VectorXd& estimate,
                                    std::size_t n_features = 0) {
  const Alignment a = align_translation(truth, estimate);
  RelativeError e;
  e.epsilon_t = static_cast<double>(truth.size() / 3) * a.alpha.squaredNorm();
  const Eigen::VectorXd r = truth - a.aligned;
  e.epsilon_r = r.squaredNorm();
  e.epsilon_r_features = r.head(static_cast<Eigen::Index>(3 * std::min<std::size_t>(n_features, r.size() / 3))).squaredNorm();
  return e;
}

struct EstimatorOptions {
  int max_iterations = 100;
  double rel_cost_tol = 1e-10;
  double initial_damping = 1e-3;
  double max_damping = 1e12;
};

struct EstimateState {
  Eigen::VectorXd positions;  // stacked features then vehicles
  int iterations = 0;
  double cost = 0.0;
  std::vector<double> cost_trace;
};

namespace detail {

struct Residuals {
  Eigen::VectorXd r;  // whitened
  Eigen::MatrixXd j;  // whitened Jacobian of predictions
  bool valid = true;
};

inline Residuals residuals(const ObservationSet& obs, const Scenario& s, const Eigen::Matrix3d& K,
                           const std::vector<double>& inv_sigma, const Eigen::VectorXd& p, bool jacobian) {
  const MeasurementLayout lay = s.layout();
  std::size_t rows = obs.ranges.size();
  for (const auto& o : obs.pixels) rows += static_cast<std::size_t>(o.present[0]) + static_cast<std::size_t>(o.present[1]);
  Residuals out;
  out.r.resize(static_cast<Eigen::Index>(rows));
  if (jacobian) out.j = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), p.size());
  Eigen::Index row = 0;
  for (const auto& o : obs.pixels) {
    const auto fi = static_cast<Eigen::Index>(3 * lay.feature_node(o.feature_index));
    const auto vj = static_cast<Eigen::Index>(3 * lay.vehicle_node(o.vehicle_index));
    const Eigen::Matrix3d m = K * s.vehicles[o.vehicle_index].rotation.transpose();
    const Eigen::Vector3d d = p.segment<3>(fi) - p.segment<3>(vj);
    const Eigen::Vector3d u = m * d;
    if (!(u.z() > kDepthEpsilon)) {
      out.valid = false;
      return out;
    }
    for (int k = 0; k < 2; ++k) {
      if (!o.present[static_cast<std::size_t>(k)]) continue;
      const double w = inv_sigma[lay.pixel(o.feature_index, o.vehicle_index, k)];
      out.r[row] = w * (o.coords[k] - u[k] / u.z());
      if (jacobian) {
        const Eigen::RowVector3d g = w * (m.row(k) * u.z() - u[k] * m.row(2)) / (u.z() * u.z());
        out.j.block<1, 3>(row, fi) = g;
        out.j.block<1, 3>(row, vj) = -g;
      }
      ++row;
    }
  }
  for (const auto& o : obs.ranges) {
    const auto va = static_cast<Eigen::Index>(3 * lay.vehicle_node(o.first));
    const auto vb = static_cast<Eigen::Index>(3 * lay.vehicle_node(o.second));
    const Eigen::Vector3d d = p.segment<3>(va) - p.segment<3>(vb);
    const double dist = d.norm();
    if (!(dist > 1e-12)) {
      out.valid = false;
      return out;
    }
    const double w = inv_sigma[lay.range(o.first, o.second)];
    out.r[row] = w * (o.value - dist);
    if (jacobian) {
      const Eigen::RowVector3d g = w * d.transpose() / dist;
      out.j.block<1, 3>(row, va) = g;
      out.j.block<1, 3>(row, vb) = -g;
    }
    ++row;
  }
  return out;
}

}  // namespace detail

/// Weighted nonlinear least squares over all feature and vehicle positions,
/// rotations known. Weights are 1/sigma^2 from the allocation's effective
/// variances. Damped Gauss-Newton with the centroid pinned to the initial
/// centroid: the normal matrix gets a penalty along the translation directions,
/// so every step has zero mean shift.
inline EstimateState estimate_positions(const ObservationSet& obs, const Scenario& s, const BitAllocation& bits,
                                        const Eigen::VectorXd& init, const EstimatorOptions& opt = {}) {
  check_allocation(s, bits.span());
  const MeasurementLayout lay = s.layout();
  if (init.size() != static_cast<Eigen::Index>(3 * lay.n_nodes()) || !init.allFinite()) {
    throw Error(ErrorCode::dimension_mismatch, "initial estimate has the wrong size or is not finite");
  }
  if (obs.empty()) throw Error(ErrorCode::invalid_input, "no observations");
  const Eigen::Matrix3d K = build_calibration_matrix(s.intrinsics);
  std::vector<double> inv_sigma(lay.dimension());
  for (std::size_t t = 0; t < inv_sigma.size(); ++t) {
    inv_sigma[t] = std::sqrt(information(s.sigma_prime(t), s.half_width(t), bits[t]));
  }
  const Eigen::MatrixXd tb = translation_basis(lay.n_nodes());
  const Eigen::MatrixXd gauge = tb * tb.transpose();

  EstimateState st;
  st.positions = init;
  auto fail = [&](const std::string& why) {
    std::ostringstream msg;
    msg << "estimator failed: " << why << "; cost trace:";
    for (double c : st.cost_trace) msg << ' ' << c;
    throw Error(ErrorCode::estimation_failure, msg.str());
  };

  detail::Residuals cur = detail::residuals(obs, s, K, inv_sigma, st.positions, true);
  if (!cur.valid) fail("initial estimate violates cheirality");
  st.cost = 0.5 * cur.r.squaredNorm();
  st.cost_trace.push_back(st.cost);
  double lambda = opt.initial_damping;

  for (int it = 0; it < opt.max_iterations; ++it) {
    const Eigen::MatrixXd h = cur.j.transpose() * cur.j;
    const Eigen::VectorXd g = cur.j.transpose() * cur.r;
    const double scale = std::max(h.diagonal().maxCoeff(), 1e-300);
    if (g.norm() <= 1e-15 * scale) break;  // stationary
    bool stepped = false;
    while (lambda <= opt.max_damping) {
      Eigen::MatrixXd a = h + scale * gauge;
      a.diagonal() += lambda * h.diagonal().cwiseMax(1e-12 * scale);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      if (ldlt.info() != Eigen::Success) fail("singular normal equations");
      Eigen::VectorXd step = ldlt.solve(g);
      step -= gauge * step;  // keep the centroid fixed
      if (!step.allFinite()) fail("non-finite step");
      const Eigen::VectorXd cand = st.positions + step;
      detail::Residuals next = detail::residuals(obs, s, K, inv_sigma, cand, true);
      const double cost = next.valid ? 0.5 * next.r.squaredNorm() : std::numeric_limits<double>::infinity();
      if (cost <= st.cost) {
        const double change = (st.cost - cost) / std::max(st.cost, 1e-300);
        st.positions = cand;
        st.cost = cost;
        cur = std::move(next);
        lambda = std::max(lambda * 0.1, 1e-12);
        stepped = true;
        ++st.iterations;
        st.cost_trace.push_back(cost);
        if (change < opt.rel_cost_tol) return st;
        break;
      }
      lambda *= 10.0;
    }
    if (!stepped) {
      // damping exhausted: accept as converged only at a numerical minimum
      if (g.norm() <= 1e-6 * std::sqrt(scale) * std::max(1.0, std::sqrt(st.cost))) break;
      fail("damping limit reached without decrease");
    }
  }
  if (!st.positions.allFinite()) fail("non-finite estimate");
  return st;
}

struct TrialRecord {
  std::size_t trial = 0;
  bool failed = false;
  double epsilon_t = 0.0;
  double epsilon_r = 0.0;
  double epsilon_r_features = 0.0;
  int iterations = 0;
  std::string error;
};

struct McReport {
  std::size_t trials = 0;
  std::size_t failures = 0;
  double empirical_relative_mse = 0.0;  // mean epsilon_r over successful trials, m^2
  double bound = 0.0;                   // relative SPEB at the allocation, m^2
  double ratio = 0.0;
  std::vector<TrialRecord> per_trial;
};

struct MonteCarloOptions {
  double init_jitter = 0.1;  // m
  unsigned jobs = 1;
  EstimatorOptions estimator;
};

/// One trial: simulate, estimate from a jittered truth, score against truth.
inline TrialRecord run_trial(const Scenario& s, const BitAllocation& bits, const Eigen::VectorXd& truth,
                             std::uint64_t seed, std::size_t trial, const MonteCarloOptions& opt) {
  TrialRecord rec;
  rec.trial = trial;
  Rng rng = detail::derived_rng(seed, 0x4Du, trial);
  std::normal_distribution<double> jitter(0.0, opt.init_jitter);
  try {
    const ObservationSet obs = simulate_observation_set(s, bits, rng);
    Eigen::VectorXd init = truth;
    for (Eigen::Index k = 0; k < init.size(); ++k) init[k] += jitter(rng);
    const EstimateState est = estimate_positions(obs, s, bits, init, opt.estimator);
    const RelativeError e = relative_error(truth, est.positions, s.n_features());
    rec.epsilon_t = e.epsilon_t;
    rec.epsilon_r = e.epsilon_r;
    rec.epsilon_r_features = e.epsilon_r_features;
    rec.iterations = est.iterations;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::estimation_failure) throw;
    rec.failed = true;
    rec.error = e.what();
  }
  return rec;
}

/// Monte Carlo comparison of the empirical relative MSE against the relative
/// SPEB. Trials use streams derived from (seed, trial), so the report does not
/// depend on `jobs`.
inline McReport run_monte_carlo(const Scenario& s, const BitAllocation& bits, std::size_t trials, std::uint64_t seed,
                                const MonteCarloOptions& opt = {}) {
  if (trials < 1) throw Error(ErrorCode::invalid_input, "trials must be at least 1");
  s.validate();
  check_allocation(s, bits.span());
  if (!bits.is_integral()) throw Error(ErrorCode::invalid_input, "Monte Carlo needs an integer allocation");
  McReport rep;
  rep.trials = trials;
  rep.bound = relative_speb(s, bits);
  rep.per_trial.resize(trials);
  const Eigen::VectorXd truth = stack_positions(s);

  const unsigned workers = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(trials)));
  if (workers == 1) {
    for (std::size_t k = 0; k < trials; ++k) rep.per_trial[k] = run_trial(s, bits, truth, seed, k, opt);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = next++; k < trials; k = next++) rep.per_trial[k] = run_trial(s, bits, truth, seed, k, opt);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  double sum = 0.0;
  for (const auto& r : rep.per_trial) {
    if (r.failed) {
      ++rep.failures;
    } else {
      sum += r.epsilon_r;
    }
  }
  const std::size_t ok = trials - rep.failures;
  if (ok == 0) throw Error(ErrorCode::estimation_failure, "every Monte Carlo trial failed");
  rep.empirical_relative_mse = sum / static_cast<double>(ok);
  rep.ratio = rep.empirical_relative_mse / rep.bound;
  return rep;
}

}  // namespace vbl
