#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vbl/bits.hpp"
#include "vbl/error.hpp"
#include "vbl/fisher.hpp"
#include "vbl/measurement.hpp"
#include "vbl/scene.hpp"

namespace vbl {

struct BudgetProblem {
  Scenario scenario;
  long budget = 0;          // total bits B
  double delta = 0.05;      // grid step of the camera share m
  int rounding_trials = 100;
  std::uint64_t seed = 0;

  void validate() const {
    scenario.validate();
    if (budget < 1) throw Error(ErrorCode::invalid_input, "bit budget must be at least 1");
    if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::invalid_input, "delta must lie in (0, 1)");
    if (rounding_trials < 1) throw Error(ErrorCode::invalid_input, "rounding trials must be at least 1");
  }
};

struct VgdOptions {
  double b_min = 0.01;            // floor during continuous optimization
  double rel_tol = 1e-5;          // stop on |dP/P| below this
  int max_iterations = 1000;      // per grid point
  double base_step = 1.0;         // largest per-entry move of a random step, bits
  int redraws = 20;
  double line_search_max = 2.0;   // largest per-entry move of a line-search step, bits
  int line_search_evals = 24;
  int patience = 1;               // consecutive small changes before stopping
};

struct DecouplingOptions {
  int rounds = 5;                 // N0
  int inner_steps = 50;
  double rel_tol = 1e-5;
  double b_min = 0.01;
  int backtracks = 10;
};

struct SaSchedule {
  std::optional<double> initial_temperature;  // auto-calibrated when empty
  double cooling_factor = 0.95;
  int moves_per_temperature = 200;
  double stop_acceptance = 0.01;
  double min_temperature_ratio = 1e-6;
  int calibration_moves = 100;
  double calibration_acceptance = 0.8;
  int max_levels = 100000;

  void validate() const {
    if (!(cooling_factor > 0.0 && cooling_factor < 1.0)) {
      throw Error(ErrorCode::invalid_input, "cooling factor must lie in (0, 1)");
    }
    if (moves_per_temperature < 1) throw Error(ErrorCode::invalid_input, "moves per temperature must be >= 1");
    if (initial_temperature && !(*initial_temperature >= 0.0)) {
      throw Error(ErrorCode::invalid_input, "initial temperature must be nonnegative");
    }
  }
};

/// Continuous optimum found at one grid point of the camera share m.
struct GridPoint {
  double m = 0.0;
  double speb = std::numeric_limits<double>::infinity();
  long iterations = 0;
  bool feasible = false;
};

struct AllocationResult {
  BitAllocation allocation;  // integer entries summing to the budget
  double speb = std::numeric_limits<double>::infinity();  // m^2
  double m_star = 0.0;
  long iterations = 0;
  double wall_ms = 0.0;
  std::string algorithm;
  std::vector<GridPoint> grid;
  std::vector<double> trace;  // objective sequence of the selected run
  std::string note;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

/// Independent stream for (master seed, purpose, index).
inline Rng derived_rng(std::uint64_t seed, std::uint32_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

inline std::vector<double> share_grid(double delta) {
  std::vector<double> grid;
  const auto steps = static_cast<long>(std::floor(1.0 / delta + 1e-9));
  for (long k = 1; k <= steps; ++k) {
    const double m = static_cast<double>(k) * delta;
    if (m < 1.0 - 1e-9) grid.push_back(m);
  }
  return grid;
}

inline void finish(AllocationResult& r, const Scenario& s) {
  try {
    r.speb = relative_speb(s, r.allocation);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::unobservable) throw;
    r.speb = std::numeric_limits<double>::infinity();
    if (!r.note.empty()) r.note += "; ";
    r.note += "final allocation is unobservable";
  }
}

inline double camera_share(const MeasurementLayout& lay, std::span<const double> b) {
  const double cam = std::accumulate(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(lay.pixel_count()), 0.0);
  const double all = std::accumulate(b.begin(), b.end(), 0.0);
  return all > 0.0 ? cam / all : 0.0;
}

}  // namespace detail

/// Euclidean projection of the entries `idx` of `b` onto
/// { x : x_t >= floor, sum x_t = total }. Returns false if infeasible.
inline bool project_fixed_sum(std::span<double> b, std::span<const std::size_t> idx, double total, double floor) {
  const std::size_t n = idx.size();
  if (n == 0) return true;
  const double mass = total - floor * static_cast<double>(n);
  if (mass < -1e-12) return false;
  std::vector<double> y(n);
  for (std::size_t k = 0; k < n; ++k) y[k] = b[idx[k]] - floor;
  std::vector<double> sorted = y;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - mass) / static_cast<double>(k + 1);
    if (k + 1 == n || sorted[k + 1] <= candidate) {
      theta = candidate;
      break;
    }
  }
  for (std::size_t k = 0; k < n; ++k) b[idx[k]] = floor + std::max(y[k] - theta, 0.0);
  return true;
}

inline std::vector<std::size_t> index_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> v(last - first);
  std::iota(v.begin(), v.end(), first);
  return v;
}

/// Equal split: floor(B/D) bits each, the remainder to the first entries.
inline AllocationResult uniform_allocate(const BudgetProblem& p) {
  const auto start = detail::Clock::now();
  p.validate();
  const std::size_t dim = p.scenario.dimension();
  const auto d = static_cast<long>(dim);
  AllocationResult r;
  r.algorithm = "uniform";
  std::vector<double> bits(dim, static_cast<double>(p.budget / d));
  for (long t = 0; t < p.budget % d; ++t) bits[static_cast<std::size_t>(t)] += 1.0;
  r.allocation = BitAllocation(std::move(bits));
  r.m_star = detail::camera_share(p.scenario.layout(), r.allocation.span());
  detail::finish(r, p.scenario);
  r.wall_ms = detail::elapsed_ms(start);
  return r;
}

/// Starting point for share m: camera entries split mB in proportion to
/// 1/(sigma' log2 W_k), range entries split (1-m)B the same way.
inline BitAllocation initial_allocation(double m, const BudgetProblem& p) {
  if (!(m > 0.0 && m < 1.0)) throw Error(ErrorCode::invalid_input, "camera share must lie in (0, 1)");
  const Scenario& s = p.scenario;
  const MeasurementLayout lay = s.layout();
  std::vector<double> w(lay.dimension());
  double cam = 0.0;
  double rng = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t) {
    const double lw = std::log2(s.half_width(t));
    if (!(lw > 0.0)) throw Error(ErrorCode::invalid_input, "range limits must exceed 1 for proportional start");
    w[t] = 1.0 / (s.sigma_prime(t) * lw);
    (lay.is_pixel(t) ? cam : rng) += w[t];
  }
  const auto budget = static_cast<double>(p.budget);
  for (std::size_t t = 0; t < w.size(); ++t) {
    w[t] = lay.is_pixel(t) ? m * budget * w[t] / cam : (1.0 - m) * budget * w[t] / rng;
  }
  return BitAllocation(std::move(w));
}

/// Randomized rounding: floor every entry, then hand the remaining bits to
/// distinct entries chosen uniformly at random. Keeps the best of `trials`.
inline BitAllocation discretize(const SpebEvaluator& ev, std::span<const double> real, long budget, int trials,
                                Rng& rng, std::vector<double>* trial_values = nullptr) {
  if (trials < 1) throw Error(ErrorCode::invalid_input, "rounding trials must be at least 1");
  const double total = std::accumulate(real.begin(), real.end(), 0.0);
  if (total > static_cast<double>(budget) + 1e-6) {
    throw Error(ErrorCode::invalid_input, "real allocation exceeds the budget");
  }
  const std::size_t dim = real.size();
  std::vector<double> base(dim);
  long floored = 0;
  for (std::size_t t = 0; t < dim; ++t) {
    // absorb round-off just below an integer
    base[t] = std::floor(real[t] + 1e-9);
    floored += static_cast<long>(base[t]);
  }
  const long remaining = budget - floored;
  const long per_entry = remaining / static_cast<long>(dim);
  const auto extra = static_cast<std::size_t>(remaining % static_cast<long>(dim));
  for (double& b : base) b += static_cast<double>(per_entry);
  if (extra == 0) {
    if (trial_values) trial_values->assign(1, ev.speb_or_inf(base));
    return BitAllocation(std::move(base));
  }

  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), 0);
  SpebEvaluator::Workspace ws;
  std::vector<double> best;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<double> candidate(dim);
  if (trial_values) trial_values->clear();
  for (int trial = 0; trial < trials; ++trial) {
    // partial Fisher-Yates: first `extra` positions are a uniform sample
    for (std::size_t k = 0; k < extra; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, dim - 1);
      std::swap(order[k], order[pick(rng)]);
    }
    candidate = base;
    for (std::size_t k = 0; k < extra; ++k) candidate[order[k]] += 1.0;
    const double v = ev.speb_or_inf(candidate, ws);
    if (trial_values) trial_values->push_back(v);
    if (best.empty() || v < best_value) {
      best = candidate;
      best_value = v;
    }
  }
  return BitAllocation(std::move(best));
}

namespace detail {

struct Blocks {
  std::vector<std::size_t> camera;
  std::vector<std::size_t> range;
};

inline Blocks blocks(const MeasurementLayout& lay) {
  return {index_range(0, lay.pixel_count()), index_range(lay.pixel_count(), lay.dimension())};
}

inline double block_sum(std::span<const double> b, std::span<const std::size_t> idx) {
  double s = 0.0;
  for (std::size_t t : idx) s += b[t];
  return s;
}

/// Descent direction -g scaled per block so its largest entry has unit size.
inline void scaled_direction(std::span<const double> g, const Blocks& blk, std::span<double> d) {
  for (const auto* idx : {&blk.camera, &blk.range}) {
    double big = 0.0;
    for (std::size_t t : *idx) big = std::max(big, std::abs(g[t]));
    for (std::size_t t : *idx) d[t] = big > 0.0 ? -g[t] / big : 0.0;
  }
}

struct StepProbe {
  const SpebEvaluator& ev;
  const Blocks& blk;
  std::span<const double> base;
  std::span<const double> dir;
  double cam_total;
  double rng_total;
  double floor;
  SpebEvaluator::Workspace& ws;
  std::vector<double> point;

  double operator()(double eta) {
    point.assign(base.begin(), base.end());
    for (std::size_t t = 0; t < point.size(); ++t) point[t] += eta * dir[t];
    project_fixed_sum(point, blk.camera, cam_total, floor);
    project_fixed_sum(point, blk.range, rng_total, floor);
    return ev.speb_or_inf(point, ws);
  }
};

struct ContinuousRun {
  std::vector<double> bits;
  double speb = std::numeric_limits<double>::infinity();
  long iterations = 0;
  std::vector<double> trace;
};

inline ContinuousRun vgd_descend(const SpebEvaluator& ev, std::vector<double> b, const Blocks& blk,
                                 std::span<const double> threshold, const VgdOptions& opt, Rng& rng) {
  ContinuousRun run;
  const double cam_total = block_sum(b, blk.camera);
  const double rng_total = block_sum(b, blk.range);
  if (!project_fixed_sum(b, blk.camera, cam_total, opt.b_min) ||
      !project_fixed_sum(b, blk.range, rng_total, opt.b_min)) {
    return run;
  }
  SpebEvaluator::Workspace ws;
  double pr = ev.speb_or_inf(b, ws);
  if (!std::isfinite(pr)) return run;
  run.trace.push_back(pr);

  std::vector<double> grad(b.size());
  std::vector<double> dir(b.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  int small = 0;

  for (long it = 0; it < opt.max_iterations; ++it) {
    ev.gradient(b, grad, ws);
    scaled_direction(grad, blk, dir);
    StepProbe probe{ev, blk, b, dir, cam_total, rng_total, opt.b_min, ws, {}};

    bool settled = true;
    for (std::size_t t = 0; t < b.size() && settled; ++t) settled = b[t] >= threshold[t];

    double best = pr;
    std::vector<double> best_point;
    if (settled) {
      // golden-section search over the step length
      double lo = 0.0;
      double hi = opt.line_search_max;
      double x1 = hi - golden * (hi - lo);
      double x2 = lo + golden * (hi - lo);
      double f1 = probe(x1);
      if (f1 < best) { best = f1; best_point = probe.point; }
      double f2 = probe(x2);
      if (f2 < best) { best = f2; best_point = probe.point; }
      for (int k = 2; k < opt.line_search_evals; ++k) {
        if (f1 <= f2) {
          hi = x2; x2 = x1; f2 = f1;
          x1 = hi - golden * (hi - lo);
          f1 = probe(x1);
          if (f1 < best) { best = f1; best_point = probe.point; }
        } else {
          lo = x1; x1 = x2; f1 = f2;
          x2 = lo + golden * (hi - lo);
          f2 = probe(x2);
          if (f2 < best) { best = f2; best_point = probe.point; }
        }
      }
    } else {
      for (int k = 0; k < opt.redraws; ++k) {
        const double v = probe(opt.base_step * unit(rng));
        if (v < best) {
          best = v;
          best_point = probe.point;
          break;
        }
      }
    }
    ++run.iterations;
    if (best_point.empty()) break;  // no improving step
    const double change = (pr - best) / pr;
    b = std::move(best_point);
    pr = best;
    run.trace.push_back(pr);
    small = change <= opt.rel_tol ? small + 1 : 0;
    if (small >= opt.patience) break;
  }
  run.bits = std::move(b);
  run.speb = pr;
  return run;
}

inline std::vector<double> concavity_thresholds(const SpebEvaluator& ev) {
  std::vector<double> thr(ev.dimension());
  for (std::size_t t = 0; t < thr.size(); ++t) thr[t] = std::log2(ev.half_width(t) / ev.sigma_prime(t));
  return thr;
}

/// Picks the best grid point (lowest P_r, ties to lower m) and discretizes it.
inline AllocationResult select_and_round(const BudgetProblem& p, const SpebEvaluator& ev,
                                         std::vector<GridPoint> grid, std::vector<ContinuousRun> runs,
                                         std::string name) {
  AllocationResult r;
  r.algorithm = std::move(name);
  r.grid = std::move(grid);
  std::size_t chosen = runs.size();
  for (std::size_t g = 0; g < runs.size(); ++g) {
    r.iterations += runs[g].iterations;
    if (!r.grid[g].feasible) continue;
    if (chosen == runs.size() || runs[g].speb < runs[chosen].speb) chosen = g;
  }
  Rng rounding = derived_rng(p.seed, 0x52u);
  if (chosen == runs.size()) {
    // nothing observable on the grid: round the proportional start at m = 1/2
    r.note = "no feasible camera share on the grid";
    r.m_star = 0.5;
    r.allocation = discretize(ev, initial_allocation(0.5, p).span(), p.budget, p.rounding_trials, rounding);
    return r;
  }
  r.m_star = r.grid[chosen].m;
  r.trace = std::move(runs[chosen].trace);
  r.allocation = discretize(ev, runs[chosen].bits, p.budget, p.rounding_trials, rounding);
  return r;
}

}  // namespace detail

/// Variance-based gradient descent over a grid of camera shares.
///
/// Each grid point starts from `initial_allocation` and runs projected descent
/// with per-block fixed sums. Once every entry sits above log2(W_k/sigma'),
/// where the objective is convex, each step is a golden-section line search;
/// below that a random step length is drawn and only improving steps are kept.
inline AllocationResult vgd_allocate(const BudgetProblem& p, const VgdOptions& opt = {}) {
  const auto start = detail::Clock::now();
  p.validate();
  const SpebEvaluator ev(p.scenario);
  const auto blk = detail::blocks(ev.layout());
  const auto thr = detail::concavity_thresholds(ev);
  const auto shares = detail::share_grid(p.delta);

  std::vector<GridPoint> grid;
  std::vector<detail::ContinuousRun> runs;
  for (std::size_t g = 0; g < shares.size(); ++g) {
    Rng rng = detail::derived_rng(p.seed, 0x56u, g);
    auto run = detail::vgd_descend(ev, initial_allocation(shares[g], p).values(), blk, thr, opt, rng);
    grid.push_back({shares[g], run.speb, run.iterations, std::isfinite(run.speb)});
    runs.push_back(std::move(run));
  }
  AllocationResult r = detail::select_and_round(p, ev, std::move(grid), std::move(runs), "vgd");
  detail::finish(r, p.scenario);
  r.wall_ms = detail::elapsed_ms(start);
  return r;
}

/// Projected-gradient refinement of the entries `idx` with their sum held
/// fixed. Returns the objective after refinement and the number of steps.
inline std::pair<double, long> optimize_fixed_sum(const SpebEvaluator& ev, std::vector<double>& b,
                                                  std::span<const std::size_t> idx, const DecouplingOptions& opt,
                                                  SpebEvaluator::Workspace& ws) {
  const double total = detail::block_sum(b, idx);
  std::vector<double> grad(b.size());
  std::vector<double> trial;
  double pr = ev.speb_or_inf(b, ws);
  if (!std::isfinite(pr) || idx.size() < 2) return {pr, 0};
  long steps = 0;
  for (int it = 0; it < opt.inner_steps; ++it) {
    ev.gradient(b, grad, ws, idx);
    double big = 0.0;
    for (std::size_t t : idx) big = std::max(big, std::abs(grad[t]));
    if (!(big > 0.0)) break;
    ++steps;
    bool improved = false;
    double eta = 1.0;
    for (int k = 0; k <= opt.backtracks; ++k, eta *= 0.5) {
      trial = b;
      for (std::size_t t : idx) trial[t] -= eta * grad[t] / big;
      project_fixed_sum(trial, idx, total, opt.b_min);
      const double v = ev.speb_or_inf(trial, ws);
      if (v < pr) {
        const double change = (pr - v) / pr;
        b.swap(trial);
        pr = v;
        improved = change > opt.rel_tol;
        break;
      }
    }
    if (!improved) break;
  }
  return {pr, steps};
}

/// Decoupled optimization: bits are arranged as an N_f x 2N_v camera matrix
/// and a symmetric N_v x N_v range matrix, and each row and column is
/// re-optimized in turn with its sum held fixed.
inline AllocationResult decoupling_allocate(const BudgetProblem& p, const DecouplingOptions& opt = {}) {
  const auto start = detail::Clock::now();
  p.validate();
  if (opt.rounds < 1) throw Error(ErrorCode::invalid_input, "decoupling needs at least one round");
  const SpebEvaluator ev(p.scenario);
  const MeasurementLayout lay = ev.layout();
  const std::size_t nf = lay.n_features();
  const std::size_t nv = lay.n_vehicles();

  std::vector<std::vector<std::size_t>> camera_rows(nf), camera_cols(2 * nv), range_rows(nv);
  for (std::size_t i = 0; i < nf; ++i) {
    for (int k = 0; k < 2; ++k) {
      for (std::size_t j = 0; j < nv; ++j) {
        camera_rows[i].push_back(lay.pixel(i, j, k));
        camera_cols[static_cast<std::size_t>(k) * nv + j].push_back(lay.pixel(i, j, k));
      }
    }
  }
  for (std::size_t a = 0; a < nv; ++a) {
    for (std::size_t c = 0; c < nv; ++c) {
      if (a != c) range_rows[a].push_back(lay.range(a, c));
    }
  }

  const auto shares = detail::share_grid(p.delta);
  const auto budget = static_cast<double>(p.budget);
  std::vector<GridPoint> grid;
  std::vector<detail::ContinuousRun> runs;
  SpebEvaluator::Workspace ws;
  for (double m : shares) {
    detail::ContinuousRun run;
    std::vector<double> b(lay.dimension());
    const double cam = m * budget / static_cast<double>(2 * nv * nf);
    const double rng = 2.0 * (1.0 - m) * budget / static_cast<double>(nv * (nv - 1));
    for (std::size_t t = 0; t < b.size(); ++t) b[t] = lay.is_pixel(t) ? cam : rng;
    double pr = ev.speb_or_inf(b, ws);
    if (std::isfinite(pr) && cam >= opt.b_min && rng >= opt.b_min) {
      run.trace.push_back(pr);
      for (int round = 0; round < opt.rounds; ++round) {
        // camera matrix rows then columns, then the range matrix (symmetric,
        // so its columns coincide with its rows)
        for (const auto* sets : {&camera_rows, &camera_cols, &range_rows, &range_rows}) {
          for (const auto& idx : *sets) {
            const auto [v, steps] = optimize_fixed_sum(ev, b, idx, opt, ws);
            pr = v;
            run.iterations += steps;
          }
        }
        run.trace.push_back(pr);
      }
      run.bits = b;
      run.speb = pr;
    }
    grid.push_back({m, run.speb, run.iterations, std::isfinite(run.speb)});
    runs.push_back(std::move(run));
  }
  AllocationResult r = detail::select_and_round(p, ev, std::move(grid), std::move(runs), "decouple");
  detail::finish(r, p.scenario);
  r.wall_ms = detail::elapsed_ms(start);
  return r;
}

/// Accepted-move record for simulated annealing (tests and diagnostics).
struct SaTrace {
  std::vector<double> accepted;  // objective after each accepted move
  bool conserved = true;         // every visited allocation summed to B, entries >= 0
  double initial_temperature = 0.0;
  long levels = 0;
};

/// Simulated annealing over integer allocations. A move takes one bit from a
/// random positive entry and gives it to another random entry; acceptance is
/// Metropolis under a geometric cooling schedule. Returns the best state seen.
inline AllocationResult sa_allocate(const BudgetProblem& p, const SaSchedule& schedule = {}, SaTrace* trace = nullptr) {
  const auto start = detail::Clock::now();
  p.validate();
  schedule.validate();
  const SpebEvaluator ev(p.scenario);
  const std::size_t dim = ev.dimension();
  Rng rng = detail::derived_rng(p.seed, 0x5Au);
  std::uniform_int_distribution<std::size_t> any(0, dim - 1);
  std::uniform_int_distribution<std::size_t> other(0, dim - 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SpebEvaluator::Workspace ws;

  std::vector<double> cur(dim, 0.0);
  for (long k = 0; k < p.budget; ++k) cur[any(rng)] += 1.0;

  // move: (from, to) with cur[from] > 0
  auto propose = [&](const std::vector<double>& b) {
    std::size_t from = any(rng);
    while (b[from] <= 0.0) from = any(rng);
    std::size_t to = other(rng);
    if (to >= from) ++to;
    return std::pair{from, to};
  };
  auto check = [&](const std::vector<double>& b) {
    if (!trace) return;
    double s = 0.0;
    for (double x : b) {
      if (x < 0.0) trace->conserved = false;
      s += x;
    }
    if (s != static_cast<double>(p.budget)) trace->conserved = false;
  };

  long moves = 0;
  double cur_value = ev.speb_or_inf(cur, ws);
  if (!std::isfinite(cur_value)) {
    // tight budgets: the even split is observable far more often than a random draw
    const auto d = static_cast<long>(dim);
    std::fill(cur.begin(), cur.end(), static_cast<double>(p.budget / d));
    for (long t = 0; t < p.budget % d; ++t) cur[static_cast<std::size_t>(t)] += 1.0;
    cur_value = ev.speb_or_inf(cur, ws);
  }
  // random walk until the state is observable
  for (long k = 0; !std::isfinite(cur_value) && k < 100000; ++k, ++moves) {
    const auto [from, to] = propose(cur);
    cur[from] -= 1.0;
    cur[to] += 1.0;
    cur_value = ev.speb_or_inf(cur, ws);
  }
  check(cur);
  std::vector<double> best = cur;
  double best_value = cur_value;

  double t0 = 0.0;
  if (schedule.initial_temperature) {
    t0 = *schedule.initial_temperature;
  } else if (std::isfinite(cur_value)) {
    double sum = 0.0;
    int count = 0;
    std::vector<double> probe;
    for (int k = 0; k < schedule.calibration_moves; ++k, ++moves) {
      const auto [from, to] = propose(cur);
      probe = cur;
      probe[from] -= 1.0;
      probe[to] += 1.0;
      const double delta = ev.speb_or_inf(probe, ws) - cur_value;
      if (delta > 0.0 && std::isfinite(delta)) {
        sum += delta;
        ++count;
      }
    }
    if (count > 0) t0 = -(sum / count) / std::log(schedule.calibration_acceptance);
  }
  if (trace) trace->initial_temperature = t0;

  double temp = t0;
  std::vector<double> cand;
  for (int level = 0; level < schedule.max_levels; ++level) {
    long accepted = 0;
    for (int k = 0; k < schedule.moves_per_temperature; ++k, ++moves) {
      const auto [from, to] = propose(cur);
      cand = cur;
      cand[from] -= 1.0;
      cand[to] += 1.0;
      const double v = ev.speb_or_inf(cand, ws);
      const double delta = v - cur_value;
      bool take = false;
      if (std::isfinite(v)) {
        take = delta <= 0.0 || (temp > 0.0 && unit(rng) < std::exp(-delta / temp));
      }
      if (!take) continue;
      cur.swap(cand);
      cur_value = v;
      ++accepted;
      check(cur);
      if (trace) trace->accepted.push_back(v);
      if (v < best_value) {
        best = cur;
        best_value = v;
      }
    }
    if (trace) ++trace->levels;
    const double rate = static_cast<double>(accepted) / schedule.moves_per_temperature;
    if (rate < schedule.stop_acceptance) break;
    temp *= schedule.cooling_factor;
    if (temp < schedule.min_temperature_ratio * t0) break;
  }

  AllocationResult r;
  r.algorithm = "sa";
  r.allocation = BitAllocation(std::move(best));
  r.iterations = moves;
  r.m_star = detail::camera_share(ev.layout(), r.allocation.span());
  detail::finish(r, p.scenario);
  r.wall_ms = detail::elapsed_ms(start);
  return r;
}

}  // namespace vbl
