#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"

using namespace vbl;
namespace vt = vbl::testing;

namespace {

Eigen::MatrixXd translation_vectors(std::size_t nodes) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * nodes), 3);
  for (std::size_t n = 0; n < nodes; ++n) v.block<3, 3>(static_cast<Eigen::Index>(3 * n), 0).setIdentity();
  return v;
}

Scenario random_small(std::uint64_t seed) {
  return generate_random_scenario(2 + seed % 3, 1 + (seed / 3) % 5, 1000 + seed);
}

}  // namespace

TEST(FimOracle, MatchesFiniteDifferenceJacobian) {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scenario s = random_small(seed);
    const BitAllocation b(vt::random_bits(s.dimension(), 0.0, 12.0, rng));
    const Eigen::MatrixXd j = assemble_fim(s, b).matrix;
    const Eigen::MatrixXd ref = vt::finite_difference_fim(s, b);
    EXPECT_LT(vt::rel_frobenius(j, ref), 1e-6) << "seed " << seed;
  }
}

TEST(FimOracle, ToyInstance) {
  const Scenario s = generate_toy_scenario(1);
  const BitAllocation b(s.dimension(), 9.0);
  EXPECT_LT(vt::rel_frobenius(assemble_fim(s, b).matrix, vt::finite_difference_fim(s, b)), 1e-6);
}

TEST(Fim, SymmetricPsdAndTranslationInvariant) {
  std::mt19937_64 rng(22);
  for (int k = 0; k < 30; ++k) {
    const Scenario s = k % 5 == 0 ? generate_paper_scenario(static_cast<std::uint64_t>(k))
                                  : random_small(static_cast<std::uint64_t>(k));
    const BitAllocation b(vt::random_bits(s.dimension(), 0.0, 16.0, rng));
    const Eigen::MatrixXd j = assemble_fim(s, b).matrix;
    EXPECT_LE((j - j.transpose()).norm(), 1e-9 * j.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(j, Eigen::EigenvaluesOnly);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9 * eig.eigenvalues().maxCoeff());
    const Eigen::MatrixXd v = translation_vectors(s.n_features() + s.n_vehicles());
    EXPECT_LE((j * v).norm(), 1e-8 * j.norm() * v.norm());
  }
}

TEST(Fim, AllZeroBitsGiveZeroMatrix) {
  const Scenario s = generate_toy_scenario(2);
  EXPECT_EQ(assemble_fim(s, BitAllocation(s.dimension(), 0.0)).matrix.norm(), 0.0);
}

TEST(Fim, RejectsWrongLength) {
  const Scenario s = generate_toy_scenario(2);
  EXPECT_THROW(assemble_fim(s, BitAllocation(5, 1.0)), Error);
}

TEST(GMatrix, HandEvaluatedOnAxisCase) {
  VehiclePose v0;
  VehiclePose v1{{1, 0, 0}, Eigen::Matrix3d::Identity()};
  const Scenario s = vt::make_scenario({v0, v1}, {{0, 0, 1}}, vt::identity_intrinsics(), 1.0, 1.0, {1.0, 1.0, 1.0});
  const Eigen::Matrix3d g = g_matrix(0, 0, s, BitAllocation(s.dimension(), 1000.0));
  EXPECT_TRUE(g.isApprox(Eigen::Vector3d(1, 1, 0).asDiagonal().toDenseMatrix(), 1e-12));
}

TEST(GMatrix, ZeroBitsAndRank) {
  const Scenario s = generate_toy_scenario(5);
  const MeasurementLayout lay = s.layout();
  BitAllocation b(s.dimension(), 7.0);
  b[lay.pixel(2, 1, 0)] = 0.0;
  b[lay.pixel(2, 1, 1)] = 0.0;
  EXPECT_EQ(g_matrix(2, 1, s, b).norm(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      Eigen::JacobiSVD<Eigen::Matrix3d> svd(g_matrix(i, j, s, BitAllocation(s.dimension(), 7.0)));
      EXPECT_LT(svd.singularValues()[2], 1e-12 * svd.singularValues()[0]);
    }
  }
}

TEST(SMatrix, AxisAlignedPairAndTrace) {
  VehiclePose a{{1, 0, 0}, Eigen::Matrix3d::Identity()};
  VehiclePose c{{0, 0, 0}, Eigen::Matrix3d::Identity()};
  const Scenario s = vt::make_scenario({a, c}, {{0.5, 0, 3}}, vt::identity_intrinsics(), 1.0, 1.0, {1.0, 1.0, 1.0});
  const Eigen::Matrix3d m = s_matrix(0, 1, s, BitAllocation(s.dimension(), 1000.0));
  Eigen::Matrix3d e1 = Eigen::Matrix3d::Zero();
  e1(0, 0) = 1.0;
  EXPECT_TRUE(m.isApprox(e1, 1e-12));

  BitAllocation zero(s.dimension(), 1000.0);
  zero[s.layout().range(0, 1)] = 0.0;
  EXPECT_EQ(s_matrix(0, 1, s, zero).norm(), 0.0);

  const Scenario p = generate_paper_scenario(3);
  std::mt19937_64 rng(4);
  const BitAllocation b(vt::random_bits(p.dimension(), 1.0, 14.0, rng));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) {
      const std::size_t t = p.layout().range(i, j);
      EXPECT_NEAR(s_matrix(i, j, p, b).trace(), information(p.sigma_prime(t), p.half_width(t), b[t]), 1e-15);
    }
  }
}

TEST(ProjectionBasis, OrthonormalComplement) {
  for (auto [nf, nv] : {std::pair<std::size_t, std::size_t>{3, 2}, {1, 3}, {5, 4}, {70, 5}}) {
    const ProjectionBasis pb = projection_basis(nf, nv);
    const auto n = static_cast<Eigen::Index>(3 * (nf + nv));
    EXPECT_EQ(pb.u.cols(), n - 3);
    EXPECT_LT((pb.u_tilde.transpose() * pb.u_tilde - Eigen::Matrix3d::Identity()).norm(), 1e-12);
    EXPECT_LT((pb.u.transpose() * pb.u - Eigen::MatrixXd::Identity(n - 3, n - 3)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((pb.u.transpose() * pb.u_tilde).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(projection_basis(70, 5).u.cols(), 222);
  EXPECT_EQ(projection_basis(3, 2).u, projection_basis(3, 2).u);
}

TEST(RelativeSpeb, EigendecompositionOracle) {
  const Scenario s = generate_toy_scenario(1);
  const BitAllocation inf_bits(s.dimension(), 1000.0);
  const double ref = vt::eigen_speb(assemble_fim(s, inf_bits).matrix);
  EXPECT_NEAR(relative_speb(s, inf_bits), ref, 1e-9 * ref);
  EXPECT_NEAR(infinite_bit_speb(s), ref, 1e-9 * ref);

  std::mt19937_64 rng(30);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scenario r = generate_random_scenario(3 + seed % 2, 2 + seed % 4, seed);
    const BitAllocation b(vt::random_bits(r.dimension(), 2.0, 14.0, rng));
    const double e = vt::eigen_speb(assemble_fim(r, b).matrix);
    EXPECT_NEAR(relative_speb(r, b), e, 1e-8 * e) << "seed " << seed;
    EXPECT_NEAR(SpebEvaluator(r).speb(b.span()), e, 1e-8 * e) << "seed " << seed;
  }
}

TEST(RelativeSpeb, StructuredRouteMatchesDenseOnPaperScenario) {
  const Scenario s = generate_paper_scenario(1);
  const SpebEvaluator ev(s);
  std::mt19937_64 rng(31);
  for (int k = 0; k < 3; ++k) {
    const BitAllocation b(vt::random_bits(s.dimension(), 3.0, 12.0, rng));
    const double dense = relative_speb(s, b);
    EXPECT_NEAR(ev.speb(b.span()), dense, 1e-6 * dense);
  }
}

TEST(RelativeSpeb, ScalesWithNoiseVariance) {
  const Scenario base = generate_toy_scenario(6);
  Scenario scaled = base;
  for (double& v : scaled.sigma_pixel) v *= 3.0;
  for (double& v : scaled.sigma_range) v *= 3.0;
  EXPECT_NEAR(infinite_bit_speb(scaled), 9.0 * infinite_bit_speb(base), 1e-9 * infinite_bit_speb(scaled));
}

TEST(RelativeSpeb, MonotoneInEveryCoordinate) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int k = 0; k < 40; ++k) {
    const Scenario s = random_small(static_cast<std::uint64_t>(k) + 7);
    if (s.n_vehicles() * s.n_features() < 2) continue;
    std::vector<double> lo = vt::random_bits(s.dimension(), 3.0, 10.0, rng);
    std::vector<double> hi = lo;
    for (double& x : hi) x += u(rng) * (u(rng) < 1.5 ? 1.0 : 0.0);
    double a, b;
    try {
      a = relative_speb(s, BitAllocation(lo));
      b = relative_speb(s, BitAllocation(hi));
    } catch (const Error&) {
      continue;  // unobservable random geometry
    }
    EXPECT_LE(b, a * (1.0 + 1e-12));
  }
}

TEST(RelativeSpeb, RigidMotionInvariance) {
  std::mt19937_64 rng(33);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scenario s = generate_random_scenario(3, 4, 50 + seed);
    const BitAllocation b(vt::random_bits(s.dimension(), 3.0, 12.0, rng));
    const double base = relative_speb(s, b);

    const Eigen::Matrix3d q =
        Eigen::AngleAxisd(0.3 + 0.2 * static_cast<double>(seed), Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    Scenario rot = s;
    for (auto& v : rot.vehicles) {
      v.position = q * v.position;
      v.rotation = q * v.rotation;
    }
    for (auto& f : rot.features) f.position = q * f.position;
    EXPECT_NEAR(relative_speb(rot, b), base, 1e-8 * base);

    Scenario moved = s;
    const Eigen::Vector3d t(3.0, -7.0, 1.5);
    for (auto& v : moved.vehicles) v.position += t;
    for (auto& f : moved.features) f.position += t;
    EXPECT_NEAR(relative_speb(moved, b), base, 1e-10 * base);
  }
}

TEST(RelativeSpeb, UnobservableConfigurations) {
  const Scenario s = generate_toy_scenario(1);
  BitAllocation no_range(s.dimension(), 8.0);
  no_range[s.layout().range(0, 1)] = 0.0;
  try {
    relative_speb(s, no_range);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unobservable);
  }
  EXPECT_TRUE(std::isinf(SpebEvaluator(s).speb_or_inf(no_range.span())));

  // two vehicles and a single feature leave a rotation about the baseline free
  const Scenario tiny = vt::ring(2, {{0.2, 0.1, 0.0}});
  EXPECT_THROW(relative_speb(tiny, BitAllocation(tiny.dimension(), 10.0)), Error);
  EXPECT_TRUE(std::isinf(SpebEvaluator(tiny).speb_or_inf(BitAllocation(tiny.dimension(), 10.0).span())));
}

TEST(Gradient, NonPositive) {
  std::mt19937_64 rng(40);
  const Scenario s = generate_paper_scenario(2);
  const auto g = speb_gradient(s, BitAllocation(vt::random_bits(s.dimension(), 1.0, 10.0, rng)));
  for (double x : g) EXPECT_LE(x, 0.0);
}

TEST(Gradient, MatchesCentralDifferences) {
  const Scenario s = generate_toy_scenario(1);
  const SpebEvaluator ev(s);
  std::mt19937_64 rng(41);
  for (int k = 0; k < 20; ++k) {
    const std::vector<double> b = vt::random_bits(s.dimension(), 1.0, 12.0, rng);
    const std::vector<double> g = ev.gradient(b);
    std::vector<double> fd(b.size());
    double scale = 0.0;
    for (std::size_t t = 0; t < b.size(); ++t) {
      fd[t] = vt::extended_partial(s, b, t);
      scale = std::max(scale, std::abs(fd[t]));
    }
    for (std::size_t t = 0; t < b.size(); ++t)
      EXPECT_NEAR(g[t], fd[t], 1e-6 * std::abs(fd[t]) + 1e-10 * scale) << "point " << k << " entry " << t;
  }
}

TEST(Gradient, SubsetMatchesFull) {
  const Scenario s = generate_paper_scenario(3);
  const SpebEvaluator ev(s);
  std::mt19937_64 rng(42);
  const std::vector<double> b = vt::random_bits(s.dimension(), 2.0, 9.0, rng);
  const std::vector<double> full = ev.gradient(b);
  const std::vector<std::size_t> subset = {0, 17, 350, 701, 709};
  std::vector<double> part(b.size());
  SpebEvaluator::Workspace ws;
  ev.gradient(b, part, ws, subset);
  for (std::size_t t = 0; t < b.size(); ++t) {
    if (std::find(subset.begin(), subset.end(), t) != subset.end()) {
      EXPECT_NEAR(part[t], full[t], 1e-12 * std::abs(full[t]));
    } else {
      EXPECT_EQ(part[t], 0.0);
    }
  }
}

TEST(Gradient, NearlyUselessRangeHasTinyComponent) {
  Scenario s = vt::ring(3, {{0.3, 0.2, 0.1}, {-0.4, 0.1, -0.2}, {0.1, -0.5, 0.3}});
  const std::size_t weak = s.layout().range(0, 2);
  s.sigma_range[weak - s.layout().pixel_count()] = 1e6;
  const auto g = speb_gradient(s, BitAllocation(s.dimension(), 8.0));
  double big = 0.0;
  for (double x : g) big = std::max(big, std::abs(x));
  EXPECT_LT(std::abs(g[weak]), 1e-6 * big);
}

TEST(Convexity, PairwiseCombinationsAboveThreshold) {
  const Scenario s = generate_toy_scenario(1);
  const auto thr = vt::convex_thresholds(s);
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> b1(thr.size()), b2(thr.size()), mix(thr.size());
    for (std::size_t t = 0; t < thr.size(); ++t) {
      b1[t] = thr[t] + 8.0 * u(rng);
      b2[t] = thr[t] + 8.0 * u(rng);
    }
    const double lam = u(rng);
    for (std::size_t t = 0; t < thr.size(); ++t) mix[t] = lam * b1[t] + (1.0 - lam) * b2[t];
    const double p1 = relative_speb(s, BitAllocation(b1));
    const double p2 = relative_speb(s, BitAllocation(b2));
    const double rhs = lam * p1 + (1.0 - lam) * p2;
    EXPECT_LE(relative_speb(s, BitAllocation(mix)), rhs * (1.0 + 1e-9));
  }
}

TEST(NormalizedInformation, InflectionSitsJustAboveLogA) {
  // f'' changes sign once; locate it by bisection on the sign of the second difference
  for (double a : {25.6, 62.5, 75.0, 300.0}) {
    auto d2 = [a](double x) {
      const double h = 1e-3;
      return vt::normalized_information(x + h, a) - 2.0 * vt::normalized_information(x, a) +
             vt::normalized_information(x - h, a);
    };
    double lo = std::log2(a) - 1.0, hi = std::log2(a) + 1.0;
    ASSERT_GT(d2(lo), 0.0);
    ASSERT_LT(d2(hi), 0.0);
    for (int k = 0; k < 60; ++k) ((d2(0.5 * (lo + hi)) > 0.0) ? lo : hi) = 0.5 * (lo + hi);
    const double gap = lo - std::log2(a);
    EXPECT_GT(gap, 0.0);
    EXPECT_LT(gap, 0.05);
  }
}

TEST(NormalizedInformation, ConcaveBeyondInflection) {
  for (double a : {25.6, 62.5, 75.0}) {
    const double h = 0.05;
    for (double x = std::log2(a) + 0.1; x <= std::log2(a) + 20.0; x += 0.05) {
      const double d2 = vt::normalized_information(x + h, a) - 2.0 * vt::normalized_information(x, a) +
                        vt::normalized_information(x - h, a);
      EXPECT_LE(d2, 1e-12) << "a=" << a << " x=" << x;
    }
  }
}
