#include "softquant/ot_core.h"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "golden.h"
#include "softquant/errors.h"
#include "test_util.h"

namespace softquant {
namespace {

using testing::MaxAbs;
using testing::RandomProbability;
using testing::RandomUniform;

DiscreteMeasure GoldenSource() {
  return {Vector{{0.2, 0.3, 0.5}}, Vector{{0.1, 0.5, 0.8}}};
}
AnchorGrid GoldenTarget() { return {Vector{{0.4, 0.6}}, Vector{{0.0, 1.0}}}; }

Matrix GoldenMatrix(const double* values, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = values[i * cols + j];
  }
  return m;
}

TEST(CostMatrix, ZeroDistance) {
  const Matrix c = CostMatrix(Vector{{0.0}}, Vector{{0.0}});
  EXPECT_EQ(c(0, 0), 0.0);
}

TEST(CostMatrix, SingleAnchor) {
  const Matrix c = CostMatrix(Vector{{0.0, 1.0}}, Vector{{0.5}});
  EXPECT_DOUBLE_EQ(c(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(c(1, 0), 0.25);
}

TEST(CostMatrix, TwoByTwo) {
  const Matrix c = CostMatrix(Vector{{0.2, 0.8}}, Vector{{0.0, 1.0}});
  EXPECT_NEAR(c(0, 0), 0.04, 1e-15);
  EXPECT_NEAR(c(0, 1), 0.64, 1e-15);
  EXPECT_NEAR(c(1, 0), 0.64, 1e-15);
  EXPECT_NEAR(c(1, 1), 0.04, 1e-15);
}

TEST(CostMatrix, RejectsNonFinite) {
  EXPECT_THROW(CostMatrix(Vector{{std::nan("")}}, Vector{{0.0}}), InvalidInput);
  EXPECT_THROW(
      CostMatrix(Vector{{0.0}},
                 Vector{{std::numeric_limits<double>::infinity()}}),
      InvalidInput);
}

TEST(CostSpec, SquaredDifferenceIsSubmodular) {
  CostSpec cost;
  EXPECT_EQ(cost.CrossDerivative(0.3, 0.9), -2.0);
  EXPECT_DOUBLE_EQ(cost.DerivativeX(0.3, 0.9), 2.0 * (0.3 - 0.9));
}

TEST(Measures, Validation) {
  EXPECT_THROW((DiscreteMeasure{Vector{{0.5, 0.6}}, Vector{{0, 1}}}.Validate()),
               InvalidInput);
  EXPECT_THROW((DiscreteMeasure{Vector{{1.0, 0.0}}, Vector{{0, 1}}}.Validate()),
               InvalidInput);
  EXPECT_THROW(
      (DiscreteMeasure{Vector{{0.5, 0.5}}, Vector{{0, std::nan("")}}}.Validate()),
      InvalidInput);
  EXPECT_THROW((AnchorGrid{Vector{{0.5, 0.5}}, Vector{{1, 1}}}.Validate()),
               InvalidInput);
  EXPECT_NO_THROW(UniformGrid(4).Validate());
  EXPECT_EQ(RegularGrid(1)[0], 0.5);
  EXPECT_EQ(RegularGrid(3)[1], 0.5);
}

TEST(SinkhornScaling, SinglePointIsTheOnlyCoupling) {
  const DiscreteMeasure source{Vector{{1.0}}, Vector{{0.3}}};
  const AnchorGrid target{Vector{{1.0}}, Vector{{0.9}}};
  for (double eps : {0.01, 1.0}) {
    const ScalingState s =
        SinkhornScaling(source, target, eps, IterControl::Fixed(3));
    EXPECT_NEAR(PlanPlus(s)(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(PlanMinus(s)(0, 0), 1.0, 1e-15);
  }
}

TEST(SinkhornScaling, LargeEpsilonGivesProductCoupling) {
  Rng rng(3);
  const Vector a = RandomProbability(5, rng);
  const DiscreteMeasure source{a, RandomUniform(5, rng)};
  const AnchorGrid target{RandomProbability(4, rng), RegularGrid(4)};
  for (int l : {1, 2, 10}) {
    const ScalingState s =
        SinkhornScaling(source, target, 1000.0, IterControl::Fixed(l));
    EXPECT_LT(MaxAbs(PlanPlus(s) - a * target.weights.transpose()), 1e-3);
  }
}

TEST(SinkhornScaling, SmallEpsilonTwoPointsIsDiagonal) {
  const DiscreteMeasure source{Vector{{0.5, 0.5}}, Vector{{0.0, 1.0}}};
  const AnchorGrid target{Vector{{0.5, 0.5}}, Vector{{0.0, 1.0}}};
  const ScalingState s =
      SinkhornScaling(source, target, 0.01, IterControl::Fixed(500));
  const Matrix expected{{0.5, 0.0}, {0.0, 0.5}};
  EXPECT_LT(MaxAbs(PlanPlus(s) - expected), 1e-6);
}

TEST(SinkhornScaling, MatchesHighPrecisionOracleAfterThreeIterations) {
  const ScalingState s = SinkhornScaling(GoldenSource(), GoldenTarget(), 0.1,
                                         IterControl::Fixed(3));
  EXPECT_EQ(s.iterations, 3);
  EXPECT_LT(MaxAbs(PlanPlus(s) - GoldenMatrix(golden::kPlanPlusL3, 3, 2)),
            1e-14);
  EXPECT_LT(MaxAbs(PlanMinus(s) - GoldenMatrix(golden::kPlanMinusL3, 3, 2)),
            1e-14);
}

TEST(SinkhornScaling, ConvergedPlanMatchesOracle) {
  const ScalingState s = SinkhornScaling(GoldenSource(), GoldenTarget(), 0.1,
                                         IterControl::Tolerance(1e-14));
  EXPECT_LT(MaxAbs(PlanPlus(s) - GoldenMatrix(golden::kPlanConverged, 3, 2)),
            1e-13);
}

TEST(SinkhornScaling, OneIterationMarginals) {
  const Index n = 6;
  const Index m = 4;
  Rng rng(11);
  const DiscreteMeasure source{UniformWeights(n), RandomUniform(n, rng)};
  const AnchorGrid target = UniformGrid(m);
  const ScalingState s =
      SinkhornScaling(source, target, 0.05, IterControl::Fixed(1));
  EXPECT_LT(MaxAbs(PlanMinus(s).colwise().sum().transpose() - target.weights),
            1e-15);
  EXPECT_LT(MaxAbs(PlanPlus(s).rowwise().sum() - source.weights), 1e-15);
}

TEST(SinkhornScaling, PlansAgreeAtConvergence) {
  Rng rng(5);
  const DiscreteMeasure source{RandomProbability(5, rng), RandomUniform(5, rng)};
  const AnchorGrid target{RandomProbability(4, rng), RegularGrid(4)};
  const ScalingState s = SinkhornScaling(source, target, 0.1,
                                         IterControl::Tolerance(1e-13));
  EXPECT_LT(MaxAbs(PlanPlus(s) - PlanMinus(s)), 1e-9);
}

TEST(SinkhornScaling, UnderflowIsReported) {
  const DiscreteMeasure source{Vector{{0.5, 0.5}}, Vector{{0.0, 50.0}}};
  const AnchorGrid target{Vector{{0.5, 0.5}}, Vector{{0.0, 1.0}}};
  EXPECT_THROW(SinkhornScaling(source, target, 1e-3, IterControl::Fixed(5)),
               UnderflowError);
}

TEST(SinkhornScaling, ToleranceModeGivesUp) {
  Rng rng(2);
  const DiscreteMeasure source{UniformWeights(20), RandomUniform(20, rng)};
  try {
    SinkhornScaling(source, UniformGrid(5), 0.01,
                    IterControl::Tolerance(1e-15, 3));
    FAIL() << "expected MaxIterExceeded";
  } catch (const MaxIterExceeded& e) {
    EXPECT_EQ(e.iterations(), 3);
    EXPECT_GT(e.residual(), 1e-15);
  }
}

TEST(SoftminEps, TwoZeros) {
  const Vector out = SoftminEps(Matrix{{0.0, 0.0}}, 1.0);
  EXPECT_NEAR(out[0], -std::log(2.0), 1e-15);
}

TEST(SoftminEps, SmallEpsilonIsHardMin) {
  const Vector out = SoftminEps(Matrix{{5.0, 100.0}}, 0.01);
  EXPECT_NEAR(out[0], 5.0, 1e-9);
}

TEST(SoftminEps, MatchesOracle) {
  const Vector out = SoftminEps(Matrix{{0.3, 1.2, -0.5}}, 0.5);
  EXPECT_NEAR(out[0], golden::kSoftmin[0], 1e-15);
}

TEST(SoftminEps, MatchesExtendedPrecisionNaive) {
  Rng rng(8);
  const Matrix a = testing::RandomNormal(3, 3, rng);
  const Vector out = SoftminEps(a, 0.5);
  for (Index i = 0; i < 3; ++i) {
    long double sum = 0.0L;
    for (Index j = 0; j < 3; ++j) sum += std::exp(-(long double)a(i, j) / 0.5L);
    const long double naive = -0.5L * std::log(sum);
    EXPECT_NEAR(out[i], static_cast<double>(naive), 1e-12);
  }
}

TEST(LogSinkhorn, SinglePoint) {
  const DiscreteMeasure source{Vector{{1.0}}, Vector{{0.2}}};
  const AnchorGrid target{Vector{{1.0}}, Vector{{0.7}}};
  const TransportSolution sol =
      LogSinkhorn(source, target, 0.1, IterControl::Tolerance(1e-12));
  EXPECT_NEAR(sol.f[0] + sol.g[0], 0.25, 1e-12);
  EXPECT_NEAR(sol.plan(0, 0), 1.0, 1e-12);
}

TEST(LogSinkhorn, AgreesWithScalingForm) {
  Rng rng(21);
  const DiscreteMeasure source{RandomProbability(7, rng), RandomUniform(7, rng)};
  const AnchorGrid target{RandomProbability(4, rng), RegularGrid(4)};
  const ScalingState s =
      SinkhornScaling(source, target, 0.05, IterControl::Fixed(5000));
  const TransportSolution sol =
      LogSinkhorn(source, target, 0.05, IterControl::Tolerance(1e-10));
  EXPECT_LT(sol.residual, 1e-10);
  EXPECT_LT(MaxAbs(sol.plan - PlanPlus(s)), 1e-8);
}

TEST(LogSinkhorn, GibbsStructure) {
  Rng rng(4);
  const DiscreteMeasure source{RandomProbability(6, rng), RandomUniform(6, rng)};
  const AnchorGrid target{RandomProbability(3, rng), RegularGrid(3)};
  const double eps = 0.1;
  const TransportSolution sol =
      LogSinkhorn(source, target, eps, IterControl::Tolerance(1e-12));
  const Matrix c = CostMatrix(source.values, target.values);
  for (Index i = 0; i < 6; ++i) {
    for (Index j = 0; j < 3; ++j) {
      const double expected = std::exp((sol.f[i] + sol.g[j] - c(i, j)) / eps);
      EXPECT_NEAR(sol.plan(i, j) / expected, 1.0, 1e-10);
    }
  }
  EXPECT_LT(MaxAbs(sol.plan.colwise().sum().transpose() - target.weights),
            1e-12);
}

TEST(LogSinkhorn, SurvivesWhereScalingUnderflows) {
  Rng rng(9);
  const DiscreteMeasure source{UniformWeights(50), RandomUniform(50, rng)};
  const AnchorGrid target = UniformGrid(8);
  const TransportSolution sol = LogSinkhorn(
      source, target, 1e-3, IterControl::Tolerance(1e-6, 100000));
  EXPECT_TRUE(sol.f.allFinite());
  EXPECT_TRUE(sol.g.allFinite());
  EXPECT_TRUE(sol.plan.allFinite());
  EXPECT_LT(sol.residual, 1e-6);
}

TEST(LogSinkhorn, MaxIterCarriesResidual) {
  Rng rng(9);
  const DiscreteMeasure source{UniformWeights(30), RandomUniform(30, rng)};
  try {
    LogSinkhorn(source, UniformGrid(6), 1e-3, IterControl::Tolerance(1e-12, 2));
    FAIL() << "expected MaxIterExceeded";
  } catch (const MaxIterExceeded& e) {
    EXPECT_TRUE(std::isfinite(e.residual()));
    EXPECT_EQ(e.iterations(), 2);
  }
}

TEST(SolveTransport, AutoFallsBackToLogDomain) {
  const DiscreteMeasure source{Vector{{0.25, 0.25, 0.5}},
                               Vector{{0.0, 0.4, 50.0}}};
  const AnchorGrid target = UniformGrid(3);
  EXPECT_THROW(SolveTransport(source, target, 1e-3, IterControl::Fixed(10),
                              SolverKind::kScaling),
               UnderflowError);
  const TransportSolution sol = SolveTransport(
      source, target, 1e-3, IterControl::Tolerance(1e-9, 100000));
  EXPECT_TRUE(sol.converged);
  EXPECT_TRUE(sol.plan.allFinite());
  // The far point sends all its mass to the nearest anchor.
  EXPECT_NEAR(sol.plan(2, 2), 1.0 / 3.0, 1e-9);
}

TEST(SolveTransport, ReportsNonConvergenceWithoutThrowing) {
  Rng rng(9);
  const DiscreteMeasure source{UniformWeights(30), RandomUniform(30, rng)};
  const TransportSolution sol = SolveTransport(
      source, UniformGrid(6), 0.01, IterControl::Tolerance(1e-15, 2));
  EXPECT_FALSE(sol.converged);
  EXPECT_EQ(sol.iterations, 2);
}

TEST(RowRescale, MapsOntoUnitInterval) {
  const Vector x{{3.0, -1.0, 1.0}};
  const RowRescale r = RowRescale::Fit(x);
  const Vector z = r.Apply(x);
  EXPECT_EQ(z[0], 1.0);
  EXPECT_EQ(z[1], 0.0);
  EXPECT_DOUBLE_EQ(z[2], 0.5);
}

TEST(RowRescale, ConstantRowMapsToHalfWithZeroGradient) {
  const Vector x = Vector::Constant(4, 2.5);
  const RowRescale r = RowRescale::Fit(x);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.Apply(x), Vector::Constant(4, 0.5));
  EXPECT_EQ(r.Backprop(Vector::Ones(4), r.Apply(x)), Vector::Zero(4));
}

TEST(RowRescale, BackpropMatchesFiniteDifferences) {
  Rng rng(17);
  const Vector x = testing::RandomNormal(6, rng);
  const Vector g = testing::RandomNormal(6, rng);
  const RowRescale r = RowRescale::Fit(x);
  const Vector analytic = r.Backprop(g, r.Apply(x));
  Vector fd(6);
  for (Index i = 0; i < 6; ++i) {
    Vector hi = x;
    Vector lo = x;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    fd[i] = (g.dot(RowRescale::Fit(hi).Apply(hi)) -
             g.dot(RowRescale::Fit(lo).Apply(lo))) /
            2e-6;
  }
  EXPECT_LT(MaxAbs(analytic - fd), 1e-8);
}

}  // namespace
}  // namespace softquant
