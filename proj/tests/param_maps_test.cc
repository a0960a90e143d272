#include "softquant/param_maps.h"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "softquant/errors.h"
#include "softquant/implicit_grad.h"
#include "softquant/rng.h"
#include "test_util.h"

namespace softquant {
namespace {

using testing::MaxAbs;
using testing::RandomNormal;

double RelErr(const Vector& g, const Vector& fd) {
  return (g - fd).cwiseAbs().maxCoeff() /
         std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
}

// Finite-difference transpose-Jacobian applied to `cotangent`.
Vector FdVjp(const std::function<Vector(const Vector&)>& fn, const Vector& p,
             const Vector& cotangent) {
  return FiniteDiffJacobian(fn, p, 1e-6).transpose() * cotangent;
}

TEST(Weights, ZeroPrecursorIsUniform) {
  EXPECT_LT(MaxAbs(WeightsFromPrecursor(Vector::Zero(4)) -
                   Vector::Constant(4, 0.25)),
            1e-15);
}

TEST(Weights, ShiftInvariant) {
  // Dyadic entries so that f + c is itself exact.
  const Vector f{{0.125, -1.5, 2.75, 0.0, -0.625}};
  const Vector w = WeightsFromPrecursor(f);
  EXPECT_EQ(MaxAbs(WeightsFromPrecursor(f.array() + 17.0) - w), 0.0);
  EXPECT_NEAR(w.sum(), 1.0, 1e-12);
}

TEST(Weights, DirectFormula) {
  const Vector w = WeightsFromPrecursor(Vector{{0.0, std::log(3.0)}});
  EXPECT_NEAR(w[0], 0.25, 1e-15);
  EXPECT_NEAR(w[1], 0.75, 1e-15);
}

TEST(Weights, LargePrecursorsStayFinite) {
  const Vector w = WeightsFromPrecursor(Vector{{1000.0, 0.0, -1000.0}});
  EXPECT_TRUE(w.allFinite());
  EXPECT_NEAR(w[0], 1.0, 1e-15);
  EXPECT_GE(w[2], 0.0);
}

TEST(Weights, VjpIsTangentToSimplex) {
  Rng rng(2);
  const Vector w = WeightsFromPrecursor(RandomNormal(6, rng));
  const Vector g = VjpWeights(RandomNormal(6, rng), w);
  EXPECT_LT(std::abs(g.sum()), 1e-12);
  EXPECT_EQ(MaxAbs(VjpWeights(Vector::Zero(6), w)), 0.0);
}

TEST(QuantilesFree, Examples) {
  EXPECT_LT(MaxAbs(QuantilesFree(Vector::Zero(3)) - Vector{{1.0, 2.0, 3.0}}),
            1e-15);
  EXPECT_LT(MaxAbs(QuantilesFree(Vector::Constant(2, std::log(2.0))) -
                   Vector{{2.0, 4.0}}),
            1e-15);
}

TEST(QuantilesFree, DifferencesAreExponentials) {
  Rng rng(3);
  const Vector r = RandomNormal(7, rng);
  const Vector q = QuantilesFree(r);
  EXPECT_NEAR(q[0], std::exp(r[0]), 1e-12);
  for (Index j = 1; j < 7; ++j) {
    EXPECT_GT(q[j], q[j - 1]);
    EXPECT_NEAR(q[j] - q[j - 1], std::exp(r[j]), 1e-12);
  }
}

TEST(QuantilesFree, Overflow) {
  EXPECT_THROW(QuantilesFree(Vector{{0.0, 701.0}}), OverflowError);
  EXPECT_NO_THROW(QuantilesFree(Vector{{0.0, 700.0}}));
}

TEST(QuantilesPinned, Examples) {
  EXPECT_LT(MaxAbs(QuantilesPinned(Vector::Zero(2), 0.0, 1.0) -
                   Vector{{0.0, 0.5, 1.0}}),
            1e-15);
  EXPECT_LT(MaxAbs(QuantilesPinned(Vector{{0.0, std::log(3.0)}}, 0.0, 4.0) -
                   Vector{{0.0, 1.0, 4.0}}),
            1e-15);
}

TEST(QuantilesPinned, EndpointsAreExact) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Index m = testing::RandomInt(rng, 2, 12);
    const Vector r = RandomNormal(m - 1, rng, 3.0);
    const double s = 10.0 * rng.Normal();
    const double t = s + 0.01 + 5.0 * rng.Uniform();
    const Vector q = QuantilesPinned(r, s, t);
    ASSERT_EQ(q.size(), m);
    EXPECT_EQ(q[0], s);
    EXPECT_EQ(q[m - 1], t);
    for (Index j = 1; j < m; ++j) EXPECT_GT(q[j], q[j - 1]);
  }
}

TEST(QuantilesPinned, InvalidRange) {
  EXPECT_THROW(QuantilesPinned(Vector::Zero(2), 1.0, 1.0), InvalidRange);
  EXPECT_THROW(QuantilesPinned(Vector::Zero(2), 2.0, 1.0), InvalidRange);
  EXPECT_EQ(MaxAbs(QuantilesPinnedOrConstant(Vector::Zero(2), 1.5, 1.5) -
                   Vector::Constant(3, 1.5)),
            0.0);
}

TEST(Factors, StrictlyPositive) {
  Rng rng(5);
  const Matrix u = FactorsFromPrecursor(RandomNormal(4, 3, rng, 20.0));
  EXPECT_GT(u.minCoeff(), 0.0);
}

TEST(PrecursorSet, InitialValues) {
  const PrecursorSet pinned =
      InitialPrecursors(2, 4, true, Vector{{0.0, -1.0}}, Vector{{3.0, 1.0}});
  EXPECT_EQ(pinned.r.cols(), 3);
  EXPECT_LT(MaxAbs(pinned.Weights(0) - Vector::Constant(4, 0.25)), 1e-15);
  EXPECT_LT(MaxAbs(pinned.Quantiles(1) - Vector{{-1.0, -1.0 / 3, 1.0 / 3, 1.0}}),
            1e-15);
  const PrecursorSet free = InitialPrecursors(2, 3, false);
  EXPECT_EQ(free.r.cols(), 3);
  EXPECT_LT(MaxAbs(free.Quantiles(0) - Vector{{1.0, 2.0, 3.0}}), 1e-15);
}

TEST(ParamVjps, ZeroCotangent) {
  Rng rng(6);
  const Vector r = RandomNormal(4, rng);
  EXPECT_EQ(MaxAbs(VjpQuantilesFree(Vector::Zero(4), r)), 0.0);
  EXPECT_EQ(MaxAbs(VjpQuantilesPinned(Vector::Zero(5), r, 0.0, 1.0)), 0.0);
  EXPECT_EQ(MaxAbs(VjpFactors(Matrix::Zero(2, 2), Matrix::Ones(2, 2))), 0.0);
}

TEST(ParamVjps, FiniteDifferenceSweep) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Index m = testing::RandomInt(rng, 2, 8);
    const Vector p = RandomNormal(m, rng);
    const Vector ct = RandomNormal(m, rng);
    const double s = rng.Normal();
    const double t = s + 0.5 + rng.Uniform();

    EXPECT_LT(RelErr(VjpWeights(ct, WeightsFromPrecursor(p)),
                     FdVjp(WeightsFromPrecursor, p, ct)),
              1e-5);
    EXPECT_LT(RelErr(VjpQuantilesFree(ct, p), FdVjp(QuantilesFree, p, ct)),
              1e-5);
    const Vector rp = p.head(m - 1);
    EXPECT_LT(RelErr(VjpQuantilesPinned(ct, rp, s, t),
                     FdVjp([&](const Vector& r) { return QuantilesPinned(r, s, t); },
                           rp, ct)),
              1e-5);
    const auto exp_map = [](const Vector& v) {
      return Vector(FactorsFromPrecursor(v));
    };
    EXPECT_LT(RelErr(Vector(VjpFactors(ct, FactorsFromPrecursor(p))),
                     FdVjp(exp_map, p, ct)),
              1e-5);
  }
}

}  // namespace
}  // namespace softquant
