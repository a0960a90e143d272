#include "softquant/param_maps.h"

#include <cmath>

#include "softquant/errors.h"

namespace softquant {
namespace {

constexpr double kMaxExponent = 700.0;

// Suffix sums: out[k] = sum_{j >= k} v[j].
Vector ReverseCumsum(const Vector& v) {
  Vector out(v.size());
  double acc = 0.0;
  for (Index k = v.size() - 1; k >= 0; --k) {
    acc += v[k];
    out[k] = acc;
  }
  return out;
}

}  // namespace

Vector WeightsFromPrecursor(const Vector& f) {
  if (f.size() == 0) throw InvalidInput("empty weight precursor");
  if (!f.allFinite()) throw InvalidInput("non-finite weight precursor");
  const Vector e = (f.array() - f.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Vector VjpWeights(const Vector& cotangent, const Vector& weights) {
  return weights.cwiseProduct(
      (cotangent.array() - cotangent.dot(weights)).matrix());
}

Vector QuantilesFree(const Vector& r) {
  if (!r.allFinite()) throw InvalidInput("non-finite quantile precursor");
  if (r.size() > 0 && r.maxCoeff() > kMaxExponent) {
    throw OverflowError("quantile precursor above 700 overflows exp");
  }
  Vector out(r.size());
  double acc = 0.0;
  for (Index k = 0; k < r.size(); ++k) {
    acc += std::exp(r[k]);
    out[k] = acc;
  }
  return out;
}

Vector VjpQuantilesFree(const Vector& cotangent, const Vector& r) {
  return r.array().exp().matrix().cwiseProduct(ReverseCumsum(cotangent));
}

Vector QuantilesPinned(const Vector& r, double s, double t) {
  if (!(s < t)) throw InvalidRange("pinned quantiles need s < t");
  return QuantilesPinnedOrConstant(r, s, t);
}

Vector QuantilesPinnedOrConstant(const Vector& r, double s, double t) {
  if (!std::isfinite(s) || !std::isfinite(t) || s > t) {
    throw InvalidRange("pinned quantiles need finite s <= t");
  }
  const Index m = r.size() + 1;
  Vector out(m);
  out[0] = s;
  if (m == 1) return out;
  if (s == t) return Vector::Constant(m, s);
  const Vector w = WeightsFromPrecursor(r);
  double acc = 0.0;
  for (Index k = 1; k < m; ++k) {
    acc += w[k - 1];
    out[k] = s + (t - s) * acc;
  }
  out[m - 1] = t;
  return out;
}

Vector VjpQuantilesPinned(const Vector& cotangent, const Vector& r, double s,
                          double t) {
  if (r.size() == 0 || s == t) return Vector::Zero(r.size());
  // q[k] = s + (t - s) sum_{l < k} w[l] for k >= 1.
  const Vector w = WeightsFromPrecursor(r);
  const Vector tail = ReverseCumsum(cotangent.tail(r.size()));
  return VjpWeights((t - s) * tail, w);
}

Matrix FactorsFromPrecursor(const Matrix& log_u) {
  return log_u.array().exp().matrix();
}

Matrix VjpFactors(const Matrix& cotangent, const Matrix& factors) {
  return cotangent.cwiseProduct(factors);
}

Vector PrecursorSet::Weights(Index row) const {
  return WeightsFromPrecursor(f.row(row).transpose());
}

Vector PrecursorSet::Quantiles(Index row) const {
  const Vector precursor = r.row(row).transpose();
  if (pinned) return QuantilesPinnedOrConstant(precursor, s[row], t[row]);
  return QuantilesFree(precursor);
}

PrecursorSet InitialPrecursors(Index features, Index levels, bool pinned,
                               const Vector& s, const Vector& t) {
  PrecursorSet set;
  set.pinned = pinned;
  set.f = Matrix::Zero(features, levels);
  set.r = Matrix::Zero(features, pinned ? levels - 1 : levels);
  if (pinned) {
    if (s.size() != features || t.size() != features) {
      throw InvalidInput("pinned precursors need one range per feature");
    }
    set.s = s;
    set.t = t;
  }
  return set;
}

}  // namespace softquant
