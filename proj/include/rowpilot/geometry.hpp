#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

// Small planar geometry kernels, templated on the scalar type.
namespace rowpilot::geometry {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar>
struct Circle {
  Vec2<Scalar> center = Vec2<Scalar>::Zero();
  Scalar radius = Scalar(0);

  bool contains(const Vec2<Scalar>& p, Scalar tol) const {
    return (p - center).norm() <= radius + tol;
  }
};

namespace detail {

template <typename Scalar>
Circle<Scalar> circle_from(const Vec2<Scalar>& a, const Vec2<Scalar>& b) {
  return {(a + b) / Scalar(2), (a - b).norm() / Scalar(2)};
}

// Circumcircle; collinear triples fall back to the circle on the farthest pair.
template <typename Scalar>
Circle<Scalar> circle_from(const Vec2<Scalar>& a, const Vec2<Scalar>& b, const Vec2<Scalar>& c) {
  const Vec2<Scalar> ab = b - a, ac = c - a;
  const Scalar d = Scalar(2) * (ab.x() * ac.y() - ab.y() * ac.x());
  const Scalar scale = std::max({ab.squaredNorm(), ac.squaredNorm(), Scalar(1e-300)});
  if (std::abs(d) <= std::numeric_limits<Scalar>::epsilon() * Scalar(16) * scale) {
    Circle<Scalar> best = circle_from(a, b);
    for (const auto& cand : {circle_from(a, c), circle_from(b, c)})
      if (cand.radius > best.radius) best = cand;
    return best;
  }
  const Scalar ab2 = ab.squaredNorm(), ac2 = ac.squaredNorm();
  const Vec2<Scalar> off((ac.y() * ab2 - ab.y() * ac2) / d, (ab.x() * ac2 - ac.x() * ab2) / d);
  return {a + off, off.norm()};
}

template <typename Scalar>
Scalar containment_tol(const Circle<Scalar>& c) {
  return Scalar(1e-12) * std::max(Scalar(1), c.radius + c.center.cwiseAbs().maxCoeff());
}

}  // namespace detail

// Smallest circle containing every point (Welzl, iterative form). The visiting order
// is a fixed pseudo-random permutation, so results are deterministic.
template <typename Scalar>
Circle<Scalar> min_enclosing_circle(std::span<const Vec2<Scalar>> points) {
  if (points.empty()) throw std::invalid_argument("min_enclosing_circle of an empty set");
  std::vector<Vec2<Scalar>> p(points.begin(), points.end());
  std::mt19937 rng(0x6d656300u);
  std::shuffle(p.begin(), p.end(), rng);
  using detail::circle_from;
  Circle<Scalar> c{p[0], Scalar(0)};
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (c.contains(p[i], detail::containment_tol(c))) continue;
    c = {p[i], Scalar(0)};
    for (std::size_t j = 0; j < i; ++j) {
      if (c.contains(p[j], detail::containment_tol(c))) continue;
      c = circle_from(p[i], p[j]);
      for (std::size_t k = 0; k < j; ++k) {
        if (c.contains(p[k], detail::containment_tol(c))) continue;
        c = circle_from(p[i], p[j], p[k]);
      }
    }
  }
  return c;
}

template <typename Scalar>
Circle<Scalar> min_enclosing_circle(const std::vector<Vec2<Scalar>>& points) {
  return min_enclosing_circle(std::span<const Vec2<Scalar>>(points));
}

// Population variance of the distances from `center` to each point.
template <typename Scalar>
Scalar distance_variance(std::span<const Vec2<Scalar>> points, const Vec2<Scalar>& center) {
  if (points.empty()) throw std::invalid_argument("distance_variance of an empty set");
  Scalar mean = 0;
  for (const auto& p : points) mean += (p - center).norm();
  mean /= static_cast<Scalar>(points.size());
  Scalar var = 0;
  for (const auto& p : points) {
    const Scalar d = (p - center).norm() - mean;
    var += d * d;
  }
  return var / static_cast<Scalar>(points.size());
}

template <typename Scalar>
Scalar distance_variance(const std::vector<Vec2<Scalar>>& points, const Vec2<Scalar>& center) {
  return distance_variance(std::span<const Vec2<Scalar>>(points), center);
}

// Infinite line through `point` along unit `direction`.
template <typename Scalar>
struct Line {
  Vec2<Scalar> point = Vec2<Scalar>::Zero();
  Vec2<Scalar> direction = Vec2<Scalar>::UnitX();

  static Line through(const Vec2<Scalar>& a, const Vec2<Scalar>& b) {
    return {a, (b - a).normalized()};
  }
  Scalar distance(const Vec2<Scalar>& p) const {
    const Vec2<Scalar> d = p - point;
    return std::abs(d.x() * direction.y() - d.y() * direction.x());
  }
  // dy/dx in image coordinates; infinite for vertical lines.
  Scalar slope() const {
    if (direction.x() == Scalar(0)) return std::numeric_limits<Scalar>::infinity();
    return direction.y() / direction.x();
  }
  Scalar x_at(Scalar y) const { return point.x() + (y - point.y()) * direction.x() / direction.y(); }
};

template <typename Scalar>
std::optional<Vec2<Scalar>> intersect(const Line<Scalar>& a, const Line<Scalar>& b) {
  const Scalar den = a.direction.x() * b.direction.y() - a.direction.y() * b.direction.x();
  if (std::abs(den) < Scalar(1e-9)) return std::nullopt;
  const Vec2<Scalar> d = b.point - a.point;
  const Scalar t = (d.x() * b.direction.y() - d.y() * b.direction.x()) / den;
  return Vec2<Scalar>(a.point + t * a.direction);
}

// Weighted total-least-squares line fit. Needs at least two distinct points.
template <typename Scalar>
std::optional<Line<Scalar>> fit_line(std::span<const Vec2<Scalar>> points, std::span<const Scalar> weights = {}) {
  if (points.size() < 2) return std::nullopt;
  const bool weighted = !weights.empty();
  Scalar wsum = 0;
  Vec2<Scalar> mean = Vec2<Scalar>::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Scalar w = weighted ? weights[i] : Scalar(1);
    mean += w * points[i];
    wsum += w;
  }
  if (wsum <= Scalar(0)) return std::nullopt;
  mean /= wsum;
  Eigen::Matrix<Scalar, 2, 2> cov = Eigen::Matrix<Scalar, 2, 2>::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Scalar w = weighted ? weights[i] : Scalar(1);
    const Vec2<Scalar> d = points[i] - mean;
    cov += w * d * d.transpose();
  }
  if (cov.trace() <= Scalar(0)) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, 2, 2>> eig(cov);
  return Line<Scalar>{mean, eig.eigenvectors().col(1).normalized()};
}

}  // namespace rowpilot::geometry
