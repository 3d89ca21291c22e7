#pragma once

#include <cmath>
#include <span>

namespace crossflux {

/// 2D point / vector.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  bool operator==(const Vec2& o) const = default;
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double norm(const Vec2& a) { return std::hypot(a.x, a.y); }

/// Signed area of a simple polygon (positive for CCW vertex order).
inline double polygon_signed_area(std::span<const Vec2> pts) {
  double twice = 0.0;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = pts[i];
    const Vec2& q = pts[(i + 1) % n];
    twice += cross(p, q);
  }
  return 0.5 * twice;
}

/// Distance from p to the segment [a,b].
inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return norm(p - a);
  double t = dot(p - a, ab) / len2;
  t = std::fmax(0.0, std::fmin(1.0, t));
  return norm(p - (a + ab * t));
}

/// Signed distance from p to the line through a->b; positive when p lies
/// to the left of the direction a->b.
inline double signed_line_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len = norm(ab);
  return cross(ab, p - a) / len;
}

/// Circumcenter of a nondegenerate triangle.
inline Vec2 circumcenter(const Vec2& a, const Vec2& b, const Vec2& c) {
  const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
  const double a2 = dot(a, a), b2 = dot(b, b), c2 = dot(c, c);
  Vec2 u;
  u.x = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
  u.y = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
  return u;
}

}  // namespace crossflux
