#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "kdmp/error.hpp"

namespace kdmp {

using VecD = std::vector<double>;

inline double dot(const VecD& a, const VecD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const VecD& a) { return std::sqrt(dot(a, a)); }

inline double dist2(const VecD& a, const VecD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double dist_inf(const VecD& a, const VecD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline VecD lerp(const VecD& a, const VecD& b, double t) {
  VecD r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + t * (b[i] - a[i]);
  return r;
}

// Box obstacle in d dimensions (d = 2 or 3). Rotation is a single yaw angle:
// in-plane for d=2, about the z axis for d=3.
struct BoxObstacle {
  VecD center;
  VecD half_extents;
  double rotation = 0.0;

  std::size_t dim() const { return center.size(); }
};

struct Scene {
  std::vector<BoxObstacle> obstacles;
  VecD bounds_lo;
  VecD bounds_hi;
  std::uint64_t seed = 0;

  std::size_t dim() const { return bounds_lo.size(); }
};

// Flat row-major P x d point set.
struct PointCloud {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  const double* point(std::size_t i) const { return &data[i * dim]; }
};

namespace detail {

// World -> box frame (rotate by -rotation about z, after translating).
inline void to_box_frame(const BoxObstacle& box, const double* p, double* out) {
  const std::size_t d = box.dim();
  const double c = std::cos(box.rotation), s = std::sin(box.rotation);
  const double x = p[0] - box.center[0];
  const double y = p[1] - box.center[1];
  out[0] = c * x + s * y;
  out[1] = -s * x + c * y;
  if (d == 3) out[2] = p[2] - box.center[2];
}

inline void from_box_frame(const BoxObstacle& box, const double* p, double* out) {
  const std::size_t d = box.dim();
  const double c = std::cos(box.rotation), s = std::sin(box.rotation);
  out[0] = c * p[0] - s * p[1] + box.center[0];
  out[1] = s * p[0] + c * p[1] + box.center[1];
  if (d == 3) out[2] = p[2] + box.center[2];
}

}  // namespace detail

// Squared distance from a point (box frame) to the axis-aligned box [-h, h].
inline double point_aabb_sqdist(const double* p, const VecD& h) {
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double e = std::abs(p[i]) - h[i];
    if (e > 0.0) s += e * e;
  }
  return s;
}

// Exact minimum distance between segment [a, b] and a (rotated) box. The
// squared distance along the segment is piecewise quadratic in t with
// breakpoints where a coordinate crosses a face plane; minimizing each piece
// analytically gives the exact minimum (no iterative tolerance).
inline double segment_box_distance(const VecD& a, const VecD& b, const BoxObstacle& box) {
  const std::size_t d = box.dim();
  double pa[3], pb[3];
  detail::to_box_frame(box, a.data(), pa);
  detail::to_box_frame(box, b.data(), pb);

  // Breakpoints of the active-set pattern in t.
  double ts[16];
  std::size_t nt = 0;
  ts[nt++] = 0.0;
  ts[nt++] = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dir = pb[i] - pa[i];
    if (dir == 0.0) continue;
    for (double face : {-box.half_extents[i], box.half_extents[i]}) {
      const double t = (face - pa[i]) / dir;
      if (t > 0.0 && t < 1.0) ts[nt++] = t;
    }
  }
  std::sort(ts, ts + nt);

  double best = std::min(point_aabb_sqdist(pa, box.half_extents),
                         point_aabb_sqdist(pb, box.half_extents));
  for (std::size_t s = 0; s + 1 < nt; ++s) {
    const double t0 = ts[s], t1 = ts[s + 1];
    if (t1 - t0 <= 0.0) continue;
    const double tm = 0.5 * (t0 + t1);
    // On (t0, t1) each coordinate keeps its side of the face planes, so the
    // contribution of coordinate i is (A_i + B_i t)^2 if outside, else 0;
    // the piece is the quadratic sa*t^2 + sb*t + sc.
    double sa = 0.0, sb = 0.0, sc = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < d; ++i) {
      const double xm = pa[i] + tm * (pb[i] - pa[i]);
      double off;
      if (xm > box.half_extents[i]) {
        off = -box.half_extents[i];
      } else if (xm < -box.half_extents[i]) {
        off = box.half_extents[i];
      } else {
        continue;
      }
      const double Ai = pa[i] + off;
      const double Bi = pb[i] - pa[i];
      sa += Bi * Bi;
      sb += 2.0 * Ai * Bi;
      sc += Ai * Ai;
      any = true;
    }
    if (!any) return 0.0;  // segment passes through the box interior
    double tstar = tm;
    if (sa > 0.0) tstar = std::clamp(-sb / (2.0 * sa), t0, t1);
    const double q = sc + tstar * (sb + tstar * sa);
    if (q < best) best = q;
  }
  return best <= 0.0 ? 0.0 : std::sqrt(best);
}

// Signed-style distance from a point to the box surface: 0 iff on the surface,
// positive otherwise (inside or outside).
inline double point_box_surface_distance(const double* p, const BoxObstacle& box) {
  const std::size_t d = box.dim();
  double q[3];
  detail::to_box_frame(box, p, q);
  double outside = point_aabb_sqdist(q, box.half_extents);
  if (outside > 0.0) return std::sqrt(outside);
  double margin = 1e300;
  for (std::size_t i = 0; i < d; ++i) {
    margin = std::min(margin, box.half_extents[i] - std::abs(q[i]));
  }
  return margin;  // distance to the nearest face from the inside
}

inline bool point_in_bounds(const double* p, const VecD& lo, const VecD& hi) {
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (p[i] < lo[i] || p[i] > hi[i]) return false;
  }
  return true;
}

}  // namespace kdmp
