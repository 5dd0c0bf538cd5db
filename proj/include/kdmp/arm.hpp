#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kdmp/error.hpp"
#include "kdmp/geom.hpp"
#include "kdmp/rng.hpp"

namespace kdmp {

struct ArmSpec {
  std::size_t dof = 0;
  VecD link_lengths;
  double link_radius = 0.03;
  std::vector<std::pair<double, double>> joint_limits;  // (lo, hi) radians
  VecD base;                                            // workspace position

  std::size_t dim() const { return base.size(); }

  void validate() const {
    if (dof < 2) throw Error(ErrorCode::BadArgument, "arm: dof must be >= 2");
    if (link_lengths.size() != dof || joint_limits.size() != dof) {
      throw Error(ErrorCode::BadArgument, "arm: per-joint field size mismatch");
    }
    for (double l : link_lengths) {
      if (l <= 0.0) throw Error(ErrorCode::BadArgument, "arm: link lengths must be positive");
    }
    for (auto [lo, hi] : joint_limits) {
      if (lo >= hi) throw Error(ErrorCode::BadArgument, "arm: joint limit lo >= hi");
    }
  }
};

// Joint positions in workspace coordinates: base plus one point per link end
// (dof+1 points). Planar chain: cumulative angle sums. In 3D the chain
// alternates yaw (even joints, about world-aligned z of the current frame)
// and pitch (odd joints), giving a reachable out-of-plane workspace while
// staying a plain serial chain.
inline std::vector<VecD> forward_kinematics(const ArmSpec& spec, const VecD& q) {
  if (q.size() != spec.dof) {
    throw Error(ErrorCode::BadArgument, "forward_kinematics: config dimension mismatch");
  }
  const std::size_t d = spec.dim();
  std::vector<VecD> pts(spec.dof + 1, VecD(d));
  pts[0] = spec.base;
  if (d == 2) {
    double ang = 0.0, x = spec.base[0], y = spec.base[1];
    for (std::size_t k = 0; k < spec.dof; ++k) {
      ang += q[k];
      x += spec.link_lengths[k] * std::cos(ang);
      y += spec.link_lengths[k] * std::sin(ang);
      pts[k + 1] = {x, y};
    }
    return pts;
  }
  // 3D: orientation carried as a row-major 3x3 matrix.
  double R[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  VecD pos = spec.base;
  for (std::size_t k = 0; k < spec.dof; ++k) {
    const double c = std::cos(q[k]), s = std::sin(q[k]);
    double Rk[9];
    if (k % 2 == 0) {  // yaw about local z
      double m[9] = {c, -s, 0, s, c, 0, 0, 0, 1};
      std::copy(m, m + 9, Rk);
    } else {  // pitch about local y
      double m[9] = {c, 0, s, 0, 1, 0, -s, 0, c};
      std::copy(m, m + 9, Rk);
    }
    double Rn[9];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        Rn[i * 3 + j] = R[i * 3] * Rk[j] + R[i * 3 + 1] * Rk[3 + j] + R[i * 3 + 2] * Rk[6 + j];
    std::copy(Rn, Rn + 9, R);
    for (int i = 0; i < 3; ++i) pos[i] += spec.link_lengths[k] * R[i * 3];  // local +x
    pts[k + 1] = pos;
  }
  return pts;
}

inline bool within_limits(const ArmSpec& spec, const VecD& q) {
  for (std::size_t i = 0; i < spec.dof; ++i) {
    if (q[i] < spec.joint_limits[i].first || q[i] > spec.joint_limits[i].second) return false;
  }
  return true;
}

// Valid iff within joint limits, all joint positions inside the workspace
// bounds, and every link segment clears every obstacle by link_radius.
inline bool config_valid(const ArmSpec& spec, const Scene& scene, const VecD& q) {
  if (!within_limits(spec, q)) return false;
  const auto pts = forward_kinematics(spec, q);
  for (const auto& p : pts) {
    if (!point_in_bounds(p.data(), scene.bounds_lo, scene.bounds_hi)) return false;
  }
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    for (const auto& box : scene.obstacles) {
      if (segment_box_distance(pts[k], pts[k + 1], box) <= spec.link_radius) return false;
    }
  }
  return true;
}

// Linear joint-space interpolation checked at spacing <= resolution (L2).
inline bool edge_valid(const ArmSpec& spec, const Scene& scene, const VecD& a, const VecD& b,
                       double resolution) {
  if (resolution <= 0.0) throw Error(ErrorCode::BadArgument, "edge_valid: resolution <= 0");
  const double len = dist2(a, b);
  const std::size_t n = len == 0.0 ? 1 : static_cast<std::size_t>(std::ceil(len / resolution));
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    if (!config_valid(spec, scene, lerp(a, b, t))) return false;
  }
  return true;
}

inline VecD sample_valid_config(const ArmSpec& spec, const Scene& scene, Rng& rng,
                                std::size_t max_attempts = 1000) {
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    VecD q(spec.dof);
    for (std::size_t i = 0; i < spec.dof; ++i) {
      q[i] = rng.uniform(spec.joint_limits[i].first, spec.joint_limits[i].second);
    }
    if (config_valid(spec, scene, q)) return q;
  }
  throw Error(ErrorCode::SamplingExhausted,
              "sample_valid_config: no valid config in " + std::to_string(max_attempts) +
                  " attempts");
}

// ---- JSON persistence --------------------------------------------------------

inline nlohmann::json arm_to_json(const ArmSpec& s) {
  nlohmann::json j;
  j["dof"] = s.dof;
  j["link_lengths"] = s.link_lengths;
  j["link_radius"] = s.link_radius;
  auto limits = nlohmann::json::array();
  for (auto [lo, hi] : s.joint_limits) limits.push_back({lo, hi});
  j["joint_limits"] = limits;
  j["base_pose"] = s.base;
  return j;
}

inline ArmSpec arm_from_json(const nlohmann::json& j) {
  ArmSpec s;
  s.dof = j.at("dof").get<std::size_t>();
  s.link_lengths = j.at("link_lengths").get<VecD>();
  s.link_radius = j.at("link_radius").get<double>();
  for (const auto& l : j.at("joint_limits")) {
    s.joint_limits.emplace_back(l.at(0).get<double>(), l.at(1).get<double>());
  }
  s.base = j.at("base_pose").get<VecD>();
  s.validate();
  return s;
}

inline void write_arm_json(const std::string& path, const ArmSpec& s) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for write: " + path);
  os << arm_to_json(s).dump(2) << "\n";
}

inline ArmSpec read_arm_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::BadFile, "cannot open: " + path);
  nlohmann::json j;
  is >> j;
  return arm_from_json(j);
}

// Desk-scale default: planar 4-link chain reaching most of the workspace.
inline ArmSpec desk_arm() {
  ArmSpec s;
  s.dof = 4;
  s.link_lengths = {0.5, 0.4, 0.3, 0.2};
  s.link_radius = 0.03;
  s.joint_limits = {{-std::numbers::pi, std::numbers::pi},
                    {-2.4, 2.4},
                    {-2.4, 2.4},
                    {-2.4, 2.4}};
  s.base = {0.0, 0.0};
  return s;
}

}  // namespace kdmp
