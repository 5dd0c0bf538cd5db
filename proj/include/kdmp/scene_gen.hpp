#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdmp/error.hpp"
#include "kdmp/geom.hpp"
#include "kdmp/rng.hpp"

namespace kdmp {

struct SceneGenParams {
  std::size_t d = 2;
  std::vector<std::size_t> n_obstacles_options = {3, 4};
  double size_lo = 0.05;  // half-extent range, meters
  double size_hi = 0.25;
  // Workspace sized so random start/goal pairs usually need a detour: at
  // +/-1.5 most oracle plans smooth to a single straight segment, which
  // starves the keypoint representation (measured median keypoint count 2).
  double min_spacing = 0.30;  // pairwise center distance, meters
  VecD bounds_lo = {-1.0, -1.0};
  VecD bounds_hi = {1.0, 1.0};
  std::size_t attempt_cap = 10000;
};

// Axis-aligned half-width of the rotated box along each workspace axis.
inline VecD rotated_aabb_half(const BoxObstacle& box) {
  const double c = std::abs(std::cos(box.rotation)), s = std::abs(std::sin(box.rotation));
  VecD r(box.dim());
  r[0] = c * box.half_extents[0] + s * box.half_extents[1];
  r[1] = s * box.half_extents[0] + c * box.half_extents[1];
  if (box.dim() == 3) r[2] = box.half_extents[2];
  return r;
}

inline Scene sample_scene(Rng& rng, const SceneGenParams& p) {
  if (p.bounds_lo.size() != p.d || p.bounds_hi.size() != p.d) {
    throw Error(ErrorCode::BadArgument, "sample_scene: bounds dimension mismatch");
  }
  Scene scene;
  scene.bounds_lo = p.bounds_lo;
  scene.bounds_hi = p.bounds_hi;
  const std::size_t n =
      p.n_obstacles_options[rng.uniform_int(p.n_obstacles_options.size())];
  std::size_t attempts = 0;
  while (scene.obstacles.size() < n) {
    if (++attempts > p.attempt_cap) {
      throw Error(ErrorCode::PlacementInfeasible,
                  "sample_scene: could not place " + std::to_string(n) + " obstacles in " +
                      std::to_string(p.attempt_cap) + " attempts");
    }
    BoxObstacle box;
    box.center.resize(p.d);
    box.half_extents.resize(p.d);
    for (std::size_t i = 0; i < p.d; ++i) {
      box.half_extents[i] = rng.uniform(p.size_lo, p.size_hi);
    }
    box.rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const VecD aabb = rotated_aabb_half(box);
    bool fits = true;
    for (std::size_t i = 0; i < p.d; ++i) {
      const double lo = p.bounds_lo[i] + aabb[i], hi = p.bounds_hi[i] - aabb[i];
      if (lo > hi) {
        fits = false;
        break;
      }
      box.center[i] = rng.uniform(lo, hi);
    }
    if (!fits) continue;
    bool spaced = true;
    for (const auto& other : scene.obstacles) {
      if (dist2(box.center, other.center) < p.min_spacing) {
        spaced = false;
        break;
      }
    }
    if (spaced) scene.obstacles.push_back(std::move(box));
  }
  return scene;
}

// Faces weighted by their measure (edge length in 2D, face area in 3D) across
// the whole scene; points sampled uniformly within the chosen face.
inline PointCloud sample_point_cloud(const Scene& scene, std::size_t P, Rng& rng) {
  if (scene.obstacles.empty()) {
    throw Error(ErrorCode::EmptyScene, "sample_point_cloud: no obstacles");
  }
  if (P == 0) throw Error(ErrorCode::BadArgument, "sample_point_cloud: P must be positive");
  const std::size_t d = scene.dim();
  struct Face {
    std::size_t box;
    std::size_t axis;  // fixed axis
    double side;       // -1 or +1
  };
  std::vector<Face> faces;
  std::vector<double> cumw;
  double total = 0.0;
  for (std::size_t bi = 0; bi < scene.obstacles.size(); ++bi) {
    const auto& h = scene.obstacles[bi].half_extents;
    for (std::size_t axis = 0; axis < d; ++axis) {
      double area = 1.0;
      for (std::size_t i = 0; i < d; ++i) {
        if (i != axis) area *= 2.0 * h[i];
      }
      for (double side : {-1.0, 1.0}) {
        faces.push_back({bi, axis, side});
        total += area;
        cumw.push_back(total);
      }
    }
  }
  PointCloud cloud;
  cloud.dim = d;
  cloud.data.resize(P * d);
  for (std::size_t pi = 0; pi < P; ++pi) {
    const double u = rng.uniform() * total;
    const std::size_t fi =
        std::lower_bound(cumw.begin(), cumw.end(), u) - cumw.begin();
    const Face& f = faces[std::min(fi, faces.size() - 1)];
    const BoxObstacle& box = scene.obstacles[f.box];
    double local[3];
    for (std::size_t i = 0; i < d; ++i) {
      local[i] = i == f.axis ? f.side * box.half_extents[i]
                             : rng.uniform(-box.half_extents[i], box.half_extents[i]);
    }
    detail::from_box_frame(box, local, &cloud.data[pi * d]);
  }
  return cloud;
}

// ---- JSON-lines persistence -------------------------------------------------

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["bounds"] = {{"lo", s.bounds_lo}, {"hi", s.bounds_hi}};
  j["obstacles"] = nlohmann::json::array();
  for (const auto& o : s.obstacles) {
    j["obstacles"].push_back(
        {{"center", o.center}, {"half_extents", o.half_extents}, {"rotation", o.rotation}});
  }
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.bounds_lo = j.at("bounds").at("lo").get<VecD>();
  s.bounds_hi = j.at("bounds").at("hi").get<VecD>();
  for (const auto& o : j.at("obstacles")) {
    BoxObstacle box;
    box.center = o.at("center").get<VecD>();
    box.half_extents = o.at("half_extents").get<VecD>();
    box.rotation = o.at("rotation").get<double>();
    s.obstacles.push_back(std::move(box));
  }
  return s;
}

inline void write_scenes_jsonl(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for write: " + path);
  for (const auto& s : scenes) os << scene_to_json(s).dump() << "\n";
}

inline std::vector<Scene> read_scenes_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::BadFile, "cannot open: " + path);
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    scenes.push_back(scene_from_json(nlohmann::json::parse(line)));
  }
  return scenes;
}

}  // namespace kdmp
