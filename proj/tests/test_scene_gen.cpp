#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>

#include "kdmp/rng.hpp"
#include "kdmp/scene_gen.hpp"

using namespace kdmp;

TEST_CASE("scenes satisfy spacing and containment invariants") {
  SceneGenParams p;
  Rng rng(42);
  for (int rep = 0; rep < 50; ++rep) {
    Scene s = sample_scene(rng, p);
    REQUIRE((s.obstacles.size() == 3 || s.obstacles.size() == 4));
    for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
      const auto aabb = rotated_aabb_half(s.obstacles[i]);
      for (std::size_t k = 0; k < p.d; ++k) {
        REQUIRE(s.obstacles[i].center[k] - aabb[k] >= p.bounds_lo[k]);
        REQUIRE(s.obstacles[i].center[k] + aabb[k] <= p.bounds_hi[k]);
      }
      for (std::size_t j = i + 1; j < s.obstacles.size(); ++j) {
        REQUIRE(dist2(s.obstacles[i].center, s.obstacles[j].center) >= p.min_spacing);
      }
    }
  }
}

TEST_CASE("zero-obstacle option yields a valid empty scene") {
  SceneGenParams p;
  p.n_obstacles_options = {0};
  Rng rng(1);
  Scene s = sample_scene(rng, p);
  REQUIRE(s.obstacles.empty());
  REQUIRE_THROWS_AS(sample_point_cloud(s, 16, rng), Error);
}

TEST_CASE("generation is a pure function of seed and params") {
  SceneGenParams p;
  Rng a(777), b(777);
  Scene s1 = sample_scene(a, p), s2 = sample_scene(b, p);
  REQUIRE(s1.obstacles.size() == s2.obstacles.size());
  for (std::size_t i = 0; i < s1.obstacles.size(); ++i) {
    REQUIRE(s1.obstacles[i].center == s2.obstacles[i].center);
    REQUIRE(s1.obstacles[i].half_extents == s2.obstacles[i].half_extents);
    REQUIRE(s1.obstacles[i].rotation == s2.obstacles[i].rotation);
  }
}

TEST_CASE("placement cap trips on impossible requests") {
  SceneGenParams p;
  p.n_obstacles_options = {50};
  p.min_spacing = 2.0;  // cannot fit 50 boxes 2 m apart in a 3 m square
  p.attempt_cap = 500;
  Rng rng(9);
  REQUIRE_THROWS_AS(sample_scene(rng, p), Error);
}

TEST_CASE("cloud points lie exactly on obstacle surfaces") {
  SceneGenParams p;
  Rng rng(5);
  Scene s = sample_scene(rng, p);
  PointCloud c = sample_point_cloud(s, 2000, rng);
  REQUIRE(c.size() == 2000);
  for (std::size_t i = 0; i < c.size(); ++i) {
    double best = 1e300;
    for (const auto& box : s.obstacles) {
      best = std::min(best, point_box_surface_distance(c.point(i), box));
    }
    REQUIRE(best < 1e-9);
  }
}

// Face frequencies vs the analytic area weighting: chi-square test. The
// expected counts come from edge lengths computed independently here.
TEST_CASE("face sampling is area-weighted") {
  Scene s;
  s.bounds_lo = {-1.5, -1.5};
  s.bounds_hi = {1.5, 1.5};
  BoxObstacle box;
  box.center = {0.2, -0.3};
  box.half_extents = {0.4, 0.1};
  box.rotation = 0.7;
  s.obstacles.push_back(box);

  const std::size_t N = 100000;
  Rng rng(31);
  PointCloud c = sample_point_cloud(s, N, rng);

  // classify each point by which face plane it sits on (box frame)
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < N; ++i) {
    double q[2];
    detail::to_box_frame(box, c.point(i), q);
    int face = -1;
    for (int axis = 0; axis < 2; ++axis) {
      if (std::abs(std::abs(q[axis]) - box.half_extents[axis]) < 1e-9) {
        face = axis * 2 + (q[axis] > 0 ? 1 : 0);
      }
    }
    REQUIRE(face >= 0);
    counts[face]++;
  }
  // expected proportional to opposing edge lengths: axis 0 faces have length
  // 2*h1, axis 1 faces 2*h0
  const double total = 2 * (2 * box.half_extents[1]) + 2 * (2 * box.half_extents[0]);
  const double exp_axis0 = N * (2 * box.half_extents[1]) / total;
  const double exp_axis1 = N * (2 * box.half_extents[0]) / total;
  double chi2 = 0.0;
  for (int face = 0; face < 4; ++face) {
    const double expct = face < 2 ? exp_axis0 : exp_axis1;
    const double diff = static_cast<double>(counts[face]) - expct;
    chi2 += diff * diff / expct;
  }
  // 3 degrees of freedom, p > 0.001 -> chi2 below 16.27
  REQUIRE(chi2 < 16.27);
}

TEST_CASE("jsonl round trip preserves scenes bit-exactly") {
  SceneGenParams p;
  Rng rng(12);
  std::vector<Scene> scenes;
  for (int i = 0; i < 5; ++i) {
    Scene s = sample_scene(rng, p);
    s.seed = 1000 + static_cast<std::uint64_t>(i);
    scenes.push_back(s);
  }
  auto path = std::filesystem::temp_directory_path() / "kdmp_scenes_test.jsonl";
  write_scenes_jsonl(path.string(), scenes);
  auto loaded = read_scenes_jsonl(path.string());
  REQUIRE(loaded.size() == scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    REQUIRE(loaded[i].seed == scenes[i].seed);
    REQUIRE(loaded[i].bounds_lo == scenes[i].bounds_lo);
    REQUIRE(loaded[i].obstacles.size() == scenes[i].obstacles.size());
    for (std::size_t j = 0; j < scenes[i].obstacles.size(); ++j) {
      // JSON uses shortest-round-trip doubles, so equality must be exact
      REQUIRE(loaded[i].obstacles[j].center == scenes[i].obstacles[j].center);
      REQUIRE(loaded[i].obstacles[j].half_extents == scenes[i].obstacles[j].half_extents);
      REQUIRE(loaded[i].obstacles[j].rotation == scenes[i].obstacles[j].rotation);
    }
  }
  std::filesystem::remove(path);
}
