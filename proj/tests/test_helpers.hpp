#pragma once

#include <vector>

#include "kdmp/plan.hpp"
#include "kdmp/rng.hpp"
#include "kdmp/rrt.hpp"
#include "kdmp/scene_gen.hpp"

namespace kdmp::testing {

struct CorpusEntry {
  Scene scene;
  Plan plan;  // raw oracle output (smoothed waypoints)
};

// Small deterministic corpus of oracle plans in random scenes.
inline std::vector<CorpusEntry> oracle_corpus(std::size_t n, std::uint64_t seed,
                                              const ArmSpec& spec) {
  SceneGenParams params;
  std::vector<CorpusEntry> out;
  std::uint64_t stream = 0;
  while (out.size() < n) {
    Rng rng(derive_seed(seed, stream++));
    Scene scene = sample_scene(rng, params);
    scene.seed = stream;
    try {
      VecD a = sample_valid_config(spec, scene, rng, 200);
      VecD b = sample_valid_config(spec, scene, rng, 200);
      PlannerBudget budget;
      budget.max_iterations = 30000;
      budget.wall_clock_seconds = 20.0;
      Plan p = plan_oracle(spec, scene, a, b, budget, rng);
      if (p.size() < 2) continue;
      out.push_back({std::move(scene), std::move(p)});
    } catch (const Error&) {
      continue;
    }
  }
  return out;
}

}  // namespace kdmp::testing
