#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <vector>

#include "kdmp/arm.hpp"
#include "kdmp/error.hpp"
#include "kdmp/plan.hpp"
#include "kdmp/rng.hpp"

namespace kdmp {

// The iteration cap is the binding, deterministic bound: plan content must not
// depend on machine load, or dataset regeneration from a manifest would not be
// reproducible. Wall clock is a safety net for pathological instances.
struct PlannerBudget {
  double wall_clock_seconds = 5.0;
  std::size_t max_iterations = 100000;

  void validate() const {
    const bool wall_ok = wall_clock_seconds > 0.0;
    const bool iter_ok = max_iterations > 0;
    if (!wall_ok && !iter_ok) {
      throw Error(ErrorCode::BadArgument, "planner budget: no positive bound");
    }
  }
};

struct OracleParams {
  double extend_step = 0.1;        // radians per tree extension
  double goal_bias = 0.1;          // probability of steering at the other tree's root
  std::size_t shortcut_rounds = 200;
  double resolution = 0.01;        // collision-check spacing, radians
};

namespace detail {

struct TreeNode {
  VecD q;
  int parent;
};

inline int nearest(const std::vector<TreeNode>& tree, const VecD& q) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const double d = dist2(tree[i].q, q);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

enum class ExtendResult { trapped, advanced, reached };

// One RRT-Connect extension: step from the nearest node toward target by at
// most extend_step, validating the step edge.
inline ExtendResult extend(std::vector<TreeNode>& tree, const VecD& target, const ArmSpec& spec,
                           const Scene& scene, const OracleParams& op, int& new_index) {
  const int ni = nearest(tree, target);
  const VecD& from = tree[ni].q;
  const double d = dist2(from, target);
  VecD next;
  bool reached = false;
  if (d <= op.extend_step) {
    next = target;
    reached = true;
  } else {
    next = lerp(from, target, op.extend_step / d);
  }
  if (!within_limits(spec, next) || !edge_valid(spec, scene, from, next, op.resolution)) {
    new_index = -1;
    return ExtendResult::trapped;
  }
  tree.push_back({next, ni});
  new_index = static_cast<int>(tree.size()) - 1;
  return reached ? ExtendResult::reached : ExtendResult::advanced;
}

inline std::vector<VecD> trace(const std::vector<TreeNode>& tree, int leaf) {
  std::vector<VecD> path;
  for (int i = leaf; i >= 0; i = tree[i].parent) path.push_back(tree[i].q);
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace detail

// Random shortcutting: repeatedly try to connect two random waypoints
// directly. Arc length never increases (triangle inequality), endpoints and
// collision-freedom are preserved.
inline Plan shortcut_smooth(const ArmSpec& spec, const Scene& scene, const Plan& plan,
                            std::size_t rounds, Rng& rng, double resolution = 0.01) {
  if (plan.size() <= 2) return plan;
  std::vector<VecD> cfg = plan.configs;
  for (std::size_t r = 0; r < rounds; ++r) {
    if (cfg.size() <= 2) break;
    std::size_t i = rng.uniform_int(cfg.size());
    std::size_t j = rng.uniform_int(cfg.size());
    if (i > j) std::swap(i, j);
    if (j - i < 2) continue;
    if (edge_valid(spec, scene, cfg[i], cfg[j], resolution)) {
      cfg.erase(cfg.begin() + static_cast<std::ptrdiff_t>(i) + 1,
                cfg.begin() + static_cast<std::ptrdiff_t>(j));
    }
  }
  return make_plan(std::move(cfg), plan.representation, plan.scene_id);
}

// RRT-Connect: grow two trees from start and goal, alternating; each
// iteration extends one tree toward a random sample (biased toward the other
// root) and then greedily connects the other tree to the new node.
inline Plan plan_oracle(const ArmSpec& spec, const Scene& scene, const VecD& start,
                        const VecD& goal, const PlannerBudget& budget, Rng& rng,
                        const OracleParams& op = {}) {
  budget.validate();
  if (!config_valid(spec, scene, start)) {
    throw Error(ErrorCode::BadArgument, "plan_oracle: start config invalid");
  }
  if (!config_valid(spec, scene, goal)) {
    throw Error(ErrorCode::BadArgument, "plan_oracle: goal config invalid");
  }
  if (start == goal) return make_plan({start}, PlanRep::raw, scene.seed);

  using detail::ExtendResult;
  std::vector<detail::TreeNode> ta{{start, -1}}, tb{{goal, -1}};
  bool a_is_start = true;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t iter = 0; iter < budget.max_iterations; ++iter) {
    if ((iter & 255) == 0 && budget.wall_clock_seconds > 0.0) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (el > budget.wall_clock_seconds) break;
    }
    VecD sample(spec.dof);
    if (rng.uniform() < op.goal_bias) {
      sample = tb[0].q;  // steer toward the other tree's root
    } else {
      for (std::size_t i = 0; i < spec.dof; ++i) {
        sample[i] = rng.uniform(spec.joint_limits[i].first, spec.joint_limits[i].second);
      }
    }
    int na = -1;
    if (detail::extend(ta, sample, spec, scene, op, na) != ExtendResult::trapped) {
      // Connect: greedily extend the other tree toward the new node.
      const VecD& target = ta[na].q;
      ExtendResult res = ExtendResult::advanced;
      int nb = -1;
      while (res == ExtendResult::advanced) {
        res = detail::extend(tb, target, spec, scene, op, nb);
      }
      if (res == ExtendResult::reached) {
        auto pa = detail::trace(ta, na);
        auto pb = detail::trace(tb, nb);
        std::vector<VecD> path;
        if (a_is_start) {
          path = std::move(pa);
          path.insert(path.end(), pb.rbegin(), pb.rend());
        } else {
          path = std::move(pb);
          path.insert(path.end(), pa.rbegin(), pa.rend());
        }
        // Drop the duplicated junction config.
        for (std::size_t i = 0; i + 1 < path.size();) {
          if (path[i] == path[i + 1]) {
            path.erase(path.begin() + static_cast<std::ptrdiff_t>(i) + 1);
          } else {
            ++i;
          }
        }
        Plan plan = make_plan(std::move(path), PlanRep::raw, scene.seed);
        plan = shortcut_smooth(spec, scene, plan, op.shortcut_rounds, rng, op.resolution);
        // Independent re-validation of every emitted segment.
        for (std::size_t i = 0; i + 1 < plan.configs.size(); ++i) {
          if (!edge_valid(spec, scene, plan.configs[i], plan.configs[i + 1], op.resolution)) {
            throw Error(ErrorCode::NoPlanFound, "plan_oracle: post-validation failed");
          }
        }
        return plan;
      }
    }
    std::swap(ta, tb);
    a_is_start = !a_is_start;
  }
  throw Error(ErrorCode::NoPlanFound, "plan_oracle: budget exhausted");
}

}  // namespace kdmp
