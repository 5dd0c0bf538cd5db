#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kdmp/arm.hpp"
#include "kdmp/diffusion.hpp"
#include "kdmp/error.hpp"
#include "kdmp/parallel.hpp"
#include "kdmp/plan.hpp"
#include "kdmp/scene_gen.hpp"

namespace kdmp {

struct PlanRequest {
  Scene scene;
  VecD start;      // radians
  VecD goal;       // radians
  VecD embedding;  // scene cloud code; empty unless the model conditions on one
  std::size_t K = 32;
  double goal_tol = 0.05;  // radians, L-inf
  std::size_t max_rounds = 4;
  double interp_step = 0.05;            // radians, dump/execution resolution
  double collision_resolution = 0.01;   // radians

  void validate() const {
    if (K == 0) throw Error(ErrorCode::BadArgument, "plan: K must be >= 1");
    if (max_rounds == 0) throw Error(ErrorCode::BadArgument, "plan: max_rounds must be >= 1");
    if (goal_tol <= 0.0 || interp_step <= 0.0 || collision_resolution <= 0.0) {
      throw Error(ErrorCode::BadArgument, "plan: tolerances must be positive");
    }
    if (start.size() != goal.size()) {
      throw Error(ErrorCode::ShapeMismatch, "plan: start/goal dim mismatch");
    }
  }
};

enum class PlanStatus { Success, NoPlanWithinRounds, AllCollide };

inline const char* plan_status_name(PlanStatus s) {
  switch (s) {
    case PlanStatus::Success: return "Success";
    case PlanStatus::NoPlanWithinRounds: return "NoPlanWithinRounds";
    case PlanStatus::AllCollide: return "AllCollide";
  }
  return "?";
}

// Per-candidate, per-round diagnostics. collision_free means the candidate's
// accumulated plan is still valid after this round; arc_length is cumulative.
struct CandidateRound {
  bool collision_free = false;
  bool reached_goal = false;
  double arc_length = 0.0;
};

// One appended waypoint; collision marks the segment arriving at it.
struct TraceStep {
  std::size_t round = 0;
  std::size_t step = 0;
  VecD q;
  bool collision = false;
};

struct PlanTiming {
  double inference_s = 0.0;
  double collision_s = 0.0;
  double total_s = 0.0;
};

struct PlanResult {
  PlanStatus status = PlanStatus::NoPlanWithinRounds;
  std::optional<Plan> best_plan;
  std::size_t best_candidate = 0;
  std::vector<std::vector<CandidateRound>> candidates;  // [K][rounds_used]
  std::vector<std::vector<TraceStep>> traces;           // [K], start + appended windows
  PlanTiming timing;
  std::size_t rounds_used = 0;
};

namespace detail {

inline PlanRep parse_plan_rep(const std::string& s) {
  return s == "keypoint" ? PlanRep::keypoint : PlanRep::fixed_step;
}

}  // namespace detail

// Sampling seam for the planner: dimensions, the joint-space normalizer, and
// a row-batched window sampler. Row i of sample_rows must depend only on
// (conds[i], streams[i]) — plan_batched relies on that for its determinism
// and K-monotonicity guarantees.
struct ModelView {
  std::size_t D = 0;
  std::size_t horizon = 0;
  std::size_t cond_dim = 0;
  Normalizer norm;
  std::string representation = "keypoint";
  std::function<std::vector<std::vector<double>>(const std::vector<std::vector<double>>&,
                                                 const std::vector<std::uint64_t>&)>
      sample_rows;
};

inline ModelView model_view(const DenoiserBundle& b) {
  ModelView v;
  v.D = b.net.spec().D;
  v.horizon = b.net.spec().horizon;
  v.cond_dim = b.net.spec().cond_dim;
  v.norm = b.norm;
  v.representation = b.representation;
  v.sample_rows = [&b](const std::vector<std::vector<double>>& conds,
                       const std::vector<std::uint64_t>& streams) {
    return sample_actions_rows(b.store, b.net, b.schedule, conds, streams);
  };
  return v;
}

// Denoise K candidate plans, de-normalize, collision-check, and replan from
// the final configuration when the goal is not reached. Candidates advance
// independently: candidate i in round r draws from stream (seed, r, i), so
// growing K appends candidates without touching existing ones, and dropping
// dead candidates from the batch does not change the survivors.
inline PlanResult plan_batched(const ModelView& model, const ArmSpec& arm,
                               const PlanRequest& req, std::uint64_t seed) {
  req.validate();
  const std::size_t D = model.D, H = model.horizon, K = req.K;
  if (req.start.size() != D) {
    throw Error(ErrorCode::ConfigMismatch,
                "plan: start dim " + std::to_string(req.start.size()) + " != model D " +
                    std::to_string(D));
  }
  const std::size_t want_cond = 2 * D + req.embedding.size();
  if (want_cond != model.cond_dim) {
    throw Error(ErrorCode::ConfigMismatch,
                "plan: condition dim " + std::to_string(want_cond) + " (2*" + std::to_string(D) +
                    " + embedding " + std::to_string(req.embedding.size()) + ") != model " +
                    std::to_string(model.cond_dim));
  }

  const auto t_start = std::chrono::steady_clock::now();
  PlanResult res;
  res.candidates.assign(K, {});
  res.traces.assign(K, {});
  for (std::size_t i = 0; i < K; ++i) {
    res.traces[i].push_back({0, 0, req.start, false});
  }

  // Start already inside the goal region: trivial plan, no denoising needed.
  if (dist_inf(req.start, req.goal) <= req.goal_tol &&
      config_valid(arm, req.scene, req.start)) {
    res.status = PlanStatus::Success;
    res.best_plan = make_plan({req.start}, detail::parse_plan_rep(model.representation),
                              req.scene.seed);
    res.best_candidate = 0;
    res.rounds_used = 1;
    for (std::size_t i = 0; i < K; ++i) res.candidates[i].push_back({true, true, 0.0});
    res.timing.total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
  }

  auto make_row_cond = [&](const VecD& cur) {
    std::vector<double> c = model.norm.to_norm(cur);
    const VecD g = model.norm.to_norm(req.goal);
    c.insert(c.end(), g.begin(), g.end());
    c.insert(c.end(), req.embedding.begin(), req.embedding.end());
    return c;
  };

  std::vector<bool> alive(K, true);
  std::vector<VecD> ends(K, req.start);
  std::vector<double> arcs(K, 0.0);

  for (std::size_t round = 1; round <= req.max_rounds; ++round) {
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < K; ++i) {
      if (alive[i]) live.push_back(i);
    }
    if (live.empty()) break;

    std::vector<std::vector<double>> conds;
    std::vector<std::uint64_t> streams;
    conds.reserve(live.size());
    streams.reserve(live.size());
    for (std::size_t i : live) {
      conds.push_back(make_row_cond(ends[i]));
      streams.push_back(derive_seed(seed, round, i));
    }

    const auto t0 = std::chrono::steady_clock::now();
    const auto windows = model.sample_rows(conds, streams);
    const auto t1 = std::chrono::steady_clock::now();
    res.timing.inference_s += std::chrono::duration<double>(t1 - t0).count();
    if (windows.size() != live.size()) {
      throw Error(ErrorCode::ShapeMismatch, "plan: sampler returned wrong row count");
    }
    for (const auto& w : windows) {
      if (w.size() != H * D) {
        throw Error(ErrorCode::ShapeMismatch, "plan: sampler returned wrong window size");
      }
    }

    // De-normalize each live candidate's window into H waypoints.
    std::vector<std::vector<VecD>> appended(live.size());
    for (std::size_t r = 0; r < live.size(); ++r) {
      appended[r].reserve(H);
      for (std::size_t h = 0; h < H; ++h) {
        VecD row(windows[r].begin() + static_cast<std::ptrdiff_t>(h * D),
                 windows[r].begin() + static_cast<std::ptrdiff_t>((h + 1) * D));
        appended[r].push_back(model.norm.from_norm(row));
      }
    }

    // Check the H new segments of every live candidate; checks are pure and
    // order-independent, so the row split does not affect the result.
    std::vector<std::size_t> first_bad(live.size());
    parallel_for(live.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t r = lo; r < hi; ++r) {
        std::size_t bad = H;  // H = all segments valid
        VecD prev = ends[live[r]];
        for (std::size_t h = 0; h < H; ++h) {
          if (!edge_valid(arm, req.scene, prev, appended[r][h], req.collision_resolution)) {
            bad = h;
            break;
          }
          prev = appended[r][h];
        }
        first_bad[r] = bad;
      }
    });
    const auto t2 = std::chrono::steady_clock::now();
    res.timing.collision_s += std::chrono::duration<double>(t2 - t1).count();

    for (std::size_t r = 0; r < live.size(); ++r) {
      const std::size_t i = live[r];
      VecD prev = ends[i];
      for (std::size_t h = 0; h < H; ++h) {
        arcs[i] += dist2(prev, appended[r][h]);
        res.traces[i].push_back({round, h, appended[r][h], h == first_bad[r]});
        prev = appended[r][h];
      }
      alive[i] = first_bad[r] == H;
      ends[i] = appended[r].back();
    }
    for (std::size_t i = 0; i < K; ++i) {
      const bool reached = alive[i] && dist_inf(ends[i], req.goal) <= req.goal_tol;
      res.candidates[i].push_back({alive[i], reached, arcs[i]});
    }
    res.rounds_used = round;

    std::size_t best = K;
    for (std::size_t i = 0; i < K; ++i) {
      if (res.candidates[i].back().reached_goal && (best == K || arcs[i] < arcs[best])) {
        best = i;
      }
    }
    if (best < K) {
      std::vector<VecD> configs;
      configs.reserve(res.traces[best].size());
      for (const auto& step : res.traces[best]) configs.push_back(step.q);
      Plan plan = make_plan(std::move(configs),
                            detail::parse_plan_rep(model.representation), req.scene.seed);
      // A success must survive an independent full re-validation.
      for (std::size_t c = 0; c + 1 < plan.configs.size(); ++c) {
        if (!edge_valid(arm, req.scene, plan.configs[c], plan.configs[c + 1],
                        req.collision_resolution)) {
          throw Error(ErrorCode::NoPlanFound, "plan: success failed re-validation");
        }
      }
      res.status = PlanStatus::Success;
      res.best_plan = std::move(plan);
      res.best_candidate = best;
      break;
    }
  }

  if (res.status != PlanStatus::Success) {
    const bool any_alive = std::any_of(alive.begin(), alive.end(), [](bool a) { return a; });
    res.status = any_alive ? PlanStatus::NoPlanWithinRounds : PlanStatus::AllCollide;
  }
  res.timing.total_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

inline PlanResult plan_batched(const DenoiserBundle& model, const ArmSpec& arm,
                               const PlanRequest& req, std::uint64_t seed) {
  return plan_batched(model_view(model), arm, req, seed);
}

// Fraction of candidates that were collision-free and inside the goal region
// after the first round.
inline double in_batch_success_rate(const PlanResult& res) {
  if (res.candidates.empty()) {
    throw Error(ErrorCode::BadArgument, "in_batch_success_rate: no candidate diagnostics");
  }
  std::size_t hits = 0;
  for (const auto& rounds : res.candidates) {
    if (!rounds.empty() && rounds.front().collision_free && rounds.front().reached_goal) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(res.candidates.size());
}

// Per-candidate waypoint dump: candidate,round,step,q_1..q_D,collision_flag.
inline void write_plan_csv(const std::string& path, const PlanResult& res) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.precision(17);
  os << "candidate,round,step";
  const std::size_t D = res.traces.empty() || res.traces[0].empty()
                            ? 0
                            : res.traces[0].front().q.size();
  for (std::size_t j = 1; j <= D; ++j) os << ",q_" << j;
  os << ",collision_flag\n";
  for (std::size_t i = 0; i < res.traces.size(); ++i) {
    for (const auto& step : res.traces[i]) {
      os << i << "," << step.round << "," << step.step;
      for (double v : step.q) os << "," << v;
      os << "," << (step.collision ? 1 : 0) << "\n";
    }
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

// Densify a waypoint plan to at most `step` radians (L2) between consecutive
// configs; keypoint plans become executable fixed-step trajectories.
inline Plan interpolate_plan(const Plan& plan, double step) {
  if (step <= 0.0) throw Error(ErrorCode::BadArgument, "interpolate_plan: step <= 0");
  if (plan.size() < 2) return plan;
  std::vector<VecD> out;
  out.push_back(plan.configs.front());
  for (std::size_t i = 0; i + 1 < plan.size(); ++i) {
    const VecD& a = plan.configs[i];
    const VecD& b = plan.configs[i + 1];
    const double len = dist2(a, b);
    const std::size_t n = len == 0.0 ? 1 : static_cast<std::size_t>(std::ceil(len / step));
    for (std::size_t k = 1; k <= n; ++k) {
      out.push_back(lerp(a, b, static_cast<double>(k) / static_cast<double>(n)));
    }
  }
  Plan dense = make_plan(std::move(out), plan.representation, plan.scene_id);
  dense.arc_length = plan.arc_length;  // linear interpolation preserves length
  return dense;
}

}  // namespace kdmp
