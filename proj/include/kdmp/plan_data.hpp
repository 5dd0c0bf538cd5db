#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "kdmp/arm.hpp"
#include "kdmp/error.hpp"
#include "kdmp/plan.hpp"

namespace kdmp {

struct KeypointParams {
  enum class Norm { Linf, L2 };
  double accel_threshold = 0.05;  // radians; calibrated per corpus
  Norm norm = Norm::Linf;
};

inline double second_difference_norm(const VecD& prev, const VecD& cur, const VecD& next,
                                     KeypointParams::Norm norm) {
  double linf = 0.0, l2 = 0.0;
  for (std::size_t j = 0; j < cur.size(); ++j) {
    const double a = next[j] - 2.0 * cur[j] + prev[j];
    linf = std::max(linf, std::abs(a));
    l2 += a * a;
  }
  return norm == KeypointParams::Norm::Linf ? linf : std::sqrt(l2);
}

// Keep endpoints plus every interior config whose discrete second difference
// exceeds the threshold (the direction-change poses).
inline Plan extract_keypoints(const Plan& plan, const KeypointParams& params) {
  if (params.accel_threshold <= 0.0) {
    throw Error(ErrorCode::BadArgument, "extract_keypoints: threshold must be positive");
  }
  if (plan.size() < 2) return plan;
  std::vector<VecD> kept;
  kept.push_back(plan.configs.front());
  for (std::size_t i = 1; i + 1 < plan.size(); ++i) {
    const double a = second_difference_norm(plan.configs[i - 1], plan.configs[i],
                                            plan.configs[i + 1], params.norm);
    if (a > params.accel_threshold) kept.push_back(plan.configs[i]);
  }
  kept.push_back(plan.configs.back());
  return make_plan(std::move(kept), PlanRep::keypoint, plan.scene_id);
}

namespace detail {

// Walk `hops` chords of length c along the polyline from its start. Returns
// the remaining straight-line distance to the polyline end and, if `out` is
// given, appends the visited points. Each hop lands on the polyline at the
// first forward point exactly c away from the previous one.
inline double chord_walk(const std::vector<VecD>& poly, double c, std::size_t hops,
                         std::vector<VecD>* out) {
  VecD cur = poly.front();
  std::size_t seg = 0;
  double s0 = 0.0;  // parameter of cur within segment seg
  for (std::size_t hop = 0; hop < hops; ++hop) {
    bool placed = false;
    for (std::size_t j = seg; j + 1 < poly.size() && !placed; ++j) {
      const VecD& A = poly[j];
      const VecD& B = poly[j + 1];
      const double lo = j == seg ? s0 : 0.0;
      // solve |A + s(B-A) - cur| = c for s in [lo, 1]; first upward crossing
      double a = 0.0, b = 0.0, e = -c * c;
      for (std::size_t k = 0; k < A.size(); ++k) {
        const double d = B[k] - A[k];
        const double f = A[k] - cur[k];
        a += d * d;
        b += 2.0 * d * f;
        e += f * f;
      }
      const double disc = b * b - 4.0 * a * e;
      if (a > 0.0 && disc >= 0.0) {
        const double s = (-b + std::sqrt(disc)) / (2.0 * a);
        if (s >= lo - 1e-15 && s <= 1.0) {
          cur = lerp(A, B, std::clamp(s, 0.0, 1.0));
          seg = j;
          s0 = std::clamp(s, 0.0, 1.0);
          placed = true;
        }
      }
    }
    if (!placed) return 0.0;  // polyline exhausted before finishing the hops
    if (out) out->push_back(cur);
  }
  return dist2(cur, poly.back());
}

}  // namespace detail

// Reparameterize onto the polyline with exactly equal consecutive L2 spacing.
// Equal arc-length stepping gives unequal chords at corners, so the chord
// length is bisected until the final hop onto the endpoint matches the rest.
inline Plan resample_fixed_step(const Plan& plan, double step) {
  if (step <= 0.0) throw Error(ErrorCode::BadArgument, "resample_fixed_step: step <= 0");
  if (plan.size() < 2) return plan;
  const double S = plan_arc_length(plan.configs);
  if (S <= step) {
    return make_plan({plan.configs.front(), plan.configs.back()}, PlanRep::fixed_step,
                     plan.scene_id);
  }
  // rem(c) - c is positive as c -> 0 and non-positive at c = step (m-1 chords
  // of length `step` cover arc length >= S - step), so bisection converges to
  // a sign change. rem can jump where a hop's sphere-crossing switches
  // segments, and the bisection may land on such a jump instead of a root;
  // the jump set depends on the hop count, so retry with one more hop.
  const std::size_t n = static_cast<std::size_t>(std::ceil(S / step));  // hops
  for (std::size_t m = n; m < n + 64; ++m) {
    double lo = 0.0, hi = step;
    for (int it = 0; it < 200; ++it) {
      const double c = 0.5 * (lo + hi);
      const double rem = detail::chord_walk(plan.configs, c, m - 1, nullptr);
      if (rem - c > 0.0) {
        lo = c;
      } else {
        hi = c;
      }
      if (hi - lo < 1e-13) break;
    }
    const double c = 0.5 * (lo + hi);
    std::vector<VecD> out;
    out.reserve(m + 1);
    out.push_back(plan.configs.front());
    const double rem = detail::chord_walk(plan.configs, c, m - 1, &out);
    if (std::abs(rem - c) > 1e-10) continue;
    out.push_back(plan.configs.back());
    return make_plan(std::move(out), PlanRep::fixed_step, plan.scene_id);
  }
  throw Error(ErrorCode::NoPlanFound, "resample_fixed_step: equal-chord solve failed");
}

// Affine bijection joint space <-> [-1, 1]^D from the joint limits.
struct Normalizer {
  VecD lo, hi;

  static Normalizer from_arm(const ArmSpec& spec) {
    Normalizer n;
    for (auto [l, h] : spec.joint_limits) {
      n.lo.push_back(l);
      n.hi.push_back(h);
    }
    return n;
  }

  std::size_t dim() const { return lo.size(); }

  VecD to_norm(const VecD& q) const {
    VecD x(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
      x[i] = 2.0 * (q[i] - lo[i]) / (hi[i] - lo[i]) - 1.0;
    }
    return x;
  }

  VecD from_norm(const VecD& x) const {
    VecD q(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      q[i] = lo[i] + (x[i] + 1.0) * 0.5 * (hi[i] - lo[i]);
    }
    return q;
  }
};

// One training sample: plan step i conditioned on (start=q_i, goal=q_last),
// target = the following `horizon` configs, goal-padded, normalized.
struct TaskSample {
  VecD start;   // radians
  VecD goal;    // radians
  std::uint64_t scene_index = 0;
  std::vector<double> target;  // horizon x D, row-major, normalized
  std::vector<double> embedding;  // optional point-cloud code
};

inline std::vector<TaskSample> build_samples(const Plan& plan, const Normalizer& norm,
                                             std::size_t horizon = 16,
                                             std::uint64_t scene_index = 0) {
  if (plan.size() < 2) {
    throw Error(ErrorCode::BadArgument, "build_samples: plan must have >= 2 configs");
  }
  const std::size_t D = plan.configs.front().size();
  std::vector<TaskSample> samples;
  samples.reserve(plan.size() - 1);
  const VecD& goal = plan.configs.back();
  for (std::size_t i = 0; i + 1 < plan.size(); ++i) {
    TaskSample s;
    s.start = plan.configs[i];
    s.goal = goal;
    s.scene_index = scene_index;
    s.target.resize(horizon * D);
    for (std::size_t j = 0; j < horizon; ++j) {
      const std::size_t idx = std::min(i + 1 + j, plan.size() - 1);
      const VecD row = norm.to_norm(plan.configs[idx]);
      std::copy(row.begin(), row.end(), s.target.begin() + static_cast<std::ptrdiff_t>(j * D));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// Keeps exactly the plans with more than four keypoints (the hard subset
// boundary); input plans must already be in keypoint representation.
inline std::vector<Plan> refine_filter(const std::vector<Plan>& plans,
                                       std::size_t min_keypoints = 5) {
  std::vector<Plan> kept;
  for (const auto& p : plans) {
    if (p.representation != PlanRep::keypoint) {
      throw Error(ErrorCode::BadArgument, "refine_filter: expects keypoint plans");
    }
    if (p.size() >= min_keypoints) kept.push_back(p);
  }
  return kept;
}

enum class ArcMetric { L2, L1 };

inline double plan_length_metric(const Plan& p, ArcMetric metric) {
  if (metric == ArcMetric::L2) return plan_arc_length(p.configs);
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < p.configs.size(); ++i) {
    for (std::size_t j = 0; j < p.configs[i].size(); ++j) {
      s += std::abs(p.configs[i + 1][j] - p.configs[i][j]);
    }
  }
  return s;
}

struct DatasetStats {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;  // population variance
  double max = 0.0;
  double min = 0.0;
  std::map<std::size_t, std::size_t> keypoint_histogram;  // size -> plans
};

inline DatasetStats dataset_stats(const std::vector<Plan>& plans, ArcMetric metric = ArcMetric::L2) {
  if (plans.empty()) throw Error(ErrorCode::EmptyDataset, "dataset_stats: no plans");
  DatasetStats st;
  st.count = plans.size();
  st.min = 1e300;
  st.max = -1e300;
  double sum = 0.0;
  std::vector<double> lens;
  lens.reserve(plans.size());
  bool all_keypoint = true;
  for (const auto& p : plans) {
    const double len = plan_length_metric(p, metric);
    lens.push_back(len);
    sum += len;
    st.min = std::min(st.min, len);
    st.max = std::max(st.max, len);
    all_keypoint = all_keypoint && p.representation == PlanRep::keypoint;
  }
  st.mean = sum / static_cast<double>(st.count);
  double acc = 0.0;
  for (double len : lens) acc += (len - st.mean) * (len - st.mean);
  st.variance = acc / static_cast<double>(st.count);
  if (all_keypoint) {
    for (const auto& p : plans) st.keypoint_histogram[p.size()]++;
  }
  return st;
}

// Median keypoint count is monotone non-increasing in epsilon; bisect until
// the median over the corpus lands in [lo_target, hi_target].
inline double calibrate_keypoint_epsilon(const std::vector<Plan>& plans,
                                         KeypointParams::Norm norm,
                                         std::size_t lo_target = 4, std::size_t hi_target = 8) {
  if (plans.empty()) throw Error(ErrorCode::EmptyDataset, "calibrate_keypoint_epsilon");
  auto median_count = [&](double eps) {
    KeypointParams kp{eps, norm};
    std::vector<std::size_t> counts;
    counts.reserve(plans.size());
    for (const auto& p : plans) counts.push_back(extract_keypoints(p, kp).size());
    std::nth_element(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(counts.size() / 2),
                     counts.end());
    return counts[counts.size() / 2];
  };
  double lo = 1e-6, hi = 2.0;
  double best_eps = lo;
  double best_gap = 1e300;
  for (int it = 0; it < 60; ++it) {
    const double mid = std::sqrt(lo * hi);  // geometric bisection
    const std::size_t m = median_count(mid);
    const double gap = m < lo_target ? static_cast<double>(lo_target - m)
                       : m > hi_target ? static_cast<double>(m - hi_target)
                                       : 0.0;
    if (gap < best_gap) {
      best_gap = gap;
      best_eps = mid;
      if (gap == 0.0) break;
    }
    if (m > hi_target) {
      lo = mid;  // too many keypoints -> raise threshold
    } else if (m < lo_target) {
      hi = mid;
    }
  }
  return best_eps;
}

}  // namespace kdmp
