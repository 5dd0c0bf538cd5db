#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "kdmp/dataset.hpp"
#include "kdmp/error.hpp"
#include "kdmp/parallel.hpp"
#include "kdmp/planner.hpp"

namespace kdmp {

struct EvalConfig {
  std::size_t K = 32;
  double goal_tol = 0.05;
  std::size_t max_rounds = 4;
  double interp_step = 0.05;
  double collision_resolution = 0.01;
  std::uint64_t seed = 1;
  std::size_t limit = 0;  // 0 = every held-out plan
};

// One evaluated task. Everything except the wall-clock columns is a pure
// function of (dataset, model, seed); timings go to their own file so the
// deterministic reports stay byte-stable across reruns.
struct TaskRow {
  std::size_t plan_index = 0;
  std::size_t scene_index = 0;
  std::size_t keypoint_count = 0;
  bool hard = false;  // reference plan has more than four keypoints
  PlanStatus status = PlanStatus::NoPlanWithinRounds;
  bool success = false;
  double in_batch = 0.0;
  std::size_t rounds_used = 0;
  double generated_arc = 0.0;  // meaningful iff success
  double reference_arc = 0.0;  // oracle plan arc length
  double length_diff = 0.0;    // generated - reference, iff success
  double inference_s = 0.0;
  double collision_s = 0.0;
  double total_s = 0.0;
};

struct StatBlock {
  double mean = 0.0, var = 0.0, max = 0.0, min = 0.0;
};

inline StatBlock stat_block(const std::vector<double>& xs) {
  StatBlock st;
  if (xs.empty()) return st;
  st.min = xs.front();
  st.max = xs.front();
  double sum = 0.0;
  for (double x : xs) {
    sum += x;
    st.min = std::min(st.min, x);
    st.max = std::max(st.max, x);
  }
  st.mean = sum / static_cast<double>(xs.size());
  double acc = 0.0;
  for (double x : xs) acc += (x - st.mean) * (x - st.mean);
  st.var = acc / static_cast<double>(xs.size());
  return st;
}

struct EvalReport {
  std::size_t n_tasks = 0;
  std::size_t n_hard = 0;
  std::size_t n_success = 0;
  double success_all = 0.0;   // percent
  double success_hard = 0.0;  // percent over the hard subset
  StatBlock length_diff;      // over successful tasks, radians
  StatBlock total_s, inference_s, collision_s;
  std::vector<std::size_t> in_batch_histogram = std::vector<std::size_t>(10, 0);
};

inline double length_diff(const Plan& generated, const Plan& reference) {
  return generated.arc_length - reference.arc_length;
}

// Evaluate the model on every held-out plan's (start, goal) pair. Tasks are
// independent and seeded by plan index, so the worker count cannot change any
// non-timing output.
inline std::vector<TaskRow> run_evaluation(const ModelView& model, const Dataset& ds,
                                           const EvalConfig& cfg) {
  if (model.D != ds.D) {
    throw Error(ErrorCode::ConfigMismatch, "evaluate: model D " + std::to_string(model.D) +
                                               " != dataset D " + std::to_string(ds.D));
  }
  const bool with_emb = model.cond_dim > 2 * model.D;
  if (with_emb && ds.E != model.cond_dim - 2 * model.D) {
    throw Error(ErrorCode::ConfigMismatch,
                "evaluate: model expects embedding dim " +
                    std::to_string(model.cond_dim - 2 * model.D) + ", dataset has " +
                    std::to_string(ds.E));
  }
  std::vector<std::size_t> test = ds.plan_indices(true);
  if (test.empty()) throw Error(ErrorCode::EmptyDataset, "evaluate: no held-out plans");
  if (cfg.limit > 0 && test.size() > cfg.limit) test.resize(cfg.limit);

  const KeypointParams kp{ds.epsilon, ds.norm};
  std::vector<TaskRow> rows(test.size());
  std::vector<std::exception_ptr> errors(test.size());
  parallel_for(test.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t n = lo; n < hi; ++n) {
      try {
        const std::size_t pi = test[n];
        const PlanRecord& rec = ds.plans[pi];
        const std::size_t scene = rec.plan.scene_id;
        PlanRequest req;
        req.scene = ds.scenes[scene];
        req.start = rec.plan.configs.front();
        req.goal = rec.plan.configs.back();
        if (with_emb) req.embedding = ds.embeddings[scene];
        req.K = cfg.K;
        req.goal_tol = cfg.goal_tol;
        req.max_rounds = cfg.max_rounds;
        req.interp_step = cfg.interp_step;
        req.collision_resolution = cfg.collision_resolution;
        PlanResult res = plan_batched(model, ds.arm, req, derive_seed(cfg.seed, pi));

        TaskRow& row = rows[n];
        row.plan_index = pi;
        row.scene_index = scene;
        row.keypoint_count = rec.plan.representation == PlanRep::keypoint
                                 ? rec.plan.size()
                                 : extract_keypoints(rec.plan, kp).size();
        row.hard = row.keypoint_count > 4;
        row.status = res.status;
        row.success = res.status == PlanStatus::Success;
        row.in_batch = in_batch_success_rate(res);
        row.rounds_used = res.rounds_used;
        row.reference_arc = rec.oracle_arc;
        if (row.success) {
          row.generated_arc = res.best_plan->arc_length;
          row.length_diff = row.generated_arc - row.reference_arc;
        }
        row.inference_s = res.timing.inference_s;
        row.collision_s = res.timing.collision_s;
        row.total_s = res.timing.total_s;
      } catch (...) {
        errors[n] = std::current_exception();
      }
    }
  });
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

inline std::vector<TaskRow> run_evaluation(const DenoiserBundle& model, const Dataset& ds,
                                           const EvalConfig& cfg) {
  return run_evaluation(model_view(model), ds, cfg);
}

// Deterministic single-threaded reduce over the per-task rows.
inline EvalReport aggregate_report(const std::vector<TaskRow>& rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyDataset, "aggregate_report: no rows");
  EvalReport rep;
  rep.n_tasks = rows.size();
  std::vector<double> diffs, totals, infs, cols;
  std::size_t hard_success = 0;
  for (const auto& row : rows) {
    if (row.hard) ++rep.n_hard;
    if (row.success) {
      ++rep.n_success;
      if (row.hard) ++hard_success;
      diffs.push_back(row.length_diff);
    }
    totals.push_back(row.total_s);
    infs.push_back(row.inference_s);
    cols.push_back(row.collision_s);
    const double r = std::clamp(row.in_batch, 0.0, 1.0);
    const std::size_t bin = std::min<std::size_t>(9, static_cast<std::size_t>(r * 10.0));
    rep.in_batch_histogram[bin]++;
  }
  rep.success_all = 100.0 * static_cast<double>(rep.n_success) / static_cast<double>(rep.n_tasks);
  rep.success_hard = rep.n_hard == 0 ? 0.0
                                     : 100.0 * static_cast<double>(hard_success) /
                                           static_cast<double>(rep.n_hard);
  rep.length_diff = stat_block(diffs);
  rep.total_s = stat_block(totals);
  rep.inference_s = stat_block(infs);
  rep.collision_s = stat_block(cols);
  return rep;
}

// ---- report files ---------------------------------------------------------

inline void write_tasks_csv(const std::string& path, const std::vector<TaskRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.precision(17);
  os << "plan,scene,keypoints,hard,status,success,in_batch,rounds,generated_arc,"
        "reference_arc,length_diff,inference_s,collision_s,total_s\n";
  for (const auto& r : rows) {
    os << r.plan_index << "," << r.scene_index << "," << r.keypoint_count << ","
       << (r.hard ? 1 : 0) << "," << plan_status_name(r.status) << "," << (r.success ? 1 : 0)
       << "," << r.in_batch << "," << r.rounds_used << "," << r.generated_arc << ","
       << r.reference_arc << "," << r.length_diff << "," << r.inference_s << ","
       << r.collision_s << "," << r.total_s << "\n";
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

// Success and plan-length table, one row per model. No wall-clock columns:
// this file must be byte-identical across reruns of the same manifest.
inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, EvalReport>>& entries) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.precision(17);
  os << "model,n_tasks,n_hard,n_success,success_all,success_hard,"
        "length_diff_mean,length_diff_var,length_diff_max,length_diff_min\n";
  for (const auto& [name, rep] : entries) {
    os << name << "," << rep.n_tasks << "," << rep.n_hard << "," << rep.n_success << ","
       << rep.success_all << "," << rep.success_hard << "," << rep.length_diff.mean << ","
       << rep.length_diff.var << "," << rep.length_diff.max << "," << rep.length_diff.min
       << "\n";
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

inline void write_timing_csv(const std::string& path,
                             const std::vector<std::pair<std::string, EvalReport>>& entries) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.precision(17);
  os << "model,total_mean,total_var,total_max,total_min,"
        "inference_mean,inference_var,inference_max,inference_min,"
        "collision_mean,collision_var,collision_max,collision_min\n";
  for (const auto& [name, rep] : entries) {
    const auto put = [&](const StatBlock& b) {
      os << "," << b.mean << "," << b.var << "," << b.max << "," << b.min;
    };
    os << name;
    put(rep.total_s);
    put(rep.inference_s);
    put(rep.collision_s);
    os << "\n";
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

inline void write_histogram_csv(const std::string& path, const EvalReport& rep) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < rep.in_batch_histogram.size(); ++b) {
    os << 0.1 * static_cast<double>(b) << "," << 0.1 * static_cast<double>(b + 1) << ","
       << rep.in_batch_histogram[b] << "\n";
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

// Minimal self-contained bar chart of the in-batch success-rate histogram.
inline void write_histogram_svg(const std::string& path, const EvalReport& rep) {
  const double W = 640, Hgt = 400, mx = 60, my = 40;
  std::size_t peak = 1;
  for (std::size_t c : rep.in_batch_histogram) peak = std::max(peak, c);
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << Hgt
     << "' viewBox='0 0 " << W << " " << Hgt << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  const double plot_w = W - 2 * mx, plot_h = Hgt - 2 * my;
  for (std::size_t b = 0; b < rep.in_batch_histogram.size(); ++b) {
    const double h = plot_h * static_cast<double>(rep.in_batch_histogram[b]) /
                     static_cast<double>(peak);
    const double x = mx + plot_w * static_cast<double>(b) / 10.0;
    os << "<rect x='" << x + 2 << "' y='" << Hgt - my - h << "' width='" << plot_w / 10.0 - 4
       << "' height='" << h << "' fill='#4878a8'/>\n";
    os << "<text x='" << x + plot_w / 20.0 << "' y='" << Hgt - my + 16
       << "' font-size='11' text-anchor='middle'>" << 0.1 * static_cast<double>(b) << "</text>\n";
    os << "<text x='" << x + plot_w / 20.0 << "' y='" << Hgt - my - h - 4
       << "' font-size='11' text-anchor='middle'>" << rep.in_batch_histogram[b] << "</text>\n";
  }
  os << "<text x='" << W / 2 << "' y='" << Hgt - 8
     << "' font-size='13' text-anchor='middle'>in-batch success rate</text>\n";
  os << "<text x='16' y='" << Hgt / 2
     << "' font-size='13' text-anchor='middle' transform='rotate(-90 16 " << Hgt / 2
     << ")'>tasks</text>\n";
  os << "</svg>\n";
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

// ---- runtime comparison ----------------------------------------------------

// Oracle-budget vs neural wall time. The aggregate is sum-based so it can be
// recomputed exactly from the per-task file.
struct RuntimeComparison {
  double oracle_budget_s = 0.0;
  std::size_t n_tasks = 0;
  double neural_total_sum = 0.0;
  double aggregate_ratio = 0.0;  // n * budget / sum(neural_total)
  StatBlock total_s, inference_s, collision_s;
};

inline RuntimeComparison compare_runtime(const std::vector<TaskRow>& rows,
                                         double oracle_budget_s) {
  if (rows.empty()) throw Error(ErrorCode::EmptyDataset, "compare_runtime: no rows");
  if (oracle_budget_s <= 0.0) {
    throw Error(ErrorCode::BadArgument, "compare_runtime: budget must be positive");
  }
  RuntimeComparison cmp;
  cmp.oracle_budget_s = oracle_budget_s;
  cmp.n_tasks = rows.size();
  std::vector<double> totals, infs, cols;
  for (const auto& r : rows) {
    cmp.neural_total_sum += r.total_s;
    totals.push_back(r.total_s);
    infs.push_back(r.inference_s);
    cols.push_back(r.collision_s);
  }
  cmp.aggregate_ratio =
      static_cast<double>(cmp.n_tasks) * oracle_budget_s / cmp.neural_total_sum;
  cmp.total_s = stat_block(totals);
  cmp.inference_s = stat_block(infs);
  cmp.collision_s = stat_block(cols);
  return cmp;
}

inline void write_runtime_csv(const std::string& path, const std::vector<TaskRow>& rows,
                              const RuntimeComparison& cmp) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.precision(17);
  os << "plan,oracle_budget_s,neural_total_s,neural_inference_s,neural_collision_s,ratio\n";
  for (const auto& r : rows) {
    os << r.plan_index << "," << cmp.oracle_budget_s << "," << r.total_s << ","
       << r.inference_s << "," << r.collision_s << "," << cmp.oracle_budget_s / r.total_s
       << "\n";
  }
  os << "aggregate," << cmp.oracle_budget_s << "," << cmp.neural_total_sum << ",,"
     << "," << cmp.aggregate_ratio << "\n";
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

}  // namespace kdmp
