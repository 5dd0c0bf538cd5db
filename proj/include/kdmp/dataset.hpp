#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "kdmp/arm.hpp"
#include "kdmp/checkpoint.hpp"
#include "kdmp/error.hpp"
#include "kdmp/parallel.hpp"
#include "kdmp/plan_data.hpp"
#include "kdmp/rng.hpp"
#include "kdmp/rrt.hpp"
#include "kdmp/scene_gen.hpp"

namespace kdmp {

struct DatasetConfig {
  std::size_t n_scenes = 500;
  std::size_t plans_per_scene = 10;
  PlanRep representation = PlanRep::keypoint;
  bool refined = false;  // drop train plans with <= 4 keypoints
  std::size_t cloud_points = 512;
  std::size_t horizon = 16;
  double fixed_step_delta = 0.1;   // radians
  double keypoint_epsilon = 0.0;   // <= 0: calibrate on the train split
  KeypointParams::Norm keypoint_norm = KeypointParams::Norm::Linf;
  std::uint64_t master_seed = 1;
  std::size_t split_mod = 10;  // scene i is held out iff i % split_mod == split_test
  std::size_t split_test = 9;
  std::size_t scene_attempt_cap = 16;
  std::size_t config_attempt_cap = 200;
  PlannerBudget budget;
  SceneGenParams scene;
  ArmSpec arm = desk_arm();

  void validate() const {
    if (n_scenes == 0 || plans_per_scene == 0) {
      throw Error(ErrorCode::BadArgument, "dataset: n_scenes and plans_per_scene must be positive");
    }
    if (representation == PlanRep::raw) {
      throw Error(ErrorCode::BadArgument, "dataset: representation must be fixed_step or keypoint");
    }
    if (refined && representation != PlanRep::keypoint) {
      throw Error(ErrorCode::BadArgument, "dataset: refined requires keypoint representation");
    }
    if (fixed_step_delta <= 0.0) throw Error(ErrorCode::BadArgument, "dataset: delta must be > 0");
    if (horizon == 0) throw Error(ErrorCode::BadArgument, "dataset: horizon must be positive");
    if (split_mod < 2 || split_test >= split_mod) {
      throw Error(ErrorCode::BadArgument, "dataset: need split_mod >= 2 and split_test < split_mod");
    }
    budget.validate();
    arm.validate();
    if (scene.d != arm.base.size()) {
      throw Error(ErrorCode::ConfigMismatch, "dataset: scene dim != arm workspace dim");
    }
  }
};

// One stored plan in the dataset's representation. oracle_arc is the L2 arc
// length of the smoothed oracle plan before the representation transform, so
// evaluation can compare against the oracle regardless of representation.
struct PlanRecord {
  Plan plan;
  double oracle_arc = 0.0;
};

struct GenReport {
  std::size_t oracle_failures = 0;   // failed start/goal tries across kept scenes
  std::size_t discarded_scenes = 0;  // scene attempts dropped for > 50% failure
  std::vector<std::string> notes;
};

struct Dataset {
  std::size_t D = 0;        // joint-space dim
  std::size_t d = 0;        // workspace dim
  std::size_t horizon = 16;
  std::size_t P = 0;        // points per cloud
  std::size_t E = 0;        // embedding dim, 0 until embeddings are attached
  PlanRep representation = PlanRep::keypoint;
  bool refined = false;
  double epsilon = 0.0;  // keypoint threshold used (calibrated or given)
  double delta = 0.1;
  KeypointParams::Norm norm = KeypointParams::Norm::Linf;
  std::uint64_t master_seed = 0;
  std::size_t split_mod = 10;
  std::size_t split_test = 9;
  ArmSpec arm;
  std::vector<Scene> scenes;
  std::vector<PointCloud> clouds;       // parallel to scenes
  std::vector<PlanRecord> plans;        // ordered by scene index
  std::vector<TaskSample> samples;      // ordered by (scene, plan, step)
  std::vector<VecD> embeddings;         // per scene, iff E > 0

  bool is_test_scene(std::size_t scene_index) const {
    return scene_index % split_mod == split_test;
  }

  std::vector<std::size_t> plan_indices(bool test) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      if (is_test_scene(plans[i].plan.scene_id) == test) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> sample_indices(bool test) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (is_test_scene(samples[i].scene_index) == test) out.push_back(i);
    }
    return out;
  }
};

namespace detail {

struct SceneSlot {
  Scene scene;
  PointCloud cloud;
  std::vector<Plan> dense;  // fixed-step resampled oracle plans
  std::size_t failures = 0;
  std::size_t discarded = 0;
  std::vector<std::string> notes;
};

// One scene slot: rejection-sample a scene, then start/goal pairs and oracle
// plans. A scene attempt is discarded once failed tries exceed successful
// ones (failure rate > 50%) and the slot moves to the next derived seed, so
// the result depends only on the slot's seed chain.
inline SceneSlot generate_scene_slot(const DatasetConfig& cfg, std::size_t slot) {
  const std::uint64_t slot_seed = derive_seed(cfg.master_seed, slot);
  SceneSlot out;
  for (std::size_t attempt = 0; attempt < cfg.scene_attempt_cap; ++attempt) {
    const std::uint64_t attempt_seed = derive_seed(slot_seed, attempt);
    Rng rng(attempt_seed);
    Scene scene;
    try {
      scene = sample_scene(rng, cfg.scene);
    } catch (const Error&) {
      out.notes.push_back("scene " + std::to_string(slot) + ": placement infeasible");
      continue;
    }
    scene.seed = attempt_seed;
    PointCloud cloud = sample_point_cloud(scene, cfg.cloud_points, rng);
    std::vector<Plan> dense;
    const std::size_t max_tries = 2 * cfg.plans_per_scene;
    std::size_t tries = 0, failures = 0;
    while (dense.size() < cfg.plans_per_scene && tries < max_tries) {
      Rng task_rng(derive_seed(attempt_seed, 1000 + tries));
      ++tries;
      try {
        const VecD start = sample_valid_config(cfg.arm, scene, task_rng, cfg.config_attempt_cap);
        const VecD goal = sample_valid_config(cfg.arm, scene, task_rng, cfg.config_attempt_cap);
        Plan raw = plan_oracle(cfg.arm, scene, start, goal, cfg.budget, task_rng);
        raw.scene_id = slot;
        dense.push_back(resample_fixed_step(raw, cfg.fixed_step_delta));
      } catch (const Error& e) {
        ++failures;
        out.notes.push_back("scene " + std::to_string(slot) + " try " +
                            std::to_string(tries - 1) + ": " + e.what());
      }
    }
    if (dense.size() == cfg.plans_per_scene) {
      out.scene = std::move(scene);
      out.cloud = std::move(cloud);
      out.dense = std::move(dense);
      out.failures += failures;
      return out;
    }
    ++out.discarded;
    out.notes.push_back("scene " + std::to_string(slot) + ": discarded attempt " +
                        std::to_string(attempt) + " (" + std::to_string(failures) + "/" +
                        std::to_string(tries) + " tries failed)");
  }
  throw Error(ErrorCode::SamplingExhausted,
              "dataset: scene slot " + std::to_string(slot) + " exhausted " +
                  std::to_string(cfg.scene_attempt_cap) + " attempts");
}

}  // namespace detail

// Deterministic for a fixed config regardless of worker count: every scene
// slot is driven by its own derived seed chain and written to its own index.
inline Dataset generate_dataset(const DatasetConfig& cfg, GenReport* report = nullptr) {
  cfg.validate();
  std::vector<detail::SceneSlot> slots(cfg.n_scenes);
  std::vector<std::exception_ptr> errors(cfg.n_scenes);
  parallel_for(cfg.n_scenes, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t s = lo; s < hi; ++s) {
      try {
        slots[s] = detail::generate_scene_slot(cfg, s);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
  });
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  Dataset ds;
  ds.D = cfg.arm.dof;
  ds.d = cfg.scene.d;
  ds.horizon = cfg.horizon;
  ds.P = cfg.cloud_points;
  ds.representation = cfg.representation;
  ds.refined = cfg.refined;
  ds.delta = cfg.fixed_step_delta;
  ds.norm = cfg.keypoint_norm;
  ds.master_seed = cfg.master_seed;
  ds.split_mod = cfg.split_mod;
  ds.split_test = cfg.split_test;
  ds.arm = cfg.arm;
  ds.scenes.reserve(cfg.n_scenes);
  ds.clouds.reserve(cfg.n_scenes);
  for (auto& slot : slots) {
    ds.scenes.push_back(std::move(slot.scene));
    ds.clouds.push_back(std::move(slot.cloud));
    if (report) {
      report->oracle_failures += slot.failures;
      report->discarded_scenes += slot.discarded;
      for (auto& n : slot.notes) report->notes.push_back(std::move(n));
    }
  }

  // Threshold comes from the train split only, so the held-out scenes cannot
  // influence it. Calibrated even for fixed-step datasets: evaluation needs
  // it to recompute hard-subset membership.
  std::vector<Plan> train_dense;
  for (std::size_t s = 0; s < cfg.n_scenes; ++s) {
    if (ds.is_test_scene(s)) continue;
    for (const auto& p : slots[s].dense) train_dense.push_back(p);
  }
  ds.epsilon = cfg.keypoint_epsilon > 0.0
                   ? cfg.keypoint_epsilon
                   : calibrate_keypoint_epsilon(
                         train_dense.empty() ? slots.front().dense : train_dense,
                         cfg.keypoint_norm);

  const KeypointParams kp{ds.epsilon, cfg.keypoint_norm};
  const Normalizer normalizer = Normalizer::from_arm(cfg.arm);
  for (std::size_t s = 0; s < cfg.n_scenes; ++s) {
    const bool test = ds.is_test_scene(s);
    for (auto& dense : slots[s].dense) {
      PlanRecord rec;
      rec.oracle_arc = plan_arc_length(dense.configs);
      rec.plan = cfg.representation == PlanRep::keypoint ? extract_keypoints(dense, kp)
                                                         : std::move(dense);
      if (cfg.refined && !test && rec.plan.size() < 5) continue;
      for (auto& sample : build_samples(rec.plan, normalizer, cfg.horizon, s)) {
        ds.samples.push_back(std::move(sample));
      }
      ds.plans.push_back(std::move(rec));
    }
  }
  return ds;
}

// ---- KDDS1 shard ------------------------------------------------------------
//
// magic "KDDS1"; u64 header fields D, d, horizon, P, E, n_scenes, n_plans,
// n_samples, master_seed, split_mod, split_test; u8 representation, refined,
// norm; f64 epsilon, delta. Sections: arm JSON, scene JSON lines, point
// clouds (f32), plans (scene index, representation, count, f32 configs, f32
// oracle arc), samples (scene index, f32 start/goal/target), then per-scene
// embeddings (f32) iff E > 0. Integers little-endian.

namespace detail {

inline void write_u8(std::ostream& os, std::uint8_t v) {
  os.write(reinterpret_cast<const char*>(&v), 1);
}

inline std::uint8_t read_u8(std::istream& is) {
  std::uint8_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 1);
  if (!is) throw Error(ErrorCode::BadFile, "truncated byte field");
  return v;
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw Error(ErrorCode::BadFile, "truncated string field");
  return s;
}

}  // namespace detail

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.write("KDDS1", 5);
  detail::write_u64(os, ds.D);
  detail::write_u64(os, ds.d);
  detail::write_u64(os, ds.horizon);
  detail::write_u64(os, ds.P);
  detail::write_u64(os, ds.E);
  detail::write_u64(os, ds.scenes.size());
  detail::write_u64(os, ds.plans.size());
  detail::write_u64(os, ds.samples.size());
  detail::write_u64(os, ds.master_seed);
  detail::write_u64(os, ds.split_mod);
  detail::write_u64(os, ds.split_test);
  detail::write_u8(os, static_cast<std::uint8_t>(ds.representation));
  detail::write_u8(os, ds.refined ? 1 : 0);
  detail::write_u8(os, static_cast<std::uint8_t>(ds.norm));
  detail::write_f64(os, ds.epsilon);
  detail::write_f64(os, ds.delta);
  detail::write_str(os, arm_to_json(ds.arm).dump());
  for (const auto& scene : ds.scenes) detail::write_str(os, scene_to_json(scene).dump());
  for (const auto& cloud : ds.clouds) {
    if (cloud.size() != ds.P) throw Error(ErrorCode::ShapeMismatch, "write_dataset: cloud size");
    detail::write_f32(os, cloud.data);
  }
  for (const auto& rec : ds.plans) {
    detail::write_u64(os, rec.plan.scene_id);
    detail::write_u8(os, static_cast<std::uint8_t>(rec.plan.representation));
    detail::write_u64(os, rec.plan.size());
    std::vector<double> flat;
    flat.reserve(rec.plan.size() * ds.D);
    for (const auto& q : rec.plan.configs) {
      if (q.size() != ds.D) throw Error(ErrorCode::ShapeMismatch, "write_dataset: config dim");
      flat.insert(flat.end(), q.begin(), q.end());
    }
    detail::write_f32(os, flat);
    detail::write_f32(os, {rec.oracle_arc});
  }
  for (const auto& s : ds.samples) {
    detail::write_u64(os, s.scene_index);
    detail::write_f32(os, s.start);
    detail::write_f32(os, s.goal);
    if (s.target.size() != ds.horizon * ds.D) {
      throw Error(ErrorCode::ShapeMismatch, "write_dataset: target size");
    }
    detail::write_f32(os, s.target);
  }
  if (ds.E > 0) {
    if (ds.embeddings.size() != ds.scenes.size()) {
      throw Error(ErrorCode::ShapeMismatch, "write_dataset: embeddings count");
    }
    for (const auto& e : ds.embeddings) {
      if (e.size() != ds.E) throw Error(ErrorCode::ShapeMismatch, "write_dataset: embedding dim");
      detail::write_f32(os, e);
    }
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::BadFile, "cannot open: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "KDDS1", 5) != 0) {
    throw Error(ErrorCode::BadFile, "bad magic in " + path);
  }
  Dataset ds;
  ds.D = detail::read_u64(is);
  ds.d = detail::read_u64(is);
  ds.horizon = detail::read_u64(is);
  ds.P = detail::read_u64(is);
  ds.E = detail::read_u64(is);
  const std::uint64_t n_scenes = detail::read_u64(is);
  const std::uint64_t n_plans = detail::read_u64(is);
  const std::uint64_t n_samples = detail::read_u64(is);
  ds.master_seed = detail::read_u64(is);
  ds.split_mod = detail::read_u64(is);
  ds.split_test = detail::read_u64(is);
  ds.representation = static_cast<PlanRep>(detail::read_u8(is));
  ds.refined = detail::read_u8(is) != 0;
  ds.norm = static_cast<KeypointParams::Norm>(detail::read_u8(is));
  ds.epsilon = detail::read_f64(is);
  ds.delta = detail::read_f64(is);
  ds.arm = arm_from_json(nlohmann::json::parse(detail::read_str(is)));
  if (ds.arm.dof != ds.D) throw Error(ErrorCode::BadFile, "read_dataset: arm dof != header D");
  ds.scenes.reserve(n_scenes);
  for (std::uint64_t i = 0; i < n_scenes; ++i) {
    ds.scenes.push_back(scene_from_json(nlohmann::json::parse(detail::read_str(is))));
  }
  ds.clouds.resize(n_scenes);
  for (auto& cloud : ds.clouds) {
    cloud.dim = ds.d;
    detail::read_f32(is, cloud.data, ds.P * ds.d);
  }
  ds.plans.reserve(n_plans);
  for (std::uint64_t i = 0; i < n_plans; ++i) {
    PlanRecord rec;
    rec.plan.scene_id = detail::read_u64(is);
    rec.plan.representation = static_cast<PlanRep>(detail::read_u8(is));
    const std::uint64_t count = detail::read_u64(is);
    std::vector<double> flat;
    detail::read_f32(is, flat, count * ds.D);
    rec.plan.configs.resize(count);
    for (std::uint64_t c = 0; c < count; ++c) {
      rec.plan.configs[c].assign(flat.begin() + static_cast<std::ptrdiff_t>(c * ds.D),
                                 flat.begin() + static_cast<std::ptrdiff_t>((c + 1) * ds.D));
    }
    rec.plan.arc_length = plan_arc_length(rec.plan.configs);
    std::vector<double> arc;
    detail::read_f32(is, arc, 1);
    rec.oracle_arc = arc[0];
    ds.plans.push_back(std::move(rec));
  }
  ds.samples.reserve(n_samples);
  for (std::uint64_t i = 0; i < n_samples; ++i) {
    TaskSample s;
    s.scene_index = detail::read_u64(is);
    detail::read_f32(is, s.start, ds.D);
    detail::read_f32(is, s.goal, ds.D);
    detail::read_f32(is, s.target, ds.horizon * ds.D);
    ds.samples.push_back(std::move(s));
  }
  if (ds.E > 0) {
    ds.embeddings.resize(n_scenes);
    for (auto& e : ds.embeddings) detail::read_f32(is, e, ds.E);
  }
  return ds;
}

// Arc-length statistics of the oracle plans per split, Table-1 style:
// split,count,mean,var,max,min. A missing split yields a zero row.
inline void write_stats_csv(const std::string& path, const Dataset& ds,
                            ArcMetric metric = ArcMetric::L2) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os << "split,count,mean,var,max,min\n";
  os.precision(17);
  for (const bool test : {false, true}) {
    std::vector<double> arcs;
    for (const auto& rec : ds.plans) {
      if (ds.is_test_scene(rec.plan.scene_id) != test) continue;
      arcs.push_back(metric == ArcMetric::L2 ? rec.oracle_arc
                                             : plan_length_metric(rec.plan, metric));
    }
    const char* name = test ? "test" : "train";
    if (arcs.empty()) {
      os << name << ",0,0,0,0,0\n";
      continue;
    }
    double sum = 0.0, mn = arcs.front(), mx = arcs.front();
    for (double a : arcs) {
      sum += a;
      mn = std::min(mn, a);
      mx = std::max(mx, a);
    }
    const double mean = sum / static_cast<double>(arcs.size());
    double acc = 0.0;
    for (double a : arcs) acc += (a - mean) * (a - mean);
    os << name << "," << arcs.size() << "," << mean << ","
       << acc / static_cast<double>(arcs.size()) << "," << mx << "," << mn << "\n";
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

}  // namespace kdmp
