#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kdmp/dataset.hpp"
#include "kdmp/parallel.hpp"

using namespace kdmp;

namespace {

DatasetConfig small_config(std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.n_scenes = 8;
  cfg.plans_per_scene = 2;
  cfg.cloud_points = 64;
  cfg.master_seed = seed;
  cfg.budget.max_iterations = 30000;
  cfg.budget.wall_clock_seconds = 30.0;
  return cfg;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

TEST_CASE("a one-scene one-plan dataset has exactly one plan") {
  DatasetConfig cfg = small_config(3);
  cfg.n_scenes = 1;
  cfg.plans_per_scene = 1;
  Dataset ds = generate_dataset(cfg);
  REQUIRE(ds.plans.size() == 1);
  REQUIRE(ds.scenes.size() == 1);
  REQUIRE(ds.clouds.size() == 1);
  REQUIRE(ds.clouds[0].size() == 64);
  REQUIRE(ds.samples.size() == ds.plans[0].plan.size() - 1);
  REQUIRE(ds.epsilon > 0.0);
  for (const auto& s : ds.samples) {
    for (double v : s.target) {
      REQUIRE(v >= -1.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("generated dataset invariants hold") {
  Dataset ds = generate_dataset(small_config(11));
  REQUIRE(ds.plans.size() == 16);
  REQUIRE(ds.D == 4);
  REQUIRE(ds.d == 2);

  SECTION("sample count equals sum of plan lengths minus one") {
    std::size_t expect = 0;
    for (const auto& rec : ds.plans) expect += rec.plan.size() - 1;
    REQUIRE(ds.samples.size() == expect);
  }

  SECTION("plans are grouped by scene in order") {
    std::uint64_t prev = 0;
    for (const auto& rec : ds.plans) {
      REQUIRE(rec.plan.scene_id >= prev);
      prev = rec.plan.scene_id;
    }
  }

  SECTION("train and test splits partition the plans disjointly") {
    auto train = ds.plan_indices(false);
    auto test = ds.plan_indices(true);
    REQUIRE(train.size() + test.size() == ds.plans.size());
    for (std::size_t i : train) REQUIRE(ds.plans[i].plan.scene_id % 10 != 9);
    for (std::size_t i : test) REQUIRE(ds.plans[i].plan.scene_id % 10 == 9);
  }

  SECTION("oracle arc is at least the stored representation's arc") {
    for (const auto& rec : ds.plans) {
      REQUIRE(rec.oracle_arc >= plan_arc_length(rec.plan.configs) - 1e-9);
    }
  }

  SECTION("keypoint plans contain their scene's endpoints within limits") {
    for (const auto& rec : ds.plans) {
      REQUIRE(rec.plan.representation == PlanRep::keypoint);
      REQUIRE(rec.plan.size() >= 2);
      for (const auto& q : rec.plan.configs) REQUIRE(within_limits(ds.arm, q));
    }
  }
}

TEST_CASE("shard round trip preserves everything at f32 precision") {
  Dataset ds = generate_dataset(small_config(23));
  ds.E = 8;
  Rng rng(99);
  for (std::size_t s = 0; s < ds.scenes.size(); ++s) {
    VecD e(8);
    for (double& v : e) v = rng.normal();
    ds.embeddings.push_back(e);
  }
  auto path = std::filesystem::temp_directory_path() / "kdmp_dataset_roundtrip.kdds";
  write_dataset(path.string(), ds);
  Dataset back = read_dataset(path.string());

  REQUIRE(back.D == ds.D);
  REQUIRE(back.d == ds.d);
  REQUIRE(back.horizon == ds.horizon);
  REQUIRE(back.P == ds.P);
  REQUIRE(back.E == 8);
  REQUIRE(back.representation == ds.representation);
  REQUIRE(back.refined == ds.refined);
  REQUIRE(back.epsilon == ds.epsilon);
  REQUIRE(back.delta == ds.delta);
  REQUIRE(back.master_seed == ds.master_seed);
  REQUIRE(back.arm.dof == ds.arm.dof);
  REQUIRE(back.arm.joint_limits == ds.arm.joint_limits);

  REQUIRE(back.scenes.size() == ds.scenes.size());
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    REQUIRE(scene_to_json(back.scenes[i]) == scene_to_json(ds.scenes[i]));
    for (std::size_t k = 0; k < ds.clouds[i].data.size(); ++k) {
      REQUIRE(back.clouds[i].data[k] == f32(ds.clouds[i].data[k]));
    }
    for (std::size_t k = 0; k < 8; ++k) {
      REQUIRE(back.embeddings[i][k] == f32(ds.embeddings[i][k]));
    }
  }

  REQUIRE(back.plans.size() == ds.plans.size());
  for (std::size_t i = 0; i < ds.plans.size(); ++i) {
    const auto& a = ds.plans[i];
    const auto& b = back.plans[i];
    REQUIRE(b.plan.scene_id == a.plan.scene_id);
    REQUIRE(b.plan.representation == a.plan.representation);
    REQUIRE(b.plan.size() == a.plan.size());
    REQUIRE(b.oracle_arc == f32(a.oracle_arc));
    for (std::size_t c = 0; c < a.plan.size(); ++c) {
      for (std::size_t j = 0; j < ds.D; ++j) {
        REQUIRE(b.plan.configs[c][j] == f32(a.plan.configs[c][j]));
      }
    }
    REQUIRE(b.plan.arc_length == Catch::Approx(plan_arc_length(b.plan.configs)));
  }

  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    REQUIRE(back.samples[i].scene_index == ds.samples[i].scene_index);
    for (std::size_t j = 0; j < ds.D; ++j) {
      REQUIRE(back.samples[i].start[j] == f32(ds.samples[i].start[j]));
      REQUIRE(back.samples[i].goal[j] == f32(ds.samples[i].goal[j]));
    }
    for (std::size_t j = 0; j < ds.horizon * ds.D; ++j) {
      REQUIRE(back.samples[i].target[j] == f32(ds.samples[i].target[j]));
    }
  }

  SECTION("rewriting the loaded dataset reproduces the file byte for byte") {
    auto path2 = std::filesystem::temp_directory_path() / "kdmp_dataset_rewrite.kdds";
    write_dataset(path2.string(), back);
    REQUIRE(file_bytes(path) == file_bytes(path2));
    std::filesystem::remove(path2);
  }

  std::filesystem::remove(path);
}

TEST_CASE("bad magic and truncated shards are rejected") {
  auto path = std::filesystem::temp_directory_path() / "kdmp_dataset_bad.kdds";
  {
    std::ofstream os(path, std::ios::binary);
    os << "KDXX1 garbage";
  }
  REQUIRE_THROWS_AS(read_dataset(path.string()), Error);
  {
    std::ofstream os(path, std::ios::binary);
    os << "KDDS1";  // header cut off
  }
  REQUIRE_THROWS_AS(read_dataset(path.string()), Error);
  std::filesystem::remove(path);
}

TEST_CASE("generation is reproducible and independent of the worker count") {
  const int before = num_threads();
  Dataset a, b;
  set_num_threads(1);
  a = generate_dataset(small_config(31));
  set_num_threads(4);
  b = generate_dataset(small_config(31));
  set_num_threads(before);

  auto pa = std::filesystem::temp_directory_path() / "kdmp_dataset_t1.kdds";
  auto pb = std::filesystem::temp_directory_path() / "kdmp_dataset_t4.kdds";
  write_dataset(pa.string(), a);
  write_dataset(pb.string(), b);
  REQUIRE(file_bytes(pa) == file_bytes(pb));
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}

TEST_CASE("refined datasets filter only the train split") {
  DatasetConfig cfg = small_config(47);
  cfg.n_scenes = 12;  // scene 9 is the held-out one
  Dataset full = generate_dataset(cfg);
  cfg.refined = true;
  Dataset refined = generate_dataset(cfg);

  REQUIRE(refined.refined);
  REQUIRE(refined.plans.size() <= full.plans.size());

  SECTION("every refined train plan clears the keypoint floor") {
    for (std::size_t i : refined.plan_indices(false)) {
      REQUIRE(refined.plans[i].plan.size() >= 5);
    }
  }

  SECTION("the held-out plans are untouched") {
    auto ft = full.plan_indices(true);
    auto rt = refined.plan_indices(true);
    REQUIRE(ft.size() == rt.size());
    for (std::size_t k = 0; k < ft.size(); ++k) {
      REQUIRE(full.plans[ft[k]].plan.configs == refined.plans[rt[k]].plan.configs);
    }
  }

  SECTION("refined train plans are a subsequence of the full train plans") {
    auto ftrain = full.plan_indices(false);
    std::size_t cursor = 0;
    for (std::size_t i : refined.plan_indices(false)) {
      bool found = false;
      while (cursor < ftrain.size()) {
        if (full.plans[ftrain[cursor++]].plan.configs == refined.plans[i].plan.configs) {
          found = true;
          break;
        }
      }
      REQUIRE(found);
    }
  }

  SECTION("dropped plans are exactly those with four or fewer keypoints") {
    std::size_t small_train = 0;
    for (std::size_t i : full.plan_indices(false)) {
      if (full.plans[i].plan.size() < 5) ++small_train;
    }
    REQUIRE(full.plan_indices(false).size() - refined.plan_indices(false).size() == small_train);
  }
}

TEST_CASE("invalid configs are rejected up front") {
  DatasetConfig cfg = small_config(1);
  SECTION("raw representation") {
    cfg.representation = PlanRep::raw;
    REQUIRE_THROWS_AS(generate_dataset(cfg), Error);
  }
  SECTION("refined fixed-step") {
    cfg.representation = PlanRep::fixed_step;
    cfg.refined = true;
    REQUIRE_THROWS_AS(generate_dataset(cfg), Error);
  }
  SECTION("zero scenes") {
    cfg.n_scenes = 0;
    REQUIRE_THROWS_AS(generate_dataset(cfg), Error);
  }
  SECTION("split residue out of range") {
    cfg.split_test = cfg.split_mod;
    REQUIRE_THROWS_AS(generate_dataset(cfg), Error);
  }
  SECTION("workspace dimension mismatch") {
    cfg.scene.d = 3;
    cfg.scene.bounds_lo = {-1.0, -1.0, -1.0};
    cfg.scene.bounds_hi = {1.0, 1.0, 1.0};
    REQUIRE_THROWS_AS(generate_dataset(cfg), Error);
  }
}

TEST_CASE("an arm that can never be valid exhausts scene attempts") {
  DatasetConfig cfg = small_config(7);
  cfg.n_scenes = 1;
  cfg.scene_attempt_cap = 3;
  cfg.config_attempt_cap = 8;
  cfg.arm.link_lengths = {5.0, 0.4, 0.3, 0.2};  // first joint always out of bounds
  REQUIRE_THROWS_AS(generate_dataset(cfg), Error);
  try {
    generate_dataset(cfg);
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::SamplingExhausted);
  }
}

TEST_CASE("a fixed-step dataset stores dense plans and still calibrates epsilon") {
  DatasetConfig cfg = small_config(53);
  cfg.representation = PlanRep::fixed_step;
  Dataset ds = generate_dataset(cfg);
  REQUIRE(ds.epsilon > 0.0);
  for (const auto& rec : ds.plans) {
    REQUIRE(rec.plan.representation == PlanRep::fixed_step);
    REQUIRE(rec.oracle_arc == Catch::Approx(plan_arc_length(rec.plan.configs)).margin(1e-9));
    for (std::size_t i = 0; i + 2 < rec.plan.size(); ++i) {
      const double a = dist2(rec.plan.configs[i], rec.plan.configs[i + 1]);
      const double b = dist2(rec.plan.configs[i + 1], rec.plan.configs[i + 2]);
      REQUIRE(a == Catch::Approx(b).margin(1e-9));
    }
  }
}

TEST_CASE("stats report matches an independent pass over the oracle arcs") {
  Dataset ds = generate_dataset(small_config(61));
  auto path = std::filesystem::temp_directory_path() / "kdmp_dataset_stats.csv";
  write_stats_csv(path.string(), ds);

  std::ifstream is(path);
  std::string header, line;
  REQUIRE(std::getline(is, header));
  REQUIRE(header == "split,count,mean,var,max,min");
  std::map<std::string, std::vector<double>> rows;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string name, field;
    std::getline(ss, name, ',');
    std::vector<double> vals;
    while (std::getline(ss, field, ',')) vals.push_back(std::stod(field));
    rows[name] = vals;
  }
  REQUIRE(rows.count("train") == 1);
  REQUIRE(rows.count("test") == 1);

  for (const bool test : {false, true}) {
    std::vector<double> arcs;
    for (const auto& rec : ds.plans) {
      if (ds.is_test_scene(rec.plan.scene_id) == test) arcs.push_back(rec.oracle_arc);
    }
    const auto& row = rows[test ? "test" : "train"];
    REQUIRE(row.size() == 5);
    REQUIRE(static_cast<std::size_t>(row[0]) == arcs.size());
    if (arcs.empty()) continue;
    double sum = 0.0, mn = arcs[0], mx = arcs[0];
    for (double a : arcs) {
      sum += a;
      mn = std::min(mn, a);
      mx = std::max(mx, a);
    }
    const double mean = sum / static_cast<double>(arcs.size());
    double acc = 0.0;
    for (double a : arcs) acc += (a - mean) * (a - mean);
    REQUIRE(row[1] == Catch::Approx(mean).epsilon(1e-12));
    REQUIRE(row[2] == Catch::Approx(acc / static_cast<double>(arcs.size())).epsilon(1e-12));
    REQUIRE(row[3] == Catch::Approx(mx).epsilon(1e-12));
    REQUIRE(row[4] == Catch::Approx(mn).epsilon(1e-12));
  }
  std::filesystem::remove(path);
}
