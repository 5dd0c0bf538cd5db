#pragma once

#include <cstdint>
#include <vector>

#include "kdmp/geom.hpp"

namespace kdmp {

enum class PlanRep { raw, fixed_step, keypoint };

inline const char* plan_rep_name(PlanRep r) {
  switch (r) {
    case PlanRep::raw: return "raw";
    case PlanRep::fixed_step: return "fixed_step";
    case PlanRep::keypoint: return "keypoint";
  }
  return "?";
}

struct Plan {
  std::vector<VecD> configs;
  PlanRep representation = PlanRep::raw;
  std::uint64_t scene_id = 0;
  double arc_length = 0.0;

  std::size_t size() const { return configs.size(); }
};

inline double plan_arc_length(const std::vector<VecD>& configs) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < configs.size(); ++i) s += dist2(configs[i], configs[i + 1]);
  return s;
}

inline Plan make_plan(std::vector<VecD> configs, PlanRep rep, std::uint64_t scene_id) {
  Plan p;
  p.arc_length = plan_arc_length(configs);
  p.configs = std::move(configs);
  p.representation = rep;
  p.scene_id = scene_id;
  return p;
}

}  // namespace kdmp
