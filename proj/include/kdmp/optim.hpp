#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "kdmp/error.hpp"
#include "kdmp/tape.hpp"
#include "kdmp/tensor.hpp"

namespace kdmp {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double ema_decay = 0.995;
};

// Named parameter set with Adam moments and an EMA shadow copy. Iteration
// order is the registration order (stable), which fixes the checkpoint
// layout and the gradient-step accumulation order.
class ParamStore {
 public:
  Val add(Tape& tape, const std::string& name, Tensor init) {
    if (index_.count(name)) {
      throw Error(ErrorCode::BadArgument, "parameter registered twice: " + name);
    }
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, init, Tensor(init.shape), Tensor(init.shape), init});
    return tape.input(std::move(init));
  }

  // Rebind all parameters onto a fresh tape for the next forward pass.
  std::vector<Val> bind(Tape& tape) const {
    std::vector<Val> vals;
    vals.reserve(entries_.size());
    for (const auto& e : entries_) vals.push_back(tape.input(e.value));
    return vals;
  }

  std::size_t count() const { return entries_.size(); }
  std::size_t step_count() const { return step_; }

  const std::string& name(std::size_t i) const { return entries_[i].name; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& ema(std::size_t i) const { return entries_[i].ema; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const { return at(name); }

  const Tensor& value(const std::string& name) const { return entries_[at(name)].value; }
  Tensor& value(const std::string& name) { return entries_[at(name)].value; }
  const Tensor& ema(const std::string& name) const { return entries_[at(name)].ema; }
  Tensor& ema(const std::string& name) { return entries_[at(name)].ema; }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  // One Adam update from gradients recorded on `tape` (bound via the same
  // order as bind()). The EMA shadow moves toward the updated parameters by
  // (1 - decay) per step.
  void adam_step(const Tape& tape, const std::vector<Val>& bound, const AdamConfig& cfg) {
    if (bound.size() != entries_.size()) {
      throw Error(ErrorCode::BadArgument, "adam_step: bound parameter list mismatch");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const Tensor& g = tape.grad(bound[i]);
      if (!g.same_shape(entries_[i].value)) {
        throw Error(ErrorCode::ShapeMismatch, "adam_step: gradient shape mismatch for " +
                                                  entries_[i].name);
      }
      if (!g.all_finite()) {
        throw Error(ErrorCode::NanGradient, "adam_step: non-finite gradient in " +
                                                entries_[i].name);
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      Entry& e = entries_[i];
      const Tensor& g = tape.grad(bound[i]);
      for (std::size_t j = 0; j < e.value.numel(); ++j) {
        const double gj = g.data[j];
        e.m.data[j] = cfg.beta1 * e.m.data[j] + (1.0 - cfg.beta1) * gj;
        e.v.data[j] = cfg.beta2 * e.v.data[j] + (1.0 - cfg.beta2) * gj * gj;
        const double mhat = e.m.data[j] / bc1;
        const double vhat = e.v.data[j] / bc2;
        e.value.data[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        e.ema.data[j] = cfg.ema_decay * e.ema.data[j] + (1.0 - cfg.ema_decay) * e.value.data[j];
      }
    }
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m;
    Tensor v;
    Tensor ema;
  };

  std::size_t at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw Error(ErrorCode::BadArgument, "unknown parameter: " + name);
    }
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::size_t step_ = 0;
};

}  // namespace kdmp
