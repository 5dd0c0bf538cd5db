#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kdmp/checkpoint.hpp"
#include "kdmp/error.hpp"
#include "kdmp/optim.hpp"
#include "kdmp/plan_data.hpp"
#include "kdmp/rng.hpp"
#include "kdmp/tape.hpp"
#include "kdmp/unet.hpp"

namespace kdmp {

// Squared-cosine noise schedule. Timesteps are zero-based: index t means
// "after t+1 noising steps", so alpha_bar[0] is just under one and
// alpha_bar[T-1] is close to zero.
struct DiffusionSchedule {
  std::size_t T = 100;
  std::vector<double> beta, alpha, alpha_bar;  // each of length T
};

inline DiffusionSchedule make_schedule(std::size_t T = 100, double s = 0.008) {
  if (T == 0) throw Error(ErrorCode::BadArgument, "make_schedule: T must be >= 1");
  DiffusionSchedule sch;
  sch.T = T;
  auto f = [&](std::size_t t) {
    const double x = (static_cast<double>(t) / static_cast<double>(T) + s) / (1.0 + s);
    const double c = std::cos(x * M_PI / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  sch.beta.resize(T);
  sch.alpha.resize(T);
  sch.alpha_bar.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    sch.alpha_bar[t] = f(t + 1) / f0;
    sch.beta[t] = std::min(1.0 - f(t + 1) / f(t), 0.999);
    sch.alpha[t] = 1.0 - sch.beta[t];
  }
  return sch;
}

// Forward process: x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
inline std::vector<double> q_sample(const DiffusionSchedule& sch,
                                    const std::vector<double>& x0, std::size_t t,
                                    const std::vector<double>& eps) {
  if (t >= sch.T) throw Error(ErrorCode::BadArgument, "q_sample: t out of range");
  if (x0.size() != eps.size()) throw Error(ErrorCode::ShapeMismatch, "q_sample: size mismatch");
  const double sa = std::sqrt(sch.alpha_bar[t]);
  const double sn = std::sqrt(1.0 - sch.alpha_bar[t]);
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = sa * x0[i] + sn * eps[i];
  return xt;
}

// One DDPM posterior step with the predicted-x0 clipped to [-1,1]. `noise`
// must be standard normal; it is ignored at t = 0 where the posterior is
// deterministic.
inline std::vector<double> reverse_step(const DiffusionSchedule& sch,
                                        const std::vector<double>& xt,
                                        const std::vector<double>& eps_hat, std::size_t t,
                                        const std::vector<double>& noise) {
  if (t >= sch.T) throw Error(ErrorCode::BadArgument, "reverse_step: t out of range");
  if (xt.size() != eps_hat.size() || xt.size() != noise.size()) {
    throw Error(ErrorCode::ShapeMismatch, "reverse_step: size mismatch");
  }
  const double ab_t = sch.alpha_bar[t];
  const double ab_prev = t > 0 ? sch.alpha_bar[t - 1] : 1.0;
  const double beta_t = sch.beta[t];
  const double alpha_t = sch.alpha[t];
  const double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
  const double ct = std::sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t);
  const double sigma = t > 0 ? std::sqrt(beta_t * (1.0 - ab_prev) / (1.0 - ab_t)) : 0.0;
  std::vector<double> out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) {
    double x0 = (xt[i] - std::sqrt(1.0 - ab_t) * eps_hat[i]) / std::sqrt(ab_t);
    x0 = std::clamp(x0, -1.0, 1.0);
    out[i] = c0 * x0 + ct * xt[i] + sigma * noise[i];
  }
  return out;
}

// ---- training -----------------------------------------------------------

struct DiffusionTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 64;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.995};
  double lr_final = 0.0;  // cosine-decay floor; 0 decays to zero
  std::uint64_t seed = 1;
};

// Conditioning row for one task: normalized start, normalized goal, then the
// cloud embedding when the ablation uses one.
inline std::vector<double> make_cond(const TaskSample& s, const Normalizer& norm,
                                     bool with_embedding) {
  std::vector<double> cond = norm.to_norm(s.start);
  const VecD g = norm.to_norm(s.goal);
  cond.insert(cond.end(), g.begin(), g.end());
  if (with_embedding) cond.insert(cond.end(), s.embedding.begin(), s.embedding.end());
  return cond;
}

// Epsilon-prediction objective over the training samples. Each row draws its
// own timestep and noise. Returns per-epoch mean losses; epochs = 0 leaves
// the parameters at initialization.
inline std::vector<double> train_diffusion(ParamStore& store, const ConditionalUnet1D& net,
                                           const std::vector<TaskSample>& samples,
                                           const std::vector<std::size_t>& train_idx,
                                           const Normalizer& norm, const DiffusionSchedule& sch,
                                           const DiffusionTrainConfig& cfg) {
  if (train_idx.empty()) throw Error(ErrorCode::EmptyDataset, "train_diffusion: no samples");
  const DenoiserSpec& spec = net.spec();
  const std::size_t D = spec.D, H = spec.horizon;
  const bool with_emb = spec.cond_dim > 2 * D;
  for (std::size_t i : train_idx) {
    const TaskSample& s = samples.at(i);
    if (s.target.size() != H * D) {
      throw Error(ErrorCode::ShapeMismatch, "train_diffusion: target is not horizon x D");
    }
    if (make_cond(s, norm, with_emb).size() != spec.cond_dim) {
      throw Error(ErrorCode::ConfigMismatch, "train_diffusion: conditioning width mismatch");
    }
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_idx);
  const std::size_t steps_per_epoch = (order.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  std::size_t global_step = 0;
  std::vector<double> epoch_losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch) {
      const std::size_t B = std::min(cfg.batch, order.size() - off);
      Tensor xt({B, D, H}), eps({B, D, H}), cond_in({B, spec.cond_dim});
      std::vector<std::size_t> ts(B);
      for (std::size_t b = 0; b < B; ++b) {
        const TaskSample& s = samples[order[off + b]];
        ts[b] = rng.uniform_int(sch.T);
        const double sa = std::sqrt(sch.alpha_bar[ts[b]]);
        const double sn = std::sqrt(1.0 - sch.alpha_bar[ts[b]]);
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t k = 0; k < D; ++k) {
            const double e = rng.normal();
            eps.data[(b * D + k) * H + h] = e;
            xt.data[(b * D + k) * H + h] = sa * s.target[h * D + k] + sn * e;
          }
        }
        const std::vector<double> c = make_cond(s, norm, with_emb);
        std::copy(c.begin(), c.end(), cond_in.data.begin() + b * spec.cond_dim);
      }
      Tape tape;
      std::vector<Val> p = store.bind(tape);
      Val pred = net.forward(tape, p, tape.input(std::move(xt)), ts,
                             tape.input(std::move(cond_in)));
      Val loss = tape.mse(pred, tape.input(std::move(eps)));
      tape.backward(loss);
      AdamConfig step_cfg = cfg.adam;
      const double frac = static_cast<double>(global_step) / static_cast<double>(total_steps);
      step_cfg.lr = cfg.lr_final +
                    (cfg.adam.lr - cfg.lr_final) * 0.5 * (1.0 + std::cos(M_PI * frac));
      store.adam_step(tape, p, step_cfg);
      ++global_step;
      const double loss_val = tape.value(loss).data[0];
      if (!std::isfinite(loss_val)) {
        throw Error(ErrorCode::NanLoss, "train_diffusion: loss diverged");
      }
      loss_sum += loss_val;
      ++steps;
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(steps));
  }
  return epoch_losses;
}

// ---- sampling -----------------------------------------------------------

// Draws one trajectory window per conditioning row, all reverse steps batched
// through the denoiser. Row i draws every bit of randomness from its own
// stream seed, so a row's output depends only on its (cond, stream) pair and
// never on which other rows share the batch.
inline std::vector<std::vector<double>> sample_actions_rows(
    const ParamStore& store, const ConditionalUnet1D& net, const DiffusionSchedule& sch,
    const std::vector<std::vector<double>>& conds, const std::vector<std::uint64_t>& stream_seeds,
    bool uniform_init = false) {
  const DenoiserSpec& spec = net.spec();
  const std::size_t K = conds.size();
  if (K == 0) throw Error(ErrorCode::BadArgument, "sample_actions: K must be >= 1");
  if (stream_seeds.size() != K) {
    throw Error(ErrorCode::ShapeMismatch, "sample_actions: one stream seed per row");
  }
  for (const auto& cond : conds) {
    if (cond.size() != spec.cond_dim) {
      throw Error(ErrorCode::ConfigMismatch, "sample_actions: conditioning width mismatch");
    }
  }
  const std::size_t D = spec.D, H = spec.horizon, N = D * H;
  std::vector<Rng> streams;
  streams.reserve(K);
  for (std::uint64_t s : stream_seeds) streams.emplace_back(s);
  std::vector<std::vector<double>> x(K, std::vector<double>(N));
  for (std::size_t i = 0; i < K; ++i) {
    for (double& v : x[i]) {
      v = uniform_init ? streams[i].uniform(-1.0, 1.0) : streams[i].normal();
    }
  }
  Tensor cond_in({K, spec.cond_dim});
  for (std::size_t i = 0; i < K; ++i) {
    std::copy(conds[i].begin(), conds[i].end(), cond_in.data.begin() + i * spec.cond_dim);
  }
  std::vector<double> noise(N);
  for (std::size_t t = sch.T; t-- > 0;) {
    Tape tape;
    std::vector<Val> p = store.bind(tape);
    Tensor xt({K, D, H});
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t k = 0; k < D; ++k) xt.data[(i * D + k) * H + h] = x[i][h * D + k];
      }
    }
    const std::vector<std::size_t> ts(K, t);
    Val pred = net.forward(tape, p, tape.input(std::move(xt)), ts, tape.input(cond_in));
    const Tensor& E = tape.value(pred);
    for (std::size_t i = 0; i < K; ++i) {
      std::vector<double> eps_hat(N);
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t k = 0; k < D; ++k) eps_hat[h * D + k] = E.data[(i * D + k) * H + h];
      }
      for (double& v : noise) v = streams[i].normal();
      x[i] = reverse_step(sch, x[i], eps_hat, t, noise);
    }
  }
  for (auto& row : x) {
    for (double& v : row) v = std::clamp(v, -1.0, 1.0);
  }
  return x;
}

// K draws for a single conditioning row. Candidate i's stream is derived from
// (seed, i), so candidate i is the same trajectory for any K > i: growing the
// batch only appends candidates.
inline std::vector<std::vector<double>> sample_actions(const ParamStore& store,
                                                       const ConditionalUnet1D& net,
                                                       const DiffusionSchedule& sch,
                                                       const std::vector<double>& cond,
                                                       std::size_t K, std::uint64_t seed,
                                                       bool uniform_init = false) {
  if (K == 0) throw Error(ErrorCode::BadArgument, "sample_actions: K must be >= 1");
  std::vector<std::vector<double>> conds(K, cond);
  std::vector<std::uint64_t> streams(K);
  for (std::size_t i = 0; i < K; ++i) streams[i] = derive_seed(seed, i);
  return sample_actions_rows(store, net, sch, conds, streams, uniform_init);
}

// ---- persistence --------------------------------------------------------

struct DenoiserBundle {
  ParamStore store;
  ConditionalUnet1D net;
  DiffusionSchedule schedule;
  Normalizer norm;
  std::string ablation;        // conditioning variant tag
  std::string representation;  // dataset the weights were fit on
};

inline void save_denoiser(const std::string& path, const ParamStore& store,
                          const DenoiserSpec& spec, const DiffusionSchedule& sch,
                          const Normalizer& norm, const std::string& ablation,
                          const std::string& representation, bool use_ema = true) {
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    entries.emplace_back(store.name(i), use_ema ? store.ema(i) : store.value(i));
  }
  write_checkpoint(path, entries);
  nlohmann::json meta;
  meta["kind"] = "denoiser";
  meta["D"] = spec.D;
  meta["horizon"] = spec.horizon;
  meta["cond_dim"] = spec.cond_dim;
  meta["widths"] = spec.widths;
  meta["t_dim"] = spec.t_dim;
  meta["t_hidden"] = spec.t_hidden;
  meta["groups"] = spec.groups;
  meta["T"] = sch.T;
  meta["norm_lo"] = norm.lo;
  meta["norm_hi"] = norm.hi;
  meta["ablation"] = ablation;
  meta["representation"] = representation;
  std::ofstream os(path + ".json");
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path + ".json");
  os << meta.dump(2) << "\n";
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path + ".json");
}

inline DenoiserBundle load_denoiser(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw Error(ErrorCode::BadFile, "cannot open: " + path + ".json");
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadFile, std::string("bad sidecar: ") + e.what());
  }
  if (meta.value("kind", "") != "denoiser") {
    throw Error(ErrorCode::BadFile, "sidecar kind mismatch: " + path + ".json");
  }
  DenoiserBundle out;
  DenoiserSpec spec;
  spec.D = meta.at("D").get<std::size_t>();
  spec.horizon = meta.at("horizon").get<std::size_t>();
  spec.cond_dim = meta.at("cond_dim").get<std::size_t>();
  spec.widths = meta.at("widths").get<std::vector<std::size_t>>();
  spec.t_dim = meta.at("t_dim").get<std::size_t>();
  spec.t_hidden = meta.at("t_hidden").get<std::size_t>();
  spec.groups = meta.at("groups").get<std::size_t>();
  out.schedule = make_schedule(meta.at("T").get<std::size_t>());
  out.norm.lo = meta.at("norm_lo").get<VecD>();
  out.norm.hi = meta.at("norm_hi").get<VecD>();
  out.ablation = meta.value("ablation", "none");
  out.representation = meta.value("representation", "keypoint");
  Tape scratch;
  for (auto& [name, tensor] : read_checkpoint(path)) {
    out.store.add(scratch, name, std::move(tensor));
  }
  out.net = ConditionalUnet1D::attach(out.store, spec);
  return out;
}

}  // namespace kdmp
