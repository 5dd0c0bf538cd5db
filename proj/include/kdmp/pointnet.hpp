#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kdmp/checkpoint.hpp"
#include "kdmp/error.hpp"
#include "kdmp/geom.hpp"
#include "kdmp/optim.hpp"
#include "kdmp/rng.hpp"
#include "kdmp/tape.hpp"

namespace kdmp {

struct EncoderSpec {
  std::size_t w1 = 32, w2 = 64, w3 = 64;  // per-point feature widths; E = w3

  void validate() const {
    if (w1 == 0 || w2 == 0 || w3 == 0) {
      throw Error(ErrorCode::BadArgument, "EncoderSpec: widths must be >= 1");
    }
  }
};

struct DecoderSpec {
  std::vector<std::size_t> hidden = {128, 256};
  std::size_t out_points = 256;  // P_out

  void validate() const {
    if (out_points == 0) throw Error(ErrorCode::BadArgument, "DecoderSpec: out_points >= 1");
    for (std::size_t w : hidden) {
      if (w == 0) throw Error(ErrorCode::BadArgument, "DecoderSpec: widths must be >= 1");
    }
  }
};

// Scene clouds are encoded in the normalized frame [-1,1]^d of the workspace
// bounds; the decoder reconstructs in the same frame.
inline PointCloud normalize_cloud(const PointCloud& cloud, const VecD& lo, const VecD& hi) {
  if (lo.size() != cloud.dim || hi.size() != cloud.dim) {
    throw Error(ErrorCode::ShapeMismatch, "normalize_cloud: bounds dim mismatch");
  }
  PointCloud out;
  out.dim = cloud.dim;
  out.data.resize(cloud.data.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t k = 0; k < cloud.dim; ++k) {
      out.data[i * cloud.dim + k] =
          2.0 * (cloud.data[i * cloud.dim + k] - lo[k]) / (hi[k] - lo[k]) - 1.0;
    }
  }
  return out;
}

// PointNet-style autoencoder: three shared per-point transforms (kernel-1
// convolutions) with a global max pool for the embedding, then an MLP decoder
// emitting a fixed-size cloud. Parameter handles index into the bind() order
// of the owning ParamStore.
class CloudAutoencoder {
 public:
  static CloudAutoencoder build(ParamStore& store, std::size_t d, const EncoderSpec& enc,
                                const DecoderSpec& dec, Rng& rng) {
    enc.validate();
    dec.validate();
    if (d == 0) throw Error(ErrorCode::BadArgument, "CloudAutoencoder: d must be >= 1");
    CloudAutoencoder ae;
    ae.d_ = d;
    ae.enc_ = enc;
    ae.dec_ = dec;
    Tape scratch;  // registration only; parameters are rebound per step
    auto conv = [&](const std::string& name, std::size_t co, std::size_t ci) {
      ae.idx_.push_back(store.count());
      store.add(scratch, name + ".w", he_init({co, ci, 1}, ci, rng));
      store.add(scratch, name + ".b", Tensor({co}));
    };
    conv("ae.enc.conv1", enc.w1, d);
    conv("ae.enc.conv2", enc.w2, enc.w1);
    conv("ae.enc.conv3", enc.w3, enc.w2);
    std::size_t in = enc.w3;
    for (std::size_t li = 0; li < dec.hidden.size(); ++li) {
      const std::string name = "ae.dec.fc" + std::to_string(li);
      ae.idx_.push_back(store.count());
      store.add(scratch, name + ".w", he_init({in, dec.hidden[li]}, in, rng));
      store.add(scratch, name + ".b", Tensor({dec.hidden[li]}));
      in = dec.hidden[li];
    }
    ae.idx_.push_back(store.count());
    store.add(scratch, "ae.dec.out.w", he_init({in, dec.out_points * d}, in, rng));
    store.add(scratch, "ae.dec.out.b", Tensor({dec.out_points * d}));
    return ae;
  }

  // Reconstructs the handle layout from a loaded store (same registration
  // order as build()).
  static CloudAutoencoder attach(const ParamStore& store, std::size_t d, const EncoderSpec& enc,
                                 const DecoderSpec& dec) {
    enc.validate();
    dec.validate();
    CloudAutoencoder ae;
    ae.d_ = d;
    ae.enc_ = enc;
    ae.dec_ = dec;
    auto take = [&](const std::string& name) {
      ae.idx_.push_back(store.index_of(name + ".w"));
      if (store.index_of(name + ".b") != ae.idx_.back() + 1) {
        throw Error(ErrorCode::BadFile, "CloudAutoencoder: bias out of order for " + name);
      }
    };
    take("ae.enc.conv1");
    take("ae.enc.conv2");
    take("ae.enc.conv3");
    for (std::size_t li = 0; li < dec.hidden.size(); ++li) take("ae.dec.fc" + std::to_string(li));
    take("ae.dec.out");
    return ae;
  }

  std::size_t embedding_dim() const { return enc_.w3; }
  std::size_t out_points() const { return dec_.out_points; }
  std::size_t dim() const { return d_; }

  // cloud: [B, d, P] (normalized frame) -> [B, E]. Max pooling over points
  // makes the embedding exactly permutation invariant.
  Val encode(Tape& t, const std::vector<Val>& p, Val cloud) const {
    Val h = cloud;
    for (std::size_t li = 0; li < 3; ++li) {
      h = t.mish(t.conv1d(h, p[idx_[li]], p[idx_[li] + 1], 1, 0));
    }
    return t.reduce_max(h, 2);
  }

  // embedding: [B, E] -> reconstructed clouds [B, P_out * d].
  Val decode(Tape& t, const std::vector<Val>& p, Val embedding) const {
    Val h = embedding;
    const std::size_t first = 3;
    for (std::size_t li = 0; li < dec_.hidden.size(); ++li) {
      const std::size_t base = idx_[first + li];
      h = t.mish(t.add(t.matmul(h, p[base]), p[base + 1]));
    }
    const std::size_t base = idx_[first + dec_.hidden.size()];
    return t.add(t.matmul(h, p[base]), p[base + 1]);
  }

 private:
  static Tensor he_init(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = std * rng.normal();
    return t;
  }

  std::size_t d_ = 2;
  EncoderSpec enc_;
  DecoderSpec dec_;
  std::vector<std::size_t> idx_;  // bind-order index of each layer's weight
};

// Symmetric mean-of-squared-nearest-neighbor distance between two clouds on
// the tape; a: [P, d], b: [Q, d].
inline Val chamfer(Tape& t, Val a, Val b) {
  Val d2 = t.pairwise_sqdist(a, b);
  return t.add(t.mean_all(t.reduce_min(d2, 1)), t.mean_all(t.reduce_min(d2, 0)));
}

struct AeTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 16;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.995};
  std::uint64_t seed = 1;
};

// Per-epoch mean training chamfer, one row per epoch.
inline void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.precision(17);
  os << "epoch,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << "," << losses[i] << "\n";
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

// Trains on already-normalized clouds (all with the same point count).
// Returns the per-epoch mean chamfer losses. epochs=0 leaves the store at its
// initialization. Non-finite losses or gradients abort via backward/adam.
inline std::vector<double> train_autoencoder(ParamStore& store, const CloudAutoencoder& ae,
                                             const std::vector<PointCloud>& clouds,
                                             const AeTrainConfig& cfg) {
  if (clouds.empty()) throw Error(ErrorCode::EmptyDataset, "train_autoencoder: no clouds");
  const std::size_t P = clouds.front().size();
  for (const auto& c : clouds) {
    if (c.dim != ae.dim() || c.size() != P) {
      throw Error(ErrorCode::ShapeMismatch, "train_autoencoder: inconsistent cloud shape");
    }
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(clouds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> epoch_losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the run's own stream keeps epochs reproducible.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch) {
      const std::size_t B = std::min(cfg.batch, order.size() - off);
      Tape tape;
      std::vector<Val> p = store.bind(tape);
      Tensor in({B, ae.dim(), P});
      for (std::size_t b = 0; b < B; ++b) {
        const PointCloud& c = clouds[order[off + b]];
        for (std::size_t pt = 0; pt < P; ++pt) {
          for (std::size_t k = 0; k < ae.dim(); ++k) {
            in.data[(b * ae.dim() + k) * P + pt] = c.data[pt * ae.dim() + k];
          }
        }
      }
      Val cloud_in = tape.input(std::move(in));
      Val recon = ae.decode(tape, p, ae.encode(tape, p, cloud_in));
      std::vector<Val> items;
      items.reserve(B);
      for (std::size_t b = 0; b < B; ++b) {
        Val row = tape.reshape(tape.slice(recon, 0, b, 1),
                               {ae.out_points(), ae.dim()});
        Tensor target({P, ae.dim()}, clouds[order[off + b]].data);
        items.push_back(chamfer(tape, row, tape.input(std::move(target))));
      }
      Val loss = tape.scale(tape.sum_vals(items), 1.0 / static_cast<double>(B));
      tape.backward(loss);
      store.adam_step(tape, p, cfg.adam);
      loss_sum += tape.value(loss).data[0];
      ++steps;
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(steps));
  }
  return epoch_losses;
}

// Embedding of one scene cloud under the store's current values. Checkpoints
// hold the EMA weights, so a loaded store evaluates the shadow copy.
inline VecD encode_cloud(const ParamStore& store, const CloudAutoencoder& ae,
                         const PointCloud& normalized) {
  Tape tape;
  std::vector<Val> p = store.bind(tape);
  const std::size_t P = normalized.size();
  Tensor in({1, ae.dim(), P});
  for (std::size_t pt = 0; pt < P; ++pt) {
    for (std::size_t k = 0; k < ae.dim(); ++k) {
      in.data[k * P + pt] = normalized.data[pt * ae.dim() + k];
    }
  }
  Val emb = ae.encode(tape, p, tape.input(std::move(in)));
  return tape.value(emb).data;
}

// ---- persistence --------------------------------------------------------

struct AeBundle {
  ParamStore store;
  CloudAutoencoder ae;
  VecD bounds_lo, bounds_hi;  // workspace frame the clouds were normalized in
};

inline void save_autoencoder(const std::string& path, const ParamStore& store,
                             const CloudAutoencoder& ae, const EncoderSpec& enc,
                             const DecoderSpec& dec, const VecD& bounds_lo, const VecD& bounds_hi,
                             bool use_ema = true) {
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    entries.emplace_back(store.name(i), use_ema ? store.ema(i) : store.value(i));
  }
  write_checkpoint(path, entries);
  nlohmann::json meta;
  meta["kind"] = "cloud_autoencoder";
  meta["d"] = ae.dim();
  meta["encoder"] = {enc.w1, enc.w2, enc.w3};
  meta["decoder_hidden"] = dec.hidden;
  meta["out_points"] = dec.out_points;
  meta["bounds_lo"] = bounds_lo;
  meta["bounds_hi"] = bounds_hi;
  std::ofstream os(path + ".json");
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path + ".json");
  os << meta.dump(2) << "\n";
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path + ".json");
}

inline AeBundle load_autoencoder(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw Error(ErrorCode::BadFile, "cannot open: " + path + ".json");
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadFile, std::string("bad sidecar: ") + e.what());
  }
  if (meta.value("kind", "") != "cloud_autoencoder") {
    throw Error(ErrorCode::BadFile, "sidecar kind mismatch: " + path + ".json");
  }
  AeBundle out;
  const auto d = meta.at("d").get<std::size_t>();
  EncoderSpec enc;
  const auto ew = meta.at("encoder").get<std::vector<std::size_t>>();
  if (ew.size() != 3) throw Error(ErrorCode::BadFile, "sidecar encoder widths");
  enc.w1 = ew[0];
  enc.w2 = ew[1];
  enc.w3 = ew[2];
  DecoderSpec dec;
  dec.hidden = meta.at("decoder_hidden").get<std::vector<std::size_t>>();
  dec.out_points = meta.at("out_points").get<std::size_t>();
  out.bounds_lo = meta.at("bounds_lo").get<VecD>();
  out.bounds_hi = meta.at("bounds_hi").get<VecD>();
  Tape scratch;
  for (auto& [name, tensor] : read_checkpoint(path)) {
    out.store.add(scratch, name, std::move(tensor));
  }
  out.ae = CloudAutoencoder::attach(out.store, d, enc, dec);
  return out;
}

}  // namespace kdmp
