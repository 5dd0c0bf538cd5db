// Point-cloud autoencoder checks: the chamfer objective is compared against
// a brute-force double loop, the embedding is required to be exactly
// permutation and duplication invariant, and gradients of the whole
// encode-decode graph are verified with central differences.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "kdmp/pointnet.hpp"

using namespace kdmp;

namespace {

PointCloud random_cloud(std::size_t n, std::size_t d, Rng& rng) {
  PointCloud c;
  c.dim = d;
  c.data.resize(n * d);
  for (double& v : c.data) v = rng.uniform(-1.0, 1.0);
  return c;
}

double chamfer_brute(const PointCloud& a, const PointCloud& b) {
  auto one_way = [](const PointCloud& from, const PointCloud& to) {
    double acc = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = 1e300;
      for (std::size_t j = 0; j < to.size(); ++j) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < from.dim; ++k) {
          const double d = from.data[i * from.dim + k] - to.data[j * to.dim + k];
          d2 += d * d;
        }
        best = std::min(best, d2);
      }
      acc += best;
    }
    return acc / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

double chamfer_tape(const PointCloud& a, const PointCloud& b) {
  Tape tape;
  Val va = tape.input(Tensor({a.size(), a.dim}, a.data));
  Val vb = tape.input(Tensor({b.size(), b.dim}, b.data));
  return tape.value(chamfer(tape, va, vb)).data[0];
}

VecD embed(const ParamStore& store, const CloudAutoencoder& ae, const PointCloud& c) {
  return encode_cloud(store, ae, c);
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "kdmp_ae_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cloud normalization maps the workspace onto the unit box") {
  PointCloud c;
  c.dim = 2;
  c.data = {-1.5, -1.0, 1.5, 1.0, 0.0, 0.0};
  auto n = normalize_cloud(c, {-1.5, -1.0}, {1.5, 1.0});
  CHECK(n.data == std::vector<double>{-1.0, -1.0, 1.0, 1.0, 0.0, 0.0});
  CHECK_THROWS_AS(normalize_cloud(c, {-1.0}, {1.0}), Error);
}

TEST_CASE("tape chamfer matches the brute-force oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_cloud(17, 2, rng);
    auto b = random_cloud(23, 2, rng);
    const double want = chamfer_brute(a, b);
    CHECK_THAT(chamfer_tape(a, b), Catch::Matchers::WithinAbs(want, 1e-12));
  }
  SECTION("symmetric in its arguments") {
    auto a = random_cloud(12, 2, rng);
    auto b = random_cloud(9, 2, rng);
    CHECK_THAT(chamfer_tape(a, b), Catch::Matchers::WithinAbs(chamfer_tape(b, a), 1e-12));
  }
  SECTION("zero on identical clouds") {
    auto a = random_cloud(20, 2, rng);
    CHECK_THAT(chamfer_tape(a, a), Catch::Matchers::WithinAbs(0.0, 1e-15));
  }
}

TEST_CASE("chamfer gradients agree with central differences") {
  Rng rng(11);
  PointCloud a = random_cloud(8, 2, rng);
  PointCloud b = random_cloud(6, 2, rng);

  Tape tape;
  Val va = tape.input(Tensor({8, 2}, a.data));
  Val vb = tape.input(Tensor({6, 2}, b.data));
  Val loss = chamfer(tape, va, vb);
  tape.backward(loss);

  auto eval = [&]() { return chamfer_brute(a, b); };
  const double h = 1e-6;
  double worst = 0.0;
  auto sweep = [&](std::vector<double>& data, const Tensor& grad) {
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double keep = data[j];
      data[j] = keep + h;
      const double up = eval();
      data[j] = keep - h;
      const double down = eval();
      data[j] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad.data[j]), 1e-8});
      worst = std::max(worst, std::abs(fd - grad.data[j]) / denom);
    }
  };
  sweep(a.data, tape.grad(va));
  sweep(b.data, tape.grad(vb));
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("embedding is exactly permutation and duplication invariant") {
  ParamStore store;
  Rng rng(13);
  EncoderSpec enc{8, 16, 16};
  DecoderSpec dec{{16}, 12};
  auto ae = CloudAutoencoder::build(store, 2, enc, dec, rng);

  Rng data(17);
  PointCloud c = random_cloud(40, 2, data);
  const VecD base = embed(store, ae, c);
  REQUIRE(base.size() == 16);

  SECTION("shuffling the points changes nothing") {
    PointCloud shuffled = c;
    Rng shuffle_rng(19);
    for (std::size_t i = shuffled.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_int(i);
      for (std::size_t k = 0; k < 2; ++k) {
        std::swap(shuffled.data[(i - 1) * 2 + k], shuffled.data[j * 2 + k]);
      }
    }
    REQUIRE(shuffled.data != c.data);
    CHECK(embed(store, ae, shuffled) == base);  // bitwise
  }
  SECTION("duplicating points changes nothing") {
    PointCloud dup = c;
    for (std::size_t i = 0; i < 10; ++i) {
      dup.data.push_back(c.data[i * 2]);
      dup.data.push_back(c.data[i * 2 + 1]);
    }
    CHECK(embed(store, ae, dup) == base);  // bitwise
  }
}

TEST_CASE("autoencoder graph gradients agree with central differences") {
  ParamStore store;
  Rng rng(23);
  EncoderSpec enc{4, 8, 8};
  DecoderSpec dec{{8}, 6};
  auto ae = CloudAutoencoder::build(store, 2, enc, dec, rng);
  // Bias terms start at zero; move everything to a generic point first.
  Rng pert(29);
  for (std::size_t i = 0; i < store.count(); ++i) {
    for (double& v : store.value(i).data) v += 0.05 * pert.normal();
  }

  Rng data(31);
  PointCloud cloud = random_cloud(7, 2, data);
  Tensor in({1, 2, 7});
  for (std::size_t pt = 0; pt < 7; ++pt) {
    for (std::size_t k = 0; k < 2; ++k) in.data[k * 7 + pt] = cloud.data[pt * 2 + k];
  }
  Tensor target({6, 2});
  for (double& v : target.data) v = data.uniform(-1.0, 1.0);

  auto eval = [&]() {
    Tape t2;
    auto p2 = store.bind(t2);
    Val recon = ae.decode(t2, p2, ae.encode(t2, p2, t2.input(in)));
    Val row = t2.reshape(recon, {6, 2});
    return t2.value(chamfer(t2, row, t2.input(target))).data[0];
  };

  Tape tape;
  auto p = store.bind(tape);
  Val recon = ae.decode(tape, p, ae.encode(tape, p, tape.input(in)));
  Val loss = chamfer(tape, tape.reshape(recon, {6, 2}), tape.input(target));
  tape.backward(loss);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < store.count(); ++i) {
    const Tensor& g = tape.grad(p[i]);
    Tensor& v = store.value(i);
    for (std::size_t j = 0; j < v.numel(); ++j) {
      const double keep = v.data[j];
      v.data[j] = keep + h;
      const double up = eval();
      v.data[j] = keep - h;
      const double down = eval();
      v.data[j] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(g.data[j]), 1e-8});
      worst = std::max(worst, std::abs(fd - g.data[j]) / denom);
    }
  }
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("training overfits a single cloud") {
  ParamStore store;
  Rng rng(37);
  EncoderSpec enc{16, 32, 32};
  DecoderSpec dec{{32, 64}, 32};
  auto ae = CloudAutoencoder::build(store, 2, enc, dec, rng);

  Rng data(41);
  PointCloud cloud = random_cloud(32, 2, data);
  AeTrainConfig cfg;
  cfg.epochs = 400;
  cfg.batch = 1;
  cfg.adam.lr = 2e-3;
  auto losses = train_autoencoder(store, ae, {cloud}, cfg);
  REQUIRE(losses.size() == 400);
  CHECK(losses.back() < losses.front());
  // 1% of the squared diagonal of the [-1,1]^2 workspace box.
  CHECK(losses.back() < 0.08);
}

TEST_CASE("zero training epochs keeps the initialization") {
  ParamStore store;
  Rng rng(43);
  auto ae = CloudAutoencoder::build(store, 2, EncoderSpec{4, 4, 4}, DecoderSpec{{4}, 4}, rng);
  std::vector<Tensor> before;
  for (std::size_t i = 0; i < store.count(); ++i) before.push_back(store.value(i));
  Rng data(47);
  auto losses = train_autoencoder(store, ae, {random_cloud(8, 2, data)}, AeTrainConfig{0, 1});
  CHECK(losses.empty());
  CHECK(store.step_count() == 0);
  for (std::size_t i = 0; i < store.count(); ++i) {
    CHECK(store.value(i).data == before[i].data);
  }
  SECTION("empty input set is rejected") {
    CHECK_THROWS_AS(train_autoencoder(store, ae, {}, AeTrainConfig{1, 1}), Error);
  }
  SECTION("mixed point counts are rejected") {
    auto a = random_cloud(8, 2, data);
    auto b = random_cloud(9, 2, data);
    CHECK_THROWS_AS(train_autoencoder(store, ae, {a, b}, AeTrainConfig{1, 2}), Error);
  }
}

TEST_CASE("loss history round-trips through the CSV writer") {
  auto dir = temp_dir();
  const std::string path = (dir / "loss.csv").string();
  write_loss_csv(path, {1.5, 0.25, 0.125});
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,loss");
  std::vector<double> got;
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    CHECK(std::stoul(line.substr(0, comma)) == got.size());
    got.push_back(std::stod(line.substr(comma + 1)));
  }
  CHECK(got == std::vector<double>{1.5, 0.25, 0.125});
}

TEST_CASE("autoencoder checkpoints round-trip through the sidecar") {
  auto dir = temp_dir();
  const std::string path = (dir / "ae.kdnp").string();

  ParamStore store;
  Rng rng(53);
  EncoderSpec enc{8, 16, 16};
  DecoderSpec dec{{16}, 12};
  auto ae = CloudAutoencoder::build(store, 2, enc, dec, rng);
  Rng data(59);
  std::vector<PointCloud> clouds = {random_cloud(24, 2, data), random_cloud(24, 2, data)};
  AeTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 2;
  train_autoencoder(store, ae, clouds, cfg);

  save_autoencoder(path, store, ae, enc, dec, {-1.5, -1.0}, {1.5, 1.0});
  auto loaded = load_autoencoder(path);
  CHECK(loaded.ae.dim() == 2);
  CHECK(loaded.ae.embedding_dim() == 16);
  CHECK(loaded.ae.out_points() == 12);
  CHECK(loaded.bounds_lo == VecD{-1.5, -1.0});
  CHECK(loaded.bounds_hi == VecD{1.5, 1.0});
  REQUIRE(loaded.store.count() == store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    const Tensor& want = store.ema(i);
    const Tensor& got = loaded.store.value(i);
    REQUIRE(got.shape == want.shape);
    for (std::size_t j = 0; j < want.numel(); ++j) {
      CHECK_THAT(got.data[j],
                 Catch::Matchers::WithinAbs(static_cast<float>(want.data[j]), 1e-12));
    }
  }
  // Loaded embeddings are deterministic functions of the cloud.
  auto e1 = encode_cloud(loaded.store, loaded.ae, clouds[0]);
  auto e2 = encode_cloud(loaded.store, loaded.ae, clouds[0]);
  CHECK(e1 == e2);
  CHECK(e1.size() == 16);

  CHECK_THROWS_AS(load_autoencoder((dir / "missing.kdnp").string()), Error);
}
