#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "kdmp/checkpoint.hpp"
#include "kdmp/rng.hpp"
#include "kdmp/tensor.hpp"

using namespace kdmp;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3, 4});
  REQUIRE(t.numel() == 24);
  REQUIRE(t.rank() == 3);
  t.at(1, 2, 3) = 7.5;
  REQUIRE(t.data[23] == 7.5);
  REQUIRE_THROWS_AS(Tensor({2, 0, 3}), Error);
  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
}

TEST_CASE("rng streams are reproducible and independent of call pattern") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  REQUIRE(derive_seed(1, 2) != derive_seed(1, 3));
  REQUIRE(derive_seed(1, 2) == derive_seed(1, 2));
  Rng u(5);
  for (int i = 0; i < 1000; ++i) {
    double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
  // normal() should have roughly unit variance
  Rng n(6);
  double s = 0.0, s2 = 0.0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    double z = n.normal();
    s += z;
    s2 += z * z;
  }
  REQUIRE(std::abs(s / N) < 0.05);
  REQUIRE(std::abs(s2 / N - 1.0) < 0.05);
}

TEST_CASE("checkpoint container round trip") {
  Rng rng(17);
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.emplace_back("layer0/weight", Tensor::randn({3, 4, 5}, rng));
  entries.emplace_back("layer0/bias", Tensor::randn({4}, rng));
  entries.emplace_back("ema/layer0/weight", Tensor::randn({3, 4, 5}, rng));

  auto path = std::filesystem::temp_directory_path() / "kdmp_test_ckpt.kdnp";
  write_checkpoint(path.string(), entries);
  auto loaded = read_checkpoint(path.string());

  REQUIRE(loaded.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    REQUIRE(loaded[i].first == entries[i].first);
    REQUIRE(loaded[i].second.shape == entries[i].second.shape);
    for (std::size_t j = 0; j < entries[i].second.numel(); ++j) {
      // payload is f32, so round trip is exact at float precision
      REQUIRE(loaded[i].second.data[j] ==
              static_cast<double>(static_cast<float>(entries[i].second.data[j])));
    }
  }
  std::filesystem::remove(path);

  SECTION("bad magic rejected") {
    auto bad = std::filesystem::temp_directory_path() / "kdmp_test_bad.kdnp";
    {
      std::ofstream os(bad, std::ios::binary);
      os << "NOPE!";
    }
    REQUIRE_THROWS_AS(read_checkpoint(bad.string()), Error);
    std::filesystem::remove(bad);
  }
}
