#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "qair/numerics.hpp"
#include "test_util.hpp"

using namespace qair;

TEST_CASE("gaussian_direction is seeded, unit-norm and seed-sensitive") {
  const Shape s{1, 2, 2};
  SeededRng a(7), b(7), c(8);
  const Direction da = gaussian_direction(a, s);
  const Direction db = gaussian_direction(b, s);
  const Direction dc = gaussian_direction(c, s);
  CHECK(da == db);
  CHECK_FALSE(da == dc);
  CHECK(std::abs(da.pixels.norm() - 1.0) < 1e-9);

  SeededRng r(123);
  for (int i = 0; i < 200; ++i) {
    CHECK(std::abs(gaussian_direction(r, Shape{3, 4, 5}).pixels.norm() - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(gaussian_direction(r, Shape{0, 2, 2}), std::invalid_argument);
}

TEST_CASE("SeededRng streams") {
  // Reference xoshiro256** with splitmix64 seeding, written from the
  // published algorithms; the first two splitmix64(0) outputs are well-known
  // constants.
  std::uint64_t x = 0;
  const auto splitmix = [&x] {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  std::uint64_t st[4];
  for (auto& w : st) w = splitmix();
  CHECK(st[0] == 0xE220A8397B1DCDAFull);
  CHECK(st[1] == 0x6E789E6AA1B965F4ull);
  const auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
  SeededRng ref_checked(0);
  for (int i = 0; i < 16; ++i) {
    const std::uint64_t expect = rotl(st[1] * 5, 7) * 9;
    const std::uint64_t t = st[1] << 17;
    st[2] ^= st[0];
    st[3] ^= st[1];
    st[1] ^= st[2];
    st[0] ^= st[3];
    st[2] ^= t;
    st[3] = rotl(st[3], 45);
    CHECK(ref_checked.next_u64() == expect);
  }

  SeededRng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(SeededRng::derive(1, 2) != SeededRng::derive(1, 3));
  CHECK(SeededRng::derive(1, 2) != SeededRng::derive(2, 2));

  SeededRng r(9);
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double g = r.normal();
    mean += g;
    var += g * g;
  }
  mean /= n;
  var = var / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);

  std::set<std::size_t> seen;
  for (int i = 0; i < 500; ++i) {
    const std::size_t v = r.below(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("linf_clip_project examples") {
  const Shape s{1, 1, 1};
  const auto img = [&](double v) { return Image::filled(s, v); };
  CHECK(linf_clip_project(img(0.5), img(0.58), 0.05).pixels[0] == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(linf_clip_project(img(0.3), img(0.3), 0.1) == img(0.3));
  CHECK(linf_clip_project(img(0.0), img(-0.2), 0.5).pixels[0] == 0.0);
  CHECK_THROWS_AS(linf_clip_project(img(0.5), Image::zeros(Shape{1, 1, 2}), 0.1), std::invalid_argument);
}

TEST_CASE("linf_clip_project properties") {
  SeededRng rng(5);
  const Shape s{3, 4, 4};
  for (int trial = 0; trial < 100; ++trial) {
    const Image x = test::random_image(rng, s);
    Eigen::VectorXd wild(s.size());
    for (Eigen::Index i = 0; i < wild.size(); ++i) wild[i] = rng.uniform(-1.0, 2.0);
    const Image cand(s, wild);
    const double eps = rng.uniform(0.0, 0.3);
    const Image p = linf_clip_project(x, cand, eps);
    CHECK(linf_distance(p, x) <= eps + 1e-12);
    CHECK(p.in_unit_range());
    CHECK(linf_clip_project(x, p, eps) == p);
    // Pulling a point inside the box never moves it further from x.
    const Image inside = linf_clip_project(x, x, eps);
    CHECK(linf_distance(inside, x) == 0.0);
  }
}

TEST_CASE("quantize_to_grid") {
  const Shape s{1, 1, 3};
  Eigen::VectorXd px(3);
  px << 0.0, 1.0, 0.5;
  const Image q = quantize_to_grid(Image(s, px));
  CHECK(q.pixels[0] == 0.0);
  CHECK(q.pixels[1] == 1.0);
  CHECK(q.pixels[2] == 128.0 / 255.0);

  SeededRng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Image x = test::random_image(rng, Shape{3, 5, 5});
    const Image g = quantize_to_grid(x);
    CHECK(quantize_to_grid(g) == g);
    CHECK(linf_distance(g, x) <= 1.0 / 510.0 + 1e-15);
    for (Eigen::Index i = 0; i < g.pixels.size(); ++i) {
      const double level = g.pixels[i] * 255.0;
      CHECK(std::abs(level - std::round(level)) < 1e-9);
    }
  }
}

TEST_CASE("quantize_within_ball stays on grid and inside the ball") {
  SeededRng rng(3);
  const Shape s{3, 4, 4};
  for (int trial = 0; trial < 200; ++trial) {
    const Image x0 = quantize_to_grid(test::random_image(rng, s));
    const double eps = rng.uniform(0.0, 0.1);
    Eigen::VectorXd delta(s.size());
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] = rng.uniform(-eps, eps);
    const Image cand = linf_clip_project(x0, Image(s, x0.pixels + delta), eps);
    const Image q = quantize_within_ball(x0, cand, eps);
    CHECK(linf_distance(q, x0) <= eps + 1e-9);
    CHECK(quantize_to_grid(q) == q);
    CHECK(q.in_unit_range());
  }
}

TEST_CASE("sign and Image validation") {
  Eigen::VectorXd v(4);
  v << -2.0, 0.0, 3.0, -0.0;
  const Eigen::VectorXd s = sign(v);
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 1.0);
  CHECK(s[3] == 0.0);
  CHECK_THROWS_AS(Image(Shape{1, 2, 2}, Eigen::VectorXd::Zero(3)), std::invalid_argument);
  CHECK(to_string(Shape{3, 16, 16}) == "(3,16,16)");
}
