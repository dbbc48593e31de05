#include <doctest.h>

#include <stdexcept>

#include "gradcheck.hpp"
#include "qair/objective.hpp"
#include "qair/prior.hpp"
#include "test_util.hpp"

using namespace qair;

namespace {

const Shape kShape{1, 2, 3};

MlpParams linear_substitute(std::uint64_t seed) {
  const std::vector<std::size_t> widths{kShape.size(), 3};
  return MlpParams::init(widths, seed);
}

// Independent evaluation of the linear net: W x + b.
Eigen::VectorXd linear_embed(const MlpParams& p, const Image& x) {
  return p.layers[0].weight * x.pixels + p.layers[0].bias;
}

// d/dx ||W x + b - t||^2 = 2 W^T (W x + b - t)
Eigen::VectorXd linear_grad(const MlpParams& p, const Image& x, const Eigen::VectorXd& t) {
  return 2.0 * p.layers[0].weight.transpose() * (linear_embed(p, x) - t);
}

}  // namespace

TEST_CASE("whitebox_target_feature") {
  const MlpParams s = linear_substitute(1);
  SeededRng rng(2);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(test::random_image(rng, kShape));

  const std::vector<double> first_only{1.0, 0.0};
  CHECK((whitebox_target_feature(s, std::span(imgs).first(2), first_only) - embed(s, imgs[0])).norm() < 1e-15);

  const std::vector<Image> same(4, imgs[1]);
  const RelevanceWeights w = relevance_weights(4);
  CHECK((whitebox_target_feature(s, same, w.omega) - embed(s, imgs[1])).norm() < 1e-14);

  const Eigen::VectorXd hand =
      (7.0 * linear_embed(s, imgs[0]) + 3.0 * linear_embed(s, imgs[1]) + 1.0 * linear_embed(s, imgs[2])) / 11.0;
  CHECK((whitebox_target_feature(s, imgs, w.omega) - hand).norm() < 1e-14);

  // Truncated weights are renormalized.
  const std::vector<double> partial{0.3, 0.1};
  const Eigen::VectorXd renorm = (0.75 * linear_embed(s, imgs[0]) + 0.25 * linear_embed(s, imgs[1]));
  CHECK((whitebox_target_feature(s, std::span(imgs).first(2), partial) - renorm).norm() < 1e-14);

  CHECK_THROWS_AS(whitebox_target_feature(s, imgs, first_only), std::invalid_argument);
}

TEST_CASE("mim_basis with one iteration is the normalized gradient") {
  const MlpParams s = linear_substitute(3);
  SeededRng rng(4);
  const Image x = test::random_image(rng, kShape);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(3, 0.7);
  PriorConfig cfg;
  cfg.iterations = 1;
  SeededRng fb(0);
  const MimBasis m = mim_basis(s, x, x, t, cfg, fb);
  const Eigen::VectorXd g = linear_grad(s, x, t);
  CHECK((m.momentum.pixels - g).norm() < 1e-12);
  CHECK((m.basis.pixels - g / g.norm()).norm() < 1e-12);
  CHECK_FALSE(m.fallback);
}

TEST_CASE("mim_basis two-step trace on a linear substitute") {
  const MlpParams s = linear_substitute(5);
  SeededRng rng(6);
  const Image x = test::random_image(rng, kShape);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(3, -0.4);
  PriorConfig cfg;
  cfg.iterations = 2;
  cfg.beta = 0.9;
  cfg.alpha_w = 0.02;
  cfg.epsilon = 0.03;
  SeededRng fb(0);
  const MimBasis m = mim_basis(s, x, x, t, cfg, fb);

  const Eigen::VectorXd g1 = linear_grad(s, x, t);
  Eigen::VectorXd x1 = x.pixels + cfg.alpha_w * g1.cwiseSign();
  for (Eigen::Index i = 0; i < x1.size(); ++i) {
    x1[i] = std::clamp(std::clamp(x1[i], x.pixels[i] - cfg.epsilon, x.pixels[i] + cfg.epsilon), 0.0, 1.0);
  }
  const Eigen::VectorXd g2 = linear_grad(s, Image(kShape, x1), t);
  const Eigen::VectorXd u = cfg.beta * g1 + g2;
  CHECK((m.momentum.pixels - u).norm() < 1e-12);
  CHECK(std::abs(m.basis.pixels.norm() - 1.0) < 1e-12);
}

TEST_CASE("mim_basis falls back at a stationary point") {
  const MlpParams s = linear_substitute(7);
  SeededRng rng(8);
  const Image x = test::random_image(rng, kShape);
  PriorConfig cfg;
  cfg.iterations = 1;
  SeededRng fb(99), fb_copy(99);
  const MimBasis m = mim_basis(s, x, x, embed(s, x), cfg, fb);
  CHECK(m.fallback);
  CHECK(std::abs(m.basis.pixels.norm() - 1.0) < 1e-12);
  CHECK(m.basis == gaussian_direction(fb_copy, kShape));
}

TEST_CASE("mim_basis iterates respect the clip contract") {
  SeededRng rng(10);
  const Shape s3{3, 3, 3};
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<std::size_t> widths{s3.size(), 8, 4};
    const MlpParams s = MlpParams::init(widths, rng.next_u64());
    const Image x = test::random_image(rng, s3);
    Eigen::VectorXd t(4);
    for (Eigen::Index i = 0; i < 4; ++i) t[i] = rng.normal();
    PriorConfig cfg;
    cfg.alpha_w = 0.02;
    cfg.epsilon = 0.05;
    for (std::uint32_t n = 1; n <= 8; ++n) {
      cfg.iterations = n;
      SeededRng fb(0);
      const MimBasis m = mim_basis(s, x, x, t, cfg, fb);
      CHECK(linf_distance(m.advanced, x) <= cfg.epsilon + 1e-12);
      CHECK(m.advanced.in_unit_range());
    }
  }
  PriorConfig bad;
  bad.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = PriorConfig{};
  bad.beta = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("whitebox gradient matches finite differences") {
  SeededRng rng(12);
  const Shape s3{2, 3, 3};
  int probes = 0;
  double worst = 0.0;
  while (probes < 50) {
    const std::vector<std::size_t> widths{s3.size(), 2 + rng.below(8), 2 + rng.below(5)};
    const MlpParams s = test::random_params(rng, widths);
    const Image x = test::random_image(rng, s3);
    Eigen::VectorXd t(static_cast<Eigen::Index>(widths.back()));
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
    Eigen::VectorXd v(static_cast<Eigen::Index>(s3.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    if (auto e = test::whitebox_gradient_probe(s, x, t, v)) {
      worst = std::max(worst, *e);
      ++probes;
    }
  }
  CHECK(worst < 1e-4);
}
