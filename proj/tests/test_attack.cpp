#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "qair/attack.hpp"
#include "test_util.hpp"

using namespace qair;

namespace {

const Shape kPixel{1, 1, 1};

// Identity embedding on a one-pixel image.
MlpParams identity_model() {
  const std::vector<std::size_t> widths{1, 1};
  MlpParams p = MlpParams::init(widths, 0);
  p.layers[0].weight.setConstant(1.0);
  p.layers[0].bias.setZero();
  return p;
}

Gallery pixel_gallery(std::vector<double> values) {
  Dataset d;
  d.shape = kPixel;
  for (std::size_t i = 0; i < values.size(); ++i) {
    d.push_back(Image(kPixel, Eigen::VectorXd::Constant(1, values[i])), static_cast<std::uint32_t>(i));
  }
  return Gallery(d, identity_model());
}

Gallery random_gallery(SeededRng& rng, Shape shape, std::size_t items, std::size_t embed) {
  Dataset d;
  d.shape = shape;
  for (std::size_t i = 0; i < items; ++i) d.push_back(test::random_image(rng, shape), 0);
  const std::vector<std::size_t> widths{shape.size(), 12, embed};
  return Gallery(d, MlpParams::init(widths, rng.next_u64()));
}

bool on_grid(const Image& x) {
  for (Eigen::Index i = 0; i < x.pixels.size(); ++i) {
    const double v = x.pixels[i] * 255.0;
    if (std::abs(v - std::round(v)) > 1e-9) return false;
  }
  return true;
}

// Oracle wrapper that records every query it receives.
class RecordingOracle final : public RetrievalOracle {
 public:
  explicit RecordingOracle(const RetrievalOracle& inner) : inner_(inner) {}
  RankedList rank(const Image& query, std::size_t n) const override {
    seen.push_back(query);
    return inner_.rank(query, n);
  }
  const Image& image(ItemId id) const override { return inner_.image(id); }
  std::size_t size() const override { return inner_.size(); }
  Shape image_shape() const override { return inner_.image_shape(); }

  mutable std::vector<Image> seen;

 private:
  const RetrievalOracle& inner_;
};

AttackConfig gaussian_count(std::size_t k, std::uint64_t queries) {
  AttackConfig cfg;
  cfg.k = k;
  cfg.max_queries = queries;
  cfg.loss = LossKind::count;
  cfg.basis = BasisKind::gaussian;
  return cfg;
}

}  // namespace

TEST_CASE("rgf_estimate single-sample formula") {
  SeededRng rng(1);
  const Shape shape{1, 4, 4};
  const Gallery g = random_gallery(rng, shape, 40, 4);
  for (int trial = 0; trial < 30; ++trial) {
    const Image x = quantize_to_grid(test::random_image(rng, shape));
    QuerySession s(g);
    const AttackObjective obj(s.query(x, 6, Charge::setup), LossKind::relevance);
    const std::vector<Direction> bases{gaussian_direction(rng, shape)};
    const double sigma = 0.05 + 0.3 * rng.uniform();
    const RgfEstimate est = rgf_estimate(s, obj, x, x, 0.1, bases, sigma);
    const double d = est.probes[0].loss - est.loss;
    CHECK((est.gradient.pixels - (d / sigma) * bases[0].pixels).norm() < 1e-12);
    CHECK(s.query_count() == 2);
    CHECK(est.probes[0].loss == doctest::Approx(obj(g.rank(est.probes[0].queried, 6))));
  }
}

TEST_CASE("rgf_estimate is zero when no probe changes the loss") {
  SeededRng rng(2);
  const Shape shape{1, 3, 3};
  const Gallery g = random_gallery(rng, shape, 10, 3);
  const Image x = quantize_to_grid(test::random_image(rng, shape));
  QuerySession s(g);
  // With k equal to the gallery size every list holds every item.
  const AttackObjective obj(s.query(x, 10, Charge::setup), LossKind::count);
  std::vector<Direction> bases;
  for (int i = 0; i < 3; ++i) bases.push_back(gaussian_direction(rng, shape));
  const RgfEstimate est = rgf_estimate(s, obj, x, x, 0.05, bases, 0.1);
  CHECK(est.gradient.pixels.isZero(0.0));
  CHECK(s.query_count() == 4);
  CHECK_THROWS_AS(rgf_estimate(s, obj, x, x, 0.05, {}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(rgf_estimate(s, obj, x, x, 0.05, bases, 0.0), std::invalid_argument);
}

TEST_CASE("one probe flips the nearest neighbour of a one-pixel query") {
  // Items at 0.35, 0.5, 0.65; the query sits on 0.5. A probe of +-0.1 lands
  // nearer to one of the outer items, so the top-1 list changes at once.
  const Gallery g = pixel_gallery({0.35, 0.5, 0.65});
  AttackConfig cfg = gaussian_count(1, 50);
  cfg.epsilon = 0.1;
  cfg.sigma = 0.1;
  QuerySession s(g);
  const AttackResult r = qair_attack(s, Image(kPixel, Eigen::VectorXd::Constant(1, 0.5)), cfg);
  CHECK(r.success);
  CHECK(r.queries_used == 2);
  CHECK(r.setup_queries == 1);
  CHECK(r.loss_trace.size() == 1);
  CHECK(r.loss_trace[0].loss == 0.0);
  CHECK(r.original_list.ids == std::vector<ItemId>{1});
  CHECK(r.final_list.ids != r.original_list.ids);
  CHECK(r.final_linf <= cfg.epsilon + 1e-9);
  CHECK(on_grid(r.final_image));
}

TEST_CASE("zero budget cannot move the query") {
  SeededRng rng(3);
  const Shape shape{1, 4, 4};
  const Gallery g = random_gallery(rng, shape, 30, 4);
  AttackConfig cfg = gaussian_count(4, 20);
  cfg.epsilon = 0.0;
  QuerySession s(g);
  const AttackResult r = qair_attack(s, test::random_image(rng, shape), cfg);
  CHECK_FALSE(r.success);
  CHECK(r.queries_used == 20);
  CHECK(r.final_linf == 0.0);
  CHECK(r.final_list == r.original_list);
}

TEST_CASE("sigma doubles while the loss stalls") {
  SeededRng rng(4);
  const Shape shape{1, 3, 3};
  const Gallery g = random_gallery(rng, shape, 8, 3);
  AttackConfig cfg = gaussian_count(8, 12);  // k = gallery size: the loss is stuck at 1
  cfg.sigma = 0.1;
  cfg.sigma_max = 1.0;
  QuerySession s(g);
  const AttackResult r = qair_attack(s, test::random_image(rng, shape), cfg);
  REQUIRE(r.loss_trace.size() == 6);
  const std::vector<double> expected{0.1, 0.2, 0.4, 0.8, 1.0, 1.0};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(r.loss_trace[i].iteration == i + 1);
    CHECK(r.loss_trace[i].sigma == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(r.loss_trace[i].loss == 1.0);
  }
  CHECK(r.queries_used == 12);
}

TEST_CASE("query accounting without early stop") {
  SeededRng rng(5);
  const Shape shape{1, 3, 3};
  const Gallery g = random_gallery(rng, shape, 6, 3);
  for (int trial = 0; trial < 40; ++trial) {
    AttackConfig cfg = gaussian_count(6, 2 + rng.below(60));
    cfg.q = 1 + static_cast<std::uint32_t>(rng.below(4));
    cfg.seed = rng.next_u64();
    QuerySession s(g);
    const AttackResult r = qair_attack(s, test::random_image(rng, shape), cfg);
    const std::uint64_t per = cfg.q + 1;
    const std::uint64_t iterations = (cfg.max_queries + per - 1) / per;
    CHECK(r.queries_used == cfg.max_queries);
    CHECK(r.loss_trace.size() == iterations);
    CHECK(r.setup_queries == 1);
  }
}

TEST_CASE("every queried image is on the grid and inside the budget") {
  SeededRng rng(6);
  const Shape shape{3, 4, 4};
  const Gallery g = random_gallery(rng, shape, 60, 6);
  const std::vector<std::size_t> sub_widths{shape.size(), 10, 5};
  const MlpParams substitute = MlpParams::init(sub_widths, 77);
  for (BasisKind basis : {BasisKind::gaussian, BasisKind::substitute_prior}) {
    for (LossKind loss : {LossKind::count, LossKind::relevance}) {
      RecordingOracle oracle(g);
      AttackConfig cfg;
      cfg.k = 5;
      cfg.max_queries = 120;
      cfg.q = 2;
      cfg.epsilon = 0.04;
      cfg.alpha = 0.01;
      cfg.loss = loss;
      cfg.basis = basis;
      cfg.seed = 11;
      const Image x = test::random_image(rng, shape);
      const Image x0 = quantize_to_grid(x);
      QuerySession s(oracle);
      const AttackResult r = qair_attack(s, x, cfg, &substitute);
      REQUIRE(oracle.seen.size() == r.queries_used + r.setup_queries);
      for (const Image& q : oracle.seen) {
        CHECK(on_grid(q));
        CHECK(linf_distance(q, x0) <= cfg.epsilon + 1e-9);
        CHECK(q.in_unit_range());
      }
      CHECK(r.final_linf <= cfg.epsilon + 1e-9);
      if (r.success) {
        CHECK(overlap_count(r.original_list.ids, r.final_list.ids) == 0);
        CHECK(AttackObjective(r.original_list, loss)(r.final_list) == 0.0);
      }
    }
  }
}

TEST_CASE("the attack is deterministic per seed") {
  SeededRng rng(7);
  const Shape shape{1, 4, 4};
  const Gallery g = random_gallery(rng, shape, 40, 4);
  const std::vector<std::size_t> sub_widths{shape.size(), 8, 4};
  const MlpParams substitute = MlpParams::init(sub_widths, 5);
  const Image x = test::random_image(rng, shape);
  AttackConfig cfg;
  cfg.k = 4;
  cfg.max_queries = 80;
  cfg.seed = 3;
  auto run = [&] {
    QuerySession s(g);
    return qair_attack(s, x, cfg, &substitute);
  };
  const AttackResult a = run();
  const AttackResult b = run();
  CHECK(a.success == b.success);
  CHECK(a.queries_used == b.queries_used);
  CHECK(a.final_image == b.final_image);
  CHECK(a.final_list == b.final_list);
  REQUIRE(a.loss_trace.size() == b.loss_trace.size());
  for (std::size_t i = 0; i < a.loss_trace.size(); ++i) {
    CHECK(a.loss_trace[i].loss == b.loss_trace[i].loss);
    CHECK(a.loss_trace[i].sigma == b.loss_trace[i].sigma);
  }
}

TEST_CASE("attack preconditions") {
  SeededRng rng(8);
  const Shape shape{1, 3, 3};
  const Gallery g = random_gallery(rng, shape, 10, 3);
  const Image x = test::random_image(rng, shape);
  AttackConfig cfg;
  cfg.k = 4;
  {
    QuerySession s(g);
    CHECK_THROWS_AS(qair_attack(s, x, cfg), std::invalid_argument);  // prior without substitute
  }
  cfg.basis = BasisKind::gaussian;
  {
    QuerySession s(g);
    s.query(x, 1);
    CHECK_THROWS_AS(qair_attack(s, x, cfg), std::invalid_argument);  // used session
  }
  {
    QuerySession s(g);
    Image bad = x;
    bad.pixels[0] = 1.5;
    CHECK_THROWS_AS(qair_attack(s, bad, cfg), std::invalid_argument);
  }
  AttackConfig c2 = cfg;
  c2.max_queries = 1;
  CHECK_THROWS_AS(c2.validate(), std::invalid_argument);
  c2 = cfg;
  c2.k = 1;
  CHECK_THROWS_AS(c2.validate(), std::invalid_argument);  // relevance loss needs k >= 2
  c2.loss = LossKind::count;
  CHECK_NOTHROW(c2.validate());
  c2 = cfg;
  c2.sigma_max = 0.5 * c2.sigma;
  CHECK_THROWS_AS(c2.validate(), std::invalid_argument);
  CHECK(parse_loss_kind(to_string(LossKind::count)) == LossKind::count);
  CHECK(parse_basis_kind(to_string(BasisKind::substitute_prior)) == BasisKind::substitute_prior);
  CHECK_THROWS_AS(parse_loss_kind("bogus"), std::invalid_argument);
}
