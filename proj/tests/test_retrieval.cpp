#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "qair/dataset.hpp"
#include "qair/embedding.hpp"
#include "qair/retrieval.hpp"
#include "test_util.hpp"

using namespace qair;

namespace {

const Shape kShape{1, 3, 3};

MlpParams small_model(std::uint64_t seed) {
  const std::vector<std::size_t> widths{kShape.size(), 6, 4};
  return MlpParams::init(widths, seed);
}

// Exhaustive oracle: every distance computed independently, stable sort on (distance, id).
std::vector<ItemId> brute_force(const Dataset& data, const MlpParams& model, const Image& query) {
  const Eigen::VectorXd fq = embed(model, query);
  std::vector<std::pair<double, ItemId>> all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    all.emplace_back((embed(model, data.images[i]) - fq).squaredNorm(), static_cast<ItemId>(i));
  }
  std::sort(all.begin(), all.end());
  std::vector<ItemId> ids;
  for (const auto& [d, id] : all) ids.push_back(id);
  return ids;
}

}  // namespace

TEST_CASE("build_gallery_index") {
  const Dataset d = gen_synthetic_dataset(3, 1 + 1, kShape, 0.1, 4);
  const MlpParams m = small_model(1);
  const Gallery g = build_gallery_index(d, m);
  REQUIRE(g.size() == d.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(g.items()[i].id == i);
    CHECK(g.items()[i].embedding == embed(m, d.images[i]));
    CHECK(g.label(static_cast<ItemId>(i)) == d.labels[i]);
  }
  const Gallery again = build_gallery_index(d, m);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(again.items()[i].embedding == g.items()[i].embedding);

  Dataset empty;
  empty.shape = kShape;
  CHECK_THROWS_AS(build_gallery_index(empty, m), std::invalid_argument);
  const Dataset wrong = gen_synthetic_dataset(2, 2, Shape{1, 2, 2}, 0.1, 4);
  CHECK_THROWS_AS(build_gallery_index(wrong, m), std::invalid_argument);
}

TEST_CASE("retrieve_top_n agrees with a brute-force sort") {
  SeededRng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const std::uint32_t classes = 2 + static_cast<std::uint32_t>(rng.below(8));
    const std::uint32_t per = 2 + static_cast<std::uint32_t>(rng.below(20));
    const Dataset d = gen_synthetic_dataset(classes, per, kShape, 0.2, rng.next_u64());
    const MlpParams m = small_model(rng.next_u64());
    const Gallery g(d, m);
    const Image q = test::random_image(rng, kShape);
    const std::size_t n = 1 + rng.below(d.size());
    const RankedList got = retrieve_top_n(g, q, n);
    const std::vector<ItemId> want = brute_force(d, m, q);
    REQUIRE(got.size() == n);
    CHECK(std::equal(got.ids.begin(), got.ids.end(), want.begin()));
    CHECK(std::is_sorted(got.distances.begin(), got.distances.end()));
  }
}

TEST_CASE("retrieve_top_n self match, ties and bounds") {
  Dataset d = gen_synthetic_dataset(2, 3, kShape, 0.1, 5);
  d.push_back(d.images[4], 1);  // id 6 duplicates id 4
  const Gallery g(d, small_model(3));

  const RankedList self = retrieve_top_n(g, d.images[2], 1);
  CHECK(self.ids[0] == 2);
  CHECK(self.distances[0] == 0.0);

  const RankedList tie = retrieve_top_n(g, d.images[4], 2);
  CHECK(tie.ids[0] == 4);
  CHECK(tie.ids[1] == 6);
  CHECK(tie.distances[1] == 0.0);

  CHECK_THROWS_AS(retrieve_top_n(g, d.images[0], d.size() + 1), std::invalid_argument);
  CHECK_THROWS_AS(retrieve_top_n(g, d.images[0], 0), std::invalid_argument);
}

TEST_CASE("QuerySession quantizes and counts") {
  const Dataset d = gen_synthetic_dataset(3, 4, kShape, 0.2, 6);
  const Gallery g(d, small_model(8));
  QuerySession s(g);
  SeededRng rng(1);

  const Image x = test::random_image(rng, kShape);
  CHECK(s.query_count() == 0);
  const RankedList a = oracle_query(s, x, 5);
  CHECK(s.query_count() == 1);
  CHECK(a == retrieve_top_n(g, quantize_to_grid(x), 5));

  // Perturbations below half a grid step around a grid point collapse onto it.
  const Image grid = quantize_to_grid(x);
  Eigen::VectorXd jitter(kShape.size());
  for (Eigen::Index i = 0; i < jitter.size(); ++i) jitter[i] = rng.uniform(-0.9, 0.9) / 510.0;
  const Image near(kShape, (grid.pixels + jitter).cwiseMax(0.0).cwiseMin(1.0));
  CHECK(s.query(near, 5) == s.query(grid, 5));

  s.query(x, 3, Charge::setup);
  CHECK(s.query_count() == 3);
  CHECK(s.setup_count() == 1);
  CHECK(s.fetch(2) == d.images[2]);
  CHECK(s.gallery_size() == d.size());
}
