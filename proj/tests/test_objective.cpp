#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "qair/objective.hpp"
#include "test_util.hpp"

using namespace qair;
using test::list_of;

TEST_CASE("relevance_weights exact values") {
  const RelevanceWeights w3 = relevance_weights(3);
  CHECK(w3.omega == std::vector<double>{0.75, 0.25, 0.0});

  const RelevanceWeights w4 = relevance_weights(4);
  CHECK(w4[0] == doctest::Approx(7.0 / 11).epsilon(1e-15));
  CHECK(w4[1] == doctest::Approx(3.0 / 11).epsilon(1e-15));
  CHECK(w4[2] == doctest::Approx(1.0 / 11).epsilon(1e-15));
  CHECK(w4[3] == 0.0);

  CHECK_THROWS_AS(relevance_weights(1), std::invalid_argument);
  CHECK_THROWS_AS(relevance_weights(0), std::invalid_argument);
}

TEST_CASE("relevance_weights invariants") {
  for (std::size_t k = 2; k <= 64; ++k) {
    const RelevanceWeights w = relevance_weights(k);
    REQUIRE(w.omega.size() == k);
    CHECK(std::abs(std::accumulate(w.omega.begin(), w.omega.end(), 0.0) - 1.0) < 1e-12);
    CHECK(w.omega.back() == 0.0);
    for (std::size_t i = 0; i + 2 < k; ++i) CHECK(w[i] > w[i + 1]);
    for (double v : w.omega) CHECK(v >= 0.0);
  }
  const RelevanceWeights u = uniform_weights(4);
  CHECK(u.omega == std::vector<double>(4, 0.25));
}

TEST_CASE("failure_prob_phi") {
  const RelevanceWeights w = relevance_weights(4);
  const RankedList orig = list_of({10, 11, 12, 13});
  for (std::size_t i = 1; i <= 4; ++i) CHECK(failure_prob_phi(orig, orig, i, w) == w[i - 1]);
  CHECK(failure_prob_phi(orig, list_of({20, 21, 22, 23}), 2, w) == 0.0);
  CHECK(failure_prob_phi(orig, list_of({12, 30, 31, 32}), 3, w) == doctest::Approx(7.0 / 11));
  CHECK_THROWS_AS(failure_prob_phi(orig, list_of({1, 1, 2, 3}), 1, w), std::invalid_argument);
  CHECK_THROWS_AS(failure_prob_phi(orig, orig, 0, w), std::invalid_argument);
  CHECK_THROWS_AS(failure_prob_phi(orig, orig, 5, w), std::invalid_argument);
}

TEST_CASE("relevance_loss and count_loss examples") {
  const RankedList orig = list_of({1, 2, 3, 4});
  CHECK(relevance_loss(orig, list_of({5, 6, 7, 8})) == 0.0);
  CHECK(relevance_loss(orig, orig) == doctest::Approx(59.0 / 121).epsilon(1e-15));
  CHECK(relevance_loss(orig, list_of({3, 9, 10, 11})) == doctest::Approx(7.0 / 121).epsilon(1e-15));
  CHECK(max_relevance_loss(relevance_weights(4)) == doctest::Approx(59.0 / 121).epsilon(1e-15));

  CHECK(count_loss(orig, orig) == 1.0);
  CHECK(count_loss(orig, list_of({5, 6, 7, 8})) == 0.0);
  CHECK(count_loss(orig, list_of({5, 2, 7, 8})) == 0.25);

  CHECK_THROWS_AS(relevance_loss(orig, list_of({1, 2, 3})), std::invalid_argument);
  CHECK_THROWS_AS(count_loss(orig, list_of({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("relevance_loss is zero without disjointness when only rank k overlaps") {
  // omega_k = 0, so an overlap that involves rank k on either side carries no weight.
  const RankedList orig = list_of({1, 2, 3, 4});
  const RankedList last_kept = list_of({9, 8, 7, 4});
  CHECK(relevance_loss(orig, last_kept) == 0.0);
  CHECK_FALSE(attack_success(orig, last_kept, 0.0, 0.05));
  CHECK(count_loss(orig, last_kept) == 0.25);
}

TEST_CASE("rearrangement maximality, exhaustive for k <= 6") {
  for (std::size_t k = 2; k <= 6; ++k) {
    std::vector<ItemId> ids(k);
    std::iota(ids.begin(), ids.end(), ItemId{0});
    const RankedList orig = list_of(ids);
    const double identity = relevance_loss(orig, orig);
    CHECK(identity == doctest::Approx(max_relevance_loss(relevance_weights(k))).epsilon(1e-15));
    std::vector<ItemId> perm = ids;
    std::size_t count = 0;
    do {
      CHECK(relevance_loss(orig, list_of(perm)) <= identity + 1e-15);
      ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::size_t factorial = 1;
    for (std::size_t i = 2; i <= k; ++i) factorial *= i;
    CHECK(count == factorial);
  }
}

TEST_CASE("loss bounds, monotonicity and id-only dependence") {
  SeededRng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + rng.below(9);
    std::vector<ItemId> pool(3 * k);
    std::iota(pool.begin(), pool.end(), ItemId{0});
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
    const RankedList orig = list_of({pool.begin(), pool.begin() + static_cast<long>(k)});
    std::vector<ItemId> adv_ids;
    std::vector<ItemId> candidates(pool.begin(), pool.begin() + static_cast<long>(2 * k));
    for (std::size_t i = candidates.size(); i > 1; --i) std::swap(candidates[i - 1], candidates[rng.below(i)]);
    adv_ids.assign(candidates.begin(), candidates.begin() + static_cast<long>(k));
    RankedList adv = list_of(adv_ids);

    const RelevanceWeights w = relevance_weights(k);
    const double l = relevance_loss(orig, adv);
    CHECK(l >= 0.0);
    CHECK(l <= max_relevance_loss(w) + 1e-15);
    if (overlap_count(orig.ids, adv.ids) == 0) {
      CHECK(l == 0.0);
      CHECK(count_loss(orig, adv) == 0.0);
    }

    // Replace one overlapping item with a fresh id: loss never increases.
    for (std::size_t j = 0; j < k; ++j) {
      if (std::find(orig.ids.begin(), orig.ids.end(), adv.ids[j]) == orig.ids.end()) continue;
      RankedList removed = adv;
      removed.ids[j] = 1000 + static_cast<ItemId>(j);
      CHECK(relevance_loss(orig, removed) <= l + 1e-15);
      break;
    }

    // Distances are irrelevant.
    RankedList scaled = adv;
    for (auto& d : scaled.distances) d = rng.uniform() * 100.0;
    CHECK(relevance_loss(orig, scaled) == l);
  }
}

TEST_CASE("attack_success") {
  const RankedList orig = list_of({1, 2, 3});
  const RankedList dis = list_of({4, 5, 6});
  CHECK(attack_success(orig, dis, 0.04, 0.05));
  CHECK_FALSE(attack_success(orig, list_of({4, 2, 6}), 0.0, 0.05));
  CHECK_FALSE(attack_success(orig, dis, 0.06, 0.05));
  CHECK(attack_success(orig, dis, 0.05 + 5e-10, 0.05));
  CHECK_THROWS_AS(attack_success(orig, dis, -0.01, 0.05), std::invalid_argument);
}
