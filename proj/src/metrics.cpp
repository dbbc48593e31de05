#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qair/errors.hpp"
#include "qair/harness.hpp"

namespace qair {

bool hit_at_k(const Gallery& gallery, const Image& image, std::uint32_t label, std::size_t k,
              std::optional<ItemId> self_id) {
  if (k == 0 || k > gallery.size()) {
    throw std::invalid_argument("recall_at_k: k must lie in [1, gallery size]");
  }
  const std::size_t n = self_id ? std::min(k + 1, gallery.size()) : k;
  const RankedList list = gallery.rank(image, n);
  std::size_t taken = 0;
  for (ItemId id : list.ids) {
    if (self_id && id == *self_id) continue;
    if (taken++ == k) break;
    if (gallery.label(id) == label) return true;
  }
  return false;
}

double recall_at_k(const Gallery& gallery, std::span<const EvalQuery> queries, std::size_t k,
                   const std::vector<Image>* adversarial) {
  if (queries.empty()) throw std::invalid_argument("recall_at_k: empty query set");
  if (adversarial && adversarial->size() != queries.size()) {
    throw std::invalid_argument("recall_at_k: adversarial map size differs from query count");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Image& image = adversarial ? (*adversarial)[i] : queries[i].image;
    hits += hit_at_k(gallery, image, queries[i].label, k, queries[i].gallery_id) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double asr(std::span<const AttackResult> results) {
  if (results.empty()) throw std::invalid_argument("asr: no attack results");
  const auto wins = std::count_if(results.begin(), results.end(),
                                  [](const AttackResult& r) { return r.success; });
  return static_cast<double>(wins) / static_cast<double>(results.size());
}

double avg_queries(std::span<const AttackResult> results) {
  if (results.empty()) throw std::invalid_argument("avg_queries: no attack results");
  double total = 0.0;
  for (const auto& r : results) total += static_cast<double>(r.queries_used);
  return total / static_cast<double>(results.size());
}

double drr_at_1(double recall_before, double recall_after) {
  if (!(recall_before > 0.0)) {
    throw UndefinedMetric("DRR@1 is undefined when Recall@1 before the attack is zero");
  }
  return (recall_before - recall_after) / recall_before;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length samples of size >= 2");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace qair
