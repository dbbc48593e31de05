#include "qair/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace qair {

namespace {

void require_distinct(std::span<const ItemId> ids, const char* which) {
  std::unordered_set<ItemId> seen;
  for (ItemId id : ids) {
    if (!seen.insert(id).second) {
      throw std::invalid_argument(std::string(which) + " list contains duplicate id " +
                                  std::to_string(id));
    }
  }
}

void require_same_length(const RankedList& a, const RankedList& b, const char* op) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": list lengths differ (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                ")");
  }
}

}  // namespace

RelevanceWeights relevance_weights(std::size_t k) {
  if (k < 2) {
    throw std::invalid_argument("relevance_weights: k must be >= 2 (k=" + std::to_string(k) +
                                " leaves every gain at zero)");
  }
  if (k > 1000) throw std::invalid_argument("relevance_weights: k too large for 2^k gains");
  RelevanceWeights w{k, std::vector<double>(k)};
  double total = 0.0;
  for (std::size_t i = 1; i <= k; ++i) {
    const double gain = std::exp2(static_cast<double>(k - i)) - 1.0;
    w.omega[i - 1] = gain;
    total += gain;
  }
  for (double& v : w.omega) v /= total;
  return w;
}

RelevanceWeights uniform_weights(std::size_t k) {
  if (k < 1) throw std::invalid_argument("uniform_weights: k must be positive");
  return {k, std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

double failure_prob_phi(const RankedList& original, const RankedList& adversarial,
                        std::size_t i, const RelevanceWeights& w) {
  require_same_length(original, adversarial, "failure_prob_phi");
  if (original.size() != w.k) {
    throw std::invalid_argument("failure_prob_phi: list length does not match k");
  }
  if (i < 1 || i > w.k) throw std::invalid_argument("failure_prob_phi: i out of range");
  require_distinct(original.ids, "original");
  require_distinct(adversarial.ids, "adversarial");
  const auto it = std::find(adversarial.ids.begin(), adversarial.ids.end(), original.ids[i - 1]);
  if (it == adversarial.ids.end()) return 0.0;
  return w.omega[static_cast<std::size_t>(it - adversarial.ids.begin())];
}

double relevance_loss(const RankedList& original, const RankedList& adversarial,
                      const RelevanceWeights& w) {
  require_same_length(original, adversarial, "relevance_loss");
  if (original.size() != w.k) {
    throw std::invalid_argument("relevance_loss: list length does not match k");
  }
  require_distinct(original.ids, "original");
  require_distinct(adversarial.ids, "adversarial");
  double loss = 0.0;
  for (std::size_t i = 0; i < w.k; ++i) {
    const auto it = std::find(adversarial.ids.begin(), adversarial.ids.end(), original.ids[i]);
    if (it != adversarial.ids.end()) {
      loss += w.omega[i] * w.omega[static_cast<std::size_t>(it - adversarial.ids.begin())];
    }
  }
  return loss;
}

double relevance_loss(const RankedList& original, const RankedList& adversarial) {
  require_same_length(original, adversarial, "relevance_loss");
  return relevance_loss(original, adversarial, relevance_weights(original.size()));
}

std::size_t overlap_count(std::span<const ItemId> a, std::span<const ItemId> b) {
  const std::unordered_set<ItemId> in_a(a.begin(), a.end());
  return static_cast<std::size_t>(
      std::count_if(b.begin(), b.end(), [&](ItemId id) { return in_a.contains(id); }));
}

double count_loss(const RankedList& original, const RankedList& adversarial) {
  require_same_length(original, adversarial, "count_loss");
  if (original.size() == 0) throw std::invalid_argument("count_loss: k must be positive");
  require_distinct(original.ids, "original");
  require_distinct(adversarial.ids, "adversarial");
  return static_cast<double>(overlap_count(original.ids, adversarial.ids)) /
         static_cast<double>(original.size());
}

bool attack_success(const RankedList& original, const RankedList& adversarial,
                    double perturbation_linf, double epsilon) {
  if (perturbation_linf < 0.0) {
    throw std::invalid_argument("attack_success: perturbation norm must be non-negative");
  }
  return overlap_count(original.ids, adversarial.ids) == 0 &&
         perturbation_linf <= epsilon + 1e-9;
}

double max_relevance_loss(const RelevanceWeights& w) {
  double s = 0.0;
  for (double v : w.omega) s += v * v;
  return s;
}

}  // namespace qair
