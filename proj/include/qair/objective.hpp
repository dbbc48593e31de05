#pragma once

#include <span>
#include <vector>

#include "qair/retrieval.hpp"

namespace qair {

/// Rank-sensitive weights over the top-k of the original list.
///
///   omega_i = (2^{r_i} - 1) / sum_j (2^{r_j} - 1),  r_i = k - i  (i = 1..k)
///
/// omega decays geometrically and its last entry is exactly zero.
struct RelevanceWeights {
  std::size_t k = 0;
  std::vector<double> omega;

  double operator[](std::size_t rank0) const { return omega[rank0]; }
};

/// Throws std::invalid_argument for k < 2 (the normalizer vanishes at k = 1).
RelevanceWeights relevance_weights(std::size_t k);

/// Uniform weights 1/k: the count-based weighting.
RelevanceWeights uniform_weights(std::size_t k);

/// Failure probability of original item `i` (1-based): omega_j when that item
/// sits at rank j of `adversarial`, else 0. Only ranks are used.
double failure_prob_phi(const RankedList& original, const RankedList& adversarial,
                        std::size_t i, const RelevanceWeights& w);

/// sum_i omega_i * phi_i. Lies in [0, sum_i omega_i^2].
double relevance_loss(const RankedList& original, const RankedList& adversarial);
double relevance_loss(const RankedList& original, const RankedList& adversarial,
                      const RelevanceWeights& w);

/// |original ∩ adversarial| / k.
double count_loss(const RankedList& original, const RankedList& adversarial);

/// Number of ids the two lists share.
std::size_t overlap_count(std::span<const ItemId> a, std::span<const ItemId> b);

/// Empty top-k intersection within the l-inf budget (1e-9 slack).
bool attack_success(const RankedList& original, const RankedList& adversarial,
                    double perturbation_linf, double epsilon);

/// sum_i omega_i^2, the loss of an unperturbed query.
double max_relevance_loss(const RelevanceWeights& w);

}  // namespace qair
