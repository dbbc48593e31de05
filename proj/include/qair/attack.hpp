#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qair/embedding.hpp"
#include "qair/objective.hpp"
#include "qair/prior.hpp"
#include "qair/retrieval.hpp"

namespace qair {

enum class LossKind { relevance, count };
enum class BasisKind { gaussian, substitute_prior };

std::string to_string(LossKind kind);
std::string to_string(BasisKind kind);
LossKind parse_loss_kind(const std::string& s);
BasisKind parse_basis_kind(const std::string& s);

struct AttackConfig {
  double epsilon = 0.05;
  std::uint64_t max_queries = 200;  // T
  std::size_t k = 16;
  std::uint32_t q = 1;  // RGF samples per estimate
  double sigma = 0.1;
  double sigma_max = 1.0;
  double alpha = 0.01;
  LossKind loss = LossKind::relevance;
  BasisKind basis = BasisKind::substitute_prior;
  PriorConfig prior;  // prior.epsilon is overridden by `epsilon`
  std::uint64_t seed = 0;

  void validate() const;
};

/// Loss of an adversarial ranking against the original top-k.
class AttackObjective {
 public:
  AttackObjective(RankedList original, LossKind kind);

  double operator()(const RankedList& adversarial) const;
  const RankedList& original() const { return original_; }
  /// Per-rank weights of this loss (relevance weights or uniform 1/k).
  const RelevanceWeights& weights() const { return weights_; }
  LossKind kind() const { return kind_; }

 private:
  RankedList original_;
  LossKind kind_;
  RelevanceWeights weights_;
};

struct ProbeOutcome {
  Image queried;  // quantized image that was sent
  RankedList list;
  double loss = 0.0;
};

struct RgfEstimate {
  Direction gradient;
  double loss = 0.0;  // L(x_hat)
  Image queried;      // quantized x_hat that was sent
  RankedList list;    // ranking of x_hat
  std::vector<ProbeOutcome> probes;
};

/// Random gradient-free estimate
///   g = (1/q) sum_i (L(x+sigma*u_i) - L(x)) / sigma * u_i
/// Probe points are clipped into the eps-ball of `x_original` and quantized.
/// Issues bases.size() + 1 attack queries; L(x) is shared by all probes.
RgfEstimate rgf_estimate(QuerySession& session, const AttackObjective& objective,
                         const Image& x_hat, const Image& x_original, double epsilon,
                         std::span<const Direction> bases, double sigma);

struct LossTracePoint {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  double sigma = 0.0;  // probe step used in this iteration
};

struct AttackResult {
  bool success = false;
  std::uint64_t queries_used = 0;   // in-loop queries (AQ)
  std::uint64_t setup_queries = 0;  // the initial top-k query
  Image final_image;                // on the 1/255 grid, within eps of the quantized input
  double final_linf = 0.0;
  std::vector<LossTracePoint> loss_trace;
  std::uint32_t basis_fallback_count = 0;
  RankedList original_list;
  RankedList final_list;
};

/// Query-based attack on a retrieval oracle.
///
/// The input is first put on the 1/255 grid; its top-k list y is the setup
/// query. Each iteration then draws q bases (momentum prior from the
/// substitute, or unit Gaussians), spends q+1 queries on an RGF estimate and
/// takes a sign-descent step x <- clip_{x,eps}(x - alpha*sign(g)). A budget
/// remainder r = T mod (q+1) buys a last iteration with r-1 probes, so an
/// attack without early stop uses exactly T queries. When the
/// loss at the current iterate equals the previous one, sigma doubles (capped
/// at sigma_max). The attack stops as soon as a queried point (iterate or
/// probe) has an empty top-k intersection with y.
///
/// `session` must be fresh; its counters become the result's query counts.
AttackResult qair_attack(QuerySession& session, const Image& x, const AttackConfig& cfg,
                         const MlpParams* substitute = nullptr);

}  // namespace qair
