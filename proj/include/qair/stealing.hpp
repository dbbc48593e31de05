#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qair/embedding.hpp"
#include "qair/retrieval.hpp"

namespace qair {

/// Gallery crawl and substitute-training parameters.
struct StealConfig {
  std::size_t n = 50;             // returned-list length per crawl query
  std::size_t n_c = 5;            // images kept per list
  std::size_t depth = 2;          // number of re-query rounds after the seed query (C)
  double lambda = 0.05;           // hinge margin
  std::size_t triplet_top_m = 8;  // ranks per anchor used to form triplets
  std::size_t triplet_pairs = 0;  // sampled pairs per anchor; 0 emits all pairs
  std::uint64_t pair_seed = 0;    // pair sampling stream
  TrainConfig train{0.01, 0.9, 30, 32, MetricLoss::triplet, 0.05, 0};

  void validate() const;
};

struct CrawlLog {
  std::vector<std::size_t> queries_per_level;
  std::size_t dedup_hits = 0;
  std::size_t total_queries = 0;
};

struct CrawlResult {
  std::vector<Image> images;  // seed first, then in query order; quantized, distinct
  CrawlLog log;
};

/// Breadth-first crawl through the oracle. Level 0 is the seed; every image of
/// a level is queried for its top-n list and, except on the last level, the
/// images at ranks floor(t*n/n_c) (t = 0..n_c-1) that were not seen before
/// form the next level. With `depth` rounds the crawl issues
/// 1 + n_c + ... + n_c^depth queries when no duplicates occur. All queries are
/// charged to the session's setup counter.
CrawlResult recursive_crawl(QuerySession& session, const Image& seed_image,
                            const StealConfig& cfg);

struct Triplet {
  std::size_t anchor = 0;    // indices into TripletSet::pool
  std::size_t positive = 0;  // ranked before `negative` for this anchor
  std::size_t negative = 0;
  std::uint32_t positive_rank = 0;  // 1-based ranks in the anchor's list
  std::uint32_t negative_rank = 0;
};

struct TripletSet {
  std::vector<Image> pool;
  std::vector<Triplet> triplets;
};

/// Queries every stolen image once for its top-m list and emits the ordered
/// pairs (i < j) of that list as triplets: all of them, or triplet_pairs pairs
/// drawn uniformly with replacement when that is smaller than m(m-1)/2.
TripletSet extract_triplets(QuerySession& session, std::span<const Image> stolen,
                            const StealConfig& cfg);

/// [D(a,p) - D(a,n) + lambda]_+ on squared distances.
inline double triplet_hinge(double d_pos, double d_neg, double lambda) {
  const double h = d_pos - d_neg + lambda;
  return h > 0.0 ? h : 0.0;
}

/// SGD with momentum on the summed triplet hinge, deterministic per
/// cfg.train.seed. `widths` starts with the pixel count.
TrainedModel train_substitute(const TripletSet& triplets, const StealConfig& cfg,
                              std::span<const std::size_t> widths);

/// Kendall tau-a between two score vectors of equal length (pairs tied in
/// either vector count as neither concordant nor discordant).
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// Mean Kendall tau, over queries, between the oracle's ranking positions and
/// the substitute's distances for `candidates` gallery items drawn without
/// replacement per query. Each query costs one full-gallery setup query.
double ranking_fidelity(QuerySession& session, const MlpParams& substitute,
                        std::span<const Image> queries, std::size_t candidates,
                        std::uint64_t seed);

}  // namespace qair
