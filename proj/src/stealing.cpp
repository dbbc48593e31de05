#include "qair/stealing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace qair {

namespace {

// Exact key of an on-grid image: its 8-bit levels.
std::string grid_key(const Image& quantized) {
  std::string key(quantized.size(), '\0');
  for (std::size_t i = 0; i < key.size(); ++i) {
    key[i] = static_cast<char>(static_cast<int>(std::lround(quantized.pixels[static_cast<Eigen::Index>(i)] * 255.0)));
  }
  return key;
}

}  // namespace

void StealConfig::validate() const {
  if (n_c < 1 || n < n_c) throw std::invalid_argument("StealConfig: need n >= n_c >= 1");
  if (depth < 1) throw std::invalid_argument("StealConfig: depth must be >= 1");
  if (!(lambda >= 0.0)) throw std::invalid_argument("StealConfig: lambda must be >= 0");
  if (triplet_top_m < 2 || triplet_top_m > n) {
    throw std::invalid_argument("StealConfig: need 2 <= triplet_top_m <= n");
  }
}

CrawlResult recursive_crawl(QuerySession& session, const Image& seed_image,
                            const StealConfig& cfg) {
  cfg.validate();
  if (session.gallery_size() < cfg.n) {
    throw std::invalid_argument("recursive_crawl: gallery has " +
                                std::to_string(session.gallery_size()) + " items, fewer than n=" +
                                std::to_string(cfg.n));
  }
  CrawlResult out;
  std::unordered_set<std::string> seen;
  std::vector<Image> level{quantize_to_grid(seed_image)};
  seen.insert(grid_key(level.front()));
  out.images.push_back(level.front());

  for (std::size_t depth = 0; depth <= cfg.depth; ++depth) {
    std::vector<Image> next;
    for (const Image& query : level) {
      const RankedList list = session.query(query, cfg.n, Charge::setup);
      if (depth == cfg.depth) continue;
      for (std::size_t t = 0; t < cfg.n_c; ++t) {
        const Image kept = quantize_to_grid(session.fetch(list.ids[t * cfg.n / cfg.n_c]));
        if (!seen.insert(grid_key(kept)).second) {
          ++out.log.dedup_hits;
          continue;
        }
        out.images.push_back(kept);
        next.push_back(kept);
      }
    }
    out.log.queries_per_level.push_back(level.size());
    out.log.total_queries += level.size();
    level = std::move(next);
  }
  return out;
}

TripletSet extract_triplets(QuerySession& session, std::span<const Image> stolen,
                            const StealConfig& cfg) {
  cfg.validate();
  if (stolen.empty()) throw std::invalid_argument("extract_triplets: no stolen images");
  TripletSet out;
  std::unordered_map<ItemId, std::size_t> pool_index;
  SeededRng rng(cfg.pair_seed);
  for (const Image& anchor : stolen) {
    const RankedList list = session.query(anchor, cfg.triplet_top_m, Charge::setup);
    const std::size_t a = out.pool.size();
    out.pool.push_back(anchor);
    std::vector<std::size_t> ranked;
    for (ItemId id : list.ids) {
      auto [it, inserted] = pool_index.try_emplace(id, out.pool.size());
      if (inserted) out.pool.push_back(session.fetch(id));
      ranked.push_back(it->second);
    }
    const auto emit = [&](std::size_t i, std::size_t j) {
      out.triplets.push_back({a, ranked[i], ranked[j], static_cast<std::uint32_t>(i + 1),
                              static_cast<std::uint32_t>(j + 1)});
    };
    const std::size_t len = ranked.size();
    if (len < 2) continue;
    if (cfg.triplet_pairs == 0 || cfg.triplet_pairs >= len * (len - 1) / 2) {
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = i + 1; j < len; ++j) emit(i, j);
      }
    } else {
      for (std::size_t b = 0; b < cfg.triplet_pairs; ++b) {
        std::size_t i = rng.below(len);
        std::size_t j = rng.below(len - 1);
        if (j >= i) ++j;
        if (i > j) std::swap(i, j);
        emit(i, j);
      }
    }
  }
  return out;
}

TrainedModel train_substitute(const TripletSet& triplets, const StealConfig& cfg,
                              std::span<const std::size_t> widths) {
  cfg.validate();
  cfg.train.validate();
  if (triplets.triplets.empty()) throw std::invalid_argument("train_substitute: empty triplet set");
  if (widths.empty() || widths.front() != triplets.pool.front().size()) {
    throw std::invalid_argument("train_substitute: first width must equal the pixel count");
  }

  TrainedModel out{MlpParams::init(widths, SeededRng::derive(cfg.train.seed, 0)), {}};
  SeededRng rng(SeededRng::derive(cfg.train.seed, 1));
  MomentumSgd opt(out.params, cfg.train.learning_rate, cfg.train.momentum);

  // Triplets are visited anchor by anchor (anchors shuffled each epoch) so a
  // batch touches few distinct images; each is embedded once per batch.
  std::map<std::size_t, std::vector<std::size_t>> by_anchor;
  for (std::size_t i = 0; i < triplets.triplets.size(); ++i) {
    by_anchor[triplets.triplets[i].anchor].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [anchor, members] : by_anchor) groups.push_back(&members);

  std::vector<std::size_t> order;
  order.reserve(triplets.triplets.size());
  std::unordered_map<std::size_t, Eigen::Index> column;
  std::vector<std::size_t> members;

  for (std::uint32_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    for (std::size_t i = groups.size(); i > 1; --i) std::swap(groups[i - 1], groups[rng.below(i)]);
    order.clear();
    for (const auto* g : groups) order.insert(order.end(), g->begin(), g->end());

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.train.batch_size);
      // One column per distinct image of the batch, in order of first use.
      column.clear();
      members.clear();
      const auto col_of = [&](std::size_t idx) {
        auto [it, inserted] = column.try_emplace(idx, static_cast<Eigen::Index>(members.size()));
        if (inserted) members.push_back(idx);
        return it->second;
      };
      for (std::size_t b = start; b < end; ++b) {
        const Triplet& t = triplets.triplets[order[b]];
        col_of(t.anchor);
        col_of(t.positive);
        col_of(t.negative);
      }
      Eigen::MatrixXd x(static_cast<Eigen::Index>(widths.front()),
                        static_cast<Eigen::Index>(members.size()));
      for (std::size_t c = 0; c < members.size(); ++c) {
        x.col(static_cast<Eigen::Index>(c)) = triplets.pool[members[c]].pixels;
      }
      auto [f, trace] = forward_embed_batch(out.params, x);
      Eigen::MatrixXd up = Eigen::MatrixXd::Zero(f.rows(), f.cols());
      for (std::size_t b = start; b < end; ++b) {
        const Triplet& t = triplets.triplets[order[b]];
        const Eigen::Index ca = column.at(t.anchor);
        const Eigen::Index cp = column.at(t.positive);
        const Eigen::Index cn = column.at(t.negative);
        const double h = triplet_hinge((f.col(ca) - f.col(cp)).squaredNorm(),
                                       (f.col(ca) - f.col(cn)).squaredNorm(), cfg.lambda);
        if (h <= 0.0) continue;
        epoch_loss += h;
        up.col(ca) += 2.0 * (f.col(cn) - f.col(cp));
        up.col(cp) += -2.0 * (f.col(ca) - f.col(cp));
        up.col(cn) += 2.0 * (f.col(ca) - f.col(cn));
      }
      MlpParams grad = parameter_gradient_batch(out.params, trace, up);
      grad.scale(1.0 / static_cast<double>(end - start));
      opt.step(out.params, grad);
    }
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return out;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("kendall_tau: need at least 2 items");
  long long score = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[j] - a[i];
      const double db = b[j] - b[i];
      score += (da > 0 && db > 0) || (da < 0 && db < 0) ? 1 : 0;
      score -= (da > 0 && db < 0) || (da < 0 && db > 0) ? 1 : 0;
    }
  }
  const double pairs = static_cast<double>(a.size() * (a.size() - 1) / 2);
  return static_cast<double>(score) / pairs;
}

double ranking_fidelity(QuerySession& session, const MlpParams& substitute,
                        std::span<const Image> queries, std::size_t candidates,
                        std::uint64_t seed) {
  if (queries.empty()) throw std::invalid_argument("ranking_fidelity: no queries");
  const std::size_t gallery = session.gallery_size();
  if (candidates < 2 || candidates > gallery) {
    throw std::invalid_argument("ranking_fidelity: need 2 <= candidates <= gallery size");
  }
  SeededRng rng(seed);
  std::vector<ItemId> ids(gallery);
  std::vector<std::size_t> position(gallery);
  double total = 0.0;
  for (const Image& query : queries) {
    const RankedList full = session.query(query, gallery, Charge::setup);
    for (std::size_t r = 0; r < full.size(); ++r) position[full.ids[r]] = r;
    const Eigen::VectorXd fq = embed(substitute, quantize_to_grid(query));
    std::iota(ids.begin(), ids.end(), ItemId{0});
    std::vector<double> target_pos(candidates);
    std::vector<double> sub_dist(candidates);
    for (std::size_t c = 0; c < candidates; ++c) {
      std::swap(ids[c], ids[c + rng.below(gallery - c)]);
      target_pos[c] = static_cast<double>(position[ids[c]]);
      sub_dist[c] = squared_distance(fq, embed(substitute, session.fetch(ids[c])));
    }
    total += kendall_tau(target_pos, sub_dist);
  }
  return total / static_cast<double>(queries.size());
}

}  // namespace qair
