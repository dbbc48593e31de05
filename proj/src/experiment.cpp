#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "qair/errors.hpp"
#include "qair/harness.hpp"

namespace qair {

namespace {

// Stream ids for SeededRng::derive on the master seed.
enum Stream : std::uint64_t {
  kDataStream = 1,
  kTargetStream = 2,
  kSubstituteStream = 3,
  kCrawlSeedStream = 4,
  kEvalSampleStream = 5,
  kAttackStream = 6,
  kPairStream = 7,
  kFidelityStream = 8,
};

std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    std::uint64_t seed) {
  std::vector<std::size_t> idx(population);
  for (std::size_t i = 0; i < population; ++i) idx[i] = i;
  SeededRng rng(seed);
  count = std::min(count, population);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(population - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<std::size_t> ModelConfig::widths(const Shape& shape) const {
  std::vector<std::size_t> w{shape.size()};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(embed_dim);
  return w;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  // Eight gallery items per class: an attack that empties the top-8 must push
  // the query out of its own class, so success shows up in Recall@1.
  cfg.dataset.gallery_per_class = 8;
  cfg.target.hidden = {32};
  cfg.target.embed_dim = 4;
  cfg.target.train = TrainConfig{0.01, 0.9, 5, 32, MetricLoss::contrastive, 1.0, 0};
  cfg.substitute.hidden = {128};
  cfg.substitute.embed_dim = 8;
  cfg.substitute.train = TrainConfig{0.01, 0.9, 20, 300, MetricLoss::triplet, 0.5, 0};
  cfg.steal.n = 160;
  cfg.steal.n_c = 10;
  cfg.steal.depth = 2;
  cfg.steal.lambda = 0.5;
  cfg.steal.triplet_top_m = 160;
  cfg.steal.triplet_pairs = 300;
  cfg.attack.k = 8;
  // Unit-norm directions over 768 pixels need sigma well above 1/255 to move
  // pixels by more than one grid step; alpha >= 2*eps lets one sign step reach
  // the ball's corners.
  cfg.attack.q = 2;
  cfg.attack.sigma = 0.5;
  cfg.attack.sigma_max = 4.0;
  cfg.attack.alpha = 0.1;
  cfg.sweep = {
      {"C-QAIR", LossKind::count, BasisKind::gaussian},
      {"R-QAIR", LossKind::relevance, BasisKind::gaussian},
      {"C-QAIR-S", LossKind::count, BasisKind::substitute_prior},
      {"R-QAIR-S", LossKind::relevance, BasisKind::substitute_prior},
  };
  return cfg;
}

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  if (d.classes < 2 || d.per_class < 2) {
    throw std::invalid_argument("dataset: need >= 2 classes and >= 2 samples per class");
  }
  if (d.gallery_per_class < 2 || d.gallery_per_class >= d.per_class) {
    throw std::invalid_argument("dataset: gallery_per_class must lie in [2, per_class)");
  }
  if (!(d.noise >= 0.0 && d.noise <= 0.5)) throw std::invalid_argument("dataset: noise in [0,0.5]");
  if (d.shape.size() == 0) throw std::invalid_argument("dataset: empty image shape");
  if (target.embed_dim == 0 || substitute.embed_dim == 0) {
    throw std::invalid_argument("models: embed_dim must be positive");
  }
  target.train.validate();
  substitute.train.validate();
  steal.validate();
  attack.validate();
  if (sweep.empty()) throw std::invalid_argument("sweep: need at least one entry");
  for (const auto& entry : sweep) {
    if (entry.name.empty()) throw std::invalid_argument("sweep: entry without a name");
  }
  if (eval_queries == 0) throw std::invalid_argument("eval_queries must be positive");
  if (recall_ks.empty()) throw std::invalid_argument("recall_ks must not be empty");
  if (!std::is_sorted(recall_ks.begin(), recall_ks.end()) || recall_ks.front() == 0) {
    throw std::invalid_argument("recall_ks must be positive and sorted ascending");
  }
  const std::size_t gallery = static_cast<std::size_t>(d.classes) * d.gallery_per_class;
  if (recall_ks.back() > gallery || attack.k > gallery) {
    throw std::invalid_argument("recall_ks / attack.k exceed the gallery size");
  }
  if (needs_substitute() && steal.n > gallery) {
    throw std::invalid_argument("steal.n exceeds the gallery size");
  }
  if (fidelity_candidates < 2 || fidelity_candidates > gallery) throw std::invalid_argument("fidelity_candidates out of range");
}

bool ExperimentConfig::needs_substitute() const {
  return std::any_of(sweep.begin(), sweep.end(), [](const SweepEntry& e) {
    return e.basis == BasisKind::substitute_prior;
  });
}

std::pair<MlpParams, StealReport> steal_substitute(const RetrievalOracle& oracle,
                                                   const ExperimentConfig& cfg,
                                                   std::span<const Image> probe_queries) {
  StealConfig steal = cfg.steal;
  steal.train = cfg.substitute.train;
  steal.train.seed = SeededRng::derive(cfg.seed, kSubstituteStream);
  steal.pair_seed = SeededRng::derive(cfg.seed, kPairStream);

  QuerySession session(oracle);
  SeededRng seed_rng(SeededRng::derive(cfg.seed, kCrawlSeedStream));
  Eigen::VectorXd px(oracle.image_shape().size());
  for (Eigen::Index i = 0; i < px.size(); ++i) px[i] = seed_rng.uniform();
  const Image seed_image(oracle.image_shape(), std::move(px));

  StealReport report;
  CrawlResult crawl = recursive_crawl(session, seed_image, steal);
  report.crawl = crawl.log;
  report.stolen_images = crawl.images.size();
  const TripletSet triplets = extract_triplets(session, crawl.images, steal);
  report.triplets = triplets.triplets.size();
  report.setup_queries = session.setup_count();

  const auto widths = cfg.substitute.widths(oracle.image_shape());
  TrainedModel trained = train_substitute(triplets, steal, widths);

  if (!probe_queries.empty()) {
    QuerySession probe(oracle);
    StealConfig untrained_cfg = steal;
    untrained_cfg.train.epochs = 0;
    const MlpParams untrained = train_substitute(triplets, untrained_cfg, widths).params;
    const std::uint64_t fid_seed = SeededRng::derive(cfg.seed, kFidelityStream);
    report.fidelity_untrained =
        ranking_fidelity(probe, untrained, probe_queries, cfg.fidelity_candidates, fid_seed);
    report.fidelity_trained =
        ranking_fidelity(probe, trained.params, probe_queries, cfg.fidelity_candidates, fid_seed);
  }
  return {std::move(trained.params), report};
}

Dataset generate_dataset(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  return gen_synthetic_dataset(d.classes, d.per_class, d.shape, d.noise,
                               SeededRng::derive(cfg.seed, kDataStream));
}

TrainedModel train_target(const ExperimentConfig& cfg, const Dataset& gallery_data) {
  TrainConfig train = cfg.target.train;
  train.seed = SeededRng::derive(cfg.seed, kTargetStream);
  return train_embedding_model(gallery_data, train, cfg.target.widths(gallery_data.shape));
}

ExperimentSetup prepare_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentSetup setup;
  DatasetSplit split = split_per_class(generate_dataset(cfg), cfg.dataset.gallery_per_class);
  setup.gallery_data = std::move(split.gallery);
  setup.held_out = std::move(split.held_out);

  TrainedModel target = train_target(cfg, setup.gallery_data);
  setup.target = std::move(target.params);
  setup.target_train_loss = std::move(target.epoch_loss);
  setup.gallery.emplace(setup.gallery_data, setup.target);

  setup.eval_indices = sample_without_replacement(
      setup.held_out.size(), cfg.eval_queries, SeededRng::derive(cfg.seed, kEvalSampleStream));

  if (cfg.needs_substitute()) {
    std::vector<Image> probes;
    const std::size_t count = std::min(cfg.fidelity_queries, setup.held_out.size());
    for (std::size_t i = 0; i < count; ++i) probes.push_back(setup.held_out.images[i]);
    auto [sub, report] = steal_substitute(*setup.gallery, cfg, probes);
    setup.substitute = std::move(sub);
    setup.steal = report;
  }
  return setup;
}

ExperimentSetup setup_from_artifacts(const ExperimentConfig& cfg, const Dataset& all,
                                     MlpParams target, std::optional<MlpParams> substitute) {
  if (cfg.needs_substitute() && !substitute) {
    throw std::invalid_argument("the sweep uses the substitute prior but no substitute was given");
  }
  ExperimentSetup setup;
  DatasetSplit split = split_per_class(all, cfg.dataset.gallery_per_class);
  setup.gallery_data = std::move(split.gallery);
  setup.held_out = std::move(split.held_out);
  if (setup.held_out.size() == 0) throw std::invalid_argument("dataset has no held-out images");
  setup.target = std::move(target);
  setup.gallery.emplace(setup.gallery_data, setup.target);
  setup.substitute = std::move(substitute);
  setup.eval_indices = sample_without_replacement(
      setup.held_out.size(), cfg.eval_queries, SeededRng::derive(cfg.seed, kEvalSampleStream));
  return setup;
}

MetricsReport run_attacks(const ExperimentConfig& cfg, const ExperimentSetup& setup) {
  const Gallery& gallery = *setup.gallery;
  MetricsReport report;
  report.run_seed = cfg.seed;
  report.steal = setup.steal;
  report.target_train_loss = setup.target_train_loss;

  const std::size_t n = setup.eval_indices.size();
  // Clean-query hits are shared by every sweep entry.
  std::vector<std::map<std::size_t, bool>> hits_before(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = setup.eval_indices[i];
    for (std::size_t k : cfg.recall_ks) {
      hits_before[i][k] = hit_at_k(gallery, setup.held_out.images[h], setup.held_out.labels[h], k);
    }
  }

  for (std::size_t e = 0; e < cfg.sweep.size(); ++e) {
    const SweepEntry& entry = cfg.sweep[e];
    AttackConfig attack = cfg.attack;
    attack.loss = entry.loss;
    attack.basis = entry.basis;
    const MlpParams* sub = entry.basis == BasisKind::substitute_prior ? &*setup.substitute : nullptr;

    std::vector<AttackRecord> records(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      const std::size_t h = setup.eval_indices[i];
      AttackConfig local = attack;
      // Seeded by query index only, so every sweep entry sees the same streams.
      local.seed = SeededRng::derive(SeededRng::derive(cfg.seed, kAttackStream), h);
      QuerySession session(gallery);
      const AttackResult r = qair_attack(session, setup.held_out.images[h], local, sub);

      AttackRecord rec;
      rec.run_seed = cfg.seed;
      rec.config = entry.name;
      rec.loss = to_string(entry.loss);
      rec.basis = to_string(entry.basis);
      rec.image_id = h;
      rec.attack_seed = local.seed;
      rec.success = r.success;
      rec.queries_used = r.queries_used;
      rec.final_linf = r.final_linf;
      rec.loss_trace = r.loss_trace;
      rec.basis_fallback_count = r.basis_fallback_count;
      rec.hits_before = hits_before[i];
      for (std::size_t k : cfg.recall_ks) {
        rec.hits_after[k] = hit_at_k(gallery, r.final_image, setup.held_out.labels[h], k);
      }
      records[i] = std::move(rec);
    });
    report.rows.push_back(summarize(records));
    report.records.insert(report.records.end(), records.begin(), records.end());
  }
  return report;
}

MetricsReport run_experiment(const ExperimentConfig& cfg) {
  const ExperimentSetup setup = prepare_experiment(cfg);
  return run_attacks(cfg, setup);
}

SummaryRow summarize(std::span<const AttackRecord> records) {
  if (records.empty()) throw std::invalid_argument("summarize: no attack records");
  SummaryRow row;
  row.run_seed = records.front().run_seed;
  row.config = records.front().config;
  row.loss = records.front().loss;
  row.basis = records.front().basis;
  row.attacks = records.size();
  const double count = static_cast<double>(records.size());
  std::size_t wins = 0;
  double queries = 0.0;
  for (const auto& rec : records) {
    wins += rec.success ? 1 : 0;
    queries += static_cast<double>(rec.queries_used);
    for (const auto& [k, hit] : rec.hits_before) row.recall_before[k] += hit ? 1.0 : 0.0;
    for (const auto& [k, hit] : rec.hits_after) row.recall_after[k] += hit ? 1.0 : 0.0;
  }
  row.asr = static_cast<double>(wins) / count;
  row.aq = queries / count;
  for (auto& [k, v] : row.recall_before) v /= count;
  for (auto& [k, v] : row.recall_after) v /= count;
  row.drr1 = std::numeric_limits<double>::quiet_NaN();
  if (row.recall_before.contains(1) && row.recall_after.contains(1) && row.recall_before[1] > 0.0) {
    row.drr1 = drr_at_1(row.recall_before[1], row.recall_after[1]);
  }
  return row;
}

std::vector<SummaryRow> summarize_all(std::span<const AttackRecord> records) {
  std::vector<std::pair<std::uint64_t, std::string>> keys;
  std::map<std::pair<std::uint64_t, std::string>, std::vector<AttackRecord>> groups;
  for (const auto& rec : records) {
    auto key = std::make_pair(rec.run_seed, rec.config);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(rec);
  }
  std::vector<SummaryRow> rows;
  for (const auto& key : keys) rows.push_back(summarize(groups.at(key)));
  return rows;
}

}  // namespace qair
