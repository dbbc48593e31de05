#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qair/attack.hpp"
#include "qair/dataset.hpp"
#include "qair/embedding.hpp"
#include "qair/retrieval.hpp"
#include "qair/stealing.hpp"

namespace qair {

// ---------------------------------------------------------------- metrics

struct EvalQuery {
  Image image;
  std::uint32_t label = 0;
  std::optional<ItemId> gallery_id;  // set when the query is itself a gallery member
};

/// Whether any of the top-k items (own gallery id excluded) shares `label`.
bool hit_at_k(const Gallery& gallery, const Image& image, std::uint32_t label, std::size_t k,
              std::optional<ItemId> self_id = std::nullopt);

/// Fraction of queries with at least one same-class item in the top k. When
/// `adversarial` is given, query i is replaced by adversarial[i].
double recall_at_k(const Gallery& gallery, std::span<const EvalQuery> queries, std::size_t k,
                   const std::vector<Image>* adversarial = nullptr);

double asr(std::span<const AttackResult> results);
double avg_queries(std::span<const AttackResult> results);
/// (before - after) / before; throws UndefinedMetric when before == 0.
double drr_at_1(double recall_before, double recall_after);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

// -------------------------------------------------------------- landscape

/// Axis i runs over i_min, i_min+step, ..., <= i_max (one point when step == 0);
/// likewise for j.
struct LandscapeGrid {
  double i_min = -1.0, i_max = 1.0;
  double j_min = -1.0, j_max = 1.0;
  double step = 0.25;
  double scale = 0.05;  // pixel units per coordinate unit
};

enum class GradientSource { substitute, target_whitebox };

struct Landscape {
  std::vector<double> i_coords;
  std::vector<double> j_coords;
  Eigen::MatrixXd relevance;  // rows i, cols j
  Eigen::MatrixXd count;
  GradientSource source = GradientSource::substitute;
};

/// loss(i, j) = L(x + scale*(i*gamma + j*eta)) for a Gaussian direction gamma
/// (rescaled to the l2 norm of eta) and eta = sign of the gradient of the
/// feature distance to the omega-weighted original top-k under
/// `gradient_model`. Every grid point is clamped to [0,1], quantized and
/// queried once.
Landscape landscape_scan(QuerySession& session, const Image& x, std::size_t k,
                         const LandscapeGrid& grid, const MlpParams& gradient_model,
                         GradientSource source, std::uint64_t seed);

// ------------------------------------------------------------- experiment

struct DatasetConfig {
  std::uint32_t classes = 20;
  std::uint32_t per_class = 50;
  Shape shape{3, 16, 16};
  double noise = 0.1;
  std::uint32_t gallery_per_class = 40;
};

struct ModelConfig {
  std::vector<std::size_t> hidden;
  std::size_t embed_dim = 16;
  TrainConfig train;

  std::vector<std::size_t> widths(const Shape& shape) const;
};

struct SweepEntry {
  std::string name;
  LossKind loss = LossKind::relevance;
  BasisKind basis = BasisKind::substitute_prior;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig target;
  ModelConfig substitute;
  StealConfig steal;
  AttackConfig attack;
  std::vector<SweepEntry> sweep;
  std::size_t eval_queries = 50;
  std::vector<std::size_t> recall_ks{1, 2, 4, 8};
  std::size_t fidelity_queries = 100;
  std::size_t fidelity_candidates = 30;  // gallery items ranked per fidelity query
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  unsigned threads = 1;

  static ExperimentConfig defaults();
  void validate() const;
  bool needs_substitute() const;
};

/// One attack as persisted in results.jsonl.
struct AttackRecord {
  std::uint64_t run_seed = 0;
  std::string config;
  std::string loss;
  std::string basis;
  std::size_t image_id = 0;  // index into the held-out split
  std::uint64_t attack_seed = 0;
  bool success = false;
  std::uint64_t queries_used = 0;
  double final_linf = 0.0;
  std::vector<LossTracePoint> loss_trace;
  std::uint32_t basis_fallback_count = 0;
  std::map<std::size_t, bool> hits_before;  // Recall@k hit of the clean query
  std::map<std::size_t, bool> hits_after;   // ... and of its adversarial
};

/// One row of summary.csv.
struct SummaryRow {
  std::uint64_t run_seed = 0;
  std::string config;
  std::string loss;
  std::string basis;
  std::size_t attacks = 0;
  double asr = 0.0;
  double aq = 0.0;
  double drr1 = 0.0;  // NaN when Recall@1 before the attack is zero
  std::map<std::size_t, double> recall_before;
  std::map<std::size_t, double> recall_after;
};

/// Aggregates records of one (run, config) cell. All metrics derive from the
/// records alone.
SummaryRow summarize(std::span<const AttackRecord> records);

struct StealReport {
  CrawlLog crawl;
  std::size_t stolen_images = 0;
  std::size_t triplets = 0;
  std::uint64_t setup_queries = 0;
  double fidelity_untrained = 0.0;
  double fidelity_trained = 0.0;
};

struct MetricsReport {
  std::uint64_t run_seed = 0;
  std::vector<SummaryRow> rows;
  std::vector<AttackRecord> records;  // grouped by row, ordered by query index
  std::optional<StealReport> steal;
  std::vector<double> target_train_loss;
};

/// Everything up to the attacks: data, target, gallery and (optionally) the
/// substitute. Deterministic per cfg.seed.
struct ExperimentSetup {
  Dataset gallery_data;
  Dataset held_out;
  MlpParams target;
  std::vector<double> target_train_loss;
  std::optional<Gallery> gallery;
  std::optional<MlpParams> substitute;
  std::optional<StealReport> steal;
  std::vector<std::size_t> eval_indices;  // into held_out
};

// Pipeline stages, each seeded from its own stream of cfg.seed.
Dataset generate_dataset(const ExperimentConfig& cfg);
TrainedModel train_target(const ExperimentConfig& cfg, const Dataset& gallery_data);

ExperimentSetup prepare_experiment(const ExperimentConfig& cfg);

/// Builds a setup from persisted artifacts: `all` is split per class with
/// cfg.dataset.gallery_per_class and the gallery is indexed under `target`.
ExperimentSetup setup_from_artifacts(const ExperimentConfig& cfg, const Dataset& all,
                                     MlpParams target, std::optional<MlpParams> substitute);

/// Steals a substitute through `oracle` (crawl from a random seed image,
/// triplet extraction, training) and measures ranking fidelity on `probe_queries`.
std::pair<MlpParams, StealReport> steal_substitute(const RetrievalOracle& oracle,
                                                   const ExperimentConfig& cfg,
                                                   std::span<const Image> probe_queries);

/// Runs every sweep entry's attack over the evaluation queries of `setup`.
MetricsReport run_attacks(const ExperimentConfig& cfg, const ExperimentSetup& setup);

MetricsReport run_experiment(const ExperimentConfig& cfg);

// ------------------------------------------------------------ persistence

std::string summary_csv(std::span<const SummaryRow> rows);
std::vector<SummaryRow> parse_summary_csv(const std::string& text);
std::string record_to_json_line(const AttackRecord& record);
AttackRecord record_from_json_line(const std::string& line);
std::string landscape_csv(const Landscape& landscape);

/// Recomputes summary rows from records, one row per (run_seed, config) in
/// order of first appearance.
std::vector<SummaryRow> summarize_all(std::span<const AttackRecord> records);

/// Writes summary.csv and results.jsonl (and report.json) into `dir`,
/// creating it if needed. Throws IoError when the directory is unwritable.
void write_results(std::span<const MetricsReport> reports, const std::string& dir);

std::vector<AttackRecord> read_results_jsonl(const std::string& path);

// ExperimentConfig <-> JSON text.
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);
std::string config_schema();

}  // namespace qair
