// qair: command-line driver for the retrieval attack lab.
//
// Exit codes: 0 ok, 2 configuration error, 3 runtime error.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qair/dataset.hpp"
#include "qair/embedding.hpp"
#include "qair/errors.hpp"
#include "qair/harness.hpp"

namespace fs = std::filesystem;
using qair::ExperimentConfig;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw qair::IoError("cannot open " + path + " for reading");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig load_config(const GlobalFlags& flags) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  try {
    if (!flags.config_path.empty()) {
      cfg = qair::config_from_json(read_text(flags.config_path));
    }
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out) cfg.output_dir = *flags.out;
    if (flags.threads) cfg.threads = *flags.threads;
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

fs::path out_path(const ExperimentConfig& cfg, const std::string& name) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw qair::IoError("cannot create output directory " + cfg.output_dir + ": " + ec.message());
  return fs::path(cfg.output_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw qair::IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw qair::IoError("write failed: " + path.string());
}

std::vector<qair::Image> probe_images(const ExperimentConfig& cfg, const qair::Dataset& held_out) {
  std::vector<qair::Image> probes;
  const std::size_t count = std::min(cfg.fidelity_queries, held_out.size());
  for (std::size_t i = 0; i < count; ++i) probes.push_back(held_out.images[i]);
  return probes;
}

std::string steal_json(const qair::StealReport& s) {
  const nlohmann::ordered_json j = {{"queries_per_level", s.crawl.queries_per_level},
                                    {"dedup_hits", s.crawl.dedup_hits},
                                    {"crawl_queries", s.crawl.total_queries},
                                    {"stolen_images", s.stolen_images},
                                    {"triplets", s.triplets},
                                    {"setup_queries", s.setup_queries},
                                    {"fidelity_untrained", s.fidelity_untrained},
                                    {"fidelity_trained", s.fidelity_trained}};
  return j.dump(2) + "\n";
}

void print_rows(const std::vector<qair::SummaryRow>& rows) {
  for (const auto& r : rows) {
    std::printf("seed=%llu %-10s asr=%.3f aq=%.1f drr1=%.3f\n",
                static_cast<unsigned long long>(r.run_seed), r.config.c_str(), r.asr, r.aq, r.drr1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-based black-box attacks on image retrieval"};
  app.require_subcommand(0, 1);

  GlobalFlags flags;
  bool print_schema = false;
  bool print_config = false;
  app.add_option("--config", flags.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "master seed (overrides the config)");
  app.add_option("--out", flags.out, "output directory (overrides the config)");
  app.add_option("--threads", flags.threads, "worker threads for attack batches")->check(CLI::PositiveNumber);
  app.add_flag("--print-schema", print_schema, "print the config JSON schema and exit");
  app.add_flag("--print-config", print_config, "print the effective config and exit");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (dataset.qird)");

  std::string data_path, target_path, substitute_path, results_path;
  auto* train = app.add_subcommand("train-target", "train the target model on the gallery split (target.qemb)");
  train->add_option("--data", data_path, "QIRD dataset")->required()->check(CLI::ExistingFile);

  auto* steal = app.add_subcommand("steal", "steal a substitute through the target's ranked lists");
  steal->add_option("--data", data_path, "QIRD dataset")->required()->check(CLI::ExistingFile);
  steal->add_option("--target", target_path, "QEMB target checkpoint")->required()->check(CLI::ExistingFile);

  auto* attack = app.add_subcommand("attack", "attack held-out queries with every sweep entry");
  attack->add_option("--data", data_path, "QIRD dataset")->required()->check(CLI::ExistingFile);
  attack->add_option("--target", target_path, "QEMB target checkpoint")->required()->check(CLI::ExistingFile);
  attack->add_option("--substitute", substitute_path, "QEMB substitute checkpoint")->check(CLI::ExistingFile);

  qair::LandscapeGrid grid;
  std::size_t image_index = 0;
  std::string source_name = "substitute";
  auto* land = app.add_subcommand("landscape", "scan the loss around one held-out query (landscape.csv)");
  land->add_option("--data", data_path, "QIRD dataset")->required()->check(CLI::ExistingFile);
  land->add_option("--target", target_path, "QEMB target checkpoint")->required()->check(CLI::ExistingFile);
  land->add_option("--substitute", substitute_path, "QEMB substitute checkpoint")->check(CLI::ExistingFile);
  land->add_option("--image", image_index, "held-out image index");
  land->add_option("--gradient", source_name, "direction source: substitute | target (white-box diagnostic)")
      ->check(CLI::IsMember({"substitute", "target"}));
  land->add_option("--i-min", grid.i_min);
  land->add_option("--i-max", grid.i_max);
  land->add_option("--j-min", grid.j_min);
  land->add_option("--j-max", grid.j_max);
  land->add_option("--step", grid.step, "grid step; 0 gives a single point");
  land->add_option("--scale", grid.scale, "pixel units per grid unit");

  std::vector<std::uint64_t> seeds;
  auto* sweep = app.add_subcommand("sweep", "run the full pipeline for one or more master seeds");
  sweep->add_option("--seeds", seeds, "master seeds (default: --seed)")->delimiter(',');

  auto* report = app.add_subcommand("report", "recompute summary.csv from results.jsonl");
  report->add_option("--results", results_path, "results.jsonl")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (print_schema) {
    std::cout << qair::config_schema();
    return 0;
  }

  ExperimentConfig cfg;
  try {
    cfg = load_config(flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (print_config) {
    std::cout << qair::config_to_json(cfg);
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return kExitConfig;
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (gen->parsed()) {
      const qair::Dataset data = qair::generate_dataset(cfg);
      const fs::path path = out_path(cfg, "dataset.qird");
      qair::save_dataset(data, path.string());
      std::cout << "wrote " << path.string() << " (" << data.size() << " images)\n";
    } else if (train->parsed()) {
      const qair::Dataset all = qair::load_dataset(data_path);
      const qair::DatasetSplit split = qair::split_per_class(all, cfg.dataset.gallery_per_class);
      const qair::TrainedModel model = qair::train_target(cfg, split.gallery);
      const fs::path path = out_path(cfg, "target.qemb");
      qair::save_checkpoint(model.params, path.string());
      for (std::size_t e = 0; e < model.epoch_loss.size(); ++e) {
        std::printf("epoch %zu loss %.6f\n", e + 1, model.epoch_loss[e]);
      }
      std::cout << "wrote " << path.string() << "\n";
    } else if (steal->parsed()) {
      const qair::Dataset all = qair::load_dataset(data_path);
      qair::ExperimentConfig local = cfg;
      local.sweep = {{"probe", qair::LossKind::relevance, qair::BasisKind::gaussian}};
      const qair::ExperimentSetup setup =
          qair::setup_from_artifacts(local, all, qair::load_checkpoint(target_path), std::nullopt);
      auto [sub, rep] = qair::steal_substitute(*setup.gallery, cfg, probe_images(cfg, setup.held_out));
      const fs::path path = out_path(cfg, "substitute.qemb");
      qair::save_checkpoint(sub, path.string());
      write_text(out_path(cfg, "crawl_log.json"), steal_json(rep));
      std::printf("crawl queries %llu, stolen images %zu, triplets %zu, kendall %.3f -> %.3f\n",
                  static_cast<unsigned long long>(rep.crawl.total_queries), rep.stolen_images,
                  rep.triplets, rep.fidelity_untrained, rep.fidelity_trained);
      std::cout << "wrote " << path.string() << "\n";
    } else if (attack->parsed()) {
      const qair::Dataset all = qair::load_dataset(data_path);
      std::optional<qair::MlpParams> sub;
      if (!substitute_path.empty()) sub = qair::load_checkpoint(substitute_path);
      const qair::ExperimentSetup setup =
          qair::setup_from_artifacts(cfg, all, qair::load_checkpoint(target_path), std::move(sub));
      const qair::MetricsReport rep = qair::run_attacks(cfg, setup);
      qair::write_results(std::span(&rep, 1), cfg.output_dir);
      print_rows(rep.rows);
    } else if (land->parsed()) {
      const qair::Dataset all = qair::load_dataset(data_path);
      qair::ExperimentConfig local = cfg;
      local.sweep = {{"probe", qair::LossKind::relevance, qair::BasisKind::gaussian}};
      const qair::ExperimentSetup setup =
          qair::setup_from_artifacts(local, all, qair::load_checkpoint(target_path), std::nullopt);
      if (image_index >= setup.held_out.size()) {
        throw std::invalid_argument("--image exceeds the held-out split");
      }
      const auto source = source_name == "target" ? qair::GradientSource::target_whitebox
                                                  : qair::GradientSource::substitute;
      qair::MlpParams model = setup.target;
      if (source == qair::GradientSource::substitute) {
        if (substitute_path.empty()) {
          throw std::invalid_argument("--gradient substitute needs --substitute");
        }
        model = qair::load_checkpoint(substitute_path);
      }
      qair::QuerySession session(*setup.gallery);
      const qair::Landscape l =
          qair::landscape_scan(session, setup.held_out.images[image_index], cfg.attack.k, grid, model,
                               source, qair::SeededRng::derive(cfg.seed, image_index));
      const fs::path path = out_path(cfg, "landscape.csv");
      write_text(path, qair::landscape_csv(l));
      std::cout << "wrote " << path.string() << " (" << l.i_coords.size() << "x" << l.j_coords.size()
                << ")\n";
    } else if (sweep->parsed()) {
      if (seeds.empty()) seeds.push_back(cfg.seed);
      std::vector<qair::MetricsReport> reports;
      for (std::uint64_t s : seeds) {
        qair::ExperimentConfig local = cfg;
        local.seed = s;
        reports.push_back(qair::run_experiment(local));
        print_rows(reports.back().rows);
      }
      qair::write_results(reports, cfg.output_dir);
      std::cout << "wrote " << cfg.output_dir << "/summary.csv and results.jsonl\n";
    } else if (report->parsed()) {
      const auto records = qair::read_results_jsonl(results_path);
      if (records.empty()) throw std::invalid_argument("no attack records in " + results_path);
      const auto rows = qair::summarize_all(records);
      const fs::path path = out_path(cfg, "summary.csv");
      write_text(path, qair::summary_csv(rows));
      print_rows(rows);
      std::cout << "wrote " << path.string() << "\n";
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << stage << ": invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << stage << ": " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
