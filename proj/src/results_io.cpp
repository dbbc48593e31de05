#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "qair/errors.hpp"
#include "qair/harness.hpp"

namespace qair {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

ordered_json hits_json(const std::map<std::size_t, bool>& hits) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, hit] : hits) j[std::to_string(k)] = hit ? 1 : 0;
  return j;
}

std::map<std::size_t, bool> hits_from_json(const json& j) {
  std::map<std::size_t, bool> out;
  for (const auto& [k, v] : j.items()) out[std::stoul(k)] = v.get<int>() != 0;
  return out;
}

ordered_json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"loss", t.loss == MetricLoss::contrastive ? "contrastive" : "triplet"},
          {"margin", t.margin}};
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void train_from_json(const json& j, TrainConfig& t) {
  read_opt(j, "learning_rate", t.learning_rate);
  read_opt(j, "momentum", t.momentum);
  read_opt(j, "epochs", t.epochs);
  read_opt(j, "batch_size", t.batch_size);
  read_opt(j, "margin", t.margin);
  if (j.contains("loss")) {
    const auto s = j.at("loss").get<std::string>();
    if (s == "contrastive") t.loss = MetricLoss::contrastive;
    else if (s == "triplet") t.loss = MetricLoss::triplet;
    else throw std::invalid_argument("unknown training loss '" + s + "'");
  }
}

ordered_json model_json(const ModelConfig& m) {
  return {{"hidden", m.hidden}, {"embed_dim", m.embed_dim}, {"train", train_json(m.train)}};
}

void model_from_json(const json& j, ModelConfig& m) {
  read_opt(j, "hidden", m.hidden);
  read_opt(j, "embed_dim", m.embed_dim);
  if (j.contains("train")) train_from_json(j.at("train"), m.train);
}

}  // namespace

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::ostringstream out;
  out << "seed,config,loss,basis,attacks,asr,aq,drr1";
  std::vector<std::size_t> ks;
  if (!rows.empty()) {
    for (const auto& [k, v] : rows.front().recall_before) ks.push_back(k);
  }
  for (std::size_t k : ks) out << ",recall_before@" << k;
  for (std::size_t k : ks) out << ",recall_after@" << k;
  out << "\n";
  for (const auto& r : rows) {
    out << r.run_seed << ',' << r.config << ',' << r.loss << ',' << r.basis << ',' << r.attacks
        << ',' << format_double(r.asr) << ',' << format_double(r.aq) << ','
        << format_double(r.drr1);
    for (std::size_t k : ks) out << ',' << format_double(r.recall_before.at(k));
    for (std::size_t k : ks) out << ',' << format_double(r.recall_after.at(k));
    out << "\n";
  }
  return out.str();
}

std::vector<SummaryRow> parse_summary_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("summary.csv: missing header");
  const auto header = split(line, ',');
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw std::invalid_argument("summary.csv: row has " + std::to_string(cells.size()) +
                                  " cells, header has " + std::to_string(header.size()));
    }
    SummaryRow r;
    r.run_seed = std::stoull(cells[0]);
    r.config = cells[1];
    r.loss = cells[2];
    r.basis = cells[3];
    r.attacks = std::stoul(cells[4]);
    r.asr = parse_double(cells[5]);
    r.aq = parse_double(cells[6]);
    r.drr1 = parse_double(cells[7]);
    for (std::size_t c = 8; c < header.size(); ++c) {
      const auto at = header[c].find('@');
      const std::size_t k = std::stoul(header[c].substr(at + 1));
      auto& target = header[c].starts_with("recall_before") ? r.recall_before : r.recall_after;
      target[k] = parse_double(cells[c]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string record_to_json_line(const AttackRecord& rec) {
  ordered_json trace = ordered_json::array();
  for (const auto& p : rec.loss_trace) trace.push_back({p.iteration, p.loss, p.sigma});
  const ordered_json j = {{"seed", rec.run_seed},
                          {"config", rec.config},
                          {"loss", rec.loss},
                          {"basis", rec.basis},
                          {"image_id", rec.image_id},
                          {"attack_seed", rec.attack_seed},
                          {"success", rec.success},
                          {"queries_used", rec.queries_used},
                          {"final_linf", rec.final_linf},
                          {"loss_trace", trace},
                          {"basis_fallback_count", rec.basis_fallback_count},
                          {"hits_before", hits_json(rec.hits_before)},
                          {"hits_after", hits_json(rec.hits_after)}};
  return j.dump();
}

namespace {

AttackRecord parse_record(const std::string& line) {
  const json j = json::parse(line);
  AttackRecord rec;
  rec.run_seed = j.at("seed").get<std::uint64_t>();
  rec.config = j.at("config").get<std::string>();
  rec.loss = j.at("loss").get<std::string>();
  rec.basis = j.at("basis").get<std::string>();
  rec.image_id = j.at("image_id").get<std::size_t>();
  rec.attack_seed = j.at("attack_seed").get<std::uint64_t>();
  rec.success = j.at("success").get<bool>();
  rec.queries_used = j.at("queries_used").get<std::uint64_t>();
  rec.final_linf = j.at("final_linf").get<double>();
  for (const auto& p : j.at("loss_trace")) {
    rec.loss_trace.push_back({p.at(0).get<std::uint64_t>(), p.at(1).get<double>(),
                              p.at(2).get<double>()});
  }
  rec.basis_fallback_count = j.at("basis_fallback_count").get<std::uint32_t>();
  rec.hits_before = hits_from_json(j.at("hits_before"));
  rec.hits_after = hits_from_json(j.at("hits_after"));
  return rec;
}

}  // namespace

AttackRecord record_from_json_line(const std::string& line) {
  try {
    return parse_record(line);
  } catch (const json::parse_error& ex) {
    throw FormatError(std::string("results record: ") + ex.what(), ex.byte);
  } catch (const json::exception& ex) {
    throw FormatError(std::string("results record: ") + ex.what(), 0);
  }
}

std::string landscape_csv(const Landscape& l) {
  std::ostringstream out;
  out << "# gradient_source="
      << (l.source == GradientSource::substitute ? "substitute" : "target_whitebox (diagnostic)")
      << "\n";
  out << "i,j,relevance_loss,count_loss\n";
  for (std::size_t a = 0; a < l.i_coords.size(); ++a) {
    for (std::size_t b = 0; b < l.j_coords.size(); ++b) {
      const auto r = static_cast<Eigen::Index>(a);
      const auto c = static_cast<Eigen::Index>(b);
      out << format_double(l.i_coords[a]) << ',' << format_double(l.j_coords[b]) << ','
          << format_double(l.relevance(r, c)) << ',' << format_double(l.count(r, c)) << "\n";
    }
  }
  return out.str();
}

void write_results(std::span<const MetricsReport> reports, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());

  std::vector<SummaryRow> rows;
  std::ostringstream jsonl;
  ordered_json meta = ordered_json::array();
  for (const auto& report : reports) {
    if (report.records.empty()) throw std::invalid_argument("write_results: report without attacks");
    rows.insert(rows.end(), report.rows.begin(), report.rows.end());
    for (const auto& rec : report.records) jsonl << record_to_json_line(rec) << "\n";
    ordered_json m = {{"seed", report.run_seed}, {"target_train_loss", report.target_train_loss}};
    if (report.steal) {
      const auto& s = *report.steal;
      m["steal"] = {{"queries_per_level", s.crawl.queries_per_level},
                    {"dedup_hits", s.crawl.dedup_hits},
                    {"crawl_queries", s.crawl.total_queries},
                    {"stolen_images", s.stolen_images},
                    {"triplets", s.triplets},
                    {"setup_queries", s.setup_queries},
                    {"fidelity_untrained", s.fidelity_untrained},
                    {"fidelity_trained", s.fidelity_trained}};
    }
    meta.push_back(m);
  }

  const auto put = [&](const std::string& name, const std::string& text) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path);
  };
  put("summary.csv", summary_csv(rows));
  put("results.jsonl", jsonl.str());
  put("report.json", meta.dump(2) + "\n");
}

std::vector<AttackRecord> read_results_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::vector<AttackRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(record_from_json_line(line));
  }
  return out;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  const auto& a = cfg.attack;
  ordered_json sweep = ordered_json::array();
  for (const auto& e : cfg.sweep) {
    sweep.push_back({{"name", e.name}, {"loss", to_string(e.loss)}, {"basis", to_string(e.basis)}});
  }
  const ordered_json j = {
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir},
      {"threads", cfg.threads},
      {"dataset",
       {{"classes", d.classes},
        {"per_class", d.per_class},
        {"channels", d.shape.channels},
        {"height", d.shape.height},
        {"width", d.shape.width},
        {"noise", d.noise},
        {"gallery_per_class", d.gallery_per_class}}},
      {"target", model_json(cfg.target)},
      {"substitute", model_json(cfg.substitute)},
      {"steal",
       {{"n", cfg.steal.n},
        {"n_c", cfg.steal.n_c},
        {"depth", cfg.steal.depth},
        {"lambda", cfg.steal.lambda},
        {"triplet_top_m", cfg.steal.triplet_top_m},
        {"triplet_pairs", cfg.steal.triplet_pairs}}},
      {"attack",
       {{"epsilon", a.epsilon},
        {"max_queries", a.max_queries},
        {"k", a.k},
        {"q", a.q},
        {"sigma", a.sigma},
        {"sigma_max", a.sigma_max},
        {"alpha", a.alpha},
        {"prior", {{"iterations", a.prior.iterations}, {"beta", a.prior.beta}, {"alpha_w", a.prior.alpha_w}}}}},
      {"sweep", sweep},
      {"eval_queries", cfg.eval_queries},
      {"recall_ks", cfg.recall_ks},
      {"fidelity_queries", cfg.fidelity_queries},
      {"fidelity_candidates", cfg.fidelity_candidates}};
  return j.dump(2) + "\n";
}

namespace {

ExperimentConfig parse_config(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig cfg = ExperimentConfig::defaults();
  read_opt(j, "seed", cfg.seed);
  read_opt(j, "output_dir", cfg.output_dir);
  read_opt(j, "threads", cfg.threads);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    read_opt(d, "classes", cfg.dataset.classes);
    read_opt(d, "per_class", cfg.dataset.per_class);
    read_opt(d, "channels", cfg.dataset.shape.channels);
    read_opt(d, "height", cfg.dataset.shape.height);
    read_opt(d, "width", cfg.dataset.shape.width);
    read_opt(d, "noise", cfg.dataset.noise);
    read_opt(d, "gallery_per_class", cfg.dataset.gallery_per_class);
  }
  if (j.contains("target")) model_from_json(j.at("target"), cfg.target);
  if (j.contains("substitute")) model_from_json(j.at("substitute"), cfg.substitute);
  if (j.contains("steal")) {
    const auto& s = j.at("steal");
    read_opt(s, "n", cfg.steal.n);
    read_opt(s, "n_c", cfg.steal.n_c);
    read_opt(s, "depth", cfg.steal.depth);
    read_opt(s, "lambda", cfg.steal.lambda);
    read_opt(s, "triplet_top_m", cfg.steal.triplet_top_m);
    read_opt(s, "triplet_pairs", cfg.steal.triplet_pairs);
  }
  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    read_opt(a, "epsilon", cfg.attack.epsilon);
    read_opt(a, "max_queries", cfg.attack.max_queries);
    read_opt(a, "k", cfg.attack.k);
    read_opt(a, "q", cfg.attack.q);
    read_opt(a, "sigma", cfg.attack.sigma);
    read_opt(a, "sigma_max", cfg.attack.sigma_max);
    read_opt(a, "alpha", cfg.attack.alpha);
    if (a.contains("prior")) {
      const auto& p = a.at("prior");
      read_opt(p, "iterations", cfg.attack.prior.iterations);
      read_opt(p, "beta", cfg.attack.prior.beta);
      read_opt(p, "alpha_w", cfg.attack.prior.alpha_w);
    }
  }
  if (j.contains("sweep")) {
    cfg.sweep.clear();
    for (const auto& e : j.at("sweep")) {
      cfg.sweep.push_back({e.at("name").get<std::string>(),
                           parse_loss_kind(e.at("loss").get<std::string>()),
                           parse_basis_kind(e.at("basis").get<std::string>())});
    }
  }
  read_opt(j, "eval_queries", cfg.eval_queries);
  read_opt(j, "recall_ks", cfg.recall_ks);
  read_opt(j, "fidelity_queries", cfg.fidelity_queries);
  read_opt(j, "fidelity_candidates", cfg.fidelity_candidates);
  cfg.attack.prior.epsilon = cfg.attack.epsilon;
  cfg.validate();
  return cfg;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  try {
    return parse_config(text);
  } catch (const json::exception& ex) {
    throw std::invalid_argument(std::string("config: ") + ex.what());
  }
}

std::string config_schema() {
  const auto integer = [](const char* doc) { return ordered_json{{"type", "integer"}, {"description", doc}}; };
  const auto number = [](const char* doc) { return ordered_json{{"type", "number"}, {"description", doc}}; };
  const ordered_json train = {
      {"type", "object"},
      {"properties",
       {{"learning_rate", number("SGD step size (> 0)")},
        {"momentum", number("classical momentum in [0,1)")},
        {"epochs", integer("passes over the training data")},
        {"batch_size", integer("samples per SGD step")},
        {"loss", {{"enum", {"contrastive", "triplet"}}}},
        {"margin", number("loss margin on squared distances (>= 0)")}}}};
  const ordered_json model = {
      {"type", "object"},
      {"properties",
       {{"hidden", {{"type", "array"}, {"items", {{"type", "integer"}}}, {"description", "hidden layer widths"}}},
        {"embed_dim", integer("embedding width")},
        {"train", train}}}};
  const ordered_json schema = {
      {"$schema", "https://json-schema.org/draft/2020-12/schema"},
      {"title", "qair experiment configuration"},
      {"description", "Every field is optional; omitted fields keep their defaults."},
      {"type", "object"},
      {"properties",
       {{"seed", integer("master seed; every random stream derives from it")},
        {"output_dir", {{"type", "string"}}},
        {"threads", integer("worker threads for the attack batch")},
        {"dataset",
         {{"type", "object"},
          {"properties",
           {{"classes", integer(">= 2")},
            {"per_class", integer("samples per class")},
            {"channels", integer("")},
            {"height", integer("")},
            {"width", integer("")},
            {"noise", number("uniform per-pixel noise half-width in [0, 0.5]")},
            {"gallery_per_class", integer("samples per class placed in the gallery; the rest are held out")}}}}},
        {"target", model},
        {"substitute", model},
        {"steal",
         {{"type", "object"},
          {"properties",
           {{"n", integer("list length per crawl query")},
            {"n_c", integer("images kept per list")},
            {"depth", integer("re-query rounds after the seed query")},
            {"lambda", number("triplet hinge margin")},
            {"triplet_top_m", integer("ranks per anchor used for triplets")},
            {"triplet_pairs", integer("sampled pairs per anchor, 0 for all pairs")}}}}},
        {"attack",
         {{"type", "object"},
          {"properties",
           {{"epsilon", number("l-inf budget")},
            {"max_queries", integer("query budget T")},
            {"k", integer("top-k list length considered by the attack")},
            {"q", integer("RGF samples per estimate")},
            {"sigma", number("initial probe step")},
            {"sigma_max", number("cap for sigma doubling")},
            {"alpha", number("sign-step size")},
            {"prior",
             {{"type", "object"},
              {"properties",
               {{"iterations", integer("momentum iterations")},
                {"beta", number("momentum decay in [0,1)")},
                {"alpha_w", number("white-box sign step")}}}}}}}}},
        {"sweep",
         {{"type", "array"},
          {"items",
           {{"type", "object"},
            {"required", {"name", "loss", "basis"}},
            {"properties",
             {{"name", {{"type", "string"}}},
              {"loss", {{"enum", {"relevance", "count"}}}},
              {"basis", {{"enum", {"gaussian", "substitute_prior"}}}}}}}}}},
        {"eval_queries", integer("held-out queries attacked per sweep entry")},
        {"recall_ks", {{"type", "array"}, {"items", {{"type", "integer"}}}, {"description", "ascending"}}},
        {"fidelity_queries", integer("held-out queries for substitute ranking fidelity")},
        {"fidelity_candidates", integer("gallery items ranked per fidelity query")}}}};
  return schema.dump(2) + "\n";
}

}  // namespace qair
