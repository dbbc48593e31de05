#include "qair/attack.hpp"

#include <algorithm>
#include <stdexcept>

namespace qair {

std::string to_string(LossKind kind) {
  return kind == LossKind::relevance ? "relevance" : "count";
}

std::string to_string(BasisKind kind) {
  return kind == BasisKind::gaussian ? "gaussian" : "substitute_prior";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "relevance") return LossKind::relevance;
  if (s == "count") return LossKind::count;
  throw std::invalid_argument("unknown loss kind '" + s + "' (expected relevance|count)");
}

BasisKind parse_basis_kind(const std::string& s) {
  if (s == "gaussian") return BasisKind::gaussian;
  if (s == "substitute_prior") return BasisKind::substitute_prior;
  throw std::invalid_argument("unknown basis kind '" + s +
                              "' (expected gaussian|substitute_prior)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
  if (max_queries < 2) throw std::invalid_argument("AttackConfig: max_queries must be >= 2");
  if (q < 1) throw std::invalid_argument("AttackConfig: q must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("AttackConfig: sigma must be > 0");
  if (!(sigma_max >= sigma)) throw std::invalid_argument("AttackConfig: sigma_max must be >= sigma");
  if (!(alpha > 0.0)) throw std::invalid_argument("AttackConfig: alpha must be > 0");
  if (k < 1) throw std::invalid_argument("AttackConfig: k must be positive");
  if ((loss == LossKind::relevance || basis == BasisKind::substitute_prior) && k < 2) {
    throw std::invalid_argument("AttackConfig: the relevance loss and the substitute prior need k >= 2");
  }
  PriorConfig p = prior;
  p.epsilon = epsilon;
  p.validate();
}

AttackObjective::AttackObjective(RankedList original, LossKind kind)
    : original_(std::move(original)),
      kind_(kind),
      weights_(kind == LossKind::relevance ? relevance_weights(original_.size())
                                           : uniform_weights(original_.size())) {}

double AttackObjective::operator()(const RankedList& adversarial) const {
  return kind_ == LossKind::relevance ? relevance_loss(original_, adversarial, weights_)
                                      : count_loss(original_, adversarial);
}

RgfEstimate rgf_estimate(QuerySession& session, const AttackObjective& objective,
                         const Image& x_hat, const Image& x_original, double epsilon,
                         std::span<const Direction> bases, double sigma) {
  if (bases.empty()) throw std::invalid_argument("rgf_estimate: need at least one basis");
  if (!(sigma > 0.0)) throw std::invalid_argument("rgf_estimate: sigma must be > 0");
  const std::size_t k = objective.original().size();

  RgfEstimate est;
  est.queried = quantize_within_ball(x_original, x_hat, epsilon);
  est.list = session.query(est.queried, k);
  est.loss = objective(est.list);
  est.gradient = Image::zeros(x_hat.shape);

  for (const Direction& u : bases) {
    if (u.shape != x_hat.shape) throw std::invalid_argument("rgf_estimate: basis shape mismatch");
    const Image probe_point =
        linf_clip_project(x_original, Image(x_hat.shape, x_hat.pixels + sigma * u.pixels), epsilon);
    ProbeOutcome probe;
    probe.queried = quantize_within_ball(x_original, probe_point, epsilon);
    probe.list = session.query(probe.queried, k);
    probe.loss = objective(probe.list);
    est.gradient.pixels += ((probe.loss - est.loss) / sigma) * u.pixels;
    est.probes.push_back(std::move(probe));
  }
  est.gradient.pixels /= static_cast<double>(bases.size());
  return est;
}

AttackResult qair_attack(QuerySession& session, const Image& x, const AttackConfig& cfg,
                         const MlpParams* substitute) {
  cfg.validate();
  if (cfg.basis == BasisKind::substitute_prior && substitute == nullptr) {
    throw std::invalid_argument("qair_attack: the substitute prior needs a substitute model");
  }
  if (!x.in_unit_range()) throw std::invalid_argument("qair_attack: input pixels outside [0,1]");
  if (session.query_count() != 0 || session.setup_count() != 0) {
    throw std::invalid_argument("qair_attack: session must be fresh");
  }

  const Image x0 = quantize_to_grid(x);
  AttackResult result;
  result.original_list = session.query(x0, cfg.k, Charge::setup);
  const AttackObjective objective(result.original_list, cfg.loss);

  PriorConfig prior = cfg.prior;
  prior.epsilon = cfg.epsilon;
  Eigen::VectorXd target_feature;
  if (cfg.basis == BasisKind::substitute_prior) {
    std::vector<Image> list_images;
    for (ItemId id : result.original_list.ids) list_images.push_back(session.fetch(id));
    // The white-box target always uses the rank weights, whatever the query loss.
    target_feature =
        whitebox_target_feature(*substitute, list_images, relevance_weights(cfg.k).omega);
  }

  SeededRng basis_rng(SeededRng::derive(cfg.seed, 0));
  SeededRng fallback_rng(SeededRng::derive(cfg.seed, 1));

  Image x_hat = x0;
  result.final_image = x0;
  result.final_list = result.original_list;
  double sigma = cfg.sigma;
  double loss_prev = 1.0;
  // Full iterations cost q+1 queries; a leftover budget r runs one last
  // iteration with r-1 probes (or only the iterate query when r = 1).
  for (std::uint64_t t = 1; session.query_count() < cfg.max_queries; ++t) {
    const std::uint64_t left = cfg.max_queries - session.query_count();
    const auto probes = static_cast<std::uint32_t>(std::min<std::uint64_t>(cfg.q, left - 1));
    std::vector<Direction> bases;
    for (std::uint32_t i = 0; i < probes; ++i) {
      if (cfg.basis == BasisKind::substitute_prior && i == 0) {
        MimBasis mim = mim_basis(*substitute, x_hat, x0, target_feature, prior, fallback_rng);
        result.basis_fallback_count += mim.fallback ? 1 : 0;
        bases.push_back(std::move(mim.basis));
      } else {
        bases.push_back(gaussian_direction(basis_rng, x.shape));
      }
    }

    RgfEstimate est;
    if (bases.empty()) {
      est.queried = quantize_within_ball(x0, x_hat, cfg.epsilon);
      est.list = session.query(est.queried, cfg.k);
      est.loss = objective(est.list);
      est.gradient = Image::zeros(x.shape);
    } else {
      est = rgf_estimate(session, objective, x_hat, x0, cfg.epsilon, bases, sigma);
    }

    result.final_image = est.queried;
    result.final_list = est.list;
    double trace_loss = est.loss;
    if (attack_success(result.original_list, est.list, linf_distance(est.queried, x0),
                       cfg.epsilon)) {
      result.success = true;
    } else {
      for (const ProbeOutcome& probe : est.probes) {
        if (attack_success(result.original_list, probe.list, linf_distance(probe.queried, x0),
                           cfg.epsilon)) {
          result.success = true;
          result.final_image = probe.queried;
          result.final_list = probe.list;
          trace_loss = probe.loss;
          break;
        }
      }
    }
    result.loss_trace.push_back({t, trace_loss, sigma});
    if (result.success) break;

    if (est.loss == loss_prev) sigma = std::min(2.0 * sigma, cfg.sigma_max);
    loss_prev = est.loss;
    Image stepped(x.shape, x_hat.pixels - cfg.alpha * sign(est.gradient.pixels));
    x_hat = linf_clip_project(x0, stepped, cfg.epsilon);
  }

  result.final_linf = linf_distance(result.final_image, x0);
  result.queries_used = session.query_count();
  result.setup_queries = session.setup_count();
  return result;
}

}  // namespace qair
