#include "qair/prior.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace qair {

void PriorConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("PriorConfig: iterations must be >= 1");
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("PriorConfig: beta must lie in [0,1)");
  if (!(alpha_w > 0.0)) throw std::invalid_argument("PriorConfig: alpha_w must be > 0");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("PriorConfig: epsilon must be >= 0");
}

Eigen::VectorXd whitebox_target_feature(const MlpParams& substitute,
                                        std::span<const Image> list_images,
                                        std::span<const double> weights) {
  if (list_images.size() != weights.size()) {
    throw std::invalid_argument("whitebox_target_feature: " + std::to_string(list_images.size()) +
                                " images but " + std::to_string(weights.size()) + " weights");
  }
  if (list_images.empty()) throw std::invalid_argument("whitebox_target_feature: empty list");
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("whitebox_target_feature: weights sum to zero");

  Eigen::VectorXd feature = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(substitute.embed_dim()));
  for (std::size_t i = 0; i < list_images.size(); ++i) {
    if (weights[i] == 0.0) continue;
    feature += (weights[i] / total) * embed(substitute, list_images[i]);
  }
  return feature;
}

WhiteboxLoss whitebox_loss(const MlpParams& substitute, const Image& x,
                           const Eigen::VectorXd& target_feature) {
  auto [f, trace] = forward_embed(substitute, x);
  if (f.size() != target_feature.size()) {
    throw std::invalid_argument("whitebox_loss: target feature has the wrong dimension");
  }
  const Eigen::VectorXd diff = f - target_feature;
  return {diff.squaredNorm(), input_gradient(substitute, trace, 2.0 * diff)};
}

MimBasis mim_basis(const MlpParams& substitute, const Image& x_hat, const Image& x_original,
                   const Eigen::VectorXd& target_feature, const PriorConfig& cfg,
                   SeededRng& fallback_rng) {
  cfg.validate();
  if (x_hat.shape != x_original.shape) {
    throw std::invalid_argument("mim_basis: x_hat and x_original shapes differ");
  }
  MimBasis out;
  out.momentum = Image::zeros(x_hat.shape);
  out.advanced = x_hat;
  for (std::uint32_t i = 0; i < cfg.iterations; ++i) {
    const WhiteboxLoss lw = whitebox_loss(substitute, out.advanced, target_feature);
    out.momentum.pixels = cfg.beta * out.momentum.pixels + lw.gradient.pixels;
    Image stepped(x_hat.shape, out.advanced.pixels + cfg.alpha_w * sign(out.momentum.pixels));
    out.advanced = linf_clip_project(x_original, stepped, cfg.epsilon);
  }
  const double norm = out.momentum.pixels.norm();
  if (norm == 0.0 || !std::isfinite(norm)) {
    out.basis = gaussian_direction(fallback_rng, x_hat.shape);
    out.fallback = true;
  } else {
    out.basis = Image(x_hat.shape, out.momentum.pixels / norm);
  }
  return out;
}

}  // namespace qair
