#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qair/embedding.hpp"
#include "qair/numerics.hpp"

namespace qair {

/// White-box momentum attack on the substitute model.
struct PriorConfig {
  std::uint32_t iterations = 5;  // momentum iterations per outer attack step
  double beta = 0.9;             // momentum decay
  double alpha_w = 0.01;         // white-box sign step
  double epsilon = 0.05;         // l-inf budget, shared with the query attack

  void validate() const;
};

/// sum_i w_i * s(x_i) over the original top-k images. Weights are
/// re-normalized to sum to one.
Eigen::VectorXd whitebox_target_feature(const MlpParams& substitute,
                                        std::span<const Image> list_images,
                                        std::span<const double> weights);

/// L_w(x) = ||s(x) - target||^2 and its input gradient.
struct WhiteboxLoss {
  double value = 0.0;
  Direction gradient;
};
WhiteboxLoss whitebox_loss(const MlpParams& substitute, const Image& x,
                           const Eigen::VectorXd& target_feature);

struct MimBasis {
  Direction basis;     // unit-norm momentum (or the fallback direction)
  Direction momentum;  // momentum before normalization
  Image advanced;      // iterate after the last white-box step
  bool fallback = false;
};

/// Runs cfg.iterations momentum steps
///   u <- beta*u + grad L_w(x_t);  x_t <- clip_{x,eps}(x_t + alpha_w * sign(u))
/// starting from u = 0, x_t = x_hat. If the momentum is exactly zero at the end
/// (a stationary point of L_w) a unit Gaussian direction from `fallback_rng` is
/// returned instead and `fallback` is set.
MimBasis mim_basis(const MlpParams& substitute, const Image& x_hat, const Image& x_original,
                   const Eigen::VectorXd& target_feature, const PriorConfig& cfg,
                   SeededRng& fallback_rng);

}  // namespace qair
