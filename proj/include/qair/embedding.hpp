#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "qair/dataset.hpp"
#include "qair/numerics.hpp"

namespace qair {

/// One affine layer: y = weight * x + bias, weight is (out x in).
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Feed-forward embedding network: ReLU after every hidden layer, linear
/// output layer. Used for both the retrieval target and the stolen substitute.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t embed_dim() const;
  /// Layer widths including the input width, e.g. {768, 64, 16}.
  std::vector<std::size_t> widths() const;

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static MlpParams init(std::span<const std::size_t> widths, std::uint64_t seed);
  /// All-zero parameters with the same layer shapes as `like`.
  static MlpParams zeros_like(const MlpParams& like);

  /// this += scale * other (same layer shapes).
  void add_scaled(const MlpParams& other, double scale);
  void scale(double factor);
  bool all_finite() const;
  bool operator==(const MlpParams& other) const;
};

/// Per-layer cache from one forward pass: `inputs[l]` is what layer l consumed,
/// `pre[l]` is its affine output before the activation.
struct ForwardTrace {
  Shape input_shape;
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> pre;

  std::size_t layer_count() const { return pre.size(); }
};

std::pair<Eigen::VectorXd, ForwardTrace> forward_embed(const MlpParams& params,
                                                       const Image& image);
/// Forward pass without a trace.
Eigen::VectorXd embed(const MlpParams& params, const Image& image);

/// d(embedding . upstream) / d(input pixels), reshaped to the input image.
Direction input_gradient(const MlpParams& params, const ForwardTrace& trace,
                         const Eigen::VectorXd& upstream);

/// d(embedding . upstream) / d(weights, biases).
MlpParams parameter_gradient(const MlpParams& params, const ForwardTrace& trace,
                             const Eigen::VectorXd& upstream);

/// Column-batched forward pass: column i of the result embeds column i of
/// `inputs` (pixels x batch).
struct BatchTrace {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
};
std::pair<Eigen::MatrixXd, BatchTrace> forward_embed_batch(const MlpParams& params,
                                                           const Eigen::MatrixXd& inputs);

/// Sum over columns i of d(embedding_i . upstream_i) / d(weights, biases).
MlpParams parameter_gradient_batch(const MlpParams& params, const BatchTrace& trace,
                                   const Eigen::MatrixXd& upstream);

/// Squared Euclidean feature distance used everywhere in the project.
inline double squared_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).squaredNorm();
}

enum class MetricLoss { contrastive, triplet };

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint32_t epochs = 20;
  std::uint32_t batch_size = 32;
  MetricLoss loss = MetricLoss::contrastive;
  double margin = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainedModel {
  MlpParams params;
  std::vector<double> epoch_loss;
};

/// Classical momentum SGD: v <- mu*v - lr*g; p <- p + v.
class MomentumSgd {
 public:
  MomentumSgd(const MlpParams& like, double learning_rate, double momentum);
  void step(MlpParams& params, const MlpParams& grad);

 private:
  MlpParams velocity_;
  double learning_rate_;
  double momentum_;
};

/// Contrastive loss on squared distances: same-class pairs contribute d,
/// different-class pairs max(0, margin - d). Every sample in an epoch serves
/// once as the anchor of a pair whose partner is same-class with probability
/// one half.
TrainedModel train_embedding_model(const Dataset& data, const TrainConfig& cfg,
                                   std::span<const std::size_t> widths);

// QEMB checkpoint, little-endian:
//   "QEMB" | version u32 (=1) | layer count u32
//   then per layer: rows u32, cols u32, rows*cols f32 weights (row-major), rows f32 biases.
// Parameters are stored as f32, so a loaded model equals the saved one rounded
// to float precision.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const MlpParams& params, const std::string& path);
MlpParams load_checkpoint(const std::string& path);
std::vector<char> encode_checkpoint(const MlpParams& params);
MlpParams decode_checkpoint(const std::vector<char>& bytes);

}  // namespace qair
