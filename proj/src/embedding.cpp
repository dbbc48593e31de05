#include "qair/embedding.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "binary_io.hpp"
#include "qair/errors.hpp"

namespace qair {

std::size_t MlpParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols());
}

std::size_t MlpParams::embed_dim() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.rows());
}

std::vector<std::size_t> MlpParams::widths() const {
  std::vector<std::size_t> w;
  if (layers.empty()) return w;
  w.push_back(input_dim());
  for (const auto& layer : layers) w.push_back(static_cast<std::size_t>(layer.weight.rows()));
  return w;
}

MlpParams MlpParams::init(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("MlpParams::init: need at least 2 widths");
  for (std::size_t w : widths) {
    if (w == 0) throw std::invalid_argument("MlpParams::init: zero layer width");
  }
  SeededRng rng(seed);
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(widths[l]);
    const auto out = static_cast<Eigen::Index>(widths[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
    // Row-major draw order so the stream does not depend on Eigen's storage.
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    for (Eigen::Index r = 0; r < out; ++r) layer.bias[r] = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MlpParams MlpParams::zeros_like(const MlpParams& like) {
  MlpParams p;
  for (const auto& layer : like.layers) {
    p.layers.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                        Eigen::VectorXd::Zero(layer.bias.size())});
  }
  return p;
}

void MlpParams::add_scaled(const MlpParams& other, double scale) {
  if (other.layers.size() != layers.size()) {
    throw std::invalid_argument("MlpParams::add_scaled: layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += scale * other.layers[l].weight;
    layers[l].bias += scale * other.layers[l].bias;
  }
}

void MlpParams::scale(double factor) {
  for (auto& layer : layers) {
    layer.weight *= factor;
    layer.bias *= factor;
  }
}

bool MlpParams::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

bool MlpParams::operator==(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size()) {
      return false;
    }
    if (!std::equal(a.weight.data(), a.weight.data() + a.weight.size(), b.weight.data()) ||
        !std::equal(a.bias.data(), a.bias.data() + a.bias.size(), b.bias.data())) {
      return false;
    }
  }
  return true;
}

namespace {

void check_input(const MlpParams& params, const Image& image) {
  if (params.layers.empty()) throw std::invalid_argument("embedding network has no layers");
  if (image.size() != params.input_dim()) {
    throw std::invalid_argument("input has " + std::to_string(image.size()) +
                                " pixels, network expects " +
                                std::to_string(params.input_dim()));
  }
}

void check_trace(const MlpParams& params, const ForwardTrace& trace,
                 const Eigen::VectorXd& upstream) {
  if (trace.layer_count() != params.layers.size() ||
      trace.inputs.size() != params.layers.size()) {
    throw InvalidState("forward trace has " + std::to_string(trace.layer_count()) +
                       " layers, network has " + std::to_string(params.layers.size()));
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (trace.pre[l].size() != params.layers[l].weight.rows() ||
        trace.inputs[l].size() != params.layers[l].weight.cols()) {
      throw InvalidState("forward trace layer " + std::to_string(l) +
                         " does not match the network");
    }
  }
  if (static_cast<std::size_t>(upstream.size()) != params.embed_dim()) {
    throw std::invalid_argument("upstream gradient has length " +
                                std::to_string(upstream.size()) + ", expected " +
                                std::to_string(params.embed_dim()));
  }
}

// Backpropagates `upstream` to the pre-activation of every layer, returning the
// gradient w.r.t. the network input. `on_layer(l, delta)` sees each delta.
template <typename OnLayer>
Eigen::VectorXd backprop(const MlpParams& params, const ForwardTrace& trace,
                         const Eigen::VectorXd& upstream, OnLayer&& on_layer) {
  Eigen::VectorXd delta = upstream;  // d/d pre[last]; output layer is linear
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    on_layer(l, delta);
    Eigen::VectorXd grad_in = params.layers[l].weight.transpose() * delta;
    if (l > 0) {
      const auto& pre = trace.pre[l - 1];
      grad_in = (pre.array() > 0.0).select(grad_in, 0.0);
    }
    delta = std::move(grad_in);
  }
  return delta;
}

}  // namespace

std::pair<Eigen::VectorXd, ForwardTrace> forward_embed(const MlpParams& params,
                                                       const Image& image) {
  check_input(params, image);
  ForwardTrace trace;
  trace.input_shape = image.shape;
  Eigen::VectorXd act = image.pixels;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::VectorXd pre = layer.weight * act + layer.bias;
    trace.inputs.push_back(std::move(act));
    act = l + 1 < params.layers.size() ? Eigen::VectorXd(pre.cwiseMax(0.0)) : pre;
    trace.pre.push_back(std::move(pre));
  }
  return {std::move(act), std::move(trace)};
}

Eigen::VectorXd embed(const MlpParams& params, const Image& image) {
  check_input(params, image);
  Eigen::VectorXd act = image.pixels;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::VectorXd pre = layer.weight * act + layer.bias;
    act = l + 1 < params.layers.size() ? Eigen::VectorXd(pre.cwiseMax(0.0)) : std::move(pre);
  }
  return act;
}

Direction input_gradient(const MlpParams& params, const ForwardTrace& trace,
                         const Eigen::VectorXd& upstream) {
  check_trace(params, trace, upstream);
  Eigen::VectorXd g = backprop(params, trace, upstream, [](std::size_t, const auto&) {});
  return Image(trace.input_shape, std::move(g));
}

MlpParams parameter_gradient(const MlpParams& params, const ForwardTrace& trace,
                             const Eigen::VectorXd& upstream) {
  check_trace(params, trace, upstream);
  MlpParams grad = MlpParams::zeros_like(params);
  backprop(params, trace, upstream, [&](std::size_t l, const Eigen::VectorXd& delta) {
    grad.layers[l].weight.noalias() = delta * trace.inputs[l].transpose();
    grad.layers[l].bias = delta;
  });
  return grad;
}

std::pair<Eigen::MatrixXd, BatchTrace> forward_embed_batch(const MlpParams& params,
                                                           const Eigen::MatrixXd& inputs) {
  if (params.layers.empty()) throw InvalidState("forward_embed_batch: empty network");
  if (static_cast<std::size_t>(inputs.rows()) != params.input_dim()) {
    throw std::invalid_argument("forward_embed_batch: input rows do not match the network");
  }
  BatchTrace trace;
  Eigen::MatrixXd act = inputs;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd pre = layer.weight * act;
    pre.colwise() += layer.bias;
    trace.inputs.push_back(std::move(act));
    act = l + 1 < params.layers.size() ? Eigen::MatrixXd(pre.cwiseMax(0.0)) : pre;
    trace.pre.push_back(std::move(pre));
  }
  return {std::move(act), std::move(trace)};
}

MlpParams parameter_gradient_batch(const MlpParams& params, const BatchTrace& trace,
                                   const Eigen::MatrixXd& upstream) {
  if (trace.pre.size() != params.layers.size() || trace.pre.empty() ||
      trace.pre.back().rows() != upstream.rows() || trace.pre.back().cols() != upstream.cols()) {
    throw std::invalid_argument("parameter_gradient_batch: trace or upstream shape mismatch");
  }
  MlpParams grad = MlpParams::zeros_like(params);
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    grad.layers[l].weight.noalias() = delta * trace.inputs[l].transpose();
    grad.layers[l].bias = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = params.layers[l].weight.transpose() * delta;
    delta = (trace.pre[l - 1].array() > 0.0).select(back, 0.0);
  }
  return grad;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(margin >= 0.0)) throw std::invalid_argument("TrainConfig: margin must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("TrainConfig: momentum must lie in [0, 1)");
  }
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
}

MomentumSgd::MomentumSgd(const MlpParams& like, double learning_rate, double momentum)
    : velocity_(MlpParams::zeros_like(like)), learning_rate_(learning_rate), momentum_(momentum) {}

void MomentumSgd::step(MlpParams& params, const MlpParams& grad) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& v = velocity_.layers[l];
    v.weight = momentum_ * v.weight - learning_rate_ * grad.layers[l].weight;
    v.bias = momentum_ * v.bias - learning_rate_ * grad.layers[l].bias;
    params.layers[l].weight += v.weight;
    params.layers[l].bias += v.bias;
  }
}

TrainedModel train_embedding_model(const Dataset& data, const TrainConfig& cfg,
                                   std::span<const std::size_t> widths) {
  cfg.validate();
  if (widths.empty() || widths.front() != data.shape.size()) {
    throw std::invalid_argument("train_embedding_model: first width must equal the pixel count");
  }
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  if (by_class.size() < 2) {
    throw std::invalid_argument("train_embedding_model: need at least 2 classes for negative pairs");
  }
  for (const auto& [label, members] : by_class) {
    if (members.size() < 2) {
      throw std::invalid_argument("train_embedding_model: class " + std::to_string(label) +
                                  " has fewer than 2 samples");
    }
  }

  TrainedModel out{MlpParams::init(widths, SeededRng::derive(cfg.seed, 0)), {}};
  SeededRng rng(SeededRng::derive(cfg.seed, 1));
  MomentumSgd opt(out.params, cfg.learning_rate, cfg.momentum);
  std::vector<std::size_t> order(data.size());

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const auto count = static_cast<Eigen::Index>(end - start);
      // Columns [0, count) hold the anchors, [count, 2*count) their partners.
      Eigen::MatrixXd x(static_cast<Eigen::Index>(widths.front()), 2 * count);
      std::vector<bool> positive(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t a = order[b];
        const auto& same = by_class.at(data.labels[a]);
        positive[b - start] = rng.uniform() < 0.5;
        std::size_t partner = a;
        if (positive[b - start]) {
          while (partner == a) partner = same[rng.below(same.size())];
        } else {
          while (data.labels[partner] == data.labels[a]) partner = rng.below(data.size());
        }
        const auto c = static_cast<Eigen::Index>(b - start);
        x.col(c) = data.images[a].pixels;
        x.col(count + c) = data.images[partner].pixels;
      }
      auto [f, trace] = forward_embed_batch(out.params, x);
      Eigen::MatrixXd up = Eigen::MatrixXd::Zero(f.rows(), f.cols());
      for (Eigen::Index c = 0; c < count; ++c) {
        const Eigen::VectorXd diff = f.col(c) - f.col(count + c);
        const double d = diff.squaredNorm();
        if (positive[static_cast<std::size_t>(c)]) {
          epoch_loss += d;
          up.col(c) = 2.0 * diff;
        } else {
          const double gap = cfg.margin - d;
          if (gap <= 0.0) continue;
          epoch_loss += gap;
          up.col(c) = -2.0 * diff;
        }
        up.col(count + c) = -up.col(c);
      }
      MlpParams grad = parameter_gradient_batch(out.params, trace, up);
      grad.scale(1.0 / static_cast<double>(end - start));
      opt.step(out.params, grad);
    }
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  return out;
}

std::vector<char> encode_checkpoint(const MlpParams& params) {
  detail::ByteWriter w;
  w.magic("QEMB");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        w.f32(static_cast<float>(layer.weight(r, c)));
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) w.f32(static_cast<float>(layer.bias[r]));
  }
  return w.bytes();
}

MlpParams decode_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("QEMB", "QEMB checkpoint");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported QEMB version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32("layer count");
  MlpParams p;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::size_t at = r.offset();
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    if (!p.layers.empty() && static_cast<std::uint32_t>(p.layers.back().weight.rows()) != cols) {
      throw FormatError("layer " + std::to_string(l) + " input width does not match previous layer",
                        at);
    }
    if (r.remaining() / 4 < static_cast<std::size_t>(rows) * cols + rows) {
      throw FormatError("truncated QEMB layer " + std::to_string(l), r.offset());
    }
    DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) layer.weight(i, j) = r.f32("weight");
    }
    for (std::uint32_t i = 0; i < rows; ++i) layer.bias[i] = r.f32("bias");
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void save_checkpoint(const MlpParams& params, const std::string& path) {
  detail::write_file(path, encode_checkpoint(params));
}

MlpParams load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace qair
