#include "qair/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qair {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

void require_same_shape(const Image& a, const Image& b, const char* op) {
  if (a.shape != b.shape || a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                to_string(a.shape) + " vs " + to_string(b.shape));
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  return "(" + std::to_string(shape.channels) + "," + std::to_string(shape.height) + "," +
         std::to_string(shape.width) + ")";
}

Image::Image(Shape s, Eigen::VectorXd px) : shape(s), pixels(std::move(px)) {
  if (static_cast<std::size_t>(pixels.size()) != shape.size()) {
    throw std::invalid_argument("Image: pixel count " + std::to_string(pixels.size()) +
                                " does not match shape " + to_string(shape));
  }
}

Image Image::zeros(Shape s) { return Image(s, Eigen::VectorXd::Zero(s.size())); }

Image Image::filled(Shape s, double value) {
  return Image(s, Eigen::VectorXd::Constant(s.size(), value));
}

bool Image::in_unit_range() const {
  return (pixels.array() >= 0.0).all() && (pixels.array() <= 1.0).all();
}

bool Image::operator==(const Image& other) const {
  return shape == other.shape && pixels.size() == other.pixels.size() &&
         std::equal(pixels.data(), pixels.data() + pixels.size(), other.pixels.data());
}

SeededRng::SeededRng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& word : state_) word = splitmix64(x);
}

std::uint64_t SeededRng::derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ rotl(stream * 0xd1b54a32d192ed03ULL, 17);
  splitmix64(x);
  return splitmix64(x);
}

std::uint64_t SeededRng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t SeededRng::below(std::size_t bound) {
  if (bound == 0) throw std::invalid_argument("SeededRng::below: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::size_t>(v % bound);
}

Direction gaussian_direction(SeededRng& rng, Shape shape) {
  if (shape.size() == 0) {
    throw std::invalid_argument("gaussian_direction: shape " + to_string(shape) +
                                " has a zero dimension");
  }
  Eigen::VectorXd v(shape.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  const double norm = v.norm();
  // A zero draw needs every normal to be exactly 0; treat it as the first axis.
  if (norm == 0.0) {
    v.setZero();
    v[0] = 1.0;
  } else {
    v /= norm;
  }
  return Image(shape, std::move(v));
}

Image linf_clip_project(const Image& original, const Image& candidate, double epsilon) {
  require_same_shape(original, candidate, "linf_clip_project");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("linf_clip_project: epsilon must be >= 0");
  Eigen::VectorXd out = candidate.pixels.array()
                            .max(original.pixels.array() - epsilon)
                            .min(original.pixels.array() + epsilon)
                            .max(0.0)
                            .min(1.0)
                            .matrix();
  return Image(original.shape, std::move(out));
}

Image quantize_to_grid(const Image& image) {
  Eigen::VectorXd out(image.pixels.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    // std::round rounds halves away from zero.
    out[i] = std::round(image.pixels[i] * 255.0) / 255.0;
  }
  return Image(image.shape, std::move(out));
}

Image quantize_within_ball(const Image& original, const Image& image, double epsilon) {
  require_same_shape(original, image, "quantize_within_ball");
  Image q = quantize_to_grid(image);
  for (Eigen::Index i = 0; i < q.pixels.size(); ++i) {
    double& p = q.pixels[i];
    const double o = original.pixels[i];
    // The grid is exact in units of 1/255, so compare in those units.
    const double steps = std::round((p - o) * 255.0);
    const double max_steps = std::floor(epsilon * 255.0 + 1e-9);
    if (std::abs(steps) > max_steps) {
      p = std::round((o * 255.0) + std::copysign(max_steps, steps)) / 255.0;
    }
  }
  return q;
}

double linf_distance(const Image& a, const Image& b) {
  require_same_shape(a, b, "linf_distance");
  if (a.size() == 0) return 0.0;
  return (a.pixels - b.pixels).cwiseAbs().maxCoeff();
}

Eigen::VectorXd sign(const Eigen::VectorXd& v) {
  return v.unaryExpr([](double e) { return static_cast<double>((e > 0.0) - (e < 0.0)); });
}

}  // namespace qair
