#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <Eigen/Core>

namespace qair {

/// Image geometry (channels, height, width).
struct Shape {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Dense pixel tensor stored flat in (channel, row, column) order.
///
/// Images handed to the oracle hold intensities in [0, 1]. The same type also
/// carries image-shaped directions and gradients, which are unbounded.
struct Image {
  Shape shape;
  Eigen::VectorXd pixels;

  Image() = default;
  Image(Shape s, Eigen::VectorXd px);

  static Image zeros(Shape s);
  static Image filled(Shape s, double value);

  std::size_t size() const { return static_cast<std::size_t>(pixels.size()); }
  bool in_unit_range() const;
  bool operator==(const Image& other) const;
};

using Direction = Image;

/// xoshiro256** seeded through splitmix64.
///
/// Uniform doubles use the top 53 bits; normals use Box-Muller on those
/// uniforms. Both are implemented here (not via <random> distributions) so the
/// sample stream for a given seed is identical on every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  /// Seed for an independent child stream, e.g. one per attack.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();
  std::size_t below(std::size_t bound);  // [0, bound)

 private:
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// i.i.d. standard normal entries scaled to unit Euclidean norm.
Direction gaussian_direction(SeededRng& rng, Shape shape);

/// clip_{x,eps}: project onto the l-inf ball around `original`, then onto [0,1].
Image linf_clip_project(const Image& original, const Image& candidate, double epsilon);

/// round(p * 255) / 255 with halves rounded away from zero.
Image quantize_to_grid(const Image& image);

/// Quantizes `image` and pulls any pixel that rounding pushed outside the
/// eps-ball of the on-grid `original` back by one grid step, so the result is
/// both on the 1/255 grid and within eps of `original`.
Image quantize_within_ball(const Image& original, const Image& image, double epsilon);

double linf_distance(const Image& a, const Image& b);

/// Elementwise sign with sign(0) = 0.
Eigen::VectorXd sign(const Eigen::VectorXd& v);

}  // namespace qair
