#include <cmath>
#include <stdexcept>

#include "qair/harness.hpp"
#include "qair/objective.hpp"
#include "qair/prior.hpp"

namespace qair {

namespace {

std::vector<double> axis(double lo, double hi, double step) {
  if (step < 0.0) throw std::invalid_argument("landscape_scan: negative step");
  if (hi < lo) throw std::invalid_argument("landscape_scan: empty axis range");
  if (step == 0.0) return {lo};
  std::vector<double> coords;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) coords.push_back(lo + static_cast<double>(i) * step);
  return coords;
}

}  // namespace

Landscape landscape_scan(QuerySession& session, const Image& x, std::size_t k,
                         const LandscapeGrid& grid, const MlpParams& gradient_model,
                         GradientSource source, std::uint64_t seed) {
  Landscape out;
  out.source = source;
  out.i_coords = axis(grid.i_min, grid.i_max, grid.step);
  out.j_coords = axis(grid.j_min, grid.j_max, grid.step);

  const Image x0 = quantize_to_grid(x);
  const RankedList y = session.query(x0, k, Charge::setup);
  const RelevanceWeights w = relevance_weights(k);

  std::vector<Image> list_images;
  for (ItemId id : y.ids) list_images.push_back(session.fetch(id));
  const Eigen::VectorXd target = whitebox_target_feature(gradient_model, list_images, w.omega);
  const Eigen::VectorXd eta = sign(whitebox_loss(gradient_model, x0, target).gradient.pixels);

  SeededRng rng(seed);
  Eigen::VectorXd gamma = gaussian_direction(rng, x.shape).pixels;
  gamma *= eta.norm() > 0.0 ? eta.norm() : std::sqrt(static_cast<double>(gamma.size()));

  out.relevance.resize(static_cast<Eigen::Index>(out.i_coords.size()),
                       static_cast<Eigen::Index>(out.j_coords.size()));
  out.count.resizeLike(out.relevance);
  for (std::size_t a = 0; a < out.i_coords.size(); ++a) {
    for (std::size_t b = 0; b < out.j_coords.size(); ++b) {
      Eigen::VectorXd px = x0.pixels + grid.scale * (out.i_coords[a] * gamma + out.j_coords[b] * eta);
      const Image point(x.shape, px.cwiseMax(0.0).cwiseMin(1.0));
      const RankedList list = session.query(point, k);
      out.relevance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          relevance_loss(y, list, w);
      out.count(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = count_loss(y, list);
    }
  }
  return out;
}

}  // namespace qair
