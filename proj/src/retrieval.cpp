#include "qair/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace qair {

Gallery::Gallery(const Dataset& images, MlpParams model)
    : shape_(images.shape), model_(std::move(model)) {
  if (images.size() == 0) throw std::invalid_argument("build_gallery_index: empty image set");
  if (model_.input_dim() != shape_.size()) {
    throw std::invalid_argument("build_gallery_index: model input width " +
                                std::to_string(model_.input_dim()) + " != pixel count " +
                                std::to_string(shape_.size()));
  }
  items_.reserve(images.size());
  embeddings_.resize(static_cast<Eigen::Index>(model_.embed_dim()),
                     static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    GalleryItem item{static_cast<ItemId>(i), images.images[i], images.labels[i],
                     embed(model_, images.images[i])};
    embeddings_.col(static_cast<Eigen::Index>(i)) = item.embedding;
    items_.push_back(std::move(item));
  }
}

RankedList Gallery::rank(const Image& query, std::size_t n) const {
  if (n == 0) throw std::invalid_argument("retrieve_top_n: n must be positive");
  if (n > items_.size()) {
    throw std::invalid_argument("retrieve_top_n: n=" + std::to_string(n) +
                                " exceeds gallery size " + std::to_string(items_.size()));
  }
  const Eigen::VectorXd f = embed(model_, query);
  const Eigen::VectorXd dist = (embeddings_.colwise() - f).colwise().squaredNorm().transpose();

  std::vector<ItemId> order(items_.size());
  std::iota(order.begin(), order.end(), ItemId{0});
  const auto closer = [&](ItemId a, ItemId b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    closer);
  RankedList out;
  out.ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  out.distances.reserve(n);
  for (ItemId id : out.ids) out.distances.push_back(dist[id]);
  return out;
}

const Image& Gallery::image(ItemId id) const {
  if (id >= items_.size()) throw std::out_of_range("gallery id " + std::to_string(id));
  return items_[id].image;
}

std::uint32_t Gallery::label(ItemId id) const {
  if (id >= items_.size()) throw std::out_of_range("gallery id " + std::to_string(id));
  return items_[id].label;
}

Gallery build_gallery_index(const Dataset& images, const MlpParams& model) {
  return Gallery(images, model);
}

RankedList retrieve_top_n(const Gallery& gallery, const Image& query, std::size_t n) {
  return gallery.rank(query, n);
}

RankedList QuerySession::query(const Image& image, std::size_t k, Charge charge) {
  RankedList out = oracle_->rank(quantize_to_grid(image), k);
  ++(charge == Charge::setup ? setup_count_ : query_count_);
  return out;
}

RankedList oracle_query(QuerySession& session, const Image& image, std::size_t k,
                        Charge charge) {
  return session.query(image, k, charge);
}

}  // namespace qair
