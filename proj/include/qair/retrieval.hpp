#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "qair/dataset.hpp"
#include "qair/embedding.hpp"
#include "qair/numerics.hpp"

namespace qair {

using ItemId = std::uint32_t;

/// Gallery ids ordered by ascending squared feature distance to a query; equal
/// distances are ordered by ascending id.
struct RankedList {
  std::vector<ItemId> ids;
  std::vector<double> distances;

  std::size_t size() const { return ids.size(); }
  bool operator==(const RankedList&) const = default;
};

/// What an attacker can reach of a retrieval system: a ranking for a query and
/// the gallery images that rankings refer to. Implementations perform no
/// quantization or accounting; QuerySession adds both.
class RetrievalOracle {
 public:
  virtual ~RetrievalOracle() = default;

  virtual RankedList rank(const Image& query, std::size_t n) const = 0;
  /// Image of a returned id (result pages carry the images themselves).
  virtual const Image& image(ItemId id) const = 0;
  virtual std::size_t size() const = 0;
  virtual Shape image_shape() const = 0;
};

struct GalleryItem {
  ItemId id = 0;
  Image image;
  std::uint32_t label = 0;
  Eigen::VectorXd embedding;
};

/// Immutable exact nearest-neighbour index over a fixed embedding model.
class Gallery final : public RetrievalOracle {
 public:
  Gallery(const Dataset& images, MlpParams model);

  RankedList rank(const Image& query, std::size_t n) const override;
  const Image& image(ItemId id) const override;
  std::size_t size() const override { return items_.size(); }
  Shape image_shape() const override { return shape_; }

  const std::vector<GalleryItem>& items() const { return items_; }
  const MlpParams& model() const { return model_; }
  std::uint32_t label(ItemId id) const;

 private:
  Shape shape_;
  MlpParams model_;
  std::vector<GalleryItem> items_;
  Eigen::MatrixXd embeddings_;  // embed_dim x size, column per item
};

Gallery build_gallery_index(const Dataset& images, const MlpParams& model);

/// Top-n gallery items for `query` under the gallery's model.
RankedList retrieve_top_n(const Gallery& gallery, const Image& query, std::size_t n);

/// Which counter an oracle call is charged to.
enum class Charge { attack, setup };

/// Single-owner accounting wrapper around an oracle. Every query is quantized
/// to the 1/255 grid before it reaches the oracle and increments exactly one
/// counter.
class QuerySession {
 public:
  explicit QuerySession(const RetrievalOracle& oracle) : oracle_(&oracle) {}

  RankedList query(const Image& image, std::size_t k, Charge charge = Charge::attack);

  const Image& fetch(ItemId id) const { return oracle_->image(id); }
  std::size_t gallery_size() const { return oracle_->size(); }
  Shape image_shape() const { return oracle_->image_shape(); }

  std::uint64_t query_count() const { return query_count_; }
  std::uint64_t setup_count() const { return setup_count_; }

 private:
  const RetrievalOracle* oracle_;
  std::uint64_t query_count_ = 0;
  std::uint64_t setup_count_ = 0;
};

RankedList oracle_query(QuerySession& session, const Image& image, std::size_t k,
                        Charge charge = Charge::attack);

}  // namespace qair
