#include "qair/dataset.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "binary_io.hpp"

namespace qair {

void Dataset::push_back(Image image, std::uint32_t label) {
  if (images.empty() && shape.size() == 0) shape = image.shape;
  if (image.shape != shape) {
    throw std::invalid_argument("Dataset: image shape " + to_string(image.shape) +
                                " differs from dataset shape " + to_string(shape));
  }
  images.push_back(std::move(image));
  labels.push_back(label);
}

std::size_t Dataset::class_count() const {
  return std::set<std::uint32_t>(labels.begin(), labels.end()).size();
}

Dataset gen_synthetic_dataset(std::uint32_t classes, std::uint32_t per_class, Shape shape,
                              double noise, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("gen_synthetic_dataset: need at least 2 classes");
  if (per_class < 2) {
    throw std::invalid_argument("gen_synthetic_dataset: need at least 2 samples per class");
  }
  if (!(noise >= 0.0 && noise <= 0.5)) {
    throw std::invalid_argument("gen_synthetic_dataset: noise must lie in [0, 0.5]");
  }
  if (shape.size() == 0) throw std::invalid_argument("gen_synthetic_dataset: empty shape");

  SeededRng rng(seed);
  Dataset data;
  data.shape = shape;
  const auto n = static_cast<Eigen::Index>(shape.size());
  for (std::uint32_t c = 0; c < classes; ++c) {
    Eigen::VectorXd prototype(n);
    for (Eigen::Index i = 0; i < n; ++i) prototype[i] = rng.uniform();
    for (std::uint32_t s = 0; s < per_class; ++s) {
      Eigen::VectorXd px(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = std::clamp(prototype[i] + rng.uniform(-noise, noise), 0.0, 1.0);
        px[i] = static_cast<double>(static_cast<float>(v));
      }
      data.push_back(Image(shape, std::move(px)), c);
    }
  }
  return data;
}

DatasetSplit split_per_class(const Dataset& data, std::uint32_t gallery_per_class) {
  DatasetSplit split;
  split.gallery.shape = data.shape;
  split.held_out.shape = data.shape;
  std::vector<std::uint32_t> seen;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint32_t label = data.labels[i];
    if (label >= seen.size()) seen.resize(label + 1, 0);
    auto& target = seen[label]++ < gallery_per_class ? split.gallery : split.held_out;
    target.push_back(data.images[i], label);
  }
  return split;
}

std::vector<char> encode_dataset(const Dataset& data) {
  detail::ByteWriter w;
  w.magic("QIRD");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(data.shape.channels);
  w.u32(data.shape.height);
  w.u32(data.shape.width);
  for (std::size_t i = 0; i < data.size(); ++i) {
    w.u32(data.labels[i]);
    for (double p : data.images[i].pixels) w.f32(static_cast<float>(p));
  }
  return w.bytes();
}

Dataset decode_dataset(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("QIRD", "QIRD dataset");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported QIRD version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32("item count");
  Shape shape;
  shape.channels = r.u32("channels");
  shape.height = r.u32("height");
  shape.width = r.u32("width");

  Dataset data;
  data.shape = shape;
  const std::size_t per_item = 4 + 4 * shape.size();
  if (count > 0 && r.remaining() / per_item < count) {
    // Report the first item that cannot be complete.
    const std::size_t complete = r.remaining() / per_item;
    throw FormatError("truncated QIRD payload: " + std::to_string(count) + " items declared, " +
                          std::to_string(complete) + " present",
                      r.offset() + complete * per_item);
  }
  data.images.reserve(count);
  data.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t label = r.u32("label");
    Eigen::VectorXd px(shape.size());
    for (Eigen::Index j = 0; j < px.size(); ++j) px[j] = r.f32("pixel");
    data.images.emplace_back(shape, std::move(px));
    data.labels.push_back(label);
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  detail::write_file(path, encode_dataset(data));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(detail::read_file(path)); }

}  // namespace qair
