#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qair/numerics.hpp"

namespace qair {

/// Labeled images sharing one shape.
struct Dataset {
  Shape shape;
  std::vector<Image> images;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return images.size(); }
  void push_back(Image image, std::uint32_t label);
  /// Number of distinct labels.
  std::size_t class_count() const;
};

/// Class-prototype dataset: each class draws a prototype uniform in [0,1];
/// samples add uniform(-noise, noise) per pixel and clamp to [0,1]. Samples are
/// stored class-major and rounded to float precision so they survive the
/// on-disk f32 encoding unchanged.
Dataset gen_synthetic_dataset(std::uint32_t classes, std::uint32_t per_class, Shape shape,
                              double noise, std::uint64_t seed);

/// Splits every class into its first `gallery_per_class` samples and the rest.
struct DatasetSplit {
  Dataset gallery;
  Dataset held_out;
};
DatasetSplit split_per_class(const Dataset& data, std::uint32_t gallery_per_class);

// QIRD file, little-endian:
//   "QIRD" | version u32 (=1) | count u32 | channels u32 | height u32 | width u32
//   then per item: label u32, C*H*W f32 pixels.
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

std::vector<char> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<char>& bytes);

}  // namespace qair
