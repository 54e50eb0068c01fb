#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "lad/geometry.hpp"
#include "lad/types.hpp"

namespace lad {

enum class SuperpixelKind : std::uint8_t { slic = 0, semantic = 1 };

/// Dense label grid. Label 0 means "unlabeled"; segments are 1..segment_count.
struct SuperpixelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // row-major H*W
  int segment_count = 0;
  SuperpixelKind kind = SuperpixelKind::slic;

  int at(int row, int col) const { return labels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)]; }
};

/// Throws InvalidArgument when labels leave [0, segment_count] or a segment is empty.
void validate(const SuperpixelMap& map);

struct SlicParams {
  int target_count = 64;
  double compactness = 10.0;
  int iterations = 10;
};

/// k-means in (r, g, b, x/S * m, y/S * m) seeded on a regular grid, each
/// center searching a 2S x 2S window. Equidistant assignments go to the
/// lowest segment id. Disconnected fragments are merged into the neighbor
/// label with which they share the longest boundary.
SuperpixelMap slic_superpixels(const Mat& rgb, int height, int width, const SlicParams& params);

/// Each distinct nonzero id becomes one segment, relabeled 1..M in
/// ascending id order.
SuperpixelMap semantic_superpixels_from_mask(const std::vector<std::uint32_t>& mask, int height, int width);

void write_superpixel_map(const SuperpixelMap& map, const std::filesystem::path& path);

struct LoadedSuperpixelMap {
  SuperpixelMap map;
  std::map<int, int> remap;  // file label -> dense label
};

LoadedSuperpixelMap load_superpixel_map(const std::filesystem::path& path);

struct SuperpointGroups {
  std::vector<IndexList> groups;  // groups[s - 1] holds the points of segment s
  IndexList uncovered_points;
  std::vector<int> empty_segments;

  /// Segment ids with at least one point, ascending. These are the rows
  /// that stay paired between image and point embeddings.
  std::vector<int> nonempty_segments() const;
  std::size_t covered_count() const;
};

SuperpointGroups group_superpoints(const std::vector<PixelProjection>& projections, const SuperpixelMap& map);

}  // namespace lad
