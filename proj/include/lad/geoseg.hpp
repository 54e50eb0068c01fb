#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lad/geometry.hpp"
#include "lad/types.hpp"

namespace lad {

struct PlaneModel {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;  // normal . p + offset = 0 on the plane
  std::vector<char> inlier_mask;

  std::size_t inlier_count() const;
  double signed_distance(const Vec3& p) const { return normal.dot(p) + offset; }
};

struct RansacParams {
  int iterations = 100;
  double inlier_threshold = 0.05;
  std::uint64_t seed = 0;
};

/// Best 3-point hypothesis by inlier count (ties: lowest iteration), refined
/// once by a least-squares fit over its inliers. Normal has z >= 0.
PlaneModel ransac_ground(const PointsXd& points, const RansacParams& params);

/// Per-point segment ids: 0 = ground or noise, 1..segment_count = segments.
struct SegmentAssignment {
  std::vector<int> labels;
  int segment_count = 0;
  std::vector<std::vector<int>> per_frame_views;
};

/// DBSCAN. A point is core when its closed eps-ball holds at least min_pts
/// points (itself included). Clusters are numbered in order of their lowest
/// core index; border points join the earliest cluster that reaches them.
/// Neighbor queries go through a uniform hash grid with cell size eps.
SegmentAssignment density_cluster(const PointsXd& points, double eps, int min_pts);

/// Relabels segments smaller than `min_size` as noise and renumbers the rest
/// densely, keeping their relative order.
void drop_small_segments(SegmentAssignment& assignment, int min_size);

struct ClusterParams {
  double eps = 0.5;
  int min_pts = 5;
  int min_segment_size = 5;
};

/// Ground removal then clustering of the non-ground points of one cloud.
SegmentAssignment segment_scan(const PointsXd& coords, const RansacParams& ransac, const ClusterParams& cluster);

/// Same pipeline on an aggregate; labels are scattered back to every
/// contributing frame so a segment id names one physical cluster in all views.
SegmentAssignment segment_aggregate_and_map(const AggregatedCloud& agg, const RansacParams& ransac,
                                            const ClusterParams& cluster);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

void write_segment_sidecar(const SegmentAssignment& assignment, const std::filesystem::path& path);
SegmentAssignment read_segment_sidecar(const std::filesystem::path& path);

}  // namespace lad
