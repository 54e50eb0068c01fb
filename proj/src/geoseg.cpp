#include "lad/geoseg.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "binary_io.hpp"
#include "lad/errors.hpp"
#include "lad/rng.hpp"

namespace lad {
namespace {

constexpr auto kSegmentMagic = detail::make_magic("LADSG1");

class VoxelHashGrid {
 public:
  VoxelHashGrid(const PointsXd& points, double cell) : points_(points), cell_(cell) {
    cells_.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) cells_[key_of(points.row(i))].push_back(static_cast<int>(i));
  }

  void radius_neighbors(Eigen::Index i, double radius, std::vector<int>& out) const {
    out.clear();
    const double r2 = radius * radius;
    const auto p = points_.row(i);
    const auto c = coords_of(p);
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(pack(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == cells_.end()) continue;
          for (int j : it->second) {
            if ((points_.row(j) - p).squaredNorm() <= r2) out.push_back(j);
          }
        }
      }
    }
  }

 private:
  template <typename Row>
  std::array<std::int64_t, 3> coords_of(const Row& p) const {
    return {static_cast<std::int64_t>(std::floor(p(0) / cell_)), static_cast<std::int64_t>(std::floor(p(1) / cell_)),
            static_cast<std::int64_t>(std::floor(p(2) / cell_))};
  }
  static std::uint64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
    constexpr std::int64_t kBias = 1 << 20;
    constexpr std::uint64_t kMask = (1ULL << 21) - 1;
    return (static_cast<std::uint64_t>(x + kBias) & kMask) | ((static_cast<std::uint64_t>(y + kBias) & kMask) << 21) |
           ((static_cast<std::uint64_t>(z + kBias) & kMask) << 42);
  }
  template <typename Row>
  std::uint64_t key_of(const Row& p) const {
    const auto c = coords_of(p);
    return pack(c[0], c[1], c[2]);
  }

  const PointsXd& points_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

PlaneModel plane_from_samples(const Vec3& a, const Vec3& b, const Vec3& c, bool& ok) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 n = e1.cross(e2);
  PlaneModel m;
  ok = n.norm() > 1e-9 * std::max(1e-12, e1.norm() * e2.norm());
  if (!ok) return m;
  m.normal = n.normalized();
  m.offset = -m.normal.dot(a);
  return m;
}

std::size_t count_inliers(const PointsXd& points, const Vec3& normal, double offset, double threshold) {
  return static_cast<std::size_t>((((points * normal).array() + offset).abs() <= threshold).count());
}

}  // namespace

std::size_t PlaneModel::inlier_count() const {
  return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), 1));
}

PlaneModel ransac_ground(const PointsXd& points, const RansacParams& params) {
  const auto n = static_cast<std::uint64_t>(points.rows());
  if (n < 3) throw InvalidArgument("ransac_ground: need at least 3 points");
  if (!(params.inlier_threshold > 0.0)) throw InvalidArgument("ransac_ground: threshold must be positive");
  if (params.iterations < 1) throw InvalidArgument("ransac_ground: iterations must be >= 1");

  auto gen = rng::make(params.seed, rng::Stream::ransac);
  bool found = false;
  std::size_t best_count = 0;
  PlaneModel best;
  for (int it = 0; it < params.iterations; ++it) {
    const auto i0 = rng::below(gen, n);
    auto i1 = rng::below(gen, n - 1);
    if (i1 >= i0) ++i1;
    auto i2 = rng::below(gen, n - 2);
    if (i2 >= std::min(i0, i1)) ++i2;
    if (i2 >= std::max(i0, i1)) ++i2;
    bool ok = false;
    const PlaneModel hyp = plane_from_samples(points.row(static_cast<Eigen::Index>(i0)).transpose(),
                                              points.row(static_cast<Eigen::Index>(i1)).transpose(),
                                              points.row(static_cast<Eigen::Index>(i2)).transpose(), ok);
    if (!ok) continue;
    const std::size_t count = count_inliers(points, hyp.normal, hyp.offset, params.inlier_threshold);
    if (!found || count > best_count) {
      found = true;
      best_count = count;
      best = hyp;
    }
  }
  if (!found) throw NumericalError("ransac_ground: degenerate plane (all samples collinear)");

  // Least-squares refinement over the hypothesis inliers.
  const Eigen::Array<bool, Eigen::Dynamic, 1> mask =
      ((points * best.normal).array() + best.offset).abs() <= params.inlier_threshold;
  Vec3 centroid = Vec3::Zero();
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (mask(i)) {
      centroid += points.row(i).transpose();
      ++m;
    }
  }
  PlaneModel refined = best;
  if (m >= 3) {
    centroid /= static_cast<double>(m);
    Mat3 cov = Mat3::Zero();
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      if (!mask(i)) continue;
      const Vec3 d = points.row(i).transpose() - centroid;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    refined.normal = eig.eigenvectors().col(0).normalized();
    refined.offset = -refined.normal.dot(centroid);
  }
  if (refined.normal.z() < 0.0) {
    refined.normal = -refined.normal;
    refined.offset = -refined.offset;
  }
  refined.inlier_mask.resize(static_cast<std::size_t>(points.rows()));
  const Vec residual = ((points * refined.normal).array() + refined.offset).abs().matrix();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    refined.inlier_mask[static_cast<std::size_t>(i)] = residual(i) <= params.inlier_threshold ? 1 : 0;
  }
  return refined;
}

SegmentAssignment density_cluster(const PointsXd& points, double eps, int min_pts) {
  if (!(eps > 0.0)) throw InvalidArgument("density_cluster: eps must be positive");
  if (min_pts < 1) throw InvalidArgument("density_cluster: min_pts must be >= 1");
  constexpr int kUnvisited = -1;
  const auto n = static_cast<std::size_t>(points.rows());
  SegmentAssignment out;
  out.labels.assign(n, kUnvisited);
  const VoxelHashGrid grid(points, eps);
  std::vector<int> neighbors, frontier, expand;
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.labels[i] != kUnvisited) continue;
    grid.radius_neighbors(static_cast<Eigen::Index>(i), eps, neighbors);
    if (static_cast<int>(neighbors.size()) < min_pts) {
      out.labels[i] = 0;
      continue;
    }
    ++cluster;
    out.labels[i] = cluster;
    frontier = neighbors;
    while (!frontier.empty()) {
      const auto j = static_cast<std::size_t>(frontier.back());
      frontier.pop_back();
      if (out.labels[j] == 0) out.labels[j] = cluster;
      if (out.labels[j] != kUnvisited) continue;
      out.labels[j] = cluster;
      grid.radius_neighbors(static_cast<Eigen::Index>(j), eps, expand);
      if (static_cast<int>(expand.size()) >= min_pts) frontier.insert(frontier.end(), expand.begin(), expand.end());
    }
  }
  out.segment_count = cluster;
  return out;
}

void drop_small_segments(SegmentAssignment& assignment, int min_size) {
  std::vector<int> sizes(static_cast<std::size_t>(assignment.segment_count) + 1, 0);
  for (int l : assignment.labels) ++sizes[static_cast<std::size_t>(l)];
  std::vector<int> remap(sizes.size(), 0);
  int next = 0;
  for (std::size_t s = 1; s < sizes.size(); ++s) {
    if (sizes[s] >= min_size) remap[s] = ++next;
  }
  for (int& l : assignment.labels) l = remap[static_cast<std::size_t>(l)];
  for (auto& view : assignment.per_frame_views) {
    for (int& l : view) l = remap[static_cast<std::size_t>(l)];
  }
  assignment.segment_count = next;
}

SegmentAssignment segment_scan(const PointsXd& coords, const RansacParams& ransac, const ClusterParams& cluster) {
  if (coords.rows() == 0) throw InvalidArgument("segment_scan: empty cloud");
  const PlaneModel ground = ransac_ground(coords, ransac);
  std::vector<int> non_ground;
  for (std::size_t i = 0; i < ground.inlier_mask.size(); ++i) {
    if (!ground.inlier_mask[i]) non_ground.push_back(static_cast<int>(i));
  }
  PointsXd subset(static_cast<Eigen::Index>(non_ground.size()), 3);
  for (std::size_t k = 0; k < non_ground.size(); ++k) subset.row(static_cast<Eigen::Index>(k)) = coords.row(non_ground[k]);
  SegmentAssignment sub = density_cluster(subset, cluster.eps, cluster.min_pts);
  drop_small_segments(sub, cluster.min_segment_size);

  SegmentAssignment out;
  out.labels.assign(static_cast<std::size_t>(coords.rows()), 0);
  for (std::size_t k = 0; k < non_ground.size(); ++k) out.labels[static_cast<std::size_t>(non_ground[k])] = sub.labels[k];
  out.segment_count = sub.segment_count;
  out.per_frame_views = {out.labels};
  return out;
}

SegmentAssignment segment_aggregate_and_map(const AggregatedCloud& agg, const RansacParams& ransac,
                                            const ClusterParams& cluster) {
  if (agg.size() == 0) throw InvalidArgument("segment_aggregate_and_map: empty aggregate");
  SegmentAssignment out = segment_scan(agg.coords, ransac, cluster);
  out.per_frame_views.assign(agg.frame_sizes.size(), {});
  for (std::size_t f = 0; f < agg.frame_sizes.size(); ++f) {
    out.per_frame_views[f].assign(static_cast<std::size_t>(agg.frame_sizes[f]), 0);
  }
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    out.per_frame_views[static_cast<std::size_t>(agg.origin_frame[i])][static_cast<std::size_t>(agg.origin_index[i])] =
        out.labels[i];
  }
  return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw InvalidArgument("adjusted_rand_index: size mismatch");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto comb2 = [](double x) { return 0.5 * x * (x - 1.0); };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [k, v] : table) index += comb2(v);
  for (const auto& [k, v] : rows) sum_a += comb2(v);
  for (const auto& [k, v] : cols) sum_b += comb2(v);
  const double expected = sum_a * sum_b / comb2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

void write_segment_sidecar(const SegmentAssignment& assignment, const std::filesystem::path& path) {
  detail::BinaryWriter w(kSegmentMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(assignment.labels.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(assignment.segment_count));
  for (int l : assignment.labels) w.put<std::uint32_t>(static_cast<std::uint32_t>(l));
  w.save(path);
}

SegmentAssignment read_segment_sidecar(const std::filesystem::path& path) {
  detail::BinaryReader r(path, kSegmentMagic);
  if (r.remaining() < 8) throw FormatError(FormatErrorCode::malformed_header, path.string());
  const auto n = r.get<std::uint32_t>();
  SegmentAssignment out;
  out.segment_count = static_cast<int>(r.get<std::uint32_t>());
  r.require(static_cast<std::size_t>(n) * 4);
  out.labels.resize(n);
  for (auto& l : out.labels) {
    l = static_cast<int>(r.get<std::uint32_t>());
    if (l > out.segment_count) throw FormatError(FormatErrorCode::label_overflow, path.string());
  }
  out.per_frame_views = {out.labels};
  return out;
}

}  // namespace lad
