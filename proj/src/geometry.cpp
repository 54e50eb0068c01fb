#include "lad/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "lad/errors.hpp"
#include "lad/rng.hpp"

namespace lad {

std::vector<PixelProjection> project_points(const PointCloud& cloud, const Mat3& intrinsics, const Pose& lidar_to_camera,
                                            int height, int width) {
  if (std::abs(intrinsics.determinant()) < 1e-12) throw InvalidArgument("project_points: singular intrinsics");
  if (!is_rigid(lidar_to_camera, 1e-6)) throw InvalidArgument("project_points: extrinsics not rigid");
  std::vector<PixelProjection> out(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    out[static_cast<std::size_t>(i)] =
        project_point<double>(cloud.coords.row(i).transpose(), intrinsics, lidar_to_camera, height, width);
  }
  return out;
}

std::vector<PixelProjection> project_points(const PointCloud& cloud, const CameraFrame& frame) {
  return project_points(cloud, frame.intrinsics, frame.extrinsics, frame.height, frame.width);
}

std::pair<int, int> pixel_of(const PixelProjection& p, int height, int width) {
  const int col = std::clamp(static_cast<int>(std::lround(p.u)), 0, width - 1);
  const int row = std::clamp(static_cast<int>(std::lround(p.v)), 0, height - 1);
  return {row, col};
}

PointCloud transform_to_global(const PointCloud& cloud, const Pose& pose) {
  if (!is_rigid(pose, 1e-6)) throw InvalidArgument("transform_to_global: pose is not rigid");
  PointCloud out = cloud;
  const Mat3 rot = pose.topLeftCorner<3, 3>();
  const Vec3 t = pose.topRightCorner<3, 1>();
  out.coords = (cloud.coords * rot.transpose()).rowwise() + t.transpose();
  return out;
}

AggregatedCloud aggregate_frames(const std::vector<PointCloud>& clouds, const std::vector<Pose>& poses) {
  if (clouds.size() != poses.size()) throw InvalidArgument("aggregate_frames: one pose per cloud required");
  AggregatedCloud agg;
  Eigen::Index total = 0;
  for (const auto& c : clouds) total += c.size();
  agg.coords.resize(total, 3);
  agg.origin_frame.reserve(static_cast<std::size_t>(total));
  agg.origin_index.reserve(static_cast<std::size_t>(total));
  Eigen::Index offset = 0;
  for (std::size_t f = 0; f < clouds.size(); ++f) {
    const PointCloud global = transform_to_global(clouds[f], poses[f]);
    agg.coords.middleRows(offset, global.size()) = global.coords;
    for (Eigen::Index i = 0; i < global.size(); ++i) {
      agg.origin_frame.push_back(static_cast<int>(f));
      agg.origin_index.push_back(static_cast<int>(i));
    }
    agg.frame_sizes.push_back(global.size());
    offset += global.size();
  }
  return agg;
}

std::vector<PointsXd> split_by_origin(const AggregatedCloud& agg, const std::vector<Pose>& poses) {
  if (agg.frame_sizes.size() != poses.size()) throw InvalidArgument("split_by_origin: one pose per frame required");
  std::vector<PointsXd> out(poses.size());
  for (std::size_t f = 0; f < poses.size(); ++f) out[f].resize(agg.frame_sizes[f], 3);
  std::vector<Pose> inverses;
  for (const auto& p : poses) inverses.push_back(rigid_inverse(p));
  for (Eigen::Index i = 0; i < agg.size(); ++i) {
    const auto f = static_cast<std::size_t>(agg.origin_frame[static_cast<std::size_t>(i)]);
    const Vec3 g = agg.coords.row(i).transpose();
    const Vec3 local = inverses[f].topLeftCorner<3, 3>() * g + inverses[f].topRightCorner<3, 1>();
    out[f].row(agg.origin_index[static_cast<std::size_t>(i)]) = local.transpose();
  }
  return out;
}

Pose perturb_extrinsics(const Pose& lidar_to_camera, double translation_fraction, double rotation_fraction,
                        std::uint64_t seed) {
  auto gen = rng::make(seed, rng::Stream::misalignment);
  auto random_unit = [&gen]() {
    Vec3 v;
    do {
      v = Vec3(rng::normal(gen), rng::normal(gen), rng::normal(gen));
    } while (v.norm() < 1e-9);
    return Vec3(v.normalized());
  };
  const Vec3 t_dir = random_unit();
  const Vec3 axis = random_unit();
  const double angle = rotation_fraction * M_PI;
  const Vec3 t = lidar_to_camera.topRightCorner<3, 1>();
  Pose delta = Pose::Identity();
  delta.topLeftCorner<3, 3>() = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  delta.topRightCorner<3, 1>() = translation_fraction * t.norm() * t_dir;
  return delta * lidar_to_camera;
}

}  // namespace lad
