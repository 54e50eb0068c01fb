#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "lad/scene_synth.hpp"
#include "lad/types.hpp"

namespace lad {

/// Points closer than this to the camera plane are never valid.
inline constexpr double kNearPlane = 1e-3;

template <typename Scalar>
struct Projection {
  Scalar u = 0;
  Scalar v = 0;
  Scalar depth = 0;
  bool valid = false;
};

/// Pinhole projection of one sensor-frame point:
///   [u, v, 1]^T = (1/z) * K * T_{cam<-lidar} * [x, y, z, 1]^T
/// with z the camera-frame depth. Never divides by a near-zero depth.
template <typename Scalar>
Projection<Scalar> project_point(const Eigen::Matrix<Scalar, 3, 1>& point, const Eigen::Matrix<Scalar, 3, 3>& intrinsics,
                                 const Eigen::Matrix<Scalar, 4, 4>& lidar_to_camera, int height, int width) {
  const Eigen::Matrix<Scalar, 3, 1> cam =
      lidar_to_camera.template topLeftCorner<3, 3>() * point + lidar_to_camera.template topRightCorner<3, 1>();
  Projection<Scalar> out;
  out.depth = cam.z();
  if (std::abs(cam.z()) < Scalar(1e-9)) return out;
  const Eigen::Matrix<Scalar, 3, 1> pix = intrinsics * (cam / cam.z());
  out.u = pix.x();
  out.v = pix.y();
  out.valid = cam.z() > Scalar(kNearPlane) && out.u >= 0 && out.u < Scalar(width) && out.v >= 0 && out.v < Scalar(height);
  return out;
}

using PixelProjection = Projection<double>;

std::vector<PixelProjection> project_points(const PointCloud& cloud, const Mat3& intrinsics, const Pose& lidar_to_camera,
                                            int height, int width);
std::vector<PixelProjection> project_points(const PointCloud& cloud, const CameraFrame& frame);

/// Nearest-integer pixel for a valid projection; u in [W-0.5, W) rounds down into range.
std::pair<int, int> pixel_of(const PixelProjection& p, int height, int width);

/// coords' = R * coords + t. Throws InvalidArgument for non-rigid poses (tolerance 1e-6).
PointCloud transform_to_global(const PointCloud& cloud, const Pose& pose);

struct AggregatedCloud {
  PointsXd coords;
  std::vector<int> origin_frame;
  std::vector<int> origin_index;
  std::vector<Eigen::Index> frame_sizes;

  Eigen::Index size() const { return coords.rows(); }
};

AggregatedCloud aggregate_frames(const std::vector<PointCloud>& clouds, const std::vector<Pose>& poses);

/// Inverse of aggregate_frames for coordinates: per-frame sensor coordinates
/// recovered through each pose's inverse.
std::vector<PointsXd> split_by_origin(const AggregatedCloud& agg, const std::vector<Pose>& poses);

/// Calibration perturbation: translation noise of norm `translation_fraction * |t|`
/// in a random direction, plus a rotation of `rotation_fraction * pi` radians
/// about a random axis, applied in the camera frame.
Pose perturb_extrinsics(const Pose& lidar_to_camera, double translation_fraction, double rotation_fraction,
                        std::uint64_t seed);

}  // namespace lad
