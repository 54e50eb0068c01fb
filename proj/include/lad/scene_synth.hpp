#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lad/types.hpp"

namespace lad {

enum class ShapeKind : std::uint8_t { box = 0, cylinder = 1 };

/// An axis-aligned box or vertical cylinder. `center` is the geometric
/// center at frame 0; for cylinders the radius is size.x / 2 and the height
/// is size.z.
struct ObjectSpec {
  ShapeKind kind = ShapeKind::box;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  int semantic_class = 1;
  Vec3 velocity = Vec3::Zero();  // meters per frame
};

struct SourceProfile {
  int source_id = 1;
  double intensity_low = 0.0;
  double intensity_high = 255.0;
  int beam_count = 32;
  double dropout_rate = 0.0;
};

/// The two profiles shipped by default: A (0..255 intensity, 32 beams) and
/// B (0..1 intensity, 64 beams).
SourceProfile source_profile_a();
SourceProfile source_profile_b();

struct CameraModel {
  Mat3 intrinsics = Mat3::Identity();
  int height = 0;
  int width = 0;
  Pose lidar_to_camera = Pose::Identity();
};

/// Forward-looking pinhole camera mounted near the LiDAR, looking along +x.
CameraModel default_camera(int height = 96, int width = 288);

struct SceneSpec {
  std::uint64_t rng_seed = 0;
  int num_frames = 2;
  std::vector<ObjectSpec> objects;
  double ground_extent = 60.0;
  std::vector<Pose> ego_trajectory;  // world <- lidar, one per frame
  std::vector<double> beam_elevations;
  int azimuth_count = 360;
  CameraModel camera = default_camera();
  SourceProfile source_profile = source_profile_a();
};

/// Evenly spaced elevations in [low, high] radians.
std::vector<double> linear_elevations(int count, double low, double high);

/// Throws InvalidArgument when a structural invariant is violated.
void validate(const SceneSpec& spec);

struct PointCloud {
  PointsXd coords;  // N x 3, sensor frame
  Mat features;     // N x L
  int timestamp = 0;
  int source_id = 0;
  std::vector<std::uint16_t> gt_semantic;
  std::vector<std::uint32_t> gt_instance;

  Eigen::Index size() const { return coords.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
};

struct CameraFrame {
  int height = 0;
  int width = 0;
  Mat rgb;  // (H*W) x 3, row-major pixel order, values in [0, 1]
  std::vector<std::uint32_t> gt_mask;
  Mat3 intrinsics = Mat3::Identity();
  Pose extrinsics = Pose::Identity();  // lidar -> camera
  int frame_index = 0;

  std::size_t pixel(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col);
  }
};

struct Frame {
  PointCloud cloud;
  CameraFrame camera;
};

/// Instance ids: 0 is "no surface" (sky), 1 is the ground, object k maps to k + 2.
inline constexpr std::uint32_t kSkyInstance = 0;
inline constexpr std::uint32_t kGroundInstance = 1;
inline constexpr std::uint16_t kGroundClass = 0;

struct Scene {
  std::vector<Frame> frames;
  std::vector<Pose> poses;  // world <- lidar
  std::map<std::uint32_t, std::uint16_t> instance_classes;
  std::vector<double> beam_elevations;
  SourceProfile source_profile;
};

/// Ray-casts every frame of the scene. Coordinates, features and colors are
/// rounded to f32 precision so the binary formats round-trip exactly.
Scene synthesize_scene(const SceneSpec& spec);

/// Number of rays of `spec` surviving sensor dropout, for diagnostics.
std::size_t ray_count(const SceneSpec& spec);

/// Per-class intensity base in [0, 1].
double class_intensity_base(int semantic_class);

/// A randomized driving scene: ground plus 6..10 objects from four classes
/// (car, truck, pedestrian, pole), ego moving forward 1 m/frame.
SceneSpec random_scene_spec(std::uint64_t seed, const SourceProfile& profile, int num_frames = 2,
                            int azimuth_count = 360);

inline constexpr int kNumSemanticClasses = 5;
const std::vector<std::string>& class_names();

}  // namespace lad
