#include "lad/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lad/errors.hpp"
#include "lad/rng.hpp"

namespace lad {
namespace {

constexpr double kMaxRange = 80.0;
constexpr double kMinHit = 1e-6;
constexpr double kIntensityNoise = 0.30;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  std::uint32_t instance = kSkyInstance;
  std::uint16_t semantic = kGroundClass;
  Vec3 normal = Vec3::UnitZ();
};

struct Primitive {
  ShapeKind kind;
  Vec3 center;
  Vec3 size;
  std::uint32_t instance;
  std::uint16_t semantic;
};

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void intersect_ground(const Vec3& o, const Vec3& d, double extent, Hit& best) {
  if (extent <= 0.0 || d.z() >= 0.0) return;
  const double t = -o.z() / d.z();
  if (t <= kMinHit || t >= best.t) return;
  const Vec3 p = o + t * d;
  if (std::abs(p.x()) > extent || std::abs(p.y()) > extent) return;
  best = Hit{t, kGroundInstance, kGroundClass, Vec3::UnitZ()};
}

void intersect_box(const Vec3& o, const Vec3& d, const Primitive& box, Hit& best) {
  const Vec3 lo = box.center - 0.5 * box.size;
  const Vec3 hi = box.center + 0.5 * box.size;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int near_axis = -1;
  double near_sign = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(d[axis]) < 1e-15) {
      if (o[axis] < lo[axis] || o[axis] > hi[axis]) return;
      continue;
    }
    double t0 = (lo[axis] - o[axis]) / d[axis];
    double t1 = (hi[axis] - o[axis]) / d[axis];
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      near_axis = axis;
      near_sign = sign;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return;
  }
  if (near_axis < 0 || t_near <= kMinHit || t_near >= best.t) return;
  Vec3 n = Vec3::Zero();
  n[near_axis] = near_sign;
  best = Hit{t_near, box.instance, box.semantic, n};
}

void intersect_cylinder(const Vec3& o, const Vec3& d, const Primitive& cyl, Hit& best) {
  const double r = 0.5 * cyl.size.x();
  const double z0 = cyl.center.z() - 0.5 * cyl.size.z();
  const double z1 = cyl.center.z() + 0.5 * cyl.size.z();
  const double ox = o.x() - cyl.center.x();
  const double oy = o.y() - cyl.center.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-18) {
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double c = ox * ox + oy * oy - r * r;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (t <= kMinHit || t >= best.t) continue;
        const double z = o.z() + t * d.z();
        if (z < z0 || z > z1) continue;
        const Vec3 n(ox + t * d.x(), oy + t * d.y(), 0.0);
        best = Hit{t, cyl.instance, cyl.semantic, n.normalized()};
        break;
      }
    }
  }
  if (std::abs(d.z()) > 1e-15) {
    for (double zc : {z0, z1}) {
      const double t = (zc - o.z()) / d.z();
      if (t <= kMinHit || t >= best.t) continue;
      const double px = ox + t * d.x();
      const double py = oy + t * d.y();
      if (px * px + py * py > r * r) continue;
      best = Hit{t, cyl.instance, cyl.semantic, Vec3(0, 0, zc == z1 ? 1.0 : -1.0)};
    }
  }
}

Hit cast(const Vec3& o, const Vec3& d, const std::vector<Primitive>& prims, double extent) {
  Hit best;
  best.t = kMaxRange;
  intersect_ground(o, d, extent, best);
  for (const auto& p : prims) {
    if (p.kind == ShapeKind::box) {
      intersect_box(o, d, p, best);
    } else {
      intersect_cylinder(o, d, p, best);
    }
  }
  if (best.instance == kSkyInstance) best.t = std::numeric_limits<double>::infinity();
  return best;
}

std::vector<Primitive> primitives_at(const SceneSpec& spec, int frame) {
  std::vector<Primitive> prims;
  prims.reserve(spec.objects.size());
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    const auto& obj = spec.objects[k];
    prims.push_back(Primitive{obj.kind, obj.center + static_cast<double>(frame) * obj.velocity, obj.size,
                              static_cast<std::uint32_t>(k + 2), static_cast<std::uint16_t>(obj.semantic_class)});
  }
  return prims;
}

Vec3 class_color(int semantic_class) {
  switch (semantic_class) {
    case 0: return {0.42, 0.42, 0.42};
    case 1: return {0.80, 0.12, 0.10};
    case 2: return {0.12, 0.30, 0.80};
    case 3: return {0.90, 0.78, 0.20};
    case 4: return {0.20, 0.65, 0.22};
    default: {
      const double h = std::fmod(0.37 * semantic_class, 1.0);
      return {0.3 + 0.6 * h, 0.9 - 0.6 * h, 0.5};
    }
  }
}

PointCloud cast_lidar(const SceneSpec& spec, int frame, const std::vector<Primitive>& prims) {
  const Pose& pose = spec.ego_trajectory[static_cast<std::size_t>(frame)];
  const Mat3 rot = pose.topLeftCorner<3, 3>();
  const Vec3 origin = pose.topRightCorner<3, 1>();
  const auto& prof = spec.source_profile;
  auto dropout_gen = rng::make(spec.rng_seed, rng::Stream::dropout, static_cast<std::uint64_t>(frame));
  auto intensity_gen = rng::make(spec.rng_seed, rng::Stream::intensity, static_cast<std::uint64_t>(frame));

  std::vector<Eigen::Vector3f> local;
  std::vector<double> intensity, height;
  std::vector<std::uint16_t> sem;
  std::vector<std::uint32_t> inst;
  const double span = prof.intensity_high - prof.intensity_low;
  for (double elevation : spec.beam_elevations) {
    for (int a = 0; a < spec.azimuth_count; ++a) {
      const double dropped = rng::uniform01(dropout_gen);
      if (dropped < prof.dropout_rate) continue;
      const double az = -M_PI + 2.0 * M_PI * a / spec.azimuth_count;
      const Vec3 dir_local(std::cos(elevation) * std::cos(az), std::cos(elevation) * std::sin(az),
                           std::sin(elevation));
      const Hit hit = cast(origin, rot * dir_local, prims, spec.ground_extent);
      if (!std::isfinite(hit.t)) continue;
      const Vec3 p = hit.t * dir_local;
      local.push_back(p.cast<float>());
      const double base = class_intensity_base(hit.semantic);
      const double noisy = std::clamp(base + rng::uniform(intensity_gen, -kIntensityNoise, kIntensityNoise), 0.0, 1.0);
      intensity.push_back(to_f32(prof.intensity_low + span * noisy));
      height.push_back(to_f32((rot * local.back().cast<double>() + origin).z()));
      sem.push_back(hit.semantic);
      inst.push_back(hit.instance);
    }
  }
  PointCloud cloud;
  const auto n = static_cast<Eigen::Index>(local.size());
  cloud.coords.resize(n, 3);
  cloud.features.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    cloud.coords.row(i) = local[static_cast<std::size_t>(i)].cast<double>().transpose();
    cloud.features(i, 0) = intensity[static_cast<std::size_t>(i)];
    cloud.features(i, 1) = height[static_cast<std::size_t>(i)];
  }
  cloud.timestamp = frame;
  cloud.source_id = prof.source_id;
  cloud.gt_semantic = std::move(sem);
  cloud.gt_instance = std::move(inst);
  return cloud;
}

CameraFrame render_camera(const SceneSpec& spec, int frame, const std::vector<Primitive>& prims) {
  const auto& cam = spec.camera;
  const Pose world_from_camera = spec.ego_trajectory[static_cast<std::size_t>(frame)] * rigid_inverse(cam.lidar_to_camera);
  const Mat3 rot = world_from_camera.topLeftCorner<3, 3>();
  const Vec3 origin = world_from_camera.topRightCorner<3, 1>();
  const Mat3 k_inv = cam.intrinsics.inverse();
  const Vec3 light = Vec3(0.3, 0.5, 0.8).normalized();

  std::map<std::uint32_t, Vec3> tint;
  auto tint_gen = rng::make(spec.rng_seed, rng::Stream::scene, 500);
  for (const auto& p : prims) {
    tint[p.instance] = Vec3(rng::uniform(tint_gen, -0.08, 0.08), rng::uniform(tint_gen, -0.08, 0.08),
                            rng::uniform(tint_gen, -0.08, 0.08));
  }
  auto noise_gen = rng::make(spec.rng_seed, rng::Stream::scene, 1000 + static_cast<std::uint64_t>(frame));

  CameraFrame out;
  out.height = cam.height;
  out.width = cam.width;
  out.rgb.resize(static_cast<Eigen::Index>(cam.height) * cam.width, 3);
  out.gt_mask.assign(static_cast<std::size_t>(cam.height) * static_cast<std::size_t>(cam.width), kSkyInstance);
  out.intrinsics = cam.intrinsics;
  out.extrinsics = cam.lidar_to_camera;
  out.frame_index = frame;
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const Vec3 dir = rot * (k_inv * Vec3(c, r, 1.0)).normalized();
      const Hit hit = cast(origin, dir, prims, spec.ground_extent);
      Vec3 color;
      if (!std::isfinite(hit.t)) {
        color = Vec3(0.62, 0.80, 0.98);
      } else {
        const double shade = 0.55 + 0.45 * std::abs(hit.normal.dot(light));
        const auto it = tint.find(hit.instance);
        color = shade * (class_color(hit.semantic) + (it == tint.end() ? Vec3::Zero() : it->second));
        out.gt_mask[out.pixel(r, c)] = hit.instance;
      }
      for (int ch = 0; ch < 3; ++ch) {
        const double v = color[ch] + rng::uniform(noise_gen, -0.02, 0.02);
        out.rgb(static_cast<Eigen::Index>(out.pixel(r, c)), ch) = to_f32(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace

SourceProfile source_profile_a() { return SourceProfile{1, 0.0, 255.0, 32, 0.0}; }
SourceProfile source_profile_b() { return SourceProfile{2, 0.0, 1.0, 64, 0.0}; }

CameraModel default_camera(int height, int width) {
  CameraModel cam;
  cam.height = height;
  cam.width = width;
  const double f = 0.5 * width;
  cam.intrinsics << f, 0, 0.5 * (width - 1), 0, f, 0.5 * (height - 1), 0, 0, 1;
  Mat3 rot;
  rot << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  const Vec3 camera_in_lidar(0.05, 0.0, 0.0);
  cam.lidar_to_camera.setIdentity();
  cam.lidar_to_camera.topLeftCorner<3, 3>() = rot;
  cam.lidar_to_camera.topRightCorner<3, 1>() = -rot * camera_in_lidar;
  return cam;
}

std::vector<double> linear_elevations(int count, double low, double high) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = count == 1 ? low : low + (high - low) * i / (count - 1);
  }
  return out;
}

double class_intensity_base(int semantic_class) {
  static constexpr double kBase[] = {0.20, 0.40, 0.55, 0.70, 0.85};
  if (semantic_class >= 0 && semantic_class < 5) return kBase[semantic_class];
  return std::fmod(0.13 * semantic_class, 1.0);
}

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names{"ground", "car", "truck", "pedestrian", "pole"};
  return names;
}

void validate(const SceneSpec& spec) {
  if (spec.num_frames < 1) throw InvalidArgument("scene: num_frames must be >= 1");
  if (spec.azimuth_count < 8) throw InvalidArgument("scene: azimuth_count must be >= 8");
  if (spec.ego_trajectory.size() != static_cast<std::size_t>(spec.num_frames)) {
    throw InvalidArgument("scene: ego_trajectory needs one pose per frame");
  }
  for (const auto& pose : spec.ego_trajectory) {
    if (!is_rigid(pose, 1e-9)) throw InvalidArgument("scene: ego pose is not rigid");
  }
  if (!is_rigid(spec.camera.lidar_to_camera, 1e-9)) throw InvalidArgument("scene: extrinsics not rigid");
  if (spec.camera.height <= 0 || spec.camera.width <= 0) throw InvalidArgument("scene: empty camera");
  if (spec.camera.intrinsics(2, 2) != 1.0) throw InvalidArgument("scene: intrinsics[2][2] must be 1");
  for (const auto& obj : spec.objects) {
    if (obj.semantic_class < 1) throw InvalidArgument("scene: object class ids must be >= 1");
    if ((obj.size.array() <= 0.0).any()) throw InvalidArgument("scene: object size must be positive");
  }
  const auto& prof = spec.source_profile;
  if (!(prof.intensity_high > prof.intensity_low)) throw InvalidArgument("scene: intensity range empty");
  if (prof.dropout_rate < 0.0 || prof.dropout_rate >= 1.0) throw InvalidArgument("scene: dropout_rate not in [0,1)");
  if (spec.beam_elevations.empty()) throw InvalidArgument("scene: no beams");
  if (spec.objects.empty() && spec.ground_extent <= 0.0) {
    throw InvalidArgument("scene: degenerate spec (no objects and zero ground extent)");
  }
}

Scene synthesize_scene(const SceneSpec& spec) {
  validate(spec);
  Scene scene;
  scene.poses = spec.ego_trajectory;
  scene.beam_elevations = spec.beam_elevations;
  scene.source_profile = spec.source_profile;
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    scene.instance_classes[static_cast<std::uint32_t>(k + 2)] = static_cast<std::uint16_t>(spec.objects[k].semantic_class);
  }
  scene.instance_classes[kGroundInstance] = kGroundClass;
  for (int f = 0; f < spec.num_frames; ++f) {
    const auto prims = primitives_at(spec, f);
    scene.frames.push_back(Frame{cast_lidar(spec, f, prims), render_camera(spec, f, prims)});
  }
  return scene;
}

std::size_t ray_count(const SceneSpec& spec) {
  return spec.beam_elevations.size() * static_cast<std::size_t>(spec.azimuth_count);
}

SceneSpec random_scene_spec(std::uint64_t seed, const SourceProfile& profile, int num_frames, int azimuth_count) {
  SceneSpec spec;
  spec.rng_seed = seed;
  spec.num_frames = num_frames;
  spec.azimuth_count = azimuth_count;
  spec.source_profile = profile;
  spec.beam_elevations = linear_elevations(profile.beam_count, -24.0 * M_PI / 180.0, -2.0 * M_PI / 180.0);
  spec.ground_extent = 60.0;
  for (int f = 0; f < num_frames; ++f) {
    Pose pose = Pose::Identity();
    pose(0, 3) = 1.0 * f;
    pose(2, 3) = 1.75;
    spec.ego_trajectory.push_back(pose);
  }

  auto gen = rng::make(seed, rng::Stream::scene, 0);
  const int count = 6 + static_cast<int>(rng::below(gen, 5));
  std::vector<std::pair<Vec3, double>> footprints;  // center, radius
  int attempts = 0;
  while (static_cast<int>(spec.objects.size()) < count && attempts++ < 1000) {
    ObjectSpec obj;
    obj.semantic_class = 1 + static_cast<int>(rng::below(gen, 4));
    const double jitter = rng::uniform(gen, 0.9, 1.1);
    switch (obj.semantic_class) {
      case 1: obj.kind = ShapeKind::box; obj.size = Vec3(4.2, 1.8, 1.5) * jitter; break;
      case 2: obj.kind = ShapeKind::box; obj.size = Vec3(8.0, 2.5, 3.2) * jitter; break;
      case 3: obj.kind = ShapeKind::cylinder; obj.size = Vec3(0.6, 0.6, 1.75) * jitter; break;
      default: obj.kind = ShapeKind::cylinder; obj.size = Vec3(0.35, 0.35, 5.0) * jitter; break;
    }
    const double x = rng::uniform(gen, 6.0, 30.0);
    const double y = rng::uniform(gen, -0.8, 0.8) * x;
    obj.center = Vec3(x, y, 0.5 * obj.size.z());
    const double radius = 0.5 * obj.size.head<2>().norm();
    bool clear = true;
    for (const auto& [c, r] : footprints) {
      if ((c.head<2>() - obj.center.head<2>()).norm() < r + radius + 1.5) clear = false;
    }
    if (!clear) continue;
    footprints.emplace_back(obj.center, radius);
    spec.objects.push_back(obj);
  }
  return spec;
}

}  // namespace lad
