#include "lad/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "binary_io.hpp"
#include "json.hpp"
#include "lad/errors.hpp"

namespace lad {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr auto kCloudMagic = detail::make_magic("LADPC1");
constexpr auto kCameraMagic = detail::make_magic("LADIM1");

template <typename Derived>
json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
  json arr = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
  }
  return arr;
}

template <int Rows, int Cols>
Eigen::Matrix<double, Rows, Cols> matrix_from_json(const json& arr, const std::string& what) {
  if (!arr.is_array() || arr.size() != static_cast<std::size_t>(Rows * Cols)) {
    throw FormatError(FormatErrorCode::malformed_header, "manifest field " + what + " has wrong length");
  }
  Eigen::Matrix<double, Rows, Cols> m;
  for (int r = 0; r < Rows; ++r) {
    for (int c = 0; c < Cols; ++c) m(r, c) = arr.at(static_cast<std::size_t>(r * Cols + c)).get<double>();
  }
  return m;
}

json profile_to_json(const SourceProfile& p) {
  return json{{"source_id", p.source_id},
              {"intensity_low", p.intensity_low},
              {"intensity_high", p.intensity_high},
              {"beam_count", p.beam_count},
              {"dropout_rate", p.dropout_rate}};
}

SourceProfile profile_from_json(const json& j) {
  SourceProfile p;
  p.source_id = j.at("source_id").get<int>();
  p.intensity_low = j.at("intensity_low").get<double>();
  p.intensity_high = j.at("intensity_high").get<double>();
  p.beam_count = j.at("beam_count").get<int>();
  p.dropout_rate = j.at("dropout_rate").get<double>();
  return p;
}

}  // namespace

std::string scene_dir_name(const Scene& scene, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "source%d_scene%03zu", scene.source_profile.source_id, index);
  return buf;
}

const char* to_string(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::bad_magic: return "bad magic";
    case FormatErrorCode::version_mismatch: return "version mismatch";
    case FormatErrorCode::truncated: return "truncated payload";
    case FormatErrorCode::malformed_header: return "malformed header";
    case FormatErrorCode::label_overflow: return "label overflow";
    case FormatErrorCode::missing_frame: return "missing frame";
    case FormatErrorCode::io_failure: return "io failure";
  }
  return "unknown";
}

std::vector<SourceProfile> Dataset::sources() const {
  std::vector<SourceProfile> out;
  std::set<int> seen;
  for (const auto& s : scenes) {
    if (seen.insert(s.source_profile.source_id).second) out.push_back(s.source_profile);
  }
  return out;
}

void write_point_cloud(const PointCloud& cloud, const fs::path& path) {
  detail::BinaryWriter w(kCloudMagic);
  const auto n = static_cast<std::uint32_t>(cloud.size());
  w.put<std::uint32_t>(n);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cloud.feature_dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cloud.source_id));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cloud.timestamp));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) w.put<float>(static_cast<float>(cloud.coords(i, c)));
  }
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (Eigen::Index c = 0; c < cloud.feature_dim(); ++c) w.put<float>(static_cast<float>(cloud.features(i, c)));
  }
  for (auto s : cloud.gt_semantic) w.put<std::uint16_t>(s);
  for (auto s : cloud.gt_instance) w.put<std::uint32_t>(s);
  w.save(path);
}

PointCloud read_point_cloud(const fs::path& path) {
  detail::BinaryReader r(path, kCloudMagic);
  if (r.remaining() < 16) throw FormatError(FormatErrorCode::malformed_header, path.string());
  const auto n = r.get<std::uint32_t>();
  const auto l = r.get<std::uint32_t>();
  PointCloud cloud;
  cloud.source_id = static_cast<int>(r.get<std::uint32_t>());
  cloud.timestamp = static_cast<int>(r.get<std::uint32_t>());
  r.require(static_cast<std::size_t>(n) * (12 + 4 * static_cast<std::size_t>(l) + 2 + 4));
  cloud.coords.resize(n, 3);
  cloud.features.resize(n, l);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) cloud.coords(i, c) = r.get<float>();
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t c = 0; c < l; ++c) cloud.features(i, c) = r.get<float>();
  }
  cloud.gt_semantic.resize(n);
  cloud.gt_instance.resize(n);
  for (auto& s : cloud.gt_semantic) s = r.get<std::uint16_t>();
  for (auto& s : cloud.gt_instance) s = r.get<std::uint32_t>();
  return cloud;
}

void write_camera_frame(const CameraFrame& frame, const fs::path& path) {
  detail::BinaryWriter w(kCameraMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(frame.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(frame.width));
  for (Eigen::Index p = 0; p < frame.rgb.rows(); ++p) {
    for (int c = 0; c < 3; ++c) w.put<float>(static_cast<float>(frame.rgb(p, c)));
  }
  for (auto id : frame.gt_mask) w.put<std::uint32_t>(id);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.put<double>(frame.intrinsics(r, c));
  }
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) w.put<double>(frame.extrinsics(r, c));
  }
  w.save(path);
}

CameraFrame read_camera_frame(const fs::path& path, int frame_index) {
  detail::BinaryReader r(path, kCameraMagic);
  if (r.remaining() < 8) throw FormatError(FormatErrorCode::malformed_header, path.string());
  CameraFrame frame;
  frame.height = static_cast<int>(r.get<std::uint32_t>());
  frame.width = static_cast<int>(r.get<std::uint32_t>());
  const std::size_t pixels = static_cast<std::size_t>(frame.height) * static_cast<std::size_t>(frame.width);
  r.require(pixels * 16 + 25 * 8);
  frame.rgb.resize(static_cast<Eigen::Index>(pixels), 3);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < 3; ++c) frame.rgb(static_cast<Eigen::Index>(p), c) = r.get<float>();
  }
  frame.gt_mask.resize(pixels);
  for (auto& id : frame.gt_mask) id = r.get<std::uint32_t>();
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) frame.intrinsics(i, c) = r.get<double>();
  }
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 4; ++c) frame.extrinsics(i, c) = r.get<double>();
  }
  frame.frame_index = frame_index;
  return frame;
}

fs::path write_dataset(const Dataset& dataset, const fs::path& directory) {
  fs::create_directories(directory);
  json manifest;
  manifest["format"] = "lad-dataset";
  manifest["version"] = kManifestVersion;
  json sources = json::array();
  for (const auto& p : dataset.sources()) sources.push_back(profile_to_json(p));
  manifest["sources"] = sources;
  json scenes = json::array();
  for (std::size_t s = 0; s < dataset.scenes.size(); ++s) {
    const Scene& scene = dataset.scenes[s];
    const std::string dir = scene_dir_name(scene, s);
    fs::create_directories(directory / dir);
    json js;
    js["name"] = dir;
    js["source_id"] = scene.source_profile.source_id;
    js["beam_elevations"] = scene.beam_elevations;
    json classes = json::array();
    for (const auto& [inst, cls] : scene.instance_classes) classes.push_back({inst, cls});
    js["instance_classes"] = classes;
    json frames = json::array();
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      const std::string stem = dir + "/frame" + std::to_string(f);
      write_point_cloud(scene.frames[f].cloud, directory / (stem + ".ladpc"));
      write_camera_frame(scene.frames[f].camera, directory / (stem + ".ladim"));
      frames.push_back({{"timestamp", scene.frames[f].cloud.timestamp},
                        {"cloud", stem + ".ladpc"},
                        {"camera", stem + ".ladim"},
                        {"pose", matrix_to_json(scene.poses[f])}});
    }
    js["frames"] = frames;
    scenes.push_back(js);
  }
  manifest["scenes"] = scenes;
  const fs::path path = directory / "manifest.json";
  std::ofstream out(path);
  if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot write " + path.string());
  out << manifest.dump(1) << "\n";
  return path;
}

Dataset read_dataset(const fs::path& directory) {
  const fs::path path = directory / "manifest.json";
  std::ifstream in(path);
  if (!in) throw FormatError(FormatErrorCode::io_failure, "no manifest at " + path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(FormatErrorCode::malformed_header, std::string("manifest: ") + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != "lad-dataset") {
      throw FormatError(FormatErrorCode::bad_magic, "manifest format tag");
    }
    if (manifest.at("version").get<int>() != kManifestVersion) {
      throw FormatError(FormatErrorCode::version_mismatch, "manifest version");
    }
    std::map<int, SourceProfile> profiles;
    for (const auto& jp : manifest.at("sources")) {
      const auto p = profile_from_json(jp);
      profiles[p.source_id] = p;
    }
    Dataset dataset;
    for (const auto& js : manifest.at("scenes")) {
      Scene scene;
      const int source_id = js.at("source_id").get<int>();
      if (!profiles.count(source_id)) throw FormatError(FormatErrorCode::malformed_header, "unknown source id");
      scene.source_profile = profiles.at(source_id);
      scene.beam_elevations = js.at("beam_elevations").get<std::vector<double>>();
      for (const auto& pair : js.at("instance_classes")) {
        scene.instance_classes[pair.at(0).get<std::uint32_t>()] = pair.at(1).get<std::uint16_t>();
      }
      for (const auto& jf : js.at("frames")) {
        const fs::path cloud_path = directory / jf.at("cloud").get<std::string>();
        const fs::path camera_path = directory / jf.at("camera").get<std::string>();
        for (const auto& p : {cloud_path, camera_path}) {
          if (!fs::exists(p)) throw FormatError(FormatErrorCode::missing_frame, p.string());
        }
        const int timestamp = jf.at("timestamp").get<int>();
        Frame frame{read_point_cloud(cloud_path), read_camera_frame(camera_path, timestamp)};
        scene.frames.push_back(std::move(frame));
        scene.poses.push_back(matrix_from_json<4, 4>(jf.at("pose"), "pose"));
      }
      dataset.scenes.push_back(std::move(scene));
    }
    return dataset;
  } catch (const json::exception& e) {
    throw FormatError(FormatErrorCode::malformed_header, std::string("manifest: ") + e.what());
  }
}

}  // namespace lad
