#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lad/scene_synth.hpp"

namespace lad {

/// A collection of synthesized scenes, possibly from several sources.
struct Dataset {
  std::vector<Scene> scenes;

  std::vector<SourceProfile> sources() const;
};

inline constexpr int kManifestVersion = 1;

/// Directory of scene `index` inside a dataset tree, e.g. "source1_scene003".
std::string scene_dir_name(const Scene& scene, std::size_t index);

void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_point_cloud(const std::filesystem::path& path);

void write_camera_frame(const CameraFrame& frame, const std::filesystem::path& path);
/// `frame_index` is not part of the binary layout; it comes from the manifest.
CameraFrame read_camera_frame(const std::filesystem::path& path, int frame_index = 0);

/// Writes every frame plus `manifest.json`; returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& directory);
Dataset read_dataset(const std::filesystem::path& directory);

}  // namespace lad
