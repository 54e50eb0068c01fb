#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lad/embed.hpp"
#include "lad/errors.hpp"
#include "lad/eval.hpp"
#include "lad/superpixels.hpp"
#include "lad/train.hpp"

namespace lad {

/// Invalid or unknown configuration entries.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct CorpusConfig {
  std::vector<int> sources{1, 2};  // 1 = profile A, 2 = profile B
  int scenes_per_source = 10;
  int frames_per_scene = 2;
  int probe_scenes_per_source = 4;
  int azimuth_count = 360;
  int image_height = 96;
  int image_width = 288;
};

enum class SuperpixelMode { semantic, slic, file };

struct SuperpixelConfig {
  SuperpixelMode mode = SuperpixelMode::semantic;
  SlicParams slic;
  std::string file_dir;  // file mode: <file_dir>/<scene dir>/frame<k>.ladsp
};

struct GeosegConfig {
  int ransac_iterations = 100;
  double inlier_threshold = 0.1;
  double eps = 0.5;
  int min_pts = 5;
  int min_segment_size = 5;
};

struct MisalignConfig {
  double translation = 0.0;
  double rotation = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  int threads = 1;
  CorpusConfig corpus;
  SuperpixelConfig superpixels;
  GeosegConfig geoseg;
  EmbedDims embed;
  TrainConfig train;  // train.loss holds the loss section
  ProbeConfig probe;
  MisalignConfig misalign;
};

/// Parses a JSON document on top of the defaults. Unknown keys at any level
/// and out-of-range values throw ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every field, defaults included, as a JSON document.
std::string dump_run_config(const RunConfig& cfg);
void validate(const RunConfig& cfg);

}  // namespace lad
