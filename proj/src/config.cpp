#include "lad/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace lad {

namespace {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

/// Reads named keys from one object and rejects the rest.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key: " + path_ + "." + key);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const Json& at(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& value, const std::vector<std::pair<const char*, E>>& table, const std::string& where) {
  for (const auto& [name, e] : table) {
    if (value == name) return e;
  }
  throw ConfigError(where + ": unknown value '" + value + "'");
}

const std::vector<std::pair<const char*, SuperpixelMode>> kSuperpixelModes{
    {"semantic", SuperpixelMode::semantic}, {"slic", SuperpixelMode::slic}, {"file", SuperpixelMode::file}};
const std::vector<std::pair<const char*, P2sMode>> kP2sModes{{"against_clusters", P2sMode::against_clusters},
                                                             {"literal_sampled", P2sMode::literal_sampled}};
const std::vector<std::pair<const char*, OptimizerKind>> kOptimizers{{"adam", OptimizerKind::adam},
                                                                     {"sgd_momentum", OptimizerKind::sgd_momentum}};
const std::vector<std::pair<const char*, BudgetSampling>> kSampling{{"frame", BudgetSampling::frame},
                                                                    {"point", BudgetSampling::point}};

template <typename E>
std::string enum_name(E e, const std::vector<std::pair<const char*, E>>& table) {
  for (const auto& [name, v] : table) {
    if (v == e) return name;
  }
  return "";
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void validate(const RunConfig& c) {
  require(c.threads >= 1, "threads must be >= 1");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  require(!c.corpus.sources.empty(), "corpus.sources must not be empty");
  std::set<int> seen;
  for (int s : c.corpus.sources) {
    require(s == 1 || s == 2, "corpus.sources entries must be 1 or 2");
    require(seen.insert(s).second, "corpus.sources entries must be distinct");
  }
  require(c.corpus.scenes_per_source >= 1, "corpus.scenes_per_source must be >= 1");
  require(c.corpus.frames_per_scene >= 2, "corpus.frames_per_scene must be >= 2");
  require(c.corpus.probe_scenes_per_source >= 1, "corpus.probe_scenes_per_source must be >= 1");
  require(c.corpus.azimuth_count >= 8, "corpus.azimuth_count must be >= 8");
  require(c.corpus.image_height >= 8 && c.corpus.image_width >= 8, "corpus image must be at least 8x8");
  require(c.superpixels.slic.target_count >= 1, "superpixels.slic.target_count must be >= 1");
  require(c.superpixels.slic.compactness > 0.0, "superpixels.slic.compactness must be positive");
  require(c.superpixels.slic.iterations >= 1, "superpixels.slic.iterations must be >= 1");
  require(c.superpixels.mode != SuperpixelMode::file || !c.superpixels.file_dir.empty(),
          "superpixels.file_dir is required in file mode");
  require(c.geoseg.ransac_iterations >= 1, "geoseg.ransac_iterations must be >= 1");
  require(c.geoseg.inlier_threshold > 0.0, "geoseg.inlier_threshold must be positive");
  require(c.geoseg.eps > 0.0, "geoseg.eps must be positive");
  require(c.geoseg.min_pts >= 1, "geoseg.min_pts must be >= 1");
  require(c.geoseg.min_segment_size >= 1, "geoseg.min_segment_size must be >= 1");
  require(c.train.temporal_gap < c.corpus.frames_per_scene, "train.temporal_gap must be below corpus.frames_per_scene");
  require(c.misalign.translation >= 0.0 && c.misalign.rotation >= 0.0, "misalign levels must be non-negative");
  try {
    validate(c.train);
    validate(c.probe);
    ImageEncoder::create(c.embed, 0);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  {
    Section s(root, "config");
    s.get("seed", c.seed);
    s.get("output_dir", c.output_dir);
    s.get("threads", c.threads);
    if (s.has("corpus")) {
      Section t(s.at("corpus"), s.child("corpus"));
      t.get("sources", c.corpus.sources);
      t.get("scenes_per_source", c.corpus.scenes_per_source);
      t.get("frames_per_scene", c.corpus.frames_per_scene);
      t.get("probe_scenes_per_source", c.corpus.probe_scenes_per_source);
      t.get("azimuth_count", c.corpus.azimuth_count);
      t.get("image_height", c.corpus.image_height);
      t.get("image_width", c.corpus.image_width);
    }
    if (s.has("superpixels")) {
      Section t(s.at("superpixels"), s.child("superpixels"));
      std::string mode = enum_name(c.superpixels.mode, kSuperpixelModes);
      t.get("mode", mode);
      c.superpixels.mode = parse_enum(mode, kSuperpixelModes, t.child("mode"));
      t.get("file_dir", c.superpixels.file_dir);
      if (t.has("slic")) {
        Section u(t.at("slic"), t.child("slic"));
        u.get("target_count", c.superpixels.slic.target_count);
        u.get("compactness", c.superpixels.slic.compactness);
        u.get("iterations", c.superpixels.slic.iterations);
      }
    }
    if (s.has("geoseg")) {
      Section t(s.at("geoseg"), s.child("geoseg"));
      t.get("ransac_iterations", c.geoseg.ransac_iterations);
      t.get("inlier_threshold", c.geoseg.inlier_threshold);
      t.get("eps", c.geoseg.eps);
      t.get("min_pts", c.geoseg.min_pts);
      t.get("min_segment_size", c.geoseg.min_segment_size);
    }
    if (s.has("embed")) {
      Section t(s.at("embed"), s.child("embed"));
      t.get("hidden", c.embed.hidden);
      t.get("point_dim", c.embed.point_dim);
      t.get("embed_dim", c.embed.embed_dim);
      t.get("image_dim", c.embed.image_dim);
      t.get("stride", c.embed.stride);
      t.get("beta", c.embed.beta);
      t.get("voxel", c.embed.voxel);
    }
    if (s.has("loss")) {
      auto& l = c.train.loss;
      Section t(s.at("loss"), s.child("loss"));
      t.get("temperature", l.temperature);
      std::string mode = enum_name(l.p2s_mode, kP2sModes);
      t.get("p2s_mode", mode);
      l.p2s_mode = parse_enum(mode, kP2sModes, t.child("p2s_mode"));
      t.get("baseline_slic", l.baseline_slic);
      if (t.has("weights")) {
        Section u(t.at("weights"), t.child("weights"));
        u.get("vfm", l.weights.vfm);
        u.get("tmp", l.weights.tmp);
        u.get("p2s", l.weights.p2s);
        u.get("cdp", l.weights.cdp);
      }
    }
    if (s.has("train")) {
      Section t(s.at("train"), s.child("train"));
      t.get("steps", c.train.steps);
      t.get("learning_rate", c.train.learning_rate);
      std::string opt = enum_name(c.train.optimizer, kOptimizers);
      t.get("optimizer", opt);
      c.train.optimizer = parse_enum(opt, kOptimizers, t.child("optimizer"));
      t.get("momentum", c.train.momentum);
      t.get("temporal_gap", c.train.temporal_gap);
      t.get("max_points", c.train.max_points);
    }
    if (s.has("probe")) {
      Section t(s.at("probe"), s.child("probe"));
      t.get("budget", c.probe.budget);
      t.get("max_train_points", c.probe.max_train_points);
      t.get("max_iterations", c.probe.max_iterations);
      t.get("tolerance", c.probe.tolerance);
      t.get("l2", c.probe.l2);
      std::string sampling = enum_name(c.probe.sampling, kSampling);
      t.get("sampling", sampling);
      c.probe.sampling = parse_enum(sampling, kSampling, t.child("sampling"));
    }
    if (s.has("misalign")) {
      Section t(s.at("misalign"), s.child("misalign"));
      t.get("translation", c.misalign.translation);
      t.get("rotation", c.misalign.rotation);
    }
  }
  c.train.seed = c.seed;
  c.probe.seed = c.seed;
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
  OJson j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  j["corpus"] = {{"sources", c.corpus.sources},
                 {"scenes_per_source", c.corpus.scenes_per_source},
                 {"frames_per_scene", c.corpus.frames_per_scene},
                 {"probe_scenes_per_source", c.corpus.probe_scenes_per_source},
                 {"azimuth_count", c.corpus.azimuth_count},
                 {"image_height", c.corpus.image_height},
                 {"image_width", c.corpus.image_width}};
  j["superpixels"] = {{"mode", enum_name(c.superpixels.mode, kSuperpixelModes)},
                      {"slic",
                       {{"target_count", c.superpixels.slic.target_count},
                        {"compactness", c.superpixels.slic.compactness},
                        {"iterations", c.superpixels.slic.iterations}}},
                      {"file_dir", c.superpixels.file_dir}};
  j["geoseg"] = {{"ransac_iterations", c.geoseg.ransac_iterations},
                 {"inlier_threshold", c.geoseg.inlier_threshold},
                 {"eps", c.geoseg.eps},
                 {"min_pts", c.geoseg.min_pts},
                 {"min_segment_size", c.geoseg.min_segment_size}};
  j["embed"] = {{"hidden", c.embed.hidden},       {"point_dim", c.embed.point_dim}, {"embed_dim", c.embed.embed_dim},
                {"image_dim", c.embed.image_dim}, {"stride", c.embed.stride},       {"beta", c.embed.beta},
                {"voxel", c.embed.voxel}};
  const auto& l = c.train.loss;
  j["loss"] = {{"temperature", l.temperature},
               {"weights", {{"vfm", l.weights.vfm}, {"tmp", l.weights.tmp}, {"p2s", l.weights.p2s}, {"cdp", l.weights.cdp}}},
               {"p2s_mode", enum_name(l.p2s_mode, kP2sModes)},
               {"baseline_slic", l.baseline_slic}};
  j["train"] = {{"steps", c.train.steps},
                {"learning_rate", c.train.learning_rate},
                {"optimizer", enum_name(c.train.optimizer, kOptimizers)},
                {"momentum", c.train.momentum},
                {"temporal_gap", c.train.temporal_gap},
                {"max_points", c.train.max_points}};
  j["probe"] = {{"budget", c.probe.budget},
                {"max_train_points", c.probe.max_train_points},
                {"max_iterations", c.probe.max_iterations},
                {"tolerance", c.probe.tolerance},
                {"l2", c.probe.l2},
                {"sampling", enum_name(c.probe.sampling, kSampling)}};
  j["misalign"] = {{"translation", c.misalign.translation}, {"rotation", c.misalign.rotation}};
  return j.dump(2) + "\n";
}

}  // namespace lad
