#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lad/config.hpp"
#include "lad/dataset_io.hpp"
#include "lad/errors.hpp"
#include "lad/eval.hpp"
#include "lad/pipeline.hpp"
#include "lad/rng.hpp"

namespace fs = std::filesystem;
using namespace lad;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitMissing = 2;
constexpr int kExitNumerical = 3;

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool baseline_slic = false;
  std::vector<double> misalign;
  bool timing = false;
};

struct Layout {
  fs::path root;
  fs::path dataset() const { return root / "dataset"; }
  fs::path probe_dataset() const { return root / "probe_dataset"; }
  fs::path superpixels() const { return root / "superpixels"; }
  fs::path segments() const { return root / "segments"; }
  fs::path pairs() const { return root / "pairs" / "pairs.json"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path model() const { return checkpoints() / "model.ckpt"; }
  fs::path metrics() const { return root / "metrics.jsonl"; }
  fs::path report() const { return root / "report"; }
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? parse_run_config("{}") : load_run_config(g.config);
  if (g.seed) cfg.seed = cfg.train.seed = cfg.probe.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (g.threads) cfg.threads = *g.threads;
  if (g.baseline_slic) cfg.train.loss.baseline_slic = true;
  if (!g.misalign.empty()) {
    cfg.misalign.translation = g.misalign[0];
    cfg.misalign.rotation = g.misalign[1];
  }
  cfg.train.timing = cfg.probe.timing = g.timing;
  validate(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string());
  out << text;
}

Dataset load_dataset(const fs::path& dir, const char* stage) {
  if (!fs::exists(dir / "manifest.json")) {
    throw MissingInput("no dataset at " + dir.string() + "; run `" + stage + "` first");
  }
  return read_dataset(dir);
}

fs::path superpixel_file(const fs::path& dir, const Scene& scene, std::size_t s, int frame) {
  return dir / scene_dir_name(scene, s) / ("frame" + std::to_string(frame) + ".ladsp");
}

fs::path segment_file(const fs::path& dir, const Scene& scene, std::size_t s, int t) {
  return dir / scene_dir_name(scene, s) / ("pair" + std::to_string(t) + ".ladseg");
}

SuperpixelMap load_map(const fs::path& path) {
  if (!fs::exists(path)) throw MissingInput("missing superpixel map " + path.string() + "; run `superpixel` first");
  return load_superpixel_map(path).map;
}

SegmentAssignment load_segments(const fs::path& path) {
  if (!fs::exists(path)) throw MissingInput("missing segment sidecar " + path.string() + "; run `segment` first");
  return read_segment_sidecar(path);
}

std::vector<TrainingPair> pairs_from_disk(const Layout& lay, const Dataset& data, const Model& model,
                                          const RunConfig& cfg) {
  const SuperpixelProvider sp = [&](std::size_t s, int k) {
    return load_map(superpixel_file(lay.superpixels(), data.scenes[s], s, k));
  };
  const SegmentProvider sg = [&](std::size_t s, int t) {
    // The sidecar holds aggregate labels: frame t rows, then frame t + gap rows.
    const auto& scene = data.scenes[s];
    SegmentAssignment seg = load_segments(segment_file(lay.segments(), scene, s, t));
    const auto n0 = static_cast<std::size_t>(scene.frames[static_cast<std::size_t>(t)].cloud.size());
    const auto n1 = static_cast<std::size_t>(scene.frames[static_cast<std::size_t>(t + cfg.train.temporal_gap)].cloud.size());
    if (seg.labels.size() != n0 + n1) {
      throw MissingInput("segment sidecar does not match the dataset; rerun `segment`");
    }
    seg.per_frame_views = {std::vector<int>(seg.labels.begin(), seg.labels.begin() + static_cast<std::ptrdiff_t>(n0)),
                           std::vector<int>(seg.labels.begin() + static_cast<std::ptrdiff_t>(n0), seg.labels.end())};
    return seg;
  };
  return build_training_pairs(data, model, cfg, sp, sg);
}

int cmd_synth(const RunConfig& cfg, const Layout& lay) {
  for (const bool probe : {false, true}) {
    const fs::path dir = probe ? lay.probe_dataset() : lay.dataset();
    fs::remove_all(dir);
    const Dataset data = synthesize_corpus(cfg, probe);
    write_dataset(data, dir);
    std::cout << (probe ? "probe" : "pretraining") << " corpus: " << data.scenes.size() << " scenes -> " << dir.string()
              << '\n';
  }
  return 0;
}

int cmd_superpixel(const RunConfig& cfg, const Layout& lay) {
  const Dataset data = load_dataset(lay.dataset(), "synth");
  fs::remove_all(lay.superpixels());
  std::size_t count = 0;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    const auto& scene = data.scenes[s];
    for (std::size_t k = 0; k < scene.frames.size(); ++k) {
      const int frame = static_cast<int>(k);
      SuperpixelMap map;
      if (cfg.superpixels.mode == SuperpixelMode::file) {
        map = load_map(superpixel_file(cfg.superpixels.file_dir, scene, s, frame));
      } else {
        map = frame_superpixels(scene.frames[k], cfg.superpixels);
      }
      const fs::path path = superpixel_file(lay.superpixels(), scene, s, frame);
      fs::create_directories(path.parent_path());
      write_superpixel_map(map, path);
      ++count;
    }
  }
  std::cout << count << " superpixel maps -> " << lay.superpixels().string() << '\n';
  return 0;
}

int cmd_segment(const RunConfig& cfg, const Layout& lay) {
  const Dataset data = load_dataset(lay.dataset(), "synth");
  fs::remove_all(lay.segments());
  const int gap = cfg.train.temporal_gap;
  std::size_t count = 0;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    const auto& scene = data.scenes[s];
    for (int t = 0; t + gap < static_cast<int>(scene.frames.size()); ++t) {
      const auto seg = segment_pair(scene, t, gap, ransac_params(cfg, s, t), cluster_params(cfg));
      const fs::path path = segment_file(lay.segments(), scene, s, t);
      fs::create_directories(path.parent_path());
      write_segment_sidecar(seg, path);
      ++count;
    }
  }
  std::cout << count << " segment sidecars -> " << lay.segments().string() << '\n';
  return 0;
}

int cmd_pairs(const RunConfig& cfg, const Layout& lay) {
  const Dataset data = load_dataset(lay.dataset(), "synth");
  const Model init = initial_model(data, cfg);
  const auto pairs = pairs_from_disk(lay, data, init, cfg);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : pairs) {
    std::size_t in_sp = 0, in_seg_t = 0, in_seg_t1 = 0;
    for (int v : p.point_superpixel) in_sp += v > 0;
    for (int v : p.seg_t) in_seg_t += v > 0;
    for (int v : p.seg_t1) in_seg_t1 += v > 0;
    nlohmann::ordered_json e;
    e["source_id"] = p.source_id;
    e["scene"] = scene_dir_name(data.scenes[static_cast<std::size_t>(p.scene)], static_cast<std::size_t>(p.scene));
    e["frame_t"] = p.frame_t;
    e["frame_t1"] = p.frame_t + cfg.train.temporal_gap;
    e["points_t"] = p.cloud_t.size();
    e["points_t1"] = p.cloud_t1.size();
    e["points_in_superpixels"] = in_sp;
    e["superpixels"] = p.superpixels.segment_count;
    e["segment_points_t"] = in_seg_t;
    e["segment_points_t1"] = in_seg_t1;
    j.push_back(e);
  }
  write_text(lay.pairs(), j.dump(2) + "\n");
  std::cout << pairs.size() << " training pairs -> " << lay.pairs().string() << '\n';
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, const Layout& lay) {
  const Dataset data = load_dataset(lay.dataset(), "synth");
  if (!fs::exists(lay.pairs())) throw MissingInput("no pair index at " + lay.pairs().string() + "; run `pairs` first");
  const Model init = initial_model(data, cfg);
  const auto pairs = pairs_from_disk(lay, data, init, cfg);
  fs::create_directories(lay.checkpoints());
  fs::remove(lay.model());
  write_checkpoint(init, lay.checkpoints() / "init.ckpt");
  const auto result = pretrain(init, pairs, cfg.train, lay.checkpoints() / "failure.ckpt");
  write_checkpoint(result.model, lay.model());
  write_metrics_jsonl(result.metrics, lay.metrics());
  const auto& last = result.metrics.back().loss;
  std::cout << result.metrics.size() << " steps, final total loss " << last.total << " -> " << lay.model().string()
            << '\n';
  return 0;
}

int cmd_probe(const RunConfig& cfg, const Layout& lay, bool random_init, const std::string& eval_dir,
              std::string tag) {
  Model model;
  const Dataset pool = load_dataset(lay.dataset(), "synth");
  if (random_init) {
    model = initial_model(pool, cfg);
  } else {
    if (!fs::exists(lay.model())) throw MissingInput("no checkpoint at " + lay.model().string() + "; run `pretrain` first");
    model = read_checkpoint(lay.model());
  }
  const Dataset eval = load_dataset(eval_dir.empty() ? lay.probe_dataset() : fs::path(eval_dir), "synth");
  if (tag.empty()) tag = random_init ? "probe_random" : "probe";
  const auto report = linear_probe(model, pool, eval, cfg.probe);
  const fs::path dir = lay.root / tag;
  fs::create_directories(dir);
  write_probe_report(report, dir / "probe.json", dir / "confusion.csv");
  std::cout << tag << ": mIoU " << std::fixed << std::setprecision(4) << report.miou << " over "
            << report.eval_points << " points -> " << (dir / "probe.json").string() << '\n';
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const Layout& lay) {
  const auto report = run_gradcheck_suite(cfg.seed);
  fs::create_directories(lay.root);
  write_gradcheck_json(report, lay.root / "gradcheck.json");
  for (const auto& e : report.entries) {
    std::cout << std::left << std::setw(24) << e.name << std::right << std::setw(4) << e.instances << "  max rel "
              << std::scientific << std::setprecision(3) << e.max_rel_error << "  tol " << e.tolerance << "  "
              << (e.passed ? "ok" : "FAIL") << '\n';
  }
  std::cout << std::defaultfloat << "suite " << (report.passed() ? "passed" : "FAILED") << " in " << report.seconds
            << " s\n";
  return report.passed() ? 0 : kExitNumerical;
}

int cmd_corrupt(const RunConfig& cfg, const Layout& lay, const std::string& kind_name, int severity) {
  const CorruptionKind kind = parse_corruption(kind_name);
  Dataset data = load_dataset(lay.probe_dataset(), "synth");
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    auto& scene = data.scenes[s];
    for (std::size_t k = 0; k < scene.frames.size(); ++k) {
      const auto seed = rng::derive_seed(cfg.seed, rng::Stream::corruption, s * 1024 + k);
      scene.frames[k].cloud = corrupt(scene.frames[k].cloud, kind, severity, seed, scene.beam_elevations);
    }
  }
  const fs::path dir = lay.root / ("corrupt_" + kind_name + "_s" + std::to_string(severity));
  fs::remove_all(dir);
  write_dataset(data, dir);
  std::cout << "corrupted probe corpus -> " << dir.string() << '\n';
  return 0;
}

int cmd_report(const Layout& lay) {
  std::vector<std::pair<std::string, ProbeReport>> probes;
  std::vector<fs::path> dirs;
  if (fs::exists(lay.root)) {
    for (const auto& e : fs::directory_iterator(lay.root)) {
      if (e.is_directory() && fs::exists(e.path() / "probe.json")) dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) probes.emplace_back(d.filename().string(), read_probe_report(d / "probe.json"));
  std::vector<StepMetrics> metrics;
  if (fs::exists(lay.metrics())) metrics = read_metrics_jsonl(lay.metrics());
  if (probes.empty() && metrics.empty()) {
    throw MissingInput("nothing to report under " + lay.root.string() + "; run `pretrain` or `probe` first");
  }

  std::ostringstream csv, txt;
  csv << std::setprecision(9);
  txt << std::fixed << std::setprecision(4);
  csv << "run,miou,overall_accuracy";
  const auto& names = probes.empty() ? class_names() : probes.front().second.class_names;
  for (const auto& n : names) csv << ",iou_" << n;
  csv << '\n';
  if (!probes.empty()) {
    txt << "Linear probe\n";
    txt << std::left << std::setw(28) << "run" << std::right << std::setw(9) << "mIoU" << std::setw(9) << "acc";
    for (const auto& n : names) txt << std::setw(12) << n;
    txt << '\n';
  }
  for (const auto& [name, r] : probes) {
    csv << name << ',' << r.miou << ',' << r.overall_accuracy;
    txt << std::left << std::setw(28) << name << std::right << std::setw(9) << r.miou << std::setw(9)
        << r.overall_accuracy;
    for (std::size_t c = 0; c < r.iou.size(); ++c) {
      csv << ',' << r.iou[c];
      if (!r.present[c]) {
        txt << std::setw(12) << "n/a";
      } else {
        txt << std::setw(12) << r.iou[c];
      }
    }
    csv << '\n';
    txt << '\n';
  }
  if (!metrics.empty()) {
    const std::size_t window = std::min<std::size_t>(10, metrics.size());
    auto mean = [&](std::size_t begin, auto field) {
      double s = 0.0;
      for (std::size_t i = begin; i < begin + window; ++i) s += metrics[i].loss.*field;
      return s / static_cast<double>(window);
    };
    const std::size_t tail = metrics.size() - window;
    txt << "\nPretraining (" << metrics.size() << " steps, means over " << window << " steps)\n";
    txt << std::left << std::setw(8) << "term" << std::right << std::setw(12) << "first" << std::setw(12) << "last"
        << '\n';
    const std::pair<const char*, double LossBreakdown::*> terms[] = {{"vfm", &LossBreakdown::vfm},
                                                                       {"tmp", &LossBreakdown::tmp},
                                                                       {"p2s", &LossBreakdown::p2s},
                                                                       {"cdp", &LossBreakdown::cdp},
                                                                       {"total", &LossBreakdown::total}};
    for (const auto& [n, f] : terms) {
      txt << std::left << std::setw(8) << n << std::right << std::setw(12) << mean(0, f) << std::setw(12)
          << mean(tail, f) << '\n';
    }
    std::ostringstream mcsv;
    mcsv << std::setprecision(9) << "term,first_mean,last_mean\n";
    for (const auto& [n, f] : terms) mcsv << n << ',' << mean(0, f) << ',' << mean(tail, f) << '\n';
    write_text(lay.report() / "loss_summary.csv", mcsv.str());
  }
  write_text(lay.report() / "summary.csv", csv.str());
  write_text(lay.report() / "summary.txt", txt.str());

  if (fs::exists(lay.model()) && fs::exists(lay.probe_dataset() / "manifest.json")) {
    const Model model = read_checkpoint(lay.model());
    const Dataset eval = read_dataset(lay.probe_dataset());
    if (!eval.scenes.empty() && !eval.scenes.front().frames.empty()) {
      const auto& cloud = eval.scenes.front().frames.front().cloud;
      Eigen::Index query = 0;
      for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        if (cloud.gt_semantic[static_cast<std::size_t>(i)] != 0) {
          query = i;
          break;
        }
      }
      if (cloud.size() > 0) {
        write_cosine_csv(cloud, cosine_map(model, cloud, query), lay.report() / "cosine_map.csv");
        txt << "\nCosine map of point " << query << " -> " << (lay.report() / "cosine_map.csv").string() << '\n';
      }
    }
  }
  std::cout << txt.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-to-LiDAR contrastive pretraining pipeline on synthetic scenes"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Run seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (overrides the config)");
  app.add_option("--threads", g.threads, "Worker threads (recorded; execution is single-threaded)");
  app.add_flag("--baseline-slic", g.baseline_slic, "Use the SLIC-baseline spatial term instead of the VFM term");
  app.add_option("--misalign", g.misalign, "Calibration perturbation: translation and rotation fractions")
      ->expected(2);
  app.add_flag("--timing", g.timing, "Record wall-clock times in artifacts");

  auto* synth = app.add_subcommand("synth", "Synthesize the pretraining and probe corpora");
  auto* superpixel = app.add_subcommand("superpixel", "Compute or ingest superpixel maps");
  auto* segment = app.add_subcommand("segment", "Ground removal, clustering and temporal mapping");
  auto* pairs = app.add_subcommand("pairs", "Build point-to-pixel training pairs");
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Contrastive pretraining");
  auto* probe = app.add_subcommand("probe", "Linear probe of a frozen backbone");
  bool random_init = false;
  std::string eval_dir, tag;
  probe->add_flag("--random-init", random_init, "Probe the untrained model");
  probe->add_option("--eval-dir", eval_dir, "Evaluation corpus (default: the probe corpus)");
  probe->add_option("--tag", tag, "Output subdirectory name");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  auto* corrupt_cmd = app.add_subcommand("corrupt", "Corrupt the probe corpus");
  std::string kind;
  int severity = 1;
  corrupt_cmd->add_option("--kind", kind, "beam_drop, jitter or intensity_shift")->required();
  corrupt_cmd->add_option("--severity", severity, "1, 2 or 3")->check(CLI::Range(1, 3));
  auto* report = app.add_subcommand("report", "Summarize metrics, probe reports and a cosine map");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const RunConfig cfg = resolve_config(g);
    const Layout lay{cfg.output_dir};
    fs::create_directories(lay.root);
    write_text(lay.root / "resolved_config.json", dump_run_config(cfg));
    if (synth->parsed()) return cmd_synth(cfg, lay);
    if (superpixel->parsed()) return cmd_superpixel(cfg, lay);
    if (segment->parsed()) return cmd_segment(cfg, lay);
    if (pairs->parsed()) return cmd_pairs(cfg, lay);
    if (pretrain_cmd->parsed()) return cmd_pretrain(cfg, lay);
    if (probe->parsed()) return cmd_probe(cfg, lay, random_init, eval_dir, tag);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, lay);
    if (corrupt_cmd->parsed()) return cmd_corrupt(cfg, lay, kind, severity);
    if (report->parsed()) return cmd_report(lay);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingInput& e) {
    std::cerr << "missing input: " << e.what() << '\n';
    return kExitMissing;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitMissing;
  }
  return kExitConfig;
}
