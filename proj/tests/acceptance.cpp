#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "lad/config.hpp"
#include "lad/geometry.hpp"
#include "lad/geoseg.hpp"
#include "lad/objectives.hpp"
#include "lad/pipeline.hpp"
#include "lad/rng.hpp"
#include "oracles.hpp"

using namespace lad;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr int kGradInstances = 20;
constexpr double kGradSeconds = 30.0;
constexpr double kClosedFormTolerance = 1e-9;
constexpr double kMaskAgreement = 0.99;
constexpr double kPixelTolerance = 1e-9;
constexpr double kNormalDegrees = 1.0;
constexpr double kInlierRecall = 0.99;
constexpr double kRansacSeconds = 1.0;
constexpr double kClusterSeconds = 5.0;
constexpr double kTemporalAgreement = 0.95;
constexpr double kGroundBand = 0.1;
constexpr double kNormTolerance = 1e-6;
constexpr double kProbeGain = 0.10;
constexpr double kLearningSeconds = 600.0;
// One-sided 95% Student t quantile with 2 degrees of freedom.
constexpr double kT95Df2 = 2.919986;

const std::uint64_t kSeeds[] = {1, 2, 3};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto report = run_gradcheck_suite(RunConfig{}.seed);
  const double secs = since(t0);
  bool ok = secs < kGradSeconds;
  double worst = 0.0;
  std::ostringstream d;
  for (const auto& e : report.entries) {
    const bool loss_entry = e.name.rfind("loss_", 0) == 0 || e.name == "total";
    if (loss_entry) {
      ok = ok && e.instances >= kGradInstances && e.max_rel_error <= kGradTolerance;
      worst = std::max(worst, e.max_rel_error);
    } else {
      ok = ok && e.passed;
      d << e.name << " " << fmt("%.2e", e.max_rel_error) << "; ";
    }
  }
  d << "worst loss rel err " << fmt("%.2e", worst) << ", " << fmt("%.1f", secs) << " s";
  return {ok, d.str()};
}

Outcome closed_forms() {
  const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  LossConfig one;
  one.temperature = 1.0;
  LossConfig sharp;
  sharp.temperature = 0.07;
  Mat single(1, 3);
  single << 0.6, 0.0, 0.8;
  const Mat eye = Mat::Identity(2, 2);

  bool zero = loss_vfm(single, single, sharp).value == 0.0 && loss_slic(single, single, sharp).value == 0.0 &&
              loss_p2s(eye, {3, 3}, sharp).value == 0.0 &&
              loss_tmp(eye, eye, {1, 1}, {1, 1}, sharp).value == 0.0 &&
              loss_cdp(single, single, pair_by_class({0}, {0}), sharp).value == 0.0;

  double err = 0.0;
  err = std::max(err, std::abs(loss_vfm(eye, eye, one).value - want));
  err = std::max(err, std::abs(loss_slic(eye, eye, one).value - want));
  err = std::max(err, std::abs(loss_p2s(eye, {1, 2}, one).value - want));
  // The temporal term sums both directions.
  err = std::max(err, std::abs(loss_tmp(eye, eye, {1, 2}, {1, 2}, one).value / 2.0 - want));
  err = std::max(err, std::abs(loss_cdp(eye, eye, pair_by_class({0, 1}, {0, 1}), one).value - want));
  return {zero && err <= kClosedFormTolerance,
          std::string("M=1 all zero: ") + (zero ? "yes" : "no") + ", M=2 max err " + fmt("%.1e", err)};
}

Outcome projection() {
  Mat3 k;
  k << 500, 0, 320, 0, 500, 240, 0, 0, 1;
  PointCloud c;
  c.coords.resize(1, 3);
  c.coords << 1.0, 0.5, 2.0;
  c.features = Mat::Zero(1, 2);
  c.gt_semantic = {0};
  c.gt_instance = {1};
  const auto hand = project_points(c, k, Pose::Identity(), 480, 640)[0];
  const double pix_err = std::max(std::abs(hand.u - 570.0), std::abs(hand.v - 365.0));

  const RunConfig cfg;
  const Dataset data = synthesize_corpus(cfg, false);
  std::size_t agree = 0, total = 0;
  for (const auto& scene : data.scenes) {
    for (const auto& frame : scene.frames) {
      const auto proj = project_points(frame.cloud, frame.camera);
      for (std::size_t i = 0; i < proj.size(); ++i) {
        if (!proj[i].valid) continue;
        const auto [r, col] = pixel_of(proj[i], frame.camera.height, frame.camera.width);
        ++total;
        agree += frame.camera.gt_mask[frame.camera.pixel(r, col)] == frame.cloud.gt_instance[i];
      }
    }
  }
  const double frac = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
  return {hand.valid && pix_err <= kPixelTolerance && frac >= kMaskAgreement,
          "mask agreement " + fmt("%.4f", frac) + " over " + std::to_string(total) + " points, hand example err " +
              fmt("%.1e", pix_err) + " px"};
}

PointsXd plane_with_outliers(std::uint64_t seed, int n, std::vector<char>& truth) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> cube(-5.0, 5.0), plane(-20.0, 20.0);
  PointsXd p(n, 3);
  truth.assign(static_cast<std::size_t>(n), 0);
  const int outliers = n / 5;
  for (int i = 0; i < n; ++i) {
    if (i < outliers) {
      p.row(i) << cube(gen), cube(gen), cube(gen) + 5.0;
    } else {
      p.row(i) << plane(gen), plane(gen), 0.0;
      truth[static_cast<std::size_t>(i)] = 1;
    }
  }
  return p;
}

Outcome ransac() {
  int good = 0;
  double worst_angle = 0.0, worst_recall = 1.0, worst_secs = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::vector<char> truth;
    const PointsXd pts = plane_with_outliers(5000 + seed, 4000, truth);
    const auto plane = ransac_ground(pts, {100, 0.05, seed});
    std::size_t hit = 0, inliers = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      inliers += truth[i];
      hit += truth[i] && plane.inlier_mask[i];
    }
    const double angle =
        std::acos(std::min(1.0, std::abs(plane.normal.normalized().dot(Vec3::UnitZ())))) * 180.0 / EIGEN_PI;
    const double recall = static_cast<double>(hit) / static_cast<double>(inliers);
    worst_angle = std::max(worst_angle, angle);
    worst_recall = std::min(worst_recall, recall);
    good += angle <= kNormalDegrees && recall >= kInlierRecall;
  }
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::vector<char> truth;
    const PointsXd big = plane_with_outliers(90 + seed, 50000, truth);
    const auto t0 = Clock::now();
    ransac_ground(big, {100, 0.05, seed});
    worst_secs = std::max(worst_secs, since(t0));
  }
  return {good == 100 && worst_secs < kRansacSeconds,
          std::to_string(good) + "/100 seeds, worst normal " + fmt("%.3f", worst_angle) + " deg, worst recall " +
              fmt("%.4f", worst_recall) + ", 50k points in " + fmt("%.3f", worst_secs) + " s"};
}

Outcome clustering() {
  std::mt19937_64 gen(31);
  std::uniform_int_distribution<int> count(1, 200), minpts(1, 6);
  std::uniform_real_distribution<double> box(0.0, 4.0), eps(0.2, 0.8);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = count(gen);
    PointsXd p(n, 3);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = box(gen);
    const double e = eps(gen);
    const int m = minpts(gen);
    exact += density_cluster(p, e, m).labels == oracle::brute_force_dbscan(p, e, m);
  }
  std::uniform_real_distribution<double> where(-40.0, 40.0), jitter(-1.0, 1.0), far(-50.0, 50.0);
  PointsXd big(20000, 3);
  Eigen::Index at = 0;
  for (int b = 0; b < 40; ++b) {
    const Vec3 c(where(gen), where(gen), 1.0);
    for (int i = 0; i < 450; ++i) big.row(at++) = (c + Vec3(jitter(gen), jitter(gen), jitter(gen))).transpose();
  }
  while (at < big.rows()) big.row(at++) << far(gen), far(gen), far(gen) * 0.1;
  const auto t0 = Clock::now();
  const auto fast = density_cluster(big, 0.5, 5);
  const double secs = since(t0);
  const bool same = oracle::same_partition(fast.labels, oracle::brute_force_dbscan(big, 0.5, 5));
  return {exact == 100 && same && secs < kClusterSeconds,
          std::to_string(exact) + "/100 exact, 20k partition " + (same ? "matches" : "differs") + " in " +
              fmt("%.3f", secs) + " s"};
}

Outcome temporal() {
  std::size_t agree = 0, total = 0;
  bool bitwise = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& profile : {source_profile_a(), source_profile_b()}) {
      auto spec = random_scene_spec(seed, profile, 2);
      for (auto& obj : spec.objects) obj.velocity = Vec3::Zero();
      const Scene scene = synthesize_scene(spec);
      const auto seg = segment_pair(scene, 0, 1, {100, kGroundBand, seed}, {});
      // Non-ground points clear of the ground-removal band, in world height.
      std::vector<char> scored[2];
      for (int f = 0; f < 2; ++f) {
        const auto& cloud = scene.frames[static_cast<std::size_t>(f)].cloud;
        const PointCloud world = transform_to_global(cloud, scene.poses[static_cast<std::size_t>(f)]);
        scored[f].resize(cloud.gt_instance.size());
        for (std::size_t i = 0; i < scored[f].size(); ++i) {
          scored[f][i] = cloud.gt_semantic[i] != kGroundClass && world.coords(static_cast<Eigen::Index>(i), 2) > kGroundBand;
        }
      }
      // Majority segment id of each instance in each view (noise included).
      std::map<std::uint32_t, std::map<int, std::size_t>> votes[2];
      for (int f = 0; f < 2; ++f) {
        const auto& cloud = scene.frames[static_cast<std::size_t>(f)].cloud;
        for (std::size_t i = 0; i < cloud.gt_instance.size(); ++i) {
          if (!scored[f][i]) continue;
          ++votes[f][cloud.gt_instance[i]][seg.per_frame_views[static_cast<std::size_t>(f)][i]];
        }
      }
      auto majority = [](const std::map<int, std::size_t>& v) {
        int best = 0;
        std::size_t n = 0;
        for (const auto& [id, c] : v) {
          if (c > n) {
            best = id;
            n = c;
          }
        }
        return best;
      };
      for (int f = 0; f < 2; ++f) {
        const int other = 1 - f;
        const auto& cloud = scene.frames[static_cast<std::size_t>(f)].cloud;
        for (std::size_t i = 0; i < cloud.gt_instance.size(); ++i) {
          if (!scored[f][i]) continue;
          const auto it = votes[other].find(cloud.gt_instance[i]);
          if (it == votes[other].end()) continue;  // instance unseen in the other view
          ++total;
          agree += seg.per_frame_views[static_cast<std::size_t>(f)][i] == majority(it->second);
        }
      }
      const auto& c0 = scene.frames[0].cloud;
      const auto single = segment_aggregate_and_map(aggregate_frames({c0}, {Pose::Identity()}), {100, kGroundBand, seed}, {});
      const auto direct = segment_scan(c0.coords, {100, kGroundBand, seed}, {});
      bitwise = bitwise && single.per_frame_views[0] == direct.labels && single.labels == direct.labels &&
                single.segment_count == direct.segment_count;
    }
  }
  const double frac = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
  return {frac >= kTemporalAgreement && bitwise,
          "cross-frame agreement " + fmt("%.4f", frac) + " over " + std::to_string(total) +
              " non-ground points, single-frame aggregate " + (bitwise ? "bit-identical" : "differs")};
}

Outcome normalization() {
  RunConfig cfg;
  double worst_mean = 0.0, worst_var = 0.0;
  for (std::uint64_t seed : kSeeds) {
    cfg.seed = seed;
    const Dataset data = synthesize_corpus(cfg, false);
    std::vector<const PointCloud*> clouds;
    for (const auto& s : data.scenes) {
      for (const auto& f : s.frames) clouds.push_back(&f.cloud);
    }
    const SourceStats stats = fit_source_stats(clouds);
    std::map<int, std::vector<Mat>> per_source;
    for (const auto* c : clouds) per_source[c->source_id].push_back(normalize_source_features(*c, stats).features);
    for (const auto& [id, mats] : per_source) {
      Eigen::Index rows = 0;
      for (const auto& m : mats) rows += m.rows();
      Mat all(rows, mats.front().cols());
      Eigen::Index at = 0;
      for (const auto& m : mats) {
        all.middleRows(at, m.rows()) = m;
        at += m.rows();
      }
      const Vec mean = all.colwise().mean();
      const Vec var = (all.rowwise() - mean.transpose()).array().square().colwise().mean();
      worst_mean = std::max(worst_mean, mean.cwiseAbs().maxCoeff());
      worst_var = std::max(worst_var, (var.array() - 1.0).abs().maxCoeff());
    }
  }
  // Constant channel.
  PointCloud flat;
  flat.source_id = 1;
  flat.coords = PointsXd::Zero(50, 3);
  flat.features = Mat::Constant(50, 2, 3.25);
  flat.gt_semantic.assign(50, 0);
  flat.gt_instance.assign(50, 1);
  bool constant_ok = false;
  try {
    const SourceStats s = fit_source_stats({&flat});
    const Mat z = normalize_source_features(flat, s).features;
    constant_ok = z.allFinite() && z.cwiseAbs().maxCoeff() == 0.0;
  } catch (const std::exception&) {
    constant_ok = false;
  }
  return {worst_mean <= kNormTolerance && worst_var <= kNormTolerance && constant_ok,
          "max |mean| " + fmt("%.1e", worst_mean) + ", max |var-1| " + fmt("%.1e", worst_var) + ", constant channel " +
              (constant_ok ? "-> 0" : "faulted")};
}

// ---------------------------------------------------------------------------
// Learning-signal experiments shared by criteria 8 to 10.

struct SeedRun {
  double pretrained = 0.0;
  double random_init = 0.0;
  double vfm_only = 0.0;
  std::vector<double> misaligned;  // per level
  double criterion8_seconds = 0.0;
};

const double kMisalignLevels[] = {0.01, 0.05, 0.10};

double pretrain_and_probe(const RunConfig& cfg, const Dataset& train, const Dataset& eval, const Model& init) {
  const auto pairs = build_training_pairs(train, init, cfg);
  const auto result = pretrain(init, pairs, cfg.train);
  return linear_probe(result.model, train, eval, cfg.probe).miou;
}

SeedRun run_seed(std::uint64_t seed) {
  SeedRun out;
  RunConfig cfg;
  cfg.seed = cfg.train.seed = cfg.probe.seed = seed;
  const auto t0 = Clock::now();
  const Dataset train = synthesize_corpus(cfg, false);
  const Dataset eval = synthesize_corpus(cfg, true);
  const Model init = initial_model(train, cfg);
  out.pretrained = pretrain_and_probe(cfg, train, eval, init);
  out.random_init = linear_probe(init, train, eval, cfg.probe).miou;
  out.criterion8_seconds = since(t0);

  RunConfig vfm = cfg;
  vfm.train.loss.weights.tmp = vfm.train.loss.weights.p2s = vfm.train.loss.weights.cdp = 0.0;
  out.vfm_only = pretrain_and_probe(vfm, train, eval, init);

  for (double level : kMisalignLevels) {
    RunConfig m = cfg;
    m.misalign.translation = m.misalign.rotation = level;
    out.misaligned.push_back(pretrain_and_probe(m, train, eval, init));
  }
  std::cout << "  seed " << seed << ": pretrained " << fmt("%.4f", out.pretrained) << ", random "
            << fmt("%.4f", out.random_init) << ", vfm-only " << fmt("%.4f", out.vfm_only) << ", misaligned";
  for (double v : out.misaligned) std::cout << ' ' << fmt("%.4f", v);
  std::cout << std::endl;
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Outcome learning_signal(const std::vector<SeedRun>& runs) {
  std::vector<double> gain;
  double secs = 0.0;
  for (const auto& r : runs) {
    gain.push_back(r.pretrained - r.random_init);
    secs += r.criterion8_seconds;
  }
  const double g = mean(gain);
  return {g >= kProbeGain && secs < kLearningSeconds,
          "mean mIoU gain " + fmt("%+.4f", g) + " (need >= " + fmt("%.2f", kProbeGain) + "), " + fmt("%.0f", secs) +
              " s"};
}

Outcome ablation(const std::vector<SeedRun>& runs) {
  std::vector<double> diff;
  for (const auto& r : runs) diff.push_back(r.pretrained - r.vfm_only);
  const double m = mean(diff);
  const double noise = kT95Df2 * sample_sd(diff) / std::sqrt(static_cast<double>(diff.size()));
  return {m >= -noise, "full minus vfm-only " + fmt("%+.4f", m) + " (noise bound " + fmt("%.4f", noise) + ")"};
}

Outcome misalignment(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::ostringstream d;
  for (std::size_t l = 0; l < std::size(kMisalignLevels); ++l) {
    std::vector<double> adv;
    for (const auto& r : runs) adv.push_back(r.misaligned[l] - r.random_init);
    const double a = mean(adv);
    ok = ok && a > 0.0;
    d << fmt("%.0f%%", 100.0 * kMisalignLevels[l]) << " " << fmt("%+.4f", a) << (l + 1 < std::size(kMisalignLevels) ? ", " : "");
  }
  return {ok, "advantage over random init: " + d.str()};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = s.str();
  }
  return out;
}

Outcome cli_determinism() {
  const fs::path work = fs::temp_directory_path() / "lad_acceptance_cli";
  fs::remove_all(work);
  fs::create_directories(work);
  {
    std::ofstream cfg(work / "config.json");
    cfg << R"({"corpus": {"scenes_per_source": 2, "probe_scenes_per_source": 1, "azimuth_count": 180,
                          "image_height": 48, "image_width": 144},
               "train": {"steps": 15, "max_points": 512},
               "probe": {"budget": 0.5, "max_iterations": 200}})";
  }
  const std::vector<std::string> commands{"synth",
                                          "superpixel",
                                          "segment",
                                          "pairs",
                                          "pretrain",
                                          "probe",
                                          "probe --random-init",
                                          "gradcheck",
                                          "corrupt --kind beam_drop --severity 2",
                                          "corrupt --kind jitter --severity 1",
                                          "corrupt --kind intensity_shift --severity 3",
                                          "report"};
  const fs::path out = work / "out";
  std::map<std::string, std::string> first;
  std::size_t differing = 0, files = 0;
  std::string failed;
  for (int round = 0; round < 2; ++round) {
    fs::remove_all(out);
    for (const auto& c : commands) {
      const std::string line = std::string("\"") + LAD_CLI_PATH + "\" --config \"" + (work / "config.json").string() +
                               "\" --seed 11 --out \"" + out.string() + "\" " + c + " > /dev/null 2>&1";
      if (std::system(line.c_str()) != 0 && failed.empty()) failed = c;
    }
    auto snap = snapshot(out);
    if (round == 0) {
      first = std::move(snap);
    } else {
      files = snap.size();
      for (const auto& [path, bytes] : snap) {
        const auto it = first.find(path);
        differing += it == first.end() || it->second != bytes;
      }
      differing += first.size() > snap.size() ? first.size() - snap.size() : 0;
    }
  }
  // Probing without a checkpoint is a missing-input error.
  const fs::path early = work / "early";
  auto run = [&](const std::string& c) {
    const std::string line = std::string("\"") + LAD_CLI_PATH + "\" --config \"" + (work / "config.json").string() +
                             "\" --seed 11 --out \"" + early.string() + "\" " + c + " > /dev/null 2>&1";
    const int status = std::system(line.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  const int synth_code = run("synth");
  const int early_code = run("probe");
  fs::remove_all(work);
  if (!failed.empty()) return {false, "subcommand `" + failed + "` failed"};
  return {differing == 0 && files > 0 && synth_code == 0 && early_code == 2,
          std::to_string(commands.size()) + " subcommands, " + std::to_string(files) + " files, " +
              std::to_string(differing) + " differ, probe before pretrain exits " + std::to_string(early_code)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
              << fmt("%.1f", since(t0)) << " s]" << std::endl;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "closed-form losses", closed_forms);
  report(3, "projection", projection);
  report(4, "RANSAC", ransac);
  report(5, "clustering oracle", clustering);
  report(6, "temporal mapping", temporal);
  report(7, "normalization", normalization);

  std::vector<SeedRun> runs;
  std::string run_error;
  try {
    for (std::uint64_t seed : kSeeds) runs.push_back(run_seed(seed));
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto with_runs = [&](Outcome (*fn)(const std::vector<SeedRun>&)) {
    return [&, fn]() -> Outcome {
      if (!run_error.empty()) return {false, "exception: " + run_error};
      return fn(runs);
    };
  };
  report(8, "end-to-end learning signal", with_runs(learning_signal));
  report(9, "ablation direction", with_runs(ablation));
  report(10, "misalignment robustness", with_runs(misalignment));
  report(11, "CLI determinism", cli_determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
