#include "doctest.h"

#include <filesystem>
#include <random>
#include <set>

#include "lad/errors.hpp"
#include "lad/eval.hpp"
#include "lad/pipeline.hpp"

using namespace lad;

namespace {

/// mIoU straight from the definition, over classes present in ground truth.
double oracle_miou(const Confusion& m) {
  const std::size_t k = m.size();
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = m[c][c], fn = 0, fp = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == c) continue;
      fn += m[c][j];
      fp += m[j][c];
    }
    if (tp + fn == 0) continue;
    ++present;
    sum += static_cast<double>(tp) / static_cast<double>(tp + fn + fp);
  }
  return present ? sum / present : 0.0;
}

RunConfig small_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = cfg.train.seed = cfg.probe.seed = seed;
  cfg.corpus.scenes_per_source = 2;
  cfg.corpus.probe_scenes_per_source = 1;
  cfg.corpus.azimuth_count = 120;
  cfg.corpus.image_height = 48;
  cfg.corpus.image_width = 144;
  cfg.probe.budget = 0.5;
  cfg.probe.max_iterations = 200;
  cfg.probe.max_train_points = 1500;
  return cfg;
}

Scene profile_a_scene(std::uint64_t seed) {
  auto spec = random_scene_spec(seed, source_profile_a(), 2, 180);
  return synthesize_scene(spec);
}

}  // namespace

TEST_CASE("perfect predictions give mIoU 1") {
  const Confusion m{{10, 0, 0}, {0, 5, 0}, {0, 0, 7}};
  const auto r = report_from_confusion(m, {1, 1, 1});
  CHECK(r.miou == 1.0);
  CHECK(r.overall_accuracy == 1.0);
  for (double v : r.iou) CHECK(v == 1.0);
}

TEST_CASE("all-one-class prediction on a balanced two-class set gives 0.25") {
  const Confusion m{{50, 0}, {50, 0}};
  const auto r = report_from_confusion(m, {1, 1});
  CHECK(r.iou[0] == doctest::Approx(0.5));
  CHECK(r.iou[1] == 0.0);
  CHECK(r.miou == doctest::Approx(0.25));
  CHECK(r.accuracy[0] == 1.0);
  CHECK(r.accuracy[1] == 0.0);
}

TEST_CASE("classes absent from ground truth are left out of the mean") {
  const Confusion m{{4, 0, 1}, {0, 0, 0}, {1, 0, 4}};
  const auto r = report_from_confusion(m, {1, 0, 1});
  CHECK(!r.present[1]);
  CHECK(r.miou == doctest::Approx((4.0 / 6.0 + 4.0 / 6.0) / 2.0));
  CHECK_THROWS_AS(report_from_confusion({{1, 2}}, {1}), InvalidArgument);
  CHECK_THROWS_AS(report_from_confusion(m, {1, 1}), InvalidArgument);
}

TEST_CASE("report mIoU matches the definition on random confusion matrices") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + gen() % 5;
    Confusion m(k, std::vector<std::int64_t>(k));
    for (auto& row : m) {
      for (auto& v : row) v = gen() % 4 == 0 ? 0 : static_cast<std::int64_t>(gen() % 50);
    }
    const auto r = report_from_confusion(m, std::vector<char>(k, 1));
    CHECK(std::abs(r.miou - oracle_miou(m)) <= 1e-9);
    for (double v : r.iou) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("logistic fit separates separable data") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> g(0.0, 0.3);
  const int n = 300;
  Mat x(n, 2);
  std::vector<int> y(n);
  const double cx[] = {-3.0, 0.0, 3.0};
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = i % 3;
    x(i, 0) = cx[i % 3] + g(gen);
    x(i, 1) = 5.0 + g(gen);
  }
  ProbeConfig cfg;
  const auto clf = fit_logistic(x, y, 3, cfg);
  const auto pred = clf.predict(x);
  int correct = 0;
  for (int i = 0; i < n; ++i) correct += pred[static_cast<std::size_t>(i)] == y[static_cast<std::size_t>(i)];
  CHECK(correct == n);
  CHECK(clf.iterations >= 1);
  const auto again = fit_logistic(x, y, 3, cfg);
  CHECK(again.weights == clf.weights);
  CHECK_THROWS_AS(fit_logistic(x, std::vector<int>(n, 3), 3, cfg), InvalidArgument);
}

TEST_CASE("linear probe is deterministic and internally consistent") {
  const RunConfig cfg = small_config(4);
  const Dataset train = synthesize_corpus(cfg, false);
  const Dataset eval = synthesize_corpus(cfg, true);
  const Model model = initial_model(train, cfg);
  const auto a = linear_probe(model, train, eval, cfg.probe);
  const auto b = linear_probe(model, train, eval, cfg.probe);
  CHECK(a.miou == b.miou);
  CHECK(a.confusion == b.confusion);
  CHECK(a.runtime_seconds == 0.0);
  CHECK(std::abs(a.miou - oracle_miou(a.confusion)) <= 1e-9);
  CHECK(a.train_points <= static_cast<std::size_t>(cfg.probe.max_train_points));
  CHECK(a.train_frames == 4);  // half of 8 frames
  std::size_t eval_points = 0;
  for (const auto& s : eval.scenes) {
    for (const auto& f : s.frames) eval_points += static_cast<std::size_t>(f.cloud.size());
  }
  CHECK(a.eval_points == eval_points);
  for (std::size_t c = 0; c < a.trainable.size(); ++c) {
    if (a.trainable[c]) continue;
    for (const auto& row : a.confusion) CHECK(row[c] == 0);
  }

  ProbeConfig point = cfg.probe;
  point.sampling = BudgetSampling::point;
  const auto p = linear_probe(model, train, eval, point);
  CHECK(p.train_points == static_cast<std::size_t>(cfg.probe.max_train_points));
  CHECK(std::abs(p.miou - oracle_miou(p.confusion)) <= 1e-9);

  ProbeConfig bad = cfg.probe;
  bad.budget = 0.0;
  CHECK_THROWS_AS(linear_probe(model, train, eval, bad), InvalidArgument);
  bad.budget = 1.5;
  CHECK_THROWS_AS(linear_probe(model, train, eval, bad), InvalidArgument);
}

TEST_CASE("probe report round-trips through disk") {
  const Confusion m{{8, 2, 0}, {1, 6, 0}, {0, 0, 0}};
  auto r = report_from_confusion(m, {1, 1, 0});
  r.iterations = 17;
  r.train_points = 33;
  const auto dir = std::filesystem::temp_directory_path() / "lad_test_eval";
  std::filesystem::create_directories(dir);
  write_probe_report(r, dir / "probe.json", dir / "confusion.csv");
  CHECK(std::filesystem::exists(dir / "confusion.csv"));
  const auto back = read_probe_report(dir / "probe.json");
  CHECK(back.confusion == r.confusion);
  CHECK(back.miou == doctest::Approx(r.miou).epsilon(1e-12));
  CHECK(back.iterations == 17);
  CHECK(back.train_points == 33);
  CHECK(back.trainable == r.trainable);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cosine map is one at the query and bounded") {
  const Scene scene = profile_a_scene(9);
  const auto& cloud = scene.frames[0].cloud;
  std::vector<const PointCloud*> clouds{&cloud};
  EmbedDims dims;
  Model model = init_model(dims, 2);
  model.stats = fit_source_stats(clouds);
  const Vec sim = cosine_map(model, cloud, 5);
  REQUIRE(sim.size() == cloud.size());
  CHECK(sim(5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sim.maxCoeff() <= 1.0);
  CHECK(sim.minCoeff() >= -1.0);
  CHECK_THROWS_AS(cosine_map(model, cloud, cloud.size()), InvalidArgument);
}

TEST_CASE("beam_drop removes whole elevation rings") {
  const Scene scene = profile_a_scene(12);
  REQUIRE(scene.beam_elevations.size() == 32);
  const auto& cloud = scene.frames[0].cloud;
  const auto rings = beam_rings(cloud, scene.beam_elevations);
  const std::set<int> before(rings.begin(), rings.end());
  const std::size_t expect[] = {0, 24, 16, 8};
  for (int severity = 1; severity <= 3; ++severity) {
    const PointCloud out = corrupt(cloud, CorruptionKind::beam_drop, severity, 1, scene.beam_elevations);
    const auto after = beam_rings(out, scene.beam_elevations);
    const std::set<int> left(after.begin(), after.end());
    CHECK(left.size() == expect[severity] * before.size() / 32);
    std::size_t kept = 0;
    for (int r : rings) kept += left.count(r);
    CHECK(kept == static_cast<std::size_t>(out.size()));
    CHECK(out.gt_semantic.size() == static_cast<std::size_t>(out.size()));
  }
}

TEST_CASE("beam_drop severity 2 on a 32-beam cloud leaves 16 elevations") {
  // Every ring populated: a cloud with one point per beam.
  std::vector<double> el(32);
  for (int b = 0; b < 32; ++b) el[static_cast<std::size_t>(b)] = -0.4 + 0.02 * b;
  PointCloud c;
  c.coords.resize(32, 3);
  c.features = Mat::Zero(32, 2);
  for (int b = 0; b < 32; ++b) {
    c.coords.row(b) << 10.0 * std::cos(el[static_cast<std::size_t>(b)]), 0.0, 10.0 * std::sin(el[static_cast<std::size_t>(b)]);
  }
  c.gt_semantic.assign(32, 0);
  c.gt_instance.assign(32, 1);
  const PointCloud out = corrupt(c, CorruptionKind::beam_drop, 2, 0, el);
  const auto rings = beam_rings(out, el);
  CHECK(std::set<int>(rings.begin(), rings.end()).size() == 16);
  CHECK(out.size() == 16);
}

TEST_CASE("jitter matches its sigma and leaves labels untouched") {
  const Scene scene = profile_a_scene(13);
  const auto& cloud = scene.frames[0].cloud;
  const double sigma[] = {0.02, 0.05, 0.10};
  for (int severity = 1; severity <= 3; ++severity) {
    const PointCloud out = corrupt(cloud, CorruptionKind::jitter, severity, 7, scene.beam_elevations);
    REQUIRE(out.size() == cloud.size());
    const Mat d = out.coords - cloud.coords;
    const double n = static_cast<double>(d.size());
    const double mean = d.sum() / n;
    const double sd = std::sqrt((d.array() - mean).square().sum() / (n - 1));
    const double s = sigma[severity - 1];
    // Standard error of a sample standard deviation is s / sqrt(2(n - 1)).
    CHECK(std::abs(sd - s) <= 3.0 * s / std::sqrt(2.0 * (n - 1)));
    CHECK(std::abs(mean) <= 3.0 * s / std::sqrt(n));
    CHECK(out.gt_semantic == cloud.gt_semantic);
    CHECK(out.gt_instance == cloud.gt_instance);
    CHECK(out.features == cloud.features);
  }
  const PointCloud a = corrupt(cloud, CorruptionKind::jitter, 2, 99, scene.beam_elevations);
  const PointCloud b = corrupt(cloud, CorruptionKind::jitter, 2, 99, scene.beam_elevations);
  CHECK(a.coords == b.coords);
}

TEST_CASE("intensity_shift scales the intensity channel only") {
  const Scene scene = profile_a_scene(14);
  const auto& cloud = scene.frames[0].cloud;
  const PointCloud out = corrupt(cloud, CorruptionKind::intensity_shift, 3, 0, scene.beam_elevations);
  CHECK(out.features.col(0) == (2.0 * cloud.features.col(0)).eval());
  CHECK(out.features.col(1) == cloud.features.col(1));
  CHECK(out.coords == cloud.coords);
  CHECK(out.gt_semantic == cloud.gt_semantic);
}

TEST_CASE("corruption arguments are validated") {
  CHECK(parse_corruption("jitter") == CorruptionKind::jitter);
  CHECK(std::string(to_string(parse_corruption("beam_drop"))) == "beam_drop");
  CHECK_THROWS_AS(parse_corruption("fog"), InvalidArgument);
  const Scene scene = profile_a_scene(15);
  CHECK_THROWS_AS(corrupt(scene.frames[0].cloud, CorruptionKind::jitter, 0, 0, scene.beam_elevations), InvalidArgument);
  CHECK_THROWS_AS(corrupt(scene.frames[0].cloud, CorruptionKind::jitter, 4, 0, scene.beam_elevations), InvalidArgument);
}
