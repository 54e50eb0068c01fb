#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "lad/errors.hpp"
#include "lad/pipeline.hpp"
#include "lad/train.hpp"

using namespace lad;

namespace {

RunConfig small_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.train.seed = seed;
  cfg.probe.seed = seed;
  cfg.corpus.scenes_per_source = 2;
  cfg.corpus.probe_scenes_per_source = 1;
  cfg.corpus.azimuth_count = 180;
  cfg.corpus.image_height = 48;
  cfg.corpus.image_width = 144;
  cfg.train.max_points = 512;
  return cfg;
}

struct Fixture {
  RunConfig cfg;
  Dataset data;
  Model init;
  std::vector<TrainingPair> pairs;

  explicit Fixture(RunConfig c) : cfg(std::move(c)) {
    data = synthesize_corpus(cfg, false);
    init = initial_model(data, cfg);
    pairs = build_training_pairs(data, init, cfg);
  }
};

double mean_total(const std::vector<StepMetrics>& m, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += m[i].loss.total;
  return s / static_cast<double>(end - begin);
}

}  // namespace

TEST_CASE("flatten and unflatten round-trip") {
  EmbedDims dims;
  dims.hidden = 5;
  dims.point_dim = 4;
  dims.embed_dim = 3;
  dims.image_dim = 6;
  Model m = init_model(dims, 3);
  const Vec p = flatten_params(m);
  CHECK(p.size() == m.encoder.w1.size() + m.encoder.b1.size() + m.encoder.w2.size() + m.encoder.b2.size() +
                        m.heads.point.size() + m.heads.image.size());
  Model z = init_model(dims, 4);
  unflatten_params(z, p);
  CHECK(flatten_params(z) == p);
  CHECK(z.encoder.w1 == m.encoder.w1);
  CHECK(z.heads.image == m.heads.image);
  CHECK_THROWS_AS(unflatten_params(z, Vec::Zero(p.size() - 1)), InvalidArgument);
}

TEST_CASE("gradcheck suite passes every entry") {
  const auto report = run_gradcheck_suite(11);
  REQUIRE(!report.entries.empty());
  for (const auto& e : report.entries) {
    INFO(e.name << " rel " << e.max_rel_error);
    CHECK(e.instances > 0);
    CHECK(e.passed);
    CHECK(e.max_rel_error <= e.tolerance);
  }
  CHECK(report.passed());
}

TEST_CASE("evaluate_step gradient matches finite differences on a micro batch") {
  EmbedDims dims;
  dims.hidden = 8;
  dims.point_dim = 8;
  dims.embed_dim = 4;
  dims.image_dim = 6;
  dims.stride = 2;
  Model model = init_model(dims, 21);
  MicroBatch mb = make_micro_batch(dims, 12, 21);
  LossConfig loss;
  loss.temperature = 0.5;
  ModelGrad g;
  evaluate_step(model, mb.steps, loss, &g);
  const Vec analytic = flatten_grad(g);
  const Vec p0 = flatten_params(model);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < p0.size(); i += 7) {
    Vec p = p0;
    p[i] += h;
    unflatten_params(model, p);
    const double up = evaluate_step(model, mb.steps, loss).total;
    p[i] -= 2 * h;
    unflatten_params(model, p);
    const double dn = evaluate_step(model, mb.steps, loss).total;
    const double num = (up - dn) / (2 * h);
    CHECK(std::abs(num - analytic[i]) <= 1e-4 * std::max({std::abs(num), std::abs(analytic[i]), 1e-2}));
  }
}

TEST_CASE("sample_step keeps only candidate rows and respects the cap") {
  Fixture fx(small_config(5));
  REQUIRE(!fx.pairs.empty());
  const auto& pair = fx.pairs.front();
  std::size_t cand_t = 0, cand_t1 = 0;
  for (std::size_t i = 0; i < pair.seg_t.size(); ++i) cand_t += (pair.seg_t[i] > 0 || pair.point_superpixel[i] > 0);
  for (int s : pair.seg_t1) cand_t1 += s > 0;

  std::mt19937_64 gen(1);
  const SourceStep all = sample_step(pair, 1 << 30, gen);
  CHECK(static_cast<std::size_t>(all.coords_t.rows()) == cand_t);
  CHECK(static_cast<std::size_t>(all.coords_t1.rows()) == cand_t1);
  for (std::size_t i = 0; i < all.seg_t.size(); ++i) CHECK((all.seg_t[i] > 0 || all.point_superpixel[i] > 0));
  for (int s : all.seg_t1) CHECK(s > 0);

  const SourceStep capped = sample_step(pair, 64, gen);
  CHECK(capped.coords_t.rows() == std::min<Eigen::Index>(64, static_cast<Eigen::Index>(cand_t)));
  CHECK(capped.coords_t1.rows() == std::min<Eigen::Index>(64, static_cast<Eigen::Index>(cand_t1)));
  CHECK(capped.feats_t.rows() == capped.coords_t.rows());
  CHECK(capped.class_t.size() == static_cast<std::size_t>(capped.coords_t.rows()));
}

TEST_CASE("zero learning rate leaves parameters identical") {
  Fixture fx(small_config(6));
  TrainConfig tc = fx.cfg.train;
  tc.steps = 3;
  tc.learning_rate = 0.0;
  CHECK_NOTHROW(validate(tc));
  const auto res = pretrain(fx.init, fx.pairs, tc);
  CHECK(flatten_params(res.model) == flatten_params(fx.init));
  tc.optimizer = OptimizerKind::sgd_momentum;
  tc.learning_rate = -1e-3;
  CHECK_THROWS_AS(validate(tc), InvalidArgument);
  tc.learning_rate = 0.0;
  const auto res2 = pretrain(fx.init, fx.pairs, tc);
  CHECK(flatten_params(res2.model) == flatten_params(fx.init));
}

TEST_CASE("pretraining is deterministic given the seed") {
  Fixture fx(small_config(8));
  TrainConfig tc = fx.cfg.train;
  tc.steps = 5;
  const auto a = pretrain(fx.init, fx.pairs, tc);
  const auto b = pretrain(fx.init, fx.pairs, tc);
  REQUIRE(a.metrics.size() == 5);
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].loss.total == b.metrics[i].loss.total);
    CHECK(a.metrics[i].grad_norm == b.metrics[i].grad_norm);
    CHECK(a.metrics[i].wall_ms == 0.0);
  }
  CHECK(flatten_params(a.model) == flatten_params(b.model));
  tc.seed += 1;
  const auto c = pretrain(fx.init, fx.pairs, tc);
  CHECK(flatten_params(c.model) != flatten_params(a.model));
}

TEST_CASE("metrics jsonl round-trips") {
  Fixture fx(small_config(9));
  TrainConfig tc = fx.cfg.train;
  tc.steps = 3;
  const auto res = pretrain(fx.init, fx.pairs, tc);
  const auto path = std::filesystem::temp_directory_path() / "lad_test_metrics.jsonl";
  write_metrics_jsonl(res.metrics, path);
  const auto back = read_metrics_jsonl(path);
  REQUIRE(back.size() == res.metrics.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].step == res.metrics[i].step);
    CHECK(back[i].loss.total == doctest::Approx(res.metrics[i].loss.total).epsilon(1e-12));
    CHECK(back[i].loss.vfm == doctest::Approx(res.metrics[i].loss.vfm).epsilon(1e-12));
  }
  std::filesystem::remove(path);
}

TEST_CASE("non-finite parameters fail fast and write a checkpoint") {
  Fixture fx(small_config(10));
  Model bad = fx.init;
  bad.heads.point(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc = fx.cfg.train;
  tc.steps = 2;
  const auto ckpt = std::filesystem::temp_directory_path() / "lad_test_fail.ckpt";
  std::filesystem::remove(ckpt);
  CHECK_THROWS_AS(pretrain(bad, fx.pairs, tc, ckpt), NumericalError);
  CHECK(std::filesystem::exists(ckpt));
  std::filesystem::remove(ckpt);
}

TEST_CASE("total loss decreases over 200 steps on the default corpus") {
  RunConfig cfg;
  cfg.seed = cfg.train.seed = 1;
  const Dataset data = synthesize_corpus(cfg, false);
  const Model init = initial_model(data, cfg);
  const auto pairs = build_training_pairs(data, init, cfg);
  TrainConfig tc = cfg.train;
  tc.steps = 200;
  const auto res = pretrain(init, pairs, tc);
  const double head = mean_total(res.metrics, 0, 20);
  const double tail = mean_total(res.metrics, 180, 200);
  INFO("first 20 mean " << head << ", last 20 mean " << tail);
  CHECK(tail < head);
}
