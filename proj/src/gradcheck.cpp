#include <algorithm>
#include <chrono>
#include <limits>
#include <fstream>
#include <functional>

#include "json.hpp"
#include "lad/errors.hpp"
#include "lad/rng.hpp"
#include "lad/rowops.hpp"
#include "lad/train.hpp"

namespace lad {

namespace {

constexpr double kStep = 1e-5;
constexpr double kLossTolerance = 1e-4;
constexpr double kPipelineTolerance = 1e-3;
constexpr int kInstances = 20;
// Instances closer than this to a max-pool switch or a ReLU kink, or with a
// nearly zero pooled row, are redrawn.
constexpr double kLossMargin = 1e-3;
constexpr double kPipelineMargin = 1e-4;
constexpr double kMinPooledNorm = 0.1;

Mat central_difference(const std::function<double(const Mat&)>& f, const Mat& x) {
  Mat out(x.rows(), x.cols());
  Mat probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = probe.data()[i];
    probe.data()[i] = keep + kStep;
    const double up = f(probe);
    probe.data()[i] = keep - kStep;
    const double down = f(probe);
    probe.data()[i] = keep;
    out.data()[i] = (up - down) / (2.0 * kStep);
  }
  return out;
}

int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  return lo + static_cast<int>(rng::below(gen, static_cast<std::uint64_t>(hi - lo + 1)));
}

Mat unit_rows(std::mt19937_64& gen, int rows, int cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng::normal(gen);
  return normalize_rows(m);
}

struct PoolMargin {
  double gap = std::numeric_limits<double>::infinity();   // top-two distance in any column
  double norm = std::numeric_limits<double>::infinity();  // smallest pooled row
  bool below(double min_gap, double min_norm) const { return gap < min_gap || norm < min_norm; }
  void merge(const PoolMargin& o) {
    gap = std::min(gap, o.gap);
    norm = std::min(norm, o.norm);
  }
};

PoolMargin pool_margin(const Mat& x, const std::vector<IndexList>& groups) {
  PoolMargin m;
  for (const auto& g : groups) {
    if (g.empty()) continue;
    Vec pooled(x.cols());
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      double a = -std::numeric_limits<double>::infinity(), b = a;
      for (int i : g) {
        const double v = x(i, d);
        if (v > a) {
          b = a;
          a = v;
        } else if (v > b) {
          b = v;
        }
      }
      if (g.size() > 1) m.gap = std::min(m.gap, a - b);
      pooled(d) = a;
    }
    m.norm = std::min(m.norm, pooled.norm());
  }
  return m;
}

/// Smallest row norm of the per-group means.
double min_mean_norm(const Mat& x, const std::vector<IndexList>& groups) {
  double out = std::numeric_limits<double>::infinity();
  for (const auto& g : groups) {
    if (g.empty()) continue;
    Vec mean = Vec::Zero(x.cols());
    for (int i : g) mean += x.row(i).transpose();
    out = std::min(out, mean.norm() / static_cast<double>(g.size()));
  }
  return out;
}

double min_mean_norm(const Mat& x, const std::vector<int>& seg) {
  const int count = seg.empty() ? 0 : *std::max_element(seg.begin(), seg.end());
  return min_mean_norm(x, members_by_label(seg, count));
}

/// Distance to the nearest argmax switch or near-zero row of the segment max
/// pool, over the full groups and the truncated groups of the literal reading.
PoolMargin max_pool_margin(const Mat& x, const std::vector<int>& seg) {
  const int count = seg.empty() ? 0 : *std::max_element(seg.begin(), seg.end());
  auto groups = members_by_label(seg, count);
  std::erase_if(groups, [](const IndexList& g) { return g.empty(); });
  if (groups.empty()) return {};
  PoolMargin m = pool_margin(x, groups);
  std::size_t common = groups.front().size();
  for (const auto& g : groups) common = std::min(common, g.size());
  for (auto& g : groups) g.resize(common);
  m.merge(pool_margin(x, groups));
  return m;
}

/// Labels in 1..segments with every segment used at least once, plus noise.
std::vector<int> random_labels(std::mt19937_64& gen, int n, int segments) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i < segments ? i + 1 : uniform_int(gen, 0, segments);
  return out;
}

struct Tracker {
  GradcheckEntry entry;
  Tracker(std::string name, double tol) {
    entry.name = std::move(name);
    entry.tolerance = tol;
  }
  void add(const Mat& analytic, const Mat& numeric) {
    entry.max_rel_error = std::max(entry.max_rel_error, max_relative_error(analytic, numeric));
  }
  GradcheckEntry done(int instances) {
    entry.instances = instances;
    entry.passed = entry.max_rel_error <= entry.tolerance;
    return entry;
  }
};

LossConfig random_cfg(std::mt19937_64& gen) {
  LossConfig cfg;
  cfg.temperature = rng::uniform(gen, 0.1, 1.0);
  return cfg;
}

GradcheckEntry check_spatial(std::uint64_t seed, bool slic) {
  Tracker t(slic ? "loss_slic" : "loss_vfm", kLossTolerance);
  auto gen = rng::make(seed, rng::Stream::gradcheck, slic ? 1 : 2);
  for (int k = 0; k < kInstances; ++k) {
    const int m = uniform_int(gen, 2, 16), d = uniform_int(gen, 2, 8);
    const Mat q = unit_rows(gen, m, d), kk = unit_rows(gen, m, d);
    const auto cfg = random_cfg(gen);
    auto loss = [&](const Mat& qq, const Mat& kp) { return slic ? loss_slic(qq, kp, cfg) : loss_vfm(qq, kp, cfg); };
    const auto r = loss(q, kk);
    t.add(r.grad_anchor, central_difference([&](const Mat& x) { return loss(q, x).value; }, kk));
    t.add(r.grad_target, central_difference([&](const Mat& x) { return loss(x, kk).value; }, q));
  }
  return t.done(kInstances);
}

GradcheckEntry check_tmp(std::uint64_t seed) {
  Tracker t("loss_tmp", kLossTolerance);
  auto gen = rng::make(seed, rng::Stream::gradcheck, 3);
  for (int k = 0; k < kInstances; ++k) {
    Mat a, b;
    std::vector<int> s0, s1;
    do {
      const int m = uniform_int(gen, 2, 6), d = uniform_int(gen, 2, 8);
      const int n0 = uniform_int(gen, m, 16), n1 = uniform_int(gen, m, 16);
      a = unit_rows(gen, n0, d);
      b = unit_rows(gen, n1, d);
      s0 = random_labels(gen, n0, m);
      s1 = random_labels(gen, n1, m);
    } while (std::min(min_mean_norm(a, s0), min_mean_norm(b, s1)) < kMinPooledNorm);
    const auto cfg = random_cfg(gen);
    const auto r = loss_tmp(a, b, s0, s1, cfg);
    t.add(r.grad_anchor, central_difference([&](const Mat& x) { return loss_tmp(x, b, s0, s1, cfg).value; }, a));
    t.add(r.grad_target, central_difference([&](const Mat& x) { return loss_tmp(a, x, s0, s1, cfg).value; }, b));
  }
  return t.done(kInstances);
}

GradcheckEntry check_p2s(std::uint64_t seed, P2sMode mode) {
  const bool literal = mode == P2sMode::literal_sampled;
  Tracker t(literal ? "loss_p2s_literal" : "loss_p2s", kLossTolerance);
  auto gen = rng::make(seed, rng::Stream::gradcheck, literal ? 5 : 4);
  for (int k = 0; k < kInstances; ++k) {
    Mat a;
    std::vector<int> seg;
    do {
      const int m = uniform_int(gen, 2, 6), d = uniform_int(gen, 2, 8);
      const int n = uniform_int(gen, m, 16);
      a = unit_rows(gen, n, d);
      seg = random_labels(gen, n, m);
    } while (max_pool_margin(a, seg).below(kLossMargin, kMinPooledNorm));
    auto cfg = random_cfg(gen);
    cfg.p2s_mode = mode;
    const auto r = loss_p2s(a, seg, cfg);
    t.add(r.grad_anchor, central_difference([&](const Mat& x) { return loss_p2s(x, seg, cfg).value; }, a));
  }
  return t.done(kInstances);
}

GradcheckEntry check_cdp(std::uint64_t seed) {
  Tracker t("loss_cdp", kLossTolerance);
  auto gen = rng::make(seed, rng::Stream::gradcheck, 6);
  for (int k = 0; k < kInstances; ++k) {
    const int m = uniform_int(gen, 2, 16), n = uniform_int(gen, 2, 16), d = uniform_int(gen, 2, 8);
    const Mat km = unit_rows(gen, m, d), kn = unit_rows(gen, n, d);
    std::vector<int> cm(static_cast<std::size_t>(m)), cn(static_cast<std::size_t>(n));
    for (auto& c : cm) c = uniform_int(gen, 0, 4);
    for (auto& c : cn) c = uniform_int(gen, 0, 4);
    cm[0] = cn[0] = 0;
    cm[1 % m] = cn[1 % n] = 1;
    const auto pairing = pair_by_class(cm, cn);
    const auto cfg = random_cfg(gen);
    const auto r = loss_cdp(km, kn, pairing, cfg);
    t.add(r.grad_anchor, central_difference([&](const Mat& x) { return loss_cdp(x, kn, pairing, cfg).value; }, km));
    t.add(r.grad_target, central_difference([&](const Mat& x) { return loss_cdp(km, x, pairing, cfg).value; }, kn));
  }
  return t.done(kInstances);
}

GradcheckEntry check_total(std::uint64_t seed) {
  Tracker t("total", kLossTolerance);
  auto gen = rng::make(seed, rng::Stream::gradcheck, 7);
  for (int k = 0; k < kInstances; ++k) {
    const int d = uniform_int(gen, 2, 8);
    std::vector<SourceBatch> batch(2);
    auto margin = [&] {
      PoolMargin out;
      for (const auto& b : batch) {
        out.merge(max_pool_margin(b.points_t, b.seg_t));
        out.merge(max_pool_margin(b.points_t1, b.seg_t1));
      }
      return out;
    };
    for (auto& b : batch) {
      const int m = uniform_int(gen, 2, 6);
      const int n0 = uniform_int(gen, m, 16), n1 = uniform_int(gen, m, 16);
      b.points_t = unit_rows(gen, n0, d);
      b.points_t1 = unit_rows(gen, n1, d);
      b.seg_t = random_labels(gen, n0, m);
      b.seg_t1 = random_labels(gen, n1, m);
      const int sp = uniform_int(gen, 2, std::min(n0, 8));
      b.superpoints = members_by_label(random_labels(gen, n0, sp), sp);
      b.superpixels = unit_rows(gen, sp, d);
      for (int s = 0; s < sp; ++s) b.superpoint_class.push_back(s % 3);
    }
    auto mean_norm = [&] {
      double out = std::numeric_limits<double>::infinity();
      for (const auto& b : batch) {
        out = std::min({out, min_mean_norm(b.points_t, b.superpoints), min_mean_norm(b.points_t, b.seg_t),
                        min_mean_norm(b.points_t1, b.seg_t1)});
      }
      return out;
    };
    while (margin().below(kLossMargin, kMinPooledNorm) || mean_norm() < kMinPooledNorm) {
      for (auto& b : batch) {
        b.points_t = unit_rows(gen, static_cast<int>(b.points_t.rows()), d);
        b.points_t1 = unit_rows(gen, static_cast<int>(b.points_t1.rows()), d);
      }
    }
    LossConfig cfg = random_cfg(gen);
    cfg.weights = {rng::uniform(gen, 0.5, 2.0), rng::uniform(gen, 0.5, 2.0), rng::uniform(gen, 0.5, 2.0),
                   rng::uniform(gen, 0.5, 2.0)};
    const auto r = composite_objective(batch, cfg);
    for (std::size_t s = 0; s < 2; ++s) {
      auto with = [&](Mat SourceBatch::*field) {
        return [&, field](const Mat& x) {
          auto b2 = batch;
          b2[s].*field = x;
          return composite_objective(b2, cfg).terms.total;
        };
      };
      t.add(r.grads[s].d_points_t, central_difference(with(&SourceBatch::points_t), batch[s].points_t));
      t.add(r.grads[s].d_points_t1, central_difference(with(&SourceBatch::points_t1), batch[s].points_t1));
      t.add(r.grads[s].d_superpixels, central_difference(with(&SourceBatch::superpixels), batch[s].superpixels));
    }
  }
  return t.done(kInstances);
}

Mat as_column(const Vec& v) { return v; }

/// Whether a micro batch stays clear of ReLU kinks and max-pool switches.
bool pipeline_well_posed(const Model& model, const MicroBatch& mb) {
  double relu = std::numeric_limits<double>::infinity();
  double mean = relu;
  PoolMargin pool;
  auto frame = [&](const PointsXd& coords, const Mat& feats, const std::vector<int>& seg) {
    const PointForward fwd = encode_points(model.encoder, model.dims, coords, feats);
    relu = std::min({relu, fwd.pre1.cwiseAbs().minCoeff(), fwd.pre2.cwiseAbs().minCoeff()});
    const Mat raw = point_head_raw(model.heads.point, fwd.features);
    if ((raw.rowwise().norm().array() == 0.0).any()) {
      relu = 0.0;
      return;
    }
    const Mat emb = normalize_rows(raw);
    pool.merge(max_pool_margin(emb, seg));
    mean = std::min(mean, min_mean_norm(emb, seg));
  };
  for (const auto& st : mb.steps) {
    frame(st.coords_t, st.feats_t, st.seg_t);
    frame(st.coords_t1, st.feats_t1, st.seg_t1);
    const Mat emb = point_head(model.heads.point,
                               encode_points(model.encoder, model.dims, st.coords_t, st.feats_t).features).embedding;
    mean = std::min(mean, min_mean_norm(emb, st.point_superpixel));
  }
  return relu >= kPipelineMargin && !pool.below(kPipelineMargin, kMinPooledNorm) && mean >= kMinPooledNorm;
}

GradcheckEntry check_pipeline(std::uint64_t seed, bool full_dims) {
  Tracker t(full_dims ? "pipeline_default_dims" : "pipeline", kPipelineTolerance);
  EmbedDims dims;
  if (!full_dims) {
    dims.hidden = 8;
    dims.point_dim = 8;
    dims.embed_dim = 4;
    dims.image_dim = 6;
    dims.stride = 2;
  } else {
    dims.stride = 2;
  }
  const int instances = full_dims ? 2 : 5;
  for (int k = 0; k < instances; ++k) {
    Model model;
    MicroBatch mb;
    std::mt19937_64 gen;
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t sub = (full_dims ? 100 : 200) + static_cast<std::uint64_t>(k) + 10000 * attempt;
      gen = rng::make(seed, rng::Stream::gradcheck, sub);
      model = init_model(dims, rng::derive_seed(seed, rng::Stream::gradcheck, sub));
      for (Eigen::Index i = 0; i < model.encoder.b1.size(); ++i) model.encoder.b1(i) = rng::uniform(gen, -0.1, 0.1);
      for (Eigen::Index i = 0; i < model.encoder.b2.size(); ++i) model.encoder.b2(i) = rng::uniform(gen, 0.5, 1.0);
      mb = make_micro_batch(dims, 16, rng::derive_seed(seed, rng::Stream::gradcheck, sub + 1000));
      if (pipeline_well_posed(model, mb)) break;
    }
    LossConfig cfg;
    cfg.temperature = 0.5;

    ModelGrad grad;
    evaluate_step(model, mb.steps, cfg, &grad);
    const Vec analytic = flatten_grad(grad);
    const Vec theta = flatten_params(model);

    std::vector<Eigen::Index> coords;
    if (full_dims) {
      for (int c = 0; c < 80; ++c) coords.push_back(static_cast<Eigen::Index>(rng::below(gen, static_cast<std::uint64_t>(theta.size()))));
    } else {
      for (Eigen::Index c = 0; c < theta.size(); ++c) coords.push_back(c);
    }
    Vec a(static_cast<Eigen::Index>(coords.size())), n(static_cast<Eigen::Index>(coords.size()));
    Model probe = model;
    for (std::size_t c = 0; c < coords.size(); ++c) {
      const auto idx = coords[c];
      auto at = [&](double delta) {
        Vec p = theta;
        p(idx) += delta;
        unflatten_params(probe, p);
        return evaluate_step(probe, mb.steps, cfg).total;
      };
      a(static_cast<Eigen::Index>(c)) = analytic(idx);
      n(static_cast<Eigen::Index>(c)) = (at(kStep) - at(-kStep)) / (2.0 * kStep);
    }
    t.add(as_column(a), as_column(n));
  }
  return t.done(instances);
}

}  // namespace

bool GradcheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double max_relative_error(const Mat& analytic, const Mat& numeric) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw InvalidArgument("max_relative_error: shape mismatch");
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
    if (!std::isfinite(rel)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, rel);
  }
  return worst;
}

MicroBatch make_micro_batch(const EmbedDims& dims, int points_per_frame, std::uint64_t seed) {
  if (points_per_frame < 4) throw InvalidArgument("make_micro_batch: need at least 4 points per frame");
  auto gen = rng::make(seed, rng::Stream::gradcheck, 0);
  MicroBatch mb;
  const int h = 2 * dims.stride + 1, w = 4 * dims.stride + 1;
  for (int s = 0; s < 2; ++s) {
    ImageGrid grid;
    grid.stride = dims.stride;
    grid.rows = (h - 1) / dims.stride + 1;
    grid.cols = (w - 1) / dims.stride + 1;
    grid.values.resize(grid.rows * grid.cols, dims.image_dim);
    for (Eigen::Index i = 0; i < grid.values.size(); ++i) grid.values.data()[i] = rng::normal(gen);
    mb.grids.push_back(grid);

    SuperpixelMap map;
    map.height = h;
    map.width = w;
    map.segment_count = 2;
    map.kind = SuperpixelKind::semantic;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) map.labels.push_back(r == 0 ? 0 : (c < w / 2 ? 1 : 2));
    }
    mb.maps.push_back(map);
  }
  auto frame = [&](int n, PointsXd& coords, Mat& feats, std::vector<int>& seg) {
    coords.resize(n, 3);
    feats.resize(n, dims.feature_channels);
    seg.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      const int cluster = i % 2;
      const Vec3 center(cluster == 0 ? 0.0 : 3.0, 0.0, 0.0);
      for (int k = 0; k < 3; ++k) coords(i, k) = center(k) + rng::uniform(gen, -0.15, 0.15);
      for (int k = 0; k < dims.feature_channels; ++k) feats(i, k) = rng::normal(gen);
      seg[static_cast<std::size_t>(i)] = i == n - 1 ? 0 : cluster + 1;
    }
  };
  for (int s = 0; s < 2; ++s) {
    SourceStep st;
    frame(points_per_frame, st.coords_t, st.feats_t, st.seg_t);
    frame(points_per_frame, st.coords_t1, st.feats_t1, st.seg_t1);
    for (int i = 0; i < points_per_frame; ++i) {
      st.point_superpixel.push_back(i == 0 ? 0 : 1 + i % 2);
      st.class_t.push_back(i % 2 == 0 ? 1 : 3);
    }
    mb.steps.push_back(st);
  }
  for (int s = 0; s < 2; ++s) {
    mb.steps[static_cast<std::size_t>(s)].grid = &mb.grids[static_cast<std::size_t>(s)];
    mb.steps[static_cast<std::size_t>(s)].superpixels = &mb.maps[static_cast<std::size_t>(s)];
  }
  return mb;
}

GradcheckReport run_gradcheck_suite(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport r;
  r.entries.push_back(check_spatial(seed, false));
  r.entries.push_back(check_spatial(seed, true));
  r.entries.push_back(check_tmp(seed));
  r.entries.push_back(check_p2s(seed, P2sMode::against_clusters));
  r.entries.push_back(check_p2s(seed, P2sMode::literal_sampled));
  r.entries.push_back(check_cdp(seed));
  r.entries.push_back(check_total(seed));
  r.entries.push_back(check_pipeline(seed, false));
  r.entries.push_back(check_pipeline(seed, true));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void write_gradcheck_json(const GradcheckReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["passed"] = report.passed();
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : report.entries) {
    nlohmann::ordered_json je;
    je["name"] = e.name;
    je["instances"] = e.instances;
    je["max_rel_error"] = e.max_rel_error;
    je["tolerance"] = e.tolerance;
    je["passed"] = e.passed;
    j["entries"].push_back(je);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace lad
