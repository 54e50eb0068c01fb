#include "lad/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "lad/errors.hpp"
#include "lad/geometry.hpp"
#include "lad/rng.hpp"
#include "lad/rowops.hpp"

namespace lad {

void validate(const TrainConfig& cfg) {
  if (cfg.steps < 1) throw InvalidArgument("train: steps must be >= 1");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw InvalidArgument("train: learning rate must be finite and non-negative");
  }
  if (cfg.temporal_gap < 1) throw InvalidArgument("train: temporal gap must be >= 1");
  if (cfg.max_points < 1) throw InvalidArgument("train: max_points must be >= 1");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw InvalidArgument("train: momentum must lie in [0, 1)");
  validate(cfg.loss);
}

std::vector<int> point_superpixels(const PointCloud& cloud, const CameraFrame& frame, const Pose& lidar_to_camera,
                                   const SuperpixelMap& map) {
  if (map.height != frame.height || map.width != frame.width) {
    throw InvalidArgument("point_superpixels: superpixel map and frame sizes differ");
  }
  const auto proj = project_points(cloud, frame.intrinsics, lidar_to_camera, frame.height, frame.width);
  std::vector<int> out(proj.size(), 0);
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (!proj[i].valid) continue;
    const auto [r, c] = pixel_of(proj[i], frame.height, frame.width);
    out[i] = map.at(r, c);
  }
  return out;
}

SegmentAssignment segment_pair(const Scene& scene, int t, int gap, const RansacParams& ransac,
                               const ClusterParams& cluster) {
  const auto t1 = static_cast<std::size_t>(t + gap);
  if (t < 0 || t1 >= scene.frames.size()) throw InvalidArgument("segment_pair: frame pair out of range");
  const auto agg = aggregate_frames({scene.frames[static_cast<std::size_t>(t)].cloud, scene.frames[t1].cloud},
                                    {scene.poses[static_cast<std::size_t>(t)], scene.poses[t1]});
  return segment_aggregate_and_map(agg, ransac, cluster);
}

TrainingPair build_training_pair(const Scene& scene, int scene_index, int t, int gap, const SuperpixelMap& map,
                                 const SegmentAssignment& segments, const Model& model, const Pose& lidar_to_camera) {
  const auto t1 = static_cast<std::size_t>(t + gap);
  if (t < 0 || t1 >= scene.frames.size()) throw InvalidArgument("build_training_pair: frame pair out of range");
  const auto& ft = scene.frames[static_cast<std::size_t>(t)];
  const auto& ft1 = scene.frames[t1];
  if (segments.per_frame_views.size() != 2 ||
      segments.per_frame_views[0].size() != static_cast<std::size_t>(ft.cloud.size()) ||
      segments.per_frame_views[1].size() != static_cast<std::size_t>(ft1.cloud.size())) {
    throw InvalidArgument("build_training_pair: segment views do not match the frames");
  }
  TrainingPair pair;
  pair.source_id = ft.cloud.source_id;
  pair.scene = scene_index;
  pair.frame_t = t;
  pair.cloud_t = normalize_source_features(ft.cloud, model.stats);
  pair.cloud_t1 = normalize_source_features(ft1.cloud, model.stats);
  pair.superpixels = map;
  pair.point_superpixel = point_superpixels(ft.cloud, ft.camera, lidar_to_camera, map);
  pair.seg_t = segments.per_frame_views[0];
  pair.seg_t1 = segments.per_frame_views[1];
  pair.grid = encode_image(model.image, ft.camera, pixel_classes(ft.camera, scene.instance_classes));
  return pair;
}

namespace {

std::vector<int> capped_sample(std::vector<int> candidates, int cap, std::mt19937_64& gen) {
  const auto k = static_cast<std::size_t>(cap);
  if (candidates.size() <= k) return candidates;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng::below(gen, candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

template <typename T>
std::vector<int> take(const std::vector<T>& v, const std::vector<int>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(static_cast<int>(v[static_cast<std::size_t>(r)]));
  return out;
}

PointsXd take_rows(const PointsXd& m, const std::vector<int>& rows) {
  PointsXd out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Mat take_rows(const Mat& m, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

SourceStep sample_step(const TrainingPair& pair, int max_points, std::mt19937_64& gen) {
  std::vector<int> rows_t, rows_t1;
  for (std::size_t i = 0; i < pair.seg_t.size(); ++i) {
    if (pair.point_superpixel[i] > 0 || pair.seg_t[i] > 0) rows_t.push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < pair.seg_t1.size(); ++i) {
    if (pair.seg_t1[i] > 0) rows_t1.push_back(static_cast<int>(i));
  }
  rows_t = capped_sample(std::move(rows_t), max_points, gen);
  rows_t1 = capped_sample(std::move(rows_t1), max_points, gen);
  SourceStep s;
  s.coords_t = take_rows(pair.cloud_t.coords, rows_t);
  s.feats_t = take_rows(pair.cloud_t.features, rows_t);
  s.coords_t1 = take_rows(pair.cloud_t1.coords, rows_t1);
  s.feats_t1 = take_rows(pair.cloud_t1.features, rows_t1);
  s.point_superpixel = take(pair.point_superpixel, rows_t);
  s.class_t = take(pair.cloud_t.gt_semantic, rows_t);
  s.seg_t = take(pair.seg_t, rows_t);
  s.seg_t1 = take(pair.seg_t1, rows_t1);
  s.grid = &pair.grid;
  s.superpixels = &pair.superpixels;
  return s;
}

Vec flatten_params(const Model& m) {
  const auto& e = m.encoder;
  Vec out(e.w1.size() + e.b1.size() + e.w2.size() + e.b2.size() + m.heads.point.size() + m.heads.image.size());
  out << e.w1.reshaped(), e.b1, e.w2.reshaped(), e.b2, m.heads.point.reshaped(), m.heads.image.reshaped();
  return out;
}

void unflatten_params(Model& m, const Vec& p) {
  auto& e = m.encoder;
  Eigen::Index at = 0;
  auto fill = [&](auto& x) {
    if (at + x.size() > p.size()) throw InvalidArgument("unflatten_params: vector too short");
    x.reshaped() = p.segment(at, x.size());
    at += x.size();
  };
  fill(e.w1);
  fill(e.b1);
  fill(e.w2);
  fill(e.b2);
  fill(m.heads.point);
  fill(m.heads.image);
  if (at != p.size()) throw InvalidArgument("unflatten_params: vector too long");
}

Vec flatten_grad(const ModelGrad& g) {
  const auto& e = g.encoder;
  Vec out(e.w1.size() + e.b1.size() + e.w2.size() + e.b2.size() + g.point_head.size() + g.image_head.size());
  out << e.w1.reshaped(), e.b1, e.w2.reshaped(), e.b2, g.point_head.reshaped(), g.image_head.reshaped();
  return out;
}

namespace {

struct SourceForward {
  PointForward fwd_t, fwd_t1;
  PointHeadOutput head_t, head_t1;
  ImagePoolCache image;
  bool has_image = false;
};

PointHeadOutput head_rows(const Mat& head, const Mat& features) {
  if (features.rows() == 0) {
    PointHeadOutput out;
    out.raw = Mat::Zero(0, head.rows());
    out.embedding = out.raw;
    return out;
  }
  return point_head(head, features);
}

void accumulate(PointEncoderGrad& into, const PointEncoderGrad& g) {
  into.w1 += g.w1;
  into.b1 += g.b1;
  into.w2 += g.w2;
  into.b2 += g.b2;
}

void backward_points(const Model& model, const PointForward& fwd, const PointHeadOutput& head, const Mat& d_embedding,
                     ModelGrad& grad) {
  if (fwd.features.rows() == 0) return;
  const Mat d_raw = normalize_rows_backward(head.raw, head.embedding, d_embedding);
  grad.point_head += d_raw.transpose() * fwd.features;
  accumulate(grad.encoder, encode_points_backward(model.encoder, fwd, d_raw * model.heads.point));
}

}  // namespace

LossBreakdown evaluate_step(const Model& model, const std::vector<SourceStep>& batch, const LossConfig& cfg,
                            ModelGrad* grad) {
  const auto d = model.heads.point.rows();
  std::vector<SourceForward> fw(batch.size());
  std::vector<SourceBatch> sb(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& in = batch[s];
    auto& f = fw[s];
    f.fwd_t = encode_points(model.encoder, model.dims, in.coords_t, in.feats_t);
    f.fwd_t1 = encode_points(model.encoder, model.dims, in.coords_t1, in.feats_t1);
    f.head_t = head_rows(model.heads.point, f.fwd_t.features);
    f.head_t1 = head_rows(model.heads.point, f.fwd_t1.features);

    auto& b = sb[s];
    b.points_t = f.head_t.embedding;
    b.points_t1 = f.head_t1.embedding;
    b.seg_t = in.seg_t;
    b.seg_t1 = in.seg_t1;
    b.superpixels = Mat::Zero(0, d);
    if (in.superpixels == nullptr || in.grid == nullptr) continue;
    const auto groups = members_by_label(in.point_superpixel, in.superpixels->segment_count);
    std::vector<int> segments;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].empty()) continue;
      segments.push_back(static_cast<int>(g) + 1);
      b.superpoints.push_back(groups[g]);
      std::map<int, int> votes;
      for (int i : groups[g]) ++votes[in.class_t[static_cast<std::size_t>(i)]];
      const auto best = std::max_element(votes.begin(), votes.end(),
                                         [](const auto& x, const auto& y) { return x.second < y.second; });
      b.superpoint_class.push_back(best->first);
    }
    if (segments.empty()) continue;
    const auto px = segment_pixels(*in.superpixels, segments);
    b.superpixels = pool_image(model.heads.image, *in.grid, px.pixels, px.members, &f.image).values;
    f.has_image = true;
  }

  const CompositeResult result = composite_objective(sb, cfg);
  if (grad) {
    const auto& e = model.encoder;
    grad->encoder.w1 = Mat::Zero(e.w1.rows(), e.w1.cols());
    grad->encoder.b1 = Vec::Zero(e.b1.size());
    grad->encoder.w2 = Mat::Zero(e.w2.rows(), e.w2.cols());
    grad->encoder.b2 = Vec::Zero(e.b2.size());
    grad->point_head = Mat::Zero(model.heads.point.rows(), model.heads.point.cols());
    grad->image_head = Mat::Zero(model.heads.image.rows(), model.heads.image.cols());
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& g = result.grads[s];
      backward_points(model, fw[s].fwd_t, fw[s].head_t, g.d_points_t, *grad);
      backward_points(model, fw[s].fwd_t1, fw[s].head_t1, g.d_points_t1, *grad);
      if (fw[s].has_image) grad->image_head += pool_image_backward(*batch[s].grid, fw[s].image, g.d_superpixels);
    }
  }
  return result.terms;
}

PretrainResult pretrain(const Model& init, const std::vector<TrainingPair>& pairs, const TrainConfig& cfg,
                        const std::filesystem::path& failure_checkpoint) {
  validate(cfg);
  if (pairs.empty()) throw InvalidArgument("pretrain: no training pairs");
  std::map<int, std::vector<const TrainingPair*>> by_source;
  for (const auto& p : pairs) by_source[p.source_id].push_back(&p);

  PretrainResult out;
  out.model = init;
  Vec theta = flatten_params(init);
  Vec m1 = Vec::Zero(theta.size()), m2 = Vec::Zero(theta.size());
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  for (int step = 0; step < cfg.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    auto gen = rng::make(cfg.seed, rng::Stream::training, static_cast<std::uint64_t>(step));
    std::vector<SourceStep> batch;
    for (const auto& [id, list] : by_source) {
      const auto* pair = list[static_cast<std::size_t>(rng::below(gen, list.size()))];
      batch.push_back(sample_step(*pair, cfg.max_points, gen));
    }
    ModelGrad grad;
    LossBreakdown loss;
    try {
      loss = evaluate_step(out.model, batch, cfg.loss, &grad);
    } catch (const NumericalError&) {
      if (!failure_checkpoint.empty()) write_checkpoint(out.model, failure_checkpoint);
      throw;
    }
    const Vec g = flatten_grad(grad);
    if (!std::isfinite(loss.total) || !g.allFinite()) {
      if (!failure_checkpoint.empty()) write_checkpoint(out.model, failure_checkpoint);
      throw NumericalError("pretrain: non-finite loss at step " + std::to_string(step));
    }

    if (cfg.optimizer == OptimizerKind::adam) {
      m1 = beta1 * m1 + (1.0 - beta1) * g;
      m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, step + 1);
      const double c2 = 1.0 - std::pow(beta2, step + 1);
      theta -= cfg.learning_rate * ((m1 / c1).array() / ((m2 / c2).array().sqrt() + eps)).matrix();
    } else {
      m1 = cfg.momentum * m1 + g;
      theta -= cfg.learning_rate * m1;
    }
    unflatten_params(out.model, theta);

    StepMetrics sm;
    sm.step = step;
    sm.loss = loss;
    sm.grad_norm = g.norm();
    if (cfg.timing) {
      sm.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    out.metrics.push_back(sm);
  }
  return out;
}

void write_metrics_jsonl(const std::vector<StepMetrics>& metrics, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string());
  for (const auto& m : metrics) {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["l_vfm"] = m.loss.vfm;
    j["l_tmp"] = m.loss.tmp;
    j["l_p2s"] = m.loss.p2s;
    j["l_cdp"] = m.loss.cdp;
    j["total"] = m.loss.total;
    j["grad_norm"] = m.grad_norm;
    j["wall_ms"] = m.wall_ms;
    out << j.dump() << '\n';
  }
  if (!out) throw FormatError(FormatErrorCode::io_failure, "write failed for " + path.string());
}

std::vector<StepMetrics> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string());
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      StepMetrics m;
      m.step = j.at("step").get<int>();
      m.loss.vfm = j.at("l_vfm").get<double>();
      m.loss.tmp = j.at("l_tmp").get<double>();
      m.loss.p2s = j.at("l_p2s").get<double>();
      m.loss.cdp = j.at("l_cdp").get<double>();
      m.loss.total = j.at("total").get<double>();
      m.grad_norm = j.at("grad_norm").get<double>();
      m.wall_ms = j.at("wall_ms").get<double>();
      out.push_back(m);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatErrorCode::malformed_header, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lad
