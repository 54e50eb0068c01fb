#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lad/embed.hpp"
#include "lad/geoseg.hpp"
#include "lad/objectives.hpp"
#include "lad/superpixels.hpp"

namespace lad {

enum class OptimizerKind { adam, sgd_momentum };

struct TrainConfig {
  int steps = 500;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;  // sgd_momentum only
  int temporal_gap = 1;
  int max_points = 4096;  // per frame and step; larger frames are subsampled
  std::uint64_t seed = 0;
  LossConfig loss;
  bool timing = false;  // record wall-clock per step (breaks byte-identical logs)
};

void validate(const TrainConfig& cfg);

/// A (t, t + gap) frame pair with everything the objective needs. Point
/// features are already normalized with the model's source stats.
struct TrainingPair {
  int source_id = 0;
  int scene = 0;
  int frame_t = 0;
  PointCloud cloud_t;
  PointCloud cloud_t1;
  SuperpixelMap superpixels;       // frame t
  std::vector<int> point_superpixel;  // per point of t: superpixel label, 0 when out of view or unlabeled
  std::vector<int> seg_t;          // geometric segments, shared id space over both frames
  std::vector<int> seg_t1;
  ImageGrid grid;                  // frozen image features of frame t
};

/// Superpixel label of every point of `cloud` under the given calibration.
std::vector<int> point_superpixels(const PointCloud& cloud, const CameraFrame& frame, const Pose& lidar_to_camera,
                                   const SuperpixelMap& map);

/// `segments.per_frame_views` must hold views of frames t and t + gap.
TrainingPair build_training_pair(const Scene& scene, int scene_index, int t, int gap, const SuperpixelMap& map,
                                 const SegmentAssignment& segments, const Model& model, const Pose& lidar_to_camera);

/// Ground removal and clustering of the aggregate of frames t and t + gap.
SegmentAssignment segment_pair(const Scene& scene, int t, int gap, const RansacParams& ransac,
                               const ClusterParams& cluster);

/// One source's rows for a single objective evaluation.
struct SourceStep {
  PointsXd coords_t;
  Mat feats_t;
  PointsXd coords_t1;
  Mat feats_t1;
  std::vector<int> point_superpixel;  // per row of t
  std::vector<int> class_t;           // gt class per row of t, used for cross-source pairing
  std::vector<int> seg_t;
  std::vector<int> seg_t1;
  const ImageGrid* grid = nullptr;
  const SuperpixelMap* superpixels = nullptr;
};

/// Random rows of a pair for one step: frame t keeps points that are in a
/// superpixel or a segment, frame t + gap keeps segment points; each side is
/// capped at `max_points`.
SourceStep sample_step(const TrainingPair& pair, int max_points, std::mt19937_64& gen);

struct ModelGrad {
  PointEncoderGrad encoder;
  Mat point_head;
  Mat image_head;
};

/// Trainable parameters in a fixed order: w1, b1, w2, b2, point head, image head.
Vec flatten_params(const Model& model);
void unflatten_params(Model& model, const Vec& params);
Vec flatten_grad(const ModelGrad& grad);

/// Composite objective of one step and, when `grad` is given, its exact
/// gradient for every trainable parameter.
LossBreakdown evaluate_step(const Model& model, const std::vector<SourceStep>& batch, const LossConfig& cfg,
                            ModelGrad* grad = nullptr);

struct StepMetrics {
  int step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct PretrainResult {
  Model model;
  std::vector<StepMetrics> metrics;
};

/// Per step: one random pair per source, objective, backward, update. A
/// non-finite loss writes the last good parameters to `failure_checkpoint`
/// (when non-empty) and throws NumericalError.
PretrainResult pretrain(const Model& init, const std::vector<TrainingPair>& pairs, const TrainConfig& cfg,
                        const std::filesystem::path& failure_checkpoint = {});

/// One JSON record per line.
void write_metrics_jsonl(const std::vector<StepMetrics>& metrics, const std::filesystem::path& path);
std::vector<StepMetrics> read_metrics_jsonl(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Finite-difference suite

struct GradcheckEntry {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0.0;
  bool passed() const;
};

/// |a - n| / max(|a|, |n|, 1e-6), maximized over entries.
double max_relative_error(const Mat& analytic, const Mat& numeric);

/// Every loss term and the weighted total against central differences
/// (h = 1e-5, 20 instances each, M <= 16, D <= 8, tolerance 1e-4), plus the
/// full pipeline (encoder, heads, pooling, losses) on micro-batches of at
/// most 64 points and 2 segments (tolerance 1e-3).
GradcheckReport run_gradcheck_suite(std::uint64_t seed);

void write_gradcheck_json(const GradcheckReport& report, const std::filesystem::path& path);

/// Micro-batch used by the end-to-end check: two sources, two frames each,
/// two segments per frame, a tiny image.
struct MicroBatch {
  MicroBatch() = default;
  MicroBatch(MicroBatch&&) = default;
  MicroBatch& operator=(MicroBatch&&) = default;
  MicroBatch(const MicroBatch&) = delete;  // steps point into grids and maps

  std::vector<SourceStep> steps;
  std::vector<ImageGrid> grids;
  std::vector<SuperpixelMap> maps;
};
MicroBatch make_micro_batch(const EmbedDims& dims, int points_per_frame, std::uint64_t seed);

}  // namespace lad
