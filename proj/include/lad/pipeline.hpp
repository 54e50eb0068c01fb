#pragma once

#include <functional>
#include <vector>

#include "lad/config.hpp"
#include "lad/dataset_io.hpp"
#include "lad/eval.hpp"
#include "lad/train.hpp"

namespace lad {

SourceProfile profile_for_source(int source_id);

/// Pretraining corpus, or the held-out probe corpus when `probe_split` is
/// set. Scene seeds come from the run seed and never overlap between splits.
Dataset synthesize_corpus(const RunConfig& cfg, bool probe_split);

/// Semantic (instance-mask) or SLIC superpixels of one frame.
SuperpixelMap frame_superpixels(const Frame& frame, const SuperpixelConfig& cfg);

/// Calibration used for point-to-pixel pairing: the frame's extrinsics, or
/// a perturbed copy when misalignment is configured (one draw per source).
Pose pairing_extrinsics(const CameraFrame& frame, int source_id, const RunConfig& cfg);

RansacParams ransac_params(const RunConfig& cfg, std::size_t scene_index, int frame_t);
ClusterParams cluster_params(const RunConfig& cfg);

using SuperpixelProvider = std::function<SuperpixelMap(std::size_t scene, int frame)>;
using SegmentProvider = std::function<SegmentAssignment(std::size_t scene, int frame_t)>;

/// Every (t, t + gap) pair of every scene. Without providers the superpixels
/// and segments are computed in memory from `cfg`.
std::vector<TrainingPair> build_training_pairs(const Dataset& dataset, const Model& model, const RunConfig& cfg,
                                               const SuperpixelProvider& superpixels = {},
                                               const SegmentProvider& segments = {});

/// Untrained model with source stats fitted on `dataset`.
Model initial_model(const Dataset& dataset, const RunConfig& cfg);

struct ExperimentResult {
  ProbeReport pretrained;
  ProbeReport random_init;
  std::vector<StepMetrics> metrics;
  Model model;
};

/// Pretrain on `train`, then probe the trained and the untrained model with
/// the same protocol (training subset from `train`, evaluation on `eval`).
ExperimentResult run_experiment(const RunConfig& cfg, const Dataset& train, const Dataset& eval);

}  // namespace lad
