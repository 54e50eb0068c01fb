#include "lad/pipeline.hpp"

#include "lad/rng.hpp"

namespace lad {

SourceProfile profile_for_source(int source_id) {
  switch (source_id) {
    case 1: return source_profile_a();
    case 2: return source_profile_b();
    default: throw InvalidArgument("unknown source id " + std::to_string(source_id));
  }
}

Dataset synthesize_corpus(const RunConfig& cfg, bool probe_split) {
  const auto& c = cfg.corpus;
  const int scenes = probe_split ? c.probe_scenes_per_source : c.scenes_per_source;
  Dataset out;
  for (int source : c.sources) {
    const auto profile = profile_for_source(source);
    for (int k = 0; k < scenes; ++k) {
      const std::uint64_t sub = (probe_split ? 1ULL << 32 : 0ULL) + static_cast<std::uint64_t>(source) * 100000ULL +
                                static_cast<std::uint64_t>(k);
      auto spec = random_scene_spec(rng::derive_seed(cfg.seed, rng::Stream::scene, sub), profile, c.frames_per_scene,
                                    c.azimuth_count);
      spec.camera = default_camera(c.image_height, c.image_width);
      out.scenes.push_back(synthesize_scene(spec));
    }
  }
  return out;
}

SuperpixelMap frame_superpixels(const Frame& frame, const SuperpixelConfig& cfg) {
  const auto& cam = frame.camera;
  switch (cfg.mode) {
    case SuperpixelMode::semantic: return semantic_superpixels_from_mask(cam.gt_mask, cam.height, cam.width);
    case SuperpixelMode::slic: return slic_superpixels(cam.rgb, cam.height, cam.width, cfg.slic);
    case SuperpixelMode::file: break;
  }
  throw InvalidArgument("frame_superpixels: file mode superpixels must be loaded from disk");
}

Pose pairing_extrinsics(const CameraFrame& frame, int source_id, const RunConfig& cfg) {
  if (cfg.misalign.translation == 0.0 && cfg.misalign.rotation == 0.0) return frame.extrinsics;
  return perturb_extrinsics(frame.extrinsics, cfg.misalign.translation, cfg.misalign.rotation,
                            rng::derive_seed(cfg.seed, rng::Stream::misalignment, static_cast<std::uint64_t>(source_id)));
}

RansacParams ransac_params(const RunConfig& cfg, std::size_t scene_index, int frame_t) {
  RansacParams p;
  p.iterations = cfg.geoseg.ransac_iterations;
  p.inlier_threshold = cfg.geoseg.inlier_threshold;
  p.seed = rng::derive_seed(cfg.seed, rng::Stream::ransac, scene_index * 1024 + static_cast<std::size_t>(frame_t));
  return p;
}

ClusterParams cluster_params(const RunConfig& cfg) {
  ClusterParams p;
  p.eps = cfg.geoseg.eps;
  p.min_pts = cfg.geoseg.min_pts;
  p.min_segment_size = cfg.geoseg.min_segment_size;
  return p;
}

std::vector<TrainingPair> build_training_pairs(const Dataset& dataset, const Model& model, const RunConfig& cfg,
                                               const SuperpixelProvider& superpixels, const SegmentProvider& segments) {
  const int gap = cfg.train.temporal_gap;
  std::vector<TrainingPair> pairs;
  for (std::size_t s = 0; s < dataset.scenes.size(); ++s) {
    const auto& scene = dataset.scenes[s];
    for (int t = 0; t + gap < static_cast<int>(scene.frames.size()); ++t) {
      const auto& frame = scene.frames[static_cast<std::size_t>(t)];
      const SuperpixelMap map = superpixels ? superpixels(s, t) : frame_superpixels(frame, cfg.superpixels);
      const SegmentAssignment seg =
          segments ? segments(s, t) : segment_pair(scene, t, gap, ransac_params(cfg, s, t), cluster_params(cfg));
      pairs.push_back(build_training_pair(scene, static_cast<int>(s), t, gap, map, seg, model,
                                          pairing_extrinsics(frame.camera, scene.source_profile.source_id, cfg)));
    }
  }
  return pairs;
}

Model initial_model(const Dataset& dataset, const RunConfig& cfg) {
  Model model = init_model(cfg.embed, cfg.seed);
  std::vector<const PointCloud*> clouds;
  for (const auto& s : dataset.scenes) {
    for (const auto& f : s.frames) clouds.push_back(&f.cloud);
  }
  model.stats = fit_source_stats(clouds);
  return model;
}

ExperimentResult run_experiment(const RunConfig& cfg, const Dataset& train, const Dataset& eval) {
  const Model init = initial_model(train, cfg);
  const auto pairs = build_training_pairs(train, init, cfg);
  auto trained = pretrain(init, pairs, cfg.train);
  ExperimentResult out;
  out.model = std::move(trained.model);
  out.metrics = std::move(trained.metrics);
  out.pretrained = linear_probe(out.model, train, eval, cfg.probe);
  out.random_init = linear_probe(init, train, eval, cfg.probe);
  return out;
}

}  // namespace lad
