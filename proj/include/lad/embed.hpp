#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "lad/geoseg.hpp"
#include "lad/scene_synth.hpp"
#include "lad/superpixels.hpp"
#include "lad/types.hpp"

namespace lad {

/// Rows of a shared D-dimensional space. When `normalized` is set every row
/// has unit norm.
struct EmbeddingMatrix {
  Mat values;
  bool normalized = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }

  /// Throws NumericalError on a zero row.
  static EmbeddingMatrix from_raw(const Mat& raw);
  bool check_normalized(double tol = 1e-6) const;
};

// ---------------------------------------------------------------------------
// Per-source feature statistics

struct ChannelStats {
  Vec mean;
  Vec stddev;  // population
  std::uint64_t count = 0;
};

struct SourceStats {
  std::map<int, ChannelStats> sources;

  bool has(int source_id) const { return sources.count(source_id) > 0; }
};

/// Fits mean and population deviation per channel, separately per source id.
SourceStats fit_source_stats(const std::vector<const PointCloud*>& clouds);

/// e' = (e - mean) / max(stddev, 1e-8) per channel. Throws InvalidArgument for
/// a source without stats or a feature-width mismatch.
PointCloud normalize_source_features(const PointCloud& cloud, const SourceStats& stats);

// ---------------------------------------------------------------------------
// Encoders and heads

struct EmbedDims {
  int feature_channels = 2;  // L
  int hidden = 64;           // h
  int point_dim = 64;        // C
  int embed_dim = 32;        // D
  int image_dim = 64;        // E
  int stride = 4;            // s
  double beta = 0.5;         // weight of the semantic one-hot in image features
  double voxel = 0.10;       // meters
  double coord_scale = 0.1;  // coordinates enter the encoder scaled by this

  int input_dim() const { return 3 + feature_channels; }
};

/// x_i = [coord_scale * p_i, e_i]
/// h1 = relu(W1 x + b1)
/// v  = mean of h1 over the voxel of x_i
/// f  = relu(W2 [h1; v] + b2)
struct PointEncoder {
  Mat w1;  // h x (3 + L)
  Vec b1;
  Mat w2;  // C x 2h
  Vec b2;
};

/// Trainable heads: point C -> D and image E -> D (a per-pixel 1x1 map).
struct ProjectionHeads {
  Mat point;  // D x C
  Mat image;  // D x E
};

/// Frozen image features: a seeded random projection of each (2s+1)^2 RGB
/// patch around a stride-s grid node, blended with the semantic one-hot of
/// the node pixel.
struct ImageEncoder {
  int stride = 4;
  int dim = 64;
  double beta = 0.5;
  std::uint64_t seed = 0;
  Mat projection;  // E x 3 (2s+1)^2

  static ImageEncoder create(const EmbedDims& dims, std::uint64_t seed);
};

struct Model {
  EmbedDims dims;
  PointEncoder encoder;
  ProjectionHeads heads;
  ImageEncoder image;
  SourceStats stats;
};

/// He-normal weights, zero biases; image encoder from the same seed.
Model init_model(const EmbedDims& dims, std::uint64_t seed);

/// Caches of the point forward pass needed by the backward pass.
struct PointForward {
  Mat input;    // N x (3 + L)
  Mat pre1;     // N x h
  Mat hidden;   // N x h
  Mat voxmean;  // N x h
  Mat pre2;     // N x C
  Mat features; // N x C
  std::vector<IndexList> voxels;
  std::vector<int> voxel_of;
};

/// Voxel membership at `cell` meters, voxels numbered by first occurrence.
void voxelize(const PointsXd& coords, double cell, std::vector<IndexList>& voxels, std::vector<int>& voxel_of);

/// `cloud` features must already be normalized.
PointForward encode_points(const PointEncoder& enc, const EmbedDims& dims, const PointCloud& cloud);
PointForward encode_points(const PointEncoder& enc, const EmbedDims& dims, const PointsXd& coords, const Mat& features);

struct PointEncoderGrad {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;
};

/// Gradient of a scalar w.r.t. encoder parameters, given dL/d(features).
PointEncoderGrad encode_points_backward(const PointEncoder& enc, const PointForward& fwd, const Mat& d_features);

/// Stride-s grid of frozen features: rows are grid nodes in row-major order,
/// node (gy, gx) sitting at pixel (gy * s, gx * s).
struct ImageGrid {
  int rows = 0;
  int cols = 0;
  int stride = 4;
  Mat values;  // (rows * cols) x E
};

/// `pixel_class` gives the semantic class per pixel (-1 = none).
ImageGrid encode_image(const ImageEncoder& enc, const CameraFrame& frame, const std::vector<int>& pixel_class);
/// Pixel classes from a frame's instance mask and a scene's instance table.
std::vector<int> pixel_classes(const CameraFrame& frame, const std::map<std::uint32_t, std::uint16_t>& instance_classes);

/// Bilinear weights of pixels against grid nodes. Pixels past the last node
/// clamp to it.
struct BilinearTable {
  Eigen::Index nodes = 0;
  std::vector<std::array<int, 4>> node;
  std::vector<std::array<double, 4>> weight;
};
BilinearTable bilinear_table(const ImageGrid& grid, const std::vector<std::pair<int, int>>& pixels);
/// One output row per pixel: sum_k w_k * node_values.row(node_k).
Mat bilinear_apply(const BilinearTable& table, const Mat& node_values);
/// Adjoint of bilinear_apply.
Mat bilinear_adjoint(const BilinearTable& table, const Mat& d_pixels);

/// Grid features interpolated at pixels (row, col); exact at nodes.
Mat upsample_rows(const ImageGrid& grid, const std::vector<std::pair<int, int>>& pixels);

/// Row-normalized point head output.
struct PointHeadOutput {
  Mat raw;        // N x D, before normalization
  Mat embedding;  // N x D, unit rows
};
PointHeadOutput point_head(const Mat& head, const Mat& features);
/// Head output before row normalization (no error on zero rows).
Mat point_head_raw(const Mat& head, const Mat& features);

/// Image path: head applied per grid node, upsampled to each listed pixel,
/// row-normalized, averaged over each member list, row-normalized again.
/// Bilinear upsampling commutes with the linear head, so this equals the
/// head applied to upsampled features.
struct ImagePoolCache {
  BilinearTable table;
  Mat raw;              // P x D
  Mat pixel_embedding;  // P x D
  std::vector<IndexList> members;
  Mat pooled;           // rows x D, before normalization
  Mat q;
};
EmbeddingMatrix pool_image(const Mat& image_head, const ImageGrid& grid, const std::vector<std::pair<int, int>>& pixels,
                           const std::vector<IndexList>& members, ImagePoolCache* cache = nullptr);
/// d(loss)/d(image head) given d(loss)/dQ.
Mat pool_image_backward(const ImageGrid& grid, const ImagePoolCache& cache, const Mat& d_q);

/// Pixels of each listed superpixel segment, in row-major order.
struct SegmentPixels {
  std::vector<std::pair<int, int>> pixels;
  std::vector<IndexList> members;  // per listed segment, indices into pixels
};
SegmentPixels segment_pixels(const SuperpixelMap& map, const std::vector<int>& segments);

struct PooledPair {
  EmbeddingMatrix q;  // superpixels
  EmbeddingMatrix k;  // superpoints
  std::vector<int> segments;  // surviving segment ids, row-aligned with q and k
};

/// Both pooling paths for one frame: points grouped by superpixel (empty
/// segments dropped from both sides), pixels averaged per surviving segment.
PooledPair project_and_pool(const Mat& point_embedding, const ImageGrid& grid, const Mat& image_head,
                            const SuperpointGroups& groups, const SuperpixelMap& map);

enum class PoolMode { mean, max };

struct PooledSegments {
  EmbeddingMatrix values;
  std::vector<int> segment_ids;  // row -> segment id
  std::map<int, int> remap;      // segment id -> row; segments without members are absent
};

PooledSegments pool_segment_features(const Mat& point_feats, const SegmentAssignment& assignment, PoolMode mode);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Model& model, const std::filesystem::path& path);
Model read_checkpoint(const std::filesystem::path& path);

/// Round all trainable parameters to f32 (what a checkpoint stores).
void round_to_f32(Model& model);

}  // namespace lad
