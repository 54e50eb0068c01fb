#include "lad/embed.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "binary_io.hpp"
#include "lad/errors.hpp"
#include "lad/rng.hpp"
#include "lad/rowops.hpp"

namespace lad {

namespace {

constexpr double kStdFloor = 1e-8;

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_mask(const Mat& pre, const Mat& d) { return (pre.array() > 0.0).select(d, 0.0); }

void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite parameter in ") + what);
}

Mat he_normal(std::mt19937_64& gen, int rows, int cols, double fan_in_scale) {
  Mat w(rows, cols);
  const double sd = std::sqrt(fan_in_scale / cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) w(i, j) = sd * rng::normal(gen);
  }
  return w;
}

void validate_dims(const EmbedDims& d) {
  if (d.feature_channels < 0 || d.hidden < 1 || d.point_dim < 1 || d.embed_dim < 1 || d.image_dim < 1 || d.stride < 1) {
    throw InvalidArgument("embed: dimensions must be positive");
  }
  if (!(d.beta >= 0.0 && d.beta < 1.0)) throw InvalidArgument("embed: beta must lie in [0, 1)");
  if (d.beta > 0.0 && d.image_dim < kNumSemanticClasses) {
    throw InvalidArgument("embed: image_dim must hold the class one-hot when beta > 0");
  }
  if (!(d.voxel > 0.0)) throw InvalidArgument("embed: voxel size must be positive");
}

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct VoxelHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = rng::splitmix64(static_cast<std::uint64_t>(k.x));
    h = rng::splitmix64(h ^ static_cast<std::uint64_t>(k.y));
    return rng::splitmix64(h ^ static_cast<std::uint64_t>(k.z));
  }
};

}  // namespace

EmbeddingMatrix EmbeddingMatrix::from_raw(const Mat& raw) {
  EmbeddingMatrix out;
  out.values = normalize_rows(raw);
  out.normalized = true;
  return out;
}

bool EmbeddingMatrix::check_normalized(double tol) const {
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (std::abs(values.row(i).norm() - 1.0) > tol) return false;
  }
  return true;
}

SourceStats fit_source_stats(const std::vector<const PointCloud*>& clouds) {
  std::map<int, std::vector<const PointCloud*>> by_source;
  for (const auto* c : clouds) by_source[c->source_id].push_back(c);
  SourceStats stats;
  for (const auto& [id, list] : by_source) {
    const Eigen::Index l = list.front()->feature_dim();
    ChannelStats cs;
    cs.mean = Vec::Zero(l);
    for (const auto* c : list) {
      if (c->feature_dim() != l) throw InvalidArgument("fit_source_stats: feature width differs within a source");
      cs.mean += c->features.colwise().sum().transpose();
      cs.count += static_cast<std::uint64_t>(c->size());
    }
    if (cs.count == 0) throw InvalidArgument("fit_source_stats: source without points");
    cs.mean /= static_cast<double>(cs.count);
    Vec sq = Vec::Zero(l);
    for (const auto* c : list) sq += (c->features.rowwise() - cs.mean.transpose()).array().square().colwise().sum().matrix().transpose();
    cs.stddev = (sq / static_cast<double>(cs.count)).cwiseSqrt();
    stats.sources[id] = cs;
  }
  return stats;
}

PointCloud normalize_source_features(const PointCloud& cloud, const SourceStats& stats) {
  const auto it = stats.sources.find(cloud.source_id);
  if (it == stats.sources.end()) {
    throw InvalidArgument("normalize_source_features: no stats for source " + std::to_string(cloud.source_id));
  }
  const auto& cs = it->second;
  if (cs.mean.size() != cloud.feature_dim()) throw InvalidArgument("normalize_source_features: feature width mismatch");
  PointCloud out = cloud;
  const Vec inv = cs.stddev.cwiseMax(kStdFloor).cwiseInverse();
  out.features = ((cloud.features.rowwise() - cs.mean.transpose()).array().rowwise() * inv.transpose().array()).matrix();
  return out;
}

ImageEncoder ImageEncoder::create(const EmbedDims& dims, std::uint64_t seed) {
  validate_dims(dims);
  ImageEncoder enc;
  enc.stride = dims.stride;
  enc.dim = dims.image_dim;
  enc.beta = dims.beta;
  enc.seed = seed;
  const int side = 2 * dims.stride + 1;
  auto gen = rng::make(seed, rng::Stream::image_encoder);
  enc.projection = he_normal(gen, dims.image_dim, 3 * side * side, 1.0);
  return enc;
}

Model init_model(const EmbedDims& dims, std::uint64_t seed) {
  validate_dims(dims);
  Model m;
  m.dims = dims;
  auto gen = rng::make(seed, rng::Stream::encoder_init);
  m.encoder.w1 = he_normal(gen, dims.hidden, dims.input_dim(), 2.0);
  m.encoder.b1 = Vec::Zero(dims.hidden);
  m.encoder.w2 = he_normal(gen, dims.point_dim, 2 * dims.hidden, 2.0);
  m.encoder.b2 = Vec::Zero(dims.point_dim);
  m.heads.point = he_normal(gen, dims.embed_dim, dims.point_dim, 1.0);
  m.heads.image = he_normal(gen, dims.embed_dim, dims.image_dim, 1.0);
  m.image = ImageEncoder::create(dims, seed);
  return m;
}

void voxelize(const PointsXd& coords, double cell, std::vector<IndexList>& voxels, std::vector<int>& voxel_of) {
  if (!(cell > 0.0)) throw InvalidArgument("voxelize: cell must be positive");
  std::unordered_map<VoxelKey, int, VoxelHash> index;
  index.reserve(static_cast<std::size_t>(coords.rows()));
  voxels.clear();
  voxel_of.assign(static_cast<std::size_t>(coords.rows()), 0);
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const VoxelKey key{static_cast<std::int64_t>(std::floor(coords(i, 0) / cell)),
                       static_cast<std::int64_t>(std::floor(coords(i, 1) / cell)),
                       static_cast<std::int64_t>(std::floor(coords(i, 2) / cell))};
    const auto [it, fresh] = index.emplace(key, static_cast<int>(voxels.size()));
    if (fresh) voxels.emplace_back();
    voxels[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(i));
    voxel_of[static_cast<std::size_t>(i)] = it->second;
  }
}

PointForward encode_points(const PointEncoder& enc, const EmbedDims& dims, const PointCloud& cloud) {
  return encode_points(enc, dims, cloud.coords, cloud.features);
}

PointForward encode_points(const PointEncoder& enc, const EmbedDims& dims, const PointsXd& coords, const Mat& features) {
  require_finite(enc.w1, "w1");
  require_finite(enc.b1, "b1");
  require_finite(enc.w2, "w2");
  require_finite(enc.b2, "b2");
  if (features.rows() != coords.rows()) throw InvalidArgument("encode_points: coords and features differ in length");
  if (features.cols() != dims.feature_channels || enc.w1.cols() != dims.input_dim()) {
    throw InvalidArgument("encode_points: feature width does not match the encoder");
  }
  const Eigen::Index n = coords.rows();
  const Eigen::Index h = enc.w1.rows();
  PointForward f;
  f.input.resize(n, dims.input_dim());
  f.input.leftCols(3) = coords * dims.coord_scale;
  f.input.rightCols(features.cols()) = features;
  f.pre1 = (f.input * enc.w1.transpose()).rowwise() + enc.b1.transpose();
  f.hidden = relu(f.pre1);
  voxelize(coords, dims.voxel, f.voxels, f.voxel_of);
  Mat vox_sum = Mat::Zero(static_cast<Eigen::Index>(f.voxels.size()), h);
  for (std::size_t v = 0; v < f.voxels.size(); ++v) {
    for (int i : f.voxels[v]) vox_sum.row(static_cast<Eigen::Index>(v)) += f.hidden.row(i);
    vox_sum.row(static_cast<Eigen::Index>(v)) /= static_cast<double>(f.voxels[v].size());
  }
  f.voxmean.resize(n, h);
  for (Eigen::Index i = 0; i < n; ++i) f.voxmean.row(i) = vox_sum.row(f.voxel_of[static_cast<std::size_t>(i)]);
  f.pre2 = ((f.hidden * enc.w2.leftCols(h).transpose()) + (f.voxmean * enc.w2.rightCols(h).transpose())).rowwise() +
           enc.b2.transpose();
  f.features = relu(f.pre2);
  return f;
}

PointEncoderGrad encode_points_backward(const PointEncoder& enc, const PointForward& fwd, const Mat& d_features) {
  const Eigen::Index h = enc.w1.rows();
  PointEncoderGrad g;
  const Mat d_pre2 = relu_mask(fwd.pre2, d_features);
  g.w2.resize(enc.w2.rows(), enc.w2.cols());
  g.w2.leftCols(h) = d_pre2.transpose() * fwd.hidden;
  g.w2.rightCols(h) = d_pre2.transpose() * fwd.voxmean;
  g.b2 = d_pre2.colwise().sum().transpose();
  Mat d_hidden = d_pre2 * enc.w2.leftCols(h);
  const Mat d_vox = d_pre2 * enc.w2.rightCols(h);
  for (const auto& members : fwd.voxels) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(h);
    for (int i : members) sum += d_vox.row(i);
    sum /= static_cast<double>(members.size());
    for (int i : members) d_hidden.row(i) += sum;
  }
  const Mat d_pre1 = relu_mask(fwd.pre1, d_hidden);
  g.w1 = d_pre1.transpose() * fwd.input;
  g.b1 = d_pre1.colwise().sum().transpose();
  return g;
}

std::vector<int> pixel_classes(const CameraFrame& frame, const std::map<std::uint32_t, std::uint16_t>& instance_classes) {
  std::vector<int> out(frame.gt_mask.size(), -1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto id = frame.gt_mask[i];
    if (id == kSkyInstance) continue;
    const auto it = instance_classes.find(id);
    if (it != instance_classes.end()) out[i] = it->second;
  }
  return out;
}

ImageGrid encode_image(const ImageEncoder& enc, const CameraFrame& frame, const std::vector<int>& pixel_class) {
  if (frame.height < 1 || frame.width < 1 || frame.rgb.rows() != static_cast<Eigen::Index>(frame.height) * frame.width) {
    throw InvalidArgument("encode_image: malformed frame");
  }
  if (!pixel_class.empty() && pixel_class.size() != static_cast<std::size_t>(frame.rgb.rows())) {
    throw InvalidArgument("encode_image: class map size mismatch");
  }
  require_finite(enc.projection, "image encoder");
  const int s = enc.stride;
  const int side = 2 * s + 1;
  ImageGrid grid;
  grid.stride = s;
  grid.rows = (frame.height - 1) / s + 1;
  grid.cols = (frame.width - 1) / s + 1;
  const Eigen::Index nodes = static_cast<Eigen::Index>(grid.rows) * grid.cols;
  Mat patches(3 * side * side, nodes);
  for (int gy = 0; gy < grid.rows; ++gy) {
    for (int gx = 0; gx < grid.cols; ++gx) {
      const Eigen::Index node = static_cast<Eigen::Index>(gy) * grid.cols + gx;
      int k = 0;
      for (int dy = -s; dy <= s; ++dy) {
        const int r = std::clamp(gy * s + dy, 0, frame.height - 1);
        for (int dx = -s; dx <= s; ++dx) {
          const int c = std::clamp(gx * s + dx, 0, frame.width - 1);
          const auto p = static_cast<Eigen::Index>(frame.pixel(r, c));
          for (int ch = 0; ch < 3; ++ch) patches(k++, node) = frame.rgb(p, ch) - 0.5;
        }
      }
    }
  }
  grid.values = (1.0 - enc.beta) * (enc.projection * patches).transpose();
  if (enc.beta > 0.0 && !pixel_class.empty()) {
    for (int gy = 0; gy < grid.rows; ++gy) {
      for (int gx = 0; gx < grid.cols; ++gx) {
        const int cls = pixel_class[frame.pixel(gy * s, gx * s)];
        if (cls >= 0 && cls < enc.dim) grid.values(static_cast<Eigen::Index>(gy) * grid.cols + gx, cls) += enc.beta;
      }
    }
  }
  return grid;
}

BilinearTable bilinear_table(const ImageGrid& grid, const std::vector<std::pair<int, int>>& pixels) {
  BilinearTable t;
  t.nodes = static_cast<Eigen::Index>(grid.rows) * grid.cols;
  t.node.resize(pixels.size());
  t.weight.resize(pixels.size());
  const double s = grid.stride;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto [r, c] = pixels[i];
    const double fy = std::min(r / s, static_cast<double>(grid.rows - 1));
    const double fx = std::min(c / s, static_cast<double>(grid.cols - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x0 = static_cast<int>(std::floor(fx));
    const int y1 = std::min(y0 + 1, grid.rows - 1);
    const int x1 = std::min(x0 + 1, grid.cols - 1);
    const double wy = fy - y0, wx = fx - x0;
    t.node[i] = {y0 * grid.cols + x0, y0 * grid.cols + x1, y1 * grid.cols + x0, y1 * grid.cols + x1};
    t.weight[i] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
  }
  return t;
}

Mat bilinear_apply(const BilinearTable& table, const Mat& node_values) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(table.node.size()), node_values.cols());
  for (std::size_t i = 0; i < table.node.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      if (table.weight[i][k] != 0.0) out.row(static_cast<Eigen::Index>(i)) += table.weight[i][k] * node_values.row(table.node[i][k]);
    }
  }
  return out;
}

Mat bilinear_adjoint(const BilinearTable& table, const Mat& d_pixels) {
  Mat out = Mat::Zero(table.nodes, d_pixels.cols());
  for (std::size_t i = 0; i < table.node.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      if (table.weight[i][k] != 0.0) out.row(table.node[i][k]) += table.weight[i][k] * d_pixels.row(static_cast<Eigen::Index>(i));
    }
  }
  return out;
}

Mat upsample_rows(const ImageGrid& grid, const std::vector<std::pair<int, int>>& pixels) {
  return bilinear_apply(bilinear_table(grid, pixels), grid.values);
}

PointHeadOutput point_head(const Mat& head, const Mat& features) {
  PointHeadOutput out;
  out.raw = point_head_raw(head, features);
  out.embedding = normalize_rows(out.raw);
  return out;
}

Mat point_head_raw(const Mat& head, const Mat& features) {
  require_finite(head, "point head");
  if (head.cols() != features.cols()) throw InvalidArgument("point_head: feature width does not match the head");
  return features * head.transpose();
}

EmbeddingMatrix pool_image(const Mat& image_head, const ImageGrid& grid, const std::vector<std::pair<int, int>>& pixels,
                           const std::vector<IndexList>& members, ImagePoolCache* cache) {
  require_finite(image_head, "image head");
  if (image_head.cols() != grid.values.cols()) throw InvalidArgument("pool_image: image width does not match the head");
  ImagePoolCache local;
  ImagePoolCache& c = cache ? *cache : local;
  c.table = bilinear_table(grid, pixels);
  c.raw = bilinear_apply(c.table, grid.values * image_head.transpose());
  c.pixel_embedding = normalize_rows(c.raw);
  c.members = members;
  c.pooled = mean_pool(c.pixel_embedding, members);
  c.q = normalize_rows(c.pooled);
  EmbeddingMatrix out;
  out.values = c.q;
  out.normalized = true;
  return out;
}

Mat pool_image_backward(const ImageGrid& grid, const ImagePoolCache& cache, const Mat& d_q) {
  const Mat d_pooled = normalize_rows_backward(cache.pooled, cache.q, d_q);
  Mat d_pix = Mat::Zero(cache.pixel_embedding.rows(), cache.pixel_embedding.cols());
  mean_pool_backward(d_pooled, cache.members, d_pix);
  const Mat d_raw = normalize_rows_backward(cache.raw, cache.pixel_embedding, d_pix);
  return bilinear_adjoint(cache.table, d_raw).transpose() * grid.values;
}

SegmentPixels segment_pixels(const SuperpixelMap& map, const std::vector<int>& segments) {
  std::vector<int> row_of(static_cast<std::size_t>(map.segment_count) + 1, -1);
  SegmentPixels out;
  out.members.resize(segments.size());
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (segments[k] < 1 || segments[k] > map.segment_count) throw InvalidArgument("segment_pixels: segment out of range");
    row_of[static_cast<std::size_t>(segments[k])] = static_cast<int>(k);
  }
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const int row = row_of[static_cast<std::size_t>(map.at(r, c))];
      if (row < 0) continue;
      out.members[static_cast<std::size_t>(row)].push_back(static_cast<int>(out.pixels.size()));
      out.pixels.emplace_back(r, c);
    }
  }
  return out;
}

PooledPair project_and_pool(const Mat& point_embedding, const ImageGrid& grid, const Mat& image_head,
                            const SuperpointGroups& groups, const SuperpixelMap& map) {
  if (static_cast<int>(groups.groups.size()) != map.segment_count) {
    throw InvalidArgument("project_and_pool: superpoint groups and superpixel map are not aligned");
  }
  PooledPair out;
  out.segments = groups.nonempty_segments();
  std::vector<IndexList> point_members;
  for (int s : out.segments) point_members.push_back(groups.groups[static_cast<std::size_t>(s - 1)]);
  out.k = EmbeddingMatrix::from_raw(mean_pool(point_embedding, point_members));
  const auto px = segment_pixels(map, out.segments);
  out.q = pool_image(image_head, grid, px.pixels, px.members);
  return out;
}

PooledSegments pool_segment_features(const Mat& point_feats, const SegmentAssignment& assignment, PoolMode mode) {
  if (static_cast<Eigen::Index>(assignment.labels.size()) != point_feats.rows()) {
    throw InvalidArgument("pool_segment_features: label count differs from row count");
  }
  for (int l : assignment.labels) {
    if (l < 0 || l > assignment.segment_count) throw InvalidArgument("pool_segment_features: label out of range");
  }
  const auto all = members_by_label(assignment.labels, assignment.segment_count);
  PooledSegments out;
  std::vector<IndexList> kept;
  for (std::size_t s = 0; s < all.size(); ++s) {
    if (all[s].empty()) continue;
    out.remap[static_cast<int>(s) + 1] = static_cast<int>(kept.size());
    out.segment_ids.push_back(static_cast<int>(s) + 1);
    kept.push_back(all[s]);
  }
  if (kept.empty()) {
    out.values.values.resize(0, point_feats.cols());
    out.values.normalized = true;
    return out;
  }
  Eigen::MatrixXi argmax;
  out.values = EmbeddingMatrix::from_raw(mode == PoolMode::mean ? mean_pool(point_feats, kept)
                                                                 : max_pool(point_feats, kept, argmax));
  return out;
}

namespace {

constexpr auto kCheckpointMagic = detail::make_magic("LADCK1");

template <typename M>
void put_f32(detail::BinaryWriter& w, const M& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) w.put<float>(static_cast<float>(m(i, j)));
  }
}

template <typename M>
void get_f32(detail::BinaryReader& r, M& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<double>(r.get<float>());
  }
}

std::int32_t checked_dim(detail::BinaryReader& r, const char* what) {
  const auto v = r.get<std::int32_t>();
  if (v < 0 || v > (1 << 16)) throw FormatError(FormatErrorCode::malformed_header, r.name() + ": bad " + what);
  return v;
}

}  // namespace

void write_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto& d = model.dims;
  detail::BinaryWriter w(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  for (int v : {d.feature_channels, d.hidden, d.point_dim, d.embed_dim, d.image_dim, d.stride}) w.put<std::int32_t>(v);
  w.put<double>(d.beta);
  w.put<double>(d.voxel);
  w.put<double>(d.coord_scale);
  w.put<std::uint64_t>(model.image.seed);
  put_f32(w, model.encoder.w1);
  put_f32(w, model.encoder.b1);
  put_f32(w, model.encoder.w2);
  put_f32(w, model.encoder.b2);
  put_f32(w, model.heads.point);
  put_f32(w, model.heads.image);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.stats.sources.size()));
  for (const auto& [id, cs] : model.stats.sources) {
    w.put<std::int32_t>(id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cs.mean.size()));
    w.put<std::uint64_t>(cs.count);
    for (Eigen::Index c = 0; c < cs.mean.size(); ++c) w.put<double>(cs.mean(c));
    for (Eigen::Index c = 0; c < cs.stddev.size(); ++c) w.put<double>(cs.stddev(c));
  }
  w.save(path);
}

Model read_checkpoint(const std::filesystem::path& path) {
  detail::BinaryReader r(path, kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorCode::version_mismatch, r.name() + ": checkpoint version " + std::to_string(version));
  }
  EmbedDims d;
  d.feature_channels = checked_dim(r, "feature channels");
  d.hidden = checked_dim(r, "hidden width");
  d.point_dim = checked_dim(r, "point dim");
  d.embed_dim = checked_dim(r, "embed dim");
  d.image_dim = checked_dim(r, "image dim");
  d.stride = checked_dim(r, "stride");
  d.beta = r.get<double>();
  d.voxel = r.get<double>();
  d.coord_scale = r.get<double>();
  const auto image_seed = r.get<std::uint64_t>();
  try {
    validate_dims(d);
  } catch (const InvalidArgument& e) {
    throw FormatError(FormatErrorCode::malformed_header, r.name() + ": " + e.what());
  }
  Model m;
  m.dims = d;
  const std::size_t params = static_cast<std::size_t>(d.hidden) * (d.input_dim() + 1) +
                             static_cast<std::size_t>(d.point_dim) * (2 * d.hidden + 1) +
                             static_cast<std::size_t>(d.embed_dim) * (d.point_dim + d.image_dim);
  r.require(params * sizeof(float));
  m.encoder.w1.resize(d.hidden, d.input_dim());
  m.encoder.b1.resize(d.hidden);
  m.encoder.w2.resize(d.point_dim, 2 * d.hidden);
  m.encoder.b2.resize(d.point_dim);
  m.heads.point.resize(d.embed_dim, d.point_dim);
  m.heads.image.resize(d.embed_dim, d.image_dim);
  get_f32(r, m.encoder.w1);
  get_f32(r, m.encoder.b1);
  get_f32(r, m.encoder.w2);
  get_f32(r, m.encoder.b2);
  get_f32(r, m.heads.point);
  get_f32(r, m.heads.image);
  const auto sources = r.get<std::uint32_t>();
  for (std::uint32_t s = 0; s < sources; ++s) {
    const auto id = r.get<std::int32_t>();
    const auto l = r.get<std::uint32_t>();
    if (l > (1u << 16)) throw FormatError(FormatErrorCode::malformed_header, r.name() + ": bad channel count");
    ChannelStats cs;
    cs.count = r.get<std::uint64_t>();
    r.require(2 * l * sizeof(double));
    cs.mean.resize(l);
    cs.stddev.resize(l);
    for (std::uint32_t c = 0; c < l; ++c) cs.mean(c) = r.get<double>();
    for (std::uint32_t c = 0; c < l; ++c) cs.stddev(c) = r.get<double>();
    m.stats.sources[id] = cs;
  }
  m.image = ImageEncoder::create(d, image_seed);
  return m;
}

void round_to_f32(Model& model) {
  auto round = [](auto& m) {
    const MatrixX<float> stored = m.template cast<float>();
    m = stored.template cast<double>();
  };
  round(model.encoder.w1);
  round(model.encoder.b1);
  round(model.encoder.w2);
  round(model.encoder.b2);
  round(model.heads.point);
  round(model.heads.image);
}

}  // namespace lad
