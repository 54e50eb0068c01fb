#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "lad/errors.hpp"
#include "lad/rowops.hpp"
#include "lad/types.hpp"

namespace lad {

struct LossWeights {
  double vfm = 1.0;
  double tmp = 1.0;
  double p2s = 1.0;
  double cdp = 1.0;
};

/// How each point is contrasted in the point-to-segment term.
///  - against_clusters: point a of segment i vs every cluster feature c_j.
///  - literal_sampled: every segment truncated to a common size N_k, and the
///    a-th point of each segment j forms the denominator for cluster c_i.
enum class P2sMode { against_clusters, literal_sampled };

struct LossConfig {
  double temperature = 0.07;
  LossWeights weights;
  P2sMode p2s_mode = P2sMode::against_clusters;
  bool baseline_slic = false;  // spatial term built on SLIC pairs instead of semantic ones
};

void validate(const LossConfig& cfg);

template <typename Scalar>
struct LossResultT {
  Scalar value = 0;
  MatrixX<Scalar> grad_anchor;
  MatrixX<Scalar> grad_target;
};
using LossResult = LossResultT<double>;

/// Contrastive softmax loss over paired rows:
///   -(1/M) sum_i log( exp(<a_i,t_i>/tau) / sum_j exp(<a_i,t_j>/tau) )
/// Logits are max-shifted per row before exponentiation. Gradients are for
/// the raw inputs; any row normalization upstream is differentiated by the caller.
template <typename DA, typename DT>
LossResultT<typename DA::Scalar> info_nce(const Eigen::MatrixBase<DA>& anchors, const Eigen::MatrixBase<DT>& targets,
                                          typename DA::Scalar tau) {
  using Scalar = typename DA::Scalar;
  const Eigen::Index m = anchors.rows();
  if (m == 0) throw InvalidArgument("info_nce: no rows");
  if (targets.rows() != m) throw InvalidArgument("info_nce: anchor/target row counts differ");
  if (targets.cols() != anchors.cols()) throw InvalidArgument("info_nce: embedding dims differ");
  if (!(tau > Scalar(0))) throw InvalidArgument("info_nce: temperature must be positive");

  const MatrixX<Scalar> logits = (anchors * targets.transpose()) / tau;
  MatrixX<Scalar> prob(m, m);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Scalar shift = logits.row(i).maxCoeff();
    prob.row(i) = (logits.row(i).array() - shift).exp().matrix();
    const Scalar denom = prob.row(i).sum();
    prob.row(i) /= denom;
    total += (shift + std::log(denom)) - logits(i, i);
  }
  LossResultT<Scalar> out;
  out.value = total / Scalar(m);
  MatrixX<Scalar> d_logits = prob;
  d_logits.diagonal().array() -= Scalar(1);
  d_logits /= Scalar(m) * tau;
  out.grad_anchor = d_logits * targets;
  out.grad_target = d_logits.transpose() * anchors;
  return out;
}

/// Spatial terms: anchors are superpoint rows K, targets superpixel rows Q.
/// grad_anchor is d/dK, grad_target is d/dQ.
LossResult loss_slic(const Mat& superpixels, const Mat& superpoints, const LossConfig& cfg);
LossResult loss_vfm(const Mat& superpixels, const Mat& superpoints, const LossConfig& cfg);

/// Symmetric temporal term over point features of two frames that share one
/// segment id space. Per-segment means are row-normalized before contrasting;
/// grad_anchor is d/d(feats_t), grad_target is d/d(feats_t1).
LossResult loss_tmp(const Mat& feats_t, const Mat& feats_t1, const std::vector<int>& seg_t,
                    const std::vector<int>& seg_t1, const LossConfig& cfg);

/// Ids present (nonzero) in both label arrays, ascending.
std::vector<int> shared_segment_ids(const std::vector<int>& seg_t, const std::vector<int>& seg_t1);

/// Point-to-segment term against row-normalized max-pooled cluster features.
/// grad_anchor is d/d(feats); grad_target is empty.
LossResult loss_p2s(const Mat& feats, const std::vector<int>& seg, const LossConfig& cfg);

using RowPairing = std::vector<std::pair<int, int>>;

/// Default cross-source pairing: for every class present in both sources,
/// the first row of that class on each side.
RowPairing pair_by_class(const std::vector<int>& classes_m, const std::vector<int>& classes_n);
/// Fallback: greedy unique nearest neighbors by inner product.
RowPairing pair_by_nearest(const Mat& k_m, const Mat& k_n);

/// Cross-source term, both directions averaged. grad_anchor is d/dK_m,
/// grad_target is d/dK_n.
LossResult loss_cdp(const Mat& k_m, const Mat& k_n, const RowPairing& pairing, const LossConfig& cfg);

struct LossParts {
  std::optional<LossResult> vfm;
  std::optional<LossResult> tmp;
  std::optional<LossResult> p2s;
  std::optional<LossResult> cdp;
};

struct TotalLoss {
  double value = 0.0;
  LossParts weighted;  // each part's value and gradients scaled by its weight
};

/// L = w1 L_vfm + w2 L_tmp + w3 L_p2s + w4 L_cdp over whichever parts are present.
TotalLoss total_loss(const LossParts& parts, const LossConfig& cfg);

/// One source's share of a training batch, already in the shared embedding
/// space (all rows unit-norm).
struct SourceBatch {
  Mat points_t;                     // N_t x D
  Mat points_t1;                    // N_t1 x D
  std::vector<IndexList> superpoints;  // members of points_t rows, aligned with superpixel rows
  Mat superpixels;                  // M x D
  std::vector<int> superpoint_class;  // per superpoint row, for cross-source pairing
  std::vector<int> seg_t;           // shared segment ids over points_t rows
  std::vector<int> seg_t1;          // shared segment ids over points_t1 rows
};

struct SourceGrads {
  Mat d_points_t;
  Mat d_points_t1;
  Mat d_superpixels;
};

struct LossBreakdown {
  double vfm = 0.0;
  double tmp = 0.0;
  double p2s = 0.0;
  double cdp = 0.0;
  double total = 0.0;
};

struct CompositeResult {
  LossBreakdown terms;
  std::vector<SourceGrads> grads;
};

/// The full objective over a multi-source batch. Per-source terms are
/// averaged over the sources where they are defined; the cross-source term
/// is averaged over source pairs with a nonempty class pairing.
CompositeResult composite_objective(const std::vector<SourceBatch>& batch, const LossConfig& cfg);

}  // namespace lad
