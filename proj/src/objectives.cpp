#include "lad/objectives.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace lad {
namespace {

Mat pool_normalized(const Mat& feats, const std::vector<IndexList>& groups, Mat& raw) {
  raw = mean_pool(feats, groups);
  return normalize_rows(raw);
}

Mat gather_rows(const Mat& m, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

}  // namespace

void validate(const LossConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw InvalidArgument("loss config: temperature must be positive");
  const auto& w = cfg.weights;
  if (w.vfm < 0 || w.tmp < 0 || w.p2s < 0 || w.cdp < 0) throw InvalidArgument("loss config: weights must be >= 0");
}

LossResult loss_slic(const Mat& superpixels, const Mat& superpoints, const LossConfig& cfg) {
  return info_nce(superpoints, superpixels, cfg.temperature);
}

LossResult loss_vfm(const Mat& superpixels, const Mat& superpoints, const LossConfig& cfg) {
  return info_nce(superpoints, superpixels, cfg.temperature);
}

std::vector<int> shared_segment_ids(const std::vector<int>& seg_t, const std::vector<int>& seg_t1) {
  std::set<int> a(seg_t.begin(), seg_t.end()), b(seg_t1.begin(), seg_t1.end());
  std::vector<int> out;
  for (int id : a) {
    if (id > 0 && b.count(id)) out.push_back(id);
  }
  return out;
}

LossResult loss_tmp(const Mat& feats_t, const Mat& feats_t1, const std::vector<int>& seg_t,
                    const std::vector<int>& seg_t1, const LossConfig& cfg) {
  if (static_cast<Eigen::Index>(seg_t.size()) != feats_t.rows() ||
      static_cast<Eigen::Index>(seg_t1.size()) != feats_t1.rows()) {
    throw InvalidArgument("loss_tmp: label arrays must match feature rows");
  }
  const std::vector<int> shared = shared_segment_ids(seg_t, seg_t1);
  if (shared.empty()) throw InvalidArgument("loss_tmp: no temporal overlap");
  std::map<int, std::size_t> row_of;
  for (std::size_t r = 0; r < shared.size(); ++r) row_of[shared[r]] = r;
  std::vector<IndexList> groups_t(shared.size()), groups_t1(shared.size());
  for (std::size_t i = 0; i < seg_t.size(); ++i) {
    if (auto it = row_of.find(seg_t[i]); it != row_of.end()) groups_t[it->second].push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < seg_t1.size(); ++i) {
    if (auto it = row_of.find(seg_t1[i]); it != row_of.end()) groups_t1[it->second].push_back(static_cast<int>(i));
  }
  Mat raw_t, raw_t1;
  const Mat mean_t = pool_normalized(feats_t, groups_t, raw_t);
  const Mat mean_t1 = pool_normalized(feats_t1, groups_t1, raw_t1);
  const LossResult forward = info_nce(mean_t, mean_t1, cfg.temperature);
  const LossResult backward = info_nce(mean_t1, mean_t, cfg.temperature);

  LossResult out;
  out.value = forward.value + backward.value;
  const Mat d_mean_t = forward.grad_anchor + backward.grad_target;
  const Mat d_mean_t1 = forward.grad_target + backward.grad_anchor;
  out.grad_anchor = Mat::Zero(feats_t.rows(), feats_t.cols());
  out.grad_target = Mat::Zero(feats_t1.rows(), feats_t1.cols());
  mean_pool_backward(normalize_rows_backward(raw_t, mean_t, d_mean_t), groups_t, out.grad_anchor);
  mean_pool_backward(normalize_rows_backward(raw_t1, mean_t1, d_mean_t1), groups_t1, out.grad_target);
  return out;
}

LossResult loss_p2s(const Mat& feats, const std::vector<int>& seg, const LossConfig& cfg) {
  if (static_cast<Eigen::Index>(seg.size()) != feats.rows()) throw InvalidArgument("loss_p2s: label size mismatch");
  const double tau = cfg.temperature;
  std::vector<int> ids;
  {
    std::set<int> present;
    for (int s : seg) {
      if (s > 0) present.insert(s);
    }
    ids.assign(present.begin(), present.end());
  }
  if (ids.empty()) throw InvalidArgument("loss_p2s: no non-noise points");
  std::map<int, std::size_t> row_of;
  for (std::size_t r = 0; r < ids.size(); ++r) row_of[ids[r]] = r;
  std::vector<IndexList> groups(ids.size());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (seg[i] > 0) groups[row_of.at(seg[i])].push_back(static_cast<int>(i));
  }
  if (cfg.p2s_mode == P2sMode::literal_sampled) {
    std::size_t common = groups.front().size();
    for (const auto& g : groups) common = std::min(common, g.size());
    for (auto& g : groups) g.resize(common);
  }

  Eigen::MatrixXi argmax;
  const Mat raw = max_pool(feats, groups, argmax);
  const Mat clusters = normalize_rows(raw);
  const auto k = static_cast<Eigen::Index>(groups.size());
  Mat d_clusters = Mat::Zero(k, feats.cols());
  LossResult out;
  out.grad_anchor = Mat::Zero(feats.rows(), feats.cols());
  out.grad_target.resize(0, feats.cols());

  // One softmax over k logits. With `cluster_fixed` the cluster `positive` is
  // scored against candidates[j] (one point per segment); otherwise the single
  // point candidates[0] is scored against every cluster j.
  auto accumulate = [&](Eigen::Index positive, const std::vector<int>& candidates, bool cluster_fixed, double scale,
                        double& total) {
    Vec logits(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      logits(j) = cluster_fixed ? clusters.row(positive).dot(feats.row(candidates[static_cast<std::size_t>(j)])) / tau
                                : clusters.row(j).dot(feats.row(candidates.front())) / tau;
    }
    const double shift = logits.maxCoeff();
    Vec p = (logits.array() - shift).exp().matrix();
    const double denom = p.sum();
    p /= denom;
    total += shift + std::log(denom) - logits(positive);
    p(positive) -= 1.0;
    p *= scale / tau;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (cluster_fixed) {
        const int row = candidates[static_cast<std::size_t>(j)];
        out.grad_anchor.row(row) += p(j) * clusters.row(positive);
        d_clusters.row(positive) += p(j) * feats.row(row);
      } else {
        const int row = candidates.front();
        out.grad_anchor.row(row) += p(j) * clusters.row(j);
        d_clusters.row(j) += p(j) * feats.row(row);
      }
    }
  };

  double total = 0.0;
  if (cfg.p2s_mode == P2sMode::against_clusters) {
    std::size_t count = 0;
    for (const auto& g : groups) count += g.size();
    const double scale = 1.0 / static_cast<double>(count);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (int a : groups[static_cast<std::size_t>(i)]) accumulate(i, {a}, false, scale, total);
    }
    out.value = total * scale;
  } else {
    const std::size_t common = groups.front().size();
    const double scale = 1.0 / (static_cast<double>(k) * static_cast<double>(common));
    std::vector<int> candidates(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) {
      for (std::size_t a = 0; a < common; ++a) {
        for (Eigen::Index j = 0; j < k; ++j) candidates[static_cast<std::size_t>(j)] = groups[static_cast<std::size_t>(j)][a];
        accumulate(i, candidates, true, scale, total);
      }
    }
    out.value = total * scale;
  }
  max_pool_backward(normalize_rows_backward(raw, clusters, d_clusters), argmax, out.grad_anchor);
  return out;
}

RowPairing pair_by_class(const std::vector<int>& classes_m, const std::vector<int>& classes_n) {
  std::map<int, int> first_m, first_n;
  for (std::size_t i = 0; i < classes_m.size(); ++i) {
    if (classes_m[i] >= 0) first_m.try_emplace(classes_m[i], static_cast<int>(i));
  }
  for (std::size_t i = 0; i < classes_n.size(); ++i) {
    if (classes_n[i] >= 0) first_n.try_emplace(classes_n[i], static_cast<int>(i));
  }
  RowPairing out;
  for (const auto& [cls, row] : first_m) {
    if (auto it = first_n.find(cls); it != first_n.end()) out.emplace_back(row, it->second);
  }
  return out;
}

RowPairing pair_by_nearest(const Mat& k_m, const Mat& k_n) {
  RowPairing out;
  std::vector<char> used(static_cast<std::size_t>(k_n.rows()), 0);
  const Mat sim = k_m * k_n.transpose();
  for (Eigen::Index i = 0; i < k_m.rows(); ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < k_n.rows(); ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      if (best < 0 || sim(i, j) > sim(i, best)) best = j;
    }
    if (best < 0) break;
    used[static_cast<std::size_t>(best)] = 1;
    out.emplace_back(static_cast<int>(i), static_cast<int>(best));
  }
  return out;
}

LossResult loss_cdp(const Mat& k_m, const Mat& k_n, const RowPairing& pairing, const LossConfig& cfg) {
  if (pairing.empty()) throw InvalidArgument("loss_cdp: no cross-source pairs");
  std::vector<int> rows_m, rows_n;
  for (const auto& [a, b] : pairing) {
    if (a < 0 || a >= k_m.rows() || b < 0 || b >= k_n.rows()) throw InvalidArgument("loss_cdp: pairing out of range");
    rows_m.push_back(a);
    rows_n.push_back(b);
  }
  const Mat a = gather_rows(k_m, rows_m);
  const Mat b = gather_rows(k_n, rows_n);
  const LossResult fwd = info_nce(a, b, cfg.temperature);
  const LossResult bwd = info_nce(b, a, cfg.temperature);
  LossResult out;
  out.value = 0.5 * (fwd.value + bwd.value);
  out.grad_anchor = Mat::Zero(k_m.rows(), k_m.cols());
  out.grad_target = Mat::Zero(k_n.rows(), k_n.cols());
  for (std::size_t p = 0; p < pairing.size(); ++p) {
    const auto r = static_cast<Eigen::Index>(p);
    out.grad_anchor.row(rows_m[p]) += 0.5 * (fwd.grad_anchor.row(r) + bwd.grad_target.row(r));
    out.grad_target.row(rows_n[p]) += 0.5 * (fwd.grad_target.row(r) + bwd.grad_anchor.row(r));
  }
  return out;
}

TotalLoss total_loss(const LossParts& parts, const LossConfig& cfg) {
  validate(cfg);
  TotalLoss out;
  auto add = [&out](const std::optional<LossResult>& part, double weight, std::optional<LossResult>& slot) {
    if (!part) return;
    LossResult scaled;
    scaled.value = weight * part->value;
    scaled.grad_anchor = weight * part->grad_anchor;
    scaled.grad_target = weight * part->grad_target;
    out.value += scaled.value;
    slot = std::move(scaled);
  };
  add(parts.vfm, cfg.weights.vfm, out.weighted.vfm);
  add(parts.tmp, cfg.weights.tmp, out.weighted.tmp);
  add(parts.p2s, cfg.weights.p2s, out.weighted.p2s);
  add(parts.cdp, cfg.weights.cdp, out.weighted.cdp);
  return out;
}

CompositeResult composite_objective(const std::vector<SourceBatch>& batch, const LossConfig& cfg) {
  validate(cfg);
  const auto& w = cfg.weights;
  CompositeResult result;
  result.grads.resize(batch.size());
  std::vector<Mat> k_raw(batch.size()), k(batch.size()), d_k(batch.size());
  int vfm_sources = 0, tmp_sources = 0, p2s_sources = 0;

  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& src = batch[s];
    auto& g = result.grads[s];
    g.d_points_t = Mat::Zero(src.points_t.rows(), src.points_t.cols());
    g.d_points_t1 = Mat::Zero(src.points_t1.rows(), src.points_t1.cols());
    g.d_superpixels = Mat::Zero(src.superpixels.rows(), src.superpixels.cols());
    if (static_cast<Eigen::Index>(src.superpoints.size()) != src.superpixels.rows()) {
      throw InvalidArgument("composite_objective: superpoint and superpixel rows are not aligned");
    }
    if (!src.superpoints.empty()) {
      k[s] = pool_normalized(src.points_t, src.superpoints, k_raw[s]);
      d_k[s] = Mat::Zero(k[s].rows(), k[s].cols());
    }
  }

  if (w.vfm > 0.0) {
    std::vector<std::pair<std::size_t, LossResult>> parts;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      if (batch[s].superpoints.empty()) continue;
      parts.emplace_back(s, cfg.baseline_slic ? loss_slic(batch[s].superpixels, k[s], cfg)
                                              : loss_vfm(batch[s].superpixels, k[s], cfg));
    }
    vfm_sources = static_cast<int>(parts.size());
    for (auto& [s, r] : parts) {
      const double scale = w.vfm / vfm_sources;
      result.terms.vfm += r.value / vfm_sources;
      d_k[s] += scale * r.grad_anchor;
      result.grads[s].d_superpixels += scale * r.grad_target;
    }
  }

  if (w.tmp > 0.0) {
    std::vector<std::pair<std::size_t, LossResult>> parts;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      if (shared_segment_ids(batch[s].seg_t, batch[s].seg_t1).empty()) continue;
      parts.emplace_back(s, loss_tmp(batch[s].points_t, batch[s].points_t1, batch[s].seg_t, batch[s].seg_t1, cfg));
    }
    tmp_sources = static_cast<int>(parts.size());
    for (auto& [s, r] : parts) {
      const double scale = w.tmp / tmp_sources;
      result.terms.tmp += r.value / tmp_sources;
      result.grads[s].d_points_t += scale * r.grad_anchor;
      result.grads[s].d_points_t1 += scale * r.grad_target;
    }
  }

  if (w.p2s > 0.0) {
    std::vector<std::pair<std::size_t, LossResult>> parts;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& seg = batch[s].seg_t;
      if (std::none_of(seg.begin(), seg.end(), [](int l) { return l > 0; })) continue;
      parts.emplace_back(s, loss_p2s(batch[s].points_t, seg, cfg));
    }
    p2s_sources = static_cast<int>(parts.size());
    for (auto& [s, r] : parts) {
      result.terms.p2s += r.value / p2s_sources;
      result.grads[s].d_points_t += (w.p2s / p2s_sources) * r.grad_anchor;
    }
  }

  if (w.cdp > 0.0) {
    std::vector<std::tuple<std::size_t, std::size_t, LossResult>> parts;
    for (std::size_t m = 0; m < batch.size(); ++m) {
      for (std::size_t n = m + 1; n < batch.size(); ++n) {
        if (batch[m].superpoints.empty() || batch[n].superpoints.empty()) continue;
        const RowPairing pairing = pair_by_class(batch[m].superpoint_class, batch[n].superpoint_class);
        if (pairing.empty()) continue;
        parts.emplace_back(m, n, loss_cdp(k[m], k[n], pairing, cfg));
      }
    }
    const auto count = static_cast<double>(parts.size());
    for (auto& [m, n, r] : parts) {
      result.terms.cdp += r.value / count;
      d_k[m] += (w.cdp / count) * r.grad_anchor;
      d_k[n] += (w.cdp / count) * r.grad_target;
    }
  }

  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch[s].superpoints.empty()) continue;
    mean_pool_backward(normalize_rows_backward(k_raw[s], k[s], d_k[s]), batch[s].superpoints, result.grads[s].d_points_t);
  }
  result.terms.total = w.vfm * result.terms.vfm + w.tmp * result.terms.tmp + w.p2s * result.terms.p2s +
                       w.cdp * result.terms.cdp;
  return result;
}

}  // namespace lad
