#include "lad/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "lad/errors.hpp"
#include "lad/rng.hpp"
#include "lad/rowops.hpp"

namespace lad {

void validate(const ProbeConfig& cfg) {
  if (!(cfg.budget > 0.0 && cfg.budget <= 1.0)) throw InvalidArgument("probe: budget must lie in (0, 1]");
  if (cfg.max_train_points < 1) throw InvalidArgument("probe: max_train_points must be >= 1");
  if (cfg.max_iterations < 1) throw InvalidArgument("probe: max_iterations must be >= 1");
  if (!(cfg.tolerance > 0.0)) throw InvalidArgument("probe: tolerance must be positive");
  if (!(cfg.l2 >= 0.0)) throw InvalidArgument("probe: l2 must be non-negative");
}

ProbeReport report_from_confusion(const Confusion& confusion, const std::vector<char>& trainable) {
  const std::size_t k = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != k) throw InvalidArgument("report_from_confusion: confusion matrix is not square");
  }
  if (trainable.size() != k) throw InvalidArgument("report_from_confusion: trainable flags do not match classes");
  ProbeReport r;
  r.confusion = confusion;
  r.trainable = trainable;
  r.iou.assign(k, 0.0);
  r.accuracy.assign(k, 0.0);
  r.present.assign(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    r.class_names.push_back(c < class_names().size() && k == class_names().size() ? class_names()[c]
                                                                                   : "class" + std::to_string(c));
  }
  std::int64_t total = 0, correct = 0;
  int present = 0;
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t gt = 0, pred = 0;
    for (std::size_t j = 0; j < k; ++j) {
      gt += confusion[c][j];
      pred += confusion[j][c];
    }
    const std::int64_t tp = confusion[c][c];
    const std::int64_t uni = gt + pred - tp;
    r.iou[c] = uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
    r.accuracy[c] = gt > 0 ? static_cast<double>(tp) / static_cast<double>(gt) : 0.0;
    r.present[c] = gt > 0;
    total += gt;
    correct += tp;
    if (gt > 0) {
      ++present;
      sum += r.iou[c];
    }
  }
  r.miou = present > 0 ? sum / present : 0.0;
  r.overall_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

namespace {

Mat standardized_with_bias(const Mat& x, const Vec& mean, const Vec& scale) {
  Mat out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = ((x.rowwise() - mean.transpose()).array().rowwise() * scale.transpose().array()).matrix();
  out.col(x.cols()).setOnes();
  return out;
}

void softmax_rows(Mat& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double shift = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - shift).exp().matrix();
    logits.row(i) /= logits.row(i).sum();
  }
}

}  // namespace

std::vector<int> LogisticModel::predict(const Mat& features) const {
  const Mat logits = standardized_with_bias(features, mean, scale) * weights;
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

LogisticModel fit_logistic(const Mat& features, const std::vector<int>& labels, int classes, const ProbeConfig& cfg) {
  validate(cfg);
  const Eigen::Index n = features.rows();
  if (n == 0) throw InvalidArgument("fit_logistic: no training rows");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw InvalidArgument("fit_logistic: label count mismatch");
  if (classes < 1) throw InvalidArgument("fit_logistic: need at least one class");
  LogisticModel m;
  m.mean = features.colwise().mean().transpose();
  const Vec sd = ((features.rowwise() - m.mean.transpose()).array().square().colwise().mean()).sqrt().matrix().transpose();
  m.scale = sd.cwiseMax(1e-8).cwiseInverse();
  const Mat x = standardized_with_bias(features, m.mean, m.scale);
  Mat y = Mat::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= classes) throw InvalidArgument("fit_logistic: label out of range");
    y(i, c) = 1.0;
  }
  const Mat gram = x.transpose() * x / static_cast<double>(n);
  const double lmax = Eigen::SelfAdjointEigenSolver<Mat>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double lipschitz = 0.5 * lmax + cfg.l2;
  const Eigen::Index d = x.cols();

  Mat w = Mat::Zero(d, classes), v = w;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    Mat p = x * v;
    softmax_rows(p);
    Mat g = x.transpose() * (p - y) / static_cast<double>(n);
    g.topRows(d - 1) += cfg.l2 * v.topRows(d - 1);
    m.iterations = it;
    if (g.cwiseAbs().maxCoeff() <= cfg.tolerance) {
      w = v;
      break;
    }
    const Mat next = v - g / lipschitz;
    v = next + (static_cast<double>(it - 1) / static_cast<double>(it + 2)) * (next - w);
    w = next;
  }
  m.weights = w;
  return m;
}

Mat backbone_features(const Model& model, const PointCloud& cloud) {
  const PointCloud norm = normalize_source_features(cloud, model.stats);
  return encode_points(model.encoder, model.dims, norm).features;
}

namespace {

std::vector<std::size_t> sample_without_replacement(std::size_t total, std::size_t count, std::mt19937_64& gen) {
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  count = std::min(count, total);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng::below(gen, total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

ProbeReport linear_probe(const Model& model, const Dataset& pool, const Dataset& eval, const ProbeConfig& cfg) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  std::vector<const PointCloud*> frames;
  for (const auto& s : pool.scenes) {
    for (const auto& f : s.frames) frames.push_back(&f.cloud);
  }
  if (frames.empty()) throw InvalidArgument("linear_probe: empty training pool");
  auto gen = rng::make(cfg.seed, rng::Stream::probe, 0);

  std::vector<Mat> feats;
  std::vector<int> labels;
  std::size_t train_frames = 0;
  if (cfg.sampling == BudgetSampling::frame) {
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.budget * static_cast<double>(frames.size()))));
    for (std::size_t k : sample_without_replacement(frames.size(), count, gen)) {
      feats.push_back(backbone_features(model, *frames[k]));
      for (auto c : frames[k]->gt_semantic) labels.push_back(c);
      ++train_frames;
    }
  } else {
    std::size_t total = 0;
    for (const auto* f : frames) total += static_cast<std::size_t>(f->size());
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.budget * static_cast<double>(total))));
    const auto chosen = sample_without_replacement(total, count, gen);
    std::size_t offset = 0, at = 0;
    for (const auto* f : frames) {
      const auto n = static_cast<std::size_t>(f->size());
      std::vector<int> rows;
      while (at < chosen.size() && chosen[at] < offset + n) rows.push_back(static_cast<int>(chosen[at++] - offset));
      if (!rows.empty()) {
        const Mat all = backbone_features(model, *f);
        Mat sel(static_cast<Eigen::Index>(rows.size()), all.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          sel.row(static_cast<Eigen::Index>(i)) = all.row(rows[i]);
          labels.push_back(f->gt_semantic[static_cast<std::size_t>(rows[i])]);
        }
        feats.push_back(sel);
        ++train_frames;
      }
      offset += n;
    }
  }
  Eigen::Index rows = 0;
  for (const auto& f : feats) rows += f.rows();
  Mat x(rows, model.dims.point_dim);
  Eigen::Index at = 0;
  for (const auto& f : feats) {
    x.middleRows(at, f.rows()) = f;
    at += f.rows();
  }
  if (static_cast<std::size_t>(rows) > static_cast<std::size_t>(cfg.max_train_points)) {
    auto cap_gen = rng::make(cfg.seed, rng::Stream::probe, 1);
    const auto keep = sample_without_replacement(static_cast<std::size_t>(rows), static_cast<std::size_t>(cfg.max_train_points), cap_gen);
    Mat xs(static_cast<Eigen::Index>(keep.size()), x.cols());
    std::vector<int> ls;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(keep[i]));
      ls.push_back(labels[keep[i]]);
    }
    x = std::move(xs);
    labels = std::move(ls);
  }

  const int k = kNumSemanticClasses;
  std::vector<char> trainable(static_cast<std::size_t>(k), 0);
  for (int c : labels) {
    if (c < 0 || c >= k) throw InvalidArgument("linear_probe: label outside the class table");
    trainable[static_cast<std::size_t>(c)] = 1;
  }
  std::vector<int> dense_of(static_cast<std::size_t>(k), -1), class_of;
  for (int c = 0; c < k; ++c) {
    if (trainable[static_cast<std::size_t>(c)]) {
      dense_of[static_cast<std::size_t>(c)] = static_cast<int>(class_of.size());
      class_of.push_back(c);
    }
  }
  std::vector<int> dense(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) dense[i] = dense_of[static_cast<std::size_t>(labels[i])];
  const LogisticModel clf = fit_logistic(x, dense, static_cast<int>(class_of.size()), cfg);

  Confusion confusion(static_cast<std::size_t>(k), std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));
  std::size_t eval_points = 0;
  for (const auto& s : eval.scenes) {
    for (const auto& f : s.frames) {
      const auto pred = clf.predict(backbone_features(model, f.cloud));
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const int gt = f.cloud.gt_semantic[i];
        if (gt < 0 || gt >= k) throw InvalidArgument("linear_probe: label outside the class table");
        ++confusion[static_cast<std::size_t>(gt)][static_cast<std::size_t>(class_of[static_cast<std::size_t>(pred[i])])];
      }
      eval_points += pred.size();
    }
  }
  ProbeReport r = report_from_confusion(confusion, trainable);
  r.iterations = clf.iterations;
  r.train_frames = train_frames;
  r.train_points = static_cast<std::size_t>(x.rows());
  r.eval_points = eval_points;
  if (cfg.timing) r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void write_probe_report(const ProbeReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path) {
  nlohmann::ordered_json j;
  j["miou"] = r.miou;
  j["overall_accuracy"] = r.overall_accuracy;
  j["iterations"] = r.iterations;
  j["train_frames"] = r.train_frames;
  j["train_points"] = r.train_points;
  j["eval_points"] = r.eval_points;
  j["runtime_seconds"] = r.runtime_seconds;
  j["classes"] = nlohmann::ordered_json::array();
  nlohmann::ordered_json flagged = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    nlohmann::ordered_json jc;
    jc["name"] = r.class_names[c];
    jc["iou"] = r.iou[c];
    jc["accuracy"] = r.accuracy[c];
    jc["present"] = static_cast<bool>(r.present[c]);
    jc["trainable"] = static_cast<bool>(r.trainable[c]);
    j["classes"].push_back(jc);
    if (r.present[c] && !r.trainable[c]) flagged.push_back(r.class_names[c]);
  }
  j["untrained_classes"] = flagged;
  j["confusion"] = r.confusion;
  {
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot open " + json_path.string());
    out << j.dump(2) << '\n';
  }
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw FormatError(FormatErrorCode::io_failure, "cannot open " + csv_path.string());
  csv << "gt\\pred";
  for (const auto& n : r.class_names) csv << ',' << n;
  csv << '\n';
  for (std::size_t c = 0; c < r.confusion.size(); ++c) {
    csv << r.class_names[c];
    for (auto v : r.confusion[c]) csv << ',' << v;
    csv << '\n';
  }
}

ProbeReport read_probe_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw FormatError(FormatErrorCode::io_failure, "cannot open " + json_path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    std::vector<char> trainable;
    for (const auto& c : j.at("classes")) trainable.push_back(c.at("trainable").get<bool>());
    ProbeReport r = report_from_confusion(j.at("confusion").get<Confusion>(), trainable);
    r.iterations = j.at("iterations").get<int>();
    r.train_frames = j.at("train_frames").get<std::size_t>();
    r.train_points = j.at("train_points").get<std::size_t>();
    r.eval_points = j.at("eval_points").get<std::size_t>();
    r.runtime_seconds = j.at("runtime_seconds").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorCode::malformed_header, json_path.string() + ": " + e.what());
  }
}

Vec cosine_map(const Model& model, const PointCloud& cloud, Eigen::Index query_index) {
  if (query_index < 0 || query_index >= cloud.size()) throw InvalidArgument("cosine_map: query index out of range");
  const Mat emb = point_head(model.heads.point, backbone_features(model, cloud)).embedding;
  return (emb * emb.row(query_index).transpose()).cwiseMax(-1.0).cwiseMin(1.0);
}

void write_cosine_csv(const PointCloud& cloud, const Vec& similarity, const std::filesystem::path& path) {
  if (similarity.size() != cloud.size()) throw InvalidArgument("write_cosine_csv: size mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string());
  out << "index,x,y,z,similarity,gt_instance\n" << std::setprecision(9);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    out << i << ',' << cloud.coords(i, 0) << ',' << cloud.coords(i, 1) << ',' << cloud.coords(i, 2) << ','
        << similarity(i) << ',' << cloud.gt_instance[static_cast<std::size_t>(i)] << '\n';
  }
}

CorruptionKind parse_corruption(const std::string& name) {
  if (name == "beam_drop") return CorruptionKind::beam_drop;
  if (name == "jitter") return CorruptionKind::jitter;
  if (name == "intensity_shift") return CorruptionKind::intensity_shift;
  throw InvalidArgument("unknown corruption kind: " + name);
}

const char* to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::beam_drop: return "beam_drop";
    case CorruptionKind::jitter: return "jitter";
    case CorruptionKind::intensity_shift: return "intensity_shift";
  }
  return "unknown";
}

std::vector<int> beam_rings(const PointCloud& cloud, const std::vector<double>& beam_elevations) {
  if (beam_elevations.empty()) throw InvalidArgument("beam_rings: no beam elevations");
  std::vector<int> out(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const double el = std::atan2(cloud.coords(i, 2), std::hypot(cloud.coords(i, 0), cloud.coords(i, 1)));
    int best = 0;
    for (std::size_t b = 1; b < beam_elevations.size(); ++b) {
      if (std::abs(beam_elevations[b] - el) < std::abs(beam_elevations[static_cast<std::size_t>(best)] - el)) best = static_cast<int>(b);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

PointCloud corrupt(const PointCloud& cloud, CorruptionKind kind, int severity, std::uint64_t seed,
                   const std::vector<double>& beam_elevations) {
  if (severity < 1 || severity > 3) throw InvalidArgument("corrupt: severity must be 1, 2 or 3");
  PointCloud out = cloud;
  switch (kind) {
    case CorruptionKind::beam_drop: {
      const auto rings = beam_rings(cloud, beam_elevations);
      std::vector<int> keep;
      for (std::size_t i = 0; i < rings.size(); ++i) {
        const int r = rings[i];
        const bool dropped = severity == 1 ? r % 4 == 0 : severity == 2 ? r % 2 == 0 : r % 4 != 0;
        if (!dropped) keep.push_back(static_cast<int>(i));
      }
      out.coords.resize(static_cast<Eigen::Index>(keep.size()), 3);
      out.features.resize(static_cast<Eigen::Index>(keep.size()), cloud.features.cols());
      out.gt_semantic.clear();
      out.gt_instance.clear();
      for (std::size_t k = 0; k < keep.size(); ++k) {
        out.coords.row(static_cast<Eigen::Index>(k)) = cloud.coords.row(keep[k]);
        out.features.row(static_cast<Eigen::Index>(k)) = cloud.features.row(keep[k]);
        out.gt_semantic.push_back(cloud.gt_semantic[static_cast<std::size_t>(keep[k])]);
        out.gt_instance.push_back(cloud.gt_instance[static_cast<std::size_t>(keep[k])]);
      }
      break;
    }
    case CorruptionKind::jitter: {
      static constexpr double kSigma[] = {0.02, 0.05, 0.10};
      auto gen = rng::make(seed, rng::Stream::corruption, 0);
      for (Eigen::Index i = 0; i < out.coords.size(); ++i) out.coords.data()[i] += kSigma[severity - 1] * rng::normal(gen);
      break;
    }
    case CorruptionKind::intensity_shift: {
      static constexpr double kScale[] = {1.25, 1.5, 2.0};
      if (out.features.cols() < 1) throw InvalidArgument("corrupt: cloud has no intensity channel");
      out.features.col(0) *= kScale[severity - 1];
      break;
    }
  }
  return out;
}

}  // namespace lad
