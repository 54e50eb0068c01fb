#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lad/dataset_io.hpp"
#include "lad/embed.hpp"

namespace lad {

enum class BudgetSampling { frame, point };

struct ProbeConfig {
  double budget = 0.1;
  int max_train_points = 6000;
  int max_iterations = 2000;
  double tolerance = 1e-6;  // on the largest gradient entry
  double l2 = 1e-4;
  BudgetSampling sampling = BudgetSampling::frame;
  std::uint64_t seed = 0;
  bool timing = false;  // fill runtime_seconds
};

void validate(const ProbeConfig& cfg);

/// Rows are ground truth, columns predictions.
using Confusion = std::vector<std::vector<std::int64_t>>;

struct ProbeReport {
  std::vector<std::string> class_names;
  std::vector<double> iou;
  std::vector<double> accuracy;     // per-class recall
  std::vector<char> present;        // class occurs in the evaluation ground truth
  std::vector<char> trainable;      // class occurs in the training subset
  Confusion confusion;
  double miou = 0.0;                // over present classes
  double overall_accuracy = 0.0;
  int iterations = 0;
  std::size_t train_frames = 0;
  std::size_t train_points = 0;
  std::size_t eval_points = 0;
  double runtime_seconds = 0.0;
};

/// IoU, accuracy and mIoU from a confusion matrix. Classes absent from the
/// evaluation ground truth are left out of the mean.
ProbeReport report_from_confusion(const Confusion& confusion, const std::vector<char>& trainable);

struct LogisticModel {
  Mat weights;  // (features + 1) x classes, last row is the bias
  Vec mean;     // feature standardization
  Vec scale;
  int iterations = 0;

  std::vector<int> predict(const Mat& features) const;
};

/// Multinomial logistic regression by Nesterov-accelerated full-batch
/// gradient descent with step 1/L, L = 0.5 * lambda_max(X^T X / n) + l2.
/// Labels must lie in [0, classes).
LogisticModel fit_logistic(const Mat& features, const std::vector<int>& labels, int classes, const ProbeConfig& cfg);

/// Frozen backbone features of a raw cloud (normalized with the model's stats).
Mat backbone_features(const Model& model, const PointCloud& cloud);

/// Fits on a budget-sampled subset of `pool` and evaluates on every point of
/// `eval`. Classes without training points are never predicted.
ProbeReport linear_probe(const Model& model, const Dataset& pool, const Dataset& eval, const ProbeConfig& cfg);

void write_probe_report(const ProbeReport& report, const std::filesystem::path& json_path,
                        const std::filesystem::path& csv_path);
ProbeReport read_probe_report(const std::filesystem::path& json_path);

/// Cosine similarity of every point's embedding to the query point's.
Vec cosine_map(const Model& model, const PointCloud& cloud, Eigen::Index query_index);
void write_cosine_csv(const PointCloud& cloud, const Vec& similarity, const std::filesystem::path& path);

enum class CorruptionKind { beam_drop, jitter, intensity_shift };
CorruptionKind parse_corruption(const std::string& name);
const char* to_string(CorruptionKind kind);

/// beam_drop removes whole elevation rings (1/4, 1/2, 3/4 of the beams);
/// jitter adds N(0, sigma^2) per coordinate, sigma = 0.02, 0.05, 0.10 m;
/// intensity_shift scales the intensity channel by 1.25, 1.5, 2.0.
/// Labels of surviving points are untouched.
PointCloud corrupt(const PointCloud& cloud, CorruptionKind kind, int severity, std::uint64_t seed,
                   const std::vector<double>& beam_elevations);

/// Index of the nearest beam elevation for every point.
std::vector<int> beam_rings(const PointCloud& cloud, const std::vector<double>& beam_elevations);

}  // namespace lad
