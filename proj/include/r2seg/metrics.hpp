#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "r2seg/tensor.hpp"

namespace r2seg {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Per-pixel counts between two binary masks of equal shape.
ConfusionCounts confusion(const Tensor4& pred_mask, const Tensor4& gt_mask);

/// Binarises probabilities (p >= threshold) into a 0/1 mask.
Tensor4 binarize(const Tensor4& probs, double threshold = 0.5);

// Metric columns in table order.
enum class Metric {
  dsc, js, precision, recall, sensitivity, specificity, accuracy, auc
};
inline constexpr std::size_t kMetricCount = 8;
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames{
    "DSC",         "JS",          "Precision", "Recall",
    "Sensitivity", "Specificity", "Accuracy",  "AUC"};

/// One sample's metric values, indexed by Metric.
using MetricValues = std::array<double, kMetricCount>;

/// DSC, JS, precision, recall, sensitivity, specificity and accuracy from
/// counts. Empty denominators: DSC is 1 when TP+FP+FN = 0; precision is 1
/// when TP+FP = 0 and FN = 0, else 0; recall/sensitivity is 1 when TP+FN = 0
/// and FP = 0, else 0; specificity is 1 when TN+FP = 0 and FN = 0, else 0.
/// The AUC slot is left at 0.
MetricValues metrics_from_counts(const ConfusionCounts& c);

struct AucResult {
  double value = 0.5;
  bool degenerate = false;  // ground truth holds a single class
};

/// Trapezoidal ROC area over thresholds k/256, k = 0..256 (p >= threshold
/// is positive), closed with the (0, 0) corner. A single-class ground truth
/// yields 1.0 with the degenerate flag set.
AucResult auc(const Tensor4& probs, const Tensor4& gt_mask);

struct MetricsRow {
  MetricValues mean{};
  MetricValues std{};  // population standard deviation
  std::size_t samples = 0;
};

MetricsRow aggregate(const std::vector<MetricValues>& rows);

/// Per-sample metrics (threshold for the confusion counts, AUC from the
/// raw probabilities) then aggregate.
MetricsRow evaluate_predictions(const std::vector<Tensor4>& probs,
                                const std::vector<Tensor4>& masks,
                                double threshold = 0.5);

struct ModelRow {
  std::string model;
  MetricsRow metrics;
  std::size_t params = 0;  // 0 hides the column value
};

/// Markdown table: Model, DSC, JS, Precision, Recall, Sensitivity,
/// Specificity, Accuracy, AUC (and Params when requested), values rendered
/// as "mean ± std" with three decimals.
std::string report_table(const std::vector<ModelRow>& rows,
                         bool with_params = false);

/// CSV with one mean and one std column per metric, full precision.
std::string report_csv(const std::vector<ModelRow>& rows,
                       bool with_params = false);
std::vector<ModelRow> parse_report_csv(const std::string& csv);

}  // namespace r2seg
