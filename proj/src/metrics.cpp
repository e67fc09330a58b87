#include "r2seg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace r2seg {

namespace {

constexpr int kAucSteps = 256;

double ratio_or(std::uint64_t num, std::uint64_t den, double empty) {
  return den == 0 ? empty : double(num) / double(den);
}

void check_binary_mask(const Tensor4& t, const char* what) {
  for (double v : t.data()) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument(std::string(what) +
                                  " must be binary, found " +
                                  std::to_string(v));
    }
  }
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

ConfusionCounts confusion(const Tensor4& pred_mask, const Tensor4& gt_mask) {
  if (pred_mask.shape() != gt_mask.shape()) {
    throw ShapeError("confusion: shape mismatch " +
                     to_string(pred_mask.shape()) + " vs " +
                     to_string(gt_mask.shape()));
  }
  check_binary_mask(pred_mask, "confusion: prediction");
  check_binary_mask(gt_mask, "confusion: ground truth");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] == 1.0;
    const bool g = gt_mask[i] == 1.0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Tensor4 binarize(const Tensor4& probs, double threshold) {
  Tensor4 m = probs;
  for (double& v : m.data()) v = v >= threshold ? 1.0 : 0.0;
  return m;
}

MetricValues metrics_from_counts(const ConfusionCounts& c) {
  MetricValues m{};
  const auto at = [&](Metric k) -> double& { return m[std::size_t(k)]; };
  at(Metric::dsc) = ratio_or(2 * c.tp, 2 * c.tp + c.fp + c.fn, 1.0);
  // DSC / (2 - DSC) reduces to TP / (TP + FP + FN); evaluated from the
  // counts so the value is a single rounding of the exact ratio.
  at(Metric::js) = ratio_or(c.tp, c.tp + c.fp + c.fn, 1.0);
  at(Metric::precision) =
      ratio_or(c.tp, c.tp + c.fp, c.fn == 0 ? 1.0 : 0.0);
  at(Metric::recall) = ratio_or(c.tp, c.tp + c.fn, c.fp == 0 ? 1.0 : 0.0);
  at(Metric::sensitivity) = at(Metric::recall);
  at(Metric::specificity) =
      ratio_or(c.tn, c.tn + c.fp, c.fn == 0 ? 1.0 : 0.0);
  at(Metric::accuracy) = ratio_or(c.tp + c.tn, c.total(), 1.0);
  at(Metric::auc) = 0.0;
  return m;
}

AucResult auc(const Tensor4& probs, const Tensor4& gt_mask) {
  if (probs.shape() != gt_mask.shape()) {
    throw ShapeError("auc: shape mismatch " + to_string(probs.shape()) +
                     " vs " + to_string(gt_mask.shape()));
  }
  check_binary_mask(gt_mask, "auc: ground truth");
  // hist[k]: samples whose highest passed threshold index is k, i.e.
  // k/256 <= p < (k+1)/256. Index -1 (p < 0) is dropped into `below`.
  std::array<std::uint64_t, kAucSteps + 1> pos_hist{}, neg_hist{};
  std::uint64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double scaled = std::floor(probs[i] * kAucSteps);
    const bool is_pos = gt_mask[i] == 1.0;
    (is_pos ? pos : neg) += 1;
    if (!(scaled >= 0.0)) continue;
    const auto k = std::size_t(std::min<double>(scaled, kAucSteps));
    (is_pos ? pos_hist : neg_hist)[k] += 1;
  }
  if (pos == 0 || neg == 0) return AucResult{1.0, true};

  // Sweep thresholds from high to low; start at the (0, 0) corner.
  double area = 0.0;
  std::uint64_t tp = 0, fp = 0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  for (int k = kAucSteps; k >= 0; --k) {
    tp += pos_hist[std::size_t(k)];
    fp += neg_hist[std::size_t(k)];
    const double tpr = double(tp) / double(pos);
    const double fpr = double(fp) / double(neg);
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return AucResult{area, false};
}

MetricsRow aggregate(const std::vector<MetricValues>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate: no rows");
  MetricsRow out;
  out.samples = rows.size();
  const double n = double(rows.size());
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    double sum = 0.0;
    for (const auto& r : rows) sum += r[k];
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& r : rows) sq += (r[k] - mean) * (r[k] - mean);
    out.mean[k] = mean;
    out.std[k] = std::sqrt(sq / n);
  }
  return out;
}

MetricsRow evaluate_predictions(const std::vector<Tensor4>& probs,
                                const std::vector<Tensor4>& masks,
                                double threshold) {
  if (probs.size() != masks.size()) {
    throw ShapeError("evaluate_predictions: prediction/mask count mismatch");
  }
  std::vector<MetricValues> rows;
  rows.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    MetricValues m = metrics_from_counts(confusion(binarize(probs[i], threshold), masks[i]));
    m[std::size_t(Metric::auc)] = auc(probs[i], masks[i]).value;
    rows.push_back(m);
  }
  return aggregate(rows);
}

std::string report_table(const std::vector<ModelRow>& rows, bool with_params) {
  std::string out = "| Model |";
  for (auto name : kMetricNames) out += " " + std::string(name) + " |";
  if (with_params) out += " Params |";
  out += "\n|---|";
  for (std::size_t k = 0; k < kMetricCount; ++k) out += "---|";
  if (with_params) out += "---|";
  out += "\n";
  for (const auto& r : rows) {
    out += "| " + r.model + " |";
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      out += " " + fmt("%.3f", r.metrics.mean[k]) + " ± " +
             fmt("%.3f", r.metrics.std[k]) + " |";
    }
    if (with_params) out += " " + std::to_string(r.params) + " |";
    out += "\n";
  }
  return out;
}

std::string report_csv(const std::vector<ModelRow>& rows, bool with_params) {
  std::string out = "model";
  for (auto name : kMetricNames) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    out += "," + lower + "_mean," + lower + "_std";
  }
  out += with_params ? ",params,samples\n" : ",samples\n";
  for (const auto& r : rows) {
    out += r.model;
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      out += "," + fmt("%.17g", r.metrics.mean[k]) + "," +
             fmt("%.17g", r.metrics.std[k]);
    }
    if (with_params) out += "," + std::to_string(r.params);
    out += "," + std::to_string(r.metrics.samples) + "\n";
  }
  return out;
}

std::vector<ModelRow> parse_report_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("report csv: missing header");
  const auto header = split_csv_line(line);
  const bool with_params =
      std::find(header.begin(), header.end(), "params") != header.end();
  const std::size_t expected = 1 + 2 * kMetricCount + (with_params ? 2 : 1);
  if (header.size() != expected) {
    throw FormatError("report csv: unexpected header");
  }
  std::vector<ModelRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != expected) throw FormatError("report csv: bad row");
    ModelRow r;
    r.model = cells[0];
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      r.metrics.mean[k] = std::strtod(cells[1 + 2 * k].c_str(), nullptr);
      r.metrics.std[k] = std::strtod(cells[2 + 2 * k].c_str(), nullptr);
    }
    std::size_t next = 1 + 2 * kMetricCount;
    if (with_params) r.params = std::stoull(cells[next++]);
    r.metrics.samples = std::stoull(cells[next]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace r2seg
