#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "safd/signal_io.hpp"

namespace safd {

/// Labels of labeled segments as 0/1; Unlabeled raises DataError.
std::vector<int> labels_of(std::span<const Segment> segments);

/// Mann-Whitney AUROC with half credit for ties.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Average precision; tied scores enter the sweep as one step.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct CurvePoint {
    double x = 0.0;  // fpr (roc) or recall (pr)
    double y = 0.0;  // tpr (roc) or precision (pr)
    double threshold = 0.0;
};

/// Descending-threshold sweep, starting at (0, 0).
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
/// One point per distinct threshold, descending.
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

struct ClassifyMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// score >= threshold predicts positive. Ratios with a zero denominator are 0.
ClassifyMetrics classify_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

using MetricFn = std::function<double(std::span<const double>, std::span<const int>)>;

struct BootstrapCI {
    double lo = 0.0;
    double hi = 0.0;
    int resamples = 0;  // resamples that contributed
    int skipped = 0;    // resamples still single-class after 10 redraws
};

/// Percentile bootstrap. Resample b uses its own seed derived from (seed, b).
BootstrapCI bootstrap_ci(const MetricFn& metric, std::span<const double> scores, std::span<const int> labels,
                         int n_boot = 1000, std::uint64_t seed = 0, double level = 0.95);

struct CalibrationBin {
    double bin_lo = 0.0;
    double bin_hi = 0.0;
    double mean_pred = 0.0;  // NaN when empty
    double frac_pos = 0.0;   // NaN when empty
    std::size_t count = 0;
};

/// Equal-width bins over [0, 1]; the last bin is closed on the right.
std::vector<CalibrationBin> calibration_curve(std::span<const double> scores, std::span<const int> labels,
                                              int bins = 10);

struct PlattScaling {
    double a = 1.0;
    double b = 0.0;
    int iterations = 0;

    double apply(double score) const;
    std::vector<double> apply(std::span<const double> scores) const;
};

/// Fits sigmoid(a * logit(s) + b) to dev labels by Newton's method on the
/// mean log loss.
PlattScaling platt_recalibrate(std::span<const double> dev_scores, std::span<const int> dev_labels);

struct MetricCI {
    double point = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

struct EvalOptions {
    int n_boot = 1000;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    int calibration_bins = 10;
};

struct EvalReport {
    int horizon_min = 0;
    std::size_t n = 0;
    std::size_t n_positive = 0;
    MetricCI auroc, auprc, accuracy, precision, recall, f1;
    std::vector<CurvePoint> roc_points;
    std::vector<CurvePoint> pr_points;
    std::vector<CalibrationBin> calibration;
    int bootstrap_resamples = 0;
    std::uint64_t bootstrap_seed = 0;

    std::string to_json() const;
    std::string roc_csv() const;
    std::string pr_csv() const;
    std::string calibration_csv() const;
};

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels, int horizon_min,
                    const EvalOptions& options = {});

}  // namespace safd
