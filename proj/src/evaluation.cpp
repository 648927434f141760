#include "safd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "safd/errors.hpp"
#include "safd/numerics.hpp"
#include "safd/rng.hpp"

namespace safd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* op) {
    if (scores.size() != labels.size()) throw std::invalid_argument(std::string(op) + ": scores and labels differ in length");
    for (int l : labels) {
        if (l != 0 && l != 1) throw std::invalid_argument(std::string(op) + ": labels must be 0 or 1");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) throw std::invalid_argument(std::string(op) + ": scores must be finite");
    }
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

// Cumulative (tp, fp) after each group of tied scores, sweeping downwards.
struct SweepStep {
    double threshold;
    std::size_t tp;
    std::size_t fp;
};

std::vector<SweepStep> sweep(std::span<const double> scores, std::span<const int> labels) {
    const auto idx = descending_order(scores);
    std::vector<SweepStep> out;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        const double s = scores[idx[i]];
        for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] == 1 ? tp : fp) += 1;
        out.push_back({s, tp, fp});
    }
    return out;
}

double percentile(std::vector<double> sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BootstrapDraws {
    std::vector<std::vector<double>> values;  // per metric
    int skipped = 0;
};

BootstrapDraws bootstrap_draws(const std::vector<MetricFn>& metrics, std::span<const double> scores,
                               std::span<const int> labels, int n_boot, std::uint64_t seed) {
    const std::size_t n = scores.size();
    if (n < 20) throw UndefinedMetric("bootstrap: need at least 20 samples, got " + std::to_string(n));
    if (n_boot < 1) throw std::invalid_argument("bootstrap: n_boot must be >= 1");
    BootstrapDraws out;
    out.values.resize(metrics.size());
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (int b = 0; b < n_boot; ++b) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        bool ok = false;
        for (int attempt = 0; attempt <= 10 && !ok; ++attempt) {
            std::size_t pos = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = rng.below(n);
                s[i] = scores[j];
                l[i] = labels[j];
                pos += static_cast<std::size_t>(l[i]);
            }
            ok = pos > 0 && pos < n;
        }
        if (!ok) {
            ++out.skipped;
            continue;
        }
        for (std::size_t m = 0; m < metrics.size(); ++m) out.values[m].push_back(metrics[m](s, l));
    }
    if (out.values.empty() || out.values[0].empty()) {
        throw UndefinedMetric("bootstrap: every resample lacked one of the classes");
    }
    return out;
}

BootstrapCI interval(std::vector<double> values, int skipped, double level) {
    std::sort(values.begin(), values.end());
    const double tail = (1.0 - level) / 2.0;
    return {percentile(values, tail), percentile(values, 1.0 - tail), static_cast<int>(values.size()), skipped};
}

nlohmann::ordered_json number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

nlohmann::ordered_json metric_json(const MetricCI& m) {
    return {{"point", m.point}, {"ci_lo", m.ci_lo}, {"ci_hi", m.ci_hi}};
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

std::vector<int> labels_of(std::span<const Segment> segments) {
    std::vector<int> out;
    out.reserve(segments.size());
    for (const Segment& s : segments) {
        if (s.label == Label::Unlabeled) throw DataError("segment from " + s.case_id + " has no label");
        out.push_back(s.label == Label::Positive ? 1 : 0);
    }
    return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels, "roc_auc");
    const std::size_t n1 = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t n0 = labels.size() - n1;
    if (n1 == 0 || n0 == 0) throw UndefinedMetric("roc_auc: both classes must be present");

    // Ascending sweep; twice the Mann-Whitney count is an exact integer.
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::uint64_t twice = 0;
    std::uint64_t neg_below = 0;
    for (std::size_t i = 0; i < idx.size();) {
        const double s = scores[idx[i]];
        std::uint64_t pos = 0, neg = 0;
        for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] == 1 ? pos : neg) += 1;
        twice += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
    }
    return (static_cast<double>(twice) / 2.0) / (static_cast<double>(n1) * static_cast<double>(n0));
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels, "pr_auc");
    const std::size_t n1 = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (n1 == 0) throw UndefinedMetric("pr_auc: no positive labels");
    double ap = 0.0;
    std::size_t prev_tp = 0;
    for (const SweepStep& st : sweep(scores, labels)) {
        if (st.tp != prev_tp) {
            const double precision = static_cast<double>(st.tp) / static_cast<double>(st.tp + st.fp);
            ap += static_cast<double>(st.tp - prev_tp) / static_cast<double>(n1) * precision;
            prev_tp = st.tp;
        }
    }
    return ap;
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels, "roc_curve");
    const auto n1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const auto n0 = static_cast<double>(labels.size()) - n1;
    if (n1 == 0 || n0 == 0) throw UndefinedMetric("roc_curve: both classes must be present");
    std::vector<CurvePoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    for (const SweepStep& st : sweep(scores, labels)) {
        out.push_back({static_cast<double>(st.fp) / n0, static_cast<double>(st.tp) / n1, st.threshold});
    }
    return out;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels, "pr_curve");
    const auto n1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    if (n1 == 0) throw UndefinedMetric("pr_curve: no positive labels");
    std::vector<CurvePoint> out;
    for (const SweepStep& st : sweep(scores, labels)) {
        out.push_back({static_cast<double>(st.tp) / n1, static_cast<double>(st.tp) / static_cast<double>(st.tp + st.fp),
                       st.threshold});
    }
    return out;
}

ClassifyMetrics classify_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_inputs(scores, labels, "classify_metrics");
    if (scores.empty()) throw std::invalid_argument("classify_metrics: empty input");
    ClassifyMetrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] == 1) {
            (pred ? m.tp : m.fn) += 1;
        } else {
            (pred ? m.fp : m.tn) += 1;
        }
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    m.accuracy = ratio(m.tp + m.tn, scores.size());
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
    return m;
}

BootstrapCI bootstrap_ci(const MetricFn& metric, std::span<const double> scores, std::span<const int> labels,
                         int n_boot, std::uint64_t seed, double level) {
    check_inputs(scores, labels, "bootstrap_ci");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must be in (0, 1)");
    BootstrapDraws draws = bootstrap_draws({metric}, scores, labels, n_boot, seed);
    return interval(std::move(draws.values[0]), draws.skipped, level);
}

std::vector<CalibrationBin> calibration_curve(std::span<const double> scores, std::span<const int> labels, int bins) {
    check_inputs(scores, labels, "calibration_curve");
    if (bins < 1) throw std::invalid_argument("calibration_curve: bins must be >= 1");
    std::vector<CalibrationBin> out(static_cast<std::size_t>(bins));
    std::vector<double> pred_sum(out.size(), 0.0), pos_sum(out.size(), 0.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = scores[i];
        if (s < 0.0 || s > 1.0) throw std::invalid_argument("calibration_curve: scores must lie in [0, 1]");
        const auto b = std::min(static_cast<std::size_t>(s * bins), out.size() - 1);
        pred_sum[b] += s;
        pos_sum[b] += labels[i];
        ++out[b].count;
    }
    for (std::size_t b = 0; b < out.size(); ++b) {
        out[b].bin_lo = static_cast<double>(b) / bins;
        out[b].bin_hi = static_cast<double>(b + 1) / bins;
        const auto c = static_cast<double>(out[b].count);
        out[b].mean_pred = out[b].count ? pred_sum[b] / c : kNaN;
        out[b].frac_pos = out[b].count ? pos_sum[b] / c : kNaN;
    }
    return out;
}

namespace {

double clamped_logit(double s) {
    const double p = std::clamp(s, 1e-7, 1.0 - 1e-7);
    return std::log(p / (1.0 - p));
}

}  // namespace

double PlattScaling::apply(double score) const { return sigmoid(a * clamped_logit(score) + b); }

std::vector<double> PlattScaling::apply(std::span<const double> scores) const {
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = apply(scores[i]);
    return out;
}

PlattScaling platt_recalibrate(std::span<const double> dev_scores, std::span<const int> dev_labels) {
    check_inputs(dev_scores, dev_labels, "platt_recalibrate");
    const auto n1 = std::count(dev_labels.begin(), dev_labels.end(), 1);
    if (n1 == 0 || n1 == static_cast<long>(dev_labels.size())) {
        throw FitError("platt_recalibrate: both classes must be present in the dev set");
    }
    std::vector<double> x(dev_scores.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = clamped_logit(dev_scores[i]);
    const double n = static_cast<double>(x.size());

    auto loss = [&](double a, double b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double z = a * x[i] + b;
            // log(1 + e^z) - y z, written to avoid overflow
            sum += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - dev_labels[i] * z;
        }
        return sum / n;
    };

    PlattScaling fit;
    double current = loss(fit.a, fit.b);
    for (int it = 1; it <= 1000; ++it) {
        double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double p = sigmoid(fit.a * x[i] + fit.b);
            const double r = p - dev_labels[i];
            const double w = p * (1.0 - p);
            ga += r * x[i];
            gb += r;
            haa += w * x[i] * x[i];
            hab += w * x[i];
            hbb += w;
        }
        ga /= n, gb /= n, haa /= n, hab /= n, hbb /= n;
        fit.iterations = it;
        if (std::hypot(ga, gb) < 1e-10) return fit;
        const double ridge = 1e-12;
        const double det = (haa + ridge) * (hbb + ridge) - hab * hab;
        double da = -((hbb + ridge) * ga - hab * gb) / det;
        double db = -((haa + ridge) * gb - hab * ga) / det;
        if (!std::isfinite(da) || !std::isfinite(db)) break;
        double step = 1.0;
        double next = loss(fit.a + da, fit.b + db);
        while (next > current && step > 1e-10) {
            step *= 0.5;
            next = loss(fit.a + step * da, fit.b + step * db);
        }
        fit.a += step * da;
        fit.b += step * db;
        if (std::abs(current - next) < 1e-16 && std::hypot(step * da, step * db) < 1e-12) return fit;
        current = next;
    }
    throw FitError("platt_recalibrate: no convergence within 1000 iterations");
}

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels, int horizon_min,
                    const EvalOptions& opt) {
    check_inputs(scores, labels, "evaluate");
    EvalReport r;
    r.horizon_min = horizon_min;
    r.n = scores.size();
    r.n_positive = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    r.bootstrap_seed = opt.seed;

    const double thr = opt.threshold;
    const std::vector<MetricFn> fns{
        [](auto s, auto l) { return roc_auc(s, l); },
        [](auto s, auto l) { return pr_auc(s, l); },
        [thr](auto s, auto l) { return classify_metrics(s, l, thr).accuracy; },
        [thr](auto s, auto l) { return classify_metrics(s, l, thr).precision; },
        [thr](auto s, auto l) { return classify_metrics(s, l, thr).recall; },
        [thr](auto s, auto l) { return classify_metrics(s, l, thr).f1; },
    };
    MetricCI* slots[] = {&r.auroc, &r.auprc, &r.accuracy, &r.precision, &r.recall, &r.f1};
    for (std::size_t m = 0; m < fns.size(); ++m) slots[m]->point = fns[m](scores, labels);

    BootstrapDraws draws = bootstrap_draws(fns, scores, labels, opt.n_boot, opt.seed);
    r.bootstrap_resamples = static_cast<int>(draws.values[0].size());
    for (std::size_t m = 0; m < fns.size(); ++m) {
        const BootstrapCI ci = interval(std::move(draws.values[m]), draws.skipped, 0.95);
        // Percentile intervals need not contain the point estimate.
        slots[m]->ci_lo = std::min(ci.lo, slots[m]->point);
        slots[m]->ci_hi = std::max(ci.hi, slots[m]->point);
    }

    r.roc_points = roc_curve(scores, labels);
    r.pr_points = pr_curve(scores, labels);
    r.calibration = calibration_curve(scores, labels, opt.calibration_bins);
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["horizon_min"] = horizon_min;
    j["n"] = n;
    j["n_positive"] = n_positive;
    j["auroc"] = metric_json(auroc);
    j["auprc"] = metric_json(auprc);
    j["accuracy"] = metric_json(accuracy);
    j["precision"] = metric_json(precision);
    j["recall"] = metric_json(recall);
    j["f1"] = metric_json(f1);
    j["bootstrap"] = {{"resamples", bootstrap_resamples}, {"seed", bootstrap_seed}, {"level", 0.95}};
    auto points = [](const std::vector<CurvePoint>& pts, const char* xn, const char* yn) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const CurvePoint& p : pts) arr.push_back({{xn, p.x}, {yn, p.y}, {"threshold", number_or_null(p.threshold)}});
        return arr;
    };
    j["roc_points"] = points(roc_points, "fpr", "tpr");
    j["pr_points"] = points(pr_points, "recall", "precision");
    nlohmann::ordered_json cal = nlohmann::ordered_json::array();
    for (const CalibrationBin& b : calibration) {
        cal.push_back({{"bin_lo", b.bin_lo},
                       {"bin_hi", b.bin_hi},
                       {"mean_pred", number_or_null(b.mean_pred)},
                       {"frac_pos", number_or_null(b.frac_pos)},
                       {"count", b.count}});
    }
    j["calibration"] = cal;
    return j.dump(2) + "\n";
}

std::string EvalReport::roc_csv() const {
    std::string out = "fpr,tpr,threshold\n";
    for (const CurvePoint& p : roc_points) out += format_double(p.x) + ',' + format_double(p.y) + ',' + format_double(p.threshold) + '\n';
    return out;
}

std::string EvalReport::pr_csv() const {
    std::string out = "recall,precision,threshold\n";
    for (const CurvePoint& p : pr_points) out += format_double(p.x) + ',' + format_double(p.y) + ',' + format_double(p.threshold) + '\n';
    return out;
}

std::string EvalReport::calibration_csv() const {
    std::string out = "bin_lo,bin_hi,mean_pred,frac_pos,count\n";
    for (const CalibrationBin& b : calibration) {
        out += format_double(b.bin_lo) + ',' + format_double(b.bin_hi) + ',' + format_double(b.mean_pred) + ',' +
               format_double(b.frac_pos) + ',' + std::to_string(b.count) + '\n';
    }
    return out;
}

}  // namespace safd
