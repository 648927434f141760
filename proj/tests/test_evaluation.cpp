#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "oracles.hpp"
#include "safd/errors.hpp"
#include "safd/evaluation.hpp"
#include "safd/rng.hpp"

using namespace safd;

namespace {

struct Instance {
    std::vector<double> s;
    std::vector<int> y;
};

// Random scores on a coarse grid so that ties occur.
Instance random_instance(std::uint64_t seed, std::size_t max_n = 200) {
    Rng rng(seed);
    Instance out;
    const std::size_t n = 2 + rng.below(max_n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = rng.uniform() < 0.4 ? 1 : 0;
        out.y.push_back(y);
        out.s.push_back(std::round((rng.uniform() + 0.3 * y) * 20.0) / 20.0);
    }
    out.y[0] = 1;
    out.y[1] = 0;
    return out;
}

double logit(double p) { return std::log(p / (1.0 - p)); }
double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("roc_auc examples") {
    CHECK(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
    CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc(std::vector<double>(6, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0}) == 0.5);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetric);
}

TEST_CASE("roc_auc equals pair counting and its invariants") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Instance in = random_instance(seed);
        const double auc = roc_auc(in.s, in.y);
        CHECK(auc == testing::pair_count_auc(in.s, in.y));

        std::vector<int> flipped(in.y.size());
        for (std::size_t i = 0; i < in.y.size(); ++i) flipped[i] = 1 - in.y[i];
        CHECK(auc + roc_auc(in.s, flipped) == 1.0);

        std::vector<double> warped(in.s.size());
        for (std::size_t i = 0; i < in.s.size(); ++i) warped[i] = std::exp(3.0 * in.s[i]) - 7.0;
        CHECK(std::abs(roc_auc(warped, in.y) - auc) <= 1e-12);
    }
}

TEST_CASE("pr_auc") {
    CHECK(pr_auc(std::vector<double>{0.2, 0.9}, std::vector<int>{1, 0}) == 0.5);
    CHECK(pr_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK_THROWS_AS(pr_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), UndefinedMetric);
    for (std::uint64_t seed = 100; seed < 150; ++seed) {
        const Instance in = random_instance(seed);
        CHECK(std::abs(pr_auc(in.s, in.y) - testing::threshold_sweep_ap(in.s, in.y)) <= 1e-12);
    }
    Rng rng(3);
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
        s[i] = rng.uniform();
        y[i] = rng.uniform() < 0.3;
    }
    CHECK(std::abs(pr_auc(s, y) - testing::threshold_sweep_ap(s, y)) <= 1e-12);
}

TEST_CASE("curves") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    const auto roc = roc_curve(s, y);
    REQUIRE(roc.size() == 5);
    CHECK(roc.front().x == 0.0);
    CHECK(roc.front().y == 0.0);
    CHECK(roc.back().x == 1.0);
    CHECK(roc.back().y == 1.0);
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i) area += (roc[i].x - roc[i - 1].x) * (roc[i].y + roc[i - 1].y) / 2.0;
    CHECK(area == doctest::Approx(0.75).epsilon(1e-12));
    for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].x >= roc[i - 1].x);
        CHECK(roc[i].y >= roc[i - 1].y);
    }
    const auto pr = pr_curve(s, y);
    CHECK(pr.back().x == 1.0);
}

TEST_CASE("classify_metrics") {
    // TP=2, FP=1, FN=1, TN=6
    const std::vector<double> s{0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
    const std::vector<int> y{1, 1, 0, 1, 0, 0, 0, 0, 0, 0};
    const auto m = classify_metrics(s, y);
    CHECK(m.tp == 2);
    CHECK(m.fp == 1);
    CHECK(m.fn == 1);
    CHECK(m.tn == 6);
    CHECK(m.accuracy == doctest::Approx(0.8));
    CHECK(m.precision == doctest::Approx(2.0 / 3.0));
    CHECK(m.recall == doctest::Approx(2.0 / 3.0));
    CHECK(m.f1 == doctest::Approx(2.0 / 3.0));

    // TP=2, FP=1, FN=2, TN=5: precision 2/3, recall 1/2, f1 4/7
    const std::vector<int> y2{1, 1, 0, 1, 1, 0, 0, 0, 0, 0};
    const auto m2 = classify_metrics(s, y2);
    CHECK(m2.fn == 2);
    CHECK(m2.tn == 5);
    CHECK(m2.precision == doctest::Approx(2.0 / 3.0));
    CHECK(m2.recall == doctest::Approx(0.5));
    CHECK(m2.f1 == doctest::Approx(4.0 / 7.0));
    for (const auto& c : {m, m2}) CHECK(c.f1 == doctest::Approx(2.0 * c.precision * c.recall / (c.precision + c.recall)));

    const auto perfect = classify_metrics(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0});
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    const auto none = classify_metrics(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 0});
    CHECK(none.precision == 0.0);
    CHECK(none.recall == 0.0);
    CHECK(none.f1 == 0.0);
    CHECK(classify_metrics(std::vector<double>{0.5}, std::vector<int>{1}).tp == 1);
}

TEST_CASE("bootstrap_ci") {
    Rng rng(8);
    std::vector<double> s(500);
    std::vector<int> y(500);
    for (std::size_t i = 0; i < s.size(); ++i) {
        y[i] = static_cast<int>(i % 2);
        s[i] = y[i] + 0.35 * rng.normal();
    }
    const MetricFn auc = [](std::span<const double> a, std::span<const int> b) { return roc_auc(a, b); };
    const auto ci = bootstrap_ci(auc, s, y, 1000, 5);
    const double point = roc_auc(s, y);
    CHECK(ci.lo <= point);
    CHECK(point <= ci.hi);
    CHECK(ci.hi - ci.lo < 0.05);
    CHECK(ci.resamples == 1000);
    const auto again = bootstrap_ci(auc, s, y, 1000, 5);
    CHECK(again.lo == ci.lo);
    CHECK(again.hi == ci.hi);
    CHECK(bootstrap_ci(auc, s, y, 1000, 6).lo != ci.lo);

    const MetricFn constant = [](std::span<const double>, std::span<const int>) { return 0.7; };
    const auto flat = bootstrap_ci(constant, s, y, 200, 1);
    CHECK(flat.lo == 0.7);
    CHECK(flat.hi == 0.7);

    CHECK_THROWS_AS(bootstrap_ci(auc, std::span(s).first(10), std::span(y).first(10)), UndefinedMetric);

    // A single positive among 40: most resamples miss it and are skipped.
    std::vector<double> rare_s(40, 0.2);
    std::vector<int> rare_y(40, 0);
    rare_y[0] = 1;
    rare_s[0] = 0.9;
    const auto rare = bootstrap_ci(auc, rare_s, rare_y, 100, 3);
    CHECK(rare.resamples + rare.skipped == 100);
    CHECK(rare.resamples > 0);
    std::vector<int> single(40, 0);
    CHECK_THROWS_AS(bootstrap_ci(auc, rare_s, single, 50, 3), UndefinedMetric);
}

TEST_CASE("calibration_curve") {
    Rng rng(9);
    std::vector<double> s(10000);
    std::vector<int> y(10000);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = rng.uniform();
        y[i] = rng.uniform() < s[i];
    }
    const auto bins = calibration_curve(s, y);
    REQUIRE(bins.size() == 10);
    std::size_t total = 0;
    for (const auto& b : bins) {
        total += b.count;
        CHECK(std::abs(b.mean_pred - b.frac_pos) < 0.05);
        CHECK(b.mean_pred >= b.bin_lo);
        CHECK(b.mean_pred <= b.bin_hi);
    }
    CHECK(total == 10000);

    const auto lumped = calibration_curve(std::vector<double>(5, 0.05), std::vector<int>{1, 0, 0, 0, 1});
    CHECK(lumped[0].count == 5);
    CHECK(lumped[0].bin_lo == 0.0);
    CHECK(lumped[0].bin_hi == doctest::Approx(0.1));
    for (std::size_t k = 1; k < lumped.size(); ++k) {
        CHECK(lumped[k].count == 0);
        CHECK(std::isnan(lumped[k].frac_pos));
        CHECK(std::isnan(lumped[k].mean_pred));
    }
    const auto one = calibration_curve(s, y, 1);
    double prevalence = 0.0;
    for (int v : y) prevalence += v;
    CHECK(one[0].frac_pos == doctest::Approx(prevalence / 10000.0).epsilon(1e-12));
    const auto edge = calibration_curve(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0});
    CHECK(edge.back().count == 1);
    CHECK(edge.front().count == 1);
}

TEST_CASE("platt_recalibrate") {
    Rng rng(10);
    std::vector<double> p(10000), over(10000);
    std::vector<int> y(10000);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = sig(2.0 * rng.normal());
        y[i] = rng.uniform() < p[i];
        over[i] = sig(2.0 * logit(p[i]));
    }
    const PlattScaling calibrated = platt_recalibrate(p, y);
    CHECK(std::abs(calibrated.a - 1.0) < 0.1);
    CHECK(std::abs(calibrated.b) < 0.1);

    const PlattScaling shrink = platt_recalibrate(over, y);
    CHECK(shrink.a == doctest::Approx(0.5).epsilon(0.1));
    const auto fixed = shrink.apply(over);
    CHECK(std::abs(roc_auc(fixed, y) - roc_auc(over, y)) <= 1e-12);
    for (std::size_t i = 1; i < 200; ++i) {
        if (over[i] > over[i - 1]) CHECK(fixed[i] >= fixed[i - 1]);
    }
    CHECK_THROWS_AS(platt_recalibrate(p, std::vector<int>(10000, 1)), FitError);
}

TEST_CASE("evaluate report") {
    Rng rng(11);
    std::vector<double> s(300);
    std::vector<int> y(300);
    for (std::size_t i = 0; i < s.size(); ++i) {
        y[i] = rng.uniform() < 0.35;
        s[i] = sig(1.5 * (y[i] - 0.5) + rng.normal());
    }
    EvalOptions opt;
    opt.n_boot = 200;
    opt.seed = 4;
    const EvalReport r = evaluate(s, y, 5, opt);
    CHECK(r.n == 300);
    CHECK(r.horizon_min == 5);
    CHECK(r.auroc.point == roc_auc(s, y));
    CHECK(r.auprc.point == pr_auc(s, y));
    for (const MetricCI* m : {&r.auroc, &r.auprc, &r.accuracy, &r.precision, &r.recall, &r.f1}) {
        CHECK(m->ci_lo <= m->point);
        CHECK(m->point <= m->ci_hi);
        CHECK(m->ci_lo >= 0.0);
        CHECK(m->ci_hi <= 1.0);
    }
    std::size_t total = 0;
    for (const auto& b : r.calibration) total += b.count;
    CHECK(total == 300);

    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["n"] == 300);
    CHECK(j["auroc"]["point"].get<double>() == r.auroc.point);
    CHECK(r.roc_csv().rfind("fpr,tpr,threshold\n", 0) == 0);
    CHECK(r.pr_csv().rfind("recall,precision,threshold\n", 0) == 0);
    CHECK(r.calibration_csv().find("bin_lo") == 0);
    CHECK(evaluate(s, y, 5, opt).to_json() == r.to_json());
}
