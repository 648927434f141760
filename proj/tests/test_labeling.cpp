#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "helpers.hpp"
#include "oracles.hpp"
#include "safd/errors.hpp"
#include "safd/labeling.hpp"
#include "safd/synthgen.hpp"

using namespace safd;

namespace {

BeatSeries beats_from_map(const std::vector<double>& map, double spacing_s = 1.0) {
    BeatSeries b;
    for (std::size_t i = 0; i < map.size(); ++i) {
        b.beat_times_s.push_back(static_cast<double>(i) * spacing_s);
        b.map.push_back(map[i]);
        b.sbp.push_back(map[i] + 20.0);
        b.dbp.push_back(map[i] - 10.0);
    }
    return b;
}

std::vector<EventPeriod> of_kind(const std::vector<EventPeriod>& all, EventKind kind) {
    std::vector<EventPeriod> out;
    for (const auto& p : all) {
        if (p.kind == kind) out.push_back(p);
    }
    return out;
}

}  // namespace

TEST_CASE("detect_peaks on a 1.25 Hz sine") {
    std::vector<double> x(3000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * std::numbers::pi * 1.25 * static_cast<double>(i) / 100.0);
    const auto peaks = detect_peaks(x, PeakParams{0.0, 0.5, 0.3});
    // Maxima at t = 0.2 + 0.8 k for t < 30 s.
    CHECK(peaks.size() == 38);
    for (std::size_t k = 0; k < peaks.size(); ++k) CHECK(peaks[k] == 20 + 80 * k);
}

TEST_CASE("detect_peaks edge cases") {
    std::vector<double> ramp(500);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
    CHECK(detect_peaks(ramp, PeakParams{}).empty());

    std::vector<double> twin(200, 0.0);
    twin[50] = 1.0;
    twin[60] = 1.0;
    const auto kept = detect_peaks(twin, PeakParams{-1.0, 0.0, 0.3});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0] == 50);

    twin[60] = 1.5;
    CHECK(detect_peaks(twin, PeakParams{-1.0, 0.0, 0.3}) == std::vector<std::size_t>{60});
    CHECK(detect_peaks(twin, PeakParams{1.2, 0.0, 0.05}) == std::vector<std::size_t>{60});
    CHECK(detect_peaks(twin, PeakParams{-1.0, 0.0, 0.05}) == std::vector<std::size_t>{50, 60});
    CHECK(detect_peaks(std::vector<double>{1.0, 2.0}, PeakParams{}).empty());
}

TEST_CASE("detect_peaks matches a direct filter on random signals") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(400);
        for (double& v : x) v = rng.normal();
        const PeakParams p{-0.5, 0.8, 0.1};
        const auto got = detect_peaks(x, p);
        // Oracle: candidates by height and prominence, then greedy by height
        // (earlier index on ties), rejecting anything within 10 samples.
        std::vector<std::size_t> cand;
        for (std::size_t i = 1; i + 1 < x.size(); ++i) {
            if (x[i] > x[i - 1] && x[i] > x[i + 1] && x[i] >= p.min_height) {
                double left = x[i], right = x[i];
                for (std::size_t k = i; k-- > 0 && x[k] <= x[i];) left = std::min(left, x[k]);
                for (std::size_t k = i + 1; k < x.size() && x[k] <= x[i]; ++k) right = std::min(right, x[k]);
                if (x[i] - std::max(left, right) >= p.min_prominence) cand.push_back(i);
            }
        }
        std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
        std::set<std::size_t> kept;
        for (std::size_t c : cand) {
            bool clash = false;
            for (std::size_t k : kept) clash = clash || (c > k ? c - k : k - c) < 10;
            if (!clash) kept.insert(c);
        }
        CHECK(got == std::vector<std::size_t>(kept.begin(), kept.end()));
    }
}

TEST_CASE("beats_to_map") {
    const std::vector<double> abp{80, 100, 120, 100, 80, 90, 120, 85, 80};
    const std::vector<std::size_t> peaks{2, 6, 8};
    const BeatSeries b = beats_to_map(abp, peaks);
    REQUIRE(b.size() == 2);
    CHECK(b.sbp[0] == 120.0);
    CHECK(b.dbp[0] == 80.0);
    CHECK(b.map[0] == doctest::Approx(93.3333333333).epsilon(1e-10));
    CHECK(b.beat_times_s[0] == doctest::Approx(0.02));
    CHECK(b.beat_times_s[1] == doctest::Approx(0.06));

    const std::vector<double> flat(100, 90.0);
    const std::vector<std::size_t> degenerate{10, 40, 70};
    const BeatSeries f = beats_to_map(flat, degenerate);
    for (std::size_t k = 0; k < f.size(); ++k) {
        CHECK(f.sbp[k] == 90.0);
        CHECK(f.dbp[k] == 90.0);
        CHECK(f.map[k] == 90.0);
    }
    CHECK_THROWS_AS(beats_to_map(flat, std::vector<std::size_t>{5}), InsufficientBeats);
}

TEST_CASE("beats_to_map recovers generator pressures") {
    SynthParams p;
    p.n_events = 0;
    p.duration_s = 300.0;
    p.noise_sigma = {};
    const WaveformCase wc = gen_case(p);
    const CaseAnalysis a = analyze_case(wc);
    REQUIRE(a.beats.size() > 300);
    for (std::size_t k = 0; k < a.beats.size(); ++k) {
        CHECK(a.beats.sbp[k] == doctest::Approx(p.base_map_mmhg + 2.0 * p.pulse_pressure_mmhg / 3.0).epsilon(0.005));
        CHECK(a.beats.dbp[k] == doctest::Approx(p.base_map_mmhg - p.pulse_pressure_mmhg / 3.0).epsilon(0.005));
        CHECK(std::abs(a.beats.map[k] - p.base_map_mmhg) < 0.5);
        CHECK(a.beats.dbp[k] <= a.beats.map[k]);
        CHECK(a.beats.map[k] <= a.beats.sbp[k]);
    }
    REQUIRE(a.events.size() == 1);
    CHECK(a.events[0].kind == EventKind::Nonhypotension);
}

TEST_CASE("find_events examples") {
    SUBCASE("MAP 60 for 90 s") {
        const auto ev = find_events(beats_from_map(std::vector<double>(91, 60.0)));
        REQUIRE(ev.size() == 1);
        CHECK(ev[0] == EventPeriod{EventKind::Hypotension, 0.0, 90.0});
    }
    SUBCASE("MAP 70 for 10 minutes is all gray") {
        const auto ev = find_events(beats_from_map(std::vector<double>(601, 70.0)));
        REQUIRE(ev.size() == 1);
        CHECK(ev[0] == EventPeriod{EventKind::Gray, 0.0, 600.0});
    }
    SUBCASE("50 s below 65 is not an event") {
        std::vector<double> map(51, 60.0);
        map.resize(200, 80.0);
        const auto ev = find_events(beats_from_map(map));
        CHECK(of_kind(ev, EventKind::Hypotension).empty());
        REQUIRE(of_kind(ev, EventKind::Nonhypotension).size() == 1);
        CHECK(of_kind(ev, EventKind::Nonhypotension)[0] == EventPeriod{EventKind::Nonhypotension, 51.0, 199.0});
    }
    SUBCASE("boundaries are exclusive") {
        CHECK(of_kind(find_events(beats_from_map(std::vector<double>(100, 65.0))), EventKind::Hypotension).empty());
        CHECK(of_kind(find_events(beats_from_map(std::vector<double>(100, 75.0))), EventKind::Nonhypotension).empty());
    }
    CHECK(find_events(BeatSeries{}).empty());
}

TEST_CASE("find_events agrees with the brute-force checker on random walks") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> map(300 + rng.below(300));
        double m = rng.uniform(55.0, 90.0);
        for (double& v : map) {
            m = std::clamp(m + rng.normal() * 2.0, 40.0, 110.0);
            v = m;
        }
        const BeatSeries b = beats_from_map(map, rng.uniform(0.4, 1.2));
        const auto got = find_events(b);
        CHECK(got == testing::brute_force_events(b));

        // Partition of [first beat, last beat], contiguous and ordered.
        REQUIRE_FALSE(got.empty());
        CHECK(got.front().start_s == b.beat_times_s.front());
        CHECK(got.back().end_s == b.beat_times_s.back());
        for (std::size_t k = 1; k < got.size(); ++k) CHECK(got[k].start_s == got[k - 1].end_s);
        for (const auto& p : got) {
            if (p.kind != EventKind::Gray) CHECK(p.end_s - p.start_s >= 60.0);
        }
    }
}

TEST_CASE("build_dataset anchors positives h minutes before onset") {
    SynthParams p;
    p.duration_s = 1800.0;
    p.n_events = 1;
    p.seed = 3;
    p.precursor_lead_s = 1000.0;  // onset late enough for every horizon
    const SynthCase sc = gen_case_detailed(p, "anchor");
    const CaseAnalysis a = analyze_case(sc.waveform);
    const auto hypo = of_kind(a.events, EventKind::Hypotension);
    REQUIRE(hypo.size() == 1);
    CHECK(std::abs(hypo[0].start_s - sc.events[0].onset_s) < 5.0);

    LabelConfig cfg;
    const auto data = build_dataset(sc.waveform, a, cfg, 1);
    for (int h : cfg.horizons) {
        const auto& segs = data.at(h);
        std::vector<Segment> pos;
        for (const auto& s : segs) {
            if (s.label == Label::Positive) pos.push_back(s);
        }
        REQUIRE(pos.size() == 1);
        CHECK(pos[0].t_start == doctest::Approx(hypo[0].start_s - 60.0 * h - 30.0).epsilon(1e-9));
        CHECK(pos[0].data.cols() == 3000);
        CHECK(pos[0].data.rows() == 4);
        CHECK(segs.size() <= 3);
    }
    CHECK(testing::check_labels_against_truth(p, sc, data, cfg.window_s).empty());
}

TEST_CASE("build_dataset on a case without events caps negatives") {
    SynthParams p;
    p.duration_s = 600.0;
    p.n_events = 0;
    const WaveformCase wc = gen_case(p, "calm");
    const auto data = build_dataset(wc, LabelConfig{}, 5);
    for (const auto& [h, segs] : data) {
        // Targets beyond the recording are never emitted.
        CHECK(segs.size() == (h <= 5 ? 2u : 0u));
        for (const auto& s : segs) CHECK(s.label == Label::Negative);
    }
}

TEST_CASE("build_dataset labels match generator truth and are deterministic") {
    LabelConfig cfg;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SynthParams p;
        p.seed = derive_seed(900, seed);
        p.n_events = static_cast<int>(seed % 4);
        p.precursor_kind = static_cast<PrecursorKind>(seed % 3);
        const SynthCase sc = gen_case_detailed(p, "case_" + std::to_string(seed));
        const auto data = build_dataset(sc.waveform, cfg, seed);
        INFO("seed " << seed);
        CHECK(testing::check_labels_against_truth(p, sc, data, cfg.window_s) == "");
        const auto again = build_dataset(sc.waveform, cfg, seed);
        for (const auto& [h, segs] : data) {
            REQUIRE(again.at(h).size() == segs.size());
            for (std::size_t k = 0; k < segs.size(); ++k) {
                CHECK(again.at(h)[k].data == segs[k].data);
                CHECK(again.at(h)[k].t_start == segs[k].t_start);
            }
        }
    }
}

TEST_CASE("split_cases") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("c" + std::to_string(i));
    const auto a = split_cases(ids, 7);
    std::map<Split, int> counts;
    for (const auto& [id, s] : a) ++counts[s];
    CHECK(counts[Split::Train] == 70);
    CHECK(counts[Split::Dev] == 15);
    CHECK(counts[Split::Test] == 15);

    std::vector<std::string> shuffled(ids.rbegin(), ids.rend());
    CHECK(split_cases(shuffled, 7) == a);
    CHECK(split_cases(ids, 8) != a);

    const auto small = split_cases({"a", "b", "c"}, 1);
    std::set<Split> used;
    for (const auto& [id, s] : small) used.insert(s);
    CHECK(used.size() == 3);
    CHECK(parse_split("dev") == Split::Dev);
    CHECK_THROWS_AS(parse_split("holdout"), std::invalid_argument);
}
