#include "safd/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "safd/rng.hpp"

namespace safd {

PeakParams default_abp_peak_params() { return PeakParams{40.0, 10.0, 0.3}; }

PeakParams default_peak_params(const std::string& channel, std::span<const double> x) {
    if (channel == "ABP") return default_abp_peak_params();
    if (x.empty()) return PeakParams{};
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    if (channel == "ECG") return PeakParams{0.3 * *hi, 0.3, 0.3};
    return PeakParams{-std::numeric_limits<double>::infinity(), 0.1 * (*hi - *lo), 0.3};
}

namespace {

// Local maxima; a flat top bounded by lower samples on both sides counts
// once, at its middle (rounded down).
std::vector<std::size_t> local_maxima(std::span<const double> x) {
    std::vector<std::size_t> out;
    const std::size_t n = x.size();
    std::size_t i = 1;
    while (i + 1 < n) {
        if (x[i - 1] < x[i]) {
            std::size_t ahead = i + 1;
            while (ahead + 1 < n && x[ahead] == x[i]) ++ahead;
            if (x[ahead] < x[i]) {
                out.push_back((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
            i = ahead;
            continue;
        }
        ++i;
    }
    return out;
}

// Sparse table for O(1) range-minimum queries.
class RangeMin {
public:
    explicit RangeMin(std::span<const double> x) {
        const std::size_t n = x.size();
        std::size_t levels = 1;
        while ((std::size_t{1} << levels) <= n) ++levels;
        table_.assign(levels, std::vector<double>(x.begin(), x.end()));
        for (std::size_t k = 1; k < levels; ++k) {
            const std::size_t half = std::size_t{1} << (k - 1);
            for (std::size_t i = 0; i + (std::size_t{1} << k) <= n; ++i) {
                table_[k][i] = std::min(table_[k - 1][i], table_[k - 1][i + half]);
            }
        }
    }

    /// min over [lo, hi] inclusive.
    double query(std::size_t lo, std::size_t hi) const {
        const std::size_t len = hi - lo + 1;
        std::size_t k = 0;
        while ((std::size_t{2} << k) <= len) ++k;
        return std::min(table_[k][lo], table_[k][hi + 1 - (std::size_t{1} << k)]);
    }

private:
    std::vector<std::vector<double>> table_;
};

}  // namespace

double peak_prominence(std::span<const double> x, std::size_t peak) {
    const double h = x[peak];
    double left_min = h;
    for (std::size_t i = peak; i-- > 0;) {
        if (x[i] > h) break;
        left_min = std::min(left_min, x[i]);
    }
    double right_min = h;
    for (std::size_t i = peak + 1; i < x.size(); ++i) {
        if (x[i] > h) break;
        right_min = std::min(right_min, x[i]);
    }
    return h - std::max(left_min, right_min);
}

std::vector<std::size_t> detect_peaks(std::span<const double> x, const PeakParams& p, double rate_hz) {
    if (!(p.min_distance_s > 0.0)) throw std::invalid_argument("detect_peaks: min_distance_s must be > 0");
    const std::size_t n = x.size();
    if (n < 3) return {};

    std::vector<std::size_t> candidates = local_maxima(x);
    std::erase_if(candidates, [&](std::size_t i) { return x[i] < p.min_height; });
    if (candidates.empty()) return {};

    // Nearest strictly-higher sample on each side via monotone stacks, then
    // the base minima through range-min queries.
    std::vector<std::ptrdiff_t> prev_higher(n, -1);
    std::vector<std::size_t> next_higher(n, n);
    {
        std::vector<std::size_t> stack;
        for (std::size_t i = 0; i < n; ++i) {
            while (!stack.empty() && x[stack.back()] <= x[i]) stack.pop_back();
            prev_higher[i] = stack.empty() ? -1 : static_cast<std::ptrdiff_t>(stack.back());
            stack.push_back(i);
        }
        stack.clear();
        for (std::size_t i = n; i-- > 0;) {
            while (!stack.empty() && x[stack.back()] <= x[i]) stack.pop_back();
            next_higher[i] = stack.empty() ? n : stack.back();
            stack.push_back(i);
        }
    }
    const RangeMin range_min(x);
    std::erase_if(candidates, [&](std::size_t i) {
        const double left = range_min.query(static_cast<std::size_t>(prev_higher[i] + 1), i);
        const double right = range_min.query(i, next_higher[i] - 1);
        return x[i] - std::max(left, right) < p.min_prominence;
    });

    const double min_gap = p.min_distance_s * rate_hz;
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[candidates[a]] > x[candidates[b]]; });
    std::vector<bool> keep(candidates.size(), true);
    for (std::size_t k : order) {
        if (!keep[k]) continue;
        const double at = static_cast<double>(candidates[k]);
        for (std::size_t j = k; j-- > 0;) {
            if (at - static_cast<double>(candidates[j]) >= min_gap) break;
            keep[j] = false;
        }
        for (std::size_t j = k + 1; j < candidates.size(); ++j) {
            if (static_cast<double>(candidates[j]) - at >= min_gap) break;
            keep[j] = false;
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (keep[k]) out.push_back(candidates[k]);
    }
    return out;
}

BeatSeries beats_to_map(std::span<const double> abp, std::span<const std::size_t> peaks, double rate_hz) {
    if (peaks.size() < 2) throw InsufficientBeats("beats_to_map: need at least 2 peaks, got " + std::to_string(peaks.size()));
    BeatSeries beats;
    const std::size_t m = peaks.size() - 1;
    beats.beat_times_s.reserve(m);
    beats.sbp.reserve(m);
    beats.dbp.reserve(m);
    beats.map.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t lo = peaks[k];
        const std::size_t hi = peaks[k + 1];
        if (hi <= lo || hi > abp.size()) throw std::invalid_argument("beats_to_map: peaks must be ascending and in range");
        const auto [mn, mx] = std::minmax_element(abp.begin() + static_cast<std::ptrdiff_t>(lo),
                                                  abp.begin() + static_cast<std::ptrdiff_t>(hi));
        beats.beat_times_s.push_back(static_cast<double>(lo) / rate_hz);
        beats.sbp.push_back(*mx);
        beats.dbp.push_back(*mn);
        beats.map.push_back(mean_arterial_pressure(*mx, *mn));
    }
    return beats;
}

std::string to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Hypotension: return "hypotension";
        case EventKind::Nonhypotension: return "nonhypotension";
        case EventKind::Gray: return "gray";
    }
    return "gray";
}

std::vector<EventPeriod> find_events(const BeatSeries& beats) {
    const std::size_t n = beats.size();
    std::vector<EventPeriod> sustained;
    auto scan = [&](EventKind kind, auto&& qualifies) {
        std::size_t i = 0;
        while (i < n) {
            if (!qualifies(beats.map[i])) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j + 1 < n && qualifies(beats.map[j + 1])) ++j;
            const double start = beats.beat_times_s[i];
            const double end = beats.beat_times_s[j];
            if (end - start >= kMinEventSpan) sustained.push_back({kind, start, end});
            i = j + 1;
        }
    };
    scan(EventKind::Hypotension, [](double m) { return m < kHypotensionMap; });
    scan(EventKind::Nonhypotension, [](double m) { return m > kNonhypotensionMap; });
    std::sort(sustained.begin(), sustained.end(),
              [](const EventPeriod& a, const EventPeriod& b) { return a.start_s < b.start_s; });

    std::vector<EventPeriod> out;
    if (n == 0) return out;
    double cursor = beats.beat_times_s.front();
    for (const EventPeriod& p : sustained) {
        if (p.start_s > cursor) out.push_back({EventKind::Gray, cursor, p.start_s});
        out.push_back(p);
        cursor = p.end_s;
    }
    if (beats.beat_times_s.back() > cursor) out.push_back({EventKind::Gray, cursor, beats.beat_times_s.back()});
    return out;
}

CaseAnalysis analyze_case(const WaveformCase& wc, const PeakParams& abp_params) {
    const Channel& abp = wc.channel("ABP");
    if (abp.sample_rate_hz != kModelRateHz) throw FormatError("analyze_case: case must be resampled to 100 Hz");
    CaseAnalysis a;
    a.abp_peaks = detect_peaks(abp.samples, abp_params);
    if (a.abp_peaks.size() >= 2) {
        a.beats = beats_to_map(abp.samples, a.abp_peaks);
        a.events = find_events(a.beats);
    }
    return a;
}

std::map<int, std::vector<Segment>> build_dataset(const WaveformCase& wc, const LabelConfig& cfg, std::uint64_t seed) {
    return build_dataset(wc, analyze_case(wc, cfg.abp_peaks), cfg, seed);
}

std::map<int, std::vector<Segment>> build_dataset(const WaveformCase& wc, const CaseAnalysis& analysis,
                                                  const LabelConfig& cfg, std::uint64_t seed) {
    std::size_t n = std::numeric_limits<std::size_t>::max();
    for (int c = 0; c < channel_count(cfg.mode); ++c) {
        n = std::min(n, wc.channel(kChannelNames[static_cast<std::size_t>(c)]).samples.size());
    }
    const auto window = static_cast<std::size_t>(std::llround(cfg.window_s * kModelRateHz));
    const auto stride = static_cast<std::size_t>(std::llround(cfg.stride_s * kModelRateHz));
    const auto& peaks = analysis.abp_peaks;

    // Emits the window [start, start + window) if it fits and validates.
    auto try_window = [&](std::ptrdiff_t start, Label label, int horizon) -> std::optional<Segment> {
        if (start < 0 || static_cast<std::size_t>(start) + window > n) return std::nullopt;
        const auto lo = static_cast<std::size_t>(start);
        Segment seg;
        seg.data = extract_window(wc, cfg.mode, lo, window);
        seg.t_start = static_cast<double>(lo) / kModelRateHz;
        seg.case_id = wc.case_id;
        seg.label = label;
        seg.horizon_min = static_cast<std::uint16_t>(horizon);
        const auto first = std::lower_bound(peaks.begin(), peaks.end(), lo);
        const auto last = std::lower_bound(first, peaks.end(), lo + window);
        std::vector<std::size_t> local;
        local.reserve(static_cast<std::size_t>(last - first));
        for (auto it = first; it != last; ++it) local.push_back(*it - lo);
        if (!validate_segment(seg, local).accepted) return std::nullopt;
        return seg;
    };

    std::map<int, std::vector<Segment>> out;
    for (int h : cfg.horizons) {
        std::vector<Segment>& bucket = out[h];
        const double lead_s = 60.0 * h;

        for (const EventPeriod& p : analysis.events) {
            if (p.kind != EventKind::Hypotension) continue;
            const double end_s = p.start_s - lead_s;
            const auto start = static_cast<std::ptrdiff_t>(std::llround((end_s - cfg.window_s) * kModelRateHz));
            if (auto seg = try_window(start, Label::Positive, h)) bucket.push_back(std::move(*seg));
        }
        const std::size_t positives = bucket.size();

        std::vector<std::size_t> candidates;
        for (std::size_t start = 0; start + window <= n; start += stride) {
            const double target = static_cast<double>(start + window) / kModelRateHz + lead_s;
            const bool inside = std::any_of(analysis.events.begin(), analysis.events.end(), [&](const EventPeriod& p) {
                return p.kind == EventKind::Nonhypotension && p.start_s < target && target < p.end_s;
            });
            if (inside) candidates.push_back(start);
        }

        const std::size_t quota = positives > 0
                                      ? static_cast<std::size_t>(cfg.negatives_per_event) * positives
                                      : static_cast<std::size_t>(cfg.negatives_without_events);
        Rng rng(derive_seed(seed, fnv1a64(wc.case_id), static_cast<std::uint64_t>(h)));
        std::size_t taken = 0;
        // Lazy Fisher-Yates: draw without replacement until the quota is met.
        for (std::size_t k = 0; k < candidates.size() && taken < quota; ++k) {
            const std::size_t pick = k + static_cast<std::size_t>(rng.below(candidates.size() - k));
            std::swap(candidates[k], candidates[pick]);
            if (auto seg = try_window(static_cast<std::ptrdiff_t>(candidates[k]), Label::Negative, h)) {
                bucket.push_back(std::move(*seg));
                ++taken;
            }
        }
    }
    return out;
}

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Dev: return "dev";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "dev") return Split::Dev;
    if (text == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + text + "'");
}

std::map<std::string, Split> split_cases(std::vector<std::string> case_ids, std::uint64_t seed, double train_frac,
                                         double dev_frac) {
    std::sort(case_ids.begin(), case_ids.end());
    case_ids.erase(std::unique(case_ids.begin(), case_ids.end()), case_ids.end());
    Rng rng(derive_seed(seed, 0x5B11Du));
    for (std::size_t k = case_ids.size(); k > 1; --k) {
        std::swap(case_ids[k - 1], case_ids[static_cast<std::size_t>(rng.below(k))]);
    }
    const std::size_t n = case_ids.size();
    auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    auto n_dev = static_cast<std::size_t>(std::llround(dev_frac * static_cast<double>(n)));
    if (n >= 3) {
        n_dev = std::max<std::size_t>(n_dev, 1);
        n_train = std::min(n_train, n - n_dev - 1);
    }
    n_train = std::min(n_train, n);
    n_dev = std::min(n_dev, n - n_train);

    std::map<std::string, Split> out;
    for (std::size_t i = 0; i < n; ++i) {
        out[case_ids[i]] = i < n_train ? Split::Train : (i < n_train + n_dev ? Split::Dev : Split::Test);
    }
    return out;
}

}  // namespace safd
