#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "safd/signal_io.hpp"

namespace safd {

struct PeakParams {
    double min_height = -std::numeric_limits<double>::infinity();
    double min_prominence = 0.0;
    double min_distance_s = 0.3;
};

/// ABP defaults: 40 mmHg height, 10 mmHg prominence, 0.3 s distance.
PeakParams default_abp_peak_params();

/// Channel-relative defaults for the non-ABP channels, resolved against `x`.
PeakParams default_peak_params(const std::string& channel, std::span<const double> x);

/// Local maxima filtered by height, prominence, then minimum distance.
/// Distance conflicts keep the higher peak; ties keep the earlier index.
std::vector<std::size_t> detect_peaks(std::span<const double> x, const PeakParams& p,
                                      double rate_hz = kModelRateHz);

/// Topographic prominence of a peak (scipy convention: bases stop at the
/// first strictly higher sample on each side).
double peak_prominence(std::span<const double> x, std::size_t peak);

struct BeatSeries {
    std::vector<double> beat_times_s;
    std::vector<double> sbp;
    std::vector<double> dbp;
    std::vector<double> map;

    std::size_t size() const { return map.size(); }
};

inline double mean_arterial_pressure(double sbp, double dbp) { return dbp + (sbp - dbp) / 3.0; }

/// One beat per consecutive peak pair: sbp/dbp are the max/min over
/// [peak_k, peak_k+1), beat time is the cycle start.
BeatSeries beats_to_map(std::span<const double> abp, std::span<const std::size_t> peaks,
                        double rate_hz = kModelRateHz);

enum class EventKind { Hypotension, Nonhypotension, Gray };

std::string to_string(EventKind kind);

struct EventPeriod {
    EventKind kind = EventKind::Gray;
    double start_s = 0.0;
    double end_s = 0.0;

    bool operator==(const EventPeriod&) const = default;
};

inline constexpr double kHypotensionMap = 65.0;
inline constexpr double kNonhypotensionMap = 75.0;
inline constexpr double kMinEventSpan = 60.0;

/// Maximal runs of beats with MAP < 65 (resp. > 75) spanning at least 60 s.
/// Everything else between the first and last beat is reported as gray.
/// Output is sorted by start time.
std::vector<EventPeriod> find_events(const BeatSeries& beats);

struct LabelConfig {
    std::vector<int> horizons{3, 5, 10, 15};
    double window_s = 30.0;
    double stride_s = 30.0;
    ChannelMode mode = ChannelMode::Multi;
    PeakParams abp_peaks = default_abp_peak_params();
    int negatives_per_event = 2;
    int negatives_without_events = 2;
};

/// Peaks, beats and event periods of one resampled case.
struct CaseAnalysis {
    std::vector<std::size_t> abp_peaks;
    BeatSeries beats;
    std::vector<EventPeriod> events;
};

CaseAnalysis analyze_case(const WaveformCase& wc, const PeakParams& abp_params = default_abp_peak_params());

/// Horizon-aligned labeled samples for one case (already at 100 Hz).
std::map<int, std::vector<Segment>> build_dataset(const WaveformCase& wc, const LabelConfig& cfg,
                                                  std::uint64_t seed);

/// Same, reusing a precomputed analysis.
std::map<int, std::vector<Segment>> build_dataset(const WaveformCase& wc, const CaseAnalysis& analysis,
                                                  const LabelConfig& cfg, std::uint64_t seed);

enum class Split { Train, Dev, Test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct DatasetSplit {
    std::vector<Segment> segments;
    Split split = Split::Train;
    int horizon_min = 0;
    std::uint64_t seed = 0;
};

/// Case-level assignment to train/dev/test with the given fractions
/// (test receives the remainder). Deterministic in (case ids, seed).
std::map<std::string, Split> split_cases(std::vector<std::string> case_ids, std::uint64_t seed,
                                         double train_frac = 0.70, double dev_frac = 0.15);

}  // namespace safd
