#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "safd/signal_io.hpp"

namespace safd {

enum class PrecursorKind { PpDecay, HrDrift, SpectralTone };

std::string to_string(PrecursorKind kind);
PrecursorKind parse_precursor_kind(const std::string& text);

struct SynthParams {
    double duration_s = 1800.0;
    double hr_bpm = 75.0;
    double base_map_mmhg = 90.0;
    double pulse_pressure_mmhg = 40.0;
    int n_events = 2;
    double precursor_lead_s = 360.0;
    double precursor_duration_s = 0.0;  // > 0 ends the signature this long after it starts
    PrecursorKind precursor_kind = PrecursorKind::PpDecay;
    std::map<std::string, double> noise_sigma{{"ABP", 0.5}, {"ECG", 0.02}, {"PPG", 0.01}, {"CO2", 0.3}};
    std::uint64_t seed = 0;
    double sample_rate_hz = kModelRateHz;
    double tone_hz = 8.0;
    double tone_amplitude_mmhg = 2.0;  // on ABP; PPG receives the same fraction of its pulse amplitude
    double respiratory_rate_bpm = 12.0;

    void validate() const;
};

/// Ground truth of one scheduled hypotension event.
struct SynthEvent {
    double onset_s = 0.0;       // MAP crosses 65 mmHg on the way down
    double ramp_start_s = 0.0;  // MAP leaves baseline
    double nadir_mmhg = 0.0;
    double hold_s = 0.0;        // time spent at the nadir
    double recovery_end_s = 0.0;
};

inline constexpr double kEventRampS = 30.0;

struct SynthCase {
    WaveformCase waveform;
    std::vector<SynthEvent> events;
};

/// Seeded 4-channel case with scheduled hypotension events and precursors.
SynthCase gen_case_detailed(const SynthParams& p, const std::string& case_id = "synth");

WaveformCase gen_case(const SynthParams& p, const std::string& case_id = "synth");

/// Adds seeded Gaussian noise of `extra_sigma` to the named channels (all
/// channels when `channels` is empty). extra_sigma == 0 returns the input.
WaveformCase inject_noise(const WaveformCase& wc, double extra_sigma, std::uint64_t seed,
                          const std::vector<std::string>& channels = {});

}  // namespace safd
