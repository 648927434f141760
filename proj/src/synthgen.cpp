#include "safd/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "safd/labeling.hpp"
#include "safd/rng.hpp"

namespace safd {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPrecursorPpFactor = 0.6;
constexpr double kHrDriftGain = 0.2;
constexpr double kTransitionS = 10.0;
constexpr double kRecoveryGapS = 60.0;

double raw_pulse(double phase) {
    return std::cos(kTwoPi * phase) + 0.35 * std::cos(2.0 * kTwoPi * phase - 0.9) +
           0.1 * std::cos(3.0 * kTwoPi * phase - 1.8);
}

// Pulse shape normalized to max 2/3 and min -1/3, so that
// map + pp * shape has sbp = map + 2pp/3 and dbp = map - pp/3.
struct PulseShape {
    double lo = 0.0;
    double hi = 0.0;
    double peak_phase = 0.0;

    PulseShape() {
        constexpr int kGrid = 1 << 14;
        lo = hi = raw_pulse(0.0);
        for (int i = 1; i < kGrid; ++i) {
            const double ph = static_cast<double>(i) / kGrid;
            const double v = raw_pulse(ph);
            lo = std::min(lo, v);
            if (v > hi) {
                hi = v;
                peak_phase = ph;
            }
        }
    }

    double operator()(double phase) const { return (raw_pulse(phase) - lo) / (hi - lo) - 1.0 / 3.0; }
};

const PulseShape& pulse_shape() {
    static const PulseShape shape;
    return shape;
}

// 0 before a, 1 after b, linear in between.
double ramp(double t, double a, double b) {
    if (t <= a) return 0.0;
    if (t >= b) return 1.0;
    return (t - a) / (b - a);
}

// Envelope that rises over [a, a + w], stays 1, and falls over [b, b + w].
double window_envelope(double t, double a, double b, double w) { return ramp(t, a, a + w) * (1.0 - ramp(t, b, b + w)); }

double ecg_wave(double phase, double hr_bpm) {
    double d = phase - std::floor(phase);
    if (d > 0.5) d -= 1.0;
    const double dt = d * 60.0 / hr_bpm;
    auto g = [](double x, double mu, double s) { return std::exp(-(x - mu) * (x - mu) / (2.0 * s * s)); };
    return 1.0 * g(dt, 0.0, 0.012) - 0.15 * g(dt, -0.03, 0.01) - 0.1 * g(dt, 0.03, 0.01) + 0.3 * g(dt, 0.28, 0.05);
}

}  // namespace

std::string to_string(PrecursorKind kind) {
    switch (kind) {
        case PrecursorKind::PpDecay: return "pp_decay";
        case PrecursorKind::HrDrift: return "hr_drift";
        case PrecursorKind::SpectralTone: return "spectral_tone";
    }
    return "pp_decay";
}

PrecursorKind parse_precursor_kind(const std::string& text) {
    if (text == "pp_decay") return PrecursorKind::PpDecay;
    if (text == "hr_drift") return PrecursorKind::HrDrift;
    if (text == "spectral_tone") return PrecursorKind::SpectralTone;
    throw std::invalid_argument("unknown precursor kind '" + text + "'");
}

void SynthParams::validate() const {
    if (!(duration_s >= 120.0)) throw std::invalid_argument("synth: duration_s must be >= 120");
    if (!(base_map_mmhg > 75.0)) throw std::invalid_argument("synth: base_map_mmhg must be > 75");
    if (!(precursor_lead_s >= 60.0)) throw std::invalid_argument("synth: precursor_lead_s must be >= 60");
    if (!(precursor_duration_s >= 0.0)) throw std::invalid_argument("synth: precursor_duration_s must be >= 0");
    if (!(hr_bpm > 0.0)) throw std::invalid_argument("synth: hr_bpm must be > 0");
    if (!(pulse_pressure_mmhg > 0.0)) throw std::invalid_argument("synth: pulse_pressure_mmhg must be > 0");
    if (n_events < 0) throw std::invalid_argument("synth: n_events must be >= 0");
    if (!(sample_rate_hz >= 50.0 && sample_rate_hz <= 1000.0)) throw std::invalid_argument("synth: sample rate outside [50, 1000]");
    for (const auto& [name, sigma] : noise_sigma) {
        if (!(sigma >= 0.0)) throw std::invalid_argument("synth: noise sigma for " + name + " must be >= 0");
    }
}

SynthCase gen_case_detailed(const SynthParams& p, const std::string& case_id) {
    p.validate();
    Rng rng(p.seed);

    // Event schedule: each event owns a block [onset - lead, recovery + gap].
    // Blocks are laid out in order with uniformly drawn slack between them,
    // so overlapping schedules cannot occur.
    std::vector<SynthEvent> events(static_cast<std::size_t>(p.n_events));
    std::vector<double> block(events.size());
    double total = 0.0;
    for (std::size_t k = 0; k < events.size(); ++k) {
        SynthEvent& e = events[k];
        e.nadir_mmhg = rng.uniform(55.0, 60.0);
        e.hold_s = rng.uniform(90.0, 180.0);
        const double pre = kEventRampS * (p.base_map_mmhg - kHypotensionMap) / (p.base_map_mmhg - e.nadir_mmhg);
        const double after_onset = (kEventRampS - pre) + e.hold_s + kEventRampS;
        block[k] = p.precursor_lead_s + after_onset + kRecoveryGapS;
        total += block[k];
    }
    const double slack = p.duration_s - total;
    if (slack < 0.0) {
        throw ScheduleError("synth: " + std::to_string(p.n_events) + " events need " + std::to_string(total) +
                            " s but the case lasts " + std::to_string(p.duration_s) + " s");
    }
    std::vector<double> offsets(events.size());
    for (double& u : offsets) u = rng.uniform(0.0, slack);
    std::sort(offsets.begin(), offsets.end());
    double cursor = 0.0;
    for (std::size_t k = 0; k < events.size(); ++k) {
        SynthEvent& e = events[k];
        const double start = offsets[k] + cursor;
        cursor += block[k];
        e.onset_s = start + p.precursor_lead_s;
        const double pre = kEventRampS * (p.base_map_mmhg - kHypotensionMap) / (p.base_map_mmhg - e.nadir_mmhg);
        e.ramp_start_s = e.onset_s - pre;
        e.recovery_end_s = e.ramp_start_s + 2.0 * kEventRampS + e.hold_s;
    }
    const double tone_phase = rng.uniform(0.0, kTwoPi);
    const double resp_phase = rng.uniform(0.0, kTwoPi);

    const auto n = static_cast<std::size_t>(std::llround(p.duration_s * p.sample_rate_hz)) + 1;
    const double dt = 1.0 / p.sample_rate_hz;
    const PulseShape& shape = pulse_shape();

    std::vector<double> abp(n), ecg(n), ppg(n), co2(n);
    double phase = rng.uniform(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;

        double map = p.base_map_mmhg;
        double pp_factor = 1.0;
        double hr_factor = 1.0;
        double tone_env = 0.0;
        for (const SynthEvent& e : events) {
            const double drop = p.base_map_mmhg - e.nadir_mmhg;
            const double down = ramp(t, e.ramp_start_s, e.ramp_start_s + kEventRampS);
            const double up = ramp(t, e.recovery_end_s - kEventRampS, e.recovery_end_s);
            map -= drop * (down - up);

            const double lead_start = e.onset_s - p.precursor_lead_s;
            auto until = [&](double natural_end) {
                return p.precursor_duration_s > 0.0 ? std::min(natural_end, lead_start + p.precursor_duration_s) : natural_end;
            };
            switch (p.precursor_kind) {
                case PrecursorKind::PpDecay:
                    pp_factor -= (1.0 - kPrecursorPpFactor) * window_envelope(t, lead_start, until(e.recovery_end_s), kTransitionS);
                    break;
                case PrecursorKind::HrDrift: {
                    const double end = until(e.recovery_end_s);
                    const double rise = ramp(t, lead_start, until(e.onset_s));
                    const double fall = ramp(t, end, end + kTransitionS);
                    hr_factor += kHrDriftGain * rise * (1.0 - fall);
                    break;
                }
                case PrecursorKind::SpectralTone:
                    tone_env += window_envelope(t, lead_start, until(e.onset_s), 1.0);
                    break;
            }
        }

        const double hr = p.hr_bpm * hr_factor;
        if (i > 0) phase += hr / 60.0 * dt;
        const double pp = p.pulse_pressure_mmhg * pp_factor;
        const double tone = tone_env * std::sin(kTwoPi * p.tone_hz * t + tone_phase);

        abp[i] = map + pp * shape(phase) + p.tone_amplitude_mmhg * tone;
        ecg[i] = ecg_wave(phase - shape.peak_phase + 0.85, hr);
        ppg[i] = 1.0 + pp_factor * (shape(phase - 0.15) + p.tone_amplitude_mmhg / p.pulse_pressure_mmhg * tone);
        co2[i] = 38.0 * (0.5 + 0.5 * std::tanh(4.0 * std::sin(kTwoPi * p.respiratory_rate_bpm / 60.0 * t + resp_phase)));
    }

    auto add_noise = [&](std::vector<double>& x, const std::string& name) {
        const auto it = p.noise_sigma.find(name);
        const double sigma = it == p.noise_sigma.end() ? 0.0 : it->second;
        if (sigma == 0.0) return;
        for (double& v : x) v += sigma * rng.normal();
    };
    add_noise(abp, "ABP");
    add_noise(ecg, "ECG");
    add_noise(ppg, "PPG");
    add_noise(co2, "CO2");

    SynthCase out;
    out.events = events;
    WaveformCase& wc = out.waveform;
    wc.case_id = case_id;
    wc.channels["ABP"] = Channel{p.sample_rate_hz, std::move(abp), "mmHg"};
    wc.channels["ECG"] = Channel{p.sample_rate_hz, std::move(ecg), "mV"};
    wc.channels["PPG"] = Channel{p.sample_rate_hz, std::move(ppg), "a.u."};
    wc.channels["CO2"] = Channel{p.sample_rate_hz, std::move(co2), "mmHg"};
    std::vector<double> truth;
    for (const SynthEvent& e : events) truth.push_back(e.onset_s);
    wc.event_truth_s = std::move(truth);
    return out;
}

WaveformCase gen_case(const SynthParams& p, const std::string& case_id) { return gen_case_detailed(p, case_id).waveform; }

WaveformCase inject_noise(const WaveformCase& wc, double extra_sigma, std::uint64_t seed,
                          const std::vector<std::string>& channels) {
    if (!(extra_sigma >= 0.0)) throw std::invalid_argument("inject_noise: extra_sigma must be >= 0");
    WaveformCase out = wc;
    if (extra_sigma == 0.0) return out;
    Rng rng(seed);
    for (auto& [name, ch] : out.channels) {
        if (!channels.empty() && std::find(channels.begin(), channels.end(), name) == channels.end()) continue;
        for (double& v : ch.samples) v += extra_sigma * rng.normal();
    }
    return out;
}

}  // namespace safd
