#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safd/numerics.hpp"

namespace safd {

inline constexpr double kModelRateHz = 100.0;
inline const std::array<std::string, 4> kChannelNames{"ABP", "ECG", "PPG", "CO2"};

struct Channel {
    double sample_rate_hz = kModelRateHz;
    std::vector<double> samples;
    std::string units;
};

struct WaveformCase {
    std::string case_id;
    std::map<std::string, Channel> channels;
    std::optional<std::vector<double>> event_truth_s;

    const Channel& channel(const std::string& name) const;
};

enum class Label : std::uint8_t { Negative = 0, Positive = 1, Unlabeled = 255 };

enum class ChannelMode { AbpOnly, Multi };

ChannelMode parse_channel_mode(const std::string& text);
std::string to_string(ChannelMode mode);
inline int channel_count(ChannelMode mode) { return mode == ChannelMode::AbpOnly ? 1 : 4; }

/// One model input. Row 0 is always ABP.
struct Segment {
    Matrix<float> data;
    double t_start = 0.0;
    std::string case_id;
    Label label = Label::Unlabeled;
    std::uint16_t horizon_min = 0;
    std::optional<std::string> rejected_reason;
};

// --- case directories ------------------------------------------------------

/// Reads `manifest.json` + `waveform.csv` from a case directory.
WaveformCase load_case(const std::filesystem::path& dir);

/// Writes a case directory. All channels must share one rate and length.
void save_case(const WaveformCase& wc, const std::filesystem::path& dir);

/// Linear interpolation onto a uniform grid; output length floor(duration * target) + 1.
Channel resample(const Channel& channel, double target_hz = kModelRateHz);

WaveformCase resample_case(const WaveformCase& wc, double target_hz = kModelRateHz);

/// Extracts rows [start, start + length) of the mode's channels as a float matrix.
Matrix<float> extract_window(const WaveformCase& wc, ChannelMode mode, std::size_t start, std::size_t length);

/// Non-overlapping (by default) aligned windows; trailing partial window dropped.
std::vector<Segment> segment_case(const WaveformCase& wc, double window_s = 30.0, double stride_s = 30.0,
                                  ChannelMode mode = ChannelMode::Multi);

struct Validation {
    bool accepted = true;
    std::string reason;
};

/// Heart-rate band, peak count and per-beat MAP bounds on the ABP row.
/// `abp_peaks` are indices into the segment.
Validation validate_segment(const Segment& seg, std::span<const std::size_t> abp_peaks);

// --- segment archive -------------------------------------------------------

struct ArchiveInfo {
    std::string split;  // train | dev | test | "" (untagged)
    int horizon_min = 0;
    std::string channels;
    std::uint64_t seed = 0;
};

void write_archive(const std::filesystem::path& path, std::span<const Segment> segments);
std::vector<Segment> read_archive(const std::filesystem::path& path);

/// Split tags live in a JSON sidecar `<archive>.json` so the binary layout stays fixed.
void write_archive_info(const std::filesystem::path& archive, const ArchiveInfo& info);
ArchiveInfo read_archive_info(const std::filesystem::path& archive);

}  // namespace safd
