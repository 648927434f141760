#include "safd/signal_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "safd/labeling.hpp"

namespace safd {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

const Channel& WaveformCase::channel(const std::string& name) const {
    auto it = channels.find(name);
    if (it == channels.end()) throw MissingChannel(name);
    return it->second;
}

ChannelMode parse_channel_mode(const std::string& text) {
    if (text == "abp") return ChannelMode::AbpOnly;
    if (text == "multi") return ChannelMode::Multi;
    throw std::invalid_argument("unknown channel mode '" + text + "' (expected abp|multi)");
}

std::string to_string(ChannelMode mode) { return mode == ChannelMode::AbpOnly ? "abp" : "multi"; }

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_number(std::string_view field, std::size_t row) {
    while (!field.empty() && (field.front() == ' ')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
    if (field.empty()) throw FormatError("waveform.csv: missing value on row " + std::to_string(row));
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw FormatError("waveform.csv: bad number '" + std::string(field) + "' on row " + std::to_string(row));
    }
    return v;
}

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <class T>
void put(std::ostream& out, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.write(bytes, sizeof(T));
}

template <class T>
T get(std::istream& in, const fs::path& path) {
    char bytes[sizeof(T)];
    if (!in.read(bytes, sizeof(T))) throw FormatError("truncated segment archive " + path.string());
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

WaveformCase load_case(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    const fs::path csv_path = dir / "waveform.csv";
    if (!fs::exists(manifest_path)) throw FormatError("missing manifest.json in " + dir.string());
    if (!fs::exists(csv_path)) throw FormatError("missing waveform.csv in " + dir.string());

    json manifest;
    try {
        manifest = json::parse(read_text(manifest_path));
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }

    WaveformCase wc;
    try {
        wc.case_id = manifest.at("case_id").get<std::string>();
        const json& rates = manifest.at("sample_rate_hz");
        const json units = manifest.value("units", json::object());
        for (const auto& name : kChannelNames) {
            if (!rates.contains(name)) throw MissingChannel(name);
            Channel ch;
            ch.sample_rate_hz = rates.at(name).get<double>();
            ch.units = units.value(name, std::string{});
            if (!(ch.sample_rate_hz >= 50.0 && ch.sample_rate_hz <= 1000.0)) {
                throw FormatError("sample rate of " + name + " outside [50, 1000] Hz");
            }
            wc.channels.emplace(name, std::move(ch));
        }
        if (manifest.contains("event_truth_s")) {
            wc.event_truth_s = manifest.at("event_truth_s").get<std::vector<double>>();
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    if (wc.channels.at("ABP").units != "mmHg") throw FormatError("ABP units must be mmHg");

    const std::string text = read_text(csv_path);
    std::string_view rest(text);
    auto next_line = [&rest]() -> std::optional<std::string_view> {
        if (rest.empty()) return std::nullopt;
        const std::size_t nl = rest.find('\n');
        std::string_view line = rest.substr(0, nl);
        rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        return line;
    };

    const auto header_line = next_line();
    if (!header_line) throw FormatError("waveform.csv is empty");
    const auto header = split_fields(*header_line);
    if (header.empty() || header[0] != "time_s") throw FormatError("waveform.csv: first column must be time_s");
    std::array<std::size_t, 4> column{};
    for (std::size_t k = 0; k < kChannelNames.size(); ++k) {
        const auto it = std::find(header.begin(), header.end(), kChannelNames[k]);
        if (it == header.end()) throw MissingChannel(kChannelNames[k]);
        column[k] = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<std::vector<double>> data(kChannelNames.size());
    double prev_time = -std::numeric_limits<double>::infinity();
    std::size_t row = 0;
    while (auto line = next_line()) {
        ++row;
        if (line->empty()) continue;
        const auto fields = split_fields(*line);
        if (fields.size() != header.size()) {
            throw FormatError("waveform.csv: row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                              " fields, expected " + std::to_string(header.size()));
        }
        const double t = parse_number(fields[0], row);
        if (!(t > prev_time)) throw FormatError("waveform.csv: time_s not strictly increasing at row " + std::to_string(row));
        prev_time = t;
        for (std::size_t k = 0; k < column.size(); ++k) data[k].push_back(parse_number(fields[column[k]], row));
    }
    for (std::size_t k = 0; k < kChannelNames.size(); ++k) {
        if (data[k].empty()) throw FormatError("waveform.csv: channel " + kChannelNames[k] + " is empty");
        wc.channels.at(kChannelNames[k]).samples = std::move(data[k]);
    }
    return wc;
}

void save_case(const WaveformCase& wc, const fs::path& dir) {
    const Channel& abp = wc.channel("ABP");
    for (const auto& name : kChannelNames) {
        const Channel& ch = wc.channel(name);
        if (ch.sample_rate_hz != abp.sample_rate_hz || ch.samples.size() != abp.samples.size()) {
            throw FormatError("save_case: channels must share one sample rate and length");
        }
    }
    fs::create_directories(dir);

    json manifest;
    manifest["case_id"] = wc.case_id;
    for (const auto& name : kChannelNames) {
        manifest["sample_rate_hz"][name] = wc.channel(name).sample_rate_hz;
        manifest["units"][name] = wc.channel(name).units;
    }
    if (wc.event_truth_s) manifest["event_truth_s"] = *wc.event_truth_s;
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << manifest.dump(2) << '\n';
    }

    std::ofstream out(dir / "waveform.csv", std::ios::binary);
    out << "time_s";
    for (const auto& name : kChannelNames) out << ',' << name;
    out << '\n';
    const double rate = abp.sample_rate_hz;
    std::string line;
    for (std::size_t i = 0; i < abp.samples.size(); ++i) {
        line = format_number(static_cast<double>(i) / rate);
        for (const auto& name : kChannelNames) {
            line += ',';
            line += format_number(wc.channels.at(name).samples[i]);
        }
        line += '\n';
        out << line;
    }
    if (!out) throw FormatError("failed writing " + (dir / "waveform.csv").string());
}

Channel resample(const Channel& channel, double target_hz) {
    if (channel.sample_rate_hz < target_hz) {
        throw UpsamplingUnsupported("resample: source rate " + std::to_string(channel.sample_rate_hz) +
                                    " Hz is below target " + std::to_string(target_hz) + " Hz");
    }
    if (channel.sample_rate_hz == target_hz) return channel;

    const std::size_t n = channel.samples.size();
    Channel out;
    out.sample_rate_hz = target_hz;
    out.units = channel.units;
    if (n == 0) return out;

    const double ratio = channel.sample_rate_hz / target_hz;
    // Small slack so exact multiples (e.g. 500 -> 100 Hz) are not lost to rounding.
    const double duration_samples = static_cast<double>(n - 1) / ratio;
    const std::size_t m = static_cast<std::size_t>(std::floor(duration_samples + 1e-9)) + 1;
    out.samples.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        const double pos = static_cast<double>(k) * ratio;
        std::size_t i = static_cast<std::size_t>(std::floor(pos));
        if (i >= n - 1) {
            out.samples[k] = channel.samples[n - 1];
            continue;
        }
        const double frac = pos - static_cast<double>(i);
        const double a = channel.samples[i];
        const double b = channel.samples[i + 1];
        out.samples[k] = frac == 0.0 ? a : a + frac * (b - a);
    }
    return out;
}

WaveformCase resample_case(const WaveformCase& wc, double target_hz) {
    WaveformCase out;
    out.case_id = wc.case_id;
    out.event_truth_s = wc.event_truth_s;
    for (const auto& [name, ch] : wc.channels) out.channels.emplace(name, resample(ch, target_hz));
    return out;
}

Matrix<float> extract_window(const WaveformCase& wc, ChannelMode mode, std::size_t start, std::size_t length) {
    const int rows = channel_count(mode);
    Matrix<float> data(rows, static_cast<Eigen::Index>(length));
    for (int c = 0; c < rows; ++c) {
        const auto& samples = wc.channel(kChannelNames[static_cast<std::size_t>(c)]).samples;
        if (start + length > samples.size()) throw ShapeError("extract_window: window exceeds channel length");
        for (std::size_t t = 0; t < length; ++t) {
            data(c, static_cast<Eigen::Index>(t)) = static_cast<float>(samples[start + t]);
        }
    }
    return data;
}

std::vector<Segment> segment_case(const WaveformCase& wc, double window_s, double stride_s, ChannelMode mode) {
    if (!(window_s > 0.0) || !(stride_s > 0.0)) throw std::invalid_argument("segment_case: window and stride must be > 0");
    std::size_t n = std::numeric_limits<std::size_t>::max();
    for (int c = 0; c < channel_count(mode); ++c) {
        const Channel& ch = wc.channel(kChannelNames[static_cast<std::size_t>(c)]);
        if (ch.sample_rate_hz != kModelRateHz) throw FormatError("segment_case: case must be resampled to 100 Hz");
        n = std::min(n, ch.samples.size());
    }
    const auto window = static_cast<std::size_t>(std::llround(window_s * kModelRateHz));
    const auto stride = static_cast<std::size_t>(std::llround(stride_s * kModelRateHz));

    std::vector<Segment> out;
    for (std::size_t start = 0; start + window <= n; start += stride) {
        Segment seg;
        seg.data = extract_window(wc, mode, start, window);
        seg.t_start = static_cast<double>(start) / kModelRateHz;
        seg.case_id = wc.case_id;
        out.push_back(std::move(seg));
    }
    return out;
}

Validation validate_segment(const Segment& seg, std::span<const std::size_t> abp_peaks) {
    constexpr std::size_t kMinPeaks = 5;
    constexpr double kMinBpm = 30.0;
    constexpr double kMaxBpm = 180.0;

    if (abp_peaks.size() < kMinPeaks) return {false, "undetectable rhythm"};
    const double span_s = static_cast<double>(abp_peaks.back() - abp_peaks.front()) / kModelRateHz;
    const double bpm = 60.0 * static_cast<double>(abp_peaks.size() - 1) / span_s;
    if (bpm < kMinBpm) return {false, "HR<30"};
    if (bpm > kMaxBpm) return {false, "HR>180"};

    std::vector<double> abp(static_cast<std::size_t>(seg.data.cols()));
    for (Eigen::Index t = 0; t < seg.data.cols(); ++t) abp[static_cast<std::size_t>(t)] = seg.data(0, t);
    const BeatSeries beats = beats_to_map(abp, abp_peaks);
    for (double m : beats.map) {
        if (m < 20.0) return {false, "MAP<20"};
        if (m > 160.0) return {false, "MAP>160"};
    }
    return {true, {}};
}

void write_archive(const fs::path& path, std::span<const Segment> segments) {
    std::uint32_t channels = 0;
    std::uint32_t length = 0;
    if (!segments.empty()) {
        channels = static_cast<std::uint32_t>(segments.front().data.rows());
        length = static_cast<std::uint32_t>(segments.front().data.cols());
    }
    for (const Segment& s : segments) {
        if (s.data.rows() != channels || s.data.cols() != length) throw ShapeError("write_archive: segments differ in shape");
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write("SAFD", 4);
    put<std::uint32_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(segments.size()));
    put<std::uint32_t>(out, channels);
    put<std::uint32_t>(out, length);
    for (const Segment& s : segments) {
        out.write(reinterpret_cast<const char*>(s.data.data()), static_cast<std::streamsize>(sizeof(float) * s.data.size()));
        put<std::uint8_t>(out, static_cast<std::uint8_t>(s.label));
        put<std::uint16_t>(out, s.horizon_min);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(s.case_id.size()));
        out.write(s.case_id.data(), static_cast<std::streamsize>(s.case_id.size()));
        put<double>(out, s.t_start);
    }
    if (!out) throw FormatError("failed writing " + path.string());
}

std::vector<Segment> read_archive(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open segment archive " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "SAFD", 4) != 0) throw FormatError("bad archive magic in " + path.string());
    const auto version = get<std::uint32_t>(in, path);
    if (version != 1) throw FormatError("unsupported archive version " + std::to_string(version));
    const auto n = get<std::uint32_t>(in, path);
    const auto channels = get<std::uint32_t>(in, path);
    const auto length = get<std::uint32_t>(in, path);

    std::vector<Segment> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        Segment s;
        s.data.resize(channels, length);
        if (!in.read(reinterpret_cast<char*>(s.data.data()), static_cast<std::streamsize>(sizeof(float) * s.data.size()))) {
            throw FormatError("truncated segment archive " + path.string());
        }
        const auto label = get<std::uint8_t>(in, path);
        if (label != 0 && label != 1 && label != 255) throw FormatError("bad label byte in " + path.string());
        s.label = static_cast<Label>(label);
        s.horizon_min = get<std::uint16_t>(in, path);
        const auto id_len = get<std::uint32_t>(in, path);
        s.case_id.resize(id_len);
        if (id_len > 0 && !in.read(s.case_id.data(), id_len)) throw FormatError("truncated segment archive " + path.string());
        s.t_start = get<double>(in, path);
        out.push_back(std::move(s));
    }
    return out;
}

void write_archive_info(const fs::path& archive, const ArchiveInfo& info) {
    json j;
    j["split"] = info.split;
    j["horizon_min"] = info.horizon_min;
    j["channels"] = info.channels;
    j["seed"] = info.seed;
    std::ofstream out(fs::path(archive.string() + ".json"), std::ios::binary | std::ios::trunc);
    out << j.dump(2) << '\n';
}

ArchiveInfo read_archive_info(const fs::path& archive) {
    const fs::path sidecar(archive.string() + ".json");
    ArchiveInfo info;
    if (!fs::exists(sidecar)) return info;
    try {
        const json j = json::parse(read_text(sidecar));
        info.split = j.value("split", std::string{});
        info.horizon_min = j.value("horizon_min", 0);
        info.channels = j.value("channels", std::string{});
        info.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw FormatError("archive sidecar: " + std::string(e.what()));
    }
    return info;
}

}  // namespace safd
