#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "helpers.hpp"
#include "safd/errors.hpp"
#include "safd/labeling.hpp"
#include "safd/signal_io.hpp"
#include "safd/synthgen.hpp"

using namespace safd;
namespace fs = std::filesystem;

namespace {

WaveformCase constant_case(double seconds, double rate = 100.0) {
    WaveformCase wc;
    wc.case_id = "const";
    const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
    for (const std::string& name : kChannelNames) {
        wc.channels[name] = Channel{rate, std::vector<double>(n, 1.0), name == "ABP" || name == "CO2" ? "mmHg" : "a.u."};
    }
    return wc;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("save_case and load_case round trip") {
    SynthParams p;
    p.duration_s = 200.0;
    p.n_events = 0;
    p.seed = 4;
    const WaveformCase wc = gen_case(p, "rt");
    const fs::path dir = testing::temp_dir("io_rt");
    save_case(wc, dir / "rt");
    const WaveformCase back = load_case(dir / "rt");
    CHECK(back.case_id == "rt");
    CHECK(back.channels.size() == 4);
    for (const std::string& name : kChannelNames) {
        CHECK(back.channel(name).samples == wc.channel(name).samples);
        CHECK(back.channel(name).sample_rate_hz == 100.0);
    }
    REQUIRE(back.event_truth_s.has_value());
    CHECK(back.event_truth_s->empty());
}

TEST_CASE("load_case row count at 500 Hz") {
    const fs::path dir = testing::temp_dir("io_500");
    write_file(dir / "manifest.json",
               R"({"case_id":"c500","sample_rate_hz":{"ABP":500,"ECG":500,"PPG":500,"CO2":500},)"
               R"("units":{"ABP":"mmHg","ECG":"mV","PPG":"a.u.","CO2":"mmHg"}})");
    std::string csv = "time_s,ABP,ECG,PPG,CO2\n";
    for (int i = 0; i < 150000; ++i) csv += std::to_string(i / 500.0) + ",90,0,1,38\n";
    write_file(dir / "waveform.csv", csv);
    const WaveformCase wc = load_case(dir);
    CHECK(wc.channel("ABP").samples.size() == 150000);
    CHECK_FALSE(wc.event_truth_s.has_value());
}

TEST_CASE("load_case errors") {
    const fs::path dir = testing::temp_dir("io_err");
    const std::string manifest =
        R"({"case_id":"c","sample_rate_hz":{"ABP":100,"ECG":100,"PPG":100,"CO2":100},)"
        R"("units":{"ABP":"mmHg","ECG":"mV","PPG":"a.u.","CO2":"mmHg"}})";

    SUBCASE("missing CO2 column") {
        write_file(dir / "manifest.json", manifest);
        write_file(dir / "waveform.csv", "time_s,ABP,ECG,PPG\n0,90,0,1\n0.01,90,0,1\n");
        try {
            load_case(dir);
            FAIL("expected MissingChannel");
        } catch (const MissingChannel& e) {
            CHECK(e.channel() == "CO2");
        }
    }
    SUBCASE("missing CO2 rate") {
        write_file(dir / "manifest.json",
                   R"({"case_id":"c","sample_rate_hz":{"ABP":100,"ECG":100,"PPG":100},"units":{"ABP":"mmHg"}})");
        write_file(dir / "waveform.csv", "time_s,ABP,ECG,PPG,CO2\n0,90,0,1,38\n0.01,90,0,1,38\n");
        CHECK_THROWS_AS(load_case(dir), MissingChannel);
    }
    SUBCASE("non-monotone time") {
        write_file(dir / "manifest.json", manifest);
        write_file(dir / "waveform.csv", "time_s,ABP,ECG,PPG,CO2\n0,90,0,1,38\n0.02,90,0,1,38\n0.01,90,0,1,38\n");
        CHECK_THROWS_AS(load_case(dir), FormatError);
    }
    SUBCASE("missing value") {
        write_file(dir / "manifest.json", manifest);
        write_file(dir / "waveform.csv", "time_s,ABP,ECG,PPG,CO2\n0,90,,1,38\n");
        CHECK_THROWS_AS(load_case(dir), FormatError);
    }
    SUBCASE("rate out of range") {
        write_file(dir / "manifest.json",
                   R"({"case_id":"c","sample_rate_hz":{"ABP":20,"ECG":100,"PPG":100,"CO2":100},)"
                   R"("units":{"ABP":"mmHg","ECG":"mV","PPG":"a.u.","CO2":"mmHg"}})");
        write_file(dir / "waveform.csv", "time_s,ABP,ECG,PPG,CO2\n0,90,0,1,38\n");
        CHECK_THROWS_AS(load_case(dir), FormatError);
    }
}

TEST_CASE("resample") {
    SUBCASE("identity at 100 Hz is bitwise") {
        const Channel c{100.0, {1.0, 2.5, -3.0, 0.125}, "mmHg"};
        CHECK(resample(c).samples == c.samples);
    }
    SUBCASE("linear ramp at 500 Hz") {
        Channel c{500.0, {}, "mmHg"};
        for (int i = 0; i <= 500; ++i) c.samples.push_back(i / 500.0);
        const Channel r = resample(c);
        REQUIRE(r.samples.size() == 101);
        double err = 0.0;
        for (std::size_t i = 0; i < r.samples.size(); ++i) err = std::max(err, std::abs(r.samples[i] - i / 100.0));
        CHECK(err < 1e-12);
        CHECK(r.sample_rate_hz == 100.0);
    }
    SUBCASE("sine at 500 Hz") {
        Channel c{500.0, {}, "mmHg"};
        for (int i = 0; i < 5000; ++i) c.samples.push_back(std::sin(2.0 * std::numbers::pi * i / 500.0));
        const Channel r = resample(c);
        CHECK(r.samples.size() == static_cast<std::size_t>(std::floor(4999.0 / 500.0 * 100.0)) + 1);
        double err = 0.0;
        for (std::size_t i = 0; i < r.samples.size(); ++i) {
            err = std::max(err, std::abs(r.samples[i] - std::sin(2.0 * std::numbers::pi * i / 100.0)));
        }
        CHECK(err < 2e-3);
    }
    SUBCASE("constants and bounds are preserved") {
        Channel c{250.0, std::vector<double>(1000, 7.25), "mmHg"};
        for (double v : resample(c).samples) CHECK(v == 7.25);
        testing::random_matrix(1, 1, 1);
        safd::Rng rng(9);
        for (double& v : c.samples) v = rng.uniform(-2.0, 3.0);
        const auto [lo, hi] = std::minmax_element(c.samples.begin(), c.samples.end());
        for (double v : resample(c).samples) {
            CHECK(v >= *lo);
            CHECK(v <= *hi);
        }
    }
    SUBCASE("upsampling is refused") {
        const Channel c{50.0, {1.0, 2.0, 3.0}, "mmHg"};
        CHECK_THROWS_AS(resample(c), UpsamplingUnsupported);
    }
}

TEST_CASE("segment_case arithmetic") {
    auto starts = [](const std::vector<Segment>& segs) {
        std::vector<double> out;
        for (const Segment& s : segs) out.push_back(s.t_start);
        return out;
    };
    const auto ten = segment_case(constant_case(300.0));
    CHECK(ten.size() == 10);
    CHECK(starts(ten) == std::vector<double>{0, 30, 60, 90, 120, 150, 180, 210, 240, 270});
    for (const Segment& s : ten) {
        CHECK(s.data.rows() == 4);
        CHECK(s.data.cols() == 3000);
        CHECK(s.label == Label::Unlabeled);
    }
    CHECK(segment_case(constant_case(29.0)).empty());
    CHECK(segment_case(constant_case(95.0)).size() == 3);
    CHECK(segment_case(constant_case(60.0), 30.0, 30.0, ChannelMode::AbpOnly).front().data.rows() == 1);
    CHECK_THROWS_AS(segment_case(constant_case(60.0, 200.0)), FormatError);
}

TEST_CASE("segment_case tiles the case") {
    WaveformCase wc = constant_case(125.0);
    auto& abp = wc.channels["ABP"].samples;
    for (std::size_t i = 0; i < abp.size(); ++i) abp[i] = static_cast<double>(i);
    const auto segs = segment_case(wc, 30.0, 30.0, ChannelMode::AbpOnly);
    REQUIRE(segs.size() == 4);
    std::size_t next = 0;
    for (const Segment& s : segs) {
        for (Eigen::Index t = 0; t < s.data.cols(); ++t) CHECK(s.data(0, t) == static_cast<float>(next++));
    }
    CHECK(next == 4 * 3000);
}

TEST_CASE("validate_segment") {
    SynthParams p;
    p.duration_s = 200.0;
    p.n_events = 0;
    const WaveformCase wc = gen_case(p);
    const auto segs = segment_case(wc);
    Segment seg = segs.front();
    auto peaks_of = [](const Segment& s) {
        std::vector<double> abp(s.data.row(0).begin(), s.data.row(0).end());
        return detect_peaks(abp, default_abp_peak_params());
    };

    const Segment before = seg;
    const Validation ok = validate_segment(seg, peaks_of(seg));
    CHECK(ok.accepted);
    CHECK(seg.data == before.data);

    SUBCASE("flatline") {
        seg.data.row(0).setConstant(80.0f);
        const Validation v = validate_segment(seg, peaks_of(seg));
        CHECK_FALSE(v.accepted);
        CHECK(v.reason == "undetectable rhythm");
    }
    SUBCASE("MAP reaching 15") {
        // Shift and shrink the pressure so that beat MAPs sit near 15 mmHg.
        seg.data.row(0) = (seg.data.row(0).array() - 90.0f) * 0.25f + 15.0f;
        std::vector<std::size_t> peaks = peaks_of(before);
        const Validation v = validate_segment(seg, peaks);
        CHECK_FALSE(v.accepted);
        CHECK(v.reason == "MAP<20");
    }
    SUBCASE("MAP above 160") {
        seg.data.row(0).array() += 100.0f;
        const Validation v = validate_segment(seg, peaks_of(before));
        CHECK(v.reason == "MAP>160");
    }
    SUBCASE("heart rate bands") {
        const std::vector<std::size_t> slow{0, 250, 500, 750, 1000, 1250};  // 24 bpm
        CHECK(validate_segment(seg, slow).reason == "HR<30");
        std::vector<std::size_t> fast;
        for (std::size_t i = 10; i < 3000; i += 30) fast.push_back(i);  // 200 bpm
        CHECK(validate_segment(seg, fast).reason == "HR>180");
    }
}

TEST_CASE("segment archive round trip and layout") {
    std::vector<Segment> segs;
    for (int i = 0; i < 3; ++i) {
        Segment s;
        s.data = testing::random_matrix(2, 7, 40 + i).cast<float>();
        s.t_start = 30.5 * i;
        s.case_id = "case_" + std::to_string(i);
        s.label = i == 0 ? Label::Positive : (i == 1 ? Label::Negative : Label::Unlabeled);
        s.horizon_min = 5;
        segs.push_back(s);
    }
    const fs::path dir = testing::temp_dir("archive");
    const fs::path path = dir / "a.safd";
    write_archive(path, segs);

    // header(20) + 3 * (56 data + 1 + 2 + 4 + 6 + 8)
    CHECK(fs::file_size(path) == 20 + 3 * (2 * 7 * 4 + 1 + 2 + 4 + 6 + 8));
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "SAFD");

    const auto back = read_archive(path);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i].data == segs[i].data);
        CHECK(back[i].t_start == segs[i].t_start);
        CHECK(back[i].case_id == segs[i].case_id);
        CHECK(back[i].label == segs[i].label);
        CHECK(back[i].horizon_min == 5);
    }

    write_archive_info(path, ArchiveInfo{"dev", 5, "multi", 11});
    const ArchiveInfo info = read_archive_info(path);
    CHECK(info.split == "dev");
    CHECK(info.horizon_min == 5);
    CHECK(info.seed == 11);

    fs::resize_file(path, fs::file_size(path) - 3);
    CHECK_THROWS_AS(read_archive(path), FormatError);
    write_file(path, "NOPE0000000000000000");
    CHECK_THROWS_AS(read_archive(path), FormatError);
}
