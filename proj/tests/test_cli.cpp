#include <doctest.h>

#include <json.hpp>

#include "cli_pipeline.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using testing::read_file;
using testing::run_cli;

namespace {

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("usage handling") {
    const fs::path dir = testing::temp_dir("cli_usage");
    const fs::path log = dir / "out.log";
    CHECK(run_cli("--help", log) == 0);
    CHECK(read_file(log).find("synth") != std::string::npos);
    CHECK(run_cli("train --help", log) == 0);
    CHECK(read_file(log).find("--data") != std::string::npos);
    CHECK(run_cli("", log) == 1);
    CHECK(run_cli("frobnicate", log) == 1);
    CHECK(run_cli("synth --out \"" + dir.string() + "\" --bogus", log) == 1);
    CHECK(run_cli("synth --out \"" + dir.string() + "\" --horizon 7", log) == 1);
    CHECK(run_cli("synth --out \"" + dir.string() + "\" --set train.lr=-1", log) == 1);
    CHECK(run_cli("synth --out \"" + dir.string() + "\" --set nosuch.key=1", log) == 1);
    CHECK(run_cli("explain --model \"" + dir.string() + "\" --out \"" + dir.string() + "\"", log) == 1);
}

TEST_CASE("data errors exit with 2") {
    const fs::path dir = testing::temp_dir("cli_data");
    const fs::path log = dir / "out.log";
    fs::create_directories(dir / "empty");
    CHECK(run_cli("train --data \"" + (dir / "empty").string() + "\" --out \"" + (dir / "m").string() + "\"", log) == 2);
    CHECK(read_file(log).find("data error") != std::string::npos);
    CHECK(run_cli("eval --model \"" + (dir / "empty").string() + "\" --data \"" + (dir / "empty").string() + "\" --out \"" +
                      (dir / "e").string() + "\"",
                  log) == 2);
}

TEST_CASE("small pipeline runs end to end and reruns byte-identically") {
    const fs::path a = testing::temp_dir("cli_run_a");
    const fs::path b = testing::temp_dir("cli_run_b");
    const auto ra = testing::run_small_pipeline(a, 7);
    INFO(ra.failed_log);
    REQUIRE(ra.failed_step == 0);
    const auto rb = testing::run_small_pipeline(b, 7);
    REQUIRE(rb.failed_step == 0);

    const auto fa = testing::artifact_files(a);
    const auto fb = testing::artifact_files(b);
    CHECK(fa.size() == fb.size());
    for (const auto& [name, content] : fa) {
        INFO(name);
        REQUIRE(fb.count(name) == 1);
        CHECK(fb.at(name) == content);
    }

    for (const char* sub : {"raw", "cases", "data", "model", "eval", "ablate", "explain"}) {
        INFO(sub);
        CHECK(fs::exists(a / sub / "resolved_config.json"));
    }
    CHECK(fa.count("raw/case_0029/manifest.json") == 1);
    CHECK(fs::exists(a / "data" / "test_h5.safd"));
    CHECK(fs::exists(a / "model" / "checkpoint.bin"));

    const auto report = nlohmann::json::parse(read_file(a / "eval" / "report.json"));
    CHECK(report["horizon_min"] == 5);
    CHECK(report["auroc"]["ci_lo"].get<double>() <= report["auroc"]["point"].get<double>());

    const std::string ablation = read_file(a / "ablate" / "ablation.csv");
    CHECK(line_count(ablation) == 5);
    for (const char* v : {"full", "no_safb", "no_cross_attn", "single_path"}) CHECK(ablation.find(v) != std::string::npos);

    const std::string mask = read_file(a / "explain" / "mask.csv");
    CHECK(mask.rfind("freq_hz,ABP,ECG,PPG,CO2\n", 0) == 0);
    CHECK(line_count(mask) == 252);
    CHECK(line_count(read_file(a / "explain" / "saliency.csv")) == 501);

    const std::string config = read_file(a / "model" / "resolved_config.json");
    CHECK(nlohmann::json::parse(config)["seed"] == 7);

    // A different seed changes the data.
    const fs::path c = testing::temp_dir("cli_run_c");
    const fs::path log = c / "synth.log";
    fs::copy_file(a / "config.json", c / "config.json");
    REQUIRE(run_cli("synth --config \"" + (c / "config.json").string() + "\" --seed 8 --out \"" + (c / "raw").string() + "\"", log) == 0);
    CHECK(read_file(c / "raw" / "case_0000" / "waveform.csv") != read_file(a / "raw" / "case_0000" / "waveform.csv"));
}

TEST_CASE("eval refuses the wrong split and corrupt checkpoints") {
    const fs::path a = fs::temp_directory_path() / "safd_test_cli_run_a";
    if (!fs::exists(a / "model" / "checkpoint.bin")) REQUIRE(testing::run_small_pipeline(a, 7).failed_step == 0);
    const fs::path dir = testing::temp_dir("cli_eval");
    const fs::path log = dir / "out.log";
    const std::string base = "eval --model \"" + (a / "model").string() + "\" --out \"" + (dir / "e").string() + "\"";

    CHECK(run_cli(base + " --data \"" + (a / "data").string() + "\" --split train", log) == 1);

    fs::copy(a / "data", dir / "data");
    fs::copy_file(dir / "data" / "train_h5.safd.json", dir / "data" / "test_h5.safd.json", fs::copy_options::overwrite_existing);
    CHECK(run_cli(base + " --data \"" + (dir / "data").string() + "\"", log) == 2);
    CHECK(read_file(log).find("train") != std::string::npos);

    fs::copy(a / "model", dir / "model");
    {
        std::fstream f(dir / "model" / "checkpoint.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        f.put('\x7f');
    }
    CHECK(run_cli("eval --model \"" + (dir / "model").string() + "\" --data \"" + (a / "data").string() + "\" --out \"" +
                      (dir / "e2").string() + "\"",
                  log) == 2);
}

TEST_CASE("non-finite training exits with 3") {
    const fs::path a = fs::temp_directory_path() / "safd_test_cli_run_a";
    if (!fs::exists(a / "data" / "train_h5.safd")) REQUIRE(testing::run_small_pipeline(a, 7).failed_step == 0);
    const fs::path dir = testing::temp_dir("cli_nan");
    const fs::path log = dir / "out.log";
    const int code = run_cli("train --config \"" + (a / "config.json").string() + "\" --data \"" + (a / "data").string() +
                                 "\" --out \"" + (dir / "m").string() + "\" --set train.lr=1e30 --set train.optimizer=sgd",
                             log);
    INFO(read_file(log));
    CHECK(code == 3);
    CHECK(read_file(log).find("grad-norm") != std::string::npos);
}
