#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

namespace testing {

namespace fs = std::filesystem;

/// Runs `safdnet <args>` with stdout/stderr captured to `log`; returns the exit code.
inline int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + SAFDNET_EXE + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status)) return -1;
    return WEXITSTATUS(status);
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

/// Small f64 configuration so a whole pipeline runs in seconds.
inline std::string small_pipeline_config() {
    return R"({
  "synth": {"cases": 30, "duration_s": 1500.0, "n_events": 2, "precursor_lead_s": 360.0,
            "precursor_kind": "pp_decay"},
  "label": {"horizons": [5], "window_s": 5.0, "stride_s": 30.0},
  "model": {"conv": [{"kernel": 5, "stride": 2, "out_channels": 4}, {"kernel": 5, "stride": 2, "out_channels": 4}],
            "lstm_hidden": 4, "lstm_pool": 10, "d_k": 4, "d_v": 4},
  "train": {"max_epochs": 2, "batch_size": 8},
  "eval": {"n_boot": 50},
  "precision": "f64"
})";
}

struct PipelineRun {
    int failed_step = 0;  // 0 when every step exited 0, else the 1-based step
    std::string failed_log;
};

/// synth -> ingest -> label -> train -> eval -> ablate -> explain under `root`.
inline PipelineRun run_small_pipeline(const fs::path& root, std::uint64_t seed) {
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream cfg(root / "config.json");
        cfg << small_pipeline_config();
    }
    const std::string common = " --config \"" + (root / "config.json").string() + "\" --seed " + std::to_string(seed);
    auto q = [&](const std::string& name) { return " \"" + (root / name).string() + "\""; };
    const std::vector<std::string> steps{
        "synth --out" + q("raw") + common,
        "ingest --in" + q("raw") + " --out" + q("cases") + common,
        "label --in" + q("cases") + " --out" + q("data") + common,
        "train --data" + q("data") + " --out" + q("model") + common,
        "eval --model" + q("model") + " --data" + q("data") + " --out" + q("eval") + common,
        "ablate --data" + q("data") + " --out" + q("ablate") + common + " --set train.max_epochs=1",
        "explain --model" + q("model") + " --data" + q("data") + " --mask --saliency 0 --out" + q("explain") + common,
    };
    PipelineRun out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const fs::path log = root / ("step" + std::to_string(i + 1) + ".log");
        if (run_cli(steps[i], log) != 0) {
            out.failed_step = static_cast<int>(i + 1);
            out.failed_log = steps[i] + "\n" + read_file(log);
            return out;
        }
    }
    return out;
}

/// Relative path -> contents for every file under `root`, skipping logs and
/// training logs (they carry wall-clock times).
inline std::map<std::string, std::string> artifact_files(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (e.path().extension() == ".log" || name == "trainlog.csv") continue;
        out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    }
    return out;
}

}  // namespace testing
