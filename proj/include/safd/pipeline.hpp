#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "safd/config.hpp"
#include "safd/evaluation.hpp"
#include "safd/labeling.hpp"

namespace safd {

// File-based stages behind the CLI subcommands. Each writes
// resolved_config.json into its output directory.

/// `synth.cases` generated cases as case directories under `out`.
void run_synth(const RunConfig& cfg, const std::filesystem::path& out);

/// Resamples every case directory under `in` to 100 Hz and writes it to `out`.
void run_ingest(const RunConfig& cfg, const std::filesystem::path& in, const std::filesystem::path& out);

struct LabelSummary {
    std::map<Split, std::size_t> cases;
    std::map<int, std::map<Split, std::size_t>> segments;  // horizon -> split -> count
    std::map<int, std::map<Split, std::size_t>> positives;
};

/// Case-level split and `{split}_h{h}.safd` archives with split sidecars.
LabelSummary run_label(const RunConfig& cfg, const std::filesystem::path& in, const std::filesystem::path& out);

std::filesystem::path archive_path(const std::filesystem::path& data, Split split, int horizon);

/// Reads an archive and checks that its sidecar carries the expected split tag.
std::vector<Segment> load_split(const std::filesystem::path& data, Split split, int horizon);

struct TrainSummary {
    double best_dev_auroc = 0.0;
    int best_epoch = -1;
    int epochs_run = 0;
};

/// Trains on train/dev archives of cfg.horizon; writes the checkpoint and trainlog.csv.
TrainSummary run_train(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out,
                       std::ostream* progress = nullptr);

/// Evaluates a checkpoint on one split of the archives at the checkpoint's horizon.
EvalReport run_eval(const RunConfig& cfg, const std::filesystem::path& model, const std::filesystem::path& data,
                    const std::filesystem::path& out, Split split = Split::Test);

struct AblationRow {
    Ablation model;
    int horizon;
    double auroc;
    double accuracy;
    double f1;
};

/// Trains and evaluates all four variants with one seed; writes ablation.csv.
std::vector<AblationRow> run_ablate(const RunConfig& cfg, const std::filesystem::path& data,
                                    const std::filesystem::path& out, std::ostream* progress = nullptr);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Writes mask.csv for the checkpoint.
void run_explain_mask(const RunConfig& cfg, const std::filesystem::path& model, const std::filesystem::path& out);

/// Writes saliency.csv for segment `index` of the given split.
void run_explain_saliency(const RunConfig& cfg, const std::filesystem::path& model, const std::filesystem::path& data,
                          std::size_t index, const std::filesystem::path& out, Split split = Split::Test);

}  // namespace safd
