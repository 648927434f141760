// safdnet: synth | ingest | label | train | eval | ablate | explain

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "safd/config.hpp"
#include "safd/errors.hpp"
#include "safd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace safd;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    int horizon = 0;
    std::string channels;
    int jobs = 0;
    std::string ablation;
    std::string precision;
    std::vector<std::string> sets;
    std::vector<CLI::Option*> opts;  // seed, horizon, channels, jobs, ablation, precision
};

void add_common(CLI::App* cmd, CommonFlags& f, bool need_out = true) {
    cmd->add_option("--config", f.config, "JSON config file (defaults < file < flags)")->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", f.out, "Output directory");
    if (need_out) out->required();
    f.opts = {
        cmd->add_option("--seed", f.seed, "Master seed"),
        cmd->add_option("--horizon", f.horizon, "Prediction horizon in minutes")->check(CLI::IsMember({3, 5, 10, 15})),
        cmd->add_option("--channels", f.channels, "Input channels")->check(CLI::IsMember({"abp", "multi"})),
        cmd->add_option("--jobs", f.jobs, "Worker threads for per-case stages and inference")->check(CLI::PositiveNumber),
        cmd->add_option("--ablation", f.ablation, "Model variant")
            ->check(CLI::IsMember({"full", "no_safb", "no_cross_attn", "single_path"})),
        cmd->add_option("--precision", f.precision, "Training precision")->check(CLI::IsMember({"f32", "f64"})),
    };
    cmd->add_option("--set", f.sets, "Override any config field, e.g. --set train.lr=5e-4");
}

RunConfig resolve(const CommonFlags& f, Json extra = Json::object()) {
    Json overrides = Json::object();
    for (const std::string& s : f.sets) overrides.merge_patch(dotted_override(s));
    if (f.opts[0]->count()) overrides["seed"] = f.seed;
    if (f.opts[1]->count()) overrides["horizon"] = f.horizon;
    if (f.opts[2]->count()) overrides["channels"] = f.channels;
    if (f.opts[3]->count()) {
        overrides["jobs"] = f.jobs;
        overrides["train"]["threads"] = f.jobs;
    }
    if (f.opts[4]->count()) overrides["ablation"] = f.ablation;
    if (f.opts[5]->count()) overrides["precision"] = f.precision;
    overrides.merge_patch(extra);
    std::optional<fs::path> file;
    if (!f.config.empty()) file = f.config;
    return resolve_config(file, overrides);
}

Split split_flag(const std::string& s) { return parse_split(s); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAFDNet: hypotension prediction from perioperative waveforms"};
    app.require_subcommand(1);

    CommonFlags synth_f, ingest_f, label_f, train_f, eval_f, ablate_f, explain_f;
    int cases = 0;
    std::string precursor;
    std::string in_dir, data_dir, model_dir, split = "test";
    bool want_mask = false;
    std::size_t saliency_idx = 0;

    auto* synth = app.add_subcommand("synth", "Generate synthetic waveform cases");
    add_common(synth, synth_f);
    auto* cases_opt = synth->add_option("--cases", cases, "Number of cases")->check(CLI::PositiveNumber);
    auto* precursor_opt = synth->add_option("--precursor", precursor, "Precursor kind")
                              ->check(CLI::IsMember({"pp_decay", "hr_drift", "spectral_tone"}));

    auto* ingest = app.add_subcommand("ingest", "Resample case directories to 100 Hz");
    add_common(ingest, ingest_f);
    ingest->add_option("--in", in_dir, "Directory of case directories")->required()->check(CLI::ExistingDirectory);

    auto* label = app.add_subcommand("label", "Detect events, build labeled segments and split by case");
    add_common(label, label_f);
    label->add_option("--in", in_dir, "Directory of case directories")->required()->check(CLI::ExistingDirectory);

    auto* train = app.add_subcommand("train", "Train a model on labeled archives");
    add_common(train, train_f);
    train->add_option("--data", data_dir, "Output directory of `label`")->required()->check(CLI::ExistingDirectory);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(eval, eval_f);
    eval->add_option("--model", model_dir, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--data", data_dir, "Output directory of `label`")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--split", split, "Archive split to evaluate")->check(CLI::IsMember({"dev", "test"}));

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate all four model variants");
    add_common(ablate, ablate_f);
    ablate->add_option("--data", data_dir, "Output directory of `label`")->required()->check(CLI::ExistingDirectory);

    auto* explain = app.add_subcommand("explain", "Export the filter mask or a saliency map");
    add_common(explain, explain_f);
    explain->add_option("--model", model_dir, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    explain->add_flag("--mask", want_mask, "Write mask.csv");
    auto* sal_opt = explain->add_option("--saliency", saliency_idx, "Write saliency.csv for this segment index");
    explain->add_option("--data", data_dir, "Output directory of `label` (for --saliency)")->check(CLI::ExistingDirectory);
    explain->add_option("--split", split, "Archive split for --saliency")->check(CLI::IsMember({"dev", "test"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            Json extra = Json::object();
            if (cases_opt->count()) extra["synth"]["cases"] = cases;
            if (precursor_opt->count()) extra["synth"]["precursor_kind"] = precursor;
            run_synth(resolve(synth_f, extra), synth_f.out);
        } else if (ingest->parsed()) {
            run_ingest(resolve(ingest_f), in_dir, ingest_f.out);
        } else if (label->parsed()) {
            const LabelSummary s = run_label(resolve(label_f), in_dir, label_f.out);
            for (const auto& [h, counts] : s.segments) {
                std::cout << "h" << h << ":";
                for (const auto& [sp, n] : counts) {
                    std::cout << ' ' << to_string(sp) << '=' << n << " (" << s.positives.at(h).at(sp) << " pos)";
                }
                std::cout << '\n';
            }
        } else if (train->parsed()) {
            const TrainSummary s = run_train(resolve(train_f), data_dir, train_f.out, &std::cerr);
            std::cout << "best epoch " << s.best_epoch << " dev_auroc " << s.best_dev_auroc << '\n';
        } else if (eval->parsed()) {
            const EvalReport r = run_eval(resolve(eval_f), model_dir, data_dir, eval_f.out, split_flag(split));
            std::cout << "auroc " << r.auroc.point << " [" << r.auroc.ci_lo << ", " << r.auroc.ci_hi << "] auprc "
                      << r.auprc.point << " n " << r.n << '\n';
        } else if (ablate->parsed()) {
            std::cout << ablation_csv(run_ablate(resolve(ablate_f), data_dir, ablate_f.out, &std::cerr));
        } else if (explain->parsed()) {
            if (!want_mask && !sal_opt->count()) {
                std::cerr << "explain: pass --mask and/or --saliency <idx>\n" << explain->help();
                return kExitUsage;
            }
            if (sal_opt->count() && data_dir.empty()) {
                std::cerr << "explain: --saliency needs --data\n";
                return kExitUsage;
            }
            const RunConfig cfg = resolve(explain_f);
            if (want_mask) run_explain_mask(cfg, model_dir, explain_f.out);
            if (sal_opt->count()) run_explain_saliency(cfg, model_dir, data_dir, saliency_idx, explain_f.out, split_flag(split));
        }
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
