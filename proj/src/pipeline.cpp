#include "safd/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>

#include "safd/checkpoint.hpp"
#include "safd/errors.hpp"
#include "safd/explain.hpp"
#include "safd/parallel.hpp"
#include "safd/synthgen.hpp"
#include "safd/training.hpp"

namespace safd {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::vector<fs::path> case_dirs(const fs::path& in) {
    if (!fs::is_directory(in)) throw DataError("input directory " + in.string() + " does not exist");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw DataError("no case directories under " + in.string());
    return out;
}

std::string case_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04d", index);
    return buf;
}

template <class S>
TrainSummary train_typed(const RunConfig& cfg, const std::vector<Segment>& train_set,
                         const std::vector<Segment>& dev_set, const fs::path& out, std::ostream* progress) {
    const HyperConfig hyper = cfg.resolved_hyper();
    ModelParams<S> init = init_params<S>(hyper, cfg.ablation, cfg.seed);
    EpochCallback report;
    if (progress) {
        report = [&](const EpochRecord& r) {
            *progress << "[" << to_string(cfg.ablation) << "] epoch " << r.epoch << " loss " << r.train_loss
                      << " dev_auroc " << r.dev_auroc << " (" << r.wall_s << " s)" << std::endl;
        };
    }
    TrainResult<S> result = train<S>(train_set, dev_set, std::move(init), cfg.resolved_train(), report);
    const double best = result.log.epochs.at(static_cast<std::size_t>(result.log.best_epoch)).dev_auroc;
    save_checkpoint(result.params, out, cfg.seed, best, result.log.best_epoch);
    write_text(out / "trainlog.csv", result.log.to_csv());
    return {best, result.log.best_epoch, static_cast<int>(result.log.epochs.size())};
}

template <class S>
std::vector<double> predict_checkpoint(const fs::path& model, const std::vector<Segment>& segments, int threads,
                                       CheckpointInfo& info) {
    const ModelParams<S> params = load_checkpoint<S>(model, &info);
    return predict(params, segments, threads);
}

void check_segment_shape(const std::vector<Segment>& segments, const HyperConfig& hyper, const fs::path& where) {
    for (const Segment& s : segments) {
        if (s.data.rows() != hyper.channels || s.data.cols() != hyper.length) {
            throw ShapeError("segments in " + where.string() + " are " + std::to_string(s.data.rows()) + "x" +
                             std::to_string(s.data.cols()) + " but the model expects " + std::to_string(hyper.channels) +
                             "x" + std::to_string(hyper.length));
        }
    }
}

}  // namespace

void run_synth(const RunConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    write_resolved_config(cfg, out);
    parallel_for(static_cast<std::size_t>(cfg.synth_cases), cfg.jobs, [&](std::size_t i) {
        SynthParams p = cfg.synth;
        p.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
        const std::string id = case_name(static_cast<int>(i));
        save_case(gen_case(p, id), out / id);
    });
}

void run_ingest(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
    const std::vector<fs::path> dirs = case_dirs(in);
    fs::create_directories(out);
    write_resolved_config(cfg, out);
    parallel_for(dirs.size(), cfg.jobs, [&](std::size_t i) {
        const WaveformCase wc = resample_case(load_case(dirs[i]));
        save_case(wc, out / dirs[i].filename());
    });
}

fs::path archive_path(const fs::path& data, Split split, int horizon) {
    return data / (to_string(split) + "_h" + std::to_string(horizon) + ".safd");
}

LabelSummary run_label(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
    const std::vector<fs::path> dirs = case_dirs(in);
    LabelConfig label = cfg.label;
    label.mode = cfg.channels;

    std::vector<std::map<int, std::vector<Segment>>> per_case(dirs.size());
    std::vector<std::string> ids(dirs.size());
    parallel_for(dirs.size(), cfg.jobs, [&](std::size_t i) {
        const WaveformCase wc = resample_case(load_case(dirs[i]));
        ids[i] = wc.case_id;
        try {
            per_case[i] = build_dataset(wc, label, cfg.seed);
        } catch (const InsufficientBeats&) {
            per_case[i] = {};  // no detectable rhythm: the case contributes nothing
        }
    });
    {
        std::vector<std::string> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw DataError("duplicate case ids under " + in.string());
    }
    const std::map<std::string, Split> assignment = split_cases(ids, cfg.seed, cfg.train_frac, cfg.dev_frac);

    fs::create_directories(out);
    write_resolved_config(cfg, out);
    LabelSummary summary;
    Json splits = Json::object();
    for (const auto& [id, split] : assignment) {
        splits[id] = to_string(split);
        ++summary.cases[split];
    }
    write_text(out / "splits.json", splits.dump(2) + "\n");

    for (int h : label.horizons) {
        for (Split split : {Split::Train, Split::Dev, Split::Test}) {
            std::vector<Segment> segments;
            for (std::size_t i = 0; i < dirs.size(); ++i) {
                if (assignment.at(ids[i]) != split) continue;
                const auto it = per_case[i].find(h);
                if (it == per_case[i].end()) continue;
                segments.insert(segments.end(), it->second.begin(), it->second.end());
            }
            const fs::path path = archive_path(out, split, h);
            write_archive(path, segments);
            write_archive_info(path, ArchiveInfo{to_string(split), h, to_string(cfg.channels), cfg.seed});
            summary.segments[h][split] = segments.size();
            summary.positives[h][split] = static_cast<std::size_t>(std::count_if(
                segments.begin(), segments.end(), [](const Segment& s) { return s.label == Label::Positive; }));
        }
    }
    return summary;
}

std::vector<Segment> load_split(const fs::path& data, Split split, int horizon) {
    const fs::path path = archive_path(data, split, horizon);
    if (!fs::exists(path)) throw DataError("missing archive " + path.string());
    const ArchiveInfo info = read_archive_info(path);
    if (info.split != to_string(split)) {
        throw DataError("archive " + path.string() + " is tagged '" + info.split + "', expected '" + to_string(split) + "'");
    }
    return read_archive(path);
}

TrainSummary run_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, std::ostream* progress) {
    const std::vector<Segment> train_set = load_split(data, Split::Train, cfg.horizon);
    const std::vector<Segment> dev_set = load_split(data, Split::Dev, cfg.horizon);
    for (const auto* set : {&train_set, &dev_set}) {
        for (const Segment& s : *set) {
            if (s.horizon_min != cfg.horizon) throw DataError("archive segment has horizon " + std::to_string(s.horizon_min));
        }
    }
    check_segment_shape(train_set, cfg.resolved_hyper(), data);
    check_segment_shape(dev_set, cfg.resolved_hyper(), data);
    fs::create_directories(out);
    write_resolved_config(cfg, out);
    if (cfg.train.precision == Precision::F64) return train_typed<double>(cfg, train_set, dev_set, out, progress);
    return train_typed<float>(cfg, train_set, dev_set, out, progress);
}

EvalReport run_eval(const RunConfig& cfg, const fs::path& model, const fs::path& data, const fs::path& out, Split split) {
    const CheckpointInfo peek = read_checkpoint_info(model);
    if (split == Split::Train) throw DataError("eval: refusing to evaluate on the training split");
    const std::vector<Segment> segments = load_split(data, split, peek.hyper.horizon_min);
    check_segment_shape(segments, peek.hyper, data);
    CheckpointInfo info;
    const std::vector<double> scores = peek.dtype == Precision::F64
                                           ? predict_checkpoint<double>(model, segments, cfg.train.threads, info)
                                           : predict_checkpoint<float>(model, segments, cfg.train.threads, info);
    EvalOptions opt = cfg.eval;
    opt.seed = cfg.seed;
    const EvalReport report = evaluate(scores, labels_of(segments), info.hyper.horizon_min, opt);
    fs::create_directories(out);
    write_resolved_config(cfg, out);
    write_text(out / "report.json", report.to_json());
    write_text(out / "roc.csv", report.roc_csv());
    write_text(out / "pr.csv", report.pr_csv());
    write_text(out / "calibration.csv", report.calibration_csv());
    return report;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "model,horizon,auroc,accuracy,f1\n";
    for (const AblationRow& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f\n", to_string(r.model).c_str(), r.horizon, r.auroc,
                      r.accuracy, r.f1);
        out += buf;
    }
    return out;
}

std::vector<AblationRow> run_ablate(const RunConfig& cfg, const fs::path& data, const fs::path& out,
                                    std::ostream* progress) {
    fs::create_directories(out);
    write_resolved_config(cfg, out);
    std::vector<AblationRow> rows;
    for (Ablation a : kAllAblations) {
        RunConfig variant = cfg;
        variant.ablation = a;
        const fs::path dir = out / to_string(a);
        run_train(variant, data, dir, progress);
        const EvalReport r = run_eval(variant, dir, data, dir);
        rows.push_back({a, r.horizon_min, r.auroc.point, r.accuracy.point, r.f1.point});
    }
    write_text(out / "ablation.csv", ablation_csv(rows));
    return rows;
}

void run_explain_mask(const RunConfig& cfg, const fs::path& model, const fs::path& out) {
    const ModelParams<double> params = load_checkpoint<double>(model);
    const MaskExport mask = export_filter_mask(params);
    fs::create_directories(out);
    write_resolved_config(cfg, out);
    write_text(out / "mask.csv", mask.to_csv());
}

void run_explain_saliency(const RunConfig& cfg, const fs::path& model, const fs::path& data, std::size_t index,
                          const fs::path& out, Split split) {
    CheckpointInfo info;
    const ModelParams<double> params = load_checkpoint<double>(model, &info);
    const std::vector<Segment> segments = load_split(data, split, info.hyper.horizon_min);
    if (index >= segments.size()) {
        throw DataError("segment index " + std::to_string(index) + " out of range (" + std::to_string(segments.size()) +
                        " segments)");
    }
    check_segment_shape(segments, info.hyper, data);
    const SensitivityMap map = sensitivity_map(params, Matrix<double>(segments[index].data.cast<double>()));
    fs::create_directories(out);
    write_resolved_config(cfg, out);
    write_text(out / "saliency.csv", map.to_csv());
}

}  // namespace safd
