#include "safd/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "safd/errors.hpp"

namespace safd {

namespace fs = std::filesystem;

namespace {

Json number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

double number_from(const Json& j, double null_value) { return j.is_null() ? null_value : j.get<double>(); }

template <class T>
void read(const Json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

// Every key present in `given` must also exist in `known`.
void check_keys(const Json& given, const Json& known, const std::string& path) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!known.is_object() || !known.contains(key)) throw ConfigError("unknown config key '" + here + "'");
        if (value.is_object() && known.at(key).is_object()) check_keys(value, known.at(key), here);
    }
}

Json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
}

}  // namespace

Json to_json(const HyperConfig& h) {
    Json conv = Json::array();
    for (const ConvSpec& c : h.conv) conv.push_back({{"kernel", c.kernel}, {"stride", c.stride}, {"out_channels", c.out_channels}});
    return {{"channels", h.channels},   {"length", h.length}, {"conv", conv},
            {"lstm_hidden", h.lstm_hidden}, {"lstm_pool", h.lstm_pool}, {"d_k", h.d_k},
            {"d_v", h.d_v},             {"dropout_p", h.dropout_p}, {"horizon_min", h.horizon_min}};
}

HyperConfig hyper_from_json(const Json& j) {
    HyperConfig h;
    read(j, "channels", h.channels);
    read(j, "length", h.length);
    if (j.contains("conv")) {
        h.conv.clear();
        for (const Json& c : j.at("conv")) {
            ConvSpec s;
            read(c, "kernel", s.kernel);
            read(c, "stride", s.stride);
            read(c, "out_channels", s.out_channels);
            h.conv.push_back(s);
        }
    }
    read(j, "lstm_hidden", h.lstm_hidden);
    read(j, "lstm_pool", h.lstm_pool);
    read(j, "d_k", h.d_k);
    read(j, "d_v", h.d_v);
    read(j, "dropout_p", h.dropout_p);
    read(j, "horizon_min", h.horizon_min);
    return h;
}

Json RunConfig::to_json() const {
    Json noise = Json::object();
    for (const auto& [name, sigma] : synth.noise_sigma) noise[name] = sigma;
    Json j;
    j["seed"] = seed;
    j["horizon"] = horizon;
    j["channels"] = safd::to_string(channels);
    j["jobs"] = jobs;
    j["ablation"] = safd::to_string(ablation);
    j["precision"] = safd::to_string(train.precision);
    j["synth"] = {{"cases", synth_cases},
                  {"duration_s", synth.duration_s},
                  {"hr_bpm", synth.hr_bpm},
                  {"base_map_mmhg", synth.base_map_mmhg},
                  {"pulse_pressure_mmhg", synth.pulse_pressure_mmhg},
                  {"n_events", synth.n_events},
                  {"precursor_lead_s", synth.precursor_lead_s},
                  {"precursor_duration_s", synth.precursor_duration_s},
                  {"precursor_kind", safd::to_string(synth.precursor_kind)},
                  {"noise_sigma", noise},
                  {"sample_rate_hz", synth.sample_rate_hz},
                  {"tone_hz", synth.tone_hz},
                  {"tone_amplitude_mmhg", synth.tone_amplitude_mmhg},
                  {"respiratory_rate_bpm", synth.respiratory_rate_bpm}};
    j["peaks"] = {{"min_height", number_or_null(label.abp_peaks.min_height)},
                  {"min_prominence", label.abp_peaks.min_prominence},
                  {"min_distance_s", label.abp_peaks.min_distance_s}};
    j["label"] = {{"horizons", label.horizons},
                  {"window_s", label.window_s},
                  {"stride_s", label.stride_s},
                  {"negatives_per_event", label.negatives_per_event},
                  {"negatives_without_events", label.negatives_without_events},
                  {"train_frac", train_frac},
                  {"dev_frac", dev_frac}};
    Json model = safd::to_json(hyper);
    model.erase("channels");
    model.erase("length");
    model.erase("horizon_min");
    j["model"] = model;
    j["train"] = {{"lr", train.lr},
                  {"batch_size", train.batch_size},
                  {"max_epochs", train.max_epochs},
                  {"patience", train.patience},
                  {"optimizer", safd::to_string(train.optimizer)},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"adam_eps", train.adam_eps},
                  {"momentum", train.momentum},
                  {"plateau_epochs", train.plateau_epochs},
                  {"normalize_inputs", train.normalize_inputs},
                  {"threads", train.threads}};
    j["eval"] = {{"n_boot", eval.n_boot}, {"threshold", eval.threshold}, {"calibration_bins", eval.calibration_bins}};
    return j;
}

RunConfig RunConfig::from_json(const Json& j) {
    RunConfig c;
    check_keys(j, c.to_json(), "");
    try {
        read(j, "seed", c.seed);
        read(j, "horizon", c.horizon);
        if (j.contains("channels")) c.channels = parse_channel_mode(j.at("channels").get<std::string>());
        read(j, "jobs", c.jobs);
        if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
        if (j.contains("precision")) c.train.precision = parse_precision(j.at("precision").get<std::string>());
        if (j.contains("synth")) {
            const Json& s = j.at("synth");
            read(s, "cases", c.synth_cases);
            read(s, "duration_s", c.synth.duration_s);
            read(s, "hr_bpm", c.synth.hr_bpm);
            read(s, "base_map_mmhg", c.synth.base_map_mmhg);
            read(s, "pulse_pressure_mmhg", c.synth.pulse_pressure_mmhg);
            read(s, "n_events", c.synth.n_events);
            read(s, "precursor_lead_s", c.synth.precursor_lead_s);
            read(s, "precursor_duration_s", c.synth.precursor_duration_s);
            if (s.contains("precursor_kind")) c.synth.precursor_kind = parse_precursor_kind(s.at("precursor_kind").get<std::string>());
            if (s.contains("noise_sigma")) {
                for (const auto& [name, sigma] : s.at("noise_sigma").items()) c.synth.noise_sigma[name] = sigma.get<double>();
            }
            read(s, "sample_rate_hz", c.synth.sample_rate_hz);
            read(s, "tone_hz", c.synth.tone_hz);
            read(s, "tone_amplitude_mmhg", c.synth.tone_amplitude_mmhg);
            read(s, "respiratory_rate_bpm", c.synth.respiratory_rate_bpm);
        }
        if (j.contains("peaks")) {
            const Json& p = j.at("peaks");
            if (p.contains("min_height")) {
                c.label.abp_peaks.min_height = number_from(p.at("min_height"), -std::numeric_limits<double>::infinity());
            }
            read(p, "min_prominence", c.label.abp_peaks.min_prominence);
            read(p, "min_distance_s", c.label.abp_peaks.min_distance_s);
        }
        if (j.contains("label")) {
            const Json& l = j.at("label");
            read(l, "horizons", c.label.horizons);
            read(l, "window_s", c.label.window_s);
            read(l, "stride_s", c.label.stride_s);
            read(l, "negatives_per_event", c.label.negatives_per_event);
            read(l, "negatives_without_events", c.label.negatives_without_events);
            read(l, "train_frac", c.train_frac);
            read(l, "dev_frac", c.dev_frac);
        }
        if (j.contains("model")) c.hyper = hyper_from_json(j.at("model"));
        if (j.contains("train")) {
            const Json& t = j.at("train");
            read(t, "lr", c.train.lr);
            read(t, "batch_size", c.train.batch_size);
            read(t, "max_epochs", c.train.max_epochs);
            read(t, "patience", c.train.patience);
            if (t.contains("optimizer")) c.train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
            read(t, "beta1", c.train.beta1);
            read(t, "beta2", c.train.beta2);
            read(t, "adam_eps", c.train.adam_eps);
            read(t, "momentum", c.train.momentum);
            read(t, "plateau_epochs", c.train.plateau_epochs);
            read(t, "normalize_inputs", c.train.normalize_inputs);
            read(t, "threads", c.train.threads);
        }
        if (j.contains("eval")) {
            const Json& e = j.at("eval");
            read(e, "n_boot", c.eval.n_boot);
            read(e, "threshold", c.eval.threshold);
            read(e, "calibration_bins", c.eval.calibration_bins);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.label.mode = c.channels;
    c.validate();
    return c;
}

HyperConfig RunConfig::resolved_hyper() const {
    HyperConfig h = hyper;
    h.channels = channel_count(channels);
    h.length = static_cast<int>(std::llround(label.window_s * kModelRateHz));
    h.horizon_min = horizon;
    return h;
}

TrainConfig RunConfig::resolved_train() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
}

void RunConfig::validate() const {
    try {
        if (std::find(label.horizons.begin(), label.horizons.end(), horizon) == label.horizons.end()) {
            throw ConfigError("horizon " + std::to_string(horizon) + " is not among label.horizons");
        }
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
        if (synth_cases < 1) throw ConfigError("synth.cases must be >= 1");
        if (!(label.window_s > 0.0 && label.stride_s > 0.0)) throw ConfigError("label window_s and stride_s must be > 0");
        if (!(train_frac > 0.0 && dev_frac > 0.0 && train_frac + dev_frac < 1.0)) {
            throw ConfigError("label train_frac and dev_frac must be positive with sum < 1");
        }
        if (eval.n_boot < 1 || eval.calibration_bins < 1) throw ConfigError("eval n_boot and calibration_bins must be >= 1");
        synth.validate();
        train.validate();
        resolved_hyper().validate(ablation);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

RunConfig resolve_config(const std::optional<fs::path>& file, const Json& overrides) {
    Json merged = RunConfig{}.to_json();
    if (file) {
        const Json from_file = read_json_file(*file);
        check_keys(from_file, merged, "");
        merged.merge_patch(from_file);
    }
    check_keys(overrides, merged, "");
    merged.merge_patch(overrides);
    return RunConfig::from_json(merged);
}

Json dotted_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    std::string pointer = "/";
    for (char ch : path) pointer += ch == '.' ? '/' : ch;
    Json out;
    out[Json::json_pointer(pointer)] = value;
    return out;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir / "resolved_config.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "resolved_config.json").string());
    out << cfg.to_json().dump(2) << '\n';
}

}  // namespace safd
