#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "safd/evaluation.hpp"
#include "safd/labeling.hpp"
#include "safd/model.hpp"
#include "safd/synthgen.hpp"
#include "safd/training.hpp"

namespace safd {

using Json = nlohmann::ordered_json;

Json to_json(const HyperConfig& h);
HyperConfig hyper_from_json(const Json& j);

/// Every tunable of a pipeline run. Module seeds are derived from `seed`.
struct RunConfig {
    std::uint64_t seed = 0;
    int horizon = 5;
    ChannelMode channels = ChannelMode::Multi;
    int jobs = 1;
    Ablation ablation = Ablation::Full;

    int synth_cases = 20;
    SynthParams synth;
    LabelConfig label;
    double train_frac = 0.70;
    double dev_frac = 0.15;
    HyperConfig hyper;
    TrainConfig train;
    EvalOptions eval;

    Json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static RunConfig from_json(const Json& j);

    /// Hyper-parameters with C and T filled in from channels and window length.
    HyperConfig resolved_hyper() const;
    TrainConfig resolved_train() const;
    void validate() const;
};

/// Error for malformed configuration (maps to the usage exit code).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// defaults <- JSON file <- overrides (a JSON object with the same layout).
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const Json& overrides);

/// Parses `a.b.c=value` into a nested object; value is JSON if it parses,
/// a string otherwise.
Json dotted_override(const std::string& assignment);

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace safd
