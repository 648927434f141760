#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "safd/model.hpp"
#include "safd/signal_io.hpp"

namespace safd {

enum class OptimizerKind { Adam, Sgd };
enum class Precision { F32, F64 };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);
std::string to_string(Precision precision);
Precision parse_precision(const std::string& text);

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 32;
    int max_epochs = 30;
    int patience = 5;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double momentum = 0.9;
    Precision precision = Precision::F32;
    int plateau_epochs = 3;  // halve lr after this many epochs without a lower train loss
    bool normalize_inputs = true;
    int threads = 1;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_auroc = 0.0;
    double wall_s = 0.0;
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;

    /// `epoch,train_loss,dev_auroc,wall_s`
    std::string to_csv() const;
};

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
double bce_loss(std::span<const double> p, std::span<const double> y);

double label_value(Label label);

/// Per-channel mean / inverse standard deviation over every training sample,
/// written into params.input_offset / params.input_scale.
template <class S>
void fit_input_normalization(ModelParams<S>& params, std::span<const Segment> train_set);

/// Eval-mode probabilities for each segment.
template <class S>
std::vector<double> predict(const ModelParams<S>& params, std::span<const Segment> segments, int threads = 1);

template <class S>
struct TrainResult {
    ModelParams<S> params;  // from the best dev epoch
    TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with dev-AUROC model selection and early stopping.
/// Deterministic for fixed (data, init, cfg) regardless of cfg.threads.
template <class S>
TrainResult<S> train(std::span<const Segment> train_set, std::span<const Segment> dev_set, ModelParams<S> init,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace safd
