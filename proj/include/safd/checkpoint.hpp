#pragma once

#include <cstdint>
#include <filesystem>

#include "safd/model.hpp"
#include "safd/training.hpp"

namespace safd {

struct CheckpointInfo {
    Precision dtype = Precision::F32;
    HyperConfig hyper;
    Ablation ablation = Ablation::Full;
    std::uint64_t seed = 0;
    double dev_metric = 0.0;
    int best_epoch = -1;
};

/// Writes `checkpoint.json` and `checkpoint.bin` into `dir` (each through a
/// temporary file and rename). Tensors are little-endian in the dtype of S.
template <class S>
void save_checkpoint(const ModelParams<S>& params, const std::filesystem::path& dir, std::uint64_t seed,
                     double dev_metric, int best_epoch = -1);

/// Manifest only; CorruptCheckpoint if it is missing or malformed.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Validates blob length, checksum and every tensor shape, then converts the
/// stored dtype to S (bit-exact when they agree).
template <class S>
ModelParams<S> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace safd
