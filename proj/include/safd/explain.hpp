#pragma once

#include <string>
#include <vector>

#include "safd/model.hpp"

namespace safd {

struct MaskExport {
    std::vector<double> freqs_hz;  // i * rate / T
    Matrix<double> mask;           // (C, F), sigmoid of the filter weights
    std::vector<std::string> channel_names;

    /// One row per frequency: `freq_hz,<channel names...>`.
    std::string to_csv() const;
};

struct SensitivityMap {
    Matrix<double> saliency;  // (C, T), nonnegative
    double prob = 0.0;

    std::string to_csv() const;
};

/// Names of the model's input rows (ABP first).
std::vector<std::string> model_channel_names(int channels);

/// Unsupported for the no_safb variant, which has no filter.
template <class S>
MaskExport export_filter_mask(const ModelParams<S>& params, double sample_rate_hz = 100.0);

/// Grad-CAM over the final conv layer, upsampled to T and scaled per input
/// channel by the relative L2 norm of dlogit/dx on that channel (x in standardized units). Needs both
/// the CNN path and the filter-or-raw input path of the full / no_safb variants.
template <class S>
SensitivityMap sensitivity_map(const ModelParams<S>& params, const Matrix<S>& x);

}  // namespace safd
