#include "safd/explain.hpp"

#include <algorithm>
#include <sstream>

#include "safd/errors.hpp"
#include "safd/signal_io.hpp"

namespace safd {

namespace {

std::string format_row(double lead, const auto& values) {
    std::ostringstream out;
    out.precision(17);
    out << lead;
    for (Eigen::Index i = 0; i < values.size(); ++i) out << ',' << values(i);
    out << '\n';
    return out.str();
}

}  // namespace

std::vector<std::string> model_channel_names(int channels) {
    if (channels == 1) return {"ABP"};
    if (channels == static_cast<int>(kChannelNames.size())) return {kChannelNames.begin(), kChannelNames.end()};
    std::vector<std::string> out;
    for (int c = 0; c < channels; ++c) out.push_back("ch" + std::to_string(c));
    return out;
}

std::string MaskExport::to_csv() const {
    std::string out = "freq_hz";
    for (const std::string& name : channel_names) out += "," + name;
    out += '\n';
    for (std::size_t f = 0; f < freqs_hz.size(); ++f) out += format_row(freqs_hz[f], mask.col(static_cast<Eigen::Index>(f)));
    return out;
}

std::string SensitivityMap::to_csv() const {
    std::string out = "t_s";
    for (const std::string& name : model_channel_names(static_cast<int>(saliency.rows()))) out += "," + name;
    out += '\n';
    for (Eigen::Index t = 0; t < saliency.cols(); ++t) out += format_row(static_cast<double>(t) / kModelRateHz, saliency.col(t));
    return out;
}

template <class S>
MaskExport export_filter_mask(const ModelParams<S>& params, double sample_rate_hz) {
    if (!uses_safb(params.ablation)) throw Unsupported("export_filter_mask: the no_safb model has no filter mask");
    MaskExport out;
    out.mask = sigmoid(params.filter.template cast<double>());
    out.channel_names = model_channel_names(params.hyper.channels);
    const double length = params.hyper.length;
    for (Eigen::Index f = 0; f < out.mask.cols(); ++f) out.freqs_hz.push_back(static_cast<double>(f) * sample_rate_hz / length);
    return out;
}

template <class S>
SensitivityMap sensitivity_map(const ModelParams<S>& params, const Matrix<S>& x) {
    if (!uses_attention(params.ablation)) {
        throw Unsupported("sensitivity_map: only the full and no_safb variants are supported, not " +
                          to_string(params.ablation));
    }
    const ForwardTrace<S> tr = forward_trace(params, x, Mode::Eval);
    ModelParams<S> scratch = params.zeros_like();
    BackwardExtras<S> extras;
    backward(params, tr, S(1), scratch, &extras);

    // Grad-CAM on the final conv activation A (d_s x T_s).
    const Matrix<double> a = tr.conv.back().out.template cast<double>();
    const Matrix<double> grad = extras.grad_last_conv.template cast<double>();
    const Eigen::VectorXd weights = grad.rowwise().mean();
    const Eigen::RowVectorXd cam = (weights.transpose() * a).cwiseMax(0.0);

    // Linear upsampling from T_s to T, aligning the first and last samples.
    const Eigen::Index ts = cam.size(), t_len = x.cols();
    Eigen::RowVectorXd up(t_len);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        const double pos = ts == 1 || t_len == 1 ? 0.0 : static_cast<double>(t) * static_cast<double>(ts - 1) / static_cast<double>(t_len - 1);
        const auto lo = static_cast<Eigen::Index>(pos);
        const Eigen::Index hi = std::min(lo + 1, ts - 1);
        up(t) = cam(lo) + (pos - static_cast<double>(lo)) * (cam(hi) - cam(lo));
    }

    // Channel weights from dlogit/dx in standardized units, so channels with
    // large raw amplitude are not discounted.
    const Matrix<double> grad_std =
        extras.grad_input.template cast<double>().array().colwise() / params.input_scale.template cast<double>().array();
    const Eigen::VectorXd norms = grad_std.rowwise().norm();
    const double max_norm = norms.maxCoeff();
    SensitivityMap out;
    out.prob = static_cast<double>(tr.prob);
    out.saliency = Matrix<double>::Zero(x.rows(), t_len);
    if (max_norm > 0.0) {
        for (Eigen::Index c = 0; c < x.rows(); ++c) out.saliency.row(c) = up * (norms(c) / max_norm);
    }
    return out;
}

template MaskExport export_filter_mask(const ModelParams<float>&, double);
template MaskExport export_filter_mask(const ModelParams<double>&, double);
template SensitivityMap sensitivity_map(const ModelParams<float>&, const Matrix<float>&);
template SensitivityMap sensitivity_map(const ModelParams<double>&, const Matrix<double>&);

}  // namespace safd
