#include "safd/model.hpp"

#include <stdexcept>

namespace safd {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::NoSafb: return "no_safb";
        case Ablation::NoCrossAttn: return "no_cross_attn";
        case Ablation::SinglePath: return "single_path";
    }
    return "full";
}

Ablation parse_ablation(const std::string& text) {
    for (Ablation a : kAllAblations) {
        if (to_string(a) == text) return a;
    }
    throw std::invalid_argument("unknown ablation '" + text + "' (expected full, no_safb, no_cross_attn, single_path)");
}

void HyperConfig::validate(Ablation ablation) const {
    if (channels < 1) throw std::invalid_argument("hyper: channels must be >= 1");
    if (length < 2) throw std::invalid_argument("hyper: length must be >= 2");
    if (conv.empty()) throw std::invalid_argument("hyper: conv stack must have at least one layer");
    for (const ConvSpec& s : conv) {
        if (s.kernel < 1 || s.stride < 1 || s.out_channels < 1) {
            throw std::invalid_argument("hyper: conv kernel, stride and out_channels must be >= 1");
        }
    }
    if (lstm_hidden < 1 || lstm_pool < 1) throw std::invalid_argument("hyper: lstm_hidden and lstm_pool must be >= 1");
    if (d_k < 1 || d_v < 1) throw std::invalid_argument("hyper: d_k and d_v must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("hyper: dropout_p must be in [0, 1)");
    conv_lengths();
    if (uses_lstm(ablation)) lstm_length();
}

std::vector<int> HyperConfig::conv_lengths() const {
    std::vector<int> out;
    int len = length;
    for (std::size_t i = 0; i < conv.size(); ++i) {
        if (len < conv[i].kernel) {
            throw ShapeError("conv layer " + std::to_string(i) + ": input length " + std::to_string(len) +
                             " is shorter than kernel " + std::to_string(conv[i].kernel));
        }
        len = conv_output_length(len, conv[i]);
        out.push_back(len);
    }
    return out;
}

int HyperConfig::lstm_length() const {
    const int n = length / lstm_pool;
    if (n < 1) {
        throw ShapeError("lstm: input length " + std::to_string(length) + " is shorter than pool factor " +
                         std::to_string(lstm_pool));
    }
    return n;
}

int HyperConfig::head_inputs(Ablation ablation) const {
    const int ts = cnn_length();
    switch (ablation) {
        case Ablation::Full:
        case Ablation::NoSafb: return ts * d_v + lstm_length() * d_v;
        case Ablation::NoCrossAttn: return ts * cnn_dim() + lstm_length() * lstm_hidden;
        case Ablation::SinglePath: return ts * cnn_dim();
    }
    return 0;
}

std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> expected_shapes(const HyperConfig& hp,
                                                                                           Ablation ablation) {
    std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> out;
    auto add = [&](std::string name, Eigen::Index r, Eigen::Index c) { out.push_back({std::move(name), {r, c}}); };
    const Eigen::Index ds = hp.cnn_dim(), dl = hp.lstm_hidden;
    if (uses_safb(ablation)) add("filter.w", hp.channels, hp.freq_bins());
    int in = hp.channels;
    for (std::size_t i = 0; i < hp.conv.size(); ++i) {
        add("conv" + std::to_string(i) + ".weight", hp.conv[i].out_channels, in * hp.conv[i].kernel);
        add("conv" + std::to_string(i) + ".bias", hp.conv[i].out_channels, 1);
        in = hp.conv[i].out_channels;
    }
    if (uses_lstm(ablation)) {
        add("lstm.w_ih", 4 * dl, hp.channels);
        add("lstm.w_hh", 4 * dl, dl);
        add("lstm.bias", 4 * dl, 1);
    }
    if (uses_attention(ablation)) {
        add("attn_s2l.w_q", ds, hp.d_k);
        add("attn_s2l.w_k", dl, hp.d_k);
        add("attn_s2l.w_v", dl, hp.d_v);
        add("attn_l2s.w_q", dl, hp.d_k);
        add("attn_l2s.w_k", ds, hp.d_k);
        add("attn_l2s.w_v", ds, hp.d_v);
    }
    add("head.w", hp.head_inputs(ablation), 1);
    add("head.b", 1, 1);
    return out;
}

namespace detail {

namespace {

// Each tensor draws from its own stream keyed by name, so tensors shared
// between ablation variants start from identical values.
Matrix<double> uniform_init(std::uint64_t seed, const std::string& name, Eigen::Index rows, Eigen::Index cols,
                            double fan_in) {
    Rng rng(derive_seed(seed, fnv1a64(name)));
    const double bound = std::sqrt(1.0 / fan_in);
    Matrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return m;
}

}  // namespace

ModelParams<double> init_params_f64(const HyperConfig& hp, Ablation ablation, std::uint64_t seed) {
    hp.validate(ablation);
    ModelParams<double> p;
    p.hyper = hp;
    p.ablation = ablation;
    p.input_offset = Vector<double>::Zero(hp.channels);
    p.input_scale = Vector<double>::Ones(hp.channels);

    const Eigen::Index ds = hp.cnn_dim(), dl = hp.lstm_hidden;
    if (uses_safb(ablation)) p.filter = Matrix<double>::Zero(hp.channels, hp.freq_bins());

    int in = hp.channels;
    for (std::size_t i = 0; i < hp.conv.size(); ++i) {
        const ConvSpec& s = hp.conv[i];
        const double fan_in = static_cast<double>(in) * s.kernel;
        const std::string prefix = "conv" + std::to_string(i);
        p.conv.push_back({uniform_init(seed, prefix + ".weight", s.out_channels, in * s.kernel, fan_in),
                          uniform_init(seed, prefix + ".bias", s.out_channels, 1, fan_in)});
        in = s.out_channels;
    }
    if (uses_lstm(ablation)) {
        p.lstm.w_ih = uniform_init(seed, "lstm.w_ih", 4 * dl, hp.channels, hp.channels);
        p.lstm.w_hh = uniform_init(seed, "lstm.w_hh", 4 * dl, dl, static_cast<double>(dl));
        p.lstm.bias = uniform_init(seed, "lstm.bias", 4 * dl, 1, static_cast<double>(dl));
        p.lstm.bias.middleRows(dl, dl).setOnes();
    }
    if (uses_attention(ablation)) {
        p.s2l.w_q = uniform_init(seed, "attn_s2l.w_q", ds, hp.d_k, static_cast<double>(ds));
        p.s2l.w_k = uniform_init(seed, "attn_s2l.w_k", dl, hp.d_k, static_cast<double>(dl));
        p.s2l.w_v = uniform_init(seed, "attn_s2l.w_v", dl, hp.d_v, static_cast<double>(dl));
        p.l2s.w_q = uniform_init(seed, "attn_l2s.w_q", dl, hp.d_k, static_cast<double>(dl));
        p.l2s.w_k = uniform_init(seed, "attn_l2s.w_k", ds, hp.d_k, static_cast<double>(ds));
        p.l2s.w_v = uniform_init(seed, "attn_l2s.w_v", ds, hp.d_v, static_cast<double>(ds));
    }
    const int d_f = hp.head_inputs(ablation);
    p.head_w = uniform_init(seed, "head.w", d_f, 1, d_f);
    p.head_b = uniform_init(seed, "head.b", 1, 1, d_f);
    return p;
}

}  // namespace detail

}  // namespace safd
