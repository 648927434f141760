#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "safd/numerics.hpp"
#include "safd/rng.hpp"

namespace safd {

enum class Ablation { Full, NoSafb, NoCrossAttn, SinglePath };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& text);
inline constexpr Ablation kAllAblations[] = {Ablation::Full, Ablation::NoSafb, Ablation::NoCrossAttn,
                                             Ablation::SinglePath};

inline bool uses_safb(Ablation a) { return a != Ablation::NoSafb; }
inline bool uses_lstm(Ablation a) { return a != Ablation::SinglePath; }
inline bool uses_attention(Ablation a) { return a == Ablation::Full || a == Ablation::NoSafb; }

struct ConvSpec {
    int kernel = 5;
    int stride = 2;
    int out_channels = 32;

    bool operator==(const ConvSpec&) const = default;
};

struct HyperConfig {
    int channels = 4;
    int length = 3000;
    std::vector<ConvSpec> conv{{5, 2, 32}, {5, 2, 64}, {5, 2, 64}};
    int lstm_hidden = 64;
    int lstm_pool = 10;
    int d_k = 64;
    int d_v = 64;
    double dropout_p = 0.3;
    int horizon_min = 5;

    bool operator==(const HyperConfig&) const = default;

    /// Throws std::invalid_argument / ShapeError on inconsistent settings.
    void validate(Ablation ablation = Ablation::Full) const;

    Eigen::Index freq_bins() const { return half_spectrum_bins(length); }
    /// Output length of every conv layer; ShapeError names the failing layer.
    std::vector<int> conv_lengths() const;
    int cnn_length() const { return conv_lengths().back(); }
    int cnn_dim() const { return conv.back().out_channels; }
    int lstm_length() const;
    int head_inputs(Ablation ablation) const;
};

inline int conv_output_length(int in_length, const ConvSpec& spec) {
    const int pad = (spec.kernel - 1) / 2;
    return (in_length + 2 * pad - spec.kernel) / spec.stride + 1;
}

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Self-adaptive filter: x_hat = irfft(rfft(x) * sigmoid(w)) per channel.

template <class S>
struct SafbCache {
    ComplexSpectrum<S> spectrum;
    Matrix<S> mask;
};

template <class S>
Matrix<S> safb_forward(const Matrix<S>& x, const Matrix<S>& w, SafbCache<S>* cache = nullptr) {
    if (w.rows() != x.rows() || w.cols() != half_spectrum_bins(x.cols())) {
        throw ShapeError("safb: filter is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                         " but input needs " + std::to_string(x.rows()) + "x" +
                         std::to_string(half_spectrum_bins(x.cols())));
    }
    ComplexSpectrum<S> spectrum = rfft_rows(x);
    Matrix<S> mask = sigmoid(w);
    ComplexSpectrum<S> filtered = spectrum.array() * mask.template cast<std::complex<S>>().array();
    Matrix<S> out = irfft_rows(filtered, x.cols());
    if (cache) {
        cache->spectrum = std::move(spectrum);
        cache->mask = std::move(mask);
    }
    return out;
}

/// Accumulates dL/dw into `grad_w`; returns dL/dx when requested (else empty).
template <class S>
Matrix<S> safb_backward(const Matrix<S>& grad_out, const SafbCache<S>& cache, Matrix<S>& grad_w,
                        bool need_input_grad) {
    const Eigen::Index length = grad_out.cols();
    Matrix<S> grad_in;
    if (need_input_grad) grad_in.resize(grad_out.rows(), length);
    for (Eigen::Index c = 0; c < grad_out.rows(); ++c) {
        const ComplexVector<S> g_filtered = irfft_adjoint(grad_out.row(c).transpose());
        for (Eigen::Index f = 0; f < g_filtered.size(); ++f) {
            const std::complex<S> x = cache.spectrum(c, f);
            const S m = cache.mask(c, f);
            const S g_mask = x.real() * g_filtered(f).real() + x.imag() * g_filtered(f).imag();
            grad_w(c, f) += g_mask * m * (S(1) - m);
        }
        if (need_input_grad) {
            const ComplexVector<S> g_spectrum =
                g_filtered.array() * cache.mask.row(c).transpose().template cast<std::complex<S>>().array();
            grad_in.row(c) = rfft_adjoint(g_spectrum, length).transpose();
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// Strided 1-D convolution with "same" padding and ReLU.

template <class S>
struct ConvLayer {
    Matrix<S> weight;  // out x (in * kernel), input-channel major
    Matrix<S> bias;    // out x 1
};

template <class S>
struct ConvCache {
    Matrix<S> cols;
    Matrix<S> out;  // post-ReLU
    Eigen::Index in_length = 0;
};

namespace detail {

template <class S>
Matrix<S> im2col(const Matrix<S>& in, const ConvSpec& spec, int out_length) {
    const int pad = (spec.kernel - 1) / 2;
    const Eigen::Index in_len = in.cols();
    Matrix<S> cols = Matrix<S>::Zero(in.rows() * spec.kernel, out_length);
    for (Eigen::Index ci = 0; ci < in.rows(); ++ci) {
        for (int k = 0; k < spec.kernel; ++k) {
            auto dst = cols.row(ci * spec.kernel + k);
            for (int t = 0; t < out_length; ++t) {
                const Eigen::Index src = static_cast<Eigen::Index>(t) * spec.stride + k - pad;
                if (src >= 0 && src < in_len) dst(t) = in(ci, src);
            }
        }
    }
    return cols;
}

template <class S>
Matrix<S> col2im(const Matrix<S>& cols, const ConvSpec& spec, Eigen::Index channels, Eigen::Index in_len) {
    const int pad = (spec.kernel - 1) / 2;
    Matrix<S> in = Matrix<S>::Zero(channels, in_len);
    for (Eigen::Index ci = 0; ci < channels; ++ci) {
        for (int k = 0; k < spec.kernel; ++k) {
            const auto src = cols.row(ci * spec.kernel + k);
            for (Eigen::Index t = 0; t < cols.cols(); ++t) {
                const Eigen::Index dst = t * spec.stride + k - pad;
                if (dst >= 0 && dst < in_len) in(ci, dst) += src(t);
            }
        }
    }
    return in;
}

}  // namespace detail

template <class S>
Matrix<S> conv_forward(const Matrix<S>& in, const ConvLayer<S>& layer, const ConvSpec& spec,
                       ConvCache<S>* cache = nullptr) {
    if (layer.weight.cols() != in.rows() * spec.kernel) throw ShapeError("conv: weight does not match input channels");
    const int out_len = conv_output_length(static_cast<int>(in.cols()), spec);
    Matrix<S> cols = detail::im2col(in, spec, out_len);
    Matrix<S> out = layer.weight * cols;
    out.colwise() += layer.bias.col(0);
    out = out.cwiseMax(S(0));
    if (cache) {
        cache->cols = std::move(cols);
        cache->out = out;
        cache->in_length = in.cols();
    }
    return out;
}

template <class S>
Matrix<S> conv_backward(const Matrix<S>& grad_out, const ConvLayer<S>& layer, const ConvSpec& spec,
                        const ConvCache<S>& cache, ConvLayer<S>& grads, bool need_input_grad) {
    const Matrix<S> grad_pre = (cache.out.array() > S(0)).select(grad_out, S(0));
    grads.weight.noalias() += grad_pre * cache.cols.transpose();
    grads.bias.col(0) += grad_pre.rowwise().sum();
    if (!need_input_grad) return {};
    const Matrix<S> grad_cols = layer.weight.transpose() * grad_pre;
    return detail::col2im(grad_cols, spec, layer.weight.cols() / spec.kernel, cache.in_length);
}

// ---------------------------------------------------------------------------
// Time-pooled single-layer LSTM (gate order i, f, g, o).

template <class S>
struct LstmWeights {
    Matrix<S> w_ih;  // 4H x C
    Matrix<S> w_hh;  // 4H x H
    Matrix<S> bias;  // 4H x 1
};

template <class S>
struct LstmCache {
    Matrix<S> pooled;  // C x T_l
    Matrix<S> gates;   // T_l x 4H, post-activation
    Matrix<S> cells;   // T_l x H
    Matrix<S> hidden;  // T_l x H
    Eigen::Index in_length = 0;
};

/// Block average over `pool` samples; a trailing remainder is dropped.
template <class S>
Matrix<S> avg_pool_time(const Matrix<S>& x, int pool) {
    const Eigen::Index out_len = x.cols() / pool;
    Matrix<S> out(x.rows(), out_len);
    for (Eigen::Index t = 0; t < out_len; ++t) {
        out.col(t) = x.middleCols(t * pool, pool).rowwise().sum() / static_cast<S>(pool);
    }
    return out;
}

template <class S>
Matrix<S> lstm_forward(const Matrix<S>& x, const LstmWeights<S>& w, int pool, LstmCache<S>* cache = nullptr) {
    const Eigen::Index hidden = w.w_hh.cols();
    Matrix<S> pooled = avg_pool_time(x, pool);
    const Eigen::Index steps = pooled.cols();
    if (steps < 1) throw ShapeError("lstm: input length " + std::to_string(x.cols()) + " shorter than pool factor");

    Matrix<S> pre_in = pooled.transpose() * w.w_ih.transpose();  // T_l x 4H
    pre_in.rowwise() += w.bias.col(0).transpose();

    Matrix<S> gates(steps, 4 * hidden);
    Matrix<S> cells(steps, hidden);
    Matrix<S> out(steps, hidden);
    Vector<S> h = Vector<S>::Zero(hidden);
    Vector<S> c = Vector<S>::Zero(hidden);
    for (Eigen::Index t = 0; t < steps; ++t) {
        Vector<S> a = pre_in.row(t).transpose() + w.w_hh * h;
        for (Eigen::Index j = 0; j < hidden; ++j) {
            a(j) = sigmoid(a(j));
            a(hidden + j) = sigmoid(a(hidden + j));
            a(2 * hidden + j) = std::tanh(a(2 * hidden + j));
            a(3 * hidden + j) = sigmoid(a(3 * hidden + j));
        }
        c = a.segment(hidden, hidden).cwiseProduct(c) + a.head(hidden).cwiseProduct(a.segment(2 * hidden, hidden));
        h = a.tail(hidden).cwiseProduct(c.array().tanh().matrix());
        gates.row(t) = a.transpose();
        cells.row(t) = c.transpose();
        out.row(t) = h.transpose();
    }
    if (cache) {
        cache->pooled = std::move(pooled);
        cache->gates = std::move(gates);
        cache->cells = std::move(cells);
        cache->hidden = out;
        cache->in_length = x.cols();
    }
    return out;
}

template <class S>
Matrix<S> lstm_backward(const Matrix<S>& grad_out, const LstmWeights<S>& w, int pool, const LstmCache<S>& cache,
                        LstmWeights<S>& grads, bool need_input_grad) {
    const Eigen::Index hidden = w.w_hh.cols();
    const Eigen::Index steps = cache.gates.rows();
    Matrix<S> d_pre(steps, 4 * hidden);
    Vector<S> dh_next = Vector<S>::Zero(hidden);
    Vector<S> dc_next = Vector<S>::Zero(hidden);
    for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const auto a = cache.gates.row(t);
        const Vector<S> dh = grad_out.row(t).transpose() + dh_next;
        Vector<S> da(4 * hidden);
        Vector<S> dc(hidden);
        for (Eigen::Index j = 0; j < hidden; ++j) {
            const S i = a(j), f = a(hidden + j), g = a(2 * hidden + j), o = a(3 * hidden + j);
            const S c = cache.cells(t, j);
            const S c_prev = t > 0 ? cache.cells(t - 1, j) : S(0);
            const S tc = std::tanh(c);
            const S d_c = dc_next(j) + dh(j) * o * (S(1) - tc * tc);
            da(j) = d_c * g * i * (S(1) - i);
            da(hidden + j) = d_c * c_prev * f * (S(1) - f);
            da(2 * hidden + j) = d_c * i * (S(1) - g * g);
            da(3 * hidden + j) = dh(j) * tc * o * (S(1) - o);
            dc(j) = d_c * f;
        }
        d_pre.row(t) = da.transpose();
        dh_next.noalias() = w.w_hh.transpose() * da;
        dc_next = dc;
    }

    Matrix<S> h_prev = Matrix<S>::Zero(steps, hidden);
    if (steps > 1) h_prev.bottomRows(steps - 1) = cache.hidden.topRows(steps - 1);
    grads.w_ih.noalias() += d_pre.transpose() * cache.pooled.transpose();
    grads.w_hh.noalias() += d_pre.transpose() * h_prev;
    grads.bias.col(0) += d_pre.colwise().sum().transpose();
    if (!need_input_grad) return {};

    const Matrix<S> d_pooled = w.w_ih.transpose() * d_pre.transpose();  // C x T_l
    Matrix<S> grad_in = Matrix<S>::Zero(d_pooled.rows(), cache.in_length);
    const S inv = S(1) / static_cast<S>(pool);
    for (Eigen::Index t = 0; t < steps; ++t) {
        for (int k = 0; k < pool; ++k) grad_in.col(t * pool + k) = d_pooled.col(t) * inv;
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// Scaled dot-product cross attention: softmax(Q K^T / sqrt(d_k)) V.

template <class S>
struct AttentionProj {
    Matrix<S> w_q;  // d_query x d_k
    Matrix<S> w_k;  // d_kv x d_k
    Matrix<S> w_v;  // d_kv x d_v
};

template <class S>
struct AttentionCache {
    Matrix<S> q, k, v, probs;
};

template <class S>
Matrix<S> cross_attention(const Matrix<S>& query, const Matrix<S>& kv, const AttentionProj<S>& proj,
                          AttentionCache<S>* cache = nullptr) {
    if (query.cols() != proj.w_q.rows() || kv.cols() != proj.w_k.rows() || kv.cols() != proj.w_v.rows() ||
        proj.w_q.cols() != proj.w_k.cols()) {
        throw ShapeError("cross_attention: projection shapes do not match the feature matrices");
    }
    Matrix<S> q = query * proj.w_q;
    Matrix<S> k = kv * proj.w_k;
    Matrix<S> v = kv * proj.w_v;
    const S scale = S(1) / std::sqrt(static_cast<S>(proj.w_q.cols()));
    Matrix<S> probs = softmax_rows<S>((q * k.transpose()) * scale);
    Matrix<S> out = probs * v;
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
    }
    return out;
}

/// Accumulates projection gradients and adds dL/dquery, dL/dkv into the given outputs.
template <class S>
void cross_attention_backward(const Matrix<S>& grad_out, const Matrix<S>& query, const Matrix<S>& kv,
                              const AttentionProj<S>& proj, const AttentionCache<S>& cache,
                              AttentionProj<S>& grads, Matrix<S>& grad_query, Matrix<S>& grad_kv) {
    const S scale = S(1) / std::sqrt(static_cast<S>(proj.w_q.cols()));
    const Matrix<S> grad_probs = grad_out * cache.v.transpose();
    const Matrix<S> grad_v = cache.probs.transpose() * grad_out;
    const Matrix<S> grad_scores = softmax_rows_backward(cache.probs, grad_probs) * scale;
    const Matrix<S> grad_q = grad_scores * cache.k;
    const Matrix<S> grad_k = grad_scores.transpose() * cache.q;
    grads.w_q.noalias() += query.transpose() * grad_q;
    grads.w_k.noalias() += kv.transpose() * grad_k;
    grads.w_v.noalias() += kv.transpose() * grad_v;
    grad_query.noalias() += grad_q * proj.w_q.transpose();
    grad_kv.noalias() += grad_k * proj.w_k.transpose() + grad_v * proj.w_v.transpose();
}

// ---------------------------------------------------------------------------
// Parameters

template <class S>
struct ModelParams {
    HyperConfig hyper;
    Ablation ablation = Ablation::Full;

    // Fixed per-channel input standardization (not trained).
    Vector<S> input_offset;
    Vector<S> input_scale;

    Matrix<S> filter;  // C x F
    std::vector<ConvLayer<S>> conv;
    LstmWeights<S> lstm;
    AttentionProj<S> s2l;  // CNN queries LSTM
    AttentionProj<S> l2s;  // LSTM queries CNN
    Matrix<S> head_w;      // d_f x 1
    Matrix<S> head_b;      // 1 x 1

    /// Visits the trainable tensors of the active ablation in checkpoint order.
    template <class Fn>
    void for_each(Fn&& fn) {
        visit(*this, fn);
    }
    template <class Fn>
    void for_each(Fn&& fn) const {
        visit(*this, fn);
    }

    /// Same structure with every trainable tensor zeroed.
    ModelParams zeros_like() const {
        ModelParams out = *this;
        out.for_each([](const std::string&, Matrix<S>& m) { m.setZero(); });
        return out;
    }

    template <class T>
    ModelParams<T> cast() const {
        ModelParams<T> out;
        out.hyper = hyper;
        out.ablation = ablation;
        out.input_offset = input_offset.template cast<T>();
        out.input_scale = input_scale.template cast<T>();
        out.filter = filter.template cast<T>();
        out.conv.resize(conv.size());
        for (std::size_t i = 0; i < conv.size(); ++i) {
            out.conv[i].weight = conv[i].weight.template cast<T>();
            out.conv[i].bias = conv[i].bias.template cast<T>();
        }
        out.lstm = {lstm.w_ih.template cast<T>(), lstm.w_hh.template cast<T>(), lstm.bias.template cast<T>()};
        out.s2l = {s2l.w_q.template cast<T>(), s2l.w_k.template cast<T>(), s2l.w_v.template cast<T>()};
        out.l2s = {l2s.w_q.template cast<T>(), l2s.w_k.template cast<T>(), l2s.w_v.template cast<T>()};
        out.head_w = head_w.template cast<T>();
        out.head_b = head_b.template cast<T>();
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Matrix<S>& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }

private:
    template <class Self, class Fn>
    static void visit(Self& self, Fn& fn) {
        if (uses_safb(self.ablation)) fn(std::string("filter.w"), self.filter);
        for (std::size_t i = 0; i < self.conv.size(); ++i) {
            fn("conv" + std::to_string(i) + ".weight", self.conv[i].weight);
            fn("conv" + std::to_string(i) + ".bias", self.conv[i].bias);
        }
        if (uses_lstm(self.ablation)) {
            fn(std::string("lstm.w_ih"), self.lstm.w_ih);
            fn(std::string("lstm.w_hh"), self.lstm.w_hh);
            fn(std::string("lstm.bias"), self.lstm.bias);
        }
        if (uses_attention(self.ablation)) {
            fn(std::string("attn_s2l.w_q"), self.s2l.w_q);
            fn(std::string("attn_s2l.w_k"), self.s2l.w_k);
            fn(std::string("attn_s2l.w_v"), self.s2l.w_v);
            fn(std::string("attn_l2s.w_q"), self.l2s.w_q);
            fn(std::string("attn_l2s.w_k"), self.l2s.w_k);
            fn(std::string("attn_l2s.w_v"), self.l2s.w_v);
        }
        fn(std::string("head.w"), self.head_w);
        fn(std::string("head.b"), self.head_b);
    }
};

/// Shapes (rows, cols) of every trainable tensor, in for_each order.
std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> expected_shapes(const HyperConfig& hyper,
                                                                                           Ablation ablation);

namespace detail {
/// Seeded initialization in double precision: uniform +-sqrt(1/fan_in),
/// forget-gate bias 1, filter weights 0, identity input standardization.
ModelParams<double> init_params_f64(const HyperConfig& hyper, Ablation ablation, std::uint64_t seed);
}  // namespace detail

template <class S>
ModelParams<S> init_params(const HyperConfig& hyper, Ablation ablation, std::uint64_t seed) {
    if constexpr (std::is_same_v<S, double>) {
        return detail::init_params_f64(hyper, ablation, seed);
    } else {
        return detail::init_params_f64(hyper, ablation, seed).template cast<S>();
    }
}

// ---------------------------------------------------------------------------
// Forward / backward over the whole network

template <class S>
struct ForwardTrace {
    Matrix<S> normalized;
    SafbCache<S> safb;
    Matrix<S> filtered;
    std::vector<ConvCache<S>> conv;
    Matrix<S> h_cnn;  // T_s x d_s
    LstmCache<S> lstm;
    Matrix<S> h_lstm;  // T_l x d_l
    AttentionCache<S> s2l_cache, l2s_cache;
    Matrix<S> a_s2l, a_l2s;
    Vector<S> fused;
    Vector<S> dropout_scale;  // empty in eval mode
    S logit = S(0);
    S prob = S(0);
};

namespace detail {

template <class S>
void append_flat(Vector<S>& out, Eigen::Index& at, const Matrix<S>& m) {
    out.segment(at, m.size()) = m.template reshaped<Eigen::RowMajor>();
    at += m.size();
}

template <class S>
Matrix<S> take_flat(const Vector<S>& v, Eigen::Index& at, Eigen::Index rows, Eigen::Index cols) {
    Matrix<S> m = v.segment(at, rows * cols).template reshaped<Eigen::RowMajor>(rows, cols);
    at += rows * cols;
    return m;
}

}  // namespace detail

/// Dropout (inverted scaling, train only), linear layer and sigmoid over the
/// concatenated feature vector. Returns the probability; `logit` is optional.
template <class S>
S fuse_and_classify(const Matrix<S>& a_s2l, const Matrix<S>& a_l2s, const Matrix<S>& head_w, const Matrix<S>& head_b,
                    bool dropout_active, double dropout_p, Rng* rng = nullptr, S* logit = nullptr) {
    Vector<S> fused(a_s2l.size() + a_l2s.size());
    Eigen::Index at = 0;
    detail::append_flat(fused, at, a_s2l);
    detail::append_flat(fused, at, a_l2s);
    if (head_w.rows() != fused.size()) throw ShapeError("fuse_and_classify: head expects " + std::to_string(head_w.rows()) +
                                                        " features, got " + std::to_string(fused.size()));
    if (dropout_active && dropout_p > 0.0) {
        if (!rng) throw std::invalid_argument("fuse_and_classify: dropout needs an RNG");
        const S keep = S(1) / static_cast<S>(1.0 - dropout_p);
        for (Eigen::Index i = 0; i < fused.size(); ++i) fused(i) *= rng->uniform() < dropout_p ? S(0) : keep;
    }
    const S z = fused.dot(head_w.col(0)) + head_b(0, 0);
    if (logit) *logit = z;
    return sigmoid(z);
}

template <class S>
ForwardTrace<S> forward_trace(const ModelParams<S>& params, const Matrix<S>& x, Mode mode, Rng* dropout_rng = nullptr) {
    const HyperConfig& hp = params.hyper;
    if (x.rows() != hp.channels || x.cols() != hp.length) {
        throw ShapeError("forward: input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                         ", model expects " + std::to_string(hp.channels) + "x" + std::to_string(hp.length));
    }
    ForwardTrace<S> tr;
    tr.normalized = (x.colwise() - params.input_offset).array().colwise() * params.input_scale.array();
    tr.filtered = uses_safb(params.ablation) ? safb_forward(tr.normalized, params.filter, &tr.safb) : tr.normalized;

    tr.conv.resize(params.conv.size());
    const Matrix<S>* in = &tr.filtered;
    for (std::size_t i = 0; i < params.conv.size(); ++i) {
        conv_forward(*in, params.conv[i], hp.conv[i], &tr.conv[i]);
        in = &tr.conv[i].out;
    }
    tr.h_cnn = tr.conv.back().out.transpose();

    if (uses_lstm(params.ablation)) tr.h_lstm = lstm_forward(tr.filtered, params.lstm, hp.lstm_pool, &tr.lstm);

    if (uses_attention(params.ablation)) {
        tr.a_s2l = cross_attention(tr.h_cnn, tr.h_lstm, params.s2l, &tr.s2l_cache);
        tr.a_l2s = cross_attention(tr.h_lstm, tr.h_cnn, params.l2s, &tr.l2s_cache);
    }

    const Matrix<S>& first = uses_attention(params.ablation) ? tr.a_s2l : tr.h_cnn;
    const Matrix<S>& second = uses_attention(params.ablation) ? tr.a_l2s : tr.h_lstm;
    tr.fused.resize(first.size() + second.size());
    Eigen::Index at = 0;
    detail::append_flat(tr.fused, at, first);
    if (second.size() > 0) detail::append_flat(tr.fused, at, second);
    if (params.head_w.rows() != tr.fused.size()) throw ShapeError("forward: head size does not match fused features");

    Vector<S> features = tr.fused;
    if (mode == Mode::Train && hp.dropout_p > 0.0) {
        if (!dropout_rng) throw std::invalid_argument("forward: train mode needs a dropout RNG");
        const S keep = S(1) / static_cast<S>(1.0 - hp.dropout_p);
        tr.dropout_scale.resize(features.size());
        for (Eigen::Index i = 0; i < features.size(); ++i) {
            tr.dropout_scale(i) = dropout_rng->uniform() < hp.dropout_p ? S(0) : keep;
        }
        features.array() *= tr.dropout_scale.array();
    }
    tr.logit = features.dot(params.head_w.col(0)) + params.head_b(0, 0);
    tr.prob = sigmoid(tr.logit);
    return tr;
}

template <class S>
S forward(const ModelParams<S>& params, const Matrix<S>& x, Mode mode = Mode::Eval, Rng* dropout_rng = nullptr) {
    return forward_trace(params, x, mode, dropout_rng).prob;
}

template <class S>
struct BackwardExtras {
    Matrix<S> grad_input;        // dL/dx for the raw (unnormalized) input
    Matrix<S> grad_last_conv;    // dL/d(final conv activation), d_s x T_s
};

/// Accumulates parameter gradients of a loss with dL/dlogit = grad_logit
/// into `grads` (shaped like `params`, typically from zeros_like()).
template <class S>
void backward(const ModelParams<S>& params, const ForwardTrace<S>& tr, S grad_logit, ModelParams<S>& grads,
              BackwardExtras<S>* extras = nullptr) {
    const HyperConfig& hp = params.hyper;
    const Ablation ab = params.ablation;

    Vector<S> g_features = params.head_w.col(0) * grad_logit;
    grads.head_w.col(0) += (tr.dropout_scale.size() > 0 ? Vector<S>(tr.fused.cwiseProduct(tr.dropout_scale)) : tr.fused) *
                           grad_logit;
    grads.head_b(0, 0) += grad_logit;
    if (tr.dropout_scale.size() > 0) g_features.array() *= tr.dropout_scale.array();

    const Eigen::Index ts = tr.h_cnn.rows(), ds = tr.h_cnn.cols();
    const Eigen::Index tl = tr.h_lstm.rows(), dl = tr.h_lstm.cols();
    Matrix<S> g_cnn = Matrix<S>::Zero(ts, ds);
    Matrix<S> g_lstm = Matrix<S>::Zero(tl, dl);

    Eigen::Index at = 0;
    if (uses_attention(ab)) {
        const Matrix<S> g_s2l = detail::take_flat(g_features, at, tr.a_s2l.rows(), tr.a_s2l.cols());
        const Matrix<S> g_l2s = detail::take_flat(g_features, at, tr.a_l2s.rows(), tr.a_l2s.cols());
        cross_attention_backward(g_s2l, tr.h_cnn, tr.h_lstm, params.s2l, tr.s2l_cache, grads.s2l, g_cnn, g_lstm);
        cross_attention_backward(g_l2s, tr.h_lstm, tr.h_cnn, params.l2s, tr.l2s_cache, grads.l2s, g_lstm, g_cnn);
    } else {
        g_cnn += detail::take_flat(g_features, at, ts, ds);
        if (uses_lstm(ab)) g_lstm += detail::take_flat(g_features, at, tl, dl);
    }

    const bool need_filtered_grad = uses_safb(ab) || extras != nullptr;
    Matrix<S> g_filtered;
    if (uses_lstm(ab)) {
        g_filtered = lstm_backward(g_lstm, params.lstm, hp.lstm_pool, tr.lstm, grads.lstm, need_filtered_grad);
    }

    Matrix<S> g_conv = g_cnn.transpose();
    if (extras) extras->grad_last_conv = g_conv;
    for (std::size_t i = params.conv.size(); i-- > 0;) {
        const bool need_in = i > 0 || need_filtered_grad;
        g_conv = conv_backward(g_conv, params.conv[i], hp.conv[i], tr.conv[i], grads.conv[i], need_in);
    }
    if (need_filtered_grad) {
        if (g_filtered.size() == 0) {
            g_filtered = std::move(g_conv);
        } else {
            g_filtered += g_conv;
        }
    }

    Matrix<S> g_normalized;
    if (uses_safb(ab)) {
        g_normalized = safb_backward(g_filtered, tr.safb, grads.filter, extras != nullptr);
    } else if (extras) {
        g_normalized = std::move(g_filtered);
    }
    if (extras) extras->grad_input = g_normalized.array().colwise() * params.input_scale.array();
}

}  // namespace safd
