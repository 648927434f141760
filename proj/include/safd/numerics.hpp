#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <string>
#include <type_traits>

#include "safd/errors.hpp"

namespace safd {

/// Row-major dense matrix; the (C, T) waveform layout and every real
/// intermediate of the model live in this type.
template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Half spectrum of real rows: shape (C, floor(T/2) + 1).
template <class S>
using ComplexSpectrum = Eigen::Matrix<std::complex<S>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using ComplexVector = Eigen::Matrix<std::complex<S>, Eigen::Dynamic, 1>;

inline Eigen::Index half_spectrum_bins(Eigen::Index length) { return length / 2 + 1; }

namespace detail {

// Eigen::FFT caches twiddles internally; one instance per thread keeps the
// free functions below reentrant.
template <class S>
Eigen::FFT<S>& fft_engine() {
    thread_local Eigen::FFT<S> engine = [] {
        Eigen::FFT<S> e;
        e.SetFlag(Eigen::FFT<S>::HalfSpectrum);
        return e;
    }();
    return engine;
}

}  // namespace detail

/// Unnormalized forward real FFT. Bin 0 holds the sum of samples.
template <class Derived>
ComplexVector<typename Derived::Scalar> rfft(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    const Eigen::Index n = x.size();
    if (n < 2) throw InvalidLength("rfft: length must be >= 2, got " + std::to_string(n));
    Vector<S> buf = x.reshaped();
    ComplexVector<S> out(half_spectrum_bins(n));
    detail::fft_engine<S>().fwd(out.data(), buf.data(), n);
    return out;
}

/// Inverse of rfft with 1/T scaling. Imaginary parts of bin 0 and of the
/// Nyquist bin (even T) do not contribute to the real output.
template <class Derived>
Vector<typename Derived::Scalar::value_type> irfft(const Eigen::MatrixBase<Derived>& spectrum,
                                                    Eigen::Index length) {
    using S = typename Derived::Scalar::value_type;
    if (length < 2) throw InvalidLength("irfft: length must be >= 2, got " + std::to_string(length));
    if (spectrum.size() != half_spectrum_bins(length)) {
        throw InvalidLength("irfft: expected " + std::to_string(half_spectrum_bins(length)) +
                            " bins for length " + std::to_string(length) + ", got " +
                            std::to_string(spectrum.size()));
    }
    ComplexVector<S> buf = spectrum.reshaped();
    buf(0) = std::complex<S>(buf(0).real(), S(0));
    if (length % 2 == 0) buf(buf.size() - 1) = std::complex<S>(buf(buf.size() - 1).real(), S(0));
    Vector<S> out(length);
    detail::fft_engine<S>().inv(out.data(), buf.data(), length);
    return out;
}

/// Hermitian weight of a half-spectrum bin: 1 for DC and Nyquist, 2 otherwise.
inline int hermitian_weight(Eigen::Index bin, Eigen::Index length) {
    if (bin == 0) return 1;
    if (length % 2 == 0 && bin == length / 2) return 1;
    return 2;
}

/// Adjoint of rfft viewed as a real-linear map R^T -> C^F (C as R^2).
/// `grad` carries dL/dRe + i dL/dIm per bin; the result is dL/dx.
template <class Derived>
Vector<typename Derived::Scalar::value_type> rfft_adjoint(const Eigen::MatrixBase<Derived>& grad,
                                                           Eigen::Index length) {
    using S = typename Derived::Scalar::value_type;
    ComplexVector<S> scaled = grad.reshaped();
    for (Eigen::Index f = 0; f < scaled.size(); ++f) {
        if (hermitian_weight(f, length) == 2) scaled(f) *= S(0.5);
    }
    return irfft(scaled, length) * static_cast<S>(length);
}

/// Adjoint of irfft: maps dL/dy (length T) to dL/dRe + i dL/dIm per bin.
template <class Derived>
ComplexVector<typename Derived::Scalar> irfft_adjoint(const Eigen::MatrixBase<Derived>& grad) {
    using S = typename Derived::Scalar;
    const Eigen::Index length = grad.size();
    ComplexVector<S> g = rfft(grad);
    for (Eigen::Index f = 0; f < g.size(); ++f) {
        g(f) *= static_cast<S>(hermitian_weight(f, length)) / static_cast<S>(length);
    }
    g(0) = std::complex<S>(g(0).real(), S(0));
    if (length % 2 == 0) g(g.size() - 1) = std::complex<S>(g(g.size() - 1).real(), S(0));
    return g;
}

/// Row-wise rfft of a (C, T) matrix.
template <class S>
ComplexSpectrum<S> rfft_rows(const Matrix<S>& x) {
    ComplexSpectrum<S> out(x.rows(), half_spectrum_bins(x.cols()));
    for (Eigen::Index c = 0; c < x.rows(); ++c) out.row(c) = rfft(x.row(c)).transpose();
    return out;
}

template <class S>
Matrix<S> irfft_rows(const ComplexSpectrum<S>& spectrum, Eigen::Index length) {
    Matrix<S> out(spectrum.rows(), length);
    for (Eigen::Index c = 0; c < spectrum.rows(); ++c) out.row(c) = irfft(spectrum.row(c), length).transpose();
    return out;
}

template <class S>
    requires std::is_floating_point_v<S>
S sigmoid(S z) {
    if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
    const S e = std::exp(z);
    return e / (S(1) + e);
}

template <class Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& z) {
    using S = typename Derived::Scalar;
    return z.unaryExpr([](S v) { return sigmoid(v); });
}

/// Row-wise softmax, max-shifted.
template <class S>
Matrix<S> softmax_rows(const Matrix<S>& logits) {
    Matrix<S> out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const S m = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

/// Backward of row-wise softmax given its output and the upstream gradient.
template <class S>
Matrix<S> softmax_rows_backward(const Matrix<S>& probs, const Matrix<S>& grad_out) {
    Matrix<S> out(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const S dot = probs.row(i).dot(grad_out.row(i));
        out.row(i) = probs.row(i).array() * (grad_out.row(i).array() - dot);
    }
    return out;
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

using ParamMap = std::map<std::string, Matrix<double>>;

/// A scalar function of named parameters together with its analytic gradient.
struct DifferentiableFn {
    std::function<double(const ParamMap&)> value;
    std::function<ParamMap(const ParamMap&)> gradient;
};

struct GradCheckReport {
    std::string op_name;
    double max_rel_err = 0.0;
    std::map<std::string, double> per_param_err;
    double tolerance = 0.0;
    bool passed = false;
};

/// Compares analytic gradients with central differences for every scalar
/// parameter. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator.
GradCheckReport gradcheck(const std::string& op_name, const DifferentiableFn& fn, const ParamMap& params,
                          double eps = 1e-6, double tol = 1e-5);

}  // namespace safd
