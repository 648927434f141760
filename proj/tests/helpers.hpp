#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "safd/model.hpp"
#include "safd/numerics.hpp"
#include "safd/rng.hpp"

namespace testing {

using safd::Matrix;

inline Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
    safd::Rng rng(seed);
    Matrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

/// Direct O(T^2) DFT of a real vector, half spectrum.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n / 2 + 1);
    for (std::size_t f = 0; f < out.size(); ++f) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(f * t % n) / static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[f] = acc;
    }
    return out;
}

/// Inverse of a half spectrum by the direct sum, using Hermitian symmetry.
inline std::vector<double> naive_idft(const std::vector<std::complex<double>>& spec, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t f = 0; f < spec.size(); ++f) {
            const double weight = (f == 0 || (n % 2 == 0 && f == n / 2)) ? 1.0 : 2.0;
            const double ang = 2.0 * std::numbers::pi * static_cast<double>(f * t % n) / static_cast<double>(n);
            acc += weight * (spec[f].real() * std::cos(ang) - spec[f].imag() * std::sin(ang));
        }
        out[t] = acc / static_cast<double>(n);
    }
    return out;
}

/// Small architecture for finite-difference checks.
inline safd::HyperConfig tiny_hyper(int channels = 2, int length = 64) {
    safd::HyperConfig h;
    h.channels = channels;
    h.length = length;
    h.conv = {{5, 2, 4}, {3, 2, 5}};
    h.lstm_hidden = 4;
    h.lstm_pool = 8;
    h.d_k = 3;
    h.d_v = 3;
    h.dropout_p = 0.3;
    return h;
}

/// Randomly drawn parameters (every live tensor, filter included) with a
/// small random input standardization, so every path carries signal.
inline safd::ModelParams<double> tiny_params(safd::Ablation ablation, std::uint64_t seed, int channels = 2,
                                             int length = 64) {
    auto p = safd::init_params<double>(tiny_hyper(channels, length), ablation, seed);
    std::uint64_t k = 0;
    p.for_each([&](const std::string& name, Matrix<double>& m) {
        const double scale = name.starts_with("head") ? 1.0 / std::sqrt(static_cast<double>(m.rows())) : 0.5;
        m = random_matrix(m.rows(), m.cols(), safd::derive_seed(seed, ++k), scale);
    });
    p.input_offset = random_matrix(channels, 1, seed + 2, 0.1).col(0);
    p.input_scale = (random_matrix(channels, 1, seed + 3, 0.1).array() + 1.0).matrix().col(0);
    return p;
}

inline safd::ParamMap to_param_map(const safd::ModelParams<double>& p) {
    safd::ParamMap out;
    p.for_each([&](const std::string& name, const Matrix<double>& m) { out[name] = m; });
    return out;
}

inline void from_param_map(safd::ModelParams<double>& p, const safd::ParamMap& map) {
    p.for_each([&](const std::string& name, Matrix<double>& m) { m = map.at(name); });
}

/// Central differences of an f64 loss are limited by rounding in the loss
/// value (about 1e-16 / eps). The reference therefore evaluates the same
/// model in extended precision and returns the change from the base point,
/// which leaves the analytic f64 gradient as the only thing under test.
template <class Loss>
std::function<double(const safd::ParamMap&)> extended_value(const safd::ModelParams<double>& base, Loss loss) {
    auto eval = [base, loss](const safd::ParamMap& m) {
        auto p = base;
        from_param_map(p, m);
        return loss(p.template cast<long double>());
    };
    const long double at_base = eval(to_param_map(base));
    return [eval, at_base](const safd::ParamMap& m) { return static_cast<double>(eval(m) - at_base); };
}

/// Unclamped single-sample BCE of the eval-mode model, with analytic gradient.
inline safd::DifferentiableFn model_bce(const safd::ModelParams<double>& base, const Matrix<double>& x, double y) {
    safd::DifferentiableFn fn;
    const Matrix<long double> xl = x.cast<long double>();
    const long double yl = y;
    fn.value = extended_value(base, [xl, yl](const safd::ModelParams<long double>& p) {
        const long double prob = safd::forward(p, xl);
        return -(yl * std::log(prob) + (1.0L - yl) * std::log(1.0L - prob));
    });
    fn.gradient = [base, x, y](const safd::ParamMap& m) {
        auto p = base;
        from_param_map(p, m);
        const auto tr = safd::forward_trace(p, x, safd::Mode::Eval);
        auto g = p.zeros_like();
        safd::backward(p, tr, tr.prob - y, g);
        return to_param_map(g);
    };
    return fn;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("safd_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
