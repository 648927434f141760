#include "safd/training.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "safd/evaluation.hpp"
#include "safd/parallel.hpp"

namespace safd {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "adam") return OptimizerKind::Adam;
    if (text == "sgd") return OptimizerKind::Sgd;
    throw std::invalid_argument("unknown optimizer '" + text + "' (expected adam|sgd)");
}

std::string to_string(Precision precision) { return precision == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
    if (text == "f32") return Precision::F32;
    if (text == "f64") return Precision::F64;
    throw std::invalid_argument("unknown precision '" + text + "' (expected f32|f64)");
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be finite and >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
    if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
    if (plateau_epochs < 1) throw std::invalid_argument("train: plateau_epochs must be >= 1");
    if (threads < 1) throw std::invalid_argument("train: threads must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("train: adam betas must be in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must be in [0, 1)");
}

std::string TrainLog::to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "epoch,train_loss,dev_auroc,wall_s\n";
    for (const EpochRecord& r : epochs) out << r.epoch << ',' << r.train_loss << ',' << r.dev_auroc << ',' << r.wall_s << '\n';
    return out.str();
}

double bce_loss(std::span<const double> p, std::span<const double> y) {
    if (p.size() != y.size()) throw std::invalid_argument("bce_loss: size mismatch");
    if (p.empty()) throw std::invalid_argument("bce_loss: empty batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        sum -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    }
    return sum / static_cast<double>(p.size());
}

double label_value(Label label) {
    switch (label) {
        case Label::Negative: return 0.0;
        case Label::Positive: return 1.0;
        case Label::Unlabeled: break;
    }
    throw DataError("segment has no label");
}

namespace {

template <class S>
std::vector<Matrix<S>> to_inputs(std::span<const Segment> segments) {
    std::vector<Matrix<S>> out;
    out.reserve(segments.size());
    for (const Segment& s : segments) out.push_back(s.data.cast<S>());
    return out;
}

template <class S>
std::vector<Matrix<S>*> tensors(ModelParams<S>& p) {
    std::vector<Matrix<S>*> out;
    p.for_each([&](const std::string&, Matrix<S>& m) { out.push_back(&m); });
    return out;
}

template <class S>
std::vector<double> predict_inputs(const ModelParams<S>& params, const std::vector<Matrix<S>>& inputs, int threads) {
    std::vector<double> out(inputs.size());
    parallel_for(inputs.size(), threads,
                 [&](std::size_t i) { out[i] = static_cast<double>(forward(params, inputs[i], Mode::Eval)); });
    return out;
}

}  // namespace

template <class S>
void fit_input_normalization(ModelParams<S>& params, std::span<const Segment> train_set) {
    const Eigen::Index c = params.hyper.channels;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(c);
    double count = 0.0;
    for (const Segment& s : train_set) {
        if (s.data.rows() != c) throw ShapeError("normalization: segment channel count does not match the model");
        const Eigen::MatrixXd d = s.data.cast<double>();
        sum += d.rowwise().sum();
        count += static_cast<double>(d.cols());
    }
    if (count == 0.0) throw DataError("normalization: empty training set");
    const Eigen::VectorXd mean = sum / count;
    for (const Segment& s : train_set) {
        const Eigen::MatrixXd d = s.data.cast<double>();
        sq += (d.colwise() - mean).rowwise().squaredNorm();
    }
    params.input_offset = mean.cast<S>();
    params.input_scale.resize(c);
    for (Eigen::Index i = 0; i < c; ++i) {
        const double sd = std::sqrt(sq(i) / count);
        params.input_scale(i) = static_cast<S>(sd > 1e-12 ? 1.0 / sd : 1.0);
    }
}

template <class S>
std::vector<double> predict(const ModelParams<S>& params, std::span<const Segment> segments, int threads) {
    return predict_inputs(params, to_inputs<S>(segments), threads);
}

template <class S>
TrainResult<S> train(std::span<const Segment> train_set, std::span<const Segment> dev_set, ModelParams<S> init,
                     const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty() || dev_set.empty()) throw DataError("train: train and dev sets must be nonempty");
    const std::vector<int> dev_labels = labels_of(dev_set);
    if (std::count(dev_labels.begin(), dev_labels.end(), 1) == 0 ||
        std::count(dev_labels.begin(), dev_labels.end(), 0) == 0) {
        throw DataError("train: dev set must contain both classes");
    }
    std::vector<double> y(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) y[i] = label_value(train_set[i].label);

    ModelParams<S> params = std::move(init);
    if (cfg.normalize_inputs) fit_input_normalization(params, train_set);
    const std::vector<Matrix<S>> train_x = to_inputs<S>(train_set);
    const std::vector<Matrix<S>> dev_x = to_inputs<S>(dev_set);

    ModelParams<S> state1 = params.zeros_like();
    ModelParams<S> state2 = params.zeros_like();
    const auto p_tensors = tensors(params);
    const auto m_tensors = tensors(state1);
    const auto v_tensors = tensors(state2);

    const std::size_t n = train_set.size();
    const std::size_t batch_cap = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
    std::vector<ModelParams<S>> sample_grads(batch_cap, params.zeros_like());
    std::vector<double> sample_prob(batch_cap);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult<S> result{params, {}};
    double best_dev = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();
    int stale_dev = 0;
    int stale_loss = 0;
    double lr = cfg.lr;
    long step = 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double loss_sum = 0.0;
        const std::size_t n_batches = (n + batch_cap - 1) / batch_cap;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t begin = b * batch_cap;
            const std::size_t size = std::min(batch_cap, n - begin);
            const S inv_batch = S(1) / static_cast<S>(size);

            parallel_for(size, cfg.threads, [&](std::size_t j) {
                const std::size_t idx = order[begin + j];
                Rng dropout_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), b, idx));
                const ForwardTrace<S> tr = forward_trace(params, train_x[idx], Mode::Train, &dropout_rng);
                ModelParams<S>& g = sample_grads[j];
                g.for_each([](const std::string&, Matrix<S>& m) { m.setZero(); });
                // d(mean BCE)/dlogit; the clamp only affects the reported value.
                backward(params, tr, (tr.prob - static_cast<S>(y[idx])) * inv_batch, g);
                sample_prob[j] = static_cast<double>(tr.prob);
            });

            std::vector<double> batch_y(size);
            for (std::size_t j = 0; j < size; ++j) batch_y[j] = y[order[begin + j]];
            const double batch_loss = bce_loss(std::span(sample_prob).first(size), batch_y);

            ModelParams<S>& grad = sample_grads[0];
            const auto g_tensors = tensors(grad);
            for (std::size_t j = 1; j < size; ++j) {
                const auto other = tensors(sample_grads[j]);
                for (std::size_t k = 0; k < g_tensors.size(); ++k) *g_tensors[k] += *other[k];
            }
            double grad_norm_sq = 0.0;
            for (const Matrix<S>* g : g_tensors) grad_norm_sq += static_cast<double>(g->squaredNorm());
            if (!std::isfinite(batch_loss) || !std::isfinite(grad_norm_sq)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch " << b << " (loss " << batch_loss
                    << ", grad-norm " << std::sqrt(grad_norm_sq) << ")";
                throw NumericalError(msg.str());
            }
            loss_sum += batch_loss * static_cast<double>(size);

            ++step;
            const S s_lr = static_cast<S>(lr);
            if (cfg.optimizer == OptimizerKind::Adam) {
                const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
                const S c1 = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
                const S c2 = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
                const S eps = static_cast<S>(cfg.adam_eps);
                for (std::size_t k = 0; k < p_tensors.size(); ++k) {
                    auto& m = *m_tensors[k];
                    auto& v = *v_tensors[k];
                    const auto& g = *g_tensors[k];
                    m = b1 * m + (S(1) - b1) * g;
                    v = b2 * v + (S(1) - b2) * g.cwiseAbs2();
                    p_tensors[k]->array() -= s_lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
                }
            } else {
                const S mu = static_cast<S>(cfg.momentum);
                for (std::size_t k = 0; k < p_tensors.size(); ++k) {
                    auto& vel = *m_tensors[k];
                    vel = mu * vel + *g_tensors[k];
                    *p_tensors[k] -= s_lr * vel;
                }
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.lr = lr;
        const std::vector<double> dev_p = predict_inputs(params, dev_x, cfg.threads);
        if (!std::all_of(dev_p.begin(), dev_p.end(), [](double v) { return std::isfinite(v); })) {
            throw NumericalError("non-finite dev prediction after epoch " + std::to_string(epoch));
        }
        rec.dev_auroc = roc_auc(dev_p, dev_labels);
        rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.dev_auroc > best_dev) {
            best_dev = rec.dev_auroc;
            result.log.best_epoch = epoch;
            result.params = params;
            stale_dev = 0;
        } else if (++stale_dev >= cfg.patience) {
            break;
        }

        if (rec.train_loss < best_loss) {
            best_loss = rec.train_loss;
            stale_loss = 0;
        } else if (++stale_loss >= cfg.plateau_epochs) {
            lr *= 0.5;
            stale_loss = 0;
        }
    }
    return result;
}

template void fit_input_normalization(ModelParams<float>&, std::span<const Segment>);
template void fit_input_normalization(ModelParams<double>&, std::span<const Segment>);
template std::vector<double> predict(const ModelParams<float>&, std::span<const Segment>, int);
template std::vector<double> predict(const ModelParams<double>&, std::span<const Segment>, int);
template TrainResult<float> train(std::span<const Segment>, std::span<const Segment>, ModelParams<float>,
                                  const TrainConfig&, const EpochCallback&);
template TrainResult<double> train(std::span<const Segment>, std::span<const Segment>, ModelParams<double>,
                                   const TrainConfig&, const EpochCallback&);

}  // namespace safd
