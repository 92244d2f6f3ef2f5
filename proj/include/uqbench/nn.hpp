#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "uqbench/math.hpp"
#include "uqbench/rng.hpp"

namespace uqbench {

// Predicted variance bounds used by the training loss.
inline constexpr double kVarianceFloor = 1e-3;
inline constexpr double kVarianceCeil = 1e3;

inline double clamp_variance(double v) {
    return std::min(std::max(v, kVarianceFloor), kVarianceCeil);
}

// Negative log-likelihood of y under N(mu, exp(log_var)); callers clamp
// log_var to the variance bounds before evaluating.
inline double gaussian_nll(double mu, double log_var, double y) {
    const double r = y - mu;
    return 0.5 * (log_var + r * r * std::exp(-log_var)) + 0.5 * std::log(2.0 * kPi);
}

// ---------------------------------------------------------------------------
// Two-hidden-layer heteroscedastic MLP: d -> h -> h -> (mu, log sigma^2),
// ReLU activations. Width defaults to 64; gradcheck tests shrink it.
// ---------------------------------------------------------------------------
struct MlpParams {
    Eigen::MatrixXd w1, w2, w3;  // (d,h), (h,h), (h,2)
    Eigen::VectorXd b1, b2, b3;  // (h), (h), (2)

    int input_dim() const { return static_cast<int>(w1.rows()); }
    int hidden() const { return static_cast<int>(w1.cols()); }

    static MlpParams he_init(int d, int h, RngStream& rng) {
        MlpParams p;
        p.w1.resize(d, h);
        p.w2.resize(h, h);
        p.w3.resize(h, 2);
        p.b1 = Eigen::VectorXd::Zero(h);
        p.b2 = Eigen::VectorXd::Zero(h);
        p.b3 = Eigen::VectorXd::Zero(2);
        const double s1 = std::sqrt(2.0 / d), s2 = std::sqrt(2.0 / h);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < h; ++j) p.w1(i, j) = s1 * rng.normal();
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < h; ++j) p.w2(i, j) = s2 * rng.normal();
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < 2; ++j) p.w3(i, j) = s2 * rng.normal();
        return p;
    }

    static MlpParams zeros_like(const MlpParams& o) {
        MlpParams p;
        p.w1 = Eigen::MatrixXd::Zero(o.w1.rows(), o.w1.cols());
        p.w2 = Eigen::MatrixXd::Zero(o.w2.rows(), o.w2.cols());
        p.w3 = Eigen::MatrixXd::Zero(o.w3.rows(), o.w3.cols());
        p.b1 = Eigen::VectorXd::Zero(o.b1.size());
        p.b2 = Eigen::VectorXd::Zero(o.b2.size());
        p.b3 = Eigen::VectorXd::Zero(o.b3.size());
        return p;
    }

    std::size_t parameter_count() const {
        return static_cast<std::size_t>(w1.size() + w2.size() + w3.size() + b1.size() +
                                        b2.size() + b3.size());
    }

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd v(parameter_count());
        Eigen::Index k = 0;
        auto put = [&](const auto& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) v(k++) = m(i);
        };
        put(w1); put(b1); put(w2); put(b2); put(w3); put(b3);
        return v;
    }

    void unflatten(const Eigen::VectorXd& v) {
        Eigen::Index k = 0;
        auto take = [&](auto& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = v(k++);
        };
        take(w1); take(b1); take(w2); take(b2); take(w3); take(b3);
    }

    bool all_finite() const {
        return w1.allFinite() && w2.allFinite() && w3.allFinite() && b1.allFinite() &&
               b2.allFinite() && b3.allFinite();
    }
};

using MlpGrads = MlpParams;

struct DropoutSpec {
    double rate = 0.0;
    RngStream* rng = nullptr;
};

// Forward activations kept for the backward pass. Dropout masks already
// carry the inverted-dropout 1/(1-rate) scale.
struct MlpForward {
    Eigen::MatrixXd z1, a1, z2, a2;
    Eigen::MatrixXd out;  // n x 2: col 0 = mu, col 1 = log sigma^2
    Eigen::MatrixXd mask1, mask2;
    bool dropout = false;
};

namespace detail {

inline Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                                    RngStream& rng) {
    Eigen::MatrixXd m(rows, cols);
    if (rate >= 1.0) {
        m.setZero();
        return m;
    }
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = (rng.uniform() < rate) ? 0.0 : scale;
    return m;
}

}  // namespace detail

inline MlpForward mlp_forward(const MlpParams& p, const Eigen::MatrixXd& X,
                              const DropoutSpec* dropout = nullptr) {
    if (X.cols() != p.w1.rows())
        throw std::invalid_argument("mlp_forward: input dimension mismatch: got " +
                                    std::to_string(X.cols()) + ", expected " +
                                    std::to_string(p.w1.rows()));
    MlpForward f;
    f.z1 = (X * p.w1).rowwise() + p.b1.transpose();
    f.a1 = f.z1.cwiseMax(0.0);
    if (dropout && dropout->rate > 0.0) {
        f.dropout = true;
        f.mask1 = detail::dropout_mask(f.a1.rows(), f.a1.cols(), dropout->rate, *dropout->rng);
        f.a1 = f.a1.cwiseProduct(f.mask1);
    }
    f.z2 = (f.a1 * p.w2).rowwise() + p.b2.transpose();
    f.a2 = f.z2.cwiseMax(0.0);
    if (f.dropout) {
        f.mask2 = detail::dropout_mask(f.a2.rows(), f.a2.cols(), dropout->rate, *dropout->rng);
        f.a2 = f.a2.cwiseProduct(f.mask2);
    }
    f.out = (f.a2 * p.w3).rowwise() + p.b3.transpose();
    return f;
}

// Single-point forward; deterministic when dropout is absent.
inline std::pair<double, double> mlp_forward_point(const MlpParams& p,
                                                   const Eigen::VectorXd& x,
                                                   const DropoutSpec* dropout = nullptr) {
    const auto f = mlp_forward(p, x.transpose(), dropout);
    return {f.out(0, 0), f.out(0, 1)};
}

inline MlpGrads mlp_backward(const MlpParams& p, const Eigen::MatrixXd& X,
                             const MlpForward& f, const Eigen::MatrixXd& d_out) {
    MlpGrads g;
    g.w3 = f.a2.transpose() * d_out;
    g.b3 = d_out.colwise().sum();
    Eigen::MatrixXd d_a2 = d_out * p.w3.transpose();
    if (f.dropout) d_a2 = d_a2.cwiseProduct(f.mask2);
    const Eigen::MatrixXd d_z2 =
        d_a2.cwiseProduct((f.z2.array() > 0.0).cast<double>().matrix());
    g.w2 = f.a1.transpose() * d_z2;
    g.b2 = d_z2.colwise().sum();
    Eigen::MatrixXd d_a1 = d_z2 * p.w2.transpose();
    if (f.dropout) d_a1 = d_a1.cwiseProduct(f.mask1);
    const Eigen::MatrixXd d_z1 =
        d_a1.cwiseProduct((f.z1.array() > 0.0).cast<double>().matrix());
    g.w1 = X.transpose() * d_z1;
    g.b1 = d_z1.colwise().sum();
    return g;
}

// Mean heteroscedastic NLL over the batch and its gradient w.r.t. the raw
// network outputs. The variance is clamped to [1e-3, 1e3] only where it
// divides the squared residual: the raw log-variance term keeps its
// gradient, so an over-fit network can keep shrinking its predicted
// variance past the floor (the mechanism behind MAP's overconfidence).
struct LossAndGrad {
    double loss = 0.0;
    Eigen::MatrixXd d_out;
};

inline LossAndGrad gaussian_nll_loss_grad(const Eigen::MatrixXd& out,
                                          const Eigen::VectorXd& y) {
    const Eigen::Index n = out.rows();
    LossAndGrad lg;
    lg.d_out.resize(n, 2);
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = out(i, 0);
        const double lv = out(i, 1);
        const double r = y(i) - mu;
        const double ev = std::exp(lv);
        const double v = clamp_variance(ev);
        const bool clamped = (ev != v);
        total += 0.5 * (lv + r * r / v) + 0.5 * kLogTwoPi;
        lg.d_out(i, 0) = -r / v * inv_n;
        lg.d_out(i, 1) = 0.5 * (1.0 - (clamped ? 0.0 : r * r / v)) * inv_n;
    }
    lg.loss = total * inv_n;
    return lg;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double weight_decay = 1e-5;  // decoupled, applied after the adaptive step
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct MomentumSgdConfig {
    double lr = 1e-2;
    double momentum = 0.9;
    int total_epochs = 500;  // cosine annealing horizon
};

// lr(epoch) = lr0 * (1 + cos(pi * epoch / total)) / 2; hits 0 at epoch = total.
inline double cosine_lr(double lr0, int epoch, int total_epochs) {
    return lr0 * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(epoch) /
                                       static_cast<double>(total_epochs)));
}

class OptimizerState {
public:
    using Config = std::variant<AdamConfig, MomentumSgdConfig>;

    explicit OptimizerState(Config cfg) : cfg_(std::move(cfg)) {}

    int step_count() const { return step_; }
    const Config& config() const { return cfg_; }

    void apply(MlpParams& params, const MlpGrads& grads, int epoch) {
        if (!initialized_) {
            m_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.parameter_count()));
            v_ = m_;
            initialized_ = true;
        }
        ++step_;
        const Eigen::VectorXd g = grads.flatten();
        Eigen::VectorXd w = params.flatten();

        if (const auto* adam = std::get_if<AdamConfig>(&cfg_)) {
            m_ = adam->beta1 * m_ + (1.0 - adam->beta1) * g;
            v_ = adam->beta2 * v_ + (1.0 - adam->beta2) * g.cwiseProduct(g);
            const double bc1 = 1.0 - std::pow(adam->beta1, step_);
            const double bc2 = 1.0 - std::pow(adam->beta2, step_);
            const Eigen::ArrayXd m_hat = m_.array() / bc1;
            const Eigen::ArrayXd v_hat = v_.array() / bc2;
            w.array() -= adam->lr * m_hat / (v_hat.sqrt() + adam->eps);
            if (adam->weight_decay > 0.0) w.array() -= adam->lr * adam->weight_decay * w.array();
        } else {
            const auto& sgd = std::get<MomentumSgdConfig>(cfg_);
            const double lr = cosine_lr(sgd.lr, epoch, sgd.total_epochs);
            m_ = sgd.momentum * m_ + g;
            w -= lr * m_;
        }
        params.unflatten(w);
    }

private:
    Config cfg_;
    int step_ = 0;
    bool initialized_ = false;
    Eigen::VectorXd m_, v_;
};

// ---------------------------------------------------------------------------
// Full-batch training loop
// ---------------------------------------------------------------------------

struct TrainResult {
    MlpParams params;
    std::vector<double> loss_trace;
    std::optional<int> failed_epoch;  // set when the loss left the reals

    bool converged() const { return !failed_epoch.has_value(); }
};

// One full-batch gradient step per epoch. An optional dropout rate keeps
// masks fresh every epoch; the snapshot hook feeds SWAG.
inline TrainResult train_epochs(
    MlpParams params, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
    OptimizerState optimizer, int epochs, double dropout_rate = 0.0,
    RngStream* dropout_rng = nullptr,
    const std::function<void(int, const MlpParams&)>& snapshot_hook = nullptr) {
    if (X.rows() == 0) throw std::invalid_argument("train_epochs: empty training set");
    TrainResult result;
    result.loss_trace.reserve(epochs);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        DropoutSpec spec{dropout_rate, dropout_rng};
        const bool use_dropout = dropout_rate > 0.0 && dropout_rng != nullptr;
        const MlpForward f = mlp_forward(params, X, use_dropout ? &spec : nullptr);
        const LossAndGrad lg = gaussian_nll_loss_grad(f.out, y);
        result.loss_trace.push_back(lg.loss);
        if (!std::isfinite(lg.loss)) {
            result.failed_epoch = epoch;
            result.params = std::move(params);
            return result;
        }
        const MlpGrads grads = mlp_backward(params, X, f, lg.d_out);
        optimizer.apply(params, grads, epoch);
        if (!params.all_finite()) {
            result.failed_epoch = epoch;
            result.params = std::move(params);
            return result;
        }
        if (snapshot_hook) snapshot_hook(epoch, params);
    }
    result.params = std::move(params);
    return result;
}

}  // namespace uqbench
