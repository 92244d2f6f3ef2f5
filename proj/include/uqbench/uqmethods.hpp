#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "uqbench/core.hpp"
#include "uqbench/nn.hpp"
#include "uqbench/predictive.hpp"
#include "uqbench/rng.hpp"

namespace uqbench {

// ---------------------------------------------------------------------------
// Method configuration (App-default settings; all recorded in the manifest)
// ---------------------------------------------------------------------------
struct MethodConfig {
    int epochs = 500;
    int bbb_epochs = 1000;     // BBB doubles the training budget
    int hidden = 64;
    int test_samples = 50;     // T stochastic samples at test time
    double dropout_rate = 0.10;
    int ensemble_size = 5;     // M
    double kl_weight = 1e-3;
    int swag_start_epoch = 300;
    double cp_calibration_fraction = 0.20;
    double cp_alpha = 0.10;    // 90% nominal interval
    AdamConfig adam{};                       // MAP / MCD / Ensemble / CP
    AdamConfig bbb_adam{1e-3, 0.0, 0.9, 0.999, 1e-8};  // no weight decay
    MomentumSgdConfig sgd{1e-2, 0.9, 500};   // SWAG
};

// Trainers return either a predictive distribution or a convergence failure
// carrying the epoch where the loss left the reals.
struct TrainOutcome {
    std::optional<PredictiveDistribution> dist;
    std::optional<int> failed_epoch;

    bool ok() const { return dist.has_value(); }

    static TrainOutcome failure(int epoch) {
        TrainOutcome o;
        o.failed_epoch = epoch;
        return o;
    }
};

namespace detail {

// Per-test-point Gaussian read-out. The training-time variance clamp does
// not apply here: a collapsed variance head is allowed to show itself in the
// predictive (this is exactly MAP's overconfidence failure mode). A tiny
// floor keeps sigma strictly positive.
inline void gaussian_readout(const MlpParams& p, const Eigen::MatrixXd& X,
                             Eigen::VectorXd& mu, Eigen::VectorXd& sigma,
                             const DropoutSpec* dropout = nullptr) {
    const MlpForward f = mlp_forward(p, X, dropout);
    const Eigen::Index n = X.rows();
    mu.resize(n);
    sigma.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mu(i) = f.out(i, 0);
        sigma(i) = std::sqrt(std::max(std::exp(f.out(i, 1)), 1e-30));
    }
}

inline TrainResult fit_nll_network(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   std::uint64_t seed, const MethodConfig& cfg,
                                   double dropout_rate = 0.0) {
    RngStream init_rng(seed, "net/init");
    RngStream drop_rng(seed, "net/dropout");
    MlpParams params = MlpParams::he_init(static_cast<int>(X.cols()), cfg.hidden, init_rng);
    return train_epochs(std::move(params), X, y, OptimizerState(cfg.adam), cfg.epochs,
                        dropout_rate, dropout_rate > 0.0 ? &drop_rng : nullptr);
}

inline std::uint64_t member_seed(std::uint64_t seed, int k) {
    // Member 0 shares the cell seed so a singleton ensemble reproduces MAP.
    return k == 0 ? seed : mix64(seed ^ mix64(static_cast<std::uint64_t>(k)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MAP — deterministic baseline with heteroscedastic variance
// ---------------------------------------------------------------------------
inline TrainOutcome train_map(const Eigen::MatrixXd& train_X, const Eigen::VectorXd& train_y,
                              const Eigen::MatrixXd& test_X, std::uint64_t seed,
                              const MethodConfig& cfg) {
    if (train_X.rows() < 2) throw std::invalid_argument("train_map: need >= 2 points");
    const TrainResult r = detail::fit_nll_network(train_X, train_y, seed, cfg);
    if (!r.converged()) return TrainOutcome::failure(*r.failed_epoch);
    TrainOutcome o;
    Eigen::VectorXd mu, sigma;
    detail::gaussian_readout(r.params, test_X, mu, sigma);
    o.dist = PredictiveDistribution::gaussian(std::move(mu), std::move(sigma));
    return o;
}

// ---------------------------------------------------------------------------
// MCD — dropout active in training and at test time; T stochastic passes
// ---------------------------------------------------------------------------
inline TrainOutcome train_mcd(const Eigen::MatrixXd& train_X, const Eigen::VectorXd& train_y,
                              const Eigen::MatrixXd& test_X, std::uint64_t seed,
                              const MethodConfig& cfg) {
    if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0)
        throw std::invalid_argument("train_mcd: dropout rate must be in [0,1)");
    const TrainResult r =
        detail::fit_nll_network(train_X, train_y, seed, cfg, cfg.dropout_rate);
    if (!r.converged()) return TrainOutcome::failure(*r.failed_epoch);

    const int T = cfg.test_samples;
    Eigen::MatrixXd mix_mu(T, test_X.rows()), mix_sigma(T, test_X.rows());
    RngStream test_rng(seed, "mcd/test-dropout");
    for (int t = 0; t < T; ++t) {
        DropoutSpec spec{cfg.dropout_rate, &test_rng};
        Eigen::VectorXd mu, sigma;
        detail::gaussian_readout(r.params, test_X, mu, sigma,
                                 cfg.dropout_rate > 0.0 ? &spec : nullptr);
        mix_mu.row(t) = mu.transpose();
        mix_sigma.row(t) = sigma.transpose();
    }
    TrainOutcome o;
    o.dist = PredictiveDistribution::mixture(std::move(mix_mu), std::move(mix_sigma));
    return o;
}

// ---------------------------------------------------------------------------
// Deep Ensemble — M independently initialized networks, equal-weight mixture
// ---------------------------------------------------------------------------
inline TrainOutcome train_ensemble(const Eigen::MatrixXd& train_X,
                                   const Eigen::VectorXd& train_y,
                                   const Eigen::MatrixXd& test_X, std::uint64_t seed,
                                   const MethodConfig& cfg) {
    const int M = cfg.ensemble_size;
    if (M < 1) throw std::invalid_argument("train_ensemble: M must be >= 1");
    Eigen::MatrixXd mix_mu(M, test_X.rows()), mix_sigma(M, test_X.rows());
    for (int k = 0; k < M; ++k) {
        const TrainResult r = detail::fit_nll_network(train_X, train_y,
                                                      detail::member_seed(seed, k), cfg);
        // Any member failing fails the whole cell.
        if (!r.converged()) return TrainOutcome::failure(*r.failed_epoch);
        Eigen::VectorXd mu, sigma;
        detail::gaussian_readout(r.params, test_X, mu, sigma);
        mix_mu.row(k) = mu.transpose();
        mix_sigma.row(k) = sigma.transpose();
    }
    TrainOutcome o;
    o.dist = PredictiveDistribution::mixture(std::move(mix_mu), std::move(mix_sigma));
    return o;
}

// ---------------------------------------------------------------------------
// SWAG — diagonal Gaussian over weights from SGD trajectory snapshots
// ---------------------------------------------------------------------------
inline TrainOutcome train_swag(const Eigen::MatrixXd& train_X, const Eigen::VectorXd& train_y,
                               const Eigen::MatrixXd& test_X, std::uint64_t seed,
                               const MethodConfig& cfg) {
    RngStream init_rng(seed, "net/init");
    MlpParams params = MlpParams::he_init(static_cast<int>(train_X.cols()), cfg.hidden, init_rng);

    Eigen::VectorXd sum, sum_sq;
    long count = 0;
    auto hook = [&](int epoch, const MlpParams& p) {
        if (epoch < cfg.swag_start_epoch) return;
        const Eigen::VectorXd w = p.flatten();
        if (count == 0) {
            sum = w;
            sum_sq = w.cwiseProduct(w);
        } else {
            sum += w;
            sum_sq += w.cwiseProduct(w);
        }
        ++count;
    };

    MomentumSgdConfig sgd = cfg.sgd;
    sgd.total_epochs = cfg.epochs;
    const TrainResult r = train_epochs(std::move(params), train_X, train_y,
                                       OptimizerState(sgd), cfg.epochs, 0.0, nullptr, hook);
    // Failure iff the loss left the reals or fewer than two snapshots exist.
    if (!r.converged()) return TrainOutcome::failure(*r.failed_epoch);
    if (count < 2) return TrainOutcome::failure(cfg.epochs);

    const double nc = static_cast<double>(count);
    const Eigen::VectorXd mean = sum / nc;
    const Eigen::VectorXd var =
        (sum_sq / nc - mean.cwiseProduct(mean)).cwiseMax(0.0);
    const Eigen::VectorXd sd = var.cwiseSqrt();

    const int T = cfg.test_samples;
    Eigen::MatrixXd mix_mu(T, test_X.rows()), mix_sigma(T, test_X.rows());
    RngStream sample_rng(seed, "swag/weight-samples");
    MlpParams sampled = r.params;
    Eigen::VectorXd w(mean.size());
    for (int t = 0; t < T; ++t) {
        for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = mean(j) + sd(j) * sample_rng.normal();
        sampled.unflatten(w);
        Eigen::VectorXd mu, sigma;
        detail::gaussian_readout(sampled, test_X, mu, sigma);
        mix_mu.row(t) = mu.transpose();
        mix_sigma.row(t) = sigma.transpose();
    }
    TrainOutcome o;
    o.dist = PredictiveDistribution::mixture(std::move(mix_mu), std::move(mix_sigma));
    return o;
}

// ---------------------------------------------------------------------------
// BBB — mean-field Gaussian posterior per weight, one-sample reparameterized
// ELBO: mean NLL + klWeight * KL(q || N(0,1)) / n_train
// ---------------------------------------------------------------------------

// KL(N(m, s^2) || N(0,1)) per weight.
inline double bbb_kl(double m, double s) {
    return -std::log(s) + 0.5 * (s * s + m * m) - 0.5;
}

namespace detail {

inline double softplus(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct BbbState {
    MlpParams mean;
    MlpParams rho;  // sigma = softplus(rho)

    static BbbState init(int d, int h, RngStream& rng, double sigma0 = 0.05) {
        BbbState s;
        s.mean = MlpParams::he_init(d, h, rng);
        s.rho = MlpParams::zeros_like(s.mean);
        const double rho0 = std::log(std::expm1(sigma0));
        auto fill = [rho0](auto& m) { m.setConstant(rho0); };
        fill(s.rho.w1); fill(s.rho.b1); fill(s.rho.w2); fill(s.rho.b2);
        fill(s.rho.w3); fill(s.rho.b3);
        return s;
    }
};

}  // namespace detail

inline TrainOutcome train_bbb(const Eigen::MatrixXd& train_X, const Eigen::VectorXd& train_y,
                              const Eigen::MatrixXd& test_X, std::uint64_t seed,
                              const MethodConfig& cfg) {
    if (cfg.kl_weight <= 0.0) throw std::invalid_argument("train_bbb: klWeight must be > 0");
    RngStream init_rng(seed, "bbb/init");
    RngStream eps_rng(seed, "bbb/eps");
    detail::BbbState st =
        detail::BbbState::init(static_cast<int>(train_X.cols()), cfg.hidden, init_rng);

    const double n_train = static_cast<double>(train_X.rows());
    const double kl_scale = cfg.kl_weight / n_train;

    // Adam over the concatenated (mean, rho) vector.
    const Eigen::Index p_count = static_cast<Eigen::Index>(st.mean.parameter_count());
    Eigen::VectorXd m_buf = Eigen::VectorXd::Zero(2 * p_count);
    Eigen::VectorXd v_buf = Eigen::VectorXd::Zero(2 * p_count);
    const AdamConfig& ad = cfg.bbb_adam;

    MlpParams weights = MlpParams::zeros_like(st.mean);
    MlpParams eps = MlpParams::zeros_like(st.mean);

    for (int epoch = 0; epoch < cfg.bbb_epochs; ++epoch) {
        // One reparameterized sample: w = mean + softplus(rho) * eps.
        Eigen::VectorXd eps_flat(p_count);
        for (Eigen::Index j = 0; j < p_count; ++j) eps_flat(j) = eps_rng.normal();
        eps.unflatten(eps_flat);
        const Eigen::VectorXd mean_flat = st.mean.flatten();
        const Eigen::VectorXd rho_flat = st.rho.flatten();
        Eigen::VectorXd sigma_flat(p_count);
        for (Eigen::Index j = 0; j < p_count; ++j) sigma_flat(j) = detail::softplus(rho_flat(j));
        weights.unflatten(mean_flat + sigma_flat.cwiseProduct(eps_flat));

        const MlpForward f = mlp_forward(weights, train_X);
        const LossAndGrad lg = gaussian_nll_loss_grad(f.out, train_y);
        double kl = 0.0;
        for (Eigen::Index j = 0; j < p_count; ++j) kl += bbb_kl(mean_flat(j), sigma_flat(j));
        const double loss = lg.loss + kl_scale * kl;
        if (!std::isfinite(loss)) return TrainOutcome::failure(epoch);

        const MlpGrads gw = mlp_backward(weights, train_X, f, lg.d_out);
        const Eigen::VectorXd gw_flat = gw.flatten();

        Eigen::VectorXd grad(2 * p_count);
        for (Eigen::Index j = 0; j < p_count; ++j) {
            const double sig = sigma_flat(j);
            const double gate = detail::sigmoid(rho_flat(j));
            // d/dmean: dNLL/dw + kl_scale * m
            grad(j) = gw_flat(j) + kl_scale * mean_flat(j);
            // d/drho: (dNLL/dw * eps + kl_scale * (sig - 1/sig)) * sigmoid(rho)
            grad(p_count + j) =
                (gw_flat(j) * eps_flat(j) + kl_scale * (sig - 1.0 / sig)) * gate;
        }

        const int step = epoch + 1;
        m_buf = ad.beta1 * m_buf + (1.0 - ad.beta1) * grad;
        v_buf = ad.beta2 * v_buf + (1.0 - ad.beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(ad.beta1, step);
        const double bc2 = 1.0 - std::pow(ad.beta2, step);
        Eigen::VectorXd theta(2 * p_count);
        theta.head(p_count) = mean_flat;
        theta.tail(p_count) = rho_flat;
        theta.array() -=
            ad.lr * (m_buf.array() / bc1) / ((v_buf.array() / bc2).sqrt() + ad.eps);
        st.mean.unflatten(theta.head(p_count));
        st.rho.unflatten(theta.tail(p_count));
        if (!st.mean.all_finite() || !st.rho.all_finite()) return TrainOutcome::failure(epoch);
    }

    const int T = cfg.test_samples;
    Eigen::MatrixXd mix_mu(T, test_X.rows()), mix_sigma(T, test_X.rows());
    RngStream test_rng(seed, "bbb/test-samples");
    const Eigen::VectorXd mean_flat = st.mean.flatten();
    const Eigen::VectorXd rho_flat = st.rho.flatten();
    Eigen::VectorXd w(p_count);
    for (int t = 0; t < T; ++t) {
        for (Eigen::Index j = 0; j < p_count; ++j)
            w(j) = mean_flat(j) + detail::softplus(rho_flat(j)) * test_rng.normal();
        weights.unflatten(w);
        Eigen::VectorXd mu, sigma;
        detail::gaussian_readout(weights, test_X, mu, sigma);
        mix_mu.row(t) = mu.transpose();
        mix_sigma.row(t) = sigma.transpose();
    }
    TrainOutcome o;
    o.dist = PredictiveDistribution::mixture(std::move(mix_mu), std::move(mix_sigma));
    return o;
}

// Total KL of a trained BBB posterior; exposed for the prior-collapse check.
inline double bbb_total_kl(const Eigen::VectorXd& mean_flat, const Eigen::VectorXd& rho_flat) {
    double kl = 0.0;
    for (Eigen::Index j = 0; j < mean_flat.size(); ++j)
        kl += bbb_kl(mean_flat(j), detail::softplus(rho_flat(j)));
    return kl;
}

// ---------------------------------------------------------------------------
// CP — split conformal intervals around a MAP base network
// ---------------------------------------------------------------------------

// Order-statistic index of the split-conformal quantile:
// ceil((1 - alpha)(n_cal + 1)), 1-based. The epsilon guards against FP
// representation of alpha crossing an integer boundary.
inline int conformal_quantile_index(int n_cal, double alpha) {
    if (n_cal < 1) throw std::invalid_argument("conformal_quantile_index: n_cal must be >= 1");
    return static_cast<int>(
        std::ceil((1.0 - alpha) * static_cast<double>(n_cal + 1) - 1e-9));
}

inline TrainOutcome train_cp(const Eigen::MatrixXd& train_X, const Eigen::VectorXd& train_y,
                             const Eigen::MatrixXd& test_X, std::uint64_t seed,
                             const MethodConfig& cfg) {
    const Eigen::Index n = train_X.rows();
    const auto n_cal = static_cast<Eigen::Index>(
        std::llround(cfg.cp_calibration_fraction * static_cast<double>(n)));
    if (n_cal < 2)
        throw std::invalid_argument("train_cp: calibration split has " +
                                    std::to_string(n_cal) + " points, need >= 2");
    const Eigen::Index n_fit = n - n_cal;
    if (n_fit < 2) throw std::invalid_argument("train_cp: proper-train split too small");

    // The training rows are already a seeded random draw, so a positional
    // split is itself random: the last n_cal rows calibrate.
    const Eigen::MatrixXd fit_X = train_X.topRows(n_fit);
    const Eigen::VectorXd fit_y = train_y.head(n_fit);
    const Eigen::MatrixXd cal_X = train_X.bottomRows(n_cal);
    const Eigen::VectorXd cal_y = train_y.tail(n_cal);

    const TrainResult r = detail::fit_nll_network(fit_X, fit_y, seed, cfg);
    if (!r.converged()) return TrainOutcome::failure(*r.failed_epoch);

    Eigen::VectorXd cal_mu, cal_sigma;
    detail::gaussian_readout(r.params, cal_X, cal_mu, cal_sigma);
    std::vector<double> scores(n_cal);
    for (Eigen::Index i = 0; i < n_cal; ++i) scores[i] = std::fabs(cal_y(i) - cal_mu(i));
    std::sort(scores.begin(), scores.end());

    // Index may exceed n_cal for very small calibration sets (the exact rule
    // gives an infinite interval); fall back to the largest score.
    const int k = std::min<int>(conformal_quantile_index(static_cast<int>(n_cal), cfg.cp_alpha),
                                static_cast<int>(n_cal));
    const double half_width = scores[k - 1];

    Eigen::VectorXd mu, sigma_unused;
    detail::gaussian_readout(r.params, test_X, mu, sigma_unused);
    const double z = normal_quantile(1.0 - 0.5 * cfg.cp_alpha);
    const double gauss_sigma = std::max(half_width / z, 1e-30);

    TrainOutcome o;
    o.dist = PredictiveDistribution::interval(
        mu, (mu.array() - half_width).matrix(), (mu.array() + half_width).matrix(),
        Eigen::VectorXd::Constant(mu.size(), gauss_sigma), 1.0 - cfg.cp_alpha);
    return o;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------
inline TrainOutcome train_method(MethodId method, const Eigen::MatrixXd& train_X,
                                 const Eigen::VectorXd& train_y,
                                 const Eigen::MatrixXd& test_X, std::uint64_t seed,
                                 const MethodConfig& cfg) {
    switch (method) {
        case MethodId::MAP: return train_map(train_X, train_y, test_X, seed, cfg);
        case MethodId::MCD: return train_mcd(train_X, train_y, test_X, seed, cfg);
        case MethodId::Ensemble: return train_ensemble(train_X, train_y, test_X, seed, cfg);
        case MethodId::SWAG: return train_swag(train_X, train_y, test_X, seed, cfg);
        case MethodId::BBB: return train_bbb(train_X, train_y, test_X, seed, cfg);
        case MethodId::CP: return train_cp(train_X, train_y, test_X, seed, cfg);
    }
    throw std::logic_error("unknown method");
}

}  // namespace uqbench
