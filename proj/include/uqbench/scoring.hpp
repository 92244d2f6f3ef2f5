#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "uqbench/core.hpp"
#include "uqbench/math.hpp"
#include "uqbench/predictive.hpp"
#include "uqbench/rng.hpp"

namespace uqbench {

inline constexpr int kMixtureCrpsSamples = 2048;

// ---------------------------------------------------------------------------
// CRPS
// ---------------------------------------------------------------------------

// Closed form for a Gaussian predictive:
//   sigma * [ z(2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi) ],  z = (y - mu)/sigma.
inline double crps_gaussian(double mu, double sigma, double y) {
    if (sigma <= 0.0) throw std::domain_error("crps_gaussian: sigma must be positive");
    const double z = (y - mu) / sigma;
    return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) -
                    1.0 / std::sqrt(kPi));
}

// Energy-form estimator: mean|X_i - y| - (1/2) mean_{i,j} |X_i - X_j| over
// all ordered pairs. The pair sum uses the sorted-sample identity, so the
// cost is O(n log n) instead of O(n^2).
inline double crps_sample(std::span<const double> samples, double y) {
    const std::size_t n = samples.size();
    if (n < 2) throw std::invalid_argument("crps_sample: need at least 2 samples");
    std::vector<double> xs(samples.begin(), samples.end());
    std::sort(xs.begin(), xs.end());
    double term1 = 0.0;
    for (double x : xs) term1 += std::fabs(x - y);
    term1 /= static_cast<double>(n);
    // sum over ordered pairs |x_i - x_j| = 2 * sum_k (2k - n + 1) x_(k)
    double pair_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        pair_sum += (2.0 * static_cast<double>(k) - static_cast<double>(n) + 1.0) * xs[k];
    pair_sum *= 2.0;
    const double term2 = 0.5 * pair_sum / (static_cast<double>(n) * static_cast<double>(n));
    return term1 - term2;
}

namespace detail {

inline double mixture_cdf(const PredictiveDistribution& d, Eigen::Index i, double x) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < d.components(); ++c)
        s += normal_cdf((x - d.mix_mu(c, i)) / d.mix_sigma(c, i));
    return s / static_cast<double>(d.components());
}

// Quantile of the mixture CDF at test point i by bisection.
inline double mixture_quantile(const PredictiveDistribution& d, Eigen::Index i, double p) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < d.components(); ++c) {
        lo = std::min(lo, d.mix_mu(c, i) - 12.0 * d.mix_sigma(c, i));
        hi = std::max(hi, d.mix_mu(c, i) + 12.0 * d.mix_sigma(c, i));
    }
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double f = mixture_cdf(d, i, mid);
        if (std::fabs(f - p) <= 1e-10 || hi - lo <= 1e-13 * (1.0 + std::fabs(mid)))
            return mid;
        (f < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

// Mean CRPS of a predictive distribution over the test targets. Mixture
// distributions are scored by the energy form with a seeded sample stream so
// repeat runs are identical.
inline double crps(const PredictiveDistribution& d, const Eigen::VectorXd& ys,
                   RngStream* rng = nullptr, int n_samples = kMixtureCrpsSamples) {
    if (ys.size() != d.test_size())
        throw std::invalid_argument("crps: target length mismatch");
    double total = 0.0;
    switch (d.kind) {
        case PredictiveDistribution::Kind::Gaussian:
        case PredictiveDistribution::Kind::Interval:
            for (Eigen::Index i = 0; i < ys.size(); ++i)
                total += crps_gaussian(d.mu(i), d.sigma(i), ys(i));
            break;
        case PredictiveDistribution::Kind::Mixture: {
            if (!rng)
                throw std::invalid_argument("crps: mixture scoring needs a seeded stream");
            std::vector<double> xs(n_samples);
            const auto m = static_cast<std::uint64_t>(d.components());
            for (Eigen::Index i = 0; i < ys.size(); ++i) {
                for (int s = 0; s < n_samples; ++s) {
                    const auto c = static_cast<Eigen::Index>(rng->uniform_below(m));
                    xs[s] = rng->normal(d.mix_mu(c, i), d.mix_sigma(c, i));
                }
                total += crps_sample(xs, ys(i));
            }
            break;
        }
    }
    return total / static_cast<double>(ys.size());
}

// ---------------------------------------------------------------------------
// NLL
// ---------------------------------------------------------------------------

// Mean negative log density. When a sigma floor is supplied, Gaussian sigmas
// are floored before evaluating (App-style clipping for collapsed variances).
inline double nll(const PredictiveDistribution& d, const Eigen::VectorXd& ys,
                  std::optional<double> sigma_floor = std::nullopt) {
    if (ys.size() != d.test_size())
        throw std::invalid_argument("nll: target length mismatch");
    auto floored = [&](double s) {
        return sigma_floor ? std::max(s, *sigma_floor) : s;
    };
    double total = 0.0;
    switch (d.kind) {
        case PredictiveDistribution::Kind::Gaussian:
        case PredictiveDistribution::Kind::Interval:
            // Interval kind carries a Gaussianized sigma; without one this
            // distribution has no density.
            for (Eigen::Index i = 0; i < ys.size(); ++i)
                total += -normal_log_pdf(ys(i), d.mu(i), floored(d.sigma(i)));
            break;
        case PredictiveDistribution::Kind::Mixture: {
            std::vector<double> lp(d.components());
            for (Eigen::Index i = 0; i < ys.size(); ++i) {
                for (Eigen::Index c = 0; c < d.components(); ++c)
                    lp[c] = normal_log_pdf(ys(i), d.mix_mu(c, i), floored(d.mix_sigma(c, i)));
                total += -(log_sum_exp(lp) - std::log(static_cast<double>(d.components())));
            }
            break;
        }
    }
    return total / static_cast<double>(ys.size());
}

// ---------------------------------------------------------------------------
// Central prediction intervals and interval metrics
// ---------------------------------------------------------------------------

struct IntervalBounds {
    Eigen::VectorXd lower, upper;
};

inline IntervalBounds interval_at(const PredictiveDistribution& d, double level = 0.90) {
    if (!(level > 0.0 && level < 1.0))
        throw std::domain_error("interval_at: level must be in (0,1)");
    const Eigen::Index n = d.test_size();
    IntervalBounds b;
    b.lower.resize(n);
    b.upper.resize(n);
    const double p_lo = 0.5 * (1.0 - level);
    const double p_hi = 0.5 * (1.0 + level);
    switch (d.kind) {
        case PredictiveDistribution::Kind::Gaussian: {
            const double z = normal_quantile(p_hi);
            b.lower = d.mu - z * d.sigma;
            b.upper = d.mu + z * d.sigma;
            break;
        }
        case PredictiveDistribution::Kind::Mixture:
            for (Eigen::Index i = 0; i < n; ++i) {
                b.lower(i) = detail::mixture_quantile(d, i, p_lo);
                b.upper(i) = detail::mixture_quantile(d, i, p_hi);
            }
            break;
        case PredictiveDistribution::Kind::Interval:
            if (level == d.nominal_level) {
                b.lower = d.lower;
                b.upper = d.upper;
            } else {
                const double z = normal_quantile(p_hi);
                b.lower = d.mu - z * d.sigma;
                b.upper = d.mu + z * d.sigma;
            }
            break;
    }
    return b;
}

struct CoverageResult {
    int covered = 0;   // k
    int test_size = 0; // N_test
    double mpiw = 0.0;

    double picp() const { return static_cast<double>(covered) / test_size; }
};

inline CoverageResult picp_mpiw(const PredictiveDistribution& d, const Eigen::VectorXd& ys,
                                double level = 0.90) {
    if (ys.size() != d.test_size())
        throw std::invalid_argument("picp_mpiw: target length mismatch");
    const IntervalBounds b = interval_at(d, level);
    CoverageResult r;
    r.test_size = static_cast<int>(ys.size());
    double width = 0.0;
    for (Eigen::Index i = 0; i < ys.size(); ++i) {
        if (b.lower(i) <= ys(i) && ys(i) <= b.upper(i)) ++r.covered;
        width += b.upper(i) - b.lower(i);
    }
    r.mpiw = width / static_cast<double>(ys.size());
    return r;
}

// Winkler interval score at level 1 - alpha, averaged over test points:
//   (u - l) + (2/alpha)(l - y)_+ + (2/alpha)(y - u)_+
inline double interval_score(const PredictiveDistribution& d, const Eigen::VectorXd& ys,
                             double alpha = 0.10) {
    if (ys.size() != d.test_size())
        throw std::invalid_argument("interval_score: target length mismatch");
    const IntervalBounds b = interval_at(d, 1.0 - alpha);
    double total = 0.0;
    for (Eigen::Index i = 0; i < ys.size(); ++i) {
        double s = b.upper(i) - b.lower(i);
        if (ys(i) < b.lower(i)) s += 2.0 / alpha * (b.lower(i) - ys(i));
        if (ys(i) > b.upper(i)) s += 2.0 / alpha * (ys(i) - b.upper(i));
        total += s;
    }
    return total / static_cast<double>(ys.size());
}

// ---------------------------------------------------------------------------
// Rank consistency
// ---------------------------------------------------------------------------

// Best-first method order from metric values; ties broken by method id so
// rankings are always strict.
inline std::vector<MethodId> ranking_from_values(const std::map<MethodId, double>& values) {
    std::vector<std::pair<double, MethodId>> v;
    for (const auto& [m, x] : values) v.emplace_back(x, m);
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return static_cast<int>(a.second) < static_cast<int>(b.second);
    });
    std::vector<MethodId> out;
    out.reserve(v.size());
    for (const auto& [x, m] : v) out.push_back(m);
    return out;
}

// Kendall tau between two strict rankings of the same method set.
inline double kendall_tau(const std::vector<MethodId>& ranking_a,
                          const std::vector<MethodId>& ranking_b) {
    if (ranking_a.size() != ranking_b.size() || ranking_a.size() < 2)
        throw std::invalid_argument("kendall_tau: rankings must share >= 2 methods");
    std::map<MethodId, int> pos_b;
    for (std::size_t i = 0; i < ranking_b.size(); ++i) pos_b[ranking_b[i]] = static_cast<int>(i);
    for (MethodId m : ranking_a)
        if (!pos_b.count(m))
            throw std::invalid_argument("kendall_tau: rankings cover different method sets");

    const std::size_t n = ranking_a.size();
    long concordant = 0, discordant = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const int bi = pos_b.at(ranking_a[i]);
            const int bj = pos_b.at(ranking_a[j]);
            (bi < bj ? concordant : discordant) += 1;
        }
    }
    return static_cast<double>(concordant - discordant) /
           (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace uqbench
