#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace uqbench {

// ---------------------------------------------------------------------------
// PredictiveDistribution — a method's per-test-point predictive law.
//
// Gaussian:  mu(i), sigma(i)
// Mixture:   equal-weight Gaussians, components x test points
// Interval:  stored bounds at the nominal level plus a Gaussianized sigma
//            (CP's distributional stand-in)
// ---------------------------------------------------------------------------
struct PredictiveDistribution {
    enum class Kind { Gaussian, Mixture, Interval };

    Kind kind = Kind::Gaussian;
    Eigen::VectorXd mu, sigma;          // Gaussian and Interval kinds
    Eigen::MatrixXd mix_mu, mix_sigma;  // Mixture: components x test points
    Eigen::VectorXd lower, upper;       // Interval kind
    double nominal_level = 0.90;

    Eigen::Index test_size() const {
        switch (kind) {
            case Kind::Gaussian: return mu.size();
            case Kind::Mixture: return mix_mu.cols();
            case Kind::Interval: return lower.size();
        }
        return 0;
    }

    Eigen::Index components() const {
        return kind == Kind::Mixture ? mix_mu.rows() : 1;
    }

    static PredictiveDistribution gaussian(Eigen::VectorXd mu, Eigen::VectorXd sigma) {
        PredictiveDistribution d;
        d.kind = Kind::Gaussian;
        d.mu = std::move(mu);
        d.sigma = std::move(sigma);
        d.validate();
        return d;
    }

    static PredictiveDistribution mixture(Eigen::MatrixXd mu, Eigen::MatrixXd sigma) {
        PredictiveDistribution d;
        d.kind = Kind::Mixture;
        d.mix_mu = std::move(mu);
        d.mix_sigma = std::move(sigma);
        d.validate();
        return d;
    }

    static PredictiveDistribution interval(Eigen::VectorXd mu, Eigen::VectorXd lower,
                                           Eigen::VectorXd upper,
                                           Eigen::VectorXd gaussianized_sigma,
                                           double level = 0.90) {
        PredictiveDistribution d;
        d.kind = Kind::Interval;
        d.mu = std::move(mu);
        d.lower = std::move(lower);
        d.upper = std::move(upper);
        d.sigma = std::move(gaussianized_sigma);
        d.nominal_level = level;
        d.validate();
        return d;
    }

    void validate() const {
        switch (kind) {
            case Kind::Gaussian:
                if (mu.size() != sigma.size())
                    throw std::invalid_argument("predictive: mu/sigma size mismatch");
                if ((sigma.array() <= 0.0).any())
                    throw std::invalid_argument("predictive: sigma must be positive");
                break;
            case Kind::Mixture:
                if (mix_mu.rows() != mix_sigma.rows() || mix_mu.cols() != mix_sigma.cols())
                    throw std::invalid_argument("predictive: mixture shape mismatch");
                if (mix_mu.rows() < 1)
                    throw std::invalid_argument("predictive: mixture needs components");
                if ((mix_sigma.array() <= 0.0).any())
                    throw std::invalid_argument("predictive: sigma must be positive");
                break;
            case Kind::Interval:
                if (lower.size() != upper.size() || lower.size() != mu.size() ||
                    sigma.size() != mu.size())
                    throw std::invalid_argument("predictive: interval size mismatch");
                if ((lower.array() > upper.array()).any())
                    throw std::invalid_argument("predictive: lower > upper");
                if ((sigma.array() <= 0.0).any())
                    throw std::invalid_argument("predictive: sigma must be positive");
                break;
        }
    }
};

}  // namespace uqbench
