#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rainfield/rng.hpp"

namespace rainfield {

struct Gp1dError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularSystemError : Gp1dError {
    using Gp1dError::Gp1dError;
};

struct RbfKernel1D {
    double lengthscale = 0.6;
    double variance = 1.0;

    double operator()(double s, double t) const;
};

/// Interval-integral observation design: Y_i = int_{a_i}^{b_i} X(s) ds + noise.
struct IntervalSet {
    std::vector<std::pair<double, double>> intervals;
    double noise_sigma = 0.0;

    int size() const { return static_cast<int>(intervals.size()); }
};

/// Exact Gaussian posterior of the 1-D benchmark on an evaluation grid.
struct OraclePosterior1D {
    Eigen::VectorXd grid;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    /// Exact posterior draws, seed-deterministic (1e-10 jitter for the factorization).
    Eigen::MatrixXd sample(int n_draws, Rng& rng) const;
};

/// int_a^b k(s, s') ds' = l sqrt(pi/2) [erf((b-s)/(sqrt(2)l)) - erf((a-s)/(sqrt(2)l))].
double kernel_interval_integral(const RbfKernel1D& kernel, std::pair<double, double> interval,
                                double s);

/// int_{a_i}^{b_i} int_{a_j}^{b_j} k, via the erf primitive
/// H(z) = z erf(z/(sqrt(2)l)) + sqrt(2/pi) l exp(-z^2/(2l^2)).
double kernel_double_integral(const RbfKernel1D& kernel, std::pair<double, double> i1,
                              std::pair<double, double> i2);

/// Prior kernel Gram matrix on a grid.
Eigen::MatrixXd kernel_gram(const RbfKernel1D& kernel, const Eigen::VectorXd& grid);

/// Closed-form posterior mean/covariance under interval-integral observations,
/// solved with an LDLT factorization of K_yy + sigma^2 I.
OraclePosterior1D oracle_posterior(const RbfKernel1D& kernel, const IntervalSet& intervals,
                                   const Eigen::VectorXd& y, const Eigen::VectorXd& grid);

/// Exact prior draw from N(0, K + 1e-10 I).
Eigen::VectorXd sample_prior_1d(const RbfKernel1D& kernel, const Eigen::VectorXd& grid,
                                std::uint64_t rng_seed);

}  // namespace rainfield
