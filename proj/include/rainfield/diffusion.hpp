#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rainfield/rng.hpp"

namespace rainfield {

struct DiffusionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Variance-exploding sigma ladder: sigmas[0] = 0 < sigmas[1] < ... < sigmas[T].
struct NoiseSchedule {
    std::vector<double> sigmas;
    double rho = 7.0;
    double sigma_min = 2e-3;
    double sigma_max = 100.0;

    int steps() const { return static_cast<int>(sigmas.size()) - 1; }  ///< T
    double sigma(int t) const { return sigmas.at(static_cast<std::size_t>(t)); }

    /// gamma_{l|t} = sigma_l^2 / sigma_t^2, the bridge mixing weight.
    double gamma(int l, int t) const {
        const double sl = sigma(l), st = sigma(t);
        return (sl * sl) / (st * st);
    }
};

/// Karras ladder: sigma_i interpolates sigma_max^(1/rho)..sigma_min^(1/rho)
/// raised to rho, endpoints exact, with sigma_0 = 0 prepended.
NoiseSchedule karras_schedule(int T, double sigma_min, double sigma_max, double rho);

/// Posterior-mean predictor E[x_0 | x_t] at noise level sigma.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Eigen::VectorXd evaluate(double sigma, const Eigen::VectorXd& x) const = 0;
    virtual Eigen::Index dim() const = 0;

    /// v -> (dD/dx)^T v. The default identity surrogate is what guidance falls
    /// back to when the exact sensitivity is unavailable.
    virtual Eigen::VectorXd jacobian_transpose_product(double sigma, const Eigen::VectorXd& x,
                                                       const Eigen::VectorXd& v) const {
        (void)sigma;
        (void)x;
        return v;
    }
    virtual bool has_exact_jacobian() const { return false; }
};

/// Exact denoiser for a Gaussian prior N(mu, Sigma_p) under VE corruption:
/// D(sigma, x) = mu + Sigma_p (Sigma_p + sigma^2 I)^-1 (x - mu).
class GaussianDenoiser : public Denoiser {
public:
    GaussianDenoiser(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance);

    Eigen::VectorXd evaluate(double sigma, const Eigen::VectorXd& x) const override;
    Eigen::Index dim() const override { return mean_.size(); }
    Eigen::VectorXd jacobian_transpose_product(double sigma, const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& v) const override;
    bool has_exact_jacobian() const override { return true; }

    const Eigen::VectorXd& mean() const { return mean_; }
    /// Shrinkage matrix A_sigma = Sigma_p (Sigma_p + sigma^2 I)^-1 applied to v.
    Eigen::VectorXd shrink(double sigma, const Eigen::VectorXd& v) const;

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd eigvecs_;
    Eigen::VectorXd eigvals_;  // clamped at 0
};

/// Free-function form of the exact Gaussian posterior mean.
Eigen::VectorXd gaussian_denoise(const GaussianDenoiser& den, double sigma_t,
                                 const Eigen::VectorXd& x);

/// Draw from the VE bridge q_{l|0,t}: N(gamma x_t + (1-gamma) x0_hat,
/// sigma_l^2 (1-gamma) I) with gamma = sigma_l^2/sigma_t^2. Requires 0 < l < t.
Eigen::VectorXd bridge_sample(const NoiseSchedule& schedule, int l, int t,
                              const Eigen::VectorXd& x0_hat, const Eigen::VectorXd& x_t,
                              Rng& rng);

/// Unconditional ancestral sampling: x_T ~ N(0, sigma_T^2 I), reverse steps via
/// the denoiser-plugged bridge, deterministic final denoise at level 1.
/// Rows of the result are samples; per-sample RNG streams are split from rng.
Eigen::MatrixXd ancestral_sample(const NoiseSchedule& schedule, const Denoiser& den, Rng& rng,
                                 int batch);

}  // namespace rainfield
