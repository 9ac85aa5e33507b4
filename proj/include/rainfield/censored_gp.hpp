#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "rainfield/grid.hpp"
#include "rainfield/rng.hpp"

namespace rainfield {

struct CensoredGpError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Relative nugget of the latent working model: sampling, imputation and the
/// profiled likelihood all use Gamma = var_gp * (R + nugget * I). Without it
/// the smooth kernel is numerically singular on a grid and the fit becomes
/// hypersensitive to imputation noise in the near-null directions.
inline constexpr double kCensoredGpNugget = 1e-4;

/// Censored-GP prior parameters: X = max(0, V^beta) with latent
/// V ~ GP(mu, sigma_gp^2 exp(-1/2 (s-s')^T diag(l1,l2)^-2 (s-s'))).
struct CensoredGpParams {
    double mu = 0.0;
    double l1 = 1.0;        ///< lengthscale along rows
    double l2 = 1.0;        ///< lengthscale along cols
    double var_gp = 1.0;    ///< sigma_gp^2
    double beta = 1.0;

    void validate() const {
        if (!(l1 > 0.0) || !(l2 > 0.0) || !(var_gp > 0.0))
            throw CensoredGpError("CensoredGpParams: lengthscales/variance must be positive");
        if (!(beta >= 1.0)) throw CensoredGpError("CensoredGpParams: beta must be >= 1");
    }
};

/// Observed field: zero exactly where the latent was censored.
struct CensoredField {
    Eigen::MatrixXd values;         ///< H x W, entries >= 0
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> censor_mask;  ///< value == 0

    static CensoredField from_values(Eigen::MatrixXd v);
};

/// Kernel Gram matrix over the grid cells (row-major flattening), with
/// coordinates at integer cell centers. Guarded at 4096 cells.
Eigen::MatrixXd censored_gp_gram(const CensoredGpParams& params, const GridSpec& grid);

/// Draw X = max(0, V^beta): negative latents censor to zero, positive latents
/// are raised to beta.
CensoredField sample_censored_field(const CensoredGpParams& params, const GridSpec& grid,
                                    Rng& rng);

/// Gibbs imputation of the latent field for beta = 1: positive coordinates are
/// fixed at the observations, censored coordinates are drawn from exact
/// truncated-normal full conditionals on (-inf, 0]. Returns the latent after
/// n_sweeps full sweeps.
Eigen::MatrixXd gibbs_impute(const CensoredGpParams& params, const CensoredField& field,
                             int n_sweeps, Rng& rng);

/// Metropolis-within-Gibbs for beta > 1: proposals are the beta = 1 truncated
/// conditionals, acceptance uses the power-transformed latent density with its
/// diagonal Jacobian. With beta = 1 the acceptance ratio is identically 1 and
/// the chain is bit-identical to gibbs_impute. Returns the transformed-domain
/// latent; acceptance_rate (if given) receives the across-chain MH rate.
Eigen::MatrixXd mwg_impute(const CensoredGpParams& params, const CensoredField& field,
                           int n_sweeps, Rng& rng, double* acceptance_rate = nullptr);

struct EmBetaTrace {
    double beta = 1.0;
    std::vector<CensoredGpParams> iterates;
    std::vector<double> acceptance_rates;  ///< per EM iteration (MWG only)
    double selection_score = 0.0;          ///< held-out negative composite log-lik
};

struct EmReport {
    std::vector<EmBetaTrace> traces;
    CensoredGpParams selected;
};

/// Monte Carlo EM over a beta grid: the E-step imputes latents by Gibbs/MWG
/// (50% burn-in discarded), the M-step maximizes the profiled Gaussian
/// likelihood over the lengthscales with closed-form mu and variance, and the
/// returned beta minimizes a held-out marginal pseudo-likelihood score.
EmReport em_fit(const std::vector<CensoredField>& fields, const GridSpec& grid,
                const std::vector<double>& beta_grid, int em_iters, int gibbs_sweeps,
                Rng& rng);

/// M-step building block, exposed for verification: profiled Gaussian MLE of
/// (mu, var_gp) and log-likelihood for fixed lengthscales, from the latent
/// sufficient statistics (count, sum vector, scatter matrix).
struct GaussianProfileFit {
    double mu = 0.0;
    double var_gp = 1.0;
    double log_lik = 0.0;
    bool valid = false;
};
GaussianProfileFit profile_gaussian_mle(const GridSpec& grid, double l1, double l2,
                                        double count, const Eigen::VectorXd& sum,
                                        const Eigen::MatrixXd& scatter);

}  // namespace rainfield
