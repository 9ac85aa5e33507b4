#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rainfield/diffusion.hpp"
#include "rainfield/forward.hpp"
#include "rainfield/rng.hpp"

namespace rainfield {

struct SamplerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotImplementedError : SamplerError {
    using SamplerError::SamplerError;
};

/// Observation likelihood p(y | x0) over flattened fields.
class Likelihood {
public:
    virtual ~Likelihood() = default;
    virtual double log_density(const Eigen::VectorXd& x0) const = 0;
    virtual Eigen::VectorXd gradient(const Eigen::VectorXd& x0) const = 0;
    virtual const Eigen::VectorXd& noise_sigmas() const = 0;
    /// log N(y; M(x0), diag(sigma_i^2 + extra_var)), normalization included.
    virtual double log_density_inflated(const Eigen::VectorXd& x0, double extra_var) const = 0;
};

/// Gaussian likelihood with a fixed linear operator: y = A x + noise.
class LinearGaussianLikelihood : public Likelihood {
public:
    LinearGaussianLikelihood(Eigen::MatrixXd op, Eigen::VectorXd y, Eigen::VectorXd sigmas);

    double log_density(const Eigen::VectorXd& x0) const override;
    Eigen::VectorXd gradient(const Eigen::VectorXd& x0) const override;
    const Eigen::VectorXd& noise_sigmas() const override { return sigmas_; }
    double log_density_inflated(const Eigen::VectorXd& x0, double extra_var) const override;

    const Eigen::MatrixXd& op() const { return op_; }
    const Eigen::VectorXd& y() const { return y_; }

private:
    Eigen::MatrixXd op_;
    Eigen::VectorXd y_;
    Eigen::VectorXd sigmas_;
};

/// Nonlinear CML likelihood backed by an ObservationModel. Candidates are
/// clamped at zero before the power law, matching the physical operator.
class CmlLikelihood : public Likelihood {
public:
    CmlLikelihood(ObservationModel model, Eigen::VectorXd y);

    double log_density(const Eigen::VectorXd& x0) const override;
    Eigen::VectorXd gradient(const Eigen::VectorXd& x0) const override;
    const Eigen::VectorXd& noise_sigmas() const override { return model_.noise.sigmas; }
    double log_density_inflated(const Eigen::VectorXd& x0, double extra_var) const override;

    const ObservationModel& model() const { return model_; }

private:
    ObservationModel model_;
    Eigen::VectorXd y_;
};

struct SamplerConfig {
    std::string algorithm;  ///< DPS | TDS | DAPS | RedDiff
    int n_steps = 100;
    int batch = 1;
    std::uint64_t seed = 0;

    // DPS / TDS
    double gamma = 1.0;
    int n_particles = 10;
    double tau = 1.0;

    // DAPS
    int mcmc_steps = 0;
    double eta0 = 5e-4;
    int n_ode = 5;
    double min_ratio = 0.01;

    // RedDiff
    double lr = 1e-1;
    double obs_weight = 1.0;
    double grad_term_weight = 1.0;
    std::optional<Eigen::VectorXd> init;
};

struct Ensemble {
    Eigen::MatrixXd samples;            ///< one sample per row
    Eigen::VectorXd final_log_lik;      ///< p(y | sample), per row
    std::vector<double> ess_trace;      ///< TDS only: ESS before each resample check
    std::vector<double> acceptance;     ///< reserved for MH-style samplers
};

/// DPS: ancestral pass with a normalized plug-in guidance move per step.
Ensemble dps_sample(const NoiseSchedule& schedule, const Denoiser& den, const Likelihood& lik,
                    const SamplerConfig& cfg, Rng& rng);

/// TDS: SMC over noise levels with DPS proposals, twisted incremental weights
/// N(y; M(D_t(x_t)), sigma_i^2 + (tau sigma_t)^2), and ESS-triggered
/// multinomial resampling. Returns the n_particles final particles.
Ensemble tds_sample(const NoiseSchedule& schedule, const Denoiser& den, const Likelihood& lik,
                    const SamplerConfig& cfg, Rng& rng);

/// DAPS: decoupled annealing; per level a deterministic denoising path
/// estimates x0, unadjusted Langevin refines it against the likelihood, and
/// the forward kernel re-noises to the next level.
Ensemble daps_sample(const NoiseSchedule& schedule, const Denoiser& den, const Likelihood& lik,
                     const SamplerConfig& cfg, Rng& rng);

/// RedDiff: variational mean optimization with adaptive-moment updates over
/// descending noise levels.
Ensemble reddiff_sample(const NoiseSchedule& schedule, const Denoiser& den,
                        const Likelihood& lik, const SamplerConfig& cfg, Rng& rng);

using SamplerFn = std::function<Ensemble(const NoiseSchedule&, const Denoiser&,
                                         const Likelihood&, const SamplerConfig&, Rng&)>;

/// Registered samplers by tag. MGPS, MGDM and CREPE are documented extension
/// slots whose lookup reports the external reference defining them.
const std::map<std::string, SamplerFn>& sampler_registry();

/// Lookup with diagnostics: unknown tags list the registered alternatives.
SamplerFn lookup_sampler(const std::string& tag);

}  // namespace rainfield
