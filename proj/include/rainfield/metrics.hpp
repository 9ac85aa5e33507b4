#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rainfield/forward.hpp"
#include "rainfield/gp1d.hpp"
#include "rainfield/rng.hpp"

namespace rainfield {

struct MetricsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FieldMetrics {
    double rmse = 0.0;
    std::optional<double> pcc;  ///< missing when either field is constant
    double cum_rain_diff = 0.0; ///< sum(recon) - sum(reference); > 0 = overestimation
};

struct EnsembleMetrics {
    double sliced_wasserstein = 0.0;
    double mean_l2 = 0.0;
    double q05_l2 = 0.0;
    double q95_l2 = 0.0;
};

FieldMetrics field_metrics(const RainField& recon, const RainField& reference);

/// Average over random unit directions of the 1-D 2-Wasserstein distance
/// between the projected samples (rows). Unequal counts are compared through
/// the linearly interpolated empirical quantile functions. Seed-deterministic.
double sliced_wasserstein(const Eigen::MatrixXd& samples_a, const Eigen::MatrixXd& samples_b,
                          int n_projections, Rng& rng);

/// 2-Wasserstein distance between two 1-D empirical distributions.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

/// Pointwise ensemble quantiles and mean against the closed-form Gaussian
/// posterior; fills mean_l2, q05_l2 and q95_l2 (sliced_wasserstein untouched).
EnsembleMetrics quantile_errors(const Eigen::MatrixXd& ensemble,
                                const OraclePosterior1D& oracle);

}  // namespace rainfield
