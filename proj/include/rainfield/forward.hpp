#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "rainfield/grid.hpp"
#include "rainfield/rng.hpp"

namespace rainfield {

struct ForwardError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GridMismatchError : ForwardError {
    using ForwardError::ForwardError;
};
struct DegenerateNoiseError : ForwardError {
    using ForwardError::ForwardError;
};

/// Non-negative gridded rain intensity field (mm/h), row-major H x W.
struct RainField {
    GridSpec grid;
    Eigen::MatrixXd values;  ///< H x W, entries >= 0

    RainField() = default;
    RainField(GridSpec g, Eigen::MatrixXd v) : grid(std::move(g)), values(std::move(v)) {
        if (values.rows() != grid.height || values.cols() != grid.width)
            throw GridMismatchError("RainField: value shape does not match grid");
    }

    static RainField zeros(const GridSpec& g) {
        return RainField(g, Eigen::MatrixXd::Zero(g.height, g.width));
    }

    /// Row-major flattening, matching LinkWeights cell indexing.
    Eigen::VectorXd flatten() const {
        Eigen::VectorXd v(values.size());
        for (int r = 0; r < values.rows(); ++r)
            for (int c = 0; c < values.cols(); ++c) v(r * values.cols() + c) = values(r, c);
        return v;
    }

    static RainField from_flat(const GridSpec& g, const Eigen::VectorXd& v) {
        Eigen::MatrixXd m(g.height, g.width);
        for (int r = 0; r < g.height; ++r)
            for (int c = 0; c < g.width; ++c) m(r, c) = v(r * g.width + c);
        return RainField(g, std::move(m));
    }
};

/// Per-link power-law constants of Y = a * integral X^b.
struct PowerLawParams {
    double a = 1.0;
    double b = 1.0;
};

/// Per-link observation noise. Heteroscedastic noise grows with link length:
/// sigma_i = (sigma/2) (1 + L_i / L_max).
struct NoiseModel {
    enum class Kind { Isotropic, Heteroscedastic };

    Kind kind = Kind::Isotropic;
    double base_sigma = 0.0;
    Eigen::VectorXd sigmas;

    static NoiseModel isotropic(double sigma, int m);
    static NoiseModel heteroscedastic(double sigma, const Eigen::VectorXd& link_lengths);
};

struct ObservationModel {
    GridSpec grid;
    std::vector<LinkWeights> weights;
    std::vector<PowerLawParams> params;
    NoiseModel noise;

    int links() const { return static_cast<int>(weights.size()); }
    void validate() const;
};

struct Observation {
    Eigen::VectorXd y;  ///< dB attenuation, one entry per link
};

/// Noise-free measurement: component i = a_i * sum_k Delta_k [x]_k^{b_i}.
Eigen::VectorXd forward(const ObservationModel& model, const RainField& x);

/// Same as `forward` but on a flattened (possibly unconstrained) cell vector;
/// negative entries are clamped to 0 before the power.
Eigen::VectorXd forward_flat(const ObservationModel& model, const Eigen::VectorXd& x_flat);

/// y = forward(x) + diag(sigma) z, seed-deterministic.
Observation sample_observation(const ObservationModel& model, const RainField& x,
                               std::uint64_t rng_seed);

/// Exact Gaussian log-density log N(y; M(x), diag(sigma^2)), constant included.
double log_likelihood(const ObservationModel& model, const RainField& x,
                      const Eigen::VectorXd& y);
double log_likelihood_flat(const ObservationModel& model, const Eigen::VectorXd& x_flat,
                           const Eigen::VectorXd& y);

/// Gradient of log_likelihood w.r.t. the field. For b < 1 (or zero cells) the
/// power-law base is clamped at eps = 1e-6 to keep the gradient finite.
Eigen::MatrixXd grad_log_likelihood(const ObservationModel& model, const RainField& x,
                                    const Eigen::VectorXd& y);
Eigen::VectorXd grad_log_likelihood_flat(const ObservationModel& model,
                                         const Eigen::VectorXd& x_flat,
                                         const Eigen::VectorXd& y);

}  // namespace rainfield
