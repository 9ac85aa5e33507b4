#include "rainfield/forward.hpp"

#include <cmath>

namespace rainfield {

namespace {
constexpr double kGradEps = 1e-6;  // clamp for d(x^b)/dx at x = 0, b < 1

double log_norm_const(const Eigen::VectorXd& sigmas) {
    double c = -0.5 * sigmas.size() * std::log(2.0 * M_PI);
    for (int i = 0; i < sigmas.size(); ++i) c -= std::log(sigmas(i));
    return c;
}
}  // namespace

NoiseModel NoiseModel::isotropic(double sigma, int m) {
    if (sigma < 0.0) throw ForwardError("NoiseModel: sigma must be >= 0");
    NoiseModel n;
    n.kind = Kind::Isotropic;
    n.base_sigma = sigma;
    n.sigmas = Eigen::VectorXd::Constant(m, sigma);
    return n;
}

NoiseModel NoiseModel::heteroscedastic(double sigma, const Eigen::VectorXd& link_lengths) {
    if (sigma < 0.0) throw ForwardError("NoiseModel: sigma must be >= 0");
    if (link_lengths.size() == 0) throw ForwardError("NoiseModel: empty link lengths");
    const double l_max = link_lengths.maxCoeff();
    if (!(l_max > 0.0)) throw ForwardError("NoiseModel: all link lengths are zero");
    NoiseModel n;
    n.kind = Kind::Heteroscedastic;
    n.base_sigma = sigma;
    n.sigmas = (sigma / 2.0) * (1.0 + link_lengths.array() / l_max);
    return n;
}

void ObservationModel::validate() const {
    const std::size_t m = weights.size();
    if (m == 0) throw ForwardError("ObservationModel: no links");
    if (params.size() != m || static_cast<std::size_t>(noise.sigmas.size()) != m)
        throw ForwardError("ObservationModel: weights/params/sigmas length mismatch");
    for (const auto& p : params)
        if (!(p.a > 0.0) || !(p.b > 0.0))
            throw ForwardError("ObservationModel: power-law constants must be positive");
}

Eigen::VectorXd forward_flat(const ObservationModel& model, const Eigen::VectorXd& x_flat) {
    model.validate();
    if (x_flat.size() != model.grid.cells())
        throw GridMismatchError("forward: field size does not match traced grid");
    Eigen::VectorXd y(model.links());
    for (int i = 0; i < model.links(); ++i) {
        const double b = model.params[i].b;
        double acc = 0.0;
        for (const auto& e : model.weights[i].entries) {
            const double v = std::max(x_flat(e.row * model.grid.width + e.col), 0.0);
            acc += e.length * (b == 1.0 ? v : std::pow(v, b));
        }
        y(i) = model.params[i].a * acc;
    }
    return y;
}

Eigen::VectorXd forward(const ObservationModel& model, const RainField& x) {
    if (!(x.grid == model.grid))
        throw GridMismatchError("forward: field grid differs from traced grid");
    if ((x.values.array() < 0.0).any())
        throw ForwardError("forward: rain field has negative entries");
    return forward_flat(model, x.flatten());
}

Observation sample_observation(const ObservationModel& model, const RainField& x,
                               std::uint64_t rng_seed) {
    Eigen::VectorXd y = forward(model, x);
    Rng rng(rng_seed);
    for (int i = 0; i < y.size(); ++i) y(i) += model.noise.sigmas(i) * rng.normal();
    return Observation{std::move(y)};
}

double log_likelihood_flat(const ObservationModel& model, const Eigen::VectorXd& x_flat,
                           const Eigen::VectorXd& y) {
    if ((model.noise.sigmas.array() <= 0.0).any())
        throw DegenerateNoiseError("log_likelihood: sigma_i = 0 is degenerate");
    if (y.size() != model.links()) throw ForwardError("log_likelihood: y length mismatch");
    const Eigen::VectorXd r = (y - forward_flat(model, x_flat)).array() / model.noise.sigmas.array();
    return -0.5 * r.squaredNorm() + log_norm_const(model.noise.sigmas);
}

double log_likelihood(const ObservationModel& model, const RainField& x,
                      const Eigen::VectorXd& y) {
    if (!(x.grid == model.grid))
        throw GridMismatchError("log_likelihood: field grid differs from traced grid");
    return log_likelihood_flat(model, x.flatten(), y);
}

Eigen::VectorXd grad_log_likelihood_flat(const ObservationModel& model,
                                         const Eigen::VectorXd& x_flat,
                                         const Eigen::VectorXd& y) {
    if ((model.noise.sigmas.array() <= 0.0).any())
        throw DegenerateNoiseError("grad_log_likelihood: sigma_i = 0 is degenerate");
    if (y.size() != model.links()) throw ForwardError("grad_log_likelihood: y length mismatch");
    const Eigen::VectorXd my = forward_flat(model, x_flat);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x_flat.size());
    for (int i = 0; i < model.links(); ++i) {
        const double a = model.params[i].a;
        const double b = model.params[i].b;
        const double coeff = (y(i) - my(i)) / (model.noise.sigmas(i) * model.noise.sigmas(i));
        for (const auto& e : model.weights[i].entries) {
            const int k = e.row * model.grid.width + e.col;
            const double v = std::max(x_flat(k), 0.0);
            const double dpow =
                (b == 1.0) ? 1.0 : b * std::pow(std::max(v, kGradEps), b - 1.0);
            g(k) += coeff * a * e.length * dpow;
        }
    }
    return g;
}

Eigen::MatrixXd grad_log_likelihood(const ObservationModel& model, const RainField& x,
                                    const Eigen::VectorXd& y) {
    if (!(x.grid == model.grid))
        throw GridMismatchError("grad_log_likelihood: field grid differs from traced grid");
    const Eigen::VectorXd g = grad_log_likelihood_flat(model, x.flatten(), y);
    return RainField::from_flat(x.grid, g).values;
}

}  // namespace rainfield
