#include "rainfield/diffusion.hpp"

#include <cmath>

#include "rainfield/parallel.hpp"

namespace rainfield {

NoiseSchedule karras_schedule(int T, double sigma_min, double sigma_max, double rho) {
    if (T < 1) throw DiffusionError("karras_schedule: T must be >= 1");
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw DiffusionError("karras_schedule: need 0 < sigma_min < sigma_max");
    if (!(rho > 0.0)) throw DiffusionError("karras_schedule: rho must be positive");

    NoiseSchedule s;
    s.rho = rho;
    s.sigma_min = sigma_min;
    s.sigma_max = sigma_max;
    s.sigmas.resize(static_cast<std::size_t>(T) + 1);
    s.sigmas[0] = 0.0;
    if (T == 1) {
        s.sigmas[1] = sigma_max;
        return s;
    }
    const double lo = std::pow(sigma_min, 1.0 / rho);
    const double hi = std::pow(sigma_max, 1.0 / rho);
    for (int i = 1; i <= T; ++i) {
        // i = 1 -> sigma_min, i = T -> sigma_max
        const double frac = static_cast<double>(T - i) / (T - 1);
        s.sigmas[static_cast<std::size_t>(i)] = std::pow(hi + frac * (lo - hi), rho);
    }
    s.sigmas[1] = sigma_min;
    s.sigmas[static_cast<std::size_t>(T)] = sigma_max;
    return s;
}

GaussianDenoiser::GaussianDenoiser(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance)
    : mean_(std::move(mean)) {
    if (covariance.rows() != covariance.cols() || covariance.rows() != mean_.size())
        throw DiffusionError("GaussianDenoiser: covariance/mean shape mismatch");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance);
    if (es.info() != Eigen::Success)
        throw DiffusionError("GaussianDenoiser: eigendecomposition failed");
    eigvecs_ = es.eigenvectors();
    eigvals_ = es.eigenvalues().cwiseMax(0.0);
}

Eigen::VectorXd GaussianDenoiser::shrink(double sigma, const Eigen::VectorXd& v) const {
    if (sigma == 0.0) return v;
    const double s2 = sigma * sigma;
    const Eigen::VectorXd ratios = eigvals_.array() / (eigvals_.array() + s2);
    return eigvecs_ * (ratios.asDiagonal() * (eigvecs_.transpose() * v));
}

Eigen::VectorXd GaussianDenoiser::evaluate(double sigma, const Eigen::VectorXd& x) const {
    if (x.size() != mean_.size()) throw DiffusionError("GaussianDenoiser: input size mismatch");
    if (sigma == 0.0) return x;
    return mean_ + shrink(sigma, x - mean_);
}

Eigen::VectorXd GaussianDenoiser::jacobian_transpose_product(double sigma,
                                                             const Eigen::VectorXd& x,
                                                             const Eigen::VectorXd& v) const {
    (void)x;  // the sensitivity A_sigma is constant in x and symmetric
    return shrink(sigma, v);
}

Eigen::VectorXd gaussian_denoise(const GaussianDenoiser& den, double sigma_t,
                                 const Eigen::VectorXd& x) {
    if (sigma_t < 0.0) throw DiffusionError("gaussian_denoise: sigma must be >= 0");
    return den.evaluate(sigma_t, x);
}

Eigen::VectorXd bridge_sample(const NoiseSchedule& schedule, int l, int t,
                              const Eigen::VectorXd& x0_hat, const Eigen::VectorXd& x_t,
                              Rng& rng) {
    if (!(l > 0 && l < t) || t > schedule.steps())
        throw DiffusionError("bridge_sample: need 0 < l < t <= T");
    const double gamma = schedule.gamma(l, t);
    const double sd = schedule.sigma(l) * std::sqrt(1.0 - gamma);
    Eigen::VectorXd out = gamma * x_t + (1.0 - gamma) * x0_hat;
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += sd * rng.normal();
    return out;
}

Eigen::MatrixXd ancestral_sample(const NoiseSchedule& schedule, const Denoiser& den, Rng& rng,
                                 int batch) {
    if (batch < 1) throw DiffusionError("ancestral_sample: batch must be >= 1");
    const Eigen::Index n = den.dim();
    const int T = schedule.steps();
    Eigen::MatrixXd out(batch, n);

    const Rng master(rng.next_u64());
    parallel_for(static_cast<std::size_t>(batch), [&](std::size_t bi) {
        Rng r = master.child(bi);
        Eigen::VectorXd x(n);
        const double sT = schedule.sigma(T);
        for (Eigen::Index i = 0; i < n; ++i) x(i) = sT * r.normal();
        for (int t = T; t >= 2; --t) {
            const Eigen::VectorXd x0_hat = den.evaluate(schedule.sigma(t), x);
            x = bridge_sample(schedule, t - 1, t, x0_hat, x, r);
        }
        out.row(static_cast<Eigen::Index>(bi)) =
            den.evaluate(schedule.sigma(1), x).transpose();
    });
    return out;
}

}  // namespace rainfield
