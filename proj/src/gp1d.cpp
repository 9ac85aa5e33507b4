#include "rainfield/gp1d.hpp"

#include <cmath>

namespace rainfield {

namespace {
constexpr double kJitter = 1e-10;

void check_kernel(const RbfKernel1D& k) {
    if (!(k.lengthscale > 0.0) || !(k.variance > 0.0))
        throw Gp1dError("RbfKernel1D: lengthscale and variance must be positive");
}

Eigen::MatrixXd chol_with_jitter(Eigen::MatrixXd m) {
    m.diagonal().array() += kJitter;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
        throw SingularSystemError("covariance factorization failed");
    return llt.matrixL();
}
}  // namespace

double RbfKernel1D::operator()(double s, double t) const {
    const double d = s - t;
    return variance * std::exp(-d * d / (2.0 * lengthscale * lengthscale));
}

double kernel_interval_integral(const RbfKernel1D& kernel, std::pair<double, double> interval,
                                double s) {
    check_kernel(kernel);
    const double l = kernel.lengthscale;
    const double c = l * std::sqrt(M_PI / 2.0);
    return kernel.variance * c *
           (std::erf((interval.second - s) / (std::sqrt(2.0) * l)) -
            std::erf((interval.first - s) / (std::sqrt(2.0) * l)));
}

double kernel_double_integral(const RbfKernel1D& kernel, std::pair<double, double> i1,
                              std::pair<double, double> i2) {
    check_kernel(kernel);
    const double l = kernel.lengthscale;
    auto H = [l](double z) {
        return z * std::erf(z / (std::sqrt(2.0) * l)) +
               std::sqrt(2.0 / M_PI) * l * std::exp(-z * z / (2.0 * l * l));
    };
    const auto [ai, bi] = i1;
    const auto [aj, bj] = i2;
    return kernel.variance * l * std::sqrt(M_PI / 2.0) *
           (H(bi - aj) - H(ai - aj) - H(bi - bj) + H(ai - bj));
}

Eigen::MatrixXd kernel_gram(const RbfKernel1D& kernel, const Eigen::VectorXd& grid) {
    check_kernel(kernel);
    const Eigen::Index n = grid.size();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = kernel(grid(i), grid(j));
    return k;
}

OraclePosterior1D oracle_posterior(const RbfKernel1D& kernel, const IntervalSet& intervals,
                                   const Eigen::VectorXd& y, const Eigen::VectorXd& grid) {
    check_kernel(kernel);
    const int m = intervals.size();
    if (m != y.size()) throw Gp1dError("oracle_posterior: |intervals| != |y|");

    Eigen::MatrixXd k_yy(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j)
            k_yy(i, j) = k_yy(j, i) =
                kernel_double_integral(kernel, intervals.intervals[i], intervals.intervals[j]);
    k_yy.diagonal().array() += intervals.noise_sigma * intervals.noise_sigma;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(k_yy);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw SingularSystemError("oracle_posterior: K_yy + sigma^2 I is not SPD");

    const Eigen::Index n = grid.size();
    Eigen::MatrixXd k_xy(n, m);  // cross-covariances between grid points and observations
    for (Eigen::Index g = 0; g < n; ++g)
        for (int i = 0; i < m; ++i)
            k_xy(g, i) = kernel_interval_integral(kernel, intervals.intervals[i], grid(g));

    OraclePosterior1D post;
    post.grid = grid;
    post.mean = k_xy * ldlt.solve(y);
    post.cov = kernel_gram(kernel, grid) - k_xy * ldlt.solve(k_xy.transpose());
    post.cov = 0.5 * (post.cov + post.cov.transpose().eval());
    return post;
}

Eigen::MatrixXd OraclePosterior1D::sample(int n_draws, Rng& rng) const {
    const Eigen::MatrixXd l = chol_with_jitter(cov);
    const Eigen::Index n = grid.size();
    Eigen::MatrixXd draws(n_draws, n);
    Eigen::VectorXd z(n);
    for (int d = 0; d < n_draws; ++d) {
        for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
        draws.row(d) = (mean + l * z).transpose();
    }
    return draws;
}

Eigen::VectorXd sample_prior_1d(const RbfKernel1D& kernel, const Eigen::VectorXd& grid,
                                std::uint64_t rng_seed) {
    const Eigen::MatrixXd l = chol_with_jitter(kernel_gram(kernel, grid));
    Rng rng(rng_seed);
    Eigen::VectorXd z(grid.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    return l * z;
}

}  // namespace rainfield
