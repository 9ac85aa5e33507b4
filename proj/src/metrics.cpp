#include "rainfield/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "rainfield/stats.hpp"

namespace rainfield {

namespace {

/// Linearly interpolated empirical quantile of sorted data (type-7 knots).
double sorted_quantile(const std::vector<double>& sorted, double u) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = std::clamp(u, 0.0, 1.0) * (n - 1);
    const std::size_t i = std::min(static_cast<std::size_t>(h), n - 2);
    return sorted[i] + (h - i) * (sorted[i + 1] - sorted[i]);
}

double column_quantile(const Eigen::MatrixXd& m, Eigen::Index col, double u) {
    std::vector<double> v(m.rows());
    for (Eigen::Index r = 0; r < m.rows(); ++r) v[r] = m(r, col);
    std::sort(v.begin(), v.end());
    return sorted_quantile(v, u);
}

}  // namespace

FieldMetrics field_metrics(const RainField& recon, const RainField& reference) {
    if (!(recon.grid == reference.grid))
        throw MetricsError("field_metrics: grids do not match");
    const Eigen::MatrixXd diff = recon.values - reference.values;
    const double n = static_cast<double>(diff.size());

    FieldMetrics m;
    m.rmse = std::sqrt(diff.array().square().sum() / n);
    m.cum_rain_diff = recon.values.sum() - reference.values.sum();

    const double mean_a = recon.values.mean(), mean_b = reference.values.mean();
    const Eigen::ArrayXXd ca = recon.values.array() - mean_a;
    const Eigen::ArrayXXd cb = reference.values.array() - mean_b;
    const double var_a = ca.square().sum(), var_b = cb.square().sum();
    if (var_a > 0.0 && var_b > 0.0)
        m.pcc = (ca * cb).sum() / std::sqrt(var_a * var_b);
    return m;
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw MetricsError("wasserstein_1d: empty sample set");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t m = std::max(a.size(), b.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double u = (i + 0.5) / m;
        const double d = sorted_quantile(a, u) - sorted_quantile(b, u);
        acc += d * d;
    }
    return std::sqrt(acc / m);
}

double sliced_wasserstein(const Eigen::MatrixXd& samples_a, const Eigen::MatrixXd& samples_b,
                          int n_projections, Rng& rng) {
    if (samples_a.cols() != samples_b.cols())
        throw MetricsError("sliced_wasserstein: dimension mismatch");
    if (samples_a.rows() < 2 || samples_b.rows() < 2)
        throw MetricsError("sliced_wasserstein: need at least 2 samples per set");
    if (n_projections < 1) throw MetricsError("sliced_wasserstein: need n_projections >= 1");

    const Eigen::Index d = samples_a.cols();
    std::vector<double> pa(samples_a.rows()), pb(samples_b.rows());
    double total = 0.0;
    for (int p = 0; p < n_projections; ++p) {
        Eigen::VectorXd dir(d);
        double norm2 = 0.0;
        do {
            for (Eigen::Index k = 0; k < d; ++k) dir(k) = rng.normal();
            norm2 = dir.squaredNorm();
        } while (norm2 == 0.0);
        dir /= std::sqrt(norm2);
        for (Eigen::Index r = 0; r < samples_a.rows(); ++r) pa[r] = samples_a.row(r).dot(dir);
        for (Eigen::Index r = 0; r < samples_b.rows(); ++r) pb[r] = samples_b.row(r).dot(dir);
        total += wasserstein_1d(pa, pb);
    }
    return total / n_projections;
}

EnsembleMetrics quantile_errors(const Eigen::MatrixXd& ensemble,
                                const OraclePosterior1D& oracle) {
    if (ensemble.rows() < 20) throw MetricsError("quantile_errors: need >= 20 samples");
    if (ensemble.cols() != oracle.mean.size())
        throw MetricsError("quantile_errors: dimension mismatch with the oracle");

    const Eigen::Index d = ensemble.cols();
    const double z05 = norm_ppf(0.05), z95 = norm_ppf(0.95);
    EnsembleMetrics m;
    double mean_acc = 0.0, q05_acc = 0.0, q95_acc = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        const double sd = std::sqrt(std::max(oracle.cov(k, k), 0.0));
        const double dm = ensemble.col(k).mean() - oracle.mean(k);
        const double d05 = column_quantile(ensemble, k, 0.05) - (oracle.mean(k) + z05 * sd);
        const double d95 = column_quantile(ensemble, k, 0.95) - (oracle.mean(k) + z95 * sd);
        mean_acc += dm * dm;
        q05_acc += d05 * d05;
        q95_acc += d95 * d95;
    }
    m.mean_l2 = std::sqrt(mean_acc);
    m.q05_l2 = std::sqrt(q05_acc);
    m.q95_l2 = std::sqrt(q95_acc);
    return m;
}

}  // namespace rainfield
