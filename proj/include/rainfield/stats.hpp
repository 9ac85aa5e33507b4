#pragma once

#include <cmath>
#include <limits>

namespace rainfield {

inline double norm_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
}

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double log_norm_pdf(double z) {
    return -0.5 * z * z - 0.5 * std::log(2.0 * M_PI);
}

/// log Phi(z), stable in the lower tail via the asymptotic expansion.
inline double log_norm_cdf(double z) {
    if (z > -10.0) return std::log(norm_cdf(z));
    // Phi(z) ~ phi(z)/|z| (1 - 1/z^2 + 3/z^4) for z << 0
    const double z2 = z * z;
    return log_norm_pdf(z) - std::log(-z) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

/// Inverse standard normal CDF (Acklam's rational approximation plus one
/// Halley refinement; ~1e-15 relative over the usable range).
inline double norm_ppf(double p) {
    if (!(p > 0.0) || !(p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    }
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (std::abs(x) < 8.0) {  // refinement; skipped in tails where exp overflows
        const double e = norm_cdf(x) - p;
        const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

/// Exact inverse-transform draw from N(mean, sd^2) truncated to (-inf, upper],
/// given a uniform u in (0,1). Deep tails fall back to the exponential
/// approximation of the conditional tail distribution.
inline double truncnorm_below(double mean, double sd, double upper, double u) {
    const double alpha = (upper - mean) / sd;
    const double p_alpha = norm_cdf(alpha);
    if (p_alpha > 1e-300) {
        double z = norm_ppf(u * p_alpha);
        if (z > alpha) z = alpha;  // guard rounding at the boundary
        return mean + sd * z;
    }
    // far tail: Z | Z <= alpha is approximately alpha - Exp(|alpha|)
    const double z = alpha + std::log(u) / std::max(-alpha, 1.0);
    return mean + sd * z;
}

}  // namespace rainfield
