#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>

namespace rainfield {

/// Nelder-Mead simplex search, maximizing, N fixed at compile time. Infeasible
/// points signal themselves by returning -inf from `f`. Returns the best
/// vertex; `best_val` (if given) receives its objective value.
template <int N>
Eigen::Matrix<double, N, 1> nelder_mead(
    const std::function<double(const Eigen::Matrix<double, N, 1>&)>& f,
    const Eigen::Matrix<double, N, 1>& start, double step, int max_iters,
    double* best_val = nullptr) {
    using Vec = Eigen::Matrix<double, N, 1>;
    std::array<Vec, N + 1> x;
    std::array<double, N + 1> fx;
    x[0] = start;
    fx[0] = f(start);
    for (int i = 0; i < N; ++i) {
        x[i + 1] = start + step * Vec::Unit(i);
        fx[i + 1] = f(x[i + 1]);
    }
    std::array<int, N + 1> ord;
    for (int it = 0; it < max_iters; ++it) {
        std::iota(ord.begin(), ord.end(), 0);
        std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fx[a] > fx[b]; });
        const int lo = ord[0], hi = ord[N];
        if (std::isfinite(fx[lo]) && std::isfinite(fx[hi]) && fx[lo] - fx[hi] < 1e-10) break;

        Vec centroid = Vec::Zero();
        for (int i = 0; i < N; ++i) centroid += x[ord[i]];
        centroid /= N;

        const Vec refl = centroid + (centroid - x[hi]);
        const double f_refl = f(refl);
        if (f_refl > fx[lo]) {
            const Vec expand = centroid + 2.0 * (centroid - x[hi]);
            const double f_exp = f(expand);
            if (f_exp > f_refl) {
                x[hi] = expand;
                fx[hi] = f_exp;
            } else {
                x[hi] = refl;
                fx[hi] = f_refl;
            }
        } else if (f_refl > fx[ord[N - 1]]) {
            x[hi] = refl;
            fx[hi] = f_refl;
        } else {
            const Vec contr = centroid + 0.5 * (x[hi] - centroid);
            const double f_contr = f(contr);
            if (f_contr > fx[hi]) {
                x[hi] = contr;
                fx[hi] = f_contr;
            } else {
                for (int i = 1; i <= N; ++i) {
                    x[ord[i]] = x[lo] + 0.5 * (x[ord[i]] - x[lo]);
                    fx[ord[i]] = f(x[ord[i]]);
                }
            }
        }
    }
    int best = 0;
    for (int i = 1; i <= N; ++i)
        if (fx[i] > fx[best]) best = i;
    if (best_val) *best_val = fx[best];
    return x[best];
}

}  // namespace rainfield
