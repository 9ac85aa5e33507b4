#include "rainfield/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rainfield/optim.hpp"
#include "rainfield/parallel.hpp"

namespace rainfield {

std::vector<VirtualGauge> links_to_midpoint_gauges(const std::vector<LinkSegment>& links,
                                                   const Eigen::VectorXd& y,
                                                   const std::vector<PowerLawParams>& params) {
    if (y.size() != static_cast<Eigen::Index>(links.size()) || links.size() != params.size())
        throw BaselineError("links, observations and params must have equal lengths");
    std::vector<VirtualGauge> gauges(links.size());
    for (std::size_t i = 0; i < links.size(); ++i) {
        const double len = links[i].length();
        if (!(len > 0.0)) throw BaselineError("zero-length link cannot form a gauge");
        const double path_att = std::max(y(static_cast<Eigen::Index>(i)), 0.0) /
                                (params[i].a * len);
        gauges[i].position = 0.5 * (links[i].start + links[i].end);
        gauges[i].value = std::pow(path_att, 1.0 / params[i].b);
    }
    return gauges;
}

IdwField idw_interpolate(const std::vector<VirtualGauge>& gauges, const GridSpec& grid,
                         const IdwConfig& cfg) {
    cfg.validate();
    grid.validate();
    if (gauges.empty()) throw BaselineError("idw_interpolate needs at least one gauge");

    IdwField out;
    out.field = RainField::zeros(grid);
    out.coverage.setConstant(grid.height, grid.width, false);
    parallel_for(static_cast<std::size_t>(grid.cells()), [&](std::size_t idx) {
        const int r = static_cast<int>(idx) / grid.width;
        const int c = static_cast<int>(idx) % grid.width;
        const Eigen::Vector2d cell(c, r);
        double num = 0.0, den = 0.0;
        double near_sum = 0.0;
        int near_n = 0;
        for (const VirtualGauge& g : gauges) {
            const double d = (g.position - cell).norm();
            if (d > cfg.roi) continue;
            if (d <= cfg.eps) {  // coincident gauge decides the cell exactly
                near_sum += g.value;
                ++near_n;
                continue;
            }
            const double w = std::pow(d, -cfg.p);
            num += w * g.value;
            den += w;
        }
        if (near_n > 0) {
            out.field.values(r, c) = near_sum / near_n;
            out.coverage(r, c) = true;
        } else if (den > 0.0) {
            out.field.values(r, c) = num / den;
            out.coverage(r, c) = true;
        }
    });
    return out;
}

double bilinear_sample(const RainField& field, const Eigen::Vector2d& pos) {
    const int h = field.grid.height, w = field.grid.width;
    const double x = std::clamp(pos.x(), 0.0, double(w - 1));
    const double y = std::clamp(pos.y(), 0.0, double(h - 1));
    const int c0 = std::min(static_cast<int>(std::floor(x)), w - 2 >= 0 ? w - 2 : 0);
    const int r0 = std::min(static_cast<int>(std::floor(y)), h - 2 >= 0 ? h - 2 : 0);
    const int c1 = std::min(c0 + 1, w - 1);
    const int r1 = std::min(r0 + 1, h - 1);
    const double fx = x - c0, fy = y - r0;
    return (1.0 - fy) * ((1.0 - fx) * field.values(r0, c0) + fx * field.values(r0, c1)) +
           fy * ((1.0 - fx) * field.values(r1, c0) + fx * field.values(r1, c1));
}

RainField gmz_reconstruct(const std::vector<LinkSegment>& links, const Eigen::VectorXd& y,
                          const std::vector<PowerLawParams>& params, const GridSpec& grid,
                          int k_points, int n_iters, IdwConfig idw_cfg) {
    if (k_points < 1) throw BaselineError("gmz_reconstruct needs k_points >= 1");
    if (n_iters < 1) throw BaselineError("gmz_reconstruct needs n_iters >= 1");
    const std::vector<VirtualGauge> mid = links_to_midpoint_gauges(links, y, params);
    const std::size_t n = links.size();

    // K gauges per link at midpoint-rule fractions, seeded at the path average
    std::vector<VirtualGauge> gauges(n * k_points);
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < k_points; ++k) {
            const double t = (k + 0.5) / k_points;
            gauges[i * k_points + k].position =
                links[i].start + t * (links[i].end - links[i].start);
            gauges[i * k_points + k].value = mid[i].value;
        }

    RainField field = idw_interpolate(gauges, grid, idw_cfg).field;
    for (int iter = 0; iter < n_iters; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            // attenuation-domain target: mean of a r^b along the link
            const double target = std::max(y(static_cast<Eigen::Index>(i)), 0.0) /
                                  links[i].length();
            std::vector<double> att(k_points);
            double mean_att = 0.0;
            for (int k = 0; k < k_points; ++k) {
                const double r = std::max(
                    bilinear_sample(field, gauges[i * k_points + k].position), 0.0);
                att[k] = params[i].a * std::pow(r, params[i].b);
                mean_att += att[k];
            }
            mean_att /= k_points;
            for (int k = 0; k < k_points; ++k) {
                const double proj =
                    mean_att > 0.0 ? att[k] * target / mean_att : target;
                gauges[i * k_points + k].value =
                    std::pow(proj / params[i].a, 1.0 / params[i].b);
            }
        }
        field = idw_interpolate(gauges, grid, idw_cfg).field;
    }
    return field;
}

Variogram fit_variogram_l1(const std::vector<VirtualGauge>& gauges) {
    if (gauges.size() < 3) throw BaselineError("variogram fit needs at least 3 gauges");
    constexpr int kBins = 15;
    constexpr int kStarts = 8;

    Eigen::Vector2d lo = gauges[0].position, hi = gauges[0].position;
    for (const VirtualGauge& g : gauges) {
        lo = lo.cwiseMin(g.position);
        hi = hi.cwiseMax(g.position);
    }
    const double half_diag = 0.5 * (hi - lo).norm();
    if (!(half_diag > 0.0)) throw BaselineError("variogram fit needs distinct positions");

    std::vector<double> bin_gamma(kBins, 0.0), bin_dist(kBins, 0.0);
    std::vector<int> bin_n(kBins, 0);
    for (std::size_t i = 0; i < gauges.size(); ++i)
        for (std::size_t j = i + 1; j < gauges.size(); ++j) {
            const double h = (gauges[i].position - gauges[j].position).norm();
            if (h > half_diag) continue;
            const int b = std::min(static_cast<int>(h / half_diag * kBins), kBins - 1);
            const double dv = gauges[i].value - gauges[j].value;
            bin_gamma[b] += 0.5 * dv * dv;
            bin_dist[b] += h;
            ++bin_n[b];
        }
    std::vector<double> gam, dist;
    double max_gamma = 0.0;
    for (int b = 0; b < kBins; ++b) {
        if (bin_n[b] == 0) continue;
        gam.push_back(bin_gamma[b] / bin_n[b]);
        dist.push_back(bin_dist[b] / bin_n[b]);
        max_gamma = std::max(max_gamma, gam.back());
    }
    if (gam.empty() || max_gamma <= 0.0) {
        Variogram flat;
        flat.nugget = 0.0;
        flat.sill = 1e-12;
        flat.range = half_diag;
        return flat;
    }

    // search in (nugget, sill, range) with bound clamping inside the objective
    const double range_cap = 4.0 * half_diag;
    auto clamp_params = [&](const Eigen::Vector3d& q) {
        Variogram v;
        v.nugget = std::clamp(q(0), 0.0, 2.0 * max_gamma);
        v.sill = std::clamp(q(1), 1e-12, 4.0 * max_gamma);
        v.range = std::clamp(q(2), 1e-3 * half_diag, range_cap);
        return v;
    };
    auto objective = [&](const Eigen::Vector3d& q) {
        const Variogram v = clamp_params(q);
        double l1 = 0.0;
        for (std::size_t i = 0; i < gam.size(); ++i) l1 += std::abs(v(dist[i]) - gam[i]);
        return -l1;
    };

    double best_val = -std::numeric_limits<double>::infinity();
    Eigen::Vector3d best_arg(0.0, max_gamma, half_diag);
    for (int s = 0; s < kStarts; ++s) {
        const double range0 = half_diag * std::pow(2.0, (s % 4) - 2);  // hd/4 .. 2 hd
        const double sill0 = (s < 4 ? 1.0 : 0.5) * max_gamma;
        double val = 0.0;
        const Eigen::Vector3d arg = nelder_mead<3>(
            objective, Eigen::Vector3d(0.0, sill0, range0), 0.25 * max_gamma, 200, &val);
        if (val > best_val) {
            best_val = val;
            best_arg = arg;
        }
    }
    return clamp_params(best_arg);
}

KrigeField ordinary_krige(const std::vector<VirtualGauge>& gauges, const GridSpec& grid,
                          const Variogram& vario) {
    vario.validate();
    grid.validate();
    const int n = static_cast<int>(gauges.size());
    if (n < 2) throw BaselineError("ordinary kriging needs at least 2 gauges");
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if ((gauges[i].position - gauges[j].position).norm() < 1e-12)
                throw BaselineError("ordinary kriging needs distinct gauge positions");

    // semivariance matrix with the unbiasedness Lagrange row
    Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n + 1, n + 1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            sys(i, j) = vario((gauges[i].position - gauges[j].position).norm());
        sys(i, n) = sys(n, i) = 1.0;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(sys);
    if (!lu.isInvertible()) {
        sys.topLeftCorner(n, n).diagonal().array() += 1e-10;
        lu.compute(sys);
        if (!lu.isInvertible()) throw BaselineError("singular kriging system");
    }

    KrigeField out;
    out.estimate = RainField::zeros(grid);
    out.variance.setZero(grid.height, grid.width);
    out.raw.setZero(grid.height, grid.width);
    parallel_for(static_cast<std::size_t>(grid.cells()), [&](std::size_t idx) {
        const int r = static_cast<int>(idx) / grid.width;
        const int c = static_cast<int>(idx) % grid.width;
        const Eigen::Vector2d cell(c, r);
        for (int i = 0; i < n; ++i)
            if ((gauges[i].position - cell).norm() < 1e-9) {  // exactness at data points
                out.raw(r, c) = gauges[i].value;
                out.estimate.values(r, c) = std::max(gauges[i].value, 0.0);
                out.variance(r, c) = vario.nugget;
                return;
            }
        Eigen::VectorXd rhs(n + 1);
        for (int i = 0; i < n; ++i) rhs(i) = vario((gauges[i].position - cell).norm());
        rhs(n) = 1.0;
        const Eigen::VectorXd sol = lu.solve(rhs);
        double est = 0.0;
        for (int i = 0; i < n; ++i) est += sol(i) * gauges[i].value;
        out.raw(r, c) = est;
        out.estimate.values(r, c) = std::max(est, 0.0);
        out.variance(r, c) = sol.head(n).dot(rhs.head(n)) + sol(n);
    });
    return out;
}

}  // namespace rainfield
