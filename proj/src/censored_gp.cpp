#include "rainfield/censored_gp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>

#include "rainfield/optim.hpp"
#include "rainfield/parallel.hpp"
#include "rainfield/stats.hpp"

namespace rainfield {

namespace {

constexpr int kMaxCells = 4096;
constexpr double kJitter = 1e-10;
constexpr double kNugget = kCensoredGpNugget;

Eigen::MatrixXd gram_matrix(const GridSpec& grid, double l1, double l2, double variance) {
    const int h = grid.height, w = grid.width;
    const int d = h * w;
    if (d > kMaxCells) throw CensoredGpError("grid exceeds the 4096-cell kernel guard");
    Eigen::MatrixXd k(d, d);
    for (int i = 0; i < d; ++i) {
        const double ri = i / w, ci = i % w;
        for (int j = 0; j <= i; ++j) {
            const double dr = (ri - j / w) / l1;
            const double dc = (ci - j % w) / l2;
            const double v = variance * std::exp(-0.5 * (dr * dr + dc * dc));
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

/// Inverse of the power map on the extended field domain; identity at beta=1
/// so that path stays bit-exact.
double to_latent(double u, double beta) {
    if (beta == 1.0) return u;
    return u >= 0.0 ? std::pow(u, 1.0 / beta) : -std::pow(-u, 1.0 / beta);
}

double log_abs_dlatent(double u, double beta) {
    if (beta == 1.0) return 0.0;
    return -std::log(beta) + (1.0 / beta - 1.0) * std::log(std::max(std::abs(u), 1e-300));
}

struct ChainStats {
    double count = 0.0;
    Eigen::VectorXd sum;
    Eigen::MatrixXd scatter;
};

/// Coordinatewise chain over the censored coordinates. State u lives in the
/// field domain (positive coordinates pinned at the observations); the
/// callback receives the latent-domain vector after each sweep. At beta=1 the
/// Metropolis ratio is exactly one and no correction uniform is drawn, so the
/// chain coincides with plain Gibbs draw for draw.
void impute_chain(const CensoredGpParams& params, const CensoredField& field, int n_sweeps,
                  Rng& rng, std::uint64_t* accepts, std::uint64_t* proposals,
                  const std::function<void(const Eigen::VectorXd&)>& on_sweep,
                  Eigen::VectorXd* final_state) {
    params.validate();
    const int h = static_cast<int>(field.values.rows());
    const int w = static_cast<int>(field.values.cols());
    const int d = h * w;
    GridSpec grid{h, w};
    const Eigen::MatrixXd gamma =
        gram_matrix(grid, params.l1, params.l2, params.var_gp) +
        kNugget * params.var_gp * Eigen::MatrixXd::Identity(d, d);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gamma);
    if (ldlt.info() != Eigen::Success)
        throw CensoredGpError("kernel factorization failed in imputation");
    const Eigen::MatrixXd prec = ldlt.solve(Eigen::MatrixXd::Identity(d, d));

    const double sd = std::sqrt(params.var_gp);
    std::vector<int> censored;
    Eigen::VectorXd u(d), v(d);
    for (int i = 0; i < d; ++i) {
        const double x = field.values(i / w, i % w);
        if (field.censor_mask(i / w, i % w)) {
            censored.push_back(i);
            u(i) = -sd;
        } else {
            u(i) = x;
        }
        v(i) = to_latent(u(i), params.beta);
    }

    // initialize the censored block with a sequential truncated draw from its
    // conditional law given the observed cells; a constant start leaves
    // errors in the smooth kernel directions that coordinatewise sweeps
    // remove only slowly
    const int nc = static_cast<int>(censored.size());
    if (nc > 0) {
        Eigen::MatrixXd p_cc(nc, nc);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nc);
        for (int a = 0; a < nc; ++a) {
            for (int b = 0; b < nc; ++b) p_cc(a, b) = prec(censored[a], censored[b]);
            for (int k = 0; k < d; ++k)
                if (!field.censor_mask(k / w, k % w))
                    rhs(a) += prec(censored[a], k) * (v(k) - params.mu);
        }
        Eigen::LDLT<Eigen::MatrixXd> block(p_cc);
        const Eigen::VectorXd cond = Eigen::VectorXd::Constant(nc, params.mu) -
                                     block.solve(rhs);
        Eigen::MatrixXd sigma_c = block.solve(Eigen::MatrixXd::Identity(nc, nc));
        sigma_c = 0.5 * (sigma_c + sigma_c.transpose()) +
                  kJitter * Eigen::MatrixXd::Identity(nc, nc);
        Eigen::LLT<Eigen::MatrixXd> chol(sigma_c);
        if (chol.info() == Eigen::Success) {
            const Eigen::MatrixXd low = chol.matrixL();
            Eigen::VectorXd z(nc);
            for (int a = 0; a < nc; ++a) {
                double partial = cond(a);
                for (int b = 0; b < a; ++b) partial += low(a, b) * z(b);
                z(a) = truncnorm_below(0.0, 1.0, -partial / low(a, a), rng.uniform());
                const double vv = partial + low(a, a) * z(a);
                u(censored[a]) = params.beta == 1.0
                                     ? vv
                                     : -std::pow(-vv, params.beta);
                v(censored[a]) = to_latent(u(censored[a]), params.beta);
            }
        } else {
            for (int a = 0; a < nc; ++a) {
                u(censored[a]) = std::min(cond(a), -0.01 * sd);
                v(censored[a]) = to_latent(u(censored[a]), params.beta);
            }
        }
    }

    for (int sweep = 0; sweep < n_sweeps; ++sweep) {
        for (int j : censored) {
            const double var_j = 1.0 / prec(j, j);
            double dot = 0.0;
            for (int k = 0; k < d; ++k)
                if (k != j) dot += prec(j, k) * (v(k) - params.mu);
            const double m = params.mu - var_j * dot;
            const double s = std::sqrt(var_j);
            const double prop = truncnorm_below(m, s, 0.0, rng.uniform());
            // proposal density is the truncated conditional evaluated at the
            // field-domain point; its normalizer cancels between states
            const double log_alpha =
                (log_norm_pdf((to_latent(prop, params.beta) - m) / s) +
                 log_abs_dlatent(prop, params.beta) - log_norm_pdf((prop - m) / s)) -
                (log_norm_pdf((v(j) - m) / s) + log_abs_dlatent(u(j), params.beta) -
                 log_norm_pdf((u(j) - m) / s));
            bool accept = log_alpha >= 0.0;
            if (!accept) accept = std::log(rng.uniform()) < log_alpha;
            if (proposals) ++*proposals;
            if (accept) {
                if (accepts) ++*accepts;
                u(j) = prop;
                v(j) = to_latent(prop, params.beta);
            }
        }
        if (on_sweep) on_sweep(v);
    }
    if (final_state) *final_state = u;
}

}  // namespace

CensoredField CensoredField::from_values(Eigen::MatrixXd v) {
    CensoredField f;
    f.censor_mask = (v.array() <= 0.0);
    f.values = std::move(v);
    for (Eigen::Index i = 0; i < f.values.size(); ++i)
        if (f.values(i) < 0.0) throw CensoredGpError("censored field has negative entries");
    return f;
}

Eigen::MatrixXd censored_gp_gram(const CensoredGpParams& params, const GridSpec& grid) {
    params.validate();
    grid.validate();
    return gram_matrix(grid, params.l1, params.l2, params.var_gp);
}

CensoredField sample_censored_field(const CensoredGpParams& params, const GridSpec& grid,
                                    Rng& rng) {
    params.validate();
    grid.validate();
    const int d = grid.cells();
    const Eigen::MatrixXd gamma =
        censored_gp_gram(params, grid) +
        kNugget * params.var_gp * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(gamma);
    if (llt.info() != Eigen::Success)
        throw CensoredGpError("kernel factorization failed in sampling");
    Eigen::VectorXd z(d);
    for (int i = 0; i < d; ++i) z(i) = rng.normal();
    const Eigen::VectorXd v =
        Eigen::VectorXd::Constant(d, params.mu) + llt.matrixL() * z;

    CensoredField field;
    field.values.resize(grid.height, grid.width);
    field.censor_mask.resize(grid.height, grid.width);
    for (int i = 0; i < d; ++i) {
        const int r = i / grid.width, c = i % grid.width;
        const bool censored = v(i) <= 0.0;
        field.censor_mask(r, c) = censored;
        field.values(r, c) = censored ? 0.0 : std::pow(v(i), params.beta);
    }
    return field;
}

Eigen::MatrixXd gibbs_impute(const CensoredGpParams& params, const CensoredField& field,
                             int n_sweeps, Rng& rng) {
    if (params.beta != 1.0) throw CensoredGpError("gibbs_impute requires beta = 1");
    Eigen::VectorXd state;
    impute_chain(params, field, n_sweeps, rng, nullptr, nullptr, nullptr, &state);
    return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        state.data(), field.values.rows(), field.values.cols());
}

Eigen::MatrixXd mwg_impute(const CensoredGpParams& params, const CensoredField& field,
                           int n_sweeps, Rng& rng, double* acceptance_rate) {
    Eigen::VectorXd state;
    std::uint64_t acc = 0, prop = 0;
    impute_chain(params, field, n_sweeps, rng, &acc, &prop, nullptr, &state);
    if (acceptance_rate) *acceptance_rate = prop ? double(acc) / double(prop) : 1.0;
    return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        state.data(), field.values.rows(), field.values.cols());
}

GaussianProfileFit profile_gaussian_mle(const GridSpec& grid, double l1, double l2,
                                        double count, const Eigen::VectorXd& sum,
                                        const Eigen::MatrixXd& scatter) {
    GaussianProfileFit fit;
    const int d = grid.cells();
    if (!(l1 > 0.0) || !(l2 > 0.0) || count <= 0.0) return fit;
    const Eigen::MatrixXd r =
        gram_matrix(grid, l1, l2, 1.0) + kNugget * Eigen::MatrixXd::Identity(d, d);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(r);
    if (ldlt.info() != Eigen::Success) return fit;
    const Eigen::VectorXd diag = ldlt.vectorD();
    double log_det = 0.0;
    for (int i = 0; i < d; ++i) {
        if (diag(i) <= 1e-14) return fit;
        log_det += std::log(diag(i));
    }
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d);
    const Eigen::VectorXd r_inv_1 = ldlt.solve(ones);
    const Eigen::VectorXd r_inv_s = ldlt.solve(sum);
    const double denom = count * ones.dot(r_inv_1);
    if (denom <= 0.0) return fit;
    fit.mu = ones.dot(r_inv_s) / denom;
    // tr(R^-1 (S2 - mu(1 s^T + s 1^T) + n mu^2 1 1^T)) / (n d)
    const double quad = ldlt.solve(scatter).trace() - 2.0 * fit.mu * ones.dot(r_inv_s) +
                        count * fit.mu * fit.mu * ones.dot(r_inv_1);
    fit.var_gp = quad / (count * d);
    if (!(fit.var_gp > 0.0) || !std::isfinite(fit.var_gp)) return fit;
    fit.log_lik = -0.5 * count * d * (std::log(2.0 * M_PI * fit.var_gp) + 1.0) -
                  0.5 * count * log_det;
    fit.valid = std::isfinite(fit.log_lik);
    return fit;
}

namespace {

struct MStepResult {
    CensoredGpParams params;
    double log_lik = -std::numeric_limits<double>::infinity();
};

MStepResult m_step(const GridSpec& grid, const CensoredGpParams& current, double count,
                   const Eigen::VectorXd& sum, const Eigen::MatrixXd& scatter) {
    const double extent = std::max(grid.height, grid.width);
    const double lo = std::log(0.05), hi = std::log(10.0 * extent);
    auto objective = [&](const Eigen::Vector2d& log_l) {
        if (log_l(0) < lo || log_l(0) > hi || log_l(1) < lo || log_l(1) > hi)
            return -std::numeric_limits<double>::infinity();
        const GaussianProfileFit fit = profile_gaussian_mle(
            grid, std::exp(log_l(0)), std::exp(log_l(1)), count, sum, scatter);
        return fit.valid ? fit.log_lik : -std::numeric_limits<double>::infinity();
    };
    const std::array<Eigen::Vector2d, 3> starts = {
        Eigen::Vector2d(std::log(current.l1), std::log(current.l2)),
        Eigen::Vector2d(0.0, 0.0),
        Eigen::Vector2d(std::log(0.25 * extent), std::log(0.25 * extent))};

    MStepResult best;
    best.params = current;
    for (const Eigen::Vector2d& s : starts) {
        double val = 0.0;
        const Eigen::Vector2d arg = nelder_mead<2>(objective, s, 0.3, 120, &val);
        if (val > best.log_lik) {
            const GaussianProfileFit fit = profile_gaussian_mle(
                grid, std::exp(arg(0)), std::exp(arg(1)), count, sum, scatter);
            if (!fit.valid) continue;
            best.log_lik = val;
            best.params.l1 = std::exp(arg(0));
            best.params.l2 = std::exp(arg(1));
            best.params.mu = fit.mu;
            best.params.var_gp = fit.var_gp;
        }
    }
    return best;
}

/// Per-cell marginal composite log-likelihood of one field: censored cells
/// contribute P(V <= 0), positive cells the power-transformed normal density.
double composite_log_lik(const CensoredGpParams& p, const CensoredField& field) {
    const double sd = std::sqrt(p.var_gp);
    double total = 0.0;
    for (Eigen::Index r = 0; r < field.values.rows(); ++r)
        for (Eigen::Index c = 0; c < field.values.cols(); ++c) {
            if (field.censor_mask(r, c)) {
                total += log_norm_cdf(-p.mu / sd);
            } else {
                const double x = field.values(r, c);
                const double v = std::pow(x, 1.0 / p.beta);
                total += log_norm_pdf((v - p.mu) / sd) - std::log(sd) - std::log(p.beta) +
                         (1.0 / p.beta - 1.0) * std::log(std::max(x, 1e-300));
            }
        }
    return total;
}

}  // namespace

EmReport em_fit(const std::vector<CensoredField>& fields, const GridSpec& grid,
                const std::vector<double>& beta_grid, int em_iters, int gibbs_sweeps,
                Rng& rng) {
    if (fields.empty()) throw CensoredGpError("em_fit needs at least one field");
    if (beta_grid.empty()) throw CensoredGpError("em_fit needs a nonempty beta grid");
    if (em_iters < 1 || gibbs_sweeps < 2)
        throw CensoredGpError("em_fit needs em_iters >= 1 and gibbs_sweeps >= 2");
    grid.validate();
    const int d = grid.cells();
    if (d > kMaxCells) throw CensoredGpError("grid exceeds the 4096-cell kernel guard");
    for (const CensoredField& f : fields)
        if (f.values.rows() != grid.height || f.values.cols() != grid.width)
            throw CensoredGpError("field shape does not match the grid");

    // every fifth field is held out for the beta selection score
    std::vector<int> train, held;
    for (int f = 0; f < static_cast<int>(fields.size()); ++f)
        (fields.size() >= 5 && f % 5 == 4 ? held : train).push_back(f);
    if (held.empty()) held = train;

    const int burn = gibbs_sweeps / 2;
    EmReport report;
    double best_score = std::numeric_limits<double>::infinity();

    for (std::size_t bi = 0; bi < beta_grid.size(); ++bi) {
        const double beta = beta_grid[bi];
        Rng beta_rng = rng.child(bi);

        CensoredGpParams params;
        params.beta = beta;
        // start over-smooth: imputing with too short a lengthscale produces
        // under-correlated fill-ins that the M-step cannot distinguish from
        // data, so the iteration only contracts reliably from above
        params.l1 = params.l2 = 0.5 * std::max(grid.height, grid.width);
        double pos_sum = 0.0, pos_sq = 0.0;
        std::size_t pos_n = 0;
        for (int f : train)
            for (Eigen::Index i = 0; i < fields[f].values.size(); ++i)
                if (fields[f].values(i) > 0.0) {
                    const double v = std::pow(fields[f].values(i), 1.0 / beta);
                    pos_sum += v;
                    pos_sq += v * v;
                    ++pos_n;
                }
        if (pos_n > 1) {
            params.mu = pos_sum / pos_n;
            params.var_gp =
                std::max((pos_sq - pos_n * params.mu * params.mu) / (pos_n - 1), 1e-4);
        }
        params.validate();

        EmBetaTrace trace;
        trace.beta = beta;
        for (int iter = 0; iter < em_iters; ++iter) {
            Rng iter_rng = beta_rng.child(iter);
            double count = 0.0;
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
            Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
            std::uint64_t acc = 0, prop = 0;

            // chains use split streams per field, so the reduction order is
            // the only serial dependency
            const int chunk = std::max(1u, std::thread::hardware_concurrency());
            std::vector<ChainStats> slots(chunk);
            std::vector<std::uint64_t> slot_acc(chunk), slot_prop(chunk);
            for (std::size_t base = 0; base < train.size(); base += chunk) {
                const std::size_t n_block = std::min<std::size_t>(chunk, train.size() - base);
                parallel_for(n_block, [&](std::size_t k) {
                    ChainStats& st = slots[k];
                    st.count = 0.0;
                    st.sum = Eigen::VectorXd::Zero(d);
                    st.scatter = Eigen::MatrixXd::Zero(d, d);
                    slot_acc[k] = slot_prop[k] = 0;
                    Rng chain_rng = iter_rng.child(base + k);
                    int sweep = 0;
                    impute_chain(params, fields[train[base + k]], gibbs_sweeps, chain_rng,
                                 &slot_acc[k], &slot_prop[k],
                                 [&](const Eigen::VectorXd& v) {
                                     if (sweep++ < burn) return;
                                     st.count += 1.0;
                                     st.sum += v;
                                     st.scatter.selfadjointView<Eigen::Lower>().rankUpdate(v);
                                 },
                                 nullptr);
                    st.scatter = st.scatter.selfadjointView<Eigen::Lower>();
                });
                for (std::size_t k = 0; k < n_block; ++k) {
                    count += slots[k].count;
                    sum += slots[k].sum;
                    scatter += slots[k].scatter;
                    acc += slot_acc[k];
                    prop += slot_prop[k];
                }
            }

            const MStepResult step = m_step(grid, params, count, sum, scatter);
            params = step.params;
            params.beta = beta;
            trace.iterates.push_back(params);
            trace.acceptance_rates.push_back(prop ? double(acc) / double(prop) : 1.0);
        }

        double score = 0.0;
        for (int f : held) score -= composite_log_lik(params, fields[f]);
        trace.selection_score = score;
        report.traces.push_back(std::move(trace));
        if (score < best_score) {
            best_score = score;
            report.selected = params;
        }
    }
    return report;
}

}  // namespace rainfield
