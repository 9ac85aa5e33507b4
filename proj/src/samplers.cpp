#include "rainfield/samplers.hpp"

#include <cmath>
#include <numeric>

#include "rainfield/parallel.hpp"

namespace rainfield {

namespace {

double gaussian_log_density(const Eigen::VectorXd& residual, const Eigen::VectorXd& variances) {
    double acc = -0.5 * residual.size() * std::log(2.0 * M_PI);
    for (Eigen::Index i = 0; i < residual.size(); ++i) {
        acc -= 0.5 * std::log(variances(i));
        acc -= 0.5 * residual(i) * residual(i) / variances(i);
    }
    return acc;
}

double log_sum_exp(const std::vector<double>& logs) {
    const double mx = *std::max_element(logs.begin(), logs.end());
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - mx);
    return mx + std::log(acc);
}

void check_finite(const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite()) throw SamplerError(std::string(what) + ": non-finite values");
}

/// One DPS reverse step t -> t-1: bridge draw plus a unit-norm guidance move
/// of magnitude gamma along the plug-in likelihood gradient.
Eigen::VectorXd dps_step(const NoiseSchedule& schedule, const Denoiser& den,
                         const Likelihood& lik, double gamma, int t, const Eigen::VectorXd& x,
                         Rng& rng) {
    const double sigma_t = schedule.sigma(t);
    const Eigen::VectorXd x0_hat = den.evaluate(sigma_t, x);
    Eigen::VectorXd out = bridge_sample(schedule, t - 1, t, x0_hat, x, rng);
    if (gamma != 0.0) {
        const Eigen::VectorXd g_obs = lik.gradient(x0_hat);
        const Eigen::VectorXd g = den.jacobian_transpose_product(sigma_t, x, g_obs);
        check_finite(g, "dps guidance gradient");
        const double norm = g.norm();
        if (norm > 0.0) out += (gamma / norm) * g;
    }
    return out;
}

Eigen::VectorXd initial_state(const NoiseSchedule& schedule, Eigen::Index n, Rng& rng) {
    const double s_top = schedule.sigma(schedule.steps());
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = s_top * rng.normal();
    return x;
}

}  // namespace

LinearGaussianLikelihood::LinearGaussianLikelihood(Eigen::MatrixXd op, Eigen::VectorXd y,
                                                   Eigen::VectorXd sigmas)
    : op_(std::move(op)), y_(std::move(y)), sigmas_(std::move(sigmas)) {
    if (op_.rows() != y_.size() || op_.rows() != sigmas_.size())
        throw SamplerError("LinearGaussianLikelihood: shape mismatch");
    if ((sigmas_.array() <= 0.0).any())
        throw SamplerError("LinearGaussianLikelihood: sigmas must be positive");
}

double LinearGaussianLikelihood::log_density(const Eigen::VectorXd& x0) const {
    return gaussian_log_density(y_ - op_ * x0, sigmas_.array().square());
}

Eigen::VectorXd LinearGaussianLikelihood::gradient(const Eigen::VectorXd& x0) const {
    const Eigen::VectorXd r = (y_ - op_ * x0).array() / sigmas_.array().square();
    return op_.transpose() * r;
}

double LinearGaussianLikelihood::log_density_inflated(const Eigen::VectorXd& x0,
                                                      double extra_var) const {
    return gaussian_log_density(y_ - op_ * x0, sigmas_.array().square() + extra_var);
}

CmlLikelihood::CmlLikelihood(ObservationModel model, Eigen::VectorXd y)
    : model_(std::move(model)), y_(std::move(y)) {
    model_.validate();
    if (y_.size() != model_.links()) throw SamplerError("CmlLikelihood: y length mismatch");
}

double CmlLikelihood::log_density(const Eigen::VectorXd& x0) const {
    return log_likelihood_flat(model_, x0, y_);
}

Eigen::VectorXd CmlLikelihood::gradient(const Eigen::VectorXd& x0) const {
    return grad_log_likelihood_flat(model_, x0, y_);
}

double CmlLikelihood::log_density_inflated(const Eigen::VectorXd& x0, double extra_var) const {
    return gaussian_log_density(y_ - forward_flat(model_, x0),
                                model_.noise.sigmas.array().square() + extra_var);
}

Ensemble dps_sample(const NoiseSchedule& schedule, const Denoiser& den, const Likelihood& lik,
                    const SamplerConfig& cfg, Rng& rng) {
    const Eigen::Index n = den.dim();
    const int T = schedule.steps();
    Ensemble out;
    out.samples.resize(cfg.batch, n);
    out.final_log_lik.resize(cfg.batch);

    const Rng master(rng.next_u64());
    parallel_for(static_cast<std::size_t>(cfg.batch), [&](std::size_t bi) {
        Rng r = master.child(bi);
        Eigen::VectorXd x = initial_state(schedule, n, r);
        for (int t = T; t >= 2; --t) x = dps_step(schedule, den, lik, cfg.gamma, t, x, r);
        const Eigen::VectorXd x0 = den.evaluate(schedule.sigma(1), x);
        out.samples.row(static_cast<Eigen::Index>(bi)) = x0.transpose();
        out.final_log_lik(static_cast<Eigen::Index>(bi)) = lik.log_density(x0);
    });
    return out;
}

Ensemble tds_sample(const NoiseSchedule& schedule, const Denoiser& den, const Likelihood& lik,
                    const SamplerConfig& cfg, Rng& rng) {
    const int N = cfg.n_particles;
    if (N < 1) throw SamplerError("tds_sample: n_particles must be >= 1");
    const Eigen::Index n = den.dim();
    const int T = schedule.steps();

    const std::uint64_t base = rng.next_u64();
    const Rng master(base);
    std::vector<Rng> streams;
    streams.reserve(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) streams.push_back(master.child(static_cast<std::size_t>(k)));
    Rng resample_rng = master.child(static_cast<std::size_t>(N));

    // twisted intermediate likelihood at level t
    auto twisted = [&](int t, const Eigen::VectorXd& x) {
        const double st = schedule.sigma(t);
        const Eigen::VectorXd x0_hat = den.evaluate(st, x);
        return lik.log_density_inflated(x0_hat, (cfg.tau * st) * (cfg.tau * st));
    };

    std::vector<Eigen::VectorXd> particles(static_cast<std::size_t>(N));
    std::vector<double> logw(static_cast<std::size_t>(N), 0.0);
    std::vector<double> twist_prev(static_cast<std::size_t>(N));
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t k) {
        particles[k] = initial_state(schedule, n, streams[k]);
        twist_prev[k] = twisted(T, particles[k]);
        logw[k] = twist_prev[k];
    });

    Ensemble out;
    auto normalized = [&]() {
        const double lse = log_sum_exp(logw);
        if (!std::isfinite(lse))
            throw SamplerError("tds_sample: all particle weights underflowed");
        std::vector<double> w(logw.size());
        for (std::size_t k = 0; k < logw.size(); ++k) w[k] = std::exp(logw[k] - lse);
        return w;
    };
    auto maybe_resample = [&]() {
        if (N < 2) return;
        const auto w = normalized();
        double sum_sq = 0.0;
        for (double v : w) sum_sq += v * v;
        const double ess = 1.0 / sum_sq;
        out.ess_trace.push_back(ess);
        if (ess >= 0.5 * N) return;
        std::vector<double> cdf(w.size());
        std::partial_sum(w.begin(), w.end(), cdf.begin());
        std::vector<Eigen::VectorXd> next(particles.size());
        std::vector<double> twist_next(particles.size());
        for (std::size_t k = 0; k < particles.size(); ++k) {
            const std::size_t j = resample_rng.categorical_from_cdf(cdf);
            next[k] = particles[j];
            twist_next[k] = twist_prev[j];
        }
        particles = std::move(next);
        twist_prev = std::move(twist_next);
        std::fill(logw.begin(), logw.end(), 0.0);
    };

    for (int t = T; t >= 2; --t) {
        maybe_resample();
        parallel_for(static_cast<std::size_t>(N), [&](std::size_t k) {
            particles[k] = dps_step(schedule, den, lik, cfg.gamma, t, particles[k], streams[k]);
            const double tw = twisted(t - 1, particles[k]);
            logw[k] += tw - twist_prev[k];
            twist_prev[k] = tw;
        });
    }

    // final denoise and exact-likelihood weight correction
    out.samples.resize(N, n);
    out.final_log_lik.resize(N);
    std::vector<Eigen::VectorXd> finals(static_cast<std::size_t>(N));
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t k) {
        finals[k] = den.evaluate(schedule.sigma(1), particles[k]);
        const double ll = lik.log_density(finals[k]);
        logw[k] += ll - twist_prev[k];
        out.final_log_lik(static_cast<Eigen::Index>(k)) = ll;
    });

    if (N >= 2) {
        const auto w = normalized();
        std::vector<double> cdf(w.size());
        std::partial_sum(w.begin(), w.end(), cdf.begin());
        Eigen::VectorXd ll_resampled(N);
        for (int k = 0; k < N; ++k) {
            const std::size_t j = resample_rng.categorical_from_cdf(cdf);
            out.samples.row(k) = finals[j].transpose();
            ll_resampled(k) = out.final_log_lik(static_cast<Eigen::Index>(j));
        }
        out.final_log_lik = ll_resampled;
    } else {
        out.samples.row(0) = finals[0].transpose();
    }
    return out;
}

Ensemble daps_sample(const NoiseSchedule& schedule, const Denoiser& den, const Likelihood& lik,
                     const SamplerConfig& cfg, Rng& rng) {
    const Eigen::Index n = den.dim();
    const int T = schedule.steps();
    Ensemble out;
    out.samples.resize(cfg.batch, n);
    out.final_log_lik.resize(cfg.batch);

    // deterministic denoising path: n_ode bridge-mean sub-steps down the ladder
    auto denoise_path = [&](int t, Eigen::VectorXd x) {
        double sigma_hi = schedule.sigma(t);
        if (cfg.n_ode > 1 && sigma_hi > schedule.sigma_min) {
            const double lo = std::log(schedule.sigma_min), hi = std::log(sigma_hi);
            for (int j = 1; j < cfg.n_ode; ++j) {
                const double sigma_lo =
                    std::exp(hi + (lo - hi) * static_cast<double>(j) / (cfg.n_ode - 1));
                const Eigen::VectorXd x0_hat = den.evaluate(sigma_hi, x);
                const double gamma = (sigma_lo * sigma_lo) / (sigma_hi * sigma_hi);
                x = gamma * x + (1.0 - gamma) * x0_hat;
                sigma_hi = sigma_lo;
            }
        }
        return den.evaluate(sigma_hi, x);
    };

    const Rng master(rng.next_u64());
    parallel_for(static_cast<std::size_t>(cfg.batch), [&](std::size_t bi) {
        Rng r = master.child(bi);
        Eigen::VectorXd x = initial_state(schedule, n, r);
        for (int t = T; t >= 1; --t) {
            const Eigen::VectorXd x0_hat = denoise_path(t, x);
            Eigen::VectorXd x0 = x0_hat;
            const double sigma_t = schedule.sigma(t);
            // annealed anchor variance, floored at min_ratio so the proximal
            // term never collapses onto the denoised point mass
            const double anchor_var = std::max(sigma_t * sigma_t, cfg.min_ratio);
            for (int j = 0; j < cfg.mcmc_steps && cfg.eta0 > 0.0; ++j) {
                const Eigen::VectorXd drift = lik.gradient(x0) + (x0_hat - x0) / anchor_var;
                check_finite(drift, "daps langevin drift");
                const double step_sd = std::sqrt(2.0 * cfg.eta0);
                for (Eigen::Index i = 0; i < n; ++i)
                    x0(i) += cfg.eta0 * drift(i) + step_sd * r.normal();
                if (x0.norm() > 1e6)
                    throw SamplerError("daps_sample: Langevin chain diverged");
            }
            const double next_sigma = schedule.sigma(t - 1);
            x = x0;
            if (next_sigma > 0.0)
                for (Eigen::Index i = 0; i < n; ++i) x(i) += next_sigma * r.normal();
        }
        out.samples.row(static_cast<Eigen::Index>(bi)) = x.transpose();
        out.final_log_lik(static_cast<Eigen::Index>(bi)) = lik.log_density(x);
    });
    return out;
}

Ensemble reddiff_sample(const NoiseSchedule& schedule, const Denoiser& den,
                        const Likelihood& lik, const SamplerConfig& cfg, Rng& rng) {
    const Eigen::Index n = den.dim();
    const int T = schedule.steps();
    if (cfg.init && cfg.init->size() != n)
        throw SamplerError("reddiff_sample: init size mismatch");
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    Ensemble out;
    out.samples.resize(cfg.batch, n);
    out.final_log_lik.resize(cfg.batch);

    const Rng master(rng.next_u64());
    parallel_for(static_cast<std::size_t>(cfg.batch), [&](std::size_t bi) {
        Rng r = master.child(bi);
        Eigen::VectorXd mu = cfg.init ? *cfg.init : Eigen::VectorXd::Zero(n);
        Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd eps(n);
        for (int step = 0; step < cfg.n_steps; ++step) {
            // descending sigma levels; reuse the ladder cyclically if n_steps > T
            const int t = T - (step % T);
            const double sigma_t = schedule.sigma(t);
            for (Eigen::Index i = 0; i < n; ++i) eps(i) = r.normal();
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
            if (cfg.obs_weight != 0.0) grad -= cfg.obs_weight * lik.gradient(mu);
            if (cfg.grad_term_weight != 0.0) {
                const Eigen::VectorXd denoised = den.evaluate(sigma_t, mu + sigma_t * eps);
                grad += cfg.grad_term_weight * (mu - denoised);
            }
            check_finite(grad, "reddiff loss gradient");
            m = beta1 * m + (1.0 - beta1) * grad;
            v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
            const double bc1 = 1.0 - std::pow(beta1, step + 1);
            const double bc2 = 1.0 - std::pow(beta2, step + 1);
            mu -= (cfg.lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + adam_eps).matrix());
        }
        out.samples.row(static_cast<Eigen::Index>(bi)) = mu.transpose();
        out.final_log_lik(static_cast<Eigen::Index>(bi)) = lik.log_density(mu);
    });
    return out;
}

const std::map<std::string, SamplerFn>& sampler_registry() {
    static const std::map<std::string, SamplerFn> registry = [] {
        std::map<std::string, SamplerFn> reg;
        reg["DPS"] = dps_sample;
        reg["TDS"] = tds_sample;
        reg["DAPS"] = daps_sample;
        reg["RedDiff"] = reddiff_sample;
        auto external = [](const std::string& tag, const std::string& ref) {
            return [tag, ref](const NoiseSchedule&, const Denoiser&, const Likelihood&,
                              const SamplerConfig&, Rng&) -> Ensemble {
                throw NotImplementedError(tag + ": algorithm defined in external reference (" +
                                          ref + "); not implemented");
            };
        };
        reg["MGPS"] = external("MGPS", "midpoint guidance posterior sampling, Moufad et al.");
        reg["MGDM"] = external("MGDM", "mixture Gaussian denoising models, Janati et al.");
        reg["CREPE"] = external("CREPE", "replica-exchange posterior sampling, He et al.");
        return reg;
    }();
    return registry;
}

SamplerFn lookup_sampler(const std::string& tag) {
    const auto& reg = sampler_registry();
    const auto it = reg.find(tag);
    if (it == reg.end()) {
        std::string known;
        for (const auto& [k, _] : reg) known += (known.empty() ? "" : ", ") + k;
        throw SamplerError("unknown sampler tag '" + tag + "'; registered: " + known);
    }
    return it->second;
}

}  // namespace rainfield
