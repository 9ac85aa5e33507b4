#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "rainfield/samplers.hpp"

using namespace rainfield;

namespace {

Eigen::MatrixXd random_spd(int n, Rng& rng, double scale) {
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    return scale * ((a * a.transpose()) / n + 0.1 * Eigen::MatrixXd::Identity(n, n));
}

Eigen::VectorXd random_vec(int n, Rng& rng) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

/// Likelihood that carries no information: constant density, zero gradient.
class ConstantLikelihood : public Likelihood {
public:
    explicit ConstantLikelihood(int m) : sigmas_(Eigen::VectorXd::Ones(m)) {}
    double log_density(const Eigen::VectorXd&) const override { return 0.0; }
    Eigen::VectorXd gradient(const Eigen::VectorXd& x0) const override {
        return Eigen::VectorXd::Zero(x0.size());
    }
    const Eigen::VectorXd& noise_sigmas() const override { return sigmas_; }
    double log_density_inflated(const Eigen::VectorXd&, double) const override { return 0.0; }

private:
    Eigen::VectorXd sigmas_;
};

/// Wraps a likelihood, shifting every log-density by a constant.
class ShiftedLikelihood : public Likelihood {
public:
    ShiftedLikelihood(const Likelihood& base, double shift) : base_(base), shift_(shift) {}
    double log_density(const Eigen::VectorXd& x) const override {
        return base_.log_density(x) + shift_;
    }
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override {
        return base_.gradient(x);
    }
    const Eigen::VectorXd& noise_sigmas() const override { return base_.noise_sigmas(); }
    double log_density_inflated(const Eigen::VectorXd& x, double v) const override {
        return base_.log_density_inflated(x, v) + shift_;
    }

private:
    const Likelihood& base_;
    double shift_;
};

class NanGradientLikelihood : public ConstantLikelihood {
public:
    using ConstantLikelihood::ConstantLikelihood;
    Eigen::VectorXd gradient(const Eigen::VectorXd& x0) const override {
        return Eigen::VectorXd::Constant(x0.size(),
                                         std::numeric_limits<double>::quiet_NaN());
    }
};

struct Anchor {
    Eigen::VectorXd prior_mean;
    Eigen::MatrixXd prior_cov;
    Eigen::MatrixXd op;
    Eigen::VectorXd y;
    Eigen::VectorXd sigmas;
    Eigen::VectorXd post_mean;
    Eigen::MatrixXd post_cov;
};

/// Small linear-Gaussian problem with its conjugate posterior.
Anchor make_anchor(int n, int m, std::uint64_t seed) {
    Rng rng(seed);
    Anchor a;
    a.prior_mean = 2.0 * random_vec(n, rng);
    a.prior_cov = random_spd(n, rng, 4.0);
    a.op.resize(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a.op(i, j) = rng.uniform(0.0, 1.0);
    a.sigmas = Eigen::VectorXd::Constant(m, 0.5);
    const Eigen::VectorXd truth = a.prior_mean + random_vec(n, rng);
    a.y = a.op * truth;
    for (int i = 0; i < m; ++i) a.y(i) += a.sigmas(i) * rng.normal();

    const Eigen::MatrixXd d_inv = a.sigmas.array().square().inverse().matrix().asDiagonal();
    const Eigen::MatrixXd prec = a.prior_cov.inverse() + a.op.transpose() * d_inv * a.op;
    a.post_cov = prec.inverse();
    a.post_mean = a.post_cov * (a.prior_cov.inverse() * a.prior_mean +
                                a.op.transpose() * d_inv * a.y);
    return a;
}

}  // namespace

TEST_CASE("dps with an uninformative likelihood equals ancestral sampling bit-exactly") {
    Rng setup(1);
    const int n = 5;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 2.0));
    const NoiseSchedule s = karras_schedule(60, 2e-3, 100.0, 7.0);
    const ConstantLikelihood lik(2);

    SamplerConfig cfg;
    cfg.algorithm = "DPS";
    cfg.n_steps = 60;
    cfg.batch = 6;
    cfg.gamma = 4.0;  // the gradient is zero, so guidance must be a no-op

    Rng r1(42), r2(42);
    const Ensemble e = dps_sample(s, den, lik, cfg, r1);
    const Eigen::MatrixXd anc = ancestral_sample(s, den, r2, cfg.batch);
    CHECK((e.samples - anc).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tds with one particle coincides with dps") {
    Rng setup(2);
    const int n = 4;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 2.0));
    const NoiseSchedule s = karras_schedule(50, 2e-3, 100.0, 7.0);
    const Anchor a = make_anchor(n, 3, 7);
    const LinearGaussianLikelihood lik(a.op, a.y, a.sigmas);

    SamplerConfig cfg;
    cfg.n_steps = 50;
    cfg.gamma = 2.0;
    cfg.batch = 1;
    cfg.n_particles = 1;

    Rng r1(9), r2(9);
    const Ensemble dps = dps_sample(s, den, lik, cfg, r1);
    const Ensemble tds = tds_sample(s, den, lik, cfg, r2);
    REQUIRE(tds.samples.rows() == 1);
    CHECK((dps.samples.row(0) - tds.samples.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tds with a constant likelihood never resamples") {
    Rng setup(3);
    const int n = 4;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 2.0));
    const NoiseSchedule s = karras_schedule(40, 2e-3, 100.0, 7.0);
    const ConstantLikelihood lik(2);

    SamplerConfig cfg;
    cfg.n_steps = 40;
    cfg.gamma = 1.0;
    cfg.n_particles = 8;

    Rng r(11);
    const Ensemble e = tds_sample(s, den, lik, cfg, r);
    REQUIRE(!e.ess_trace.empty());
    for (double ess : e.ess_trace) CHECK(ess == doctest::Approx(8.0));
    CHECK(e.samples.rows() == 8);
    CHECK(e.samples.allFinite());
}

TEST_CASE("tds output is invariant to a constant shift of all log-weights") {
    Rng setup(4);
    const int n = 4;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 2.0));
    const NoiseSchedule s = karras_schedule(40, 2e-3, 100.0, 7.0);
    const Anchor a = make_anchor(n, 3, 13);
    const LinearGaussianLikelihood base(a.op, a.y, a.sigmas);
    const ShiftedLikelihood shifted(base, 321.5);

    SamplerConfig cfg;
    cfg.n_steps = 40;
    cfg.gamma = 2.0;
    cfg.n_particles = 6;

    Rng r1(17), r2(17);
    const Ensemble e1 = tds_sample(s, den, base, cfg, r1);
    const Ensemble e2 = tds_sample(s, den, shifted, cfg, r2);
    CHECK((e1.samples - e2.samples).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(e1.ess_trace.size() == e2.ess_trace.size());
    for (std::size_t i = 0; i < e1.ess_trace.size(); ++i)
        CHECK(e1.ess_trace[i] == doctest::Approx(e2.ess_trace[i]));
}

TEST_CASE("every sampler is seed-deterministic") {
    Rng setup(5);
    const int n = 4;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 2.0));
    const NoiseSchedule s = karras_schedule(30, 2e-3, 100.0, 7.0);
    const Anchor a = make_anchor(n, 3, 21);
    const LinearGaussianLikelihood lik(a.op, a.y, a.sigmas);

    for (const std::string tag : {"DPS", "TDS", "DAPS", "RedDiff"}) {
        SamplerConfig cfg;
        cfg.algorithm = tag;
        cfg.n_steps = 30;
        cfg.batch = 3;
        cfg.gamma = 1.0;
        cfg.n_particles = 4;
        cfg.mcmc_steps = 5;
        cfg.eta0 = 1e-4;
        cfg.lr = 0.05;
        const SamplerFn fn = lookup_sampler(tag);
        Rng r1(33), r2(33);
        const Ensemble e1 = fn(s, den, lik, cfg, r1);
        const Ensemble e2 = fn(s, den, lik, cfg, r2);
        CHECK((e1.samples - e2.samples).cwiseAbs().maxCoeff() == 0.0);
        CHECK(e1.samples.allFinite());
    }
}

TEST_CASE("daps: zero mcmc steps and zero step size take the same path") {
    Rng setup(6);
    const int n = 4;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 2.0));
    const NoiseSchedule s = karras_schedule(25, 2e-3, 100.0, 7.0);
    const Anchor a = make_anchor(n, 3, 31);
    const LinearGaussianLikelihood lik(a.op, a.y, a.sigmas);

    SamplerConfig no_mcmc;
    no_mcmc.n_steps = 25;
    no_mcmc.batch = 4;
    no_mcmc.mcmc_steps = 0;
    no_mcmc.eta0 = 5e-4;

    SamplerConfig no_step = no_mcmc;
    no_step.mcmc_steps = 50;
    no_step.eta0 = 0.0;

    Rng r1(44), r2(44);
    const Ensemble e1 = daps_sample(s, den, lik, no_mcmc, r1);
    const Ensemble e2 = daps_sample(s, den, lik, no_step, r2);
    CHECK((e1.samples - e2.samples).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("daps without mcmc matches ancestral statistics under a constant likelihood") {
    Rng setup(7);
    const int n = 4;
    const Eigen::VectorXd mu = random_vec(n, setup);
    const Eigen::MatrixXd cov = random_spd(n, setup, 2.0);
    const GaussianDenoiser den(mu, cov);
    const NoiseSchedule s = karras_schedule(100, 2e-3, 100.0, 7.0);
    const ConstantLikelihood lik(1);

    SamplerConfig cfg;
    cfg.n_steps = 100;
    cfg.batch = 4000;
    cfg.mcmc_steps = 0;

    Rng r(55);
    const Ensemble e = daps_sample(s, den, lik, cfg, r);
    const Eigen::VectorXd mean = e.samples.colwise().mean();
    for (int i = 0; i < n; ++i) {
        const double se = std::sqrt(cov(i, i) / cfg.batch);
        CHECK(std::abs(mean(i) - mu(i)) <= 4.0 * se);
    }
}

TEST_CASE("reddiff: zero gradient keeps the iterate at its initialization") {
    Rng setup(8);
    const int n = 4;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 2.0));
    const NoiseSchedule s = karras_schedule(20, 2e-3, 100.0, 7.0);

    const Eigen::VectorXd init = random_vec(n, setup);
    // observation exactly consistent with init and no prior term: gradient = 0
    Eigen::MatrixXd op = Eigen::MatrixXd::Identity(n, n);
    const LinearGaussianLikelihood lik(op, init, Eigen::VectorXd::Constant(n, 1e-3));

    SamplerConfig cfg;
    cfg.n_steps = 20;
    cfg.batch = 2;
    cfg.lr = 0.1;
    cfg.grad_term_weight = 0.0;
    cfg.init = init;

    Rng r(66);
    const Ensemble e = reddiff_sample(s, den, lik, cfg, r);
    for (int b = 0; b < 2; ++b)
        CHECK((e.samples.row(b).transpose() - init).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reddiff: prior-only optimization is pulled to the prior mean") {
    Rng setup(9);
    const int n = 4;
    const Eigen::VectorXd mu = random_vec(n, setup);
    const GaussianDenoiser den(mu, random_spd(n, setup, 1.0));
    const NoiseSchedule s = karras_schedule(100, 2e-3, 100.0, 7.0);
    const ConstantLikelihood lik(1);

    const Eigen::VectorXd init = mu + 10.0 * Eigen::VectorXd::Ones(n);
    SamplerConfig cfg;
    cfg.n_steps = 1000;
    cfg.batch = 1;
    cfg.lr = 0.1;
    cfg.obs_weight = 0.0;
    cfg.init = init;

    Rng r(77);
    const Ensemble e = reddiff_sample(s, den, lik, cfg, r);
    CHECK((e.samples.row(0).transpose() - mu).norm() <= 0.1 * (init - mu).norm());
}

TEST_CASE("linear-gaussian anchor: guided means beat the prior mean") {
    Rng setup(10);
    const int n = 6;
    const Anchor a = make_anchor(n, 4, 99);
    const GaussianDenoiser den(a.prior_mean, a.prior_cov);
    const NoiseSchedule s = karras_schedule(100, 2e-3, 100.0, 7.0);
    const LinearGaussianLikelihood lik(a.op, a.y, a.sigmas);
    const double prior_err = (a.prior_mean - a.post_mean).norm();

    SamplerConfig dps_cfg;
    dps_cfg.n_steps = 100;
    dps_cfg.batch = 200;
    dps_cfg.gamma = 4.0;
    Rng r1(5);
    const Eigen::VectorXd dps_mean =
        dps_sample(s, den, lik, dps_cfg, r1).samples.colwise().mean();
    CHECK((dps_mean - a.post_mean).norm() < prior_err);

    SamplerConfig daps_cfg;
    daps_cfg.n_steps = 100;
    daps_cfg.batch = 200;
    daps_cfg.mcmc_steps = 100;
    daps_cfg.eta0 = 5e-4;
    Rng r2(6);
    const Eigen::VectorXd daps_mean =
        daps_sample(s, den, lik, daps_cfg, r2).samples.colwise().mean();
    CHECK((daps_mean - a.post_mean).norm() < prior_err);

    SamplerConfig red_cfg;
    red_cfg.n_steps = 1000;
    red_cfg.batch = 20;
    red_cfg.lr = 0.1;
    Rng r3(7);
    const Eigen::VectorXd red_mean =
        reddiff_sample(s, den, lik, red_cfg, r3).samples.colwise().mean();
    CHECK((red_mean - a.post_mean).norm() < prior_err);
}

TEST_CASE("non-finite guidance gradients abort with a diagnostic") {
    Rng setup(11);
    const int n = 3;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 1.0));
    const NoiseSchedule s = karras_schedule(10, 2e-3, 100.0, 7.0);
    const NanGradientLikelihood lik(1);

    SamplerConfig cfg;
    cfg.n_steps = 10;
    cfg.batch = 1;
    cfg.gamma = 1.0;
    Rng r(88);
    CHECK_THROWS_AS(dps_sample(s, den, lik, cfg, r), SamplerError);
}

TEST_CASE("registry: implemented tags, reserved slots, unknown-tag diagnostics") {
    const auto& reg = sampler_registry();
    for (const char* tag : {"DPS", "TDS", "DAPS", "RedDiff", "MGPS", "MGDM", "CREPE"})
        CHECK(reg.count(tag) == 1);

    CHECK(lookup_sampler("DPS") != nullptr);

    Rng setup(12);
    const int n = 3;
    const GaussianDenoiser den(random_vec(n, setup), random_spd(n, setup, 1.0));
    const NoiseSchedule s = karras_schedule(5, 2e-3, 100.0, 7.0);
    const ConstantLikelihood lik(1);
    SamplerConfig cfg;
    Rng r(1);
    for (const char* tag : {"MGPS", "MGDM", "CREPE"}) {
        try {
            lookup_sampler(tag)(s, den, lik, cfg, r);
            FAIL("expected a not-implemented error for ", tag);
        } catch (const NotImplementedError& e) {
            CHECK(std::string(e.what()).find("external reference") != std::string::npos);
        }
    }

    try {
        lookup_sampler("bogus");
        FAIL("expected an unknown-tag error");
    } catch (const SamplerError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bogus") != std::string::npos);
        CHECK(msg.find("DPS") != std::string::npos);
        CHECK(msg.find("TDS") != std::string::npos);
    }
}

TEST_CASE("tds resamples under an informative likelihood and stays finite") {
    Rng setup(13);
    const int n = 5;
    const Anchor a = make_anchor(n, 4, 101);
    const GaussianDenoiser den(a.prior_mean, a.prior_cov);
    const NoiseSchedule s = karras_schedule(80, 2e-3, 100.0, 7.0);
    const LinearGaussianLikelihood lik(a.op, a.y, a.sigmas);

    SamplerConfig cfg;
    cfg.n_steps = 80;
    cfg.gamma = 2.0;
    cfg.n_particles = 10;
    Rng r(23);
    const Ensemble e = tds_sample(s, den, lik, cfg, r);
    CHECK(e.samples.rows() == 10);
    CHECK(e.samples.allFinite());
    CHECK(e.final_log_lik.allFinite());
    REQUIRE(!e.ess_trace.empty());
    bool resampled = false;
    for (double ess : e.ess_trace) {
        CHECK(ess <= 10.0 + 1e-9);
        CHECK(ess >= 1.0 - 1e-9);
        if (ess < 5.0) resampled = true;
    }
    CHECK(resampled);
}
