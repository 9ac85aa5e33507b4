#include "rainfield/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rainfield/baselines.hpp"
#include "rainfield/censored_gp.hpp"
#include "rainfield/denoiser_graph.hpp"
#include "rainfield/diffusion.hpp"
#include "rainfield/metrics.hpp"
#include "rainfield/parallel.hpp"

namespace rainfield {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config ---

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw HarnessError("cannot read config: " + path.string());
    json j;
    f >> j;
    return from_json(std::move(j));
}

ExperimentConfig ExperimentConfig::from_json(json j) {
    ExperimentConfig cfg;
    cfg.raw = std::move(j);
    cfg.validate();
    return cfg;
}

GridSpec ExperimentConfig::grid() const {
    const json g = raw.value("grid", json::object());
    return GridSpec(g.value("height", 48), g.value("width", 36));
}

void ExperimentConfig::validate() const {
    static const std::vector<std::string> known = {"gp1d", "cml-synthetic",
                                                   "ablation-few-long",
                                                   "ablation-many-short"};
    if (std::find(known.begin(), known.end(), scenario()) == known.end())
        throw HarnessError("unknown scenario tag: '" + scenario() + "'");
    if (!(runtime_cap_seconds() > 0.0)) throw HarnessError("runtime cap must be positive");
    if (n_fields() < 1) throw HarnessError("n_fields must be >= 1");
}

// ------------------------------------------------------------- scenarios ---

IntervalSet random_intervals(int m, double lo, double hi, double min_len, double max_len,
                             double noise_sigma, Rng& rng) {
    if (m < 1 || !(lo < hi) || !(0.0 < min_len) || !(min_len <= max_len))
        throw HarnessError("invalid interval generation parameters");
    IntervalSet set;
    set.noise_sigma = noise_sigma;
    int attempts = 0;
    while (static_cast<int>(set.intervals.size()) < m) {
        if (++attempts > 10000 * m)
            throw HarnessError("could not place non-overlapping intervals");
        const double len = rng.uniform(min_len, std::min(max_len, hi - lo));
        const double a = rng.uniform(lo, hi - len);
        const double b = a + len;
        bool clash = false;
        for (const auto& iv : set.intervals)
            if (a < iv.second && iv.first < b) clash = true;
        if (!clash) set.intervals.emplace_back(a, b);
    }
    std::sort(set.intervals.begin(), set.intervals.end());
    return set;
}

Gp1dScenario generate_gp1d_scenario(const RbfKernel1D& kernel, const IntervalSet& intervals,
                                    const Eigen::VectorXd& grid, Rng& rng) {
    const int d = static_cast<int>(grid.size());
    const int m = intervals.size();
    Eigen::MatrixXd joint(d + m, d + m);
    joint.topLeftCorner(d, d) = kernel_gram(kernel, grid);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j) {
            const double v = kernel_interval_integral(kernel, intervals.intervals[j], grid(i));
            joint(i, d + j) = v;
            joint(d + j, i) = v;
        }
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            joint(d + i, d + j) =
                kernel_double_integral(kernel, intervals.intervals[i], intervals.intervals[j]);
    joint.bottomRightCorner(m, m).diagonal().array() +=
        intervals.noise_sigma * intervals.noise_sigma;
    joint.diagonal().array() += 1e-10;

    Eigen::LLT<Eigen::MatrixXd> llt(joint);
    if (llt.info() != Eigen::Success)
        throw HarnessError("joint covariance factorization failed");
    Eigen::VectorXd z(d + m);
    for (int i = 0; i < d + m; ++i) z(i) = rng.normal();
    const Eigen::VectorXd draw = llt.matrixL() * z;

    Gp1dScenario scen;
    scen.grid = grid;
    scen.kernel = kernel;
    scen.intervals = intervals;
    scen.truth = draw.head(d);
    scen.y = draw.tail(m);
    return scen;
}

Eigen::MatrixXd gp1d_operator(const IntervalSet& intervals, const Eigen::VectorXd& grid) {
    const int d = static_cast<int>(grid.size());
    if (d < 2) throw HarnessError("gp1d operator needs at least 2 grid points");
    const double h = grid(1) - grid(0);
    Eigen::MatrixXd op = Eigen::MatrixXd::Zero(intervals.size(), d);
    for (int i = 0; i < intervals.size(); ++i) {
        const auto [a, b] = intervals.intervals[i];
        for (int j = 0; j < d; ++j) {
            const double clo = grid(j) - 0.5 * h, chi = grid(j) + 0.5 * h;
            op(i, j) = std::max(0.0, std::min(b, chi) - std::max(a, clo));
        }
    }
    return op;
}

std::vector<TopologyEntry> synthesize_topology(const std::string& kind, const GridSpec& grid,
                                               double a, double b, double sigma, int n_links,
                                               Rng& rng) {
    grid.validate();
    const double w = grid.width - 1.0, h = grid.height - 1.0;
    const double diag = std::hypot(w, h);
    std::vector<TopologyEntry> topo;
    topo.reserve(static_cast<std::size_t>(n_links));
    int attempts = 0;
    while (static_cast<int>(topo.size()) < n_links) {
        if (++attempts > 100000) throw HarnessError("topology synthesis did not converge");
        LinkSegment seg;
        if (kind == "few-long") {
            seg.start = {rng.uniform(0.0, w), rng.uniform(0.0, h)};
            seg.end = {rng.uniform(0.0, w), rng.uniform(0.0, h)};
            if (seg.length() < 0.6 * diag) continue;
        } else if (kind == "many-short") {
            const double len = rng.uniform(2.0, 4.0);
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            seg.start = {rng.uniform(0.0, w), rng.uniform(0.0, h)};
            seg.end = seg.start + len * Eigen::Vector2d(std::cos(ang), std::sin(ang));
        } else {  // generic mixed-length network
            const double len = rng.uniform(3.0, std::max(4.0, 0.5 * diag));
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            seg.start = {rng.uniform(0.0, w), rng.uniform(0.0, h)};
            seg.end = seg.start + len * Eigen::Vector2d(std::cos(ang), std::sin(ang));
        }
        if (seg.end.x() < 0.0 || seg.end.x() > w || seg.end.y() < 0.0 || seg.end.y() > h)
            continue;
        TopologyEntry e;
        std::ostringstream id;
        id << "L" << std::setw(3) << std::setfill('0') << topo.size();
        e.link_id = id.str();
        e.segment = seg;
        e.params = {a, b};
        e.sigma = sigma;
        topo.push_back(std::move(e));
    }
    return topo;
}

GaussianFieldPrior gaussian_field_prior(const GridSpec& grid, double mu, double lengthscale,
                                        double variance) {
    grid.validate();
    if (!(lengthscale > 0.0) || !(variance > 0.0))
        throw HarnessError("gaussian field prior needs positive lengthscale and variance");
    const int d = grid.cells();
    GaussianFieldPrior prior;
    prior.mean = Eigen::VectorXd::Constant(d, mu);
    prior.cov.resize(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) {
            const double dr = (i / grid.width - j / grid.width) / lengthscale;
            const double dc = (i % grid.width - j % grid.width) / lengthscale;
            const double v = variance * std::exp(-0.5 * (dr * dr + dc * dc));
            prior.cov(i, j) = v;
            prior.cov(j, i) = v;
        }
    return prior;
}

// ----------------------------------------------------------- runtime cap ---

SamplerConfig enforce_runtime_cap(const SamplerConfig& cfg, Eigen::Index dim, int n_obs,
                                  double cap_seconds, std::vector<std::string>* notes) {
    // fixed operation-count model so reruns reduce identically
    constexpr double kFlopsPerSecond = 1e9;
    const double d = static_cast<double>(dim);
    const double den_cost = 4.0 * d * d;       // one denoiser evaluation
    const double lik_cost = 8.0 * n_obs * d;   // one likelihood gradient/eval

    auto projected_seconds = [&](const SamplerConfig& c) {
        double per_sample = 0.0;
        if (c.algorithm == "TDS")
            per_sample = c.n_particles * c.n_steps * (2.0 * den_cost + 2.0 * lik_cost);
        else if (c.algorithm == "DAPS")
            per_sample = c.n_steps * (c.n_ode * den_cost + c.mcmc_steps * lik_cost);
        else  // DPS, RedDiff and kin
            per_sample = c.n_steps * (2.0 * den_cost + lik_cost);
        return per_sample * c.batch / kFlopsPerSecond;
    };

    SamplerConfig out = cfg;
    while (projected_seconds(out) > cap_seconds) {
        std::ostringstream note;
        if (out.algorithm == "TDS" && out.n_particles > 1) {
            out.n_particles = std::max(1, out.n_particles / 2);
            note << out.algorithm << ": particles reduced to " << out.n_particles;
        } else if (out.n_steps > 10) {
            out.n_steps = std::max(10, out.n_steps / 2);
            note << out.algorithm << ": steps reduced to " << out.n_steps;
        } else {
            note << out.algorithm << ": at minimum budget, projected "
                 << projected_seconds(out) << " s exceeds cap";
            if (notes) notes->push_back(note.str());
            break;
        }
        note << " (runtime cap " << cap_seconds << " s)";
        if (notes) notes->push_back(note.str());
    }
    return out;
}

// ---------------------------------------------------------------- common ---

namespace {

std::string field_name(const char* stem, int k, const char* ext) {
    std::ostringstream s;
    s << stem << "_" << std::setw(3) << std::setfill('0') << k << ext;
    return s.str();
}

void save_intervals_csv(const fs::path& path, const IntervalSet& set) {
    std::ofstream f(path);
    if (!f) throw HarnessError("cannot write " + path.string());
    f << "a,b\n" << std::setprecision(17);
    for (const auto& [a, b] : set.intervals) f << a << "," << b << "\n";
}

IntervalSet load_intervals_csv(const fs::path& path, double noise_sigma) {
    std::ifstream f(path);
    if (!f) throw HarnessError("cannot read " + path.string());
    IntervalSet set;
    set.noise_sigma = noise_sigma;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        double a = 0.0, b = 0.0;
        if (!(row >> a >> b)) throw HarnessError("malformed interval row: " + line);
        set.intervals.emplace_back(a, b);
    }
    return set;
}

struct Gp1dSettings {
    int grid_points = 50;
    double lo = -5.0, hi = 5.0;
    RbfKernel1D kernel{0.6, 1.0};
    int n_intervals = 8;
    double interval_min = 0.8, interval_max = 2.0;
    double noise_sigma = 0.1;
};

Gp1dSettings gp1d_settings(const ExperimentConfig& cfg) {
    const json g = cfg.raw.value("gp1d", json::object());
    Gp1dSettings s;
    s.grid_points = g.value("grid_points", 50);
    if (g.contains("domain")) {
        s.lo = g.at("domain").at(0).get<double>();
        s.hi = g.at("domain").at(1).get<double>();
    }
    s.kernel.lengthscale = g.value("lengthscale", 0.6);
    s.kernel.variance = g.value("variance", 1.0);
    s.n_intervals = g.value("n_intervals", 8);
    s.interval_min = g.value("interval_min", 0.8);
    s.interval_max = g.value("interval_max", 2.0);
    s.noise_sigma = g.value("noise_sigma", 0.1);
    return s;
}

Eigen::VectorXd gp1d_grid(const Gp1dSettings& s) {
    return Eigen::VectorXd::LinSpaced(s.grid_points, s.lo, s.hi);
}

ObservationModel build_observation_model(const ExperimentConfig& cfg,
                                         const std::vector<TopologyEntry>& topo,
                                         const GridSpec& grid) {
    ObservationModel model;
    model.grid = grid;
    std::vector<LinkSegment> segments;
    Eigen::VectorXd lengths(static_cast<Eigen::Index>(topo.size()));
    for (std::size_t i = 0; i < topo.size(); ++i) {
        segments.push_back(topo[i].segment);
        model.params.push_back(topo[i].params);
        lengths(static_cast<Eigen::Index>(i)) = topo[i].segment.length();
    }
    model.weights = build_network_weights(grid, segments);
    const json noise = cfg.raw.value("noise", json::object());
    const double sigma = noise.value("sigma", topo.empty() ? 0.1 : topo.front().sigma);
    if (noise.value("kind", std::string("isotropic")) == "heteroscedastic")
        model.noise = NoiseModel::heteroscedastic(sigma, lengths);
    else
        model.noise = NoiseModel::isotropic(sigma, static_cast<int>(topo.size()));
    model.validate();
    return model;
}

/// Reference-field draw from the configured prior source, clamped at 0.
std::vector<RainField> draw_reference_fields(const ExperimentConfig& cfg, const GridSpec& grid,
                                             Rng& rng, std::vector<std::string>* notes) {
    const json prior = cfg.raw.value("prior", json::object());
    const std::string source = prior.value("source", std::string("gaussian-analytic"));
    const int n = cfg.n_fields();
    std::vector<RainField> fields;
    fields.reserve(static_cast<std::size_t>(n));

    if (source == "gaussian-analytic") {
        const GaussianFieldPrior p = gaussian_field_prior(
            grid, prior.value("mu", 2.0), prior.value("lengthscale", 4.0),
            prior.value("variance", 4.0));
        Eigen::MatrixXd cov = p.cov;
        cov.diagonal().array() += 1e-10;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success)
            throw HarnessError("prior covariance factorization failed");
        for (int k = 0; k < n; ++k) {
            Rng child = rng.child(static_cast<std::size_t>(k));
            Eigen::VectorXd z(grid.cells());
            for (int i = 0; i < grid.cells(); ++i) z(i) = child.normal();
            const Eigen::VectorXd draw = (p.mean + llt.matrixL() * z).cwiseMax(0.0);
            fields.push_back(RainField::from_flat(grid, draw));
        }
        if (notes)
            notes->push_back("reference fields are clamped draws from the analytic "
                             "Gaussian prior (synthetic substitute for radar fields)");
    } else if (source == "censored-gp") {
        CensoredGpParams p;
        p.mu = prior.value("mu", 0.5);
        p.l1 = prior.value("l1", 3.0);
        p.l2 = prior.value("l2", 3.0);
        p.var_gp = prior.value("variance", 1.0);
        p.beta = prior.value("beta", 1.0);
        for (int k = 0; k < n; ++k) {
            Rng child = rng.child(static_cast<std::size_t>(k));
            fields.push_back(
                RainField(grid, sample_censored_field(p, grid, child).values));
        }
        if (notes)
            notes->push_back("reference fields are censored-GP draws (synthetic "
                             "substitute for radar fields)");
    } else if (source == "external-denoiser") {
        const auto den = load_external_denoiser(prior.at("path").get<std::string>());
        if (den->dim() != grid.cells())
            throw HarnessError("external denoiser dimension does not match the grid");
        const NoiseSchedule sched = karras_schedule(
            prior.value("n_steps", 100), prior.value("sigma_min", 2e-3),
            prior.value("sigma_max", 100.0), prior.value("rho", 7.0));
        Rng child = rng.child(0);
        const Eigen::MatrixXd draws = ancestral_sample(sched, *den, child, n);
        for (int k = 0; k < n; ++k)
            fields.push_back(
                RainField::from_flat(grid, draws.row(k).transpose().cwiseMax(0.0)));
        if (notes)
            notes->push_back("reference fields are unconditional denoiser samples "
                             "(synthetic substitute for radar fields)");
    } else {
        throw HarnessError("unknown prior source: '" + source + "'");
    }
    return fields;
}

SamplerConfig sampler_config_from_json(const json& j) {
    SamplerConfig c;
    c.algorithm = j.at("algorithm").get<std::string>();
    c.n_steps = j.value("n_steps", 100);
    c.batch = j.value("batch", 1);
    c.gamma = j.value("gamma", 1.0);
    c.n_particles = j.value("n_particles", 10);
    c.tau = j.value("tau", 1.0);
    c.mcmc_steps = j.value("mcmc_steps", 0);
    c.eta0 = j.value("eta0", 5e-4);
    c.n_ode = j.value("n_ode", 5);
    c.min_ratio = j.value("min_ratio", 0.01);
    c.lr = j.value("lr", 1e-1);
    c.obs_weight = j.value("obs_weight", 1.0);
    c.grad_term_weight = j.value("grad_term_weight", 1.0);
    return c;
}

NoiseSchedule schedule_from_json(const json& j, int n_steps, double default_rho) {
    return karras_schedule(n_steps, j.value("sigma_min", 2e-3), j.value("sigma_max", 100.0),
                           j.value("rho", default_rho));
}

}  // namespace

// -------------------------------------------------------------- commands ---

namespace harness {

fs::path default_out_root() {
    if (const char* env = std::getenv("RAINFIELD_OUT_ROOT")) return fs::path(env);
    return fs::path("runs");
}

int cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
    fs::create_directories(out / "fields");
    fs::create_directories(out / "obs");
    RunManifest manifest;
    manifest.config = cfg.raw;
    manifest.seed = cfg.seed();
    Rng rng(cfg.seed());

    if (cfg.scenario() == "gp1d") {
        const Gp1dSettings s = gp1d_settings(cfg);
        const Eigen::VectorXd grid = gp1d_grid(s);
        Rng iv_rng = rng.child(0);
        const IntervalSet intervals =
            random_intervals(s.n_intervals, s.lo, s.hi, s.interval_min, s.interval_max,
                             s.noise_sigma, iv_rng);
        save_intervals_csv(out / "intervals.csv", intervals);
        manifest.record_file(out, "intervals.csv");
        std::vector<std::string> ids(intervals.intervals.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = "I" + std::to_string(i);

        const GridSpec field_grid(1, s.grid_points);
        for (int k = 0; k < cfg.n_fields(); ++k) {
            Rng child = rng.child(static_cast<std::size_t>(100 + k));
            const Gp1dScenario scen = generate_gp1d_scenario(s.kernel, intervals, grid, child);
            const std::string truth_file = "fields/" + field_name("truth", k, ".rfld");
            const std::string obs_file = "obs/" + field_name("obs", k, ".csv");
            save_field(out / truth_file,
                       RainField::from_flat(field_grid, scen.truth));
            save_observation_csv(out / obs_file, ids, scen.y);
            manifest.record_file(out, truth_file);
            manifest.record_file(out, obs_file);
        }
    } else {
        const GridSpec grid = cfg.grid();
        const json topo_cfg = cfg.raw.value("topology", json::object());
        std::vector<TopologyEntry> topo;
        if (topo_cfg.value("source", std::string("synthesize")) == "file") {
            topo = load_topology_csv(topo_cfg.at("path").get<std::string>());
        } else {
            std::string kind = "generic";
            int n_links = topo_cfg.value("n_links", 60);
            if (cfg.scenario() == "ablation-few-long") {
                kind = "few-long";
                n_links = topo_cfg.value("n_links", 25);
            } else if (cfg.scenario() == "ablation-many-short") {
                kind = "many-short";
                n_links = topo_cfg.value("n_links", 100);
            }
            Rng topo_rng = rng.child(1);
            topo = synthesize_topology(
                kind, grid, topo_cfg.value("a", 1.0), topo_cfg.value("b", 1.0),
                cfg.raw.value("noise", json::object()).value("sigma", 0.1), n_links,
                topo_rng);
        }
        save_topology_csv(out / "topology.csv", topo);
        manifest.record_file(out, "topology.csv");

        const ObservationModel model = build_observation_model(cfg, topo, grid);
        if (model.noise.kind == NoiseModel::Kind::Heteroscedastic) {
            const double base = model.noise.base_sigma;
            bool ok = true;
            for (Eigen::Index i = 0; i < model.noise.sigmas.size(); ++i)
                ok = ok && model.noise.sigmas(i) > 0.5 * base &&
                     model.noise.sigmas(i) <= base + 1e-12;
            manifest.notes.push_back(std::string("heteroscedastic sigma bound audit: ") +
                                     (ok ? "pass" : "FAIL"));
        }

        Rng field_rng = rng.child(2);
        std::vector<std::string> ids;
        for (const TopologyEntry& e : topo) ids.push_back(e.link_id);
        const std::vector<RainField> fields =
            draw_reference_fields(cfg, grid, field_rng, &manifest.notes);
        for (int k = 0; k < cfg.n_fields(); ++k) {
            const Observation obs =
                sample_observation(model, fields[static_cast<std::size_t>(k)],
                                   cfg.seed() ^ (0x5bf03635u + static_cast<std::uint64_t>(k)));
            const std::string truth_file = "fields/" + field_name("truth", k, ".rfld");
            const std::string obs_file = "obs/" + field_name("obs", k, ".csv");
            save_field(out / truth_file, fields[static_cast<std::size_t>(k)]);
            save_observation_csv(out / obs_file, ids, obs.y);
            manifest.record_file(out, truth_file);
            manifest.record_file(out, obs_file);
        }
    }
    manifest.save(out / "manifest_simulate.json");
    return 0;
}

int cmd_oracle(const ExperimentConfig& cfg, const fs::path& out) {
    if (cfg.scenario() != "gp1d")
        throw HarnessError("the oracle command applies to the gp1d scenario only");
    const Gp1dSettings s = gp1d_settings(cfg);
    const Eigen::VectorXd grid = gp1d_grid(s);
    const IntervalSet intervals =
        load_intervals_csv(out / "intervals.csv", s.noise_sigma);
    fs::create_directories(out / "oracle");

    RunManifest manifest;
    manifest.config = cfg.raw;
    manifest.seed = cfg.seed();
    const int n_draws = cfg.raw.value("oracle_draws", 10000);
    Rng rng(cfg.seed());
    for (int k = 0; k < cfg.n_fields(); ++k) {
        const Eigen::VectorXd y = load_observation_csv(out / ("obs/" + field_name("obs", k, ".csv")));
        OraclePosterior1D post = oracle_posterior(s.kernel, intervals, y, grid);
        // mirror the upper triangle so the stored matrix is symmetric bit-exactly
        for (Eigen::Index i = 0; i < post.cov.rows(); ++i)
            for (Eigen::Index j = 0; j < i; ++j) post.cov(i, j) = post.cov(j, i);
        Rng child = rng.child(static_cast<std::size_t>(200 + k));
        const Eigen::MatrixXd draws = post.sample(n_draws, child);
        const std::string mean_f = "oracle/" + field_name("mean", k, ".rmat");
        const std::string cov_f = "oracle/" + field_name("cov", k, ".rmat");
        const std::string draws_f = "oracle/" + field_name("draws", k, ".rmat");
        save_matrix(out / mean_f, post.mean);
        save_matrix(out / cov_f, post.cov);
        save_matrix(out / draws_f, draws);
        manifest.record_file(out, mean_f);
        manifest.record_file(out, cov_f);
        manifest.record_file(out, draws_f);
    }
    manifest.save(out / "manifest_oracle.json");
    return 0;
}

namespace {

struct MethodJob {
    std::string name;
    std::function<void(RunManifest&)> run;  ///< writes files, records hashes
};

}  // namespace

int cmd_reconstruct(const ExperimentConfig& cfg, const fs::path& out, bool parallel_methods) {
    RunManifest manifest;
    manifest.config = cfg.raw;
    manifest.seed = cfg.seed();
    const int n = cfg.n_fields();
    const bool is_gp1d = cfg.scenario() == "gp1d";

    // shared scenario state
    Gp1dSettings s1d;
    Eigen::VectorXd grid1d;
    IntervalSet intervals;
    Eigen::MatrixXd op1d;
    std::unique_ptr<GaussianDenoiser> gauss_den;
    std::unique_ptr<Denoiser> ext_den;
    const Denoiser* den = nullptr;
    ObservationModel model;
    std::vector<TopologyEntry> topo;
    std::vector<Eigen::VectorXd> observations;

    if (is_gp1d) {
        s1d = gp1d_settings(cfg);
        grid1d = gp1d_grid(s1d);
        intervals = load_intervals_csv(out / "intervals.csv", s1d.noise_sigma);
        op1d = gp1d_operator(intervals, grid1d);
        gauss_den = std::make_unique<GaussianDenoiser>(
            Eigen::VectorXd::Zero(grid1d.size()), kernel_gram(s1d.kernel, grid1d));
        den = gauss_den.get();
    } else {
        topo = load_topology_csv(out / "topology.csv");
        model = build_observation_model(cfg, topo, cfg.grid());
        const json prior = cfg.raw.value("prior", json::object());
        const std::string source = prior.value("source", std::string("gaussian-analytic"));
        if (source == "external-denoiser") {
            ext_den = load_external_denoiser(prior.at("path").get<std::string>());
            den = ext_den.get();
        } else if (source == "censored-gp") {
            // the latent Gaussian stands in for the denoiser's prior
            CensoredGpParams p;
            p.mu = prior.value("mu", 0.5);
            p.l1 = prior.value("l1", 3.0);
            p.l2 = prior.value("l2", 3.0);
            p.var_gp = prior.value("variance", 1.0);
            gauss_den = std::make_unique<GaussianDenoiser>(
                Eigen::VectorXd::Constant(cfg.grid().cells(), p.mu),
                censored_gp_gram(p, cfg.grid()));
            den = gauss_den.get();
            manifest.notes.push_back(
                "censored-gp prior: samplers use its latent Gaussian as the denoiser");
        } else {
            const GaussianFieldPrior p = gaussian_field_prior(
                cfg.grid(), prior.value("mu", 2.0), prior.value("lengthscale", 4.0),
                prior.value("variance", 4.0));
            gauss_den = std::make_unique<GaussianDenoiser>(p.mean, p.cov);
            den = gauss_den.get();
        }
    }
    for (int k = 0; k < n; ++k)
        observations.push_back(
            load_observation_csv(out / ("obs/" + field_name("obs", k, ".csv"))));

    std::vector<MethodJob> jobs;
    std::size_t method_index = 0;

    for (const json& sj : cfg.raw.value("samplers", json::array())) {
        SamplerConfig base = sampler_config_from_json(sj);
        const std::string name = sj.value("label", base.algorithm);
        const Eigen::Index dim = is_gp1d ? grid1d.size() : cfg.grid().cells();
        const int n_obs = is_gp1d ? intervals.size() : model.links();
        base = enforce_runtime_cap(base, dim, n_obs, cfg.runtime_cap_seconds(),
                                   &manifest.notes);
        const double rho = base.algorithm == "RedDiff" ? 5.0 : 7.0;
        const NoiseSchedule sched = schedule_from_json(sj, base.n_steps, rho);
        const std::size_t midx = method_index++;
        jobs.push_back({name, [&, base, name, sched, midx](RunManifest& m) {
            const SamplerFn fn = lookup_sampler(base.algorithm);
            fs::create_directories(out / "recon" / name);
            for (int k = 0; k < n; ++k) {
                std::unique_ptr<Likelihood> lik;
                if (is_gp1d)
                    lik = std::make_unique<LinearGaussianLikelihood>(
                        op1d, observations[static_cast<std::size_t>(k)],
                        Eigen::VectorXd::Constant(intervals.size(), s1d.noise_sigma));
                else
                    lik = std::make_unique<CmlLikelihood>(
                        model, observations[static_cast<std::size_t>(k)]);
                SamplerConfig run_cfg = base;
                run_cfg.seed = Rng(cfg.seed()).child(midx * 1000 + k).next_u64();
                Rng run_rng(run_cfg.seed);
                const Ensemble ens = fn(sched, *den, *lik, run_cfg, run_rng);
                const std::string file =
                    "recon/" + name + "/" + field_name("ensemble", k, ".rmat");
                save_matrix(out / file, ens.samples);
                m.record_file(out, file);
            }
        }});
    }

    for (const json& bj : cfg.raw.value("baselines", json::array())) {
        if (is_gp1d) {
            manifest.notes.push_back("baselines skipped: gp1d scenario has no links");
            break;
        }
        const std::string name = bj.value("name", std::string{});
        if (name != "idw" && name != "gmz" && name != "ok")
            throw HarnessError("unknown baseline: '" + name + "'");
        jobs.push_back({name, [&, bj, name](RunManifest& m) {
            std::vector<LinkSegment> segs;
            std::vector<PowerLawParams> pars;
            for (const TopologyEntry& e : topo) {
                segs.push_back(e.segment);
                pars.push_back(e.params);
            }
            IdwConfig idw_cfg;
            idw_cfg.p = bj.value("p", 2.0);
            idw_cfg.roi = bj.value("roi", 6.0);
            fs::create_directories(out / "recon" / name);
            for (int k = 0; k < n; ++k) {
                const Eigen::VectorXd& y = observations[static_cast<std::size_t>(k)];
                RainField field;
                if (name == "idw") {
                    field = idw_interpolate(links_to_midpoint_gauges(segs, y, pars),
                                            cfg.grid(), idw_cfg).field;
                } else if (name == "gmz") {
                    field = gmz_reconstruct(segs, y, pars, cfg.grid(),
                                            bj.value("points_per_link", 5),
                                            bj.value("n_iterations", 20), idw_cfg);
                } else {
                    const auto gauges = links_to_midpoint_gauges(segs, y, pars);
                    field = ordinary_krige(gauges, cfg.grid(),
                                           fit_variogram_l1(gauges)).estimate;
                }
                const std::string file =
                    "recon/" + name + "/" + field_name("field", k, ".rfld");
                save_field(out / file, field);
                m.record_file(out, file);
            }
        }});
    }
    if (jobs.empty()) throw HarnessError("no methods requested");

    // each method gets its own manifest shard so a failure cannot corrupt
    // another method's records; timing lives outside the hashed inventory
    std::vector<RunManifest> shards(jobs.size());
    std::vector<double> seconds(jobs.size(), 0.0);
    std::vector<std::string> failures(jobs.size());
    auto run_one = [&](std::size_t i) {
        const auto start = std::chrono::steady_clock::now();
        try {
            jobs[i].run(shards[i]);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
        seconds[i] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    if (parallel_methods)
        parallel_for(jobs.size(), run_one);
    else
        for (std::size_t i = 0; i < jobs.size(); ++i) run_one(i);

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        manifest.method_seconds[jobs[i].name] = seconds[i];
        for (const auto& [file, hash] : shards[i].file_hashes)
            manifest.file_hashes[file] = hash;
        for (const std::string& note : shards[i].notes) manifest.notes.push_back(note);
        if (!failures[i].empty())
            manifest.notes.push_back("method " + jobs[i].name + " failed: " + failures[i]);
    }
    manifest.save(out / "manifest_reconstruct.json");
    return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
    RunManifest manifest;
    manifest.config = cfg.raw;
    manifest.seed = cfg.seed();
    const int n = cfg.n_fields();
    const bool is_gp1d = cfg.scenario() == "gp1d";
    const GridSpec field_grid =
        is_gp1d ? GridSpec(1, gp1d_settings(cfg).grid_points) : cfg.grid();

    std::vector<RainField> truths;
    for (int k = 0; k < n; ++k)
        truths.push_back(load_field(out / ("fields/" + field_name("truth", k, ".rfld")),
                                    field_grid));

    fs::create_directories(out / "report" / "fields");
    std::ofstream csv(out / "report" / "metrics.csv");
    if (!csv) throw HarnessError("cannot write metrics report");
    csv << "# reference fields are synthetic prior draws, not radar data\n";
    csv << "method,metric,mean,ci_lo,ci_hi,n\n" << std::setprecision(10);

    auto emit_ci = [&](const std::string& method, const std::string& metric,
                       const std::vector<double>& vals) {
        if (vals.empty()) return;
        const double nn = static_cast<double>(vals.size());
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= nn;
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        const double se = vals.size() > 1 ? std::sqrt(var / (nn - 1.0) / nn) : 0.0;
        csv << method << "," << metric << "," << mean << "," << mean - 1.96 * se << ","
            << mean + 1.96 * se << "," << vals.size() << "\n";
    };

    const fs::path recon_root = out / "recon";
    if (!fs::exists(recon_root)) throw HarnessError("no reconstructions to evaluate");
    std::vector<fs::path> method_dirs;
    for (const auto& e : fs::directory_iterator(recon_root))
        if (e.is_directory()) method_dirs.push_back(e.path());
    std::sort(method_dirs.begin(), method_dirs.end());

    for (const fs::path& dir : method_dirs) {
        const std::string method = dir.filename().string();
        std::vector<double> rmse, pcc, cum, sw, mean_l2, q05, q95;
        for (int k = 0; k < n; ++k) {
            const fs::path ens_file = dir / field_name("ensemble", k, ".rmat");
            const fs::path fld_file = dir / field_name("field", k, ".rfld");
            RainField recon;
            Eigen::MatrixXd ensemble;
            if (fs::exists(ens_file)) {
                ensemble = load_matrix(ens_file);
                if (ensemble.cols() != field_grid.cells())
                    throw HarnessError("ensemble/reference misalignment for " + method);
                Eigen::VectorXd mean = ensemble.colwise().mean();
                recon = RainField::from_flat(field_grid, mean);
            } else if (fs::exists(fld_file)) {
                recon = load_field(fld_file, field_grid);
            } else {
                throw HarnessError("missing output " + std::to_string(k) + " for method " +
                                   method);
            }
            const FieldMetrics fm = field_metrics(recon, truths[static_cast<std::size_t>(k)]);
            rmse.push_back(fm.rmse);
            if (fm.pcc) pcc.push_back(*fm.pcc);
            cum.push_back(fm.cum_rain_diff);
            const std::string dump =
                "report/fields/" + method + "_" + field_name("recon", k, ".csv");
            save_field_csv(out / dump, recon);
            manifest.record_file(out, dump);

            if (is_gp1d && ensemble.rows() >= 20) {
                OraclePosterior1D oracle;
                oracle.grid = gp1d_grid(gp1d_settings(cfg));
                oracle.mean = load_matrix(out / ("oracle/" + field_name("mean", k, ".rmat")));
                oracle.cov = load_matrix(out / ("oracle/" + field_name("cov", k, ".rmat")));
                const Eigen::MatrixXd draws =
                    load_matrix(out / ("oracle/" + field_name("draws", k, ".rmat")));
                const int n_cmp = std::min<int>(500, static_cast<int>(draws.rows()));
                Rng sw_rng(cfg.seed() ^ 0xe7a11ceULL);
                sw.push_back(sliced_wasserstein(ensemble, draws.topRows(n_cmp), 128, sw_rng));
                const EnsembleMetrics em = quantile_errors(ensemble, oracle);
                mean_l2.push_back(em.mean_l2);
                q05.push_back(em.q05_l2);
                q95.push_back(em.q95_l2);
            }
        }
        emit_ci(method, "rmse", rmse);
        emit_ci(method, "pcc", pcc);
        emit_ci(method, "cum_rain_diff", cum);
        emit_ci(method, "sliced_wasserstein", sw);
        emit_ci(method, "mean_l2", mean_l2);
        emit_ci(method, "q05_l2", q05);
        emit_ci(method, "q95_l2", q95);
    }
    csv.close();
    manifest.record_file(out, "report/metrics.csv");
    manifest.save(out / "manifest_evaluate.json");
    return 0;
}

int cmd_em_fit(const ExperimentConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    RunManifest manifest;
    manifest.config = cfg.raw;
    manifest.seed = cfg.seed();
    const json em = cfg.raw.value("em", json::object());
    const GridSpec grid = cfg.grid();
    Rng rng(cfg.seed());

    std::vector<CensoredField> fields;
    if (em.contains("true_params")) {
        const json tp = em.at("true_params");
        CensoredGpParams p;
        p.mu = tp.value("mu", 0.0);
        p.l1 = tp.value("l1", 3.0);
        p.l2 = tp.value("l2", 5.0);
        p.var_gp = tp.value("variance", 1.0);
        p.beta = tp.value("beta", 1.0);
        Rng gen = rng.child(0);
        for (int k = 0; k < cfg.n_fields(); ++k) {
            Rng child = gen.child(static_cast<std::size_t>(k));
            fields.push_back(sample_censored_field(p, grid, child));
        }
    } else {
        for (int k = 0; k < cfg.n_fields(); ++k)
            fields.push_back(CensoredField::from_values(
                load_field(out / ("fields/" + field_name("truth", k, ".rfld")), grid)
                    .values));
    }

    std::vector<double> beta_grid = em.value("beta_grid", std::vector<double>{1.0});
    Rng fit_rng = rng.child(1);
    const EmReport report = em_fit(fields, grid, beta_grid, em.value("em_iters", 8),
                                   em.value("gibbs_sweeps", 40), fit_rng);

    json jr;
    jr["selected"] = {{"mu", report.selected.mu},     {"l1", report.selected.l1},
                      {"l2", report.selected.l2},     {"variance", report.selected.var_gp},
                      {"beta", report.selected.beta}};
    for (const EmBetaTrace& tr : report.traces) {
        json jt;
        jt["beta"] = tr.beta;
        jt["selection_score"] = tr.selection_score;
        jt["acceptance_rates"] = tr.acceptance_rates;
        for (const CensoredGpParams& p : tr.iterates)
            jt["iterates"].push_back({{"mu", p.mu},
                                      {"l1", p.l1},
                                      {"l2", p.l2},
                                      {"variance", p.var_gp}});
        jr["traces"].push_back(std::move(jt));
    }
    std::ofstream f(out / "em_fit.json");
    if (!f) throw HarnessError("cannot write em_fit.json");
    f << jr.dump(2) << "\n";
    f.close();
    manifest.record_file(out, "em_fit.json");
    manifest.save(out / "manifest_emfit.json");
    return 0;
}

}  // namespace harness

}  // namespace rainfield
