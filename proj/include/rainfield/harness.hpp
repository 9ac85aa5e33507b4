#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rainfield/forward.hpp"
#include "rainfield/gp1d.hpp"
#include "rainfield/io.hpp"
#include "rainfield/manifest.hpp"
#include "rainfield/samplers.hpp"

namespace rainfield {

struct HarnessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Experiment description, kept as validated JSON plus typed accessors for the
/// fields every command needs.
struct ExperimentConfig {
    nlohmann::json raw;

    static ExperimentConfig from_file(const std::filesystem::path& path);
    static ExperimentConfig from_json(nlohmann::json j);

    std::string scenario() const { return raw.value("scenario", std::string{}); }
    std::uint64_t seed() const { return raw.value("seed", std::uint64_t{0}); }
    int n_fields() const { return raw.value("n_fields", 1); }
    double runtime_cap_seconds() const { return raw.value("runtime_cap_seconds", 180.0); }
    GridSpec grid() const;

    void validate() const;
};

/// The 1-D benchmark instance: truth and observations drawn jointly from the
/// exact Gaussian model.
struct Gp1dScenario {
    Eigen::VectorXd grid;    ///< evaluation points
    RbfKernel1D kernel;
    IntervalSet intervals;
    Eigen::VectorXd truth;   ///< prior draw on the grid
    Eigen::VectorXd y;       ///< noisy interval integrals
};

/// Non-overlapping random observation intervals inside [lo, hi].
IntervalSet random_intervals(int m, double lo, double hi, double min_len, double max_len,
                             double noise_sigma, Rng& rng);

/// Joint draw of (truth on grid, interval observations) from the exact model.
Gp1dScenario generate_gp1d_scenario(const RbfKernel1D& kernel, const IntervalSet& intervals,
                                    const Eigen::VectorXd& grid, Rng& rng);

/// Discrete interval-integral operator: row i holds the overlap length of
/// interval i with each grid cell (cells centered at the grid points).
Eigen::MatrixXd gp1d_operator(const IntervalSet& intervals, const Eigen::VectorXd& grid);

/// Synthetic link topologies anchored to the scenario tag: `few-long` gives 25
/// links spanning at least 60% of the grid diagonal, `many-short` 100 links of
/// 2 to 4 cells, `generic` a mixed-length network.
std::vector<TopologyEntry> synthesize_topology(const std::string& kind, const GridSpec& grid,
                                               double a, double b, double sigma, int n_links,
                                               Rng& rng);

/// Constant-mean 2-D RBF prior over the grid cells (row-major flattening).
struct GaussianFieldPrior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
GaussianFieldPrior gaussian_field_prior(const GridSpec& grid, double mu, double lengthscale,
                                        double variance);

/// Deterministic runtime-cap enforcement: projected cost comes from an
/// operation-count model, never from wall clocks, so reruns reduce
/// identically. Returns the (possibly reduced) config; appends one note per
/// reduction.
SamplerConfig enforce_runtime_cap(const SamplerConfig& cfg, Eigen::Index dim, int n_obs,
                                  double cap_seconds, std::vector<std::string>* notes);

namespace harness {

int cmd_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out);
int cmd_oracle(const ExperimentConfig& cfg, const std::filesystem::path& out);
int cmd_reconstruct(const ExperimentConfig& cfg, const std::filesystem::path& out,
                    bool parallel_methods);
int cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out);
int cmd_em_fit(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Default output root: $RAINFIELD_OUT_ROOT or ./runs.
std::filesystem::path default_out_root();

}  // namespace harness

}  // namespace rainfield
