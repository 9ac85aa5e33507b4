#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "rainfield/forward.hpp"
#include "rainfield/grid.hpp"

namespace rainfield {

struct BaselineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A point pseudo-observation in grid coordinates (cell centers at integers).
struct VirtualGauge {
    Eigen::Vector2d position;
    double value = 0.0;  ///< rain rate, >= 0
};

struct IdwConfig {
    double p = 2.0;     ///< inverse-distance power
    double roi = 6.0;   ///< region-of-influence radius, grid units
    double eps = 1e-6;  ///< distance floor

    void validate() const {
        if (!(p > 0.0) || !(roi > 0.0) || !(eps > 0.0))
            throw BaselineError("IdwConfig: p, roi and eps must be positive");
    }
};

/// Exponential semivariogram gamma(h) = nugget + sill (1 - exp(-h/range)),
/// with gamma(0) = 0.
struct Variogram {
    double nugget = 0.0;
    double sill = 1.0;
    double range = 1.0;

    double operator()(double h) const {
        if (h <= 0.0) return 0.0;
        return nugget + sill * (1.0 - std::exp(-h / range));
    }

    void validate() const {
        if (!(sill > 0.0) || !(range > 0.0) || nugget < 0.0)
            throw BaselineError("Variogram: need sill > 0, range > 0, nugget >= 0");
    }
};

/// IDW output with a per-cell coverage flag (false where no gauge lies within
/// the region of influence; those cells are 0).
struct IdwField {
    RainField field;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> coverage;
};

/// Kriging output; `raw` keeps pre-clamp estimates for diagnostics.
struct KrigeField {
    RainField estimate;
    Eigen::MatrixXd variance;
    Eigen::MatrixXd raw;
};

/// One gauge per link at the midpoint, valued at the path-average rain rate
/// inverted from the power law: r = (Y/(a L))^{1/b}, clamped at 0.
std::vector<VirtualGauge> links_to_midpoint_gauges(const std::vector<LinkSegment>& links,
                                                   const Eigen::VectorXd& y,
                                                   const std::vector<PowerLawParams>& params);

IdwField idw_interpolate(const std::vector<VirtualGauge>& gauges, const GridSpec& grid,
                         const IdwConfig& cfg);

/// Iterative multi-gauge reconstruction: K gauges per link, alternating IDW
/// interpolation, bilinear resampling along the links, and a multiplicative
/// per-link projection in the attenuation domain that restores each measured
/// mean attenuation exactly.
RainField gmz_reconstruct(const std::vector<LinkSegment>& links, const Eigen::VectorXd& y,
                          const std::vector<PowerLawParams>& params, const GridSpec& grid,
                          int k_points = 5, int n_iters = 20, IdwConfig idw_cfg = {});

/// L1 fit of the exponential model to the binned empirical semivariogram
/// (15 bins up to the gauge bounding-box half-diagonal, 8 search starts).
/// Identical gauge values give a near-zero-sill degenerate model.
Variogram fit_variogram_l1(const std::vector<VirtualGauge>& gauges);

/// Ordinary kriging over the grid cells. Cells coincident with a gauge return
/// that value exactly with variance = nugget; negative estimates are clamped
/// to 0 in `estimate` and preserved in `raw`.
KrigeField ordinary_krige(const std::vector<VirtualGauge>& gauges, const GridSpec& grid,
                          const Variogram& vario);

/// Bilinear sample of a field at grid coordinates, clamped to the border.
double bilinear_sample(const RainField& field, const Eigen::Vector2d& pos);

}  // namespace rainfield
