#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace rainfield {

struct GridError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateSegmentError : GridError {
    using GridError::GridError;
};

/// Regular 2-D grid. With origin = (-1/2, -1/2) and unit spacing, cell
/// centers sit at integer coordinates (c, r) and boundaries at half-integers.
struct GridSpec {
    int height = 0;  ///< rows (H)
    int width = 0;   ///< cols (W)
    Eigen::Vector2d origin{-0.5, -0.5};   ///< lower-left corner of cell (0,0)
    Eigen::Vector2d spacing{1.0, 1.0};    ///< (dx, dy), km per cell

    GridSpec() = default;
    GridSpec(int h, int w) : height(h), width(w) { validate(); }
    GridSpec(int h, int w, Eigen::Vector2d org, Eigen::Vector2d spc)
        : height(h), width(w), origin(std::move(org)), spacing(std::move(spc)) {
        validate();
    }

    void validate() const {
        if (height < 1 || width < 1)
            throw GridError("GridSpec: H and W must be >= 1");
        if (!(spacing.x() > 0.0) || !(spacing.y() > 0.0))
            throw GridError("GridSpec: spacing components must be positive");
    }

    int cells() const { return height * width; }

    /// Geographic -> normalized grid coordinates (cell centers at integers).
    Eigen::Vector2d to_grid(const Eigen::Vector2d& p) const {
        return {(p.x() - origin.x()) / spacing.x() - 0.5,
                (p.y() - origin.y()) / spacing.y() - 0.5};
    }

    bool operator==(const GridSpec& o) const {
        return height == o.height && width == o.width && origin == o.origin &&
               spacing == o.spacing;
    }
};

/// A straight link path in grid coordinates.
struct LinkSegment {
    Eigen::Vector2d start;
    Eigen::Vector2d end;

    double length() const { return (end - start).norm(); }
};

/// Sparse per-cell intersection lengths of one segment, in traversal order.
struct LinkWeights {
    struct Entry {
        int row;
        int col;
        double length;
    };
    std::vector<Entry> entries;   ///< strictly positive lengths only
    double total_inside = 0.0;    ///< summed length of the in-grid portion

    /// Dot product with a row-major H*W vector of per-cell values.
    template <typename Derived>
    double dot(const Eigen::MatrixBase<Derived>& cells, int width) const {
        double acc = 0.0;
        for (const auto& e : entries) acc += e.length * cells(e.row * width + e.col);
        return acc;
    }
};

/// Exact per-cell intersection lengths of `seg` with `grid` (Siddon-style):
/// crossing parameters at half-integer grid lines are collected, deduplicated,
/// sorted, and each sub-interval is assigned to the cell containing its
/// midpoint. Sub-segments outside the grid are dropped.
LinkWeights trace_segment(const GridSpec& grid, const LinkSegment& seg);

/// trace_segment over a topology; errors carry the offending segment index.
std::vector<LinkWeights> build_network_weights(const GridSpec& grid,
                                               const std::vector<LinkSegment>& segments);

}  // namespace rainfield
