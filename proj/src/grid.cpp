#include "rainfield/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rainfield {

namespace {
constexpr double kParamDedupTol = 1e-12;  // corner hits collapse to one crossing
}

LinkWeights trace_segment(const GridSpec& grid, const LinkSegment& seg) {
    grid.validate();
    if (!seg.start.allFinite() || !seg.end.allFinite())
        throw DegenerateSegmentError("trace_segment: NaN/Inf segment coordinates");
    const Eigen::Vector2d d = seg.end - seg.start;
    const double len = d.norm();
    if (!(len > 0.0))
        throw DegenerateSegmentError("trace_segment: zero-length segment");

    // Crossing parameters at vertical lines x = c + 1/2 and horizontal lines
    // y = r + 1/2, restricted to t in (0,1), then unioned with {0,1}.
    std::vector<double> ts;
    ts.reserve(static_cast<std::size_t>(grid.width + grid.height + 2));
    ts.push_back(0.0);
    ts.push_back(1.0);

    auto collect = [&ts](double s0, double dir, int n_lines) {
        if (dir == 0.0) return;
        for (int i = -1; i < n_lines; ++i) {
            const double t = ((i + 0.5) - s0) / dir;
            if (t > 0.0 && t < 1.0) ts.push_back(t);
        }
    };
    collect(seg.start.x(), d.x(), grid.width);
    collect(seg.start.y(), d.y(), grid.height);

    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end(),
                         [](double a, double b) { return b - a < kParamDedupTol; }),
             ts.end());

    LinkWeights out;
    for (std::size_t n = 0; n + 1 < ts.size(); ++n) {
        const double dt = ts[n + 1] - ts[n];
        if (dt <= 0.0) continue;
        const double tm = 0.5 * (ts[n] + ts[n + 1]);
        const Eigen::Vector2d mid = seg.start + tm * d;
        const int col = static_cast<int>(std::lround(mid.x()));
        const int row = static_cast<int>(std::lround(mid.y()));
        if (col < 0 || col >= grid.width || row < 0 || row >= grid.height)
            continue;  // clipped: midpoint outside the grid
        const double delta = len * dt;
        if (!out.entries.empty() && out.entries.back().row == row &&
            out.entries.back().col == col) {
            out.entries.back().length += delta;
        } else {
            out.entries.push_back({row, col, delta});
        }
        out.total_inside += delta;
    }
    return out;
}

std::vector<LinkWeights> build_network_weights(const GridSpec& grid,
                                               const std::vector<LinkSegment>& segments) {
    std::vector<LinkWeights> out;
    out.reserve(segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) {
        try {
            out.push_back(trace_segment(grid, segments[i]));
        } catch (const GridError& e) {
            throw DegenerateSegmentError("segment " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace rainfield
