#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "rainfield/grid.hpp"
#include "rainfield/rng.hpp"

using namespace rainfield;

namespace {

Eigen::MatrixXd dense_weights(const LinkWeights& w, int h, int wd) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(h, wd);
    for (const auto& e : w.entries) m(e.row, e.col) += e.length;
    return m;
}

/// Deterministic midpoint-sampling oracle: fraction of equally spaced points
/// falling in each cell, times the segment length.
Eigen::MatrixXd sampling_oracle(const GridSpec& g, const LinkSegment& seg, int n) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(g.height, g.width);
    const double len = seg.length();
    for (int i = 0; i < n; ++i) {
        const double t = (i + 0.5) / n;
        const Eigen::Vector2d p = seg.start + t * (seg.end - seg.start);
        const int c = static_cast<int>(std::lround(p.x()));
        const int r = static_cast<int>(std::lround(p.y()));
        if (r >= 0 && r < g.height && c >= 0 && c < g.width) m(r, c) += len / n;
    }
    return m;
}

}  // namespace

TEST_CASE("axis-aligned segment crosses unit cells with unit weights") {
    GridSpec g(4, 6);
    const int r = 2;
    const LinkWeights w = trace_segment(g, {{-0.5, double(r)}, {2.5, double(r)}});
    const Eigen::MatrixXd m = dense_weights(w, 4, 6);
    CHECK(m(r, 0) == doctest::Approx(1.0));
    CHECK(m(r, 1) == doctest::Approx(1.0));
    CHECK(m(r, 2) == doctest::Approx(1.0));
    CHECK(m.sum() == doctest::Approx(3.0));
    CHECK(w.total_inside == doctest::Approx(3.0));
}

TEST_CASE("full-cell diagonal gives a single sqrt(2) entry") {
    GridSpec g(3, 3);
    const LinkWeights w = trace_segment(g, {{-0.5, -0.5}, {0.5, 0.5}});
    REQUIRE(w.entries.size() == 1);
    CHECK(w.entries[0].row == 0);
    CHECK(w.entries[0].col == 0);
    CHECK(w.entries[0].length == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("illustrative 4x6 line sensor matrix to one-decimal rounding") {
    // slope -1/sqrt(3); crosses y=2.5 at x=1.5214 and y=1.5 at x=3.2534
    GridSpec g(4, 6);
    const double m_slope = 1.0 / std::sqrt(3.0);
    const double xs = 0.2402, xe = 4.1062;
    const double ys = 2.5 + (1.5214 - xs) * m_slope;
    const double ye = 2.5 - (xe - 1.5214) * m_slope;
    const LinkWeights w = trace_segment(g, {{xs, ys}, {xe, ye}});
    const Eigen::MatrixXd got = dense_weights(w, 4, 6);

    Eigen::MatrixXd expect(4, 6);
    expect << 0, 0, 0, 0, 0, 0,
              0, 0, 0, 0.3, 0.7, 0,
              0, 0, 1.1, 0.9, 0, 0,
              0.3, 1.2, 0, 0, 0, 0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 6; ++c)
            CHECK(std::abs(got(r, c) - expect(r, c)) <= 0.055);
}

TEST_CASE("length conservation for random interior segments") {
    GridSpec g(10, 14);
    Rng rng(42);
    for (int trial = 0; trial < 2000; ++trial) {
        LinkSegment seg;
        seg.start = {rng.uniform(-0.49, 13.49), rng.uniform(-0.49, 9.49)};
        seg.end = {rng.uniform(-0.49, 13.49), rng.uniform(-0.49, 9.49)};
        if (seg.length() < 1e-6) continue;
        const LinkWeights w = trace_segment(g, seg);
        CHECK(w.total_inside == doctest::Approx(seg.length()).epsilon(1e-10));
        double sum = 0.0;
        for (const auto& e : w.entries) {
            CHECK(e.length > 0.0);
            sum += e.length;
        }
        CHECK(sum == doctest::Approx(seg.length()).epsilon(1e-10));
        CHECK(static_cast<int>(w.entries.size()) <= g.height + g.width + 1);
    }
}

TEST_CASE("clipping keeps only the in-grid portion") {
    GridSpec g(2, 2);
    // horizontal path overshooting both sides of the 2-cell row
    const LinkWeights w = trace_segment(g, {{-3.0, 0.0}, {4.0, 0.0}});
    CHECK(w.total_inside == doctest::Approx(2.0));
    const Eigen::MatrixXd m = dense_weights(w, 2, 2);
    CHECK(m(0, 0) == doctest::Approx(1.0));
    CHECK(m(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("per-cell lengths match the deterministic sampling oracle") {
    GridSpec g(6, 8);
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        LinkSegment seg;
        seg.start = {rng.uniform(-0.4, 7.4), rng.uniform(-0.4, 5.4)};
        seg.end = {rng.uniform(-0.4, 7.4), rng.uniform(-0.4, 5.4)};
        if (seg.length() < 0.5) continue;
        const Eigen::MatrixXd got = dense_weights(trace_segment(g, seg), 6, 8);
        const Eigen::MatrixXd ref = sampling_oracle(g, seg, 100000);
        CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-3);
    }
}

TEST_CASE("corner crossings conserve length and stay non-negative") {
    GridSpec g(5, 5);
    // exact corner hits at (0.5, 0.5), (1.5, 1.5), ...
    const LinkSegment seg{{-0.5, -0.5}, {4.5, 4.5}};
    const LinkWeights w = trace_segment(g, seg);
    double sum = 0.0;
    for (const auto& e : w.entries) {
        CHECK(e.length > 0.0);
        CHECK(std::isfinite(e.length));
        sum += e.length;
    }
    CHECK(sum == doctest::Approx(seg.length()).epsilon(1e-10));
    CHECK(w.entries.size() == 5);  // pure diagonal: one cell per row
}

TEST_CASE("reversal invariance cellwise") {
    GridSpec g(7, 7);
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        LinkSegment seg;
        seg.start = {rng.uniform(-0.4, 6.4), rng.uniform(-0.4, 6.4)};
        seg.end = {rng.uniform(-0.4, 6.4), rng.uniform(-0.4, 6.4)};
        if (seg.length() < 1e-3) continue;
        const Eigen::MatrixXd fwd = dense_weights(trace_segment(g, seg), 7, 7);
        const Eigen::MatrixXd rev =
            dense_weights(trace_segment(g, {seg.end, seg.start}), 7, 7);
        CHECK((fwd - rev).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("translation covariance via coordinate normalization") {
    // shifting the grid origin and a geographic point together leaves the
    // normalized coordinates (and hence any trace) unchanged
    const Eigen::Vector2d shift(3.7, -1.2);
    GridSpec g(5, 6);
    GridSpec shifted(5, 6, g.origin + shift, g.spacing);
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Vector2d p(rng.uniform(-2.0, 8.0), rng.uniform(-2.0, 8.0));
        const Eigen::Vector2d a = g.to_grid(p);
        const Eigen::Vector2d b = shifted.to_grid(p + shift);
        CHECK(a.x() == doctest::Approx(b.x()).epsilon(1e-12));
        CHECK(a.y() == doctest::Approx(b.y()).epsilon(1e-12));
    }
}

TEST_CASE("degenerate segments are rejected") {
    GridSpec g(3, 3);
    CHECK_THROWS_AS(trace_segment(g, {{1.0, 1.0}, {1.0, 1.0}}), DegenerateSegmentError);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(trace_segment(g, {{nan, 0.0}, {1.0, 1.0}}), DegenerateSegmentError);
}

TEST_CASE("network batching preserves order and reports the failing index") {
    GridSpec g(4, 4);
    CHECK(build_network_weights(g, {}).empty());

    const LinkSegment s1{{0.0, 0.0}, {3.0, 0.0}};
    const LinkSegment s2{{0.0, 1.0}, {0.0, 3.0}};
    const auto batch = build_network_weights(g, {s1, s2});
    REQUIRE(batch.size() == 2);
    const auto single = trace_segment(g, s1);
    REQUIRE(batch[0].entries.size() == single.entries.size());
    for (std::size_t i = 0; i < single.entries.size(); ++i)
        CHECK(batch[0].entries[i].length ==
              doctest::Approx(single.entries[i].length).epsilon(1e-15));

    const auto swapped = build_network_weights(g, {s2, s1});
    CHECK(swapped[1].total_inside == doctest::Approx(batch[0].total_inside));

    try {
        build_network_weights(g, {s1, {{1.0, 1.0}, {1.0, 1.0}}});
        FAIL("expected a degenerate-segment error");
    } catch (const DegenerateSegmentError& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
}
