#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "tamaraw.hpp"

using namespace wfdef;

namespace {

OverheadPoint pt(double bw, double tm, double tag = 0.01) {
    OverheadPoint p;
    p.bandwidth = bw;
    p.time = tm;
    p.params = {tag, tag, 1};
    return p;
}

}  // namespace

TEST(Grid, DefaultGridShape) {
    const auto g = build_param_grid({0.04, 0.012, 100});
    ASSERT_EQ(g.size(), 196u);
    const double ratio = std::exp(std::log(7.0) / 7.0);
    for (std::size_t i = 0; i + 1 < 14; ++i) {
        EXPECT_NEAR(g[i + 1].rho_out / g[i].rho_out, ratio, 1e-12);
        EXPECT_NEAR(g[(i + 1) * 14].rho_in / g[i * 14].rho_in, ratio, 1e-12);
    }
    double lo = 1, hi = 0;
    for (const auto &p : g) {
        lo = std::min(lo, p.rho_in);
        hi = std::max(hi, p.rho_in);
        EXPECT_EQ(p.L, 100u);
    }
    EXPECT_NEAR(lo, 0.012 / 7.0, 1e-15);
    EXPECT_NEAR(hi, 0.012 * std::pow(7.0, 6.0 / 7.0), 1e-15);
    // the centre of the grid is the initial pair
    EXPECT_NEAR(g[7 * 14 + 7].rho_in, 0.012, 1e-15);
    EXPECT_NEAR(g[7 * 14 + 7].rho_out, 0.04, 1e-15);
}

TEST(Grid, SingleStep) {
    const auto g = build_param_grid({0.04, 0.012, 100}, 7.0, 1);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g[0], (TamarawParams{0.04, 0.012, 100}));
}

TEST(Pareto, StrictDomination) {
    const auto f = pareto_filter({pt(1, 1), pt(2, 2)});
    ASSERT_EQ(f.size(), 1u);
    EXPECT_EQ(f[0].bandwidth, 1);
}

TEST(Pareto, MutualNonDomination) {
    const auto f = pareto_filter({pt(1, 3), pt(2, 2), pt(3, 1)});
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0].time, 1);
    EXPECT_EQ(f[2].time, 3);
}

TEST(Pareto, EqualPointsBothKept) {
    EXPECT_EQ(pareto_filter({pt(1, 1, 0.01), pt(1, 1, 0.02)}).size(), 2u);
    EXPECT_THROW(pareto_filter({}), std::invalid_argument);
}

TEST(Pareto, MatchesPairwiseOracle) {
    Rng rng{21};
    for (int round = 0; round < 100; ++round) {
        std::vector<OverheadPoint> pts;
        std::vector<std::pair<double, double>> raw;
        for (int i = 0; i < 50; ++i) {
            // coarse values force ties in one or both coordinates
            const double bw = static_cast<double>(rng.integer(0, 20)) / 4.0;
            const double tm = static_cast<double>(rng.integer(0, 20)) / 4.0;
            pts.push_back(pt(bw, tm, 0.001 * (i + 1)));
            raw.push_back({bw, tm});
        }
        const auto keep = oracle::pareto_indices(raw);
        const auto front = pareto_filter(pts);
        ASSERT_EQ(front.size(), keep.size()) << "round " << round;
        std::multiset<double> a, b;
        for (auto i : keep) a.insert(pts[i].params.rho_in);
        for (const auto &p : front) b.insert(p.params.rho_in);
        EXPECT_EQ(a, b);
        for (std::size_t i = 1; i < front.size(); ++i) EXPECT_LE(front[i - 1].time, front[i].time);
    }
}
