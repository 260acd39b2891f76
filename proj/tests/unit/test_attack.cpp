#include <gtest/gtest.h>

#include <sstream>

#include "attack.hpp"
#include "bound.hpp"
#include "random.hpp"

using namespace wfdef;

namespace {

AttackRow row(double bound, double kfp) {
    AttackRow r;
    r.params = {0.04, 0.012, 100};
    r.bound = bound;
    r.kfp_accuracy = kfp;
    return r;
}

Trace site_trace(Rng &rng, int site, int instance) {
    Trace t;
    t.site_id = site;
    t.instance_id = instance;
    const int n = site == 0 ? 20 : 60;
    double time = 0.0;
    for (int i = 0; i < n; ++i) {
        time += rng.uniform(0.0, 0.01);
        t.packets.push_back({time, (i + site) % 3 == 0 ? Direction::out : Direction::in});
    }
    return t;
}

}  // namespace

TEST(CompareWithBound, Examples) {
    EXPECT_TRUE(compare_with_bound({row(0.41, 0.31)}).passed);
    EXPECT_TRUE(compare_with_bound({row(0.41, 0.41)}).passed);
    EXPECT_TRUE(compare_with_bound({row(0.41, 0.43)}).passed);
    const auto v = compare_with_bound({row(0.41, 0.31), row(0.41, 0.45), row(0.2, 0.9)});
    EXPECT_FALSE(v.passed);
    EXPECT_EQ(v.violations, (std::vector<std::size_t>{1, 2}));
    EXPECT_NE(v.diagnostics.find("exceeds bound"), std::string::npos);
    EXPECT_TRUE(compare_with_bound({row(0.41, 0.45)}, 0.05).passed);
    EXPECT_TRUE(compare_with_bound({}).passed);
}

TEST(CompareWithBound, DiagnosticsCarryConfusion) {
    auto r = row(0.5, 1.0);
    r.detail.confusion[{0, 0}] = 3;
    r.detail.confusion[{1, 1}] = 3;
    const auto v = compare_with_bound({r});
    EXPECT_NE(v.diagnostics.find("0->0:3"), std::string::npos);
    EXPECT_NE(v.diagnostics.find("1->1:3"), std::string::npos);
}

TEST(ClosedWorld, Errors) {
    Rng rng{91};
    const std::vector<Trace> one = {site_trace(rng, 0, 0), site_trace(rng, 0, 1)};
    EXPECT_THROW(closed_world_attack({}, one), DataError);
    EXPECT_THROW(closed_world_attack(one, {}), DataError);
    EXPECT_THROW(closed_world_attack(one, one), DataError);
}

TEST(ClosedWorld, UndefendedSitesAreLearned) {
    Rng rng{92};
    std::vector<Trace> train, test;
    for (int i = 0; i < 20; ++i) {
        train.push_back(site_trace(rng, i % 2, i));
        test.push_back(site_trace(rng, i % 2, 100 + i));
    }
    const auto r = closed_world_attack(train, test, {20, 8, 2, true, 1});
    EXPECT_EQ(r.test_traces, 20u);
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
    EXPECT_EQ((r.confusion.at({0, 0})), 10u);
}

TEST(ClosedWorld, PaddedSitesStayWithinBound) {
    Rng rng{93};
    const TamarawParams params{0.04, 0.012, 100};
    std::vector<Trace> train, test;
    std::vector<ShapeItem> items;
    for (int i = 0; i < 40; ++i) {
        const auto t = site_trace(rng, i % 2, i);
        const auto d = defend(t, params);
        (i < 20 ? train : test).push_back(d.observable(t.site_id, t.instance_id));
        if (i >= 20) items.push_back({false, {d.count(Direction::out), d.count(Direction::in)}, t.site_id});
    }
    const double bound = global_bound({items}).value;
    EXPECT_DOUBLE_EQ(bound, 0.5);
    const auto r = closed_world_attack(train, test, {20, 8, 2, true, 1});
    AttackRow a;
    a.params = params;
    a.bound = bound;
    a.kfp_accuracy = r.accuracy;
    a.detail = r;
    EXPECT_TRUE(compare_with_bound({a}).passed) << r.accuracy;
}

TEST(AttackCsv, Header) {
    std::ostringstream os;
    write_attack_csv(os, {row(0.5, 0.25)});
    EXPECT_EQ(os.str(), "rho_out,rho_in,bound,kfp_accuracy\n0.04,0.012,0.5,0.25\n");
}
