#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "bound.hpp"
#include "oracles.hpp"

using namespace wfdef;

namespace {

ShapeItem item(int site, std::uint64_t n_out, std::uint64_t n_in, bool switched = false) {
    return {switched, {n_out, n_in}, site};
}

}  // namespace

TEST(WeightedDelta, Examples) {
    EXPECT_DOUBLE_EQ(weighted_delta({4, 4, 4}), 1.0);
    EXPECT_DOUBLE_EQ(weighted_delta({0, 1, 2}), 3.0);
    EXPECT_DOUBLE_EQ(weighted_delta({0, 0, 0, 0, 1, 1, 1, 2, 2, 2}), 2.5);
    EXPECT_THROW(weighted_delta({}), std::invalid_argument);
}

TEST(SetBound, Examples) {
    EXPECT_DOUBLE_EQ(set_bound({item(0, 100, 100), item(1, 200, 100), item(2, 300, 100)}), 1.0);
    EXPECT_DOUBLE_EQ(set_bound({item(0, 100, 100), item(1, 100, 100), item(0, 200, 100), item(1, 200, 100)}), 0.5);
    // switched and unswitched traces are told apart even with equal counts
    EXPECT_DOUBLE_EQ(set_bound({item(0, 100, 100, true), item(1, 100, 100, false)}), 1.0);
    EXPECT_THROW(set_bound({}), std::invalid_argument);
}

TEST(SetBound, EqualsBucketWeightedInverseDelta) {
    Rng rng{51};
    for (int round = 0; round < 50; ++round) {
        std::vector<ShapeItem> items;
        const auto n = rng.integer(1, 60);
        for (int i = 0; i < n; ++i) {
            items.push_back(item(static_cast<int>(rng.integer(0, 5)), 100 * static_cast<std::uint64_t>(rng.integer(1, 3)),
                                 100 * static_cast<std::uint64_t>(rng.integer(1, 3)), rng.uniform() < 0.3));
        }
        std::map<std::tuple<bool, std::uint64_t, std::uint64_t>, std::map<int, int>> buckets;
        for (const auto &it : items) buckets[{it.switched, it.lengths.n_out, it.lengths.n_in}][it.site_id]++;
        double expected = 0.0;
        for (const auto &[k, by] : buckets) {
            int size = 0, top = 0;
            for (const auto &[s, c] : by) {
                size += c;
                top = std::max(top, c);
            }
            const double delta = static_cast<double>(size) / top;
            expected += (static_cast<double>(size) / static_cast<double>(items.size())) / delta;
        }
        EXPECT_NEAR(set_bound(items), expected, 1e-12);
    }
}

TEST(GlobalBound, Examples) {
    const std::vector<ShapeItem> one = {item(0, 100, 100), item(1, 100, 100), item(1, 200, 100)};
    EXPECT_NEAR(global_bound({one}).value, set_bound(one), 1e-15);

    // A = 0.2: five sites in one bucket; A = 0.6: {0,0,1} and {2,3}
    const std::vector<ShapeItem> a = {item(0, 1, 1), item(1, 1, 1), item(2, 1, 1), item(3, 1, 1), item(4, 1, 1)};
    const std::vector<ShapeItem> b = {item(0, 1, 1), item(0, 1, 1), item(1, 1, 1), item(2, 2, 1), item(3, 2, 1)};
    const auto g = global_bound({a, b}, {0.5, 0.5});
    EXPECT_NEAR(g.per_set[0], 0.2, 1e-15);
    EXPECT_NEAR(g.per_set[1], 0.6, 1e-15);
    EXPECT_NEAR(g.value, 0.4, 1e-15);
    EXPECT_NEAR(g.output_side, 0.4, 1e-12);
}

TEST(GlobalBound, WeightValidation) {
    const std::vector<ShapeItem> a = {item(0, 1, 1)};
    EXPECT_THROW(global_bound({a, a}, {0.5}), std::invalid_argument);
    EXPECT_THROW(global_bound({a, a}, {0.7, 0.7}), std::invalid_argument);
    EXPECT_THROW(global_bound({a, {}}, {0.5, 0.5}), std::invalid_argument);
    EXPECT_THROW(global_bound({}), std::invalid_argument);
    const auto g = global_bound({a, {}}, {1.0, 0.0});
    EXPECT_TRUE(std::isnan(g.per_set[1]));
    EXPECT_DOUBLE_EQ(g.value, 1.0);
}

TEST(GlobalBound, IdentityOnRandomPartitions) {
    Rng rng{52};
    for (int round = 0; round < 100; ++round) {
        std::vector<std::vector<ShapeItem>> sets(static_cast<std::size_t>(rng.integer(1, 6)));
        for (auto &s : sets) {
            const auto n = rng.integer(1, 40);
            for (int i = 0; i < n; ++i) {
                s.push_back(item(static_cast<int>(rng.integer(0, 7)), static_cast<std::uint64_t>(rng.integer(1, 4)),
                                 static_cast<std::uint64_t>(rng.integer(1, 4)), rng.uniform() < 0.5));
            }
        }
        const auto share = global_bound(sets);
        EXPECT_NEAR(share.value, share.output_side, identity_tolerance);
        std::vector<double> uniform(sets.size(), 1.0 / static_cast<double>(sets.size()));
        const auto u = global_bound(sets, uniform);
        EXPECT_NEAR(u.value, u.output_side, identity_tolerance);
    }
}

TEST(Uniformity, EqualLengthsGiveEqualObservables) {
    Rng rng{53};
    const TamarawParams params{0.03, 0.01, 20};
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::string> seen;
    int collisions = 0;
    for (int i = 0; i < 500; ++i) {
        const auto t = oracle::random_trace(rng, 30, 0.3);
        const auto d = defend(t, params);
        const auto key = std::pair{std::uint64_t{d.count(Direction::out)}, std::uint64_t{d.count(Direction::in)}};
        const auto seq = serialize_trace(d.observable());
        auto [it, fresh] = seen.emplace(key, seq);
        if (!fresh) {
            ++collisions;
            EXPECT_EQ(it->second, seq);
        }
    }
    EXPECT_GT(collisions, 100);
}

TEST(Uniformity, SequenceOracleMatchesLengthBound) {
    Rng rng{54};
    for (int round = 0; round < 20; ++round) {
        const auto params = oracle::random_params(rng);
        std::vector<Trace> observables;
        std::vector<ShapeItem> items;
        for (int i = 0; i < 80; ++i) {
            auto t = oracle::random_trace(rng, 25, 0.5);
            t.site_id = static_cast<int>(rng.integer(0, 4));
            const auto d = defend(t, params);
            observables.push_back(d.observable(t.site_id));
            items.push_back(item(t.site_id, d.count(Direction::out), d.count(Direction::in)));
        }
        EXPECT_NEAR(observable_oracle_accuracy(observables), global_bound({items}).value, 1e-9);
    }
}

TEST(BoundReport, MatrixCsv) {
    BoundReport r;
    r.cells.push_back(make_bound_cell(2, 100, {{0.04, 0.012, 100}}, {global_bound({{item(0, 1, 1)}})}));
    ASSERT_TRUE(r.at(2, 100).has_value());
    EXPECT_DOUBLE_EQ(*r.at(2, 100), 1.0);
    EXPECT_FALSE(r.at(7, 100).has_value());
    std::ostringstream os;
    write_bound_matrix_csv(os, r);
    EXPECT_EQ(os.str().substr(0, 9), "k,L100\n2,");
}
