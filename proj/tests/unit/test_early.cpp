#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "early.hpp"
#include "random.hpp"

using namespace wfdef;

namespace {

// three sites with two patterns each; set s holds pattern s of site s and
// pattern (s+1)%3's second pattern, so every set spans two sites
struct Fixture {
    std::vector<Pattern> patterns;
    std::vector<AnonymitySet> sets;
    SetIndex index;
    std::vector<Trace> traces;
    std::vector<std::size_t> truth;
};

Fixture fixture(Rng &rng, std::size_t n_traces) {
    Fixture f;
    for (int site = 0; site < 3; ++site) {
        for (std::size_t local = 0; local < 2; ++local) {
            Pattern p;
            p.pattern_id = f.patterns.size();
            p.site_id = site;
            p.local_id = local;
            f.patterns.push_back(p);
        }
    }
    for (std::size_t s = 0; s < 3; ++s) {
        AnonymitySet a;
        a.set_id = s;
        a.patterns = {2 * s, 2 * ((s + 1) % 3) + 1};
        f.sets.push_back(a);
    }
    f.index = SetIndex{f.sets, f.patterns};
    for (std::size_t i = 0; i < n_traces; ++i) {
        Trace t;
        t.site_id = static_cast<int>(rng.integer(0, 2));
        t.instance_id = static_cast<int>(i);
        f.traces.push_back(t);
        const int local = static_cast<int>(rng.integer(0, 1));
        f.truth.push_back(*f.index.find(t.site_id, local));
    }
    return f;
}

std::optional<std::size_t> owner(const Fixture &f, const Prediction &p) {
    for (const auto &s : f.sets) {
        for (auto pi : s.patterns) {
            if (f.patterns[pi].site_id == p.site && static_cast<int>(f.patterns[pi].local_id) == p.pattern) {
                return s.set_id;
            }
        }
    }
    return std::nullopt;
}

Trace burst(int site, int instance, Direction d, double start, int n) {
    Trace t;
    t.site_id = site;
    t.instance_id = instance;
    for (int i = 0; i < n; ++i) t.packets.push_back({start + 0.01 * i, d});
    return t;
}

}  // namespace

TEST(Checkpoints, Default) {
    const auto c = default_checkpoints();
    ASSERT_EQ(c.size(), 41u);
    EXPECT_DOUBLE_EQ(c.front(), 0.5);
    EXPECT_DOUBLE_EQ(c[39], 20.0);
    EXPECT_TRUE(std::isinf(c.back()));
    EXPECT_EQ(default_checkpoints(1.0, 3.0).size(), 4u);
}

TEST(Checkpoints, PrefixAtFullIsIdentity) {
    const auto t = burst(0, 0, Direction::out, 0.0, 50);
    EXPECT_EQ(prefix_at(t, full_trace).size(), 50u);
    EXPECT_EQ(prefix_at(t, 0.1).size(), 11u);
}

TEST(SafeTimes, MatchesDirectScan) {
    Rng rng{71};
    const std::vector<double> cps = {0.5, 1.0, 1.5, 2.0, full_trace};
    for (int round = 0; round < 100; ++round) {
        auto f = fixture(rng, 40);
        const double alpha = rng.uniform(0.3, 1.0);
        PredictionTable table;
        std::vector<std::vector<Prediction>> preds(f.traces.size());
        for (std::size_t i = 0; i < f.traces.size(); ++i) {
            for (std::size_t c = 0; c < cps.size(); ++c) {
                // later checkpoints are more often right
                const double p_right = 0.2 + 0.2 * static_cast<double>(c);
                Prediction p;
                if (rng.uniform() < p_right) {
                    for (auto pi : f.sets[f.truth[i]].patterns) {
                        if (f.patterns[pi].site_id == f.traces[i].site_id) {
                            p = {f.patterns[pi].site_id, static_cast<int>(f.patterns[pi].local_id)};
                        }
                    }
                } else {
                    p = {static_cast<int>(rng.integer(0, 3)), static_cast<int>(rng.integer(0, 2))};
                }
                preds[i].push_back(p);
            }
            table.put(f.traces[i].site_id, f.traces[i].instance_id, preds[i]);
        }
        std::vector<ValidationTrace> val;
        for (std::size_t i = 0; i < f.traces.size(); ++i) val.push_back({&f.traces[i], f.truth[i]});
        const auto st = compute_safe_times(f.index, val, table, cps, alpha);

        for (std::size_t s = 0; s < 3; ++s) {
            double n = 0;
            std::vector<double> hit(cps.size(), 0);
            for (std::size_t i = 0; i < f.traces.size(); ++i) {
                if (f.truth[i] != s) continue;
                n += 1;
                for (std::size_t c = 0; c < cps.size(); ++c) hit[c] += owner(f, preds[i][c]) == s;
            }
            const auto &e = st.sets[s];
            EXPECT_EQ(e.validation_traces, static_cast<std::size_t>(n));
            if (n == 0) {
                EXPECT_FALSE(std::isfinite(e.tau));
                continue;
            }
            const double full = hit.back() / n;
            EXPECT_DOUBLE_EQ(e.accuracy_full, full);
            double tau = never;
            for (std::size_t c = 0; c + 1 < cps.size() && full > 0; ++c) {
                EXPECT_DOUBLE_EQ(e.accuracy[c], hit[c] / n);
                if (hit[c] / n >= alpha * full) {
                    tau = cps[c];
                    break;
                }
            }
            EXPECT_EQ(e.tau, tau) << "round " << round << " set " << s;
        }
    }
}

TEST(SafeTimes, Flags) {
    Rng rng{72};
    auto f = fixture(rng, 0);
    Trace a;
    a.site_id = 0;
    a.instance_id = 1;
    PredictionTable table;
    // set 0's only trace is always routed to set 2
    table.put(0, 1, {{2, 0}, {2, 0}});
    const auto st = compute_safe_times(f.index, {{&a, 0}}, table, {1.0, full_trace}, 0.9);
    EXPECT_EQ(st.sets[0].flag, "zero full-trace accuracy");
    EXPECT_EQ(st.sets[1].flag, "no validation traces");
    EXPECT_TRUE(st.query_times().empty());

    EXPECT_THROW(compute_safe_times(f.index, {}, table, {1.0}, 0.9), std::invalid_argument);
    EXPECT_THROW(compute_safe_times(f.index, {}, table, {1.0, full_trace}, 0.0), std::invalid_argument);
    EXPECT_THROW(compute_safe_times(f.index, {{&a, 0}}, PredictionTable{}, {1.0, full_trace}, 0.9), DataError);
}

namespace {

SafeTimeTable taus(std::vector<double> t) {
    SafeTimeTable table;
    table.checkpoints = {1.0, 2.0, full_trace};
    for (double x : t) {
        SafeTimeEntry e;
        e.tau = x;
        table.sets.push_back(e);
    }
    return table;
}

}  // namespace

TEST(Decide, Examples) {
    const auto table = taus({1.0, 2.0, never, 2.0});

    DecisionState a;
    EXPECT_EQ(decide(1, 1.0, table, a), std::nullopt);   // set 1 is not due yet; set 0 is rejected
    EXPECT_TRUE(a.rejected.count(0));
    EXPECT_EQ(decide(1, 2.0, table, a), std::optional<std::size_t>{1});
    EXPECT_TRUE(a.rejected.count(3));
    EXPECT_EQ(decide(1, 2.0, table, a), std::nullopt);   // already chosen

    DecisionState b;
    EXPECT_EQ(decide(0, 1.0, table, b), std::optional<std::size_t>{0});

    DecisionState c;
    EXPECT_EQ(decide(std::nullopt, 1.0, table, c), std::nullopt);
    EXPECT_EQ(decide(0, 2.0, table, c), std::nullopt);    // 0 was tested at 1.0
    EXPECT_EQ(decide(2, 2.0, table, c), std::nullopt);    // set 2 never switches

    DecisionState d;
    EXPECT_EQ(decide(0, 1.0, table, d, {false, true, true, true}), std::nullopt);
    EXPECT_TRUE(d.rejected.count(0));
}

TEST(Decide, SingleShotOnRandomStreams) {
    Rng rng{73};
    for (int round = 0; round < 500; ++round) {
        std::vector<double> t;
        const auto n = rng.integer(1, 6);
        for (int s = 0; s < n; ++s) t.push_back(rng.uniform() < 0.2 ? never : 0.5 * static_cast<double>(rng.integer(1, 4)));
        auto table = taus(t);
        DecisionState state;
        int accepted = 0;
        for (double q : table.query_times()) {
            std::optional<std::size_t> pred;
            if (rng.uniform() < 0.8) pred = static_cast<std::size_t>(rng.integer(0, n - 1));
            if (auto a = decide(pred, q, table, state)) {
                ++accepted;
                EXPECT_EQ(table.sets[*a].tau, q);
                EXPECT_EQ(*a, *pred);
            }
        }
        EXPECT_LE(accepted, 1);
    }
}

TEST(PredictionTable, JsonRoundTrip) {
    PredictionTable t;
    t.put(3, 7, {{3, 0}, {2, 1}});
    t.put(0, 1, {{0, 0}});
    const auto back = PredictionTable::from_json(t.to_json());
    EXPECT_EQ(back.at(3, 7, 1), (Prediction{2, 1}));
    EXPECT_EQ(back.at(0, 1, 0), (Prediction{0, 0}));
    EXPECT_FALSE(back.contains(1, 1));
    EXPECT_THROW(back.at(1, 1, 0), DataError);
}

TEST(CentroidSites, SeparatesDirectionBursts) {
    std::vector<Trace> train;
    for (int i = 0; i < 6; ++i) {
        train.push_back(burst(4, i, Direction::out, 0.0, 40 + i));
        train.push_back(burst(9, i, Direction::in, 0.0, 40 + i));
    }
    std::vector<const Trace *> ptr;
    for (const auto &t : train) ptr.push_back(&t);
    CentroidSitePredictor m;
    m.fit(ptr, {0.2, full_trace});
    EXPECT_EQ(m.sites(), (std::vector<int>{4, 9}));
    const auto q_out = burst(-1, 0, Direction::out, 0.0, 30);
    const auto q_in = burst(-1, 0, Direction::in, 0.0, 30);
    EXPECT_EQ(m.predict(prefix_at(q_out, 0.2), 0.2), 4);
    EXPECT_EQ(m.predict(q_in, full_trace), 9);
    EXPECT_THROW(m.predict(q_in, 0.3), std::invalid_argument);

    std::stringstream ss;
    m.write(ss);
    CentroidSitePredictor back;
    back.read(ss);
    EXPECT_EQ(back.predict(q_out, full_trace), 4);
    EXPECT_EQ(back.checkpoints().size(), 2u);
}

TEST(PatternModels, FallbackForSinglePattern) {
    std::vector<Trace> train;
    for (int i = 0; i < 4; ++i) train.push_back(burst(2, i, Direction::out, 0.0, 10));
    std::vector<const Trace *> ptr;
    for (const auto &t : train) ptr.push_back(&t);
    PatternPredictor p;
    p.fit_site(2, ptr, {5, 5, 5, 5}, {1.0, full_trace}, {});
    EXPECT_EQ(p.predict(2, 0, train[0]), 5);
    EXPECT_EQ(p.predict(7, 0, train[0]), 0);

    PatternPredictor q;
    q.fit_site(2, ptr, {1, 1, 1, 2}, {1.0, full_trace}, {});
    EXPECT_TRUE(q.sites().at(2).insufficient);
    EXPECT_EQ(q.predict(2, 1, train[0]), 1);
}

TEST(PatternModels, TwoStageAndRetainedModels) {
    std::vector<Trace> train;
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) {
        train.push_back(burst(1, i, i % 2 ? Direction::in : Direction::out, 0.0, 20 + i));
        labels.push_back(i % 2);
    }
    std::vector<const Trace *> ptr;
    for (const auto &t : train) ptr.push_back(&t);
    const std::vector<double> cps = {0.1, full_trace};
    CentroidSitePredictor sites;
    sites.fit(ptr, cps);
    PatternPredictor patterns;
    PatternModelConfig cfg;
    cfg.forest = {20, 8, 2, true, 4};
    cfg.k_nn = 1;
    patterns.fit_site(1, ptr, labels, cps, cfg);
    const auto row = predict_all_checkpoints(sites, patterns, train[3]);
    ASSERT_EQ(row.size(), 2u);
    EXPECT_EQ(row[1], (Prediction{1, 1}));

    std::vector<Pattern> pats(2);
    pats[0].site_id = 1;
    pats[1].site_id = 1;
    pats[1].pattern_id = pats[1].local_id = 1;
    AnonymitySet s0, s1;
    s0.patterns = {0};
    s1.set_id = 1;
    s1.patterns = {1};
    const SetIndex index{{s0, s1}, pats};
    auto table = taus({0.1, never});
    table.checkpoints = cps;
    table.sets[0].tau_index = 0;
    EXPECT_EQ(retained_models(table, index), (std::set<std::pair<int, std::size_t>>{{1, 0}}));
}

TEST(ExternalSites, LineProtocol) {
    ExternalSitePredictor ext{"while read line; do echo '{\"site_id\": 4, \"confidence\": 0.75}'; done"};
    const auto t = burst(0, 0, Direction::out, 0.0, 5);
    EXPECT_EQ(ext.predict(t, 1.0), 4);
    EXPECT_DOUBLE_EQ(ext.last_confidence(), 0.75);
    EXPECT_EQ(ext.predict(t, full_trace), 4);
}

TEST(ExternalSites, BadResponses) {
    const auto t = burst(0, 0, Direction::out, 0.0, 5);
    ExternalSitePredictor silent{"read line; exit 0"};
    EXPECT_THROW(silent.predict(t, 1.0), DataError);
    ExternalSitePredictor garbage{"while read line; do echo 'nonsense'; done"};
    EXPECT_THROW(garbage.predict(t, 1.0), DataError);
}
