// fixtures.hpp
//
// Synthetic inputs shared by the unit and acceptance tests: planted
// feature clusters and small pattern pools with controlled length shapes.

#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "anonymity.hpp"
#include "cast.hpp"
#include "oracles.hpp"
#include "random.hpp"

namespace fixtures {

using namespace wfdef;

using Features = std::vector<std::vector<double>>;

/// g groups of `size` points in `dim` dimensions. Centres sit on separate
/// axes at distance `gap` from the origin; points jitter uniformly by at most
/// `spread` per coordinate.
inline Features planted(Rng &rng, std::size_t g, std::size_t size, double gap, double spread,
                        std::vector<int> &labels, std::size_t dim = 8) {
    Features f;
    labels.clear();
    for (std::size_t c = 0; c < g; ++c) {
        for (std::size_t i = 0; i < size; ++i) {
            std::vector<double> x(dim, 0.0);
            x[c % dim] = gap;
            for (auto &v : x) v += rng.uniform(-spread, spread);
            f.push_back(std::move(x));
            labels.push_back(static_cast<int>(c));
        }
    }
    return f;
}

/// smallest distance between points of different groups over largest
/// distance within a group
inline double separation_ratio(const Features &f, const std::vector<int> &labels) {
    double inter = 1e300, intra = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        for (std::size_t j = i + 1; j < f.size(); ++j) {
            const double d = euclidean(f[i], f[j]);
            if (labels[i] == labels[j]) intra = std::max(intra, d);
            else inter = std::min(inter, d);
        }
    }
    return inter / intra;
}

inline std::vector<int> to_int(const std::vector<std::size_t> &v) { return {v.begin(), v.end()}; }

/// n packets per direction spread evenly over `span` seconds
inline Trace shaped(int site, int inst, int n_out, int n_in, double span) {
    Trace t;
    t.site_id = site;
    t.instance_id = inst;
    const int n = n_out + n_in;
    for (int i = 0; i < n; ++i) {
        t.packets.push_back({span * i / std::max(1, n - 1), i % 2 == 0 && i / 2 < n_out ? Direction::out : Direction::in});
    }
    return t;
}

struct Fixture {
    std::vector<Trace> traces;
    std::vector<Pattern> patterns;
    std::vector<const Trace *> ptrs() const {
        std::vector<const Trace *> v;
        for (const auto &t : traces) v.push_back(&t);
        return v;
    }
};

/// Patterns drawn from a small pool of shapes, so different sites can land
/// in the same length buckets.
inline Fixture random_fixture(Rng &rng, std::size_t n_patterns, std::size_t n_sites) {
    Fixture fx;
    const int shapes[4][2] = {{20, 60}, {40, 150}, {10, 30}, {70, 300}};
    for (std::size_t p = 0; p < n_patterns; ++p) {
        Pattern pat;
        pat.pattern_id = p;
        pat.site_id = static_cast<int>(p % n_sites);
        pat.local_id = p / n_sites;
        const auto &s = shapes[rng.integer(0, 3)];
        const auto size = rng.integer(2, 4);
        for (int i = 0; i < size; ++i) {
            pat.traces.push_back(fx.traces.size());
            fx.traces.push_back(shaped(pat.site_id, static_cast<int>(fx.traces.size()),
                                       s[0] + static_cast<int>(rng.integer(0, 6)),
                                       s[1] + static_cast<int>(rng.integer(0, 20)), rng.uniform(1.0, 3.0)));
        }
        fx.patterns.push_back(std::move(pat));
    }
    return fx;
}

/// grid-averaged bucket-majority accuracy of a group of patterns, computed
/// from scratch
inline double group_accuracy(const std::vector<std::size_t> &group, const Fixture &fx,
                             const std::vector<TamarawParams> &grid) {
    double s = 0.0;
    for (const auto &params : grid) {
        std::vector<std::pair<std::uint64_t, std::uint64_t>> keys;
        std::vector<int> labels;
        for (auto p : group) {
            for (auto t : fx.patterns[p].traces) {
                const auto d = defend(fx.traces[t], params);
                keys.push_back({d.count(Direction::out), d.count(Direction::in)});
                labels.push_back(fx.traces[t].site_id);
            }
        }
        s += oracle::majority_accuracy(keys, labels);
    }
    return s / static_cast<double>(grid.size());
}

inline double mean_accuracy(const std::vector<std::vector<std::size_t>> &part, const Fixture &fx,
                            const std::vector<TamarawParams> &grid) {
    double s = 0.0;
    for (const auto &g : part) s += group_accuracy(g, fx, grid);
    return s / static_cast<double>(part.size());
}

inline const std::vector<TamarawParams> small_grid = {{0.04, 0.012, 10}, {0.02, 0.006, 10}, {0.08, 0.03, 10}};

/// Every site has one pattern per shape, shapes differ across the pool:
/// the setting where grouping should spread each shape over sites.
inline Fixture paired_fixture(Rng &rng, std::size_t n_sites, std::size_t n_shapes) {
    Fixture fx;
    const int shapes[3][2] = {{10, 30}, {60, 250}, {25, 100}};
    std::size_t id = 0;
    for (std::size_t site = 0; site < n_sites; ++site) {
        for (std::size_t sh = 0; sh < n_shapes; ++sh) {
            Pattern pat;
            pat.pattern_id = id++;
            pat.site_id = static_cast<int>(site);
            pat.local_id = sh;
            const auto size = rng.integer(2, 4);
            for (int i = 0; i < size; ++i) {
                pat.traces.push_back(fx.traces.size());
                fx.traces.push_back(shaped(pat.site_id, static_cast<int>(fx.traces.size()),
                                           shapes[sh][0] + static_cast<int>(rng.integer(0, 2)),
                                           shapes[sh][1] + static_cast<int>(rng.integer(0, 4)), 1.0 + 0.5 * sh));
            }
            fx.patterns.push_back(std::move(pat));
        }
    }
    return fx;
}

inline double exhaustive_minimum(const Fixture &fx, std::size_t k) {
    const std::size_t n = fx.patterns.size();
    double best = 1e9;
    oracle::for_each_partition(n, k, [&](const auto &part) {
        if (part.size() != n / k) return;
        best = std::min(best, mean_accuracy(part, fx, small_grid));
    });
    return best;
}

template <typename Builder>
inline double built_value(const Fixture &fx, std::size_t k, Builder build) {
    const LengthCache cache{fx.ptrs(), small_grid};
    std::vector<std::vector<std::size_t>> part;
    for (const auto &s : build(fx.patterns, k, cache)) part.push_back(s.patterns);
    return mean_accuracy(part, fx, small_grid);
}

}  // namespace fixtures
