// bound.hpp
//
// Attacker-success bound of the adaptive defense. After a switch the
// observer sees the switch (set identity) and the final per-direction cell
// counts. Within a set, an attacker does best by guessing the majority site
// of each observable bucket; the global bound weights the per-set optimum
// by the probability of each set.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "io.hpp"
#include "tamaraw.hpp"
#include "trace.hpp"

namespace wfdef {

/// |bucket| / largest single-site share of the bucket
inline double weighted_delta(const std::vector<int> &bucket_sites) {
    if (bucket_sites.empty()) {
        throw std::invalid_argument{"weighted_delta: empty bucket"};
    }
    std::map<int, std::size_t> counts;
    std::size_t max = 0;
    for (int s : bucket_sites) max = std::max(max, ++counts[s]);
    return static_cast<double>(bucket_sites.size()) / static_cast<double>(max);
}

/// What an observer of one defended trace learns after its switch.
struct ShapeItem {
    bool switched = false;
    DefendedLengths lengths;
    int site_id = -1;
};

using ShapeKey = std::tuple<bool, std::uint64_t, std::uint64_t>;

inline ShapeKey shape_key(const ShapeItem &s) { return {s.switched, s.lengths.n_out, s.lengths.n_in}; }

/// Site labels per observable bucket
inline std::map<ShapeKey, std::vector<int>> shape_buckets(const std::vector<ShapeItem> &items) {
    std::map<ShapeKey, std::vector<int>> b;
    for (const auto &it : items) b[shape_key(it)].push_back(it.site_id);
    return b;
}

/// Ā of one set: fraction of its traces an attacker guessing each bucket's
/// majority site gets right.
inline double set_bound(const std::vector<ShapeItem> &items) {
    if (items.empty()) {
        throw std::invalid_argument{"set_bound: set has no traces"};
    }
    std::size_t hits = 0;
    for (const auto &[key, sites] : shape_buckets(items)) {
        std::map<int, std::size_t> counts;
        std::size_t max = 0;
        for (int s : sites) max = std::max(max, ++counts[s]);
        hits += max;
    }
    return static_cast<double>(hits) / static_cast<double>(items.size());
}

struct GlobalBound {
    double value = 0.0;              /// sum_i P(S_i) Ā(S_i)
    double output_side = 0.0;        /// E over outputs f' of 1 / weighted_delta(f')
    std::vector<double> per_set;     /// Ā(S_i), NaN for empty sets
    std::vector<double> weights;     /// P(S_i)
};

inline constexpr double identity_tolerance = 1e-9;

/// weights default to each set's share of the traces. Sets without traces
/// must have weight 0. Throws std::logic_error if the set-side and
/// output-side expectations disagree.
inline GlobalBound global_bound(const std::vector<std::vector<ShapeItem>> &sets, std::vector<double> weights = {}) {
    if (sets.empty()) {
        throw std::invalid_argument{"global_bound: no sets"};
    }
    std::size_t total = 0;
    for (const auto &s : sets) total += s.size();
    if (total == 0) {
        throw std::invalid_argument{"global_bound: no traces"};
    }
    if (weights.empty()) {
        for (const auto &s : sets) weights.push_back(static_cast<double>(s.size()) / static_cast<double>(total));
    }
    if (weights.size() != sets.size()) {
        throw std::invalid_argument{"global_bound: one weight per set required"};
    }
    double wsum = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (weights[i] < 0.0 || (sets[i].empty() && weights[i] != 0.0)) {
            throw std::invalid_argument{"global_bound: invalid weight for set " + std::to_string(i)};
        }
        wsum += weights[i];
    }
    if (std::abs(wsum - 1.0) > identity_tolerance) {
        throw std::invalid_argument{"global_bound: weights sum to " + format_double(wsum) + ", not 1"};
    }

    GlobalBound g;
    g.weights = weights;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (sets[i].empty()) {
            g.per_set.push_back(std::nan(""));
            continue;
        }
        g.per_set.push_back(set_bound(sets[i]));
        g.value += weights[i] * g.per_set.back();
    }
    // every output f' = (set, bucket) has probability P(S) |f'| / |S|
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (sets[i].empty()) continue;
        const double n = static_cast<double>(sets[i].size());
        for (const auto &[key, sites] : shape_buckets(sets[i])) {
            const double p = weights[i] * static_cast<double>(sites.size()) / n;
            g.output_side += p / weighted_delta(sites);
        }
    }
    if (std::abs(g.value - g.output_side) > identity_tolerance) {
        throw std::logic_error{"bound identity violated: set side " + format_double(g.value) + ", output side " +
                               format_double(g.output_side)};
    }
    return g;
}

/// Majority-site accuracy over buckets of identical observable sequences
/// (every cell time and direction), the best any attacker can do on the
/// given defended traces.
inline double observable_oracle_accuracy(const std::vector<Trace> &observables) {
    if (observables.empty()) return 0.0;
    std::map<std::string, std::map<int, std::size_t>> buckets;
    for (const auto &t : observables) buckets[serialize_trace(t)][t.site_id]++;
    std::size_t hits = 0;
    for (const auto &[seq, counts] : buckets) {
        std::size_t max = 0;
        for (const auto &[site, c] : counts) max = std::max(max, c);
        hits += max;
    }
    return static_cast<double>(hits) / static_cast<double>(observables.size());
}

struct BoundCell {
    std::size_t k = 0;
    std::uint32_t L = 0;
    double mean_bound = 0.0;                  /// mean over the Pareto configurations
    std::vector<TamarawParams> configs;
    std::vector<GlobalBound> per_config;
};

struct BoundReport {
    std::vector<BoundCell> cells;
    std::string caveat;

    std::optional<double> at(std::size_t k, std::uint32_t L) const {
        for (const auto &c : cells) {
            if (c.k == k && c.L == L) return c.mean_bound;
        }
        return std::nullopt;
    }
};

inline BoundCell make_bound_cell(std::size_t k, std::uint32_t L, std::vector<TamarawParams> configs,
                                 std::vector<GlobalBound> bounds) {
    if (configs.size() != bounds.size() || configs.empty()) {
        throw std::invalid_argument{"make_bound_cell: one bound per configuration required"};
    }
    BoundCell c{k, L, 0.0, std::move(configs), std::move(bounds)};
    for (const auto &b : c.per_config) c.mean_bound += b.value;
    c.mean_bound /= static_cast<double>(c.per_config.size());
    return c;
}

inline nlohmann::json to_json(const BoundReport &r) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto &c : r.cells) {
        nlohmann::json configs = nlohmann::json::array();
        for (std::size_t i = 0; i < c.configs.size(); ++i) {
            const auto &b = c.per_config[i];
            nlohmann::json per_set = nlohmann::json::array();
            for (double a : b.per_set) per_set.push_back(json_number(a));
            nlohmann::json weights = nlohmann::json::array();
            for (double w : b.weights) weights.push_back(json_number(w));
            configs.push_back({{"params", to_json(c.configs[i])},
                               {"bound", json_number(b.value)},
                               {"output_side", json_number(b.output_side)},
                               {"per_set", per_set},
                               {"weights", weights}});
        }
        cells.push_back({{"k", c.k}, {"L", c.L}, {"mean_bound", json_number(c.mean_bound)}, {"configs", configs}});
    }
    return {{"cells", cells}, {"caveat", r.caveat}};
}

/// rows k, columns L
inline void write_bound_matrix_csv(std::ostream &os, const BoundReport &r) {
    std::vector<std::size_t> ks;
    std::vector<std::uint32_t> ls;
    for (const auto &c : r.cells) {
        if (std::find(ks.begin(), ks.end(), c.k) == ks.end()) ks.push_back(c.k);
        if (std::find(ls.begin(), ls.end(), c.L) == ls.end()) ls.push_back(c.L);
    }
    std::sort(ks.begin(), ks.end());
    std::sort(ls.begin(), ls.end());
    os << "k";
    for (auto L : ls) os << ",L" << L;
    os << '\n';
    for (auto k : ks) {
        os << k;
        for (auto L : ls) {
            const auto v = r.at(k, L);
            os << ',' << (v ? format_double(*v) : "");
        }
        os << '\n';
    }
}

}  // namespace wfdef
