// attack.hpp
//
// Closed-world kFP attacker on defended traces, and the check that its
// accuracy stays under the computed bound.

#pragma once

#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "forest.hpp"
#include "io.hpp"
#include "kfp.hpp"
#include "tamaraw.hpp"
#include "trace.hpp"

namespace wfdef {

struct AttackResult {
    double accuracy = 0.0;
    std::size_t test_traces = 0;
    std::map<std::pair<int, int>, std::size_t> confusion;   /// (true site, predicted site) -> count
};

/// Trains kFP on site-labelled defended training traces and returns its
/// accuracy on the defended test traces.
inline AttackResult closed_world_attack(const std::vector<Trace> &train, const std::vector<Trace> &test,
                                        const ForestConfig &cfg = {}, std::size_t k_nn = 3) {
    if (train.empty() || test.empty()) {
        throw DataError{"closed_world_attack: empty train or test split"};
    }
    std::set<int> labels;
    for (const auto &t : train) labels.insert(t.site_id);
    if (labels.size() < 2) {
        throw DataError{"closed_world_attack: training data has a single class"};
    }
    std::vector<FeatureVector> x;
    std::vector<int> y;
    x.reserve(train.size());
    for (const auto &t : train) {
        x.push_back(extract_kfp_features(t));
        y.push_back(t.site_id);
    }
    KfpModel model;
    model.fit(x, y, cfg, k_nn);

    AttackResult r;
    r.test_traces = test.size();
    std::size_t hits = 0;
    for (const auto &t : test) {
        const int guess = model.predict(extract_kfp_features(t));
        hits += guess == t.site_id;
        r.confusion[{t.site_id, guess}]++;
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
    return r;
}

inline constexpr double default_attack_tolerance = 0.03;

struct AttackRow {
    TamarawParams params;
    double bound = 0.0;
    double kfp_accuracy = 0.0;
    AttackResult detail;

    bool within(double tolerance) const { return kfp_accuracy <= bound + tolerance; }
};

struct AttackVerdict {
    bool passed = true;
    std::vector<std::size_t> violations;   /// row indices
    std::string diagnostics;
};

inline AttackVerdict compare_with_bound(const std::vector<AttackRow> &rows,
                                        double tolerance = default_attack_tolerance) {
    AttackVerdict v;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto &r = rows[i];
        if (r.within(tolerance)) continue;
        v.passed = false;
        v.violations.push_back(i);
        v.diagnostics += "rho_out=" + format_double(r.params.rho_out) + " rho_in=" + format_double(r.params.rho_in) +
                         " L=" + std::to_string(r.params.L) + ": kFP " + format_double(r.kfp_accuracy) +
                         " exceeds bound " + format_double(r.bound) + " + " + format_double(tolerance) + "\n";
        v.diagnostics += "  confusion (true -> predicted: count):";
        for (const auto &[pair, c] : r.detail.confusion) {
            v.diagnostics += " " + std::to_string(pair.first) + "->" + std::to_string(pair.second) + ":" +
                             std::to_string(c);
        }
        v.diagnostics += "\n";
    }
    return v;
}

inline void write_attack_csv(std::ostream &os, const std::vector<AttackRow> &rows) {
    os << "rho_out,rho_in,bound,kfp_accuracy\n";
    for (const auto &r : rows) {
        os << format_double(r.params.rho_out) << ',' << format_double(r.params.rho_in) << ','
           << format_double(r.bound) << ',' << format_double(r.kfp_accuracy) << '\n';
    }
}

}  // namespace wfdef
