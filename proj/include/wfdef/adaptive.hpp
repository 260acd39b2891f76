// adaptive.hpp
//
// Global-to-local switching. A trace starts under the global Tamaraw
// parameters; at each distinct safe time the switch policy names a set,
// the single-shot rule accepts or rejects it, and an accepted set moves the
// rest of the trace to that set's local rates.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "early.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "tamaraw.hpp"
#include "trace.hpp"

namespace wfdef {

/// Names the anonymity set of a live trace at query time t, or abstains.
class SwitchPolicy {
public:
    virtual ~SwitchPolicy() = default;
    virtual std::optional<std::size_t> predict(const Trace &trace, double t, std::size_t checkpoint_index) const = 0;
};

class NeverSwitch : public SwitchPolicy {
public:
    std::optional<std::size_t> predict(const Trace &, double, std::size_t) const override { return std::nullopt; }
};

/// Knows every trace's true set.
class OracleSwitch : public SwitchPolicy {
public:
    void assign(int site, int instance, std::size_t set_id) { truth_[{site, instance}] = set_id; }

    std::optional<std::size_t> predict(const Trace &trace, double, std::size_t) const override {
        auto it = truth_.find({trace.site_id, trace.instance_id});
        if (it == truth_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::map<std::pair<int, int>, std::size_t> truth_;
};

/// Two-stage detector answers looked up in a precomputed table.
class CachedDetector : public SwitchPolicy {
public:
    CachedDetector(const PredictionTable &table, const SetIndex &index) : table_{table}, index_{index} {}

    std::optional<std::size_t> predict(const Trace &trace, double, std::size_t checkpoint_index) const override {
        return index_.find(table_.at(trace.site_id, trace.instance_id, checkpoint_index));
    }

private:
    const PredictionTable &table_;
    const SetIndex &index_;
};

/// Runs the two-stage detector on the prefix. By default the prefix is the
/// raw trace; with a defended view it is the pure-global defended stream.
class LiveDetector : public SwitchPolicy {
public:
    LiveDetector(const SitePredictor &sites, const PatternPredictor &patterns, const SetIndex &index,
                 std::optional<TamarawParams> defended_view = {})
        : sites_{sites}, patterns_{patterns}, index_{index}, view_{defended_view} {}

    std::optional<std::size_t> predict(const Trace &trace, double t, std::size_t checkpoint_index) const override {
        const Trace source = view_ ? defend(trace, *view_).observable(trace.site_id, trace.instance_id) : trace;
        return index_.find(predict_two_stage(sites_, patterns_, prefix_at(source, t), checkpoint_index));
    }

private:
    const SitePredictor &sites_;
    const PatternPredictor &patterns_;
    const SetIndex &index_;
    std::optional<TamarawParams> view_;
};

struct AdaptiveConfig {
    TamarawParams global;
    std::vector<std::optional<TamarawParams>> local;   /// by set id; nullopt never switches
    SafeTimeTable safe_times;

    std::vector<bool> switchable() const {
        std::vector<bool> s(local.size());
        for (std::size_t i = 0; i < local.size(); ++i) s[i] = local[i].has_value();
        return s;
    }

    void validate() const {
        global.validate();
        if (local.size() != safe_times.sets.size()) {
            throw std::invalid_argument{"AdaptiveConfig: local parameter list does not match the set count"};
        }
        for (const auto &p : local) {
            if (!p) continue;
            p->validate();
            if (p->L != global.L) {
                throw std::invalid_argument{"AdaptiveConfig: local and global L differ"};
            }
        }
    }
};

/// time of the last cell of the pure-global defended trace
inline double pure_global_end(const Trace &trace, const TamarawParams &global) {
    double end = 0.0;
    for (Direction d : {Direction::out, Direction::in}) {
        const CellClock clock{global.rho(d)};
        end = std::max(end, clock.time(summarize_direction(trace, d, clock, global.L).total_cells));
    }
    return end;
}

struct QueryEvent {
    double time;
    std::optional<std::size_t> predicted;
    bool accepted = false;
};

struct SwitchPlan {
    std::optional<SwitchEvent> event;
    std::optional<RateSwitch> rate_switch;
    std::vector<QueryEvent> queries;
};

/// Walks the distinct safe times that fall before the pure-global end of
/// the trace and applies the single-shot rule.
inline SwitchPlan plan_switch(const Trace &trace, const AdaptiveConfig &cfg, const SwitchPolicy &policy) {
    SwitchPlan plan;
    const double end = pure_global_end(trace, cfg.global);
    const auto switchable = cfg.switchable();
    DecisionState state;
    for (double t : cfg.safe_times.query_times()) {
        if (t >= end - time_tolerance) break;
        const auto predicted = policy.predict(trace, t, cfg.safe_times.checkpoint_index(t));
        const auto accepted = decide(predicted, t, cfg.safe_times, state, switchable);
        plan.queries.push_back({t, predicted, accepted.has_value()});
        if (accepted) {
            plan.event = SwitchEvent{t, *accepted};
            plan.rate_switch = RateSwitch{t, *cfg.local[*accepted]};
            break;
        }
    }
    return plan;
}

struct AdaptiveResult {
    DefendedTrace defended;
    std::vector<QueryEvent> queries;
};

inline AdaptiveResult simulate_trace(const Trace &trace, const AdaptiveConfig &cfg, const SwitchPolicy &policy) {
    auto plan = plan_switch(trace, cfg, policy);
    AdaptiveResult r;
    r.defended = defend(trace, cfg.global, plan.rate_switch);
    r.defended.switch_event = plan.event;
    r.queries = std::move(plan.queries);
    return r;
}

// ---------------------------------------------------------------------------
// Batch evaluation

enum class Routing { none, correct, wrong };

inline std::string to_string(Routing r) {
    switch (r) {
        case Routing::none: return "none";
        case Routing::correct: return "correct";
        case Routing::wrong: return "wrong";
    }
    return "none";
}

struct TraceOutcome {
    int site_id = -1;
    int instance_id = 0;
    std::optional<std::size_t> true_set;
    std::optional<SwitchEvent> switch_event;
    DefendedLengths lengths;
    OverheadPoint adaptive;
    OverheadPoint global;
    std::vector<QueryEvent> queries;

    double saving() const { return global.total() - adaptive.total(); }

    Routing routing() const {
        if (!switch_event) return Routing::none;
        return true_set && *true_set == switch_event->set_id ? Routing::correct : Routing::wrong;
    }
};

struct SimulationSummary {
    std::size_t traces = 0;
    double bandwidth = 0.0;
    double time = 0.0;
    double global_bandwidth = 0.0;
    double global_time = 0.0;
    double switched = 0.0;    /// fractions of traces
    double correct = 0.0;
    double wrong = 0.0;

    double total() const { return bandwidth + time; }
    double global_total() const { return global_bandwidth + global_time; }
};

struct SimulationReport {
    TamarawParams global;
    std::vector<TraceOutcome> rows;

    SimulationSummary summary() const {
        SimulationSummary s;
        s.traces = rows.size();
        if (rows.empty()) return s;
        for (const auto &r : rows) {
            s.bandwidth += r.adaptive.bandwidth;
            s.time += r.adaptive.time;
            s.global_bandwidth += r.global.bandwidth;
            s.global_time += r.global.time;
            s.switched += r.switch_event ? 1.0 : 0.0;
            s.correct += r.routing() == Routing::correct ? 1.0 : 0.0;
            s.wrong += r.routing() == Routing::wrong ? 1.0 : 0.0;
        }
        const double n = static_cast<double>(rows.size());
        for (double *x : {&s.bandwidth, &s.time, &s.global_bandwidth, &s.global_time, &s.switched, &s.correct, &s.wrong}) {
            *x /= n;
        }
        return s;
    }
};

/// true_sets[i] is the set of traces[i], or nullopt when it has none
/// (held-out sites).
inline SimulationReport evaluate(const std::vector<const Trace *> &traces,
                                 const std::vector<std::optional<std::size_t>> &true_sets, const AdaptiveConfig &cfg,
                                 const SwitchPolicy &policy, std::size_t threads = 1) {
    if (traces.size() != true_sets.size()) {
        throw std::invalid_argument{"evaluate: trace and label counts differ"};
    }
    cfg.validate();
    SimulationReport report;
    report.global = cfg.global;
    report.rows.resize(traces.size());
    parallel_for(traces.size(), threads, [&](std::size_t i) {
        const Trace &t = *traces[i];
        auto plan = plan_switch(t, cfg, policy);
        auto &row = report.rows[i];
        row.site_id = t.site_id;
        row.instance_id = t.instance_id;
        row.true_set = true_sets[i];
        row.switch_event = plan.event;
        row.lengths = defended_lengths(t, cfg.global, plan.rate_switch);
        row.adaptive = fast_overheads(t, cfg.global, plan.rate_switch);
        row.global = fast_overheads(t, cfg.global);
        row.queries = std::move(plan.queries);
    });
    return report;
}

inline void write_simulation_csv(std::ostream &os, const SimulationReport &r) {
    os << "site,instance,true_set,routing,switch_set,switch_time,n_out,n_in,bandwidth,time,global_bandwidth,"
          "global_time,saving\n";
    for (const auto &row : r.rows) {
        os << row.site_id << ',' << row.instance_id << ',' << (row.true_set ? std::to_string(*row.true_set) : "")
           << ',' << to_string(row.routing()) << ','
           << (row.switch_event ? std::to_string(row.switch_event->set_id) : "") << ','
           << (row.switch_event ? format_double(row.switch_event->time) : "") << ',' << row.lengths.n_out << ','
           << row.lengths.n_in << ',' << format_double(row.adaptive.bandwidth) << ','
           << format_double(row.adaptive.time) << ',' << format_double(row.global.bandwidth) << ','
           << format_double(row.global.time) << ',' << format_double(row.saving()) << '\n';
    }
}

inline nlohmann::json to_json(const SimulationSummary &s) {
    return {{"traces", s.traces},
            {"bandwidth", json_number(s.bandwidth)},
            {"time", json_number(s.time)},
            {"total", json_number(s.total())},
            {"global_bandwidth", json_number(s.global_bandwidth)},
            {"global_time", json_number(s.global_time)},
            {"global_total", json_number(s.global_total())},
            {"switched", json_number(s.switched)},
            {"correct", json_number(s.correct)},
            {"wrong", json_number(s.wrong)}};
}

struct Histogram {
    std::vector<double> edges;          /// counts[i] covers [edges[i], edges[i+1])
    std::vector<std::size_t> counts;
};

/// Fixed-width histogram starting at floor(min / width) * width. The
/// last bin is closed on the right.
inline Histogram histogram(const std::vector<double> &values, double width) {
    if (!(width > 0.0)) {
        throw std::invalid_argument{"histogram: bin width must be positive"};
    }
    Histogram h;
    if (values.empty()) return h;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = std::floor(*lo_it / width) * width;
    const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor((*hi_it - lo) / width)) + 1);
    for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + width * static_cast<double>(i));
    h.counts.assign(bins, 0);
    for (double v : values) {
        auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
        h.counts[std::min(b, bins - 1)]++;
    }
    return h;
}

inline void write_histogram_csv(std::ostream &os, const Histogram &h) {
    os << "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        os << format_double(h.edges[i]) << ',' << format_double(h.edges[i + 1]) << ',' << h.counts[i] << '\n';
    }
}

struct BudgetRow {
    double time_ceiling;
    std::optional<double> adaptive_bandwidth;   /// nullopt when no configuration fits
    std::optional<double> global_bandwidth;
};

/// For each time-overhead ceiling, the smallest mean bandwidth overhead
/// reached by any evaluated global configuration, adaptive and pure.
inline std::vector<BudgetRow> time_budget_table(const std::vector<SimulationSummary> &runs,
                                                const std::vector<double> &ceilings) {
    std::vector<BudgetRow> out;
    for (double c : ceilings) {
        BudgetRow row{c, std::nullopt, std::nullopt};
        for (const auto &r : runs) {
            if (r.time <= c + 1e-12) {
                row.adaptive_bandwidth = std::min(row.adaptive_bandwidth.value_or(r.bandwidth), r.bandwidth);
            }
            if (r.global_time <= c + 1e-12) {
                row.global_bandwidth = std::min(row.global_bandwidth.value_or(r.global_bandwidth), r.global_bandwidth);
            }
        }
        out.push_back(row);
    }
    return out;
}

}  // namespace wfdef
