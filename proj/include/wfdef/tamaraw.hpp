// tamaraw.hpp
//
// Tamaraw constant-rate padding: each direction sends one fixed-size cell
// every rho seconds, real packets ride the cells FIFO, and the per-direction
// cell count is padded up to a multiple of L.
//
// The schedule supports a single rate switch (time tau, new rates), which is
// what the adaptive defense needs. Cells up to tau follow the first rates at
// rho, 2*rho, ...; after the switch they follow tau + rho', tau + 2*rho', ...

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "io.hpp"
#include "trace.hpp"

namespace wfdef {

struct TamarawParams {
    double rho_out = 0.04;     /// seconds between outgoing cells
    double rho_in = 0.012;     /// seconds between incoming cells
    std::uint32_t L = 100;     /// per-direction cell counts are padded to multiples of L

    double rho(Direction d) const { return d == Direction::out ? rho_out : rho_in; }

    bool valid() const { return rho_out > 0.0 && rho_in > 0.0 && L >= 1 && std::isfinite(rho_out) && std::isfinite(rho_in); }

    void validate() const {
        if (!valid()) {
            throw std::invalid_argument{"Tamaraw parameters need rho_out > 0, rho_in > 0, L >= 1"};
        }
    }

    bool operator==(const TamarawParams &) const = default;
};

inline nlohmann::json to_json(const TamarawParams &p) {
    return {{"rho_in", p.rho_in}, {"rho_out", p.rho_out}, {"L", p.L}};
}

inline TamarawParams params_from_json(const nlohmann::json &j) {
    detail::reject_unknown_fields(j, {"rho_in", "rho_out", "L"}, "tamaraw params");
    TamarawParams p{j.at("rho_out").get<double>(), j.at("rho_in").get<double>(), j.at("L").get<std::uint32_t>()};
    p.validate();
    return p;
}

struct Cell {
    double time;
    Direction direction;
    bool dummy;

    bool operator==(const Cell &) const = default;
};

struct SwitchEvent {
    double time;
    std::size_t set_id;

    bool operator==(const SwitchEvent &) const = default;
};

struct DefendedTrace {
    std::vector<Cell> cells;
    double last_real_time = 0.0;
    std::optional<SwitchEvent> switch_event;

    std::size_t count(Direction d) const {
        return static_cast<std::size_t>(
            std::count_if(cells.begin(), cells.end(), [d](const Cell &c) { return c.direction == d; }));
    }

    std::size_t real_count() const {
        return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const Cell &c) { return !c.dummy; }));
    }

    /// what a network observer sees: every cell, real or dummy
    Trace observable(int site_id = -1, int instance_id = 0) const {
        Trace t;
        t.site_id = site_id;
        t.instance_id = instance_id;
        t.packets.reserve(cells.size());
        for (const auto &c : cells) t.packets.push_back({c.time, c.direction});
        return t;
    }

    bool operator==(const DefendedTrace &) const = default;
};

/// A rate change at time tau. Cells of the first phase are those with
/// index j <= floor(tau / rho_first); later cells are spaced by rho_second
/// starting at tau + rho_second.
struct RateSwitch {
    double tau;
    TamarawParams second;
};

/// Per-direction cell clock: time of the j-th cell (1-based).
class CellClock {
public:
    CellClock(double rho_first, std::optional<double> tau = {}, double rho_second = 0.0)
        : rho_first_{rho_first}, tau_{tau}, rho_second_{rho_second} {
        if (tau_) {
            first_cells_ = static_cast<std::uint64_t>(std::floor(*tau_ / rho_first_ + time_tolerance));
        }
    }

    double time(std::uint64_t j) const {
        if (!tau_ || j <= first_cells_) {
            return rho_first_ * static_cast<double>(j);
        }
        return *tau_ + rho_second_ * static_cast<double>(j - first_cells_);
    }

    /// smallest j >= 1 with time(j) >= t - tolerance
    std::uint64_t first_cell_at_or_after(double t) const {
        std::uint64_t j = guess(t);
        while (j > 1 && time(j - 1) + time_tolerance >= t) --j;
        while (time(j) + time_tolerance < t) ++j;
        return j;
    }

    std::uint64_t first_phase_cells() const { return tau_ ? first_cells_ : UINT64_MAX; }

private:
    std::uint64_t guess(double t) const {
        auto from_rate = [](double x, double rho) {
            const double g = std::ceil(x / rho);
            return g < 1.0 ? std::uint64_t{1} : static_cast<std::uint64_t>(g);
        };
        if (!tau_ || t <= rho_first_ * static_cast<double>(first_cells_)) {
            return from_rate(t, rho_first_);
        }
        return first_cells_ + from_rate(t - *tau_, rho_second_);
    }

    double rho_first_;
    std::optional<double> tau_;
    double rho_second_;
    std::uint64_t first_cells_ = 0;
};

inline std::uint64_t pad_to_bucket(std::uint64_t last_real_cell, std::uint32_t L) {
    if (last_real_cell == 0) return L;
    return (last_real_cell + L - 1) / L * L;
}

struct DirectionSummary {
    std::uint64_t last_real_cell = 0;   /// 1-based index, 0 when the direction has no packets
    std::uint64_t total_cells = 0;
    double last_real_time = 0.0;
};

/// Closed-form per-direction schedule: s_i = max(first cell at/after t_i,
/// s_{i-1} + 1), total = L * ceil(s_last / L).
inline DirectionSummary summarize_direction(const Trace &trace, Direction dir, const CellClock &clock, std::uint32_t L) {
    DirectionSummary s;
    for (const auto &p : trace.packets) {
        if (p.direction != dir) continue;
        s.last_real_cell = std::max(clock.first_cell_at_or_after(p.time), s.last_real_cell + 1);
    }
    s.total_cells = pad_to_bucket(s.last_real_cell, L);
    s.last_real_time = s.last_real_cell == 0 ? 0.0 : clock.time(s.last_real_cell);
    return s;
}

namespace detail {

inline CellClock make_clock(const TamarawParams &params, Direction d, const std::optional<RateSwitch> &sw) {
    if (!sw) return CellClock{params.rho(d)};
    return CellClock{params.rho(d), sw->tau, sw->second.rho(d)};
}

/// Emits one direction cell by cell: a cell carries the head of the FIFO
/// queue when that packet has arrived by the cell's time, otherwise it is a
/// dummy. Stops once the queue is empty and the count is a positive
/// multiple of L.
inline void emit_direction(const Trace &trace, Direction dir, const CellClock &clock, std::uint32_t L,
                           std::vector<Cell> &cells, double &last_real_time) {
    std::vector<double> queue;
    for (const auto &p : trace.packets) {
        if (p.direction == dir) queue.push_back(p.time);
    }
    std::size_t head = 0;
    std::uint64_t j = 0;
    while (!(head == queue.size() && j > 0 && j % L == 0)) {
        ++j;
        const double t = clock.time(j);
        if (head < queue.size() && queue[head] <= t + time_tolerance) {
            cells.push_back({t, dir, false});
            last_real_time = std::max(last_real_time, t);
            ++head;
        } else {
            cells.push_back({t, dir, true});
        }
    }
}

inline void order_cells(std::vector<Cell> &cells) {
    // ties: outgoing before incoming
    std::stable_sort(cells.begin(), cells.end(), [](const Cell &a, const Cell &b) {
        if (a.time != b.time) return a.time < b.time;
        return a.direction == Direction::out && b.direction == Direction::in;
    });
}

}  // namespace detail

/// Materializes the defended cell sequence, optionally with one rate switch.
inline DefendedTrace defend(const Trace &trace, const TamarawParams &params, const std::optional<RateSwitch> &sw = {}) {
    if (trace.empty()) {
        throw DataError{"defend: empty trace"};
    }
    params.validate();
    if (sw) sw->second.validate();
    DefendedTrace out;
    for (Direction d : {Direction::out, Direction::in}) {
        detail::emit_direction(trace, d, detail::make_clock(params, d, sw), params.L, out.cells, out.last_real_time);
    }
    detail::order_cells(out.cells);
    return out;
}

struct DefendedLengths {
    std::uint64_t n_out = 0;
    std::uint64_t n_in = 0;

    std::uint64_t total() const { return n_out + n_in; }

    auto operator<=>(const DefendedLengths &) const = default;
};

/// Per-direction cell counts of defend() without materializing cells.
inline DefendedLengths defended_lengths(const Trace &trace, const TamarawParams &params,
                                        const std::optional<RateSwitch> &sw = {}) {
    if (trace.empty()) {
        throw DataError{"defended_lengths: empty trace"};
    }
    return {summarize_direction(trace, Direction::out, detail::make_clock(params, Direction::out, sw), params.L).total_cells,
            summarize_direction(trace, Direction::in, detail::make_clock(params, Direction::in, sw), params.L).total_cells};
}

// ---------------------------------------------------------------------------
// Overheads

struct OverheadPoint {
    double bandwidth = 0.0;   /// dummy cells per real packet
    double time = 0.0;        /// relative delay of the last real packet
    TamarawParams params;
    bool degenerate_time = false;   /// original last packet at t = 0; time reported as 0

    double total() const { return bandwidth + time; }
};

inline OverheadPoint make_overhead(std::size_t real_packets, std::uint64_t total_cells, double original_last,
                                   double defended_last, const TamarawParams &params) {
    OverheadPoint p;
    p.params = params;
    const double n = static_cast<double>(real_packets);
    p.bandwidth = (static_cast<double>(total_cells) - n) / n;
    if (original_last <= time_tolerance) {
        p.time = 0.0;
        p.degenerate_time = true;
    } else {
        p.time = std::max(0.0, (defended_last - original_last) / original_last);
    }
    return p;
}

inline OverheadPoint overheads(const Trace &trace, const DefendedTrace &defended, const TamarawParams &params = {}) {
    if (trace.empty()) {
        throw DataError{"overheads: empty trace"};
    }
    return make_overhead(trace.size(), defended.cells.size(), trace.last_time(), defended.last_real_time, params);
}

/// Overheads of defend(trace, params, sw) computed in O(N).
inline OverheadPoint fast_overheads(const Trace &trace, const TamarawParams &params,
                                    const std::optional<RateSwitch> &sw = {}) {
    if (trace.empty()) {
        throw DataError{"fast_overheads: empty trace"};
    }
    auto out = summarize_direction(trace, Direction::out, detail::make_clock(params, Direction::out, sw), params.L);
    auto in = summarize_direction(trace, Direction::in, detail::make_clock(params, Direction::in, sw), params.L);
    return make_overhead(trace.size(), out.total_cells + in.total_cells, trace.last_time(),
                         std::max(out.last_real_time, in.last_real_time), params);
}

/// Mean bandwidth and time overhead over a batch of traces.
inline OverheadPoint mean_overheads(const std::vector<const Trace *> &traces, const TamarawParams &params) {
    OverheadPoint mean;
    mean.params = params;
    if (traces.empty()) return mean;
    for (const Trace *t : traces) {
        auto p = fast_overheads(*t, params);
        mean.bandwidth += p.bandwidth;
        mean.time += p.time;
    }
    mean.bandwidth /= static_cast<double>(traces.size());
    mean.time /= static_cast<double>(traces.size());
    return mean;
}

// ---------------------------------------------------------------------------
// Parameter grid and Pareto frontier

/// Log-spaced grid around init: each rate takes `steps` values
/// init * ratio^i with ratio = span^(1/floor(steps/2)) and
/// i = -floor(steps/2) .. steps-1-floor(steps/2), so the smallest value is
/// init/span. rho_in is the outer loop. L is copied from init.
inline std::vector<TamarawParams> build_param_grid(const TamarawParams &init, double span = 7.0, int steps = 14) {
    init.validate();
    if (steps < 1 || !(span > 1.0)) {
        throw std::invalid_argument{"build_param_grid: steps >= 1 and span > 1 required"};
    }
    const int half = steps / 2;
    std::vector<double> factors;
    for (int i = -half; i < steps - half; ++i) {
        factors.push_back(half == 0 ? 1.0 : std::exp(std::log(span) * i / half));
    }
    std::vector<TamarawParams> grid;
    grid.reserve(factors.size() * factors.size());
    for (double fin : factors) {
        for (double fout : factors) {
            grid.push_back({init.rho_out * fout, init.rho_in * fin, init.L});
        }
    }
    return grid;
}

inline bool dominates(const OverheadPoint &a, const OverheadPoint &b) {
    return a.bandwidth <= b.bandwidth && a.time <= b.time && (a.bandwidth < b.bandwidth || a.time < b.time);
}

/// Points not dominated by any other point, ordered by ascending time
/// overhead (then bandwidth, then rho_in, rho_out).
inline std::vector<OverheadPoint> pareto_filter(const std::vector<OverheadPoint> &points) {
    if (points.empty()) {
        throw std::invalid_argument{"pareto_filter: no points"};
    }
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto &p = points[a];
        const auto &q = points[b];
        if (p.time != q.time) return p.time < q.time;
        if (p.bandwidth != q.bandwidth) return p.bandwidth < q.bandwidth;
        if (p.params.rho_in != q.params.rho_in) return p.params.rho_in < q.params.rho_in;
        return p.params.rho_out < q.params.rho_out;
    });
    // sweep in (time, bandwidth) order: a point survives iff its bandwidth is
    // below every earlier point with strictly smaller time, and no earlier
    // point with equal time has smaller bandwidth
    std::vector<OverheadPoint> front;
    double best_bw = std::numeric_limits<double>::infinity();
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        const double t = points[order[i]].time;
        while (j < order.size() && points[order[j]].time == t) ++j;
        const double group_min = points[order[i]].bandwidth;
        for (std::size_t k = i; k < j; ++k) {
            const auto &p = points[order[k]];
            if (p.bandwidth == group_min && p.bandwidth < best_bw) front.push_back(p);
        }
        best_bw = std::min(best_bw, group_min);
        i = j;
    }
    return front;
}

inline void write_overhead_csv(std::ostream &os, const std::vector<OverheadPoint> &points) {
    os << "rho_in,rho_out,L,bandwidth,time\n";
    for (const auto &p : points) {
        os << format_double(p.params.rho_in) << ',' << format_double(p.params.rho_out) << ',' << p.params.L << ','
           << format_double(p.bandwidth) << ',' << format_double(p.time) << '\n';
    }
}

inline nlohmann::json to_json(const OverheadPoint &p) {
    return {{"rho_in", p.params.rho_in}, {"rho_out", p.params.rho_out}, {"L", p.params.L},
            {"bandwidth", p.bandwidth},  {"time", p.time}};
}

inline void write_defended_csv(std::ostream &os, const DefendedTrace &d) {
    os << "time,direction,dummy\n";
    for (const auto &c : d.cells) {
        os << format_double(c.time) << ',' << sign(c.direction) << ',' << (c.dummy ? 1 : 0) << '\n';
    }
}

}  // namespace wfdef
