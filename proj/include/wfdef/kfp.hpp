// kfp.hpp
//
// Hand-crafted trace features for the kFP classifier. The vector has
// kfp_feature_count entries, in this order:
//
//   0  incoming packet count          1  outgoing packet count
//   2  total packet count             3  incoming / max(outgoing, 1)
//   4  duration (last - first time)
//   5..8   outgoing inter-arrival mean, std, min, max
//   9..12  incoming inter-arrival mean, std, min, max
//   13 outgoing in the first 30 packets   14 incoming in the first 30
//   15 outgoing in the last 30 packets    16 incoming in the last 30
//   17..26 cumulative direction sum (+1 out, -1 in) over the first
//          ceil(q N / 10) packets, q = 1..10
//
// Inter-arrival statistics of a direction with fewer than two packets are
// 0. An empty trace yields the zero vector.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "forest.hpp"
#include "trace.hpp"

namespace wfdef {

inline constexpr std::size_t kfp_feature_count = 27;

namespace detail {

inline void gap_stats(const std::vector<double> &times, FeatureVector &out) {
    if (times.size() < 2) {
        out.insert(out.end(), {0.0, 0.0, 0.0, 0.0});
        return;
    }
    double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t i = 1; i < times.size(); ++i) {
        const double g = times[i] - times[i - 1];
        sum += g;
        lo = std::min(lo, g);
        hi = std::max(hi, g);
    }
    const double n = static_cast<double>(times.size() - 1);
    const double mean = sum / n;
    double var = 0.0;
    for (std::size_t i = 1; i < times.size(); ++i) {
        const double g = times[i] - times[i - 1] - mean;
        var += g * g;
    }
    out.insert(out.end(), {mean, std::sqrt(var / n), lo, hi});
}

}  // namespace detail

inline FeatureVector extract_kfp_features(const Trace &trace) {
    FeatureVector f;
    f.reserve(kfp_feature_count);
    if (trace.empty()) {
        f.assign(kfp_feature_count, 0.0);
        return f;
    }
    std::vector<double> out_times, in_times;
    for (const auto &p : trace.packets) (p.direction == Direction::out ? out_times : in_times).push_back(p.time);
    const double n_in = static_cast<double>(in_times.size());
    const double n_out = static_cast<double>(out_times.size());
    const std::size_t n = trace.size();
    f.push_back(n_in);
    f.push_back(n_out);
    f.push_back(static_cast<double>(n));
    f.push_back(n_in / std::max(n_out, 1.0));
    f.push_back(trace.packets.back().time - trace.packets.front().time);
    detail::gap_stats(out_times, f);
    detail::gap_stats(in_times, f);

    const std::size_t head = std::min<std::size_t>(30, n);
    double head_out = 0, head_in = 0, tail_out = 0, tail_in = 0;
    for (std::size_t i = 0; i < head; ++i) (trace.packets[i].direction == Direction::out ? head_out : head_in) += 1;
    for (std::size_t i = n - head; i < n; ++i) (trace.packets[i].direction == Direction::out ? tail_out : tail_in) += 1;
    f.insert(f.end(), {head_out, head_in, tail_out, tail_in});

    std::vector<double> cumulative(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) cumulative[i + 1] = cumulative[i] + sign(trace.packets[i].direction);
    for (std::size_t q = 1; q <= 10; ++q) {
        const std::size_t upto = (q * n + 9) / 10;
        f.push_back(cumulative[std::min(upto, n)]);
    }
    return f;
}

}  // namespace wfdef
