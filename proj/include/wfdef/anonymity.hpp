// anonymity.hpp
//
// Pattern-level anonymity sets. Patterns (intra-site clusters) are grouped
// greedily so that an attacker who buckets defended traces by their
// per-direction cell counts and guesses the majority site per bucket gains
// as little as possible, averaged over a grid of Tamaraw parameters.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cast.hpp"
#include "io.hpp"
#include "tamaraw.hpp"
#include "trace.hpp"

namespace wfdef {

/// Observable bucket key of a defended trace: (n_out, n_in) packed.
inline std::uint64_t bucket_key(const DefendedLengths &l) { return (l.n_out << 32) | (l.n_in & 0xffffffffULL); }

struct LabeledLength {
    DefendedLengths lengths;
    int site_id;
};

/// Sum over buckets of the majority-site count divided by the item count:
/// the success rate of an attacker who guesses the most frequent site of
/// each bucket.
inline double attacker_accuracy(const std::vector<LabeledLength> &items) {
    if (items.empty()) return 0.0;
    std::map<std::pair<std::uint64_t, int>, std::size_t> counts;
    for (const auto &it : items) counts[{bucket_key(it.lengths), it.site_id}]++;
    std::map<std::uint64_t, std::size_t> majority;
    for (const auto &[key, c] : counts) {
        auto &m = majority[key.first];
        m = std::max(m, c);
    }
    std::size_t hits = 0;
    for (const auto &[key, m] : majority) hits += m;
    return static_cast<double>(hits) / static_cast<double>(items.size());
}

inline double attacker_accuracy(const std::vector<const Trace *> &traces, const TamarawParams &params) {
    std::vector<LabeledLength> items;
    items.reserve(traces.size());
    for (const Trace *t : traces) items.push_back({defended_lengths(*t, params), t->site_id});
    return attacker_accuracy(items);
}

/// Defended lengths of every trace under every grid parameter, computed
/// once before clustering.
class LengthCache {
public:
    LengthCache(std::vector<const Trace *> traces, std::vector<TamarawParams> grid)
        : traces_{std::move(traces)}, grid_{std::move(grid)} {
        if (grid_.empty()) {
            throw std::invalid_argument{"LengthCache: empty parameter grid"};
        }
        lengths_.resize(traces_.size() * grid_.size());
        for (std::size_t t = 0; t < traces_.size(); ++t) {
            for (std::size_t g = 0; g < grid_.size(); ++g) {
                lengths_[t * grid_.size() + g] = defended_lengths(*traces_[t], grid_[g]);
            }
        }
    }

    const DefendedLengths &at(std::size_t trace, std::size_t param) const { return lengths_[trace * grid_.size() + param]; }
    const Trace &trace(std::size_t i) const { return *traces_[i]; }
    const std::vector<const Trace *> &traces() const { return traces_; }
    const std::vector<TamarawParams> &grid() const { return grid_; }
    std::size_t grid_size() const { return grid_.size(); }

private:
    std::vector<const Trace *> traces_;
    std::vector<TamarawParams> grid_;
    std::vector<DefendedLengths> lengths_;
};

struct Pattern {
    std::size_t pattern_id = 0;    /// global id, the tie-break order everywhere
    int site_id = -1;
    std::size_t local_id = 0;      /// index of the cluster within its site
    std::vector<std::size_t> traces;   /// indices into the LengthCache trace list
};

struct AnonymitySet {
    std::size_t set_id = 0;
    std::vector<std::size_t> patterns;       /// indices into the pattern list
    std::optional<TamarawParams> local_params;
    std::optional<double> safe_time;
};

/// Per-set bucket statistics under every grid parameter, so the Ā of the
/// set extended by one pattern costs O(|pattern|) per parameter.
class SetAccumulator {
public:
    explicit SetAccumulator(std::size_t grid_size) : buckets_(grid_size), majority_sum_(grid_size, 0) {}

    std::size_t trace_count() const { return traces_; }

    void add(const Pattern &p, const LengthCache &cache) {
        for (std::size_t g = 0; g < buckets_.size(); ++g) {
            for (auto t : p.traces) {
                auto &b = buckets_[g][bucket_key(cache.at(t, g))];
                const std::size_t c = ++b.by_site[p.site_id];
                if (c > b.max) {
                    majority_sum_[g] += c - b.max;
                    b.max = c;
                }
            }
        }
        traces_ += p.traces.size();
    }

    /// Ā of this set joined with p under grid parameter g
    double joined_accuracy(const Pattern &p, const LengthCache &cache, std::size_t g) const {
        const std::size_t n = traces_ + p.traces.size();
        if (n == 0) return 0.0;
        std::map<std::uint64_t, std::size_t> local;
        for (auto t : p.traces) local[bucket_key(cache.at(t, g))]++;
        std::size_t hits = majority_sum_[g];
        for (const auto &[key, c] : local) {
            auto it = buckets_[g].find(key);
            if (it == buckets_[g].end()) {
                hits += c;
                continue;
            }
            const auto &b = it->second;
            auto own = b.by_site.find(p.site_id);
            const std::size_t mine = (own == b.by_site.end() ? 0 : own->second) + c;
            if (mine > b.max) hits += mine - b.max;
        }
        return static_cast<double>(hits) / static_cast<double>(n);
    }

    double accuracy(std::size_t g) const {
        return traces_ == 0 ? 0.0 : static_cast<double>(majority_sum_[g]) / static_cast<double>(traces_);
    }

private:
    struct Bucket {
        std::map<int, std::size_t> by_site;
        std::size_t max = 0;
    };
    std::vector<std::unordered_map<std::uint64_t, Bucket>> buckets_;
    std::vector<std::size_t> majority_sum_;
    std::size_t traces_ = 0;
};

/// d(C, p): mean over the grid of Ā(C ∪ p).
inline double distance(const SetAccumulator &set, const Pattern &candidate, const LengthCache &cache) {
    double s = 0.0;
    for (std::size_t g = 0; g < cache.grid_size(); ++g) s += set.joined_accuracy(candidate, cache, g);
    return s / static_cast<double>(cache.grid_size());
}

inline double distance(const std::vector<std::size_t> &set_patterns, const Pattern &candidate,
                       const std::vector<Pattern> &patterns, const LengthCache &cache) {
    SetAccumulator acc{cache.grid_size()};
    for (auto p : set_patterns) acc.add(patterns[p], cache);
    return distance(acc, candidate, cache);
}

/// Greedy k-anonymous grouping of patterns:
///   1. seed the first set with the lowest-id pattern;
///   2. for i = 1 .. floor(|P|/k): grow set i by argmin_p d(S_i, p) until it
///      has k patterns, then (unless this was the last set) seed the next
///      set with argmax_p sum_S d(S, p);
///   3. give each leftover pattern, in id order, to argmin_S d(S, p).
/// Ties go to the lowest pattern id / set id.
inline std::vector<AnonymitySet> build_sets_greedy(const std::vector<Pattern> &patterns, std::size_t k,
                                                   const LengthCache &cache) {
    if (k < 2) {
        throw std::invalid_argument{"build_sets: k must be at least 2"};
    }
    if (patterns.size() < k) {
        throw std::invalid_argument{"build_sets: fewer patterns than k"};
    }
    std::vector<std::size_t> order(patterns.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return patterns[a].pattern_id < patterns[b].pattern_id; });

    std::vector<std::size_t> unassigned = order;    // kept in id order
    std::vector<AnonymitySet> sets;
    std::vector<SetAccumulator> acc;
    std::vector<double> spread(patterns.size(), 0.0);   // sum over closed sets of d(S, p)

    auto open_set = [&](std::size_t p) {
        AnonymitySet s;
        s.set_id = sets.size();
        s.patterns.push_back(p);
        sets.push_back(std::move(s));
        acc.emplace_back(cache.grid_size());
        acc.back().add(patterns[p], cache);
        unassigned.erase(std::find(unassigned.begin(), unassigned.end(), p));
    };

    open_set(order.front());
    const std::size_t n_sets = patterns.size() / k;
    for (std::size_t i = 0; i < n_sets; ++i) {
        while (sets[i].patterns.size() < k && !unassigned.empty()) {
            std::size_t best = unassigned.front();
            double best_d = std::numeric_limits<double>::infinity();
            for (auto p : unassigned) {
                const double d = distance(acc[i], patterns[p], cache);
                if (d < best_d) {
                    best_d = d;
                    best = p;
                }
            }
            sets[i].patterns.push_back(best);
            acc[i].add(patterns[best], cache);
            unassigned.erase(std::find(unassigned.begin(), unassigned.end(), best));
        }
        if (unassigned.empty() || i + 1 == n_sets) continue;
        std::size_t far = unassigned.front();
        double far_d = -1.0;
        for (auto p : unassigned) {
            spread[p] += distance(acc[i], patterns[p], cache);
            if (spread[p] > far_d) {
                far_d = spread[p];
                far = p;
            }
        }
        open_set(far);
    }
    for (auto p : std::vector<std::size_t>{unassigned}) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < sets.size(); ++s) {
            const double d = distance(acc[s], patterns[p], cache);
            if (d < best_d) {
                best_d = d;
                best = s;
            }
        }
        sets[best].patterns.push_back(p);
        acc[best].add(patterns[p], cache);
    }
    return sets;
}

inline constexpr std::size_t exact_partition_limit = 6;

/// Exhaustive search over partitions into floor(|P|/k) sets of at least k
/// patterns, minimizing the mean over sets of the grid-averaged Ā. Patterns
/// are taken in id order; the first minimal partition in restricted-growth
/// order wins. Only practical for a handful of patterns.
inline std::vector<AnonymitySet> build_sets_exact(const std::vector<Pattern> &patterns, std::size_t k,
                                                  const LengthCache &cache) {
    if (k < 2) {
        throw std::invalid_argument{"build_sets: k must be at least 2"};
    }
    if (patterns.size() < k) {
        throw std::invalid_argument{"build_sets: fewer patterns than k"};
    }
    if (patterns.size() > 12) {
        throw std::invalid_argument{"build_sets_exact: too many patterns"};
    }
    std::vector<std::size_t> order(patterns.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return patterns[a].pattern_id < patterns[b].pattern_id; });
    const std::size_t n = order.size();
    const std::size_t n_sets = n / k;

    auto score = [&](const std::vector<std::vector<std::size_t>> &blocks) {
        double total = 0.0;
        for (const auto &b : blocks) {
            SetAccumulator acc{cache.grid_size()};
            for (auto p : b) acc.add(patterns[p], cache);
            double s = 0.0;
            for (std::size_t g = 0; g < cache.grid_size(); ++g) s += acc.accuracy(g);
            total += s / static_cast<double>(cache.grid_size());
        }
        return total / static_cast<double>(blocks.size());
    };

    std::vector<std::vector<std::size_t>> blocks, best;
    double best_score = std::numeric_limits<double>::infinity();
    auto rec = [&](auto &&self, std::size_t i) -> void {
        if (blocks.size() > n_sets) return;
        if (i == n) {
            if (blocks.size() != n_sets) return;
            for (const auto &b : blocks) {
                if (b.size() < k) return;
            }
            const double v = score(blocks);
            if (v < best_score) {
                best_score = v;
                best = blocks;
            }
            return;
        }
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            blocks[b].push_back(order[i]);
            self(self, i + 1);
            blocks[b].pop_back();
        }
        blocks.push_back({order[i]});
        self(self, i + 1);
        blocks.pop_back();
    };
    rec(rec, 0);

    std::vector<AnonymitySet> sets;
    for (auto &b : best) {
        AnonymitySet s;
        s.set_id = sets.size();
        s.patterns = std::move(b);
        sets.push_back(std::move(s));
    }
    return sets;
}

/// Anonymity sets: exact for at most exact_partition_limit patterns,
/// greedy above.
inline std::vector<AnonymitySet> build_sets(const std::vector<Pattern> &patterns, std::size_t k,
                                            const LengthCache &cache) {
    if (patterns.size() <= exact_partition_limit && patterns.size() >= k && k >= 2) {
        return build_sets_exact(patterns, k, cache);
    }
    return build_sets_greedy(patterns, k, cache);
}

/// Trace indices (into the LengthCache) of every pattern in the set.
inline std::vector<std::size_t> set_traces(const AnonymitySet &set, const std::vector<Pattern> &patterns) {
    std::vector<std::size_t> out;
    for (auto p : set.patterns) out.insert(out.end(), patterns[p].traces.begin(), patterns[p].traces.end());
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Local parameters

/// Mean (bandwidth, time) overhead of each trace under each grid parameter.
class OverheadTable {
public:
    OverheadTable(const std::vector<const Trace *> &traces, std::vector<TamarawParams> grid) : grid_{std::move(grid)} {
        cells_.resize(traces.size() * grid_.size());
        for (std::size_t t = 0; t < traces.size(); ++t) {
            for (std::size_t g = 0; g < grid_.size(); ++g) {
                auto p = fast_overheads(*traces[t], grid_[g]);
                cells_[t * grid_.size() + g] = {p.bandwidth, p.time};
            }
        }
    }

    std::pair<double, double> mean(const std::vector<std::size_t> &traces, std::size_t g) const {
        double bw = 0.0, tm = 0.0;
        for (auto t : traces) {
            bw += cells_[t * grid_.size() + g].first;
            tm += cells_[t * grid_.size() + g].second;
        }
        const double n = static_cast<double>(std::max<std::size_t>(traces.size(), 1));
        return {bw / n, tm / n};
    }

    const std::vector<TamarawParams> &grid() const { return grid_; }

private:
    std::vector<TamarawParams> grid_;
    std::vector<std::pair<double, double>> cells_;
};

/// Grid parameter whose mean bandwidth and mean time overhead over the
/// set's traces are both strictly below those of the global parameter,
/// minimizing their sum (ties: lowest grid index). nullopt when none
/// qualifies.
inline std::optional<std::size_t> select_local_params(const std::vector<std::size_t> &set_traces,
                                                      std::size_t global_index, const OverheadTable &table) {
    if (set_traces.empty()) return std::nullopt;
    const auto [gbw, gtm] = table.mean(set_traces, global_index);
    std::optional<std::size_t> best;
    double best_total = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < table.grid().size(); ++g) {
        const auto [bw, tm] = table.mean(set_traces, g);
        if (bw < gbw && tm < gtm && bw + tm < best_total) {
            best_total = bw + tm;
            best = g;
        }
    }
    return best;
}

/// Direct form over traces and explicit parameters.
inline std::optional<TamarawParams> select_local_params(const std::vector<const Trace *> &traces,
                                                        const TamarawParams &global,
                                                        const std::vector<TamarawParams> &grid) {
    if (traces.empty()) return std::nullopt;
    const auto g = mean_overheads(traces, global);
    std::optional<TamarawParams> best;
    double best_total = std::numeric_limits<double>::infinity();
    for (const auto &p : grid) {
        const auto m = mean_overheads(traces, p);
        if (m.bandwidth < g.bandwidth && m.time < g.time && m.total() < best_total) {
            best_total = m.total();
            best = p;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct PurityReport {
    std::vector<double> per_set;      /// percent
    std::vector<std::size_t> distinct_sites;   /// l-diversity of each set
    double average = 0.0;             /// percent
    double reference = 0.0;           /// 100 / k
};

/// Trace-level purity: share of the most frequent site in each set.
inline PurityReport purity(const std::vector<AnonymitySet> &sets, const std::vector<Pattern> &patterns, std::size_t k) {
    if (sets.empty()) {
        throw std::invalid_argument{"purity: no sets"};
    }
    PurityReport r;
    for (const auto &s : sets) {
        std::map<int, std::size_t> by_site;
        std::size_t total = 0;
        for (auto p : s.patterns) {
            by_site[patterns[p].site_id] += patterns[p].traces.size();
            total += patterns[p].traces.size();
        }
        std::size_t top = 0;
        for (const auto &[site, c] : by_site) top = std::max(top, c);
        r.per_set.push_back(total == 0 ? 0.0 : 100.0 * static_cast<double>(top) / static_cast<double>(total));
        r.distinct_sites.push_back(by_site.size());
    }
    double sum = 0.0;
    for (double v : r.per_set) sum += v;
    r.average = sum / static_cast<double>(r.per_set.size());
    r.reference = 100.0 / static_cast<double>(k);
    return r;
}

inline void write_purity_csv(std::ostream &os, const PurityReport &r) {
    os << "set_id,purity,distinct_sites\n";
    for (std::size_t i = 0; i < r.per_set.size(); ++i) {
        os << i << ',' << format_double(r.per_set[i]) << ',' << r.distinct_sites[i] << '\n';
    }
    os << "average," << format_double(r.average) << ",\n";
    os << "reference_1_over_k," << format_double(r.reference) << ",\n";
}

/// Element-wise maximum of TAMs, the website- or pattern-level
/// representative used by the Euclidean grouping diagnostic.
inline Tam super_matrix(const std::vector<Tam> &tams) {
    if (tams.empty()) {
        throw std::invalid_argument{"super_matrix: no TAMs"};
    }
    Tam out = tams.front();
    for (const auto &t : tams) {
        for (std::size_t i = 0; i < out.slots(); ++i) {
            out.out_counts[i] = std::max(out.out_counts[i], t.out_counts[i]);
            out.in_counts[i] = std::max(out.in_counts[i], t.in_counts[i]);
        }
    }
    return out;
}

/// Euclidean greedy grouping of super-matrices into groups of at least k
/// (the diagnostic comparison mode; not a defense path). Each group grows by
/// the item closest to the group's running super-matrix.
inline std::vector<std::vector<std::size_t>> euclidean_groups(const std::vector<Tam> &items, std::size_t k) {
    if (k < 1 || items.size() < k) {
        throw std::invalid_argument{"euclidean_groups: need at least k items"};
    }
    std::vector<std::size_t> left(items.size());
    for (std::size_t i = 0; i < left.size(); ++i) left[i] = i;
    std::vector<std::vector<std::size_t>> groups;
    const std::size_t n_groups = items.size() / k;
    while (groups.size() < n_groups) {
        std::vector<std::size_t> g{left.front()};
        left.erase(left.begin());
        Tam sm = items[g.front()];
        while (g.size() < k) {
            auto feat = sm.flatten();
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < left.size(); ++j) {
                const double d = euclidean(feat, items[left[j]].flatten());
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            g.push_back(left[best]);
            sm = super_matrix({sm, items[left[best]]});
            left.erase(left.begin() + static_cast<std::ptrdiff_t>(best));
        }
        groups.push_back(std::move(g));
    }
    for (auto i : left) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            std::vector<Tam> members;
            for (auto m : groups[gi]) members.push_back(items[m]);
            const double d = euclidean(super_matrix(members).flatten(), items[i].flatten());
            if (d < best_d) {
                best_d = d;
                best = gi;
            }
        }
        groups[best].push_back(i);
    }
    return groups;
}

}  // namespace wfdef
