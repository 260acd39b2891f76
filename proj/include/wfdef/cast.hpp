// cast.hpp
//
// Intra-site pattern mining with a modified CAST clusterer:
//   similarity   A(x,y) = exp(-d(x,y)^2 / (sigma_x sigma_y)), sigma_x the
//                distance from x to its K-th nearest neighbour;
//   threshold    mean similarity over all unordered pairs;
//   growth       classic CAST add / evict / close loop;
//   cleaning     move a trace to any cluster it has strictly higher
//                affinity to, until nothing moves;
//   merging      while there are more than max_clusters clusters, merge the
//                smallest one into the cluster that minimizes the largest
//                expansion ratio cut(C)/vol(C) of the resulting partition.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "trace.hpp"

namespace wfdef {

struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> values;        /// n*n, row major
    std::vector<double> distances;     /// n*n Euclidean distances
    std::vector<double> local_scales;  /// sigma per item

    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
    double distance(std::size_t i, std::size_t j) const { return distances[i * n + j]; }
};

inline double euclidean(const std::vector<double> &a, const std::vector<double> &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Locally scaled similarity over arbitrary feature vectors of equal length.
inline SimilarityMatrix similarity_matrix(const std::vector<std::vector<double>> &features, std::size_t K) {
    const std::size_t n = features.size();
    if (n < 2) {
        throw std::invalid_argument{"similarity_matrix: need at least 2 items"};
    }
    if (K < 1 || K >= n) {
        throw std::invalid_argument{"similarity_matrix: K must satisfy 1 <= K < n"};
    }
    SimilarityMatrix m;
    m.n = n;
    m.distances.assign(n * n, 0.0);
    double min_positive = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = euclidean(features[i], features[j]);
            m.distances[i * n + j] = m.distances[j * n + i] = d;
            if (d > 0.0) min_positive = std::min(min_positive, d);
        }
    }
    const double fallback = std::isfinite(min_positive) ? min_positive : 1.0;
    m.local_scales.resize(n);
    std::vector<double> row;
    for (std::size_t i = 0; i < n; ++i) {
        row.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) row.push_back(m.distances[i * n + j]);
        }
        std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(K - 1), row.end());
        const double sigma = row[K - 1];
        m.local_scales[i] = sigma > 0.0 ? sigma : fallback;
    }
    m.values.assign(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = m.distances[i * n + j];
            const double a = std::exp(-(d * d) / (m.local_scales[i] * m.local_scales[j]));
            m.values[i * n + j] = m.values[j * n + i] = a;
        }
    }
    return m;
}

inline SimilarityMatrix similarity_matrix(const std::vector<Tam> &tams, std::size_t K) {
    std::vector<std::vector<double>> features;
    features.reserve(tams.size());
    for (const auto &t : tams) features.push_back(t.flatten());
    return similarity_matrix(features, K);
}

/// Mean similarity over unordered pairs x < y.
inline double dynamic_threshold(const SimilarityMatrix &sim) {
    double s = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < sim.n; ++i) {
        for (std::size_t j = i + 1; j < sim.n; ++j) {
            s += sim(i, j);
            ++pairs;
        }
    }
    return pairs == 0 ? 1.0 : s / static_cast<double>(pairs);
}

using Partition = std::vector<std::vector<std::size_t>>;

enum class CutMeasure { similarity, distance };

struct CastConfig {
    std::size_t K = 7;                 /// local-scaling neighbour rank
    std::size_t max_clusters = 6;
    int max_cleaning_sweeps = 100;
    CutMeasure cut_measure = CutMeasure::similarity;
    TamShape tam_shape;
};

struct PatternSet {
    int site_id = -1;
    Partition clusters;                /// indices into the site's trace list
    double threshold = 0.0;
    int cleaning_sweeps = 0;
    bool cleaning_converged = true;

    /// cluster index of every trace
    std::vector<std::size_t> labels(std::size_t n) const {
        std::vector<std::size_t> out(n, 0);
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            for (auto i : clusters[c]) out[i] = c;
        }
        return out;
    }
};

/// Mean similarity of item x to the members of a cluster. When x is itself a
/// member it is excluded from the mean unless include_self is set.
inline double affinity(const SimilarityMatrix &sim, std::size_t x, const std::vector<std::size_t> &cluster,
                       bool include_self = false) {
    double s = 0.0;
    std::size_t count = 0;
    for (auto y : cluster) {
        if (y == x && !include_self) continue;
        s += sim(x, y);
        ++count;
    }
    return count == 0 ? 0.0 : s / static_cast<double>(count);
}

namespace detail {

inline void canonicalize(Partition &p) {
    p.erase(std::remove_if(p.begin(), p.end(), [](const auto &c) { return c.empty(); }), p.end());
    for (auto &c : p) std::sort(c.begin(), c.end());
    std::sort(p.begin(), p.end(), [](const auto &a, const auto &b) { return a.front() < b.front(); });
}

}  // namespace detail

/// CAST growth. The seed of each new cluster is the lowest unassigned index.
/// Affinities during growth are means over current members including the
/// candidate itself, so a singleton has affinity 1.
inline Partition cast_grow(const SimilarityMatrix &sim, double threshold) {
    const std::size_t n = sim.n;
    std::vector<bool> assigned(n, false);
    std::size_t remaining = n;
    Partition clusters;
    while (remaining > 0) {
        std::size_t seed = 0;
        while (assigned[seed]) ++seed;
        std::vector<std::size_t> members{seed};
        assigned[seed] = true;
        --remaining;
        std::vector<double> sum(n);
        for (std::size_t x = 0; x < n; ++x) sum[x] = sim(x, seed);

        // add/evict cycles are possible in CAST; bound the work per cluster
        std::size_t budget = 4 * n + 16;
        while (budget-- > 0) {
            const double size = static_cast<double>(members.size());
            std::size_t best = n;
            double best_aff = -1.0;
            for (std::size_t x = 0; x < n; ++x) {
                if (assigned[x]) continue;
                const double a = sum[x] / size;
                if (a > best_aff) {
                    best_aff = a;
                    best = x;
                }
            }
            if (best < n && best_aff >= threshold) {
                members.push_back(best);
                assigned[best] = true;
                --remaining;
                for (std::size_t x = 0; x < n; ++x) sum[x] += sim(x, best);
                continue;
            }
            // evict the lowest-affinity member, scanning in insertion order
            std::size_t worst = members.size();
            double worst_aff = threshold;
            for (std::size_t k = 0; k < members.size(); ++k) {
                const double a = sum[members[k]] / size;
                if (a < worst_aff) {
                    worst_aff = a;
                    worst = k;
                }
            }
            if (worst < members.size() && members.size() > 1) {
                const std::size_t gone = members[worst];
                members.erase(members.begin() + static_cast<std::ptrdiff_t>(worst));
                assigned[gone] = false;
                ++remaining;
                for (std::size_t x = 0; x < n; ++x) sum[x] -= sim(x, gone);
                continue;
            }
            break;
        }
        clusters.push_back(std::move(members));
    }
    detail::canonicalize(clusters);
    return clusters;
}

struct CleaningResult {
    Partition clusters;
    int sweeps = 0;
    bool converged = false;
};

/// Reassigns traces to clusters with strictly higher affinity (mean over
/// the other members) until a sweep makes no move. A trace alone in its
/// cluster has affinity 0 to it, so singletons dissolve into their best
/// neighbour.
inline CleaningResult cast_clean(const SimilarityMatrix &sim, Partition clusters, int max_sweeps = 100) {
    CleaningResult r;
    const std::size_t n = sim.n;
    std::vector<std::size_t> owner(n);
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        for (auto i : clusters[c]) owner[i] = c;
    }
    Partition last_stable = clusters;
    while (r.sweeps < max_sweeps) {
        ++r.sweeps;
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t own = owner[i];
            const double own_aff = affinity(sim, i, clusters[own]);
            std::size_t best = own;
            double best_aff = own_aff;
            for (std::size_t c = 0; c < clusters.size(); ++c) {
                if (c == own || clusters[c].empty()) continue;
                const double a = affinity(sim, i, clusters[c]);
                if (a > best_aff) {
                    best_aff = a;
                    best = c;
                }
            }
            if (best != own) {
                auto &from = clusters[own];
                from.erase(std::find(from.begin(), from.end(), i));
                clusters[best].push_back(i);
                owner[i] = best;
                moved = true;
            }
        }
        if (!moved) {
            r.converged = true;
            break;
        }
        last_stable = clusters;
    }
    r.clusters = r.converged ? clusters : last_stable;
    detail::canonicalize(r.clusters);
    return r;
}

/// cut(C) / vol(C) over similarities (or distances). vol includes the
/// diagonal, so it is positive for similarities.
inline double expansion_ratio(const SimilarityMatrix &sim, const std::vector<std::size_t> &cluster,
                              CutMeasure measure = CutMeasure::similarity) {
    std::vector<bool> inside(sim.n, false);
    for (auto i : cluster) inside[i] = true;
    double cut = 0.0, vol = 0.0;
    for (auto i : cluster) {
        for (std::size_t j = 0; j < sim.n; ++j) {
            const double w = measure == CutMeasure::similarity ? sim(i, j) : sim.distance(i, j);
            (inside[j] ? vol : cut) += w;
        }
    }
    if (vol == 0.0) return cut == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return cut / vol;
}

/// Merges the smallest cluster (ties: lowest first member) into the cluster
/// giving the smallest maximum expansion ratio until at most max_clusters
/// remain.
inline Partition cast_merge(const SimilarityMatrix &sim, Partition clusters, std::size_t max_clusters,
                            CutMeasure measure = CutMeasure::similarity) {
    detail::canonicalize(clusters);
    max_clusters = std::max<std::size_t>(max_clusters, 1);
    while (clusters.size() > max_clusters) {
        std::size_t smallest = 0;
        for (std::size_t c = 1; c < clusters.size(); ++c) {
            if (clusters[c].size() < clusters[smallest].size()) smallest = c;
        }
        std::vector<double> phi(clusters.size());
        for (std::size_t c = 0; c < clusters.size(); ++c) phi[c] = expansion_ratio(sim, clusters[c], measure);

        std::size_t best = clusters.size();
        double best_worst = std::numeric_limits<double>::infinity();
        for (std::size_t target = 0; target < clusters.size(); ++target) {
            if (target == smallest) continue;
            auto merged = clusters[target];
            merged.insert(merged.end(), clusters[smallest].begin(), clusters[smallest].end());
            double worst = expansion_ratio(sim, merged, measure);
            for (std::size_t c = 0; c < clusters.size(); ++c) {
                if (c != target && c != smallest) worst = std::max(worst, phi[c]);
            }
            if (best == clusters.size() || worst < best_worst) {
                best_worst = worst;
                best = target;
            }
        }
        clusters[best].insert(clusters[best].end(), clusters[smallest].begin(), clusters[smallest].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(smallest));
        detail::canonicalize(clusters);
    }
    return clusters;
}

/// Full modified-CAST pipeline over precomputed feature vectors.
inline PatternSet cluster_features(const std::vector<std::vector<double>> &features, const CastConfig &cfg,
                                   int site_id = -1) {
    if (features.size() < 2) {
        throw std::invalid_argument{"mine_patterns: need at least 2 traces"};
    }
    const std::size_t K = std::min(cfg.K, features.size() - 1);
    const auto sim = similarity_matrix(features, K);
    PatternSet out;
    out.site_id = site_id;
    out.threshold = dynamic_threshold(sim);
    auto grown = cast_grow(sim, out.threshold);
    auto cleaned = cast_clean(sim, std::move(grown), cfg.max_cleaning_sweeps);
    out.cleaning_sweeps = cleaned.sweeps;
    out.cleaning_converged = cleaned.converged;
    out.clusters = cast_merge(sim, std::move(cleaned.clusters), cfg.max_clusters, cfg.cut_measure);
    return out;
}

inline PatternSet mine_patterns(const std::vector<const Trace *> &site_traces, const CastConfig &cfg = {}) {
    if (site_traces.size() < 2) {
        throw std::invalid_argument{"mine_patterns: need at least 2 traces"};
    }
    std::vector<std::vector<double>> features;
    features.reserve(site_traces.size());
    for (const Trace *t : site_traces) features.push_back(compute_tam(*t, cfg.tam_shape).flatten());
    return cluster_features(features, cfg, site_traces.front()->site_id);
}

}  // namespace wfdef
