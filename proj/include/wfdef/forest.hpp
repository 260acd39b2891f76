// forest.hpp
//
// Random forest of Gini classification trees and the leaf-identifier
// fingerprint + k-nearest-neighbour classifier (kFP) built on top of it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "random.hpp"
#include "trace.hpp"

namespace wfdef {

using FeatureVector = std::vector<double>;

struct ForestConfig {
    std::size_t trees = 100;
    std::size_t max_depth = 16;
    std::size_t min_samples_split = 2;
    bool bootstrap = true;
    std::uint64_t seed = 1;
};

class DecisionTree {
public:
    struct Node {
        std::int32_t feature = -1;    /// -1 marks a leaf
        double threshold = 0.0;       /// go left when x[feature] <= threshold
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::int32_t label = 0;       /// majority label (meaningful at leaves)
    };

    void fit(const std::vector<FeatureVector> &x, const std::vector<int> &y, std::vector<std::size_t> samples,
             std::size_t features_per_split, const ForestConfig &cfg, Rng &rng) {
        nodes_.clear();
        build(x, y, samples, 0, features_per_split, cfg, rng);
    }

    /// index of the leaf node reached by x
    std::uint32_t leaf(const FeatureVector &x) const {
        std::int32_t i = 0;
        while (nodes_[static_cast<std::size_t>(i)].feature >= 0) {
            const auto &n = nodes_[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return static_cast<std::uint32_t>(i);
    }

    int predict(const FeatureVector &x) const { return nodes_[leaf(x)].label; }

    const std::vector<Node> &nodes() const { return nodes_; }
    std::vector<Node> &nodes() { return nodes_; }

private:
    static int majority(const std::vector<int> &y, const std::vector<std::size_t> &samples) {
        std::map<int, std::size_t> counts;
        for (auto s : samples) counts[y[s]]++;
        int best = 0;
        std::size_t best_c = 0;
        for (const auto &[label, c] : counts) {
            if (c > best_c) {
                best_c = c;
                best = label;
            }
        }
        return best;
    }

    std::int32_t build(const std::vector<FeatureVector> &x, const std::vector<int> &y, std::vector<std::size_t> &samples,
                       std::size_t depth, std::size_t mtry, const ForestConfig &cfg, Rng &rng) {
        const auto id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back({});
        nodes_.back().label = majority(y, samples);

        bool pure = true;
        for (auto s : samples) {
            if (y[s] != y[samples.front()]) {
                pure = false;
                break;
            }
        }
        if (pure || depth >= cfg.max_depth || samples.size() < cfg.min_samples_split) {
            return id;
        }

        const std::size_t n_features = x.front().size();
        std::vector<std::size_t> candidates(n_features);
        std::iota(candidates.begin(), candidates.end(), 0);
        rng.shuffle(candidates.begin(), candidates.end());
        candidates.resize(std::min(mtry, n_features));

        std::map<int, std::size_t> total_counts;
        for (auto s : samples) total_counts[y[s]]++;

        double best_gain = 0.0;
        std::int32_t best_feature = -1;
        double best_threshold = 0.0;
        const double n = static_cast<double>(samples.size());
        auto gini = [](const std::map<int, std::size_t> &c, double m) {
            if (m == 0.0) return 0.0;
            double g = 1.0;
            for (const auto &[label, k] : c) {
                const double p = static_cast<double>(k) / m;
                g -= p * p;
            }
            return g;
        };
        const double parent = gini(total_counts, n);

        std::vector<std::size_t> sorted = samples;
        for (auto f : candidates) {
            std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
                if (x[a][f] != x[b][f]) return x[a][f] < x[b][f];
                return a < b;
            });
            std::map<int, std::size_t> left;
            std::map<int, std::size_t> right = total_counts;
            for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                const int label = y[sorted[i]];
                left[label]++;
                if (--right[label] == 0) right.erase(label);
                const double a = x[sorted[i]][f];
                const double b = x[sorted[i + 1]][f];
                if (a == b) continue;
                const double nl = static_cast<double>(i + 1);
                const double nr = n - nl;
                const double gain = parent - (nl / n) * gini(left, nl) - (nr / n) * gini(right, nr);
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_feature = static_cast<std::int32_t>(f);
                    best_threshold = a + (b - a) / 2.0;
                }
            }
        }
        if (best_feature < 0) {
            return id;
        }
        std::vector<std::size_t> left_samples, right_samples;
        for (auto s : samples) {
            (x[s][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_samples : right_samples).push_back(s);
        }
        nodes_[static_cast<std::size_t>(id)].feature = best_feature;
        nodes_[static_cast<std::size_t>(id)].threshold = best_threshold;
        const auto l = build(x, y, left_samples, depth + 1, mtry, cfg, rng);
        nodes_[static_cast<std::size_t>(id)].left = l;
        const auto r = build(x, y, right_samples, depth + 1, mtry, cfg, rng);
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    std::vector<Node> nodes_;
};

class RandomForest {
public:
    void fit(const std::vector<FeatureVector> &x, const std::vector<int> &y, const ForestConfig &cfg) {
        if (x.empty() || x.size() != y.size()) {
            throw std::invalid_argument{"RandomForest::fit: empty or mismatched training data"};
        }
        const std::size_t mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(x.front().size()))));
        Rng rng{cfg.seed};
        trees_.assign(cfg.trees, {});
        for (auto &tree : trees_) {
            std::vector<std::size_t> samples(x.size());
            if (cfg.bootstrap) {
                for (auto &s : samples) s = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(x.size()) - 1));
            } else {
                std::iota(samples.begin(), samples.end(), 0);
            }
            tree.fit(x, y, std::move(samples), mtry, cfg, rng);
        }
    }

    /// leaf identifier reached in every tree
    std::vector<std::uint32_t> fingerprint(const FeatureVector &x) const {
        std::vector<std::uint32_t> fp;
        fp.reserve(trees_.size());
        for (const auto &t : trees_) fp.push_back(t.leaf(x));
        return fp;
    }

    /// plain majority vote over trees, lowest label on ties
    int vote(const FeatureVector &x) const {
        std::map<int, std::size_t> counts;
        for (const auto &t : trees_) counts[t.predict(x)]++;
        int best = 0;
        std::size_t best_c = 0;
        for (const auto &[label, c] : counts) {
            if (c > best_c) {
                best_c = c;
                best = label;
            }
        }
        return best;
    }

    std::size_t size() const { return trees_.size(); }
    const std::vector<DecisionTree> &trees() const { return trees_; }
    std::vector<DecisionTree> &trees() { return trees_; }

private:
    std::vector<DecisionTree> trees_;
};

inline std::size_t hamming(const std::vector<std::uint32_t> &a, const std::vector<std::uint32_t> &b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

/// Forest plus the leaf fingerprints of its training set. Prediction is the
/// majority label of the k nearest training fingerprints under Hamming
/// distance (distance ties: lower training index; vote ties: lower label).
class KfpModel {
public:
    void fit(const std::vector<FeatureVector> &x, const std::vector<int> &y, const ForestConfig &cfg, std::size_t k_nn = 3) {
        forest_.fit(x, y, cfg);
        k_nn_ = std::max<std::size_t>(1, k_nn);
        labels_ = y;
        fingerprints_.clear();
        fingerprints_.reserve(x.size());
        for (const auto &row : x) fingerprints_.push_back(forest_.fingerprint(row));
    }

    int predict(const FeatureVector &x) const {
        const auto fp = forest_.fingerprint(x);
        std::vector<std::pair<std::size_t, std::size_t>> dist;
        dist.reserve(fingerprints_.size());
        for (std::size_t i = 0; i < fingerprints_.size(); ++i) dist.push_back({hamming(fp, fingerprints_[i]), i});
        const std::size_t k = std::min(k_nn_, dist.size());
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        std::map<int, std::size_t> votes;
        for (std::size_t i = 0; i < k; ++i) votes[labels_[dist[i].second]]++;
        int best = 0;
        std::size_t best_c = 0;
        for (const auto &[label, c] : votes) {
            if (c > best_c) {
                best_c = c;
                best = label;
            }
        }
        return best;
    }

    std::size_t k_nn() const { return k_nn_; }
    const RandomForest &forest() const { return forest_; }
    const std::vector<int> &labels() const { return labels_; }
    const std::vector<std::vector<std::uint32_t>> &fingerprints() const { return fingerprints_; }

    // binary serialization (little-endian host layout)
    void write(std::ostream &os) const;
    void read(std::istream &is);

private:
    RandomForest forest_;
    std::size_t k_nn_ = 3;
    std::vector<int> labels_;
    std::vector<std::vector<std::uint32_t>> fingerprints_;
};

namespace detail {

template <typename T>
void put(std::ostream &os, T v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T get(std::istream &is) {
    T v{};
    is.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!is) throw DataError{"truncated model container"};
    return v;
}

}  // namespace detail

inline void KfpModel::write(std::ostream &os) const {
    detail::put<std::uint64_t>(os, k_nn_);
    detail::put<std::uint64_t>(os, forest_.size());
    for (const auto &t : forest_.trees()) {
        detail::put<std::uint64_t>(os, t.nodes().size());
        for (const auto &n : t.nodes()) {
            detail::put(os, n.feature);
            detail::put(os, n.threshold);
            detail::put(os, n.left);
            detail::put(os, n.right);
            detail::put(os, n.label);
        }
    }
    detail::put<std::uint64_t>(os, labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        detail::put<std::int32_t>(os, labels_[i]);
        for (auto leaf : fingerprints_[i]) detail::put(os, leaf);
    }
}

inline void KfpModel::read(std::istream &is) {
    k_nn_ = detail::get<std::uint64_t>(is);
    const auto n_trees = detail::get<std::uint64_t>(is);
    if (n_trees > 100000) throw DataError{"corrupt model container"};
    forest_.trees().assign(n_trees, {});
    for (auto &t : forest_.trees()) {
        const auto n_nodes = detail::get<std::uint64_t>(is);
        if (n_nodes > (1u << 26)) throw DataError{"corrupt model container"};
        t.nodes().resize(n_nodes);
        for (auto &n : t.nodes()) {
            n.feature = detail::get<std::int32_t>(is);
            n.threshold = detail::get<double>(is);
            n.left = detail::get<std::int32_t>(is);
            n.right = detail::get<std::int32_t>(is);
            n.label = detail::get<std::int32_t>(is);
        }
    }
    const auto n_train = detail::get<std::uint64_t>(is);
    labels_.resize(n_train);
    fingerprints_.assign(n_train, std::vector<std::uint32_t>(n_trees));
    for (std::size_t i = 0; i < n_train; ++i) {
        labels_[i] = detail::get<std::int32_t>(is);
        for (auto &leaf : fingerprints_[i]) leaf = detail::get<std::uint32_t>(is);
    }
}

}  // namespace wfdef
