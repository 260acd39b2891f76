// early.hpp
//
// Early anonymity-set detection. A prefix of a live trace is classified in
// two stages: a site predictor names the most likely site, then a per-site
// kFP model trained on prefixes truncated at the same checkpoint names the
// pattern. The (site, pattern) pair maps to one anonymity set.
//
// Each set S gets a safe time tau_S: the earliest checkpoint at which the
// pipeline routes at least alpha * A_full of S's validation traces to S.
// At run time S is tested exactly once, at tau_S.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "anonymity.hpp"
#include "forest.hpp"
#include "io.hpp"
#include "kfp.hpp"
#include "trace.hpp"

namespace wfdef {

inline constexpr double full_trace = std::numeric_limits<double>::infinity();
inline constexpr double never = std::numeric_limits<double>::infinity();

/// step, 2*step, ..., max, followed by the full-trace checkpoint
inline std::vector<double> default_checkpoints(double step = 0.5, double max = 20.0) {
    std::vector<double> out;
    for (int i = 1; step * i <= max + time_tolerance; ++i) out.push_back(step * i);
    out.push_back(full_trace);
    return out;
}

inline Trace prefix_at(const Trace &trace, double checkpoint) {
    return std::isinf(checkpoint) ? trace : truncate_prefix(trace, checkpoint);
}

// ---------------------------------------------------------------------------
// Stage A: site prediction

class SitePredictor {
public:
    virtual ~SitePredictor() = default;
    /// most likely site for a prefix observed up to `checkpoint` seconds
    virtual int predict(const Trace &prefix, double checkpoint) const = 0;
};

/// Nearest centroid over prefix TAMs. One centroid per (checkpoint, site);
/// only the slots a prefix can reach are stored.
class CentroidSitePredictor : public SitePredictor {
public:
    void fit(const std::vector<const Trace *> &traces, std::vector<double> checkpoints, TamShape shape = {}) {
        if (traces.empty()) {
            throw std::invalid_argument{"CentroidSitePredictor: no training traces"};
        }
        shape_ = shape;
        checkpoints_ = std::move(checkpoints);
        sites_.clear();
        for (const Trace *t : traces) sites_.push_back(t->site_id);
        std::sort(sites_.begin(), sites_.end());
        sites_.erase(std::unique(sites_.begin(), sites_.end()), sites_.end());

        centroids_.assign(checkpoints_.size(), {});
        widths_.assign(checkpoints_.size(), 0);
        for (std::size_t c = 0; c < checkpoints_.size(); ++c) {
            const double t = checkpoints_[c];
            std::vector<std::vector<double>> sums(sites_.size(), std::vector<double>(2 * shape_.slots, 0.0));
            std::vector<std::size_t> counts(sites_.size(), 0);
            for (const Trace *tr : traces) {
                const auto s = site_index(tr->site_id);
                const auto tam = compute_prefix_tam(prefix_at(*tr, t), shape_);
                for (std::size_t i = 0; i < shape_.slots; ++i) {
                    sums[s][i] += tam.out_counts[i];
                    sums[s][shape_.slots + i] += tam.in_counts[i];
                }
                counts[s]++;
            }
            std::size_t width = 0;
            for (std::size_t s = 0; s < sites_.size(); ++s) {
                for (std::size_t i = 0; i < shape_.slots; ++i) {
                    if (sums[s][i] != 0.0 || sums[s][shape_.slots + i] != 0.0) width = std::max(width, i + 1);
                }
            }
            widths_[c] = width;
            auto &cent = centroids_[c];
            cent.assign(sites_.size(), std::vector<double>(2 * width, 0.0));
            for (std::size_t s = 0; s < sites_.size(); ++s) {
                const double n = static_cast<double>(std::max<std::size_t>(counts[s], 1));
                for (std::size_t i = 0; i < width; ++i) {
                    cent[s][i] = sums[s][i] / n;
                    cent[s][width + i] = sums[s][shape_.slots + i] / n;
                }
            }
        }
    }

    int predict(const Trace &prefix, double checkpoint) const override {
        const auto c = checkpoint_index(checkpoint);
        const auto width = widths_[c];
        std::vector<double> q(2 * width, 0.0);
        for (const auto &p : prefix.packets) {
            const auto slot = slot_of(p.time, shape_.slot_width);
            if (slot >= width) continue;
            q[(p.direction == Direction::out ? 0 : width) + slot] += 1.0;
        }
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < sites_.size(); ++s) {
            double d = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i) {
                const double x = q[i] - centroids_[c][s][i];
                d += x * x;
            }
            if (d < best_d) {
                best_d = d;
                best = s;
            }
        }
        return sites_[best];
    }

    std::size_t checkpoint_index(double checkpoint) const {
        for (std::size_t i = 0; i < checkpoints_.size(); ++i) {
            if (checkpoints_[i] == checkpoint || std::abs(checkpoints_[i] - checkpoint) <= time_tolerance) return i;
        }
        throw std::invalid_argument{"site predictor: unknown checkpoint " + format_double(checkpoint)};
    }

    const std::vector<int> &sites() const { return sites_; }
    const std::vector<double> &checkpoints() const { return checkpoints_; }

    void write(std::ostream &os) const {
        detail::put<double>(os, shape_.slot_width);
        detail::put<std::uint64_t>(os, shape_.slots);
        detail::put<std::uint64_t>(os, sites_.size());
        for (int s : sites_) detail::put<std::int32_t>(os, s);
        detail::put<std::uint64_t>(os, checkpoints_.size());
        for (std::size_t c = 0; c < checkpoints_.size(); ++c) {
            detail::put<double>(os, checkpoints_[c]);
            detail::put<std::uint64_t>(os, widths_[c]);
            for (const auto &v : centroids_[c]) {
                for (double x : v) detail::put<double>(os, x);
            }
        }
    }

    void read(std::istream &is) {
        shape_.slot_width = detail::get<double>(is);
        shape_.slots = detail::get<std::uint64_t>(is);
        sites_.resize(detail::get<std::uint64_t>(is));
        for (auto &s : sites_) s = detail::get<std::int32_t>(is);
        const auto n = detail::get<std::uint64_t>(is);
        checkpoints_.resize(n);
        widths_.resize(n);
        centroids_.assign(n, {});
        for (std::size_t c = 0; c < n; ++c) {
            checkpoints_[c] = detail::get<double>(is);
            widths_[c] = detail::get<std::uint64_t>(is);
            if (widths_[c] > shape_.slots) throw DataError{"corrupt site predictor"};
            centroids_[c].assign(sites_.size(), std::vector<double>(2 * widths_[c]));
            for (auto &v : centroids_[c]) {
                for (auto &x : v) x = detail::get<double>(is);
            }
        }
    }

private:
    std::size_t site_index(int site) const {
        return static_cast<std::size_t>(std::lower_bound(sites_.begin(), sites_.end(), site) - sites_.begin());
    }

    TamShape shape_;
    std::vector<double> checkpoints_;
    std::vector<int> sites_;
    std::vector<std::size_t> widths_;
    std::vector<std::vector<std::vector<double>>> centroids_;   // [checkpoint][site][2*width]
};

/// Site predictor running as a child process. One request per line on the
/// child's stdin:
///   {"checkpoint": <seconds or null for full trace>, "packets": [[t, d], ...]}
/// and one response per line on its stdout:
///   {"site_id": <int>, "confidence": <real>}
class ExternalSitePredictor : public SitePredictor {
public:
    explicit ExternalSitePredictor(const std::string &command) {
        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0) {
            throw std::runtime_error{"external predictor: pipe failed"};
        }
        pid_ = fork();
        if (pid_ < 0) {
            throw std::runtime_error{"external predictor: fork failed"};
        }
        if (pid_ == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char *>(nullptr));
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        in_ = fdopen(to_child[1], "w");
        out_ = fdopen(from_child[0], "r");
    }

    ExternalSitePredictor(const ExternalSitePredictor &) = delete;
    ExternalSitePredictor &operator=(const ExternalSitePredictor &) = delete;

    ~ExternalSitePredictor() override {
        if (in_) fclose(in_);
        if (out_) fclose(out_);
        if (pid_ > 0) {
            int status = 0;
            waitpid(pid_, &status, 0);
        }
    }

    int predict(const Trace &prefix, double checkpoint) const override {
        nlohmann::json packets = nlohmann::json::array();
        for (const auto &p : prefix.packets) packets.push_back({p.time, sign(p.direction)});
        const std::string line = nlohmann::json{{"checkpoint", json_number(checkpoint)}, {"packets", packets}}.dump() + "\n";
        if (fputs(line.c_str(), in_) < 0 || fflush(in_) != 0) {
            throw DataError{"external predictor: write failed"};
        }
        std::string response;
        int ch = 0;
        while ((ch = fgetc(out_)) != EOF && ch != '\n') response.push_back(static_cast<char>(ch));
        if (response.empty()) {
            throw DataError{"external predictor: no response"};
        }
        try {
            const auto doc = nlohmann::json::parse(response);
            last_confidence_ = doc.value("confidence", 0.0);
            return doc.at("site_id").get<int>();
        } catch (const nlohmann::json::exception &e) {
            throw DataError{std::string{"external predictor: bad response: "} + e.what()};
        }
    }

    double last_confidence() const { return last_confidence_; }

private:
    pid_t pid_ = -1;
    FILE *in_ = nullptr;
    FILE *out_ = nullptr;
    mutable double last_confidence_ = 0.0;
};

// ---------------------------------------------------------------------------
// Stage B: per-site pattern prediction

struct PatternModelConfig {
    ForestConfig forest;
    std::size_t k_nn = 3;
};

/// kFP models per (site, checkpoint) trained on prefixes labelled with the
/// trace's pattern. Sites with a single pattern, or without two patterns of
/// at least two traces each, answer with their largest pattern.
class PatternPredictor {
public:
    struct SiteModels {
        int fallback = 0;                  /// largest pattern
        std::size_t pattern_count = 0;
        bool insufficient = false;         /// fell back for lack of data
        std::map<std::size_t, KfpModel> by_checkpoint;
    };

    /// traces[i] has pattern label labels[i] (its local pattern id)
    void fit_site(int site, const std::vector<const Trace *> &traces, const std::vector<int> &labels,
                  const std::vector<double> &checkpoints, const PatternModelConfig &cfg) {
        checkpoints_ = checkpoints;
        SiteModels m;
        std::map<int, std::size_t> sizes;
        for (int l : labels) sizes[l]++;
        m.pattern_count = sizes.size();
        std::size_t best = 0;
        for (const auto &[label, c] : sizes) {
            if (c > best) {
                best = c;
                m.fallback = label;
            }
        }
        const auto trainable = std::count_if(sizes.begin(), sizes.end(), [](const auto &kv) { return kv.second >= 2; });
        if (sizes.size() >= 2 && trainable < 2) {
            m.insufficient = true;
        }
        if (sizes.size() >= 2 && trainable >= 2) {
            for (std::size_t c = 0; c < checkpoints.size(); ++c) {
                std::vector<FeatureVector> x;
                for (const Trace *t : traces) x.push_back(extract_kfp_features(prefix_at(*t, checkpoints[c])));
                PatternModelConfig local = cfg;
                local.forest.seed = cfg.forest.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(site + 1)) ^
                                    (0xbf58476d1ce4e5b9ULL * (c + 1));
                m.by_checkpoint[c].fit(x, labels, local.forest, cfg.k_nn);
            }
        }
        sites_[site] = std::move(m);
    }

    int predict(int site, std::size_t checkpoint_index, const Trace &prefix) const {
        auto it = sites_.find(site);
        if (it == sites_.end()) return 0;
        auto model = it->second.by_checkpoint.find(checkpoint_index);
        if (model == it->second.by_checkpoint.end()) return it->second.fallback;
        return model->second.predict(extract_kfp_features(prefix));
    }

    /// takes over the sites of another predictor trained on the same checkpoints
    void merge(PatternPredictor &&other) {
        if (checkpoints_.empty()) checkpoints_ = other.checkpoints_;
        if (other.checkpoints_ != checkpoints_) {
            throw std::invalid_argument{"PatternPredictor::merge: checkpoint lists differ"};
        }
        for (auto &[site, m] : other.sites_) sites_[site] = std::move(m);
        other.sites_.clear();
    }

    /// drops every model whose (site, checkpoint) is not in `keep`
    void prune(const std::set<std::pair<int, std::size_t>> &keep) {
        for (auto &[site, m] : sites_) {
            for (auto it = m.by_checkpoint.begin(); it != m.by_checkpoint.end();) {
                it = keep.count({site, it->first}) ? std::next(it) : m.by_checkpoint.erase(it);
            }
        }
    }

    std::size_t model_count() const {
        std::size_t n = 0;
        for (const auto &[site, m] : sites_) n += m.by_checkpoint.size();
        return n;
    }

    const std::map<int, SiteModels> &sites() const { return sites_; }
    const std::vector<double> &checkpoints() const { return checkpoints_; }

    void write(std::ostream &os) const {
        detail::put<std::uint64_t>(os, checkpoints_.size());
        for (double c : checkpoints_) detail::put<double>(os, c);
        detail::put<std::uint64_t>(os, sites_.size());
        for (const auto &[site, m] : sites_) {
            detail::put<std::int32_t>(os, site);
            detail::put<std::int32_t>(os, m.fallback);
            detail::put<std::uint64_t>(os, m.pattern_count);
            detail::put<std::uint8_t>(os, m.insufficient ? 1 : 0);
            detail::put<std::uint64_t>(os, m.by_checkpoint.size());
            for (const auto &[c, model] : m.by_checkpoint) {
                detail::put<std::uint64_t>(os, c);
                model.write(os);
            }
        }
    }

    void read(std::istream &is) {
        checkpoints_.resize(detail::get<std::uint64_t>(is));
        for (auto &c : checkpoints_) c = detail::get<double>(is);
        const auto n = detail::get<std::uint64_t>(is);
        sites_.clear();
        for (std::uint64_t i = 0; i < n; ++i) {
            const int site = detail::get<std::int32_t>(is);
            SiteModels m;
            m.fallback = detail::get<std::int32_t>(is);
            m.pattern_count = detail::get<std::uint64_t>(is);
            m.insufficient = detail::get<std::uint8_t>(is) != 0;
            const auto models = detail::get<std::uint64_t>(is);
            for (std::uint64_t j = 0; j < models; ++j) {
                const auto c = detail::get<std::uint64_t>(is);
                m.by_checkpoint[c].read(is);
            }
            sites_[site] = std::move(m);
        }
    }

private:
    std::vector<double> checkpoints_;
    std::map<int, SiteModels> sites_;
};

struct Prediction {
    int site = -1;
    int pattern = -1;

    bool operator==(const Prediction &) const = default;
};

/// Stage A followed by Stage B at one checkpoint.
inline Prediction predict_two_stage(const SitePredictor &sites, const PatternPredictor &patterns, const Trace &prefix,
                                    std::size_t checkpoint_index) {
    const double t = patterns.checkpoints().at(checkpoint_index);
    Prediction p;
    p.site = sites.predict(prefix, t);
    p.pattern = patterns.predict(p.site, checkpoint_index, prefix);
    return p;
}

/// Two-stage predictions of a batch of traces at every checkpoint, keyed by
/// (site, instance). The predictions do not depend on how patterns are
/// grouped into sets, so one table serves every (k, L).
class PredictionTable {
public:
    void put(int site, int instance, std::vector<Prediction> by_checkpoint) {
        rows_[{site, instance}] = std::move(by_checkpoint);
    }

    const Prediction &at(int site, int instance, std::size_t checkpoint_index) const {
        auto it = rows_.find({site, instance});
        if (it == rows_.end()) {
            throw DataError{"no cached prediction for trace " + std::to_string(site) + "-" + std::to_string(instance)};
        }
        return it->second.at(checkpoint_index);
    }

    bool contains(int site, int instance) const { return rows_.count({site, instance}) > 0; }
    const auto &rows() const { return rows_; }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto &[key, preds] : rows_) {
            nlohmann::json p = nlohmann::json::array();
            for (const auto &x : preds) p.push_back({x.site, x.pattern});
            rows.push_back({{"site", key.first}, {"instance", key.second}, {"predictions", p}});
        }
        return rows;
    }

    static PredictionTable from_json(const nlohmann::json &j) {
        PredictionTable t;
        for (const auto &row : j) {
            std::vector<Prediction> preds;
            for (const auto &p : row.at("predictions")) preds.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
            t.put(row.at("site").get<int>(), row.at("instance").get<int>(), std::move(preds));
        }
        return t;
    }

private:
    std::map<std::pair<int, int>, std::vector<Prediction>> rows_;
};

inline std::vector<Prediction> predict_all_checkpoints(const SitePredictor &sites, const PatternPredictor &patterns,
                                                       const Trace &trace) {
    std::vector<Prediction> out;
    for (std::size_t c = 0; c < patterns.checkpoints().size(); ++c) {
        out.push_back(predict_two_stage(sites, patterns, prefix_at(trace, patterns.checkpoints()[c]), c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sets, safe times and the single-shot rule

/// (site, local pattern) -> set id
class SetIndex {
public:
    SetIndex() = default;
    SetIndex(const std::vector<AnonymitySet> &sets, const std::vector<Pattern> &patterns) {
        for (const auto &s : sets) {
            for (auto p : s.patterns) map_[{patterns[p].site_id, static_cast<int>(patterns[p].local_id)}] = s.set_id;
        }
        count_ = sets.size();
    }

    std::optional<std::size_t> find(int site, int pattern) const {
        auto it = map_.find({site, pattern});
        if (it == map_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<std::size_t> find(const Prediction &p) const { return find(p.site, p.pattern); }

    std::size_t set_count() const { return count_; }

    /// sites that own at least one pattern of the set
    std::vector<int> sites_of(std::size_t set_id) const {
        std::vector<int> out;
        for (const auto &[key, s] : map_) {
            if (s == set_id) out.push_back(key.first);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

private:
    std::map<std::pair<int, int>, std::size_t> map_;
    std::size_t count_ = 0;
};

struct SafeTimeEntry {
    double tau = never;                 /// seconds; never when no checkpoint qualifies
    std::size_t tau_index = SIZE_MAX;   /// index into the checkpoint list
    double accuracy_full = 0.0;
    std::vector<double> accuracy;       /// A(t) per checkpoint (finite ones)
    std::size_t validation_traces = 0;
    std::string flag;                   /// why the set never switches, if it doesn't
};

struct SafeTimeTable {
    std::vector<double> checkpoints;    /// including the trailing full-trace checkpoint
    double alpha = 0.9;
    std::vector<SafeTimeEntry> sets;

    /// distinct finite safe times, ascending
    std::vector<double> query_times() const {
        std::vector<double> t;
        for (const auto &s : sets) {
            if (std::isfinite(s.tau)) t.push_back(s.tau);
        }
        std::sort(t.begin(), t.end());
        t.erase(std::unique(t.begin(), t.end()), t.end());
        return t;
    }

    std::size_t checkpoint_index(double t) const {
        for (std::size_t i = 0; i < checkpoints.size(); ++i) {
            if (checkpoints[i] == t || std::abs(checkpoints[i] - t) <= time_tolerance) return i;
        }
        throw std::invalid_argument{"not a checkpoint: " + format_double(t)};
    }
};

struct ValidationTrace {
    const Trace *trace;
    std::size_t true_set;
};

/// A(t) for every set and checkpoint from cached predictions; tau_S is the
/// first finite checkpoint with A(t) >= alpha * A_full.
inline SafeTimeTable compute_safe_times(const SetIndex &index, const std::vector<ValidationTrace> &validation,
                                        const PredictionTable &predictions, const std::vector<double> &checkpoints,
                                        double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument{"alpha must lie in (0, 1]"};
    }
    if (checkpoints.empty() || !std::isinf(checkpoints.back())) {
        throw std::invalid_argument{"checkpoint list must end with the full-trace checkpoint"};
    }
    SafeTimeTable table;
    table.checkpoints = checkpoints;
    table.alpha = alpha;
    table.sets.resize(index.set_count());
    const std::size_t full = checkpoints.size() - 1;

    std::vector<std::vector<std::size_t>> hits(index.set_count(), std::vector<std::size_t>(checkpoints.size(), 0));
    for (const auto &v : validation) {
        table.sets[v.true_set].validation_traces++;
        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
            const auto s = index.find(predictions.at(v.trace->site_id, v.trace->instance_id, c));
            if (s && *s == v.true_set) hits[v.true_set][c]++;
        }
    }
    for (std::size_t s = 0; s < table.sets.size(); ++s) {
        auto &e = table.sets[s];
        if (e.validation_traces == 0) {
            e.flag = "no validation traces";
            continue;
        }
        const double n = static_cast<double>(e.validation_traces);
        e.accuracy_full = static_cast<double>(hits[s][full]) / n;
        for (std::size_t c = 0; c < full; ++c) e.accuracy.push_back(static_cast<double>(hits[s][c]) / n);
        if (e.accuracy_full <= 0.0) {
            e.flag = "zero full-trace accuracy";
            continue;
        }
        for (std::size_t c = 0; c < full; ++c) {
            if (e.accuracy[c] >= alpha * e.accuracy_full) {
                e.tau = checkpoints[c];
                e.tau_index = c;
                break;
            }
        }
        if (!std::isfinite(e.tau)) e.flag = "accuracy never reaches alpha * A_full";
    }
    return table;
}

/// (site, checkpoint) pattern models a deployment needs: for each set with a
/// finite safe time, the models of its sites at that time.
inline std::set<std::pair<int, std::size_t>> retained_models(const SafeTimeTable &table, const SetIndex &index) {
    std::set<std::pair<int, std::size_t>> keep;
    for (std::size_t s = 0; s < table.sets.size(); ++s) {
        if (!std::isfinite(table.sets[s].tau)) continue;
        for (int site : index.sites_of(s)) keep.insert({site, table.sets[s].tau_index});
    }
    return keep;
}

/// Per-trace state of the single-shot rule.
struct DecisionState {
    std::set<std::size_t> rejected;     /// sets tested at their safe time and not chosen
    std::optional<std::size_t> chosen;
};

/// Single-shot decision at checkpoint t for a predicted set (nullopt when
/// the prediction maps to no set). Every set whose safe time is t is tested
/// now; the predicted set is accepted only if its safe time is exactly t and
/// it was never rejected. All other sets tested at t are rejected for the
/// rest of the trace.
inline std::optional<std::size_t> decide(std::optional<std::size_t> predicted, double t, const SafeTimeTable &table,
                                         DecisionState &state, const std::vector<bool> &switchable = {}) {
    if (state.chosen) return std::nullopt;
    std::optional<std::size_t> accepted;
    for (std::size_t s = 0; s < table.sets.size(); ++s) {
        const double tau = table.sets[s].tau;
        if (!std::isfinite(tau) || std::abs(tau - t) > time_tolerance) continue;
        const bool allowed = switchable.empty() || switchable[s];
        if (predicted && *predicted == s && allowed && !state.rejected.count(s)) {
            accepted = s;
        } else {
            state.rejected.insert(s);
        }
    }
    if (accepted) state.chosen = accepted;
    return accepted;
}

inline std::optional<std::size_t> decide(const Prediction &prediction, double t, const SafeTimeTable &table,
                                         const SetIndex &index, DecisionState &state,
                                         const std::vector<bool> &switchable = {}) {
    return decide(index.find(prediction), t, table, state, switchable);
}

/// Held-out traces carry no pattern label; they are given the pattern
/// whose training centroid (full-trace TAM) is nearest.
class PatternCentroids {
public:
    void add_pattern(int site, int pattern, const std::vector<const Trace *> &members, TamShape shape = {}) {
        shape_ = shape;
        std::vector<double> sum(2 * shape.slots, 0.0);
        for (const Trace *t : members) {
            const auto f = compute_tam(*t, shape).flatten();
            for (std::size_t i = 0; i < f.size(); ++i) sum[i] += f[i];
        }
        for (auto &x : sum) x /= static_cast<double>(std::max<std::size_t>(members.size(), 1));
        by_site_[site].push_back({pattern, std::move(sum)});
    }

    std::optional<int> nearest(const Trace &trace) const {
        auto it = by_site_.find(trace.site_id);
        if (it == by_site_.end() || it->second.empty()) return std::nullopt;
        const auto f = compute_tam(trace, shape_).flatten();
        int best = it->second.front().first;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto &[pattern, centroid] : it->second) {
            const double d = euclidean(f, centroid);
            if (d < best_d) {
                best_d = d;
                best = pattern;
            }
        }
        return best;
    }

private:
    TamShape shape_;
    std::map<int, std::vector<std::pair<int, std::vector<double>>>> by_site_;
};

// ---------------------------------------------------------------------------
// Model container: "WFDM" magic, format version, site predictor, pattern
// predictor. A JSON sidecar describes the contents.

inline constexpr std::uint32_t detector_format_version = 1;

inline void save_detector(const std::filesystem::path &bin, const CentroidSitePredictor &sites,
                          const PatternPredictor &patterns, const nlohmann::json &extra_metadata = {}) {
    std::ostringstream os(std::ios::binary);
    os.write("WFDM", 4);
    detail::put<std::uint32_t>(os, detector_format_version);
    sites.write(os);
    patterns.write(os);
    write_file(bin, os.str());

    nlohmann::json models = nlohmann::json::array();
    for (const auto &[site, m] : patterns.sites()) {
        std::vector<std::size_t> cps;
        for (const auto &[c, model] : m.by_checkpoint) cps.push_back(c);
        models.push_back({{"site", site},
                          {"patterns", m.pattern_count},
                          {"fallback_pattern", m.fallback},
                          {"insufficient_data", m.insufficient},
                          {"checkpoints_with_models", cps}});
    }
    nlohmann::json cps = nlohmann::json::array();
    for (double c : patterns.checkpoints()) cps.push_back(json_number(c));
    nlohmann::json meta = {{"format", "wfdef-detector"},
                           {"version", detector_format_version},
                           {"site_predictor", "nearest-centroid-tam"},
                           {"checkpoints", cps},
                           {"pattern_models", models}};
    if (extra_metadata.is_object()) {
        for (const auto &item : extra_metadata.items()) meta[item.key()] = item.value();
    }
    auto sidecar = bin;
    sidecar.replace_extension(".json");
    write_json(sidecar, meta);
}

inline void load_detector(const std::filesystem::path &bin, CentroidSitePredictor &sites, PatternPredictor &patterns) {
    std::istringstream is(read_file(bin), std::ios::binary);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "WFDM") {
        throw DataError{bin.string() + ": not a detector container"};
    }
    const auto version = detail::get<std::uint32_t>(is);
    if (version != detector_format_version) {
        throw DataError{bin.string() + ": unsupported detector version " + std::to_string(version)};
    }
    sites.read(is);
    patterns.read(is);
}

}  // namespace wfdef
