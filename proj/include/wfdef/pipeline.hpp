// pipeline.hpp
//
// Workspace-directory pipeline. Every stage reads the artifacts of earlier
// stages from the workspace and writes its own; each artifact records the
// hash of the configuration that produced it, and a stage refuses to read an
// artifact whose hash differs from the current configuration.
//
// Layout of a workspace:
//   dataset/manifest.json dataset/traces/*  dataset.json
//   pareto.json  pareto/overheads_L*.csv  pareto/pareto_L*.csv
//   patterns.json
//   sets.json  sets/purity_k*_L*.csv
//   detector.bin detector.json  predictions.json  safetimes.json
//   simulate.json  simulate/{traces,events,savings_hist,time_budget}_k*_L*.csv
//   bounds.json  bounds_matrix.csv
//   attack.json  attack/attack_vs_bound_k*_L*.csv
//   report/{overhead_comparison,attack_vs_bound,bound_matrix,purity,savings_hist,time_budget}.csv

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adaptive.hpp"
#include "anonymity.hpp"
#include "attack.hpp"
#include "bound.hpp"
#include "cast.hpp"
#include "early.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "synth.hpp"
#include "tamaraw.hpp"
#include "trace.hpp"

namespace wfdef {

/// invalid configuration or command line (exit status 1)
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// an acceptance property failed on the produced artifacts (exit status 3)
class AcceptanceViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
    std::uint64_t seed = 1;

    std::string dataset_source = "synthetic";   /// synthetic | directory | manifest
    std::string dataset_path;
    SynthConfig synth;
    SplitRatio split;
    std::string mode = "in-training";           /// in-training | out-of-training

    TamShape tam;
    double rho_out = 0.04;                      /// grid centre
    double rho_in = 0.012;
    double grid_span = 7.0;
    int grid_steps = 14;
    std::vector<std::size_t> ks{2, 4, 7, 15, 30};
    std::vector<std::uint32_t> Ls{100, 500, 1000};

    std::size_t cast_K = 7;
    std::size_t max_clusters = 6;
    int max_cleaning_sweeps = 100;
    CutMeasure cut_measure = CutMeasure::similarity;

    double alpha = 0.9;
    double checkpoint_step = 0.5;
    double checkpoint_max = 20.0;
    std::size_t detector_trees = 100;
    std::size_t detector_depth = 16;
    std::size_t k_nn = 3;
    std::string external_predictor;             /// shell command; empty uses the built-in site predictor
    bool defended_view = false;

    std::string set_weights = "trace-share";    /// trace-share | uniform
    std::vector<std::pair<std::size_t, std::uint32_t>> attack_configs{{7, 100}};
    double attack_tolerance = default_attack_tolerance;
    std::size_t attack_trees = 100;

    std::vector<double> budget_ceilings{0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0};
    double histogram_bin = 0.25;

    CastConfig cast_config() const {
        CastConfig c;
        c.K = cast_K;
        c.max_clusters = max_clusters;
        c.max_cleaning_sweeps = max_cleaning_sweeps;
        c.cut_measure = cut_measure;
        c.tam_shape = tam;
        return c;
    }

    std::vector<TamarawParams> grid(std::uint32_t L) const {
        return build_param_grid({rho_out, rho_in, L}, grid_span, grid_steps);
    }

    std::vector<double> checkpoints() const { return default_checkpoints(checkpoint_step, checkpoint_max); }

    void validate() const {
        auto fail = [](const std::string &m) { throw UsageError{"config: " + m}; };
        if (dataset_source != "synthetic" && dataset_source != "directory" && dataset_source != "manifest") {
            fail("dataset.source must be synthetic, directory or manifest");
        }
        if (dataset_source != "synthetic" && dataset_path.empty()) fail("dataset.path is required");
        if (mode != "in-training" && mode != "out-of-training") fail("mode must be in-training or out-of-training");
        if (set_weights != "trace-share" && set_weights != "uniform") fail("bounds.weights must be trace-share or uniform");
        if (!(rho_out > 0.0) || !(rho_in > 0.0)) fail("grid rates must be positive");
        if (grid_steps < 1 || !(grid_span > 1.0)) fail("grid.steps >= 1 and grid.span > 1 required");
        if (ks.empty() || Ls.empty()) fail("k and L lists must be non-empty");
        for (auto k : ks) {
            if (k < 2) fail("every k must be at least 2");
        }
        for (auto L : Ls) {
            if (L < 1) fail("every L must be at least 1");
        }
        if (!(alpha > 0.0 && alpha <= 1.0)) fail("alpha must lie in (0, 1]");
        if (!(checkpoint_step > 0.0) || checkpoint_max < checkpoint_step) fail("bad checkpoint grid");
        if (!(tam.slot_width > 0.0) || tam.slots == 0) fail("bad TAM shape");
        if (cast_K < 1 || max_clusters < 1) fail("patterns.K and patterns.max_clusters must be positive");
        if (detector_trees < 1 || attack_trees < 1 || k_nn < 1) fail("tree and neighbour counts must be positive");
        if (synth.sites < 2 || synth.traces_per_site < 3 || synth.min_patterns < 1 ||
            synth.max_patterns < synth.min_patterns) {
            fail("bad synthetic corpus shape");
        }
        if (!(histogram_bin > 0.0)) fail("simulate.histogram_bin must be positive");
        for (const auto &[k, L] : attack_configs) {
            if (std::find(ks.begin(), ks.end(), k) == ks.end() || std::find(Ls.begin(), Ls.end(), L) == Ls.end()) {
                fail("attack config (" + std::to_string(k) + ", " + std::to_string(L) + ") is not in the k x L sweep");
            }
        }
    }
};

inline nlohmann::json to_json(const PipelineConfig &c) {
    nlohmann::json attack = nlohmann::json::array();
    for (const auto &[k, L] : c.attack_configs) attack.push_back({k, L});
    return {
        {"seed", c.seed},
        {"mode", c.mode},
        {"dataset",
         {{"source", c.dataset_source},
          {"path", c.dataset_path},
          {"split", {c.split.train, c.split.validation, c.split.test}},
          {"synth",
           {{"sites", c.synth.sites},
            {"traces_per_site", c.synth.traces_per_site},
            {"min_patterns", c.synth.min_patterns},
            {"max_patterns", c.synth.max_patterns},
            {"jitter", c.synth.jitter},
            {"duration_min", c.synth.duration_min},
            {"duration_max", c.synth.duration_max}}}}},
        {"tam", {{"slot_width", c.tam.slot_width}, {"slots", c.tam.slots}}},
        {"grid", {{"rho_out", c.rho_out}, {"rho_in", c.rho_in}, {"span", c.grid_span}, {"steps", c.grid_steps}}},
        {"k", c.ks},
        {"L", c.Ls},
        {"patterns",
         {{"K", c.cast_K},
          {"max_clusters", c.max_clusters},
          {"max_cleaning_sweeps", c.max_cleaning_sweeps},
          {"cut_measure", c.cut_measure == CutMeasure::similarity ? "similarity" : "distance"}}},
        {"detector",
         {{"alpha", c.alpha},
          {"checkpoint_step", c.checkpoint_step},
          {"checkpoint_max", c.checkpoint_max},
          {"trees", c.detector_trees},
          {"max_depth", c.detector_depth},
          {"k_nn", c.k_nn},
          {"external_predictor", c.external_predictor},
          {"defended_view", c.defended_view}}},
        {"bounds", {{"weights", c.set_weights}}},
        {"attack", {{"configs", attack}, {"tolerance", c.attack_tolerance}, {"trees", c.attack_trees}}},
        {"simulate", {{"budget_ceilings", c.budget_ceilings}, {"histogram_bin", c.histogram_bin}}},
    };
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json &obj, const char *key, T &out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception &e) {
        throw UsageError{std::string{"config: bad value for '"} + key + "': " + e.what()};
    }
}

inline const nlohmann::json &section(const nlohmann::json &obj, const char *key,
                                     std::initializer_list<std::string_view> known) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!obj.contains(key)) return empty;
    try {
        reject_unknown_fields(obj.at(key), known, std::string{"config."} + key);
    } catch (const DataError &e) {
        throw UsageError{e.what()};
    }
    return obj.at(key);
}

}  // namespace detail

/// Applies a (possibly partial) config document on top of `base`. Unknown
/// fields are rejected.
inline PipelineConfig config_from_json(const nlohmann::json &doc, PipelineConfig c = {}) {
    using detail::read_field;
    using detail::section;
    try {
        detail::reject_unknown_fields(
            doc, {"seed", "mode", "dataset", "tam", "grid", "k", "L", "patterns", "detector", "bounds", "attack", "simulate"},
            "config");
    } catch (const DataError &e) {
        throw UsageError{e.what()};
    }
    read_field(doc, "seed", c.seed);
    read_field(doc, "mode", c.mode);
    read_field(doc, "k", c.ks);
    read_field(doc, "L", c.Ls);

    const auto &ds = section(doc, "dataset", {"source", "path", "split", "synth"});
    read_field(ds, "source", c.dataset_source);
    read_field(ds, "path", c.dataset_path);
    if (ds.contains("split")) {
        std::vector<unsigned> s;
        read_field(ds, "split", s);
        if (s.size() != 3) throw UsageError{"config: dataset.split needs three integers"};
        c.split = {s[0], s[1], s[2]};
    }
    const auto &sy = section(ds, "synth",
                             {"sites", "traces_per_site", "min_patterns", "max_patterns", "jitter", "duration_min",
                              "duration_max"});
    read_field(sy, "sites", c.synth.sites);
    read_field(sy, "traces_per_site", c.synth.traces_per_site);
    read_field(sy, "min_patterns", c.synth.min_patterns);
    read_field(sy, "max_patterns", c.synth.max_patterns);
    read_field(sy, "jitter", c.synth.jitter);
    read_field(sy, "duration_min", c.synth.duration_min);
    read_field(sy, "duration_max", c.synth.duration_max);

    const auto &tam = section(doc, "tam", {"slot_width", "slots"});
    read_field(tam, "slot_width", c.tam.slot_width);
    read_field(tam, "slots", c.tam.slots);

    const auto &grid = section(doc, "grid", {"rho_out", "rho_in", "span", "steps"});
    read_field(grid, "rho_out", c.rho_out);
    read_field(grid, "rho_in", c.rho_in);
    read_field(grid, "span", c.grid_span);
    read_field(grid, "steps", c.grid_steps);

    const auto &pat = section(doc, "patterns", {"K", "max_clusters", "max_cleaning_sweeps", "cut_measure"});
    read_field(pat, "K", c.cast_K);
    read_field(pat, "max_clusters", c.max_clusters);
    read_field(pat, "max_cleaning_sweeps", c.max_cleaning_sweeps);
    if (pat.contains("cut_measure")) {
        std::string m;
        read_field(pat, "cut_measure", m);
        if (m == "similarity") c.cut_measure = CutMeasure::similarity;
        else if (m == "distance") c.cut_measure = CutMeasure::distance;
        else throw UsageError{"config: patterns.cut_measure must be similarity or distance"};
    }

    const auto &det = section(doc, "detector",
                              {"alpha", "checkpoint_step", "checkpoint_max", "trees", "max_depth", "k_nn",
                               "external_predictor", "defended_view"});
    read_field(det, "alpha", c.alpha);
    read_field(det, "checkpoint_step", c.checkpoint_step);
    read_field(det, "checkpoint_max", c.checkpoint_max);
    read_field(det, "trees", c.detector_trees);
    read_field(det, "max_depth", c.detector_depth);
    read_field(det, "k_nn", c.k_nn);
    read_field(det, "external_predictor", c.external_predictor);
    read_field(det, "defended_view", c.defended_view);

    const auto &b = section(doc, "bounds", {"weights"});
    read_field(b, "weights", c.set_weights);

    const auto &at = section(doc, "attack", {"configs", "tolerance", "trees"});
    if (at.contains("configs")) {
        std::vector<std::vector<std::size_t>> v;
        read_field(at, "configs", v);
        c.attack_configs.clear();
        for (const auto &p : v) {
            if (p.size() != 2) throw UsageError{"config: attack.configs entries are [k, L] pairs"};
            c.attack_configs.push_back({p[0], static_cast<std::uint32_t>(p[1])});
        }
    }
    read_field(at, "tolerance", c.attack_tolerance);
    read_field(at, "trees", c.attack_trees);

    const auto &sim = section(doc, "simulate", {"budget_ceilings", "histogram_bin"});
    read_field(sim, "budget_ceilings", c.budget_ceilings);
    read_field(sim, "histogram_bin", c.histogram_bin);
    c.synth.seed = c.seed;
    return c;
}

/// FNV-1a of the canonical (key-sorted, compact) config JSON
inline std::string config_hash(const PipelineConfig &c) { return hex64(fnv1a(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Workspace

class Workspace {
public:
    Workspace(std::filesystem::path root, std::string hash) : root_{std::move(root)}, hash_{std::move(hash)} {}

    const std::filesystem::path &root() const { return root_; }
    const std::string &hash() const { return hash_; }
    std::filesystem::path path(const std::string &rel) const { return root_ / rel; }

    /// Reads an artifact produced by `stage`, checking its config hash.
    nlohmann::json read(const std::string &rel, const std::string &stage) const {
        const auto p = path(rel);
        if (!std::filesystem::exists(p)) {
            throw DataError{"missing artifact " + p.string() + "; run `wfdef " + stage + "` first"};
        }
        auto doc = read_json(p);
        const auto h = doc.value("config_hash", std::string{});
        if (h != hash_) {
            throw DataError{p.string() + " was produced with config " + h + " but the current config is " + hash_ +
                            "; re-run `wfdef " + stage + "`"};
        }
        return doc;
    }

    void write(const std::string &rel, nlohmann::json doc) const {
        doc["config_hash"] = hash_;
        write_json(path(rel), doc);
    }

    void write_text(const std::string &rel, const std::string &text) const { write_file(path(rel), text); }

private:
    std::filesystem::path root_;
    std::string hash_;
};

inline std::string kl_tag(std::size_t k, std::uint32_t L) {
    return "k" + std::to_string(k) + "_L" + std::to_string(L);
}

// ---------------------------------------------------------------------------
// In-memory views of the artifacts

/// The dataset plus the site partition used for training.
struct LoadedData {
    Dataset data;
    std::set<int> training_sites;          /// all sites, or the retained half in out-of-training mode

    bool trained_site(int site) const { return training_sites.count(site) > 0; }

    std::vector<const Trace *> select(Split s, bool trained) const {
        std::vector<const Trace *> out;
        for (const auto &e : data.entries) {
            if (e.split == s && trained_site(e.trace.site_id) == trained) out.push_back(&e.trace);
        }
        return out;
    }

    std::vector<const Trace *> train() const { return select(Split::train, true); }
    std::vector<const Trace *> validation() const { return select(Split::validation, true); }
    std::vector<const Trace *> test() const { return select(Split::test, true); }

    /// every trace of a held-out site, in dataset order
    std::vector<const Trace *> held_out() const {
        std::vector<const Trace *> out;
        for (const auto &e : data.entries) {
            if (!trained_site(e.trace.site_id)) out.push_back(&e.trace);
        }
        return out;
    }

    std::vector<const Trace *> all() const {
        std::vector<const Trace *> out;
        for (const auto &e : data.entries) out.push_back(&e.trace);
        return out;
    }
};

/// Half of the sites, chosen with the seed, are held out in
/// out-of-training mode.
inline std::set<int> choose_training_sites(const std::vector<int> &sites, const PipelineConfig &cfg) {
    std::set<int> keep(sites.begin(), sites.end());
    if (cfg.mode != "out-of-training") return keep;
    std::vector<int> order = sites;
    Rng rng{cfg.seed ^ 0x5851f42d4c957f2dULL};
    rng.shuffle(order.begin(), order.end());
    keep.clear();
    for (std::size_t i = 0; i < (order.size() + 1) / 2; ++i) keep.insert(order[i]);
    return keep;
}

struct MinedPatterns {
    std::vector<Pattern> patterns;                          /// traces index into train()
    std::map<std::pair<int, int>, int> label_of;            /// (site, instance) -> local pattern of a training trace
};

struct SetRun {
    std::size_t k = 0;
    std::uint32_t L = 0;
    std::vector<AnonymitySet> sets;
    std::vector<std::size_t> pareto;                        /// grid indices of the Pareto configurations
    std::vector<std::vector<std::optional<std::size_t>>> local;   /// [set][pareto position] -> grid index
};

// ---------------------------------------------------------------------------

class Pipeline {
public:
    Pipeline(PipelineConfig cfg, std::filesystem::path workspace, std::size_t threads, std::ostream &log)
        : cfg_{std::move(cfg)}, ws_{std::move(workspace), config_hash(cfg_)}, threads_{threads}, log_{log} {
        cfg_.validate();
    }

    const PipelineConfig &config() const { return cfg_; }
    const Workspace &workspace() const { return ws_; }

    // ---- dataset ---------------------------------------------------------

    void synth() {
        SynthConfig sc = cfg_.synth;
        sc.seed = cfg_.seed;
        auto corpus = generate_corpus(sc);
        nlohmann::json planted = nlohmann::json::array();
        for (const auto &[key, p] : corpus.pattern_of) planted.push_back({key.first, key.second, p});
        assign_splits(corpus.data, cfg_.split, cfg_.seed);
        store_dataset(std::move(corpus.data), planted);
    }

    void ingest(const std::filesystem::path &input) {
        Dataset data;
        if (std::filesystem::is_directory(input)) {
            data = load_directory(input);
            assign_splits(data, cfg_.split, cfg_.seed);
        } else {
            data = load_manifest(read_json(input), input.parent_path());
        }
        for (const auto &e : data.entries) {
            if (e.trace.site_id < 0) {
                throw DataError{"ingest: trace '" + e.path + "' has no site label"};
            }
        }
        store_dataset(std::move(data), nullptr);
    }

    LoadedData load_data() const {
        const auto meta = ws_.read("dataset.json", "synth` or `wfdef ingest");
        LoadedData d;
        d.data = load_manifest(read_json(ws_.path("dataset/manifest.json")), ws_.path("dataset"));
        for (int s : meta.at("training_sites")) d.training_sites.insert(s);
        return d;
    }

    // ---- pareto ----------------------------------------------------------

    void pareto() {
        const auto data = load_data();
        const auto train = data.train();
        if (train.empty()) throw DataError{"pareto: no training traces"};
        nlohmann::json runs = nlohmann::json::array();
        for (auto L : cfg_.Ls) {
            const auto grid = cfg_.grid(L);
            std::vector<OverheadPoint> points(grid.size());
            parallel_for(grid.size(), threads_, [&](std::size_t g) { points[g] = mean_overheads(train, grid[g]); });
            const auto front = pareto_filter(points);
            std::ostringstream all, par;
            write_overhead_csv(all, points);
            write_overhead_csv(par, front);
            ws_.write_text("pareto/overheads_L" + std::to_string(L) + ".csv", all.str());
            ws_.write_text("pareto/pareto_L" + std::to_string(L) + ".csv", par.str());
            nlohmann::json configs = nlohmann::json::array();
            for (const auto &p : front) {
                auto j = to_json(p);
                j["grid_index"] = grid_index(grid, p.params);
                configs.push_back(j);
            }
            runs.push_back({{"L", L}, {"grid_size", grid.size()}, {"pareto", configs}});
            log_ << "pareto L=" << L << ": " << front.size() << " of " << grid.size() << " configurations\n";
        }
        ws_.write("pareto.json", {{"runs", runs}});
    }

    /// grid indices of the Pareto configurations for L
    std::vector<std::size_t> load_pareto(std::uint32_t L) const {
        const auto doc = ws_.read("pareto.json", "pareto");
        for (const auto &r : doc.at("runs")) {
            if (r.at("L").get<std::uint32_t>() != L) continue;
            std::vector<std::size_t> out;
            for (const auto &p : r.at("pareto")) out.push_back(p.at("grid_index").get<std::size_t>());
            return out;
        }
        throw DataError{"pareto.json has no run for L=" + std::to_string(L)};
    }

    // ---- patterns --------------------------------------------------------

    void patterns() {
        const auto data = load_data();
        const auto train = data.train();
        std::map<int, std::vector<const Trace *>> by_site;
        for (const Trace *t : train) by_site[t->site_id].push_back(t);
        std::vector<int> sites;
        for (const auto &[s, v] : by_site) sites.push_back(s);
        std::vector<PatternSet> mined(sites.size());
        const auto cast = cfg_.cast_config();
        parallel_for(sites.size(), threads_, [&](std::size_t i) {
            const auto &traces = by_site.at(sites[i]);
            if (traces.size() < 2) {
                mined[i].site_id = sites[i];
                mined[i].clusters = {std::vector<std::size_t>(traces.size(), 0)};
                return;
            }
            mined[i] = mine_patterns(traces, cast);
        });
        nlohmann::json out = nlohmann::json::array();
        std::size_t next_id = 0, total = 0;
        for (std::size_t i = 0; i < sites.size(); ++i) {
            const auto &traces = by_site.at(sites[i]);
            nlohmann::json pats = nlohmann::json::array();
            for (std::size_t c = 0; c < mined[i].clusters.size(); ++c) {
                std::vector<int> instances;
                for (auto m : mined[i].clusters[c]) instances.push_back(traces[m]->instance_id);
                std::sort(instances.begin(), instances.end());
                pats.push_back({{"pattern_id", next_id++}, {"local_id", c}, {"instances", instances}});
            }
            total += mined[i].clusters.size();
            out.push_back({{"site", sites[i]},
                           {"threshold", json_number(mined[i].threshold)},
                           {"cleaning_sweeps", mined[i].cleaning_sweeps},
                           {"cleaning_converged", mined[i].cleaning_converged},
                           {"patterns", pats}});
        }
        log_ << "patterns: " << total << " patterns over " << sites.size() << " sites\n";
        ws_.write("patterns.json", {{"sites", out}});
    }

    MinedPatterns load_patterns(const LoadedData &data) const {
        const auto doc = ws_.read("patterns.json", "patterns");
        const auto train = data.train();
        std::map<std::pair<int, int>, std::size_t> index;
        for (std::size_t i = 0; i < train.size(); ++i) index[{train[i]->site_id, train[i]->instance_id}] = i;
        MinedPatterns m;
        for (const auto &s : doc.at("sites")) {
            const int site = s.at("site").get<int>();
            for (const auto &p : s.at("patterns")) {
                Pattern pat;
                pat.pattern_id = p.at("pattern_id").get<std::size_t>();
                pat.site_id = site;
                pat.local_id = p.at("local_id").get<std::size_t>();
                for (int inst : p.at("instances")) {
                    auto it = index.find({site, inst});
                    if (it == index.end()) {
                        throw DataError{"patterns.json names trace " + std::to_string(site) + "-" +
                                        std::to_string(inst) + " which is not a training trace"};
                    }
                    pat.traces.push_back(it->second);
                    m.label_of[{site, inst}] = static_cast<int>(pat.local_id);
                }
                if (pat.pattern_id != m.patterns.size()) throw DataError{"patterns.json: pattern ids out of order"};
                m.patterns.push_back(std::move(pat));
            }
        }
        return m;
    }

    // ---- sets ------------------------------------------------------------

    void sets() {
        const auto data = load_data();
        const auto train = data.train();
        const auto mined = load_patterns(data);
        nlohmann::json runs = nlohmann::json::array();
        for (auto L : cfg_.Ls) {
            const auto grid = cfg_.grid(L);
            const auto pareto = load_pareto(L);
            const LengthCache cache{train, grid};
            const OverheadTable table{train, grid};
            for (auto k : cfg_.ks) {
                if (mined.patterns.size() < k) {
                    throw DataError{"sets: only " + std::to_string(mined.patterns.size()) + " patterns for k=" +
                                    std::to_string(k)};
                }
                auto built = build_sets(mined.patterns, k, cache);
                const auto pur = purity(built, mined.patterns, k);
                nlohmann::json sets = nlohmann::json::array();
                for (std::size_t i = 0; i < built.size(); ++i) {
                    const auto &s = built[i];
                    const auto members = set_traces(s, mined.patterns);
                    nlohmann::json locals = nlohmann::json::array();
                    for (auto g : pareto) {
                        const auto local = select_local_params(members, g, table);
                        locals.push_back({{"global_index", g},
                                          {"local_index", local ? nlohmann::json(*local) : nlohmann::json(nullptr)},
                                          {"local", local ? to_json(grid[*local]) : nlohmann::json(nullptr)}});
                    }
                    nlohmann::json pm = nlohmann::json::array();
                    for (auto p : s.patterns) pm.push_back({mined.patterns[p].site_id, mined.patterns[p].local_id});
                    sets.push_back({{"set_id", s.set_id},
                                    {"pattern_ids", s.patterns},
                                    {"members", pm},
                                    {"trace_count", members.size()},
                                    {"metrics",
                                     {{"purity", json_number(pur.per_set[i])},
                                      {"distinct_sites", pur.distinct_sites[i]}}},
                                    {"local_params", locals}});
                }
                std::ostringstream csv;
                write_purity_csv(csv, pur);
                ws_.write_text("sets/purity_" + kl_tag(k, L) + ".csv", csv.str());
                runs.push_back({{"k", k},
                                {"L", L},
                                {"purity_average", json_number(pur.average)},
                                {"purity_reference", json_number(pur.reference)},
                                {"sets", sets}});
                log_ << "sets k=" << k << " L=" << L << ": " << built.size() << " sets, purity "
                     << format_double(pur.average) << "%\n";
            }
        }
        ws_.write("sets.json", {{"runs", runs}});
    }

    std::vector<SetRun> load_sets() const {
        const auto doc = ws_.read("sets.json", "sets");
        std::vector<SetRun> out;
        for (const auto &r : doc.at("runs")) {
            SetRun run;
            run.k = r.at("k").get<std::size_t>();
            run.L = r.at("L").get<std::uint32_t>();
            for (const auto &s : r.at("sets")) {
                AnonymitySet set;
                set.set_id = s.at("set_id").get<std::size_t>();
                set.patterns = s.at("pattern_ids").get<std::vector<std::size_t>>();
                std::vector<std::optional<std::size_t>> locals;
                run.pareto.clear();
                for (const auto &l : s.at("local_params")) {
                    run.pareto.push_back(l.at("global_index").get<std::size_t>());
                    const auto &li = l.at("local_index");
                    locals.push_back(li.is_null() ? std::nullopt : std::optional<std::size_t>{li.get<std::size_t>()});
                }
                run.local.push_back(std::move(locals));
                run.sets.push_back(std::move(set));
            }
            out.push_back(std::move(run));
        }
        return out;
    }

    // ---- safe times ------------------------------------------------------

    void safetimes() {
        const auto data = load_data();
        const auto train = data.train();
        const auto mined = load_patterns(data);
        const auto runs = load_sets();
        const auto checkpoints = cfg_.checkpoints();

        CentroidSitePredictor centroid;
        centroid.fit(train, checkpoints, cfg_.tam);

        std::map<int, std::vector<const Trace *>> by_site;
        for (const Trace *t : train) by_site[t->site_id].push_back(t);
        std::vector<int> sites;
        for (const auto &[s, v] : by_site) sites.push_back(s);
        PatternModelConfig pcfg;
        pcfg.forest.trees = cfg_.detector_trees;
        pcfg.forest.max_depth = cfg_.detector_depth;
        pcfg.forest.seed = cfg_.seed;
        pcfg.k_nn = cfg_.k_nn;
        std::vector<PatternPredictor> per_site(sites.size());
        parallel_for(sites.size(), threads_, [&](std::size_t i) {
            const auto &traces = by_site.at(sites[i]);
            std::vector<int> labels;
            for (const Trace *t : traces) labels.push_back(mined.label_of.at({t->site_id, t->instance_id}));
            per_site[i].fit_site(sites[i], traces, labels, checkpoints, pcfg);
        });
        PatternPredictor patterns;
        for (auto &p : per_site) patterns.merge(std::move(p));

        // pattern labels of non-training traces of training sites
        PatternCentroids centroids;
        for (const auto &p : mined.patterns) {
            std::vector<const Trace *> members;
            for (auto t : p.traces) members.push_back(train[t]);
            centroids.add_pattern(p.site_id, static_cast<int>(p.local_id), members, cfg_.tam);
        }
        nlohmann::json truth = nlohmann::json::array();
        for (const auto &e : data.data.entries) {
            if (!data.trained_site(e.trace.site_id)) continue;
            auto it = mined.label_of.find({e.trace.site_id, e.trace.instance_id});
            const int label = e.split == Split::train && it != mined.label_of.end()
                                  ? it->second
                                  : centroids.nearest(e.trace).value_or(0);
            truth.push_back({e.trace.site_id, e.trace.instance_id, label});
        }

        std::unique_ptr<SitePredictor> external;
        if (!cfg_.external_predictor.empty()) external = std::make_unique<ExternalSitePredictor>(cfg_.external_predictor);
        const SitePredictor &stage_a = external ? *external : static_cast<const SitePredictor &>(centroid);
        const auto all = data.all();
        std::vector<std::vector<Prediction>> preds(all.size());
        parallel_for(all.size(), external ? 1 : threads_,
                     [&](std::size_t i) { preds[i] = predict_all_checkpoints(stage_a, patterns, *all[i]); });
        PredictionTable table;
        for (std::size_t i = 0; i < all.size(); ++i) table.put(all[i]->site_id, all[i]->instance_id, preds[i]);
        nlohmann::json cps = nlohmann::json::array();
        for (double c : checkpoints) cps.push_back(json_number(c));
        ws_.write("predictions.json", {{"checkpoints", cps}, {"patterns", truth}, {"rows", table.to_json()}});

        const auto labels = truth_map(truth);
        const auto validation = data.validation();
        std::set<std::pair<int, std::size_t>> keep;
        nlohmann::json out = nlohmann::json::array();
        for (const auto &run : runs) {
            const SetIndex index{run.sets, mined.patterns};
            std::vector<ValidationTrace> val;
            for (const Trace *t : validation) {
                const auto s = index.find(t->site_id, labels.at({t->site_id, t->instance_id}));
                if (s) val.push_back({t, *s});
            }
            const auto st = compute_safe_times(index, val, table, checkpoints, cfg_.alpha);
            const auto kept = retained_models(st, index);
            keep.insert(kept.begin(), kept.end());
            out.push_back({{"k", run.k}, {"L", run.L}, {"sets", safe_times_to_json(st)}});
            std::size_t finite = 0;
            for (const auto &e : st.sets) finite += std::isfinite(e.tau);
            log_ << "safetimes k=" << run.k << " L=" << run.L << ": " << finite << " of " << st.sets.size()
                 << " sets have a safe time\n";
        }
        patterns.prune(keep);
        nlohmann::json retained = nlohmann::json::array();
        for (const auto &[site, c] : keep) retained.push_back({site, c});
        save_detector(ws_.path("detector.bin"), centroid, patterns,
                      {{"config_hash", ws_.hash()}, {"retained_models", retained}});
        ws_.write("safetimes.json", {{"alpha", cfg_.alpha}, {"checkpoints", cps}, {"runs", out}});
    }

    static std::map<std::pair<int, int>, int> truth_map(const nlohmann::json &truth) {
        std::map<std::pair<int, int>, int> m;
        for (const auto &row : truth) m[{row.at(0).get<int>(), row.at(1).get<int>()}] = row.at(2).get<int>();
        return m;
    }

    static nlohmann::json safe_times_to_json(const SafeTimeTable &st) {
        nlohmann::json sets = nlohmann::json::array();
        for (std::size_t s = 0; s < st.sets.size(); ++s) {
            const auto &e = st.sets[s];
            nlohmann::json acc = nlohmann::json::array();
            for (double a : e.accuracy) acc.push_back(json_number(a));
            sets.push_back({{"set_id", s},
                            {"tau", json_number(e.tau)},
                            {"tau_index", std::isfinite(e.tau) ? nlohmann::json(e.tau_index) : nlohmann::json(nullptr)},
                            {"accuracy_full", json_number(e.accuracy_full)},
                            {"accuracy", acc},
                            {"validation_traces", e.validation_traces},
                            {"flag", e.flag}});
        }
        return sets;
    }

    struct DetectorArtifacts {
        PredictionTable table;
        std::map<std::pair<int, int>, int> pattern_of;      /// (site, instance) -> local pattern, training sites only
        std::vector<double> checkpoints;
    };

    DetectorArtifacts load_predictions() const {
        const auto doc = ws_.read("predictions.json", "safetimes");
        DetectorArtifacts a;
        a.table = PredictionTable::from_json(doc.at("rows"));
        a.pattern_of = truth_map(doc.at("patterns"));
        for (const auto &c : doc.at("checkpoints")) a.checkpoints.push_back(json_to_double(c));
        return a;
    }

    SafeTimeTable load_safe_times(std::size_t k, std::uint32_t L) const {
        const auto doc = ws_.read("safetimes.json", "safetimes");
        SafeTimeTable st;
        st.alpha = doc.at("alpha").get<double>();
        for (const auto &c : doc.at("checkpoints")) st.checkpoints.push_back(json_to_double(c));
        for (const auto &r : doc.at("runs")) {
            if (r.at("k").get<std::size_t>() != k || r.at("L").get<std::uint32_t>() != L) continue;
            for (const auto &s : r.at("sets")) {
                SafeTimeEntry e;
                e.tau = json_to_double(s.at("tau"));
                if (!s.at("tau_index").is_null()) e.tau_index = s.at("tau_index").get<std::size_t>();
                e.accuracy_full = s.at("accuracy_full").get<double>();
                for (const auto &a : s.at("accuracy")) e.accuracy.push_back(json_to_double(a));
                e.validation_traces = s.at("validation_traces").get<std::size_t>();
                e.flag = s.at("flag").get<std::string>();
                st.sets.push_back(std::move(e));
            }
            return st;
        }
        throw DataError{"safetimes.json has no run for k=" + std::to_string(k) + " L=" + std::to_string(L)};
    }

    // ---- shared context for simulate / bounds / attack -------------------

    struct RunContext {
        const SetRun *run = nullptr;
        std::vector<TamarawParams> grid;
        SafeTimeTable safe_times;
        SetIndex index;

        std::optional<std::size_t> set_of(int site, int pattern) const { return index.find(site, pattern); }

        AdaptiveConfig adaptive(std::size_t pareto_pos) const {
            AdaptiveConfig a;
            a.global = grid[run->pareto[pareto_pos]];
            a.safe_times = safe_times;
            for (const auto &locals : run->local) {
                const auto &l = locals[pareto_pos];
                a.local.push_back(l ? std::optional<TamarawParams>{grid[*l]} : std::nullopt);
            }
            return a;
        }
    };

    RunContext context(const SetRun &run, const MinedPatterns &mined) const {
        RunContext c;
        c.run = &run;
        c.grid = cfg_.grid(run.L);
        c.safe_times = load_safe_times(run.k, run.L);
        c.index = SetIndex{run.sets, mined.patterns};
        if (c.safe_times.sets.size() != run.sets.size()) {
            throw DataError{"safetimes.json and sets.json disagree on the set count for " + kl_tag(run.k, run.L)};
        }
        return c;
    }

    // ---- simulate --------------------------------------------------------

    void simulate() {
        const auto data = load_data();
        const auto mined = load_patterns(data);
        const auto runs = load_sets();
        const auto det = load_predictions();
        const auto test = data.test();
        const auto held_out = data.held_out();

        std::unique_ptr<CentroidSitePredictor> live_sites;
        std::unique_ptr<PatternPredictor> live_patterns;
        if (cfg_.defended_view) {
            live_sites = std::make_unique<CentroidSitePredictor>();
            live_patterns = std::make_unique<PatternPredictor>();
            load_detector(ws_.path("detector.bin"), *live_sites, *live_patterns);
        }

        nlohmann::json out = nlohmann::json::array();
        for (const auto &run : runs) {
            const auto ctx = context(run, mined);
            std::vector<std::optional<std::size_t>> truth;
            for (const Trace *t : test) truth.push_back(ctx.set_of(t->site_id, det.pattern_of.at({t->site_id, t->instance_id})));
            const CachedDetector cached{det.table, ctx.index};

            std::ostringstream rows_csv, events_csv;
            rows_csv << "rho_out,rho_in,";
            events_csv << "rho_out,rho_in,site,instance,time,predicted_set,accepted\n";
            std::vector<SimulationSummary> summaries;
            std::vector<double> savings;
            nlohmann::json per_config = nlohmann::json::array();
            nlohmann::json oot = nlohmann::json::array();
            for (std::size_t g = 0; g < run.pareto.size(); ++g) {
                const auto acfg = ctx.adaptive(g);
                std::unique_ptr<SwitchPolicy> live;
                if (cfg_.defended_view) {
                    live = std::make_unique<LiveDetector>(*live_sites, *live_patterns, ctx.index, acfg.global);
                }
                const SwitchPolicy &policy = live ? *live : static_cast<const SwitchPolicy &>(cached);
                const auto report = evaluate(test, truth, acfg, policy, threads_);
                const auto prefix = format_double(acfg.global.rho_out) + "," + format_double(acfg.global.rho_in) + ",";
                std::ostringstream one;
                write_simulation_csv(one, report);
                const auto text = one.str();
                const auto nl = text.find('\n');
                if (g == 0) rows_csv << text.substr(0, nl + 1);
                std::istringstream lines{text.substr(nl + 1)};
                for (std::string line; std::getline(lines, line);) rows_csv << prefix << line << '\n';
                for (const auto &row : report.rows) {
                    savings.push_back(row.saving());
                    for (const auto &q : row.queries) {
                        events_csv << prefix << row.site_id << ',' << row.instance_id << ',' << format_double(q.time)
                                   << ',' << (q.predicted ? std::to_string(*q.predicted) : "") << ','
                                   << (q.accepted ? 1 : 0) << '\n';
                    }
                }
                const auto summary = report.summary();
                summaries.push_back(summary);
                per_config.push_back({{"params", to_json(acfg.global)}, {"summary", to_json(summary)}});

                if (cfg_.mode == "out-of-training" && !held_out.empty()) {
                    const std::vector<std::optional<std::size_t>> none(held_out.size());
                    const auto r = evaluate(held_out, none, acfg, policy, threads_);
                    oot.push_back(out_of_training_entry(r, acfg, run.sets.size()));
                }
            }
            const auto mean = mean_summary(summaries);
            const auto hist = histogram(savings, cfg_.histogram_bin);
            const auto budget = time_budget_table(summaries, cfg_.budget_ceilings);
            std::ostringstream hist_csv, budget_csv;
            write_histogram_csv(hist_csv, hist);
            write_budget_csv(budget_csv, budget);
            const auto tag = kl_tag(run.k, run.L);
            ws_.write_text("simulate/traces_" + tag + ".csv", rows_csv.str());
            ws_.write_text("simulate/events_" + tag + ".csv", events_csv.str());
            ws_.write_text("simulate/savings_hist_" + tag + ".csv", hist_csv.str());
            ws_.write_text("simulate/time_budget_" + tag + ".csv", budget_csv.str());
            nlohmann::json entry = {{"k", run.k}, {"L", run.L}, {"mean", to_json(mean)}, {"per_config", per_config}};
            if (cfg_.mode == "out-of-training") {
                entry["out_of_training"] = {{"per_config", oot}, {"mean", mean_of(oot)}};
            }
            out.push_back(entry);
            log_ << "simulate k=" << run.k << " L=" << run.L << ": adaptive " << format_double(mean.total())
                 << " vs global " << format_double(mean.global_total()) << " (switched "
                 << format_double(mean.switched) << ", correct " << format_double(mean.correct) << ")\n";
        }
        ws_.write("simulate.json", {{"mode", cfg_.mode}, {"runs", out}});
    }

    static SimulationSummary mean_summary(const std::vector<SimulationSummary> &v) {
        SimulationSummary m;
        if (v.empty()) return m;
        for (const auto &s : v) {
            m.traces = s.traces;
            m.bandwidth += s.bandwidth;
            m.time += s.time;
            m.global_bandwidth += s.global_bandwidth;
            m.global_time += s.global_time;
            m.switched += s.switched;
            m.correct += s.correct;
            m.wrong += s.wrong;
        }
        const double n = static_cast<double>(v.size());
        for (double *x : {&m.bandwidth, &m.time, &m.global_bandwidth, &m.global_time, &m.switched, &m.correct, &m.wrong}) {
            *x /= n;
        }
        return m;
    }

    /// Held-out traces grouped by the set they were switched into (or none);
    /// the bound is the bucket-majority accuracy of each group weighted by
    /// its share of the traces.
    static nlohmann::json out_of_training_entry(const SimulationReport &r, const AdaptiveConfig &acfg,
                                                std::size_t set_count) {
        std::vector<std::vector<ShapeItem>> groups(set_count + 1);
        for (const auto &row : r.rows) {
            const auto g = row.switch_event ? row.switch_event->set_id : set_count;
            groups[g].push_back({row.switch_event.has_value(), row.lengths, row.site_id});
        }
        const auto b = global_bound(groups);
        return {{"params", to_json(acfg.global)}, {"summary", to_json(r.summary())}, {"bound", json_number(b.value)}};
    }

    static nlohmann::json mean_of(const nlohmann::json &entries) {
        if (entries.empty()) return nullptr;
        double bw = 0, tm = 0, gbw = 0, gtm = 0, bound = 0, sw = 0;
        for (const auto &e : entries) {
            bw += e.at("summary").at("bandwidth").get<double>();
            tm += e.at("summary").at("time").get<double>();
            gbw += e.at("summary").at("global_bandwidth").get<double>();
            gtm += e.at("summary").at("global_time").get<double>();
            sw += e.at("summary").at("switched").get<double>();
            bound += e.at("bound").get<double>();
        }
        const double n = static_cast<double>(entries.size());
        return {{"bandwidth", json_number(bw / n)},     {"time", json_number(tm / n)},
                {"global_bandwidth", json_number(gbw / n)}, {"global_time", json_number(gtm / n)},
                {"switched", json_number(sw / n)},      {"bound", json_number(bound / n)}};
    }

    static void write_budget_csv(std::ostream &os, const std::vector<BudgetRow> &rows) {
        os << "time_ceiling,adaptive_bandwidth,global_bandwidth\n";
        for (const auto &r : rows) {
            os << format_double(r.time_ceiling) << ','
               << (r.adaptive_bandwidth ? format_double(*r.adaptive_bandwidth) : "") << ','
               << (r.global_bandwidth ? format_double(*r.global_bandwidth) : "") << '\n';
        }
    }

    // ---- bounds ----------------------------------------------------------

    /// Post-switch shapes of the training traces: each trace follows its true
    /// set and switches at the set's safe time when the set has local
    /// parameters and the safe time falls before the trace's pure-global end.
    static std::vector<std::vector<ShapeItem>> training_shapes(const RunContext &ctx, const AdaptiveConfig &acfg,
                                                               const MinedPatterns &mined,
                                                               const std::vector<const Trace *> &train,
                                                               std::vector<std::optional<RateSwitch>> *switches = nullptr) {
        std::vector<std::vector<ShapeItem>> sets(ctx.run->sets.size());
        if (switches) switches->assign(train.size(), std::nullopt);
        for (std::size_t s = 0; s < ctx.run->sets.size(); ++s) {
            const double tau = ctx.safe_times.sets[s].tau;
            for (auto i : set_traces(ctx.run->sets[s], mined.patterns)) {
                const Trace &t = *train[i];
                std::optional<RateSwitch> sw;
                if (acfg.local[s] && std::isfinite(tau) && tau < pure_global_end(t, acfg.global) - time_tolerance) {
                    sw = RateSwitch{tau, *acfg.local[s]};
                }
                sets[s].push_back({sw.has_value(), defended_lengths(t, acfg.global, sw), t.site_id});
                if (switches) (*switches)[i] = sw;
            }
        }
        return sets;
    }

    void bounds() {
        const auto data = load_data();
        const auto mined = load_patterns(data);
        const auto runs = load_sets();
        const auto train = data.train();
        BoundReport report;
        report.caveat =
            "post-switch shapes only; traces switched into a wrong set leak the switch time, which is not quantified";
        nlohmann::json oracle = nlohmann::json::array();
        std::string violations;
        for (const auto &run : runs) {
            const auto ctx = context(run, mined);
            const bool check_oracle = is_attack_config(run.k, run.L);
            std::vector<TamarawParams> configs(run.pareto.size());
            std::vector<GlobalBound> bounds(run.pareto.size());
            std::vector<double> oracle_acc(run.pareto.size(), std::nan(""));
            parallel_for(run.pareto.size(), threads_, [&](std::size_t g) {
                const auto acfg = ctx.adaptive(g);
                configs[g] = acfg.global;
                std::vector<std::optional<RateSwitch>> switches;
                const auto shapes = training_shapes(ctx, acfg, mined, train, &switches);
                std::vector<double> weights;
                if (cfg_.set_weights == "uniform") {
                    std::size_t nonempty = 0;
                    for (const auto &s : shapes) nonempty += !s.empty();
                    for (const auto &s : shapes) weights.push_back(s.empty() ? 0.0 : 1.0 / static_cast<double>(nonempty));
                }
                bounds[g] = global_bound(shapes, weights);
                if (check_oracle && cfg_.set_weights == "trace-share") {
                    std::vector<Trace> obs;
                    for (std::size_t i = 0; i < train.size(); ++i) {
                        obs.push_back(defend(*train[i], acfg.global, switches[i]).observable(train[i]->site_id));
                    }
                    oracle_acc[g] = observable_oracle_accuracy(obs);
                }
            });
            for (std::size_t g = 0; g < run.pareto.size(); ++g) {
                if (std::isnan(oracle_acc[g])) continue;
                oracle.push_back({{"k", run.k},
                                  {"L", run.L},
                                  {"params", to_json(configs[g])},
                                  {"oracle_accuracy", json_number(oracle_acc[g])},
                                  {"bound", json_number(bounds[g].value)}});
                if (oracle_acc[g] > bounds[g].value + identity_tolerance) {
                    violations += "observable oracle " + format_double(oracle_acc[g]) + " exceeds bound " +
                                  format_double(bounds[g].value) + " at " + kl_tag(run.k, run.L) + "\n";
                }
            }
            report.cells.push_back(make_bound_cell(run.k, run.L, std::move(configs), std::move(bounds)));
            log_ << "bounds k=" << run.k << " L=" << run.L << ": " << format_double(report.cells.back().mean_bound)
                 << "\n";
        }
        auto doc = to_json(report);
        doc["weights"] = cfg_.set_weights;
        doc["oracle_checks"] = oracle;
        ws_.write("bounds.json", doc);
        std::ostringstream csv;
        write_bound_matrix_csv(csv, report);
        ws_.write_text("bounds_matrix.csv", csv.str());
        if (!violations.empty()) throw AcceptanceViolation{violations};
    }

    bool is_attack_config(std::size_t k, std::uint32_t L) const {
        return std::find(cfg_.attack_configs.begin(), cfg_.attack_configs.end(), std::pair{k, L}) !=
               cfg_.attack_configs.end();
    }

    /// per-configuration bound values of one (k, L) cell, in Pareto order
    std::vector<double> load_bounds(std::size_t k, std::uint32_t L) const {
        const auto doc = ws_.read("bounds.json", "bounds");
        for (const auto &c : doc.at("cells")) {
            if (c.at("k").get<std::size_t>() != k || c.at("L").get<std::uint32_t>() != L) continue;
            std::vector<double> out;
            for (const auto &g : c.at("configs")) out.push_back(g.at("bound").get<double>());
            return out;
        }
        throw DataError{"bounds.json has no cell for " + kl_tag(k, L)};
    }

    // ---- attack ----------------------------------------------------------

    void attack() {
        const auto data = load_data();
        const auto mined = load_patterns(data);
        const auto runs = load_sets();
        const auto det = load_predictions();
        const auto train = data.train();
        const auto test = data.test();
        nlohmann::json out = nlohmann::json::array();
        std::string diagnostics;
        for (const auto &[k, L] : cfg_.attack_configs) {
            const SetRun *run = nullptr;
            for (const auto &r : runs) {
                if (r.k == k && r.L == L) run = &r;
            }
            if (!run) throw DataError{"sets.json has no run for " + kl_tag(k, L)};
            const auto ctx = context(*run, mined);
            const auto bound = load_bounds(k, L);
            if (bound.size() != run->pareto.size()) throw DataError{"bounds.json and sets.json disagree for " + kl_tag(k, L)};
            const CachedDetector policy{det.table, ctx.index};
            std::vector<AttackRow> rows(run->pareto.size());
            parallel_for(run->pareto.size(), threads_, [&](std::size_t g) {
                const auto acfg = ctx.adaptive(g);
                auto observe = [&](const std::vector<const Trace *> &traces) {
                    std::vector<Trace> obs;
                    obs.reserve(traces.size());
                    for (const Trace *t : traces) {
                        obs.push_back(simulate_trace(*t, acfg, policy).defended.observable(t->site_id, t->instance_id));
                    }
                    return obs;
                };
                ForestConfig fc;
                fc.trees = cfg_.attack_trees;
                fc.seed = cfg_.seed * 0x9e3779b97f4a7c15ULL + g + 1;
                auto result = closed_world_attack(observe(train), observe(test), fc, cfg_.k_nn);
                rows[g] = AttackRow{acfg.global, bound[g], result.accuracy, std::move(result)};
            });
            const auto verdict = compare_with_bound(rows, cfg_.attack_tolerance);
            std::ostringstream csv;
            write_attack_csv(csv, rows);
            ws_.write_text("attack/attack_vs_bound_" + kl_tag(k, L) + ".csv", csv.str());
            nlohmann::json jr = nlohmann::json::array();
            for (const auto &r : rows) {
                nlohmann::json conf = nlohmann::json::array();
                for (const auto &[pair, c] : r.detail.confusion) conf.push_back({pair.first, pair.second, c});
                jr.push_back({{"params", to_json(r.params)},
                              {"bound", json_number(r.bound)},
                              {"kfp_accuracy", json_number(r.kfp_accuracy)},
                              {"within_tolerance", r.within(cfg_.attack_tolerance)},
                              {"confusion", conf}});
            }
            out.push_back({{"k", k}, {"L", L}, {"passed", verdict.passed}, {"rows", jr}});
            diagnostics += verdict.diagnostics;
            double worst = -1.0;
            for (const auto &r : rows) worst = std::max(worst, r.kfp_accuracy - r.bound);
            log_ << "attack " << kl_tag(k, L) << ": " << rows.size() << " configurations, max(kFP - bound) "
                 << format_double(worst) << (verdict.passed ? "" : "  VIOLATION") << "\n";
        }
        ws_.write("attack.json", {{"tolerance", cfg_.attack_tolerance}, {"runs", out}});
        if (!diagnostics.empty()) throw AcceptanceViolation{"kFP accuracy exceeds the bound:\n" + diagnostics};
    }

    // ---- report ----------------------------------------------------------

    void report() {
        const auto sets = ws_.read("sets.json", "sets");
        const auto sim = ws_.read("simulate.json", "simulate");
        const auto bounds = ws_.read("bounds.json", "bounds");
        const auto atk = ws_.read("attack.json", "attack");

        std::ostringstream overhead;
        overhead << "L,k,global_total,adaptive_total,difference,switched,correct,wrong\n";
        for (const auto &r : sim.at("runs")) {
            const auto &m = r.at("mean");
            const double a = m.at("total").get<double>();
            const double b = m.at("global_total").get<double>();
            overhead << r.at("L").get<std::uint32_t>() << ',' << r.at("k").get<std::size_t>() << ',' << format_double(b)
               << ',' << format_double(a) << ',' << format_double(a - b) << ','
               << format_double(m.at("switched").get<double>()) << ',' << format_double(m.at("correct").get<double>())
               << ',' << format_double(m.at("wrong").get<double>()) << '\n';
        }
        ws_.write_text("report/overhead_comparison.csv", overhead.str());

        std::ostringstream versus;
        versus << "rho_out,rho_in,bound,kfp_accuracy\n";
        if (!atk.at("runs").empty()) {
            for (const auto &row : atk.at("runs").at(0).at("rows")) {
                versus << format_double(row.at("params").at("rho_out").get<double>()) << ','
                   << format_double(row.at("params").at("rho_in").get<double>()) << ','
                   << format_double(row.at("bound").get<double>()) << ','
                   << format_double(row.at("kfp_accuracy").get<double>()) << '\n';
            }
        }
        ws_.write_text("report/attack_vs_bound.csv", versus.str());

        ws_.write_text("report/bound_matrix.csv", read_file(ws_.path("bounds_matrix.csv")));

        std::ostringstream pur;
        pur << "k,L,average_purity,reference\n";
        for (const auto &r : sets.at("runs")) {
            pur << r.at("k").get<std::size_t>() << ',' << r.at("L").get<std::uint32_t>() << ','
                << format_double(r.at("purity_average").get<double>()) << ','
                << format_double(r.at("purity_reference").get<double>()) << '\n';
        }
        ws_.write_text("report/purity.csv", pur.str());

        const auto [k, L] = cfg_.attack_configs.empty() ? std::pair{cfg_.ks.front(), cfg_.Ls.front()}
                                                         : cfg_.attack_configs.front();
        ws_.write_text("report/savings_hist.csv", read_file(ws_.path("simulate/savings_hist_" + kl_tag(k, L) + ".csv")));
        ws_.write_text("report/time_budget.csv", read_file(ws_.path("simulate/time_budget_" + kl_tag(k, L) + ".csv")));
        log_ << "report written to " << ws_.path("report").string() << "\n";
        (void)bounds;
    }

    /// every stage from the dataset to the report
    void run_all() {
        if (cfg_.dataset_source == "synthetic") {
            synth();
        } else {
            ingest(cfg_.dataset_path);
        }
        pareto();
        patterns();
        sets();
        safetimes();
        simulate();
        bounds();
        attack();
        report();
    }

private:
    void store_dataset(Dataset data, const nlohmann::json &planted) {
        data.sort_entries();
        std::filesystem::remove_all(ws_.path("dataset"));
        for (auto &e : data.entries) {
            e.path = "traces/" + std::to_string(e.trace.site_id) + "-" + std::to_string(e.trace.instance_id);
            write_file(ws_.path("dataset") / e.path, serialize_trace(e.trace));
        }
        write_json(ws_.path("dataset/manifest.json"), manifest_to_json(data));
        const auto keep = choose_training_sites(data.sites(), cfg_);
        std::map<std::string, std::size_t> counts;
        for (const auto &e : data.entries) counts[to_string(e.split)]++;
        ws_.write("dataset.json", {{"manifest", "dataset/manifest.json"},
                                   {"traces", data.entries.size()},
                                   {"sites", data.sites()},
                                   {"training_sites", std::vector<int>(keep.begin(), keep.end())},
                                   {"split_counts", counts},
                                   {"planted_patterns", planted}});
        log_ << "dataset: " << data.entries.size() << " traces over " << data.sites().size() << " sites\n";
    }

    static std::size_t grid_index(const std::vector<TamarawParams> &grid, const TamarawParams &p) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (grid[i] == p) return i;
        }
        throw std::logic_error{"Pareto point not on the grid"};
    }

    PipelineConfig cfg_;
    Workspace ws_;
    std::size_t threads_;
    std::ostream &log_;
};

}  // namespace wfdef
