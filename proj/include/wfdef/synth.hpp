// synth.hpp
//
// Deterministic synthetic trace corpus. Each site owns a few traffic
// patterns; a pattern is a list of bursts (start, length, per-direction
// rates) and every instance of the pattern is a jittered draw of it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "random.hpp"
#include "trace.hpp"

namespace wfdef {

struct Burst {
    double start;      /// seconds
    double length;     /// seconds
    double in_rate;    /// incoming packets per second
    double out_rate;   /// outgoing packets per second
};

struct PatternProfile {
    std::vector<Burst> bursts;
};

struct SynthConfig {
    int sites = 20;
    int traces_per_site = 40;
    int min_patterns = 2;
    int max_patterns = 3;
    double jitter = 0.05;          /// relative jitter of burst timing and volume
    double duration_min = 2.0;     /// seconds spanned by a pattern's bursts
    double duration_max = 12.0;
    std::uint64_t seed = 1;
};

struct SynthCorpus {
    Dataset data;
    std::map<std::pair<int, int>, int> pattern_of;    /// (site, instance) -> planted pattern
    std::map<int, std::vector<PatternProfile>> profiles;

    int planted_pattern(const Trace &t) const { return pattern_of.at({t.site_id, t.instance_id}); }
};

inline PatternProfile random_profile(Rng &rng, const SynthConfig &cfg) {
    PatternProfile p;
    const double duration = rng.uniform(cfg.duration_min, cfg.duration_max);
    const int n_bursts = static_cast<int>(rng.integer(2, 5));
    for (int b = 0; b < n_bursts; ++b) {
        Burst burst;
        burst.start = b == 0 ? 0.0 : rng.uniform(0.0, duration * 0.85);
        burst.length = rng.uniform(0.4, 2.0);
        burst.in_rate = rng.uniform(40.0, 260.0);
        burst.out_rate = burst.in_rate * rng.uniform(0.08, 0.3);
        p.bursts.push_back(burst);
    }
    std::sort(p.bursts.begin(), p.bursts.end(), [](const Burst &a, const Burst &b) { return a.start < b.start; });
    return p;
}

/// One jittered instance of a profile. The first packet is always an
/// outgoing request at time 0.
inline Trace draw_trace(const PatternProfile &profile, Rng &rng, double jitter, int site, int instance) {
    Trace t;
    t.site_id = site;
    t.instance_id = instance;
    t.packets.push_back({0.0, Direction::out});
    for (const auto &b : profile.bursts) {
        const double start = std::max(0.0, b.start * (1.0 + rng.uniform(-jitter, jitter)));
        const double length = b.length * (1.0 + rng.uniform(-jitter, jitter));
        for (auto [rate, dir] : {std::pair{b.in_rate, Direction::in}, std::pair{b.out_rate, Direction::out}}) {
            const double expected = rate * length * (1.0 + rng.uniform(-jitter, jitter));
            const auto n = static_cast<std::size_t>(std::max(1.0, std::round(expected)));
            for (std::size_t i = 0; i < n; ++i) {
                t.packets.push_back({start + rng.uniform() * length, dir});
            }
        }
    }
    std::stable_sort(t.packets.begin(), t.packets.end(),
                     [](const Packet &a, const Packet &b) { return a.time < b.time; });
    return t;
}

/// Instances are assigned to patterns round-robin so every pattern of a
/// site holds the same number of traces (up to one).
inline SynthCorpus generate_corpus(const SynthConfig &cfg) {
    SynthCorpus corpus;
    for (int site = 0; site < cfg.sites; ++site) {
        Rng site_rng{cfg.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(site) * 0x9e3779b97f4a7c15ULL + 17};
        const int n_patterns = static_cast<int>(site_rng.integer(cfg.min_patterns, cfg.max_patterns));
        auto &profiles = corpus.profiles[site];
        for (int p = 0; p < n_patterns; ++p) {
            profiles.push_back(random_profile(site_rng, cfg));
        }
        for (int inst = 0; inst < cfg.traces_per_site; ++inst) {
            const int pattern = inst % n_patterns;
            Trace t = draw_trace(profiles[static_cast<std::size_t>(pattern)], site_rng, cfg.jitter, site, inst);
            corpus.pattern_of[{site, inst}] = pattern;
            corpus.data.entries.push_back(
                {std::move(t), Split::train, std::to_string(site) + "-" + std::to_string(inst)});
        }
    }
    corpus.data.sort_entries();
    return corpus;
}

}  // namespace wfdef
