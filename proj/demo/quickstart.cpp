// quickstart.cpp
//
// Small tour of the library: synthesize a corpus, pad one trace with
// Tamaraw, mine the patterns of one site and compare attacker accuracy
// across bucket sizes.

#include <iostream>
#include <map>

#include "anonymity.hpp"
#include "cast.hpp"
#include "synth.hpp"
#include "tamaraw.hpp"

int main() {
    wfdef::SynthConfig sc;
    sc.sites = 5;
    sc.traces_per_site = 20;
    const auto corpus = wfdef::generate_corpus(sc);
    const auto &entries = corpus.data.entries;

    const wfdef::TamarawParams params{0.04, 0.012, 100};
    const auto &first = entries.front().trace;
    const auto defended = wfdef::defend(first, params);
    const auto o = wfdef::overheads(first, defended, params);
    std::cout << "trace " << first.site_id << "-" << first.instance_id << ": " << first.size() << " packets -> "
              << defended.cells.size() << " cells, bandwidth overhead " << o.bandwidth << ", time overhead "
              << o.time << "\n";

    std::map<int, std::vector<const wfdef::Trace *>> by_site;
    for (const auto &e : entries) by_site[e.trace.site_id].push_back(&e.trace);
    const auto mined = wfdef::mine_patterns(by_site.begin()->second);
    std::cout << "site " << by_site.begin()->first << ": " << mined.clusters.size() << " patterns (";
    for (std::size_t c = 0; c < mined.clusters.size(); ++c) std::cout << (c ? ", " : "") << mined.clusters[c].size();
    std::cout << " traces)\n";

    std::vector<const wfdef::Trace *> all;
    for (const auto &e : entries) all.push_back(&e.trace);
    for (std::uint32_t L : {1u, 100u, 500u, 1000u}) {
        std::cout << "L=" << L << ": bucket-majority attacker accuracy "
                  << wfdef::attacker_accuracy(all, {params.rho_out, params.rho_in, L}) << "\n";
    }
}
