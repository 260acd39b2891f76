// wfdef command-line driver.
//
// Exit status: 0 success, 1 usage error, 2 data error, 3 acceptance
// violation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pipeline.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_violation = 3;

wfdef::Trace load_single(const std::string &path) {
    int site = -1, instance = 0;
    wfdef::parse_trace_filename(std::filesystem::path{path}.filename().string(), site, instance);
    return wfdef::load_trace_file(path, site, instance);
}

void write_output(const std::string &path, const std::string &text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        wfdef::write_file(path, text);
    }
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Adaptive Tamaraw trace toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string workspace = "workspace";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::size_t threads = 1;
    app.add_option("--config", config_path, "pipeline config JSON");
    app.add_option("--workspace", workspace, "workspace directory")->capture_default_str();
    app.add_option("--seed", seed, "random seed (overrides the config)");
    app.add_option("--mode", mode, "in-training or out-of-training (overrides the config)");
    app.add_option("--threads", threads, "worker threads, 0 for one per core")->capture_default_str();

    auto *synth = app.add_subcommand("synth", "generate the synthetic corpus into the workspace");
    std::string input;
    auto *ingest = app.add_subcommand("ingest", "import a trace directory or manifest into the workspace");
    ingest->add_option("input", input, "directory of <site>-<instance> files, or a manifest JSON")->required();

    std::string trace_path, out_path;
    auto *tam = app.add_subcommand("tam", "print the TAM of one trace as CSV");
    tam->add_option("trace", trace_path, "trace file")->required();
    tam->add_option("-o,--out", out_path, "output CSV (default stdout)");

    double rho_out = 0.04, rho_in = 0.012;
    std::uint32_t L = 100;
    auto *defend = app.add_subcommand("defend", "apply pure Tamaraw to one trace");
    defend->add_option("trace", trace_path, "trace file")->required();
    defend->add_option("--rho-out", rho_out, "seconds per outgoing cell")->capture_default_str();
    defend->add_option("--rho-in", rho_in, "seconds per incoming cell")->capture_default_str();
    defend->add_option("-L", L, "bucket size")->capture_default_str();
    defend->add_option("-o,--out", out_path, "output CSV (default stdout)");

    auto *pareto = app.add_subcommand("pareto", "grid search and Pareto frontier per L");
    auto *patterns = app.add_subcommand("patterns", "mine intra-site patterns");
    auto *sets = app.add_subcommand("sets", "build anonymity sets and local parameters for every (k, L)");
    auto *safetimes = app.add_subcommand("safetimes", "train the early detector and compute safe times");
    auto *simulate = app.add_subcommand("simulate", "run the adaptive defense on the test traces");
    auto *bounds = app.add_subcommand("bounds", "compute the attacker-success bounds");
    auto *attack = app.add_subcommand("attack", "kFP attack on defended traces versus the bound");
    auto *report = app.add_subcommand("report", "join all artifacts into table CSVs");
    auto *run = app.add_subcommand("run", "every stage from the dataset to the report");
    auto *show = app.add_subcommand("config", "print the effective configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_usage;
    }

    try {
        wfdef::PipelineConfig cfg;
        if (!config_path.empty()) cfg = wfdef::config_from_json(wfdef::read_json(config_path));
        if (seed) cfg.seed = *seed;
        if (mode) cfg.mode = *mode;
        cfg.synth.seed = cfg.seed;

        if (tam->parsed()) {
            const auto t = wfdef::compute_tam(load_single(trace_path), cfg.tam);
            std::string csv = "slot,start,out,in\n";
            for (std::size_t i = 0; i < t.slots(); ++i) {
                csv += std::to_string(i) + "," + wfdef::format_double(static_cast<double>(i) * t.slot_width) + "," +
                       std::to_string(t.out_counts[i]) + "," + std::to_string(t.in_counts[i]) + "\n";
            }
            write_output(out_path, csv);
            return exit_ok;
        }
        if (defend->parsed()) {
            const wfdef::TamarawParams params{rho_out, rho_in, L};
            params.validate();
            const auto trace = load_single(trace_path);
            const auto d = wfdef::defend(trace, params);
            std::ostringstream csv;
            wfdef::write_defended_csv(csv, d);
            write_output(out_path, csv.str());
            auto o = wfdef::to_json(wfdef::overheads(trace, d, params));
            o["cells"] = d.cells.size();
            std::cerr << o.dump() << "\n";
            return exit_ok;
        }
        if (show->parsed()) {
            cfg.validate();
            auto doc = wfdef::to_json(cfg);
            doc["config_hash"] = wfdef::config_hash(cfg);
            std::cout << doc.dump(2) << "\n";
            return exit_ok;
        }

        wfdef::Pipeline p{cfg, workspace, threads, std::cerr};
        if (synth->parsed()) p.synth();
        else if (ingest->parsed()) p.ingest(input);
        else if (pareto->parsed()) p.pareto();
        else if (patterns->parsed()) p.patterns();
        else if (sets->parsed()) p.sets();
        else if (safetimes->parsed()) p.safetimes();
        else if (simulate->parsed()) p.simulate();
        else if (bounds->parsed()) p.bounds();
        else if (attack->parsed()) p.attack();
        else if (report->parsed()) p.report();
        else if (run->parsed()) p.run_all();
        return exit_ok;
    } catch (const wfdef::UsageError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const wfdef::AcceptanceViolation &e) {
        std::cerr << "acceptance violation: " << e.what() << "\n";
        return exit_violation;
    } catch (const wfdef::DataError &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const nlohmann::json::exception &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_data;
    }
}
