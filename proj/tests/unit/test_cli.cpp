#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "pipeline.hpp"

using namespace wfdef;
namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string out;
};

Run cli(const std::string &args) {
    const std::string cmd = std::string{"'"} + WFDEF_CLI + "' " + args + " 2>/dev/null";
    Run r;
    FILE *p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int raw = pclose(p);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

fs::path scratch(const std::string &name) {
    const auto p = fs::temp_directory_path() / ("wfdef_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const std::string data = WFDEF_TEST_DATA;

nlohmann::json small_config() {
    return nlohmann::json::parse(R"({
        "seed": 3,
        "dataset": {"synth": {"sites": 6, "traces_per_site": 40, "duration_max": 6.0}},
        "grid": {"steps": 3},
        "k": [2], "L": [100],
        "detector": {"trees": 10, "checkpoint_max": 6.0},
        "attack": {"configs": [[2, 100]], "trees": 10}
    })");
}

}  // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(cli("").status, 1);
    EXPECT_EQ(cli("frobnicate").status, 1);
    EXPECT_EQ(cli("defend").status, 1);
    EXPECT_EQ(cli("defend '" + data + "/mixed3.trace' --rho-out -1").status, 1);
    EXPECT_EQ(cli("defend '" + data + "/mixed3.trace' -L 0").status, 1);
    EXPECT_EQ(cli("--help").status, 0);
}

TEST(Cli, DataErrors) {
    EXPECT_EQ(cli("defend '" + data + "/no-such-file'").status, 2);
    EXPECT_EQ(cli("defend '" + data + "/unordered.trace'").status, 2);
    const auto ws = scratch("empty");
    EXPECT_EQ(cli("--workspace '" + ws.string() + "' simulate").status, 2);
    fs::remove_all(ws);
}

TEST(Cli, DefendMatchesLibrary) {
    const auto r = cli("defend '" + data + "/mixed3.trace' --rho-out 0.1 --rho-in 0.05 -L 4");
    ASSERT_EQ(r.status, 0);
    const auto d = defend(load_trace_file(data + "/mixed3.trace", -1, 0), {0.1, 0.05, 4});
    std::ostringstream expect;
    write_defended_csv(expect, d);
    EXPECT_EQ(r.out, expect.str());
    EXPECT_EQ(r.out.substr(0, 20), "time,direction,dummy");
}

TEST(Cli, TamCsv) {
    const auto r = cli("tam '" + data + "/mixed3.trace'");
    ASSERT_EQ(r.status, 0);
    // 80 ms slots: packets at 0, 0.12 and 0.31 s land in slots 0, 1 and 3
    EXPECT_EQ(r.out.substr(0, 59), "slot,start,out,in\n0,0,1,0\n1,0.08,0,1\n2,0.16,0,0\n3,0.24,1,0\n");
}

TEST(Cli, ConfigFile) {
    const auto dir = scratch("config");
    write_json(dir / "bad.json", nlohmann::json::parse(R"({"detector": {"alfa": 0.5}})"));
    EXPECT_EQ(cli("--config '" + (dir / "bad.json").string() + "' config").status, 1);
    write_json(dir / "good.json", small_config());
    const auto r = cli("--config '" + (dir / "good.json").string() + "' --seed 11 config");
    ASSERT_EQ(r.status, 0);
    const auto doc = nlohmann::json::parse(r.out);
    EXPECT_EQ(doc.at("seed"), 11);
    auto cfg = config_from_json(small_config());
    cfg.seed = 11;
    cfg.synth.seed = 11;
    EXPECT_EQ(doc.at("config_hash"), config_hash(cfg));
    fs::remove_all(dir);
}

TEST(Cli, ExternalPredictorAndViolation) {
    const auto dir = scratch("external");
    const auto ws = dir / "ws";
    // every prefix is claimed to come from site 0
    write_file(dir / "predictor.sh", "while read line; do echo '{\"site_id\": 0, \"confidence\": 1.0}'; done\n");
    auto cfg = small_config();
    cfg["detector"]["external_predictor"] = "sh '" + (dir / "predictor.sh").string() + "'";
    write_json(dir / "cfg.json", cfg);
    const std::string base = "--config '" + (dir / "cfg.json").string() + "' --workspace '" + ws.string() + "' ";
    for (const char *stage : {"synth", "pareto", "patterns", "sets", "safetimes"}) {
        ASSERT_EQ(cli(base + stage).status, 0) << stage;
    }
    // the external answer replaces the built-in site predictor everywhere
    const auto preds = read_json(ws / "predictions.json");
    ASSERT_FALSE(preds.at("rows").empty());
    for (const auto &row : preds.at("rows")) {
        for (const auto &p : row.at("predictions")) EXPECT_EQ(p.at(0), 0);
    }
    EXPECT_TRUE(fs::exists(ws / "safetimes.json"));

    // an impossible tolerance makes the attack stage report a violation
    cfg["detector"].erase("external_predictor");
    cfg["attack"]["tolerance"] = -1.0;
    write_json(dir / "strict.json", cfg);
    EXPECT_EQ(cli("--config '" + (dir / "strict.json").string() + "' --workspace '" + (dir / "ws2").string() + "' run")
                  .status,
              3);
    fs::remove_all(dir);
}
