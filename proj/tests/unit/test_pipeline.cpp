#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "pipeline.hpp"

using namespace wfdef;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
    const auto p = fs::temp_directory_path() / ("wfdef_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

PipelineConfig tiny() {
    PipelineConfig c;
    c.seed = 5;
    c.synth.sites = 6;
    c.synth.traces_per_site = 40;
    c.synth.duration_max = 6.0;
    c.grid_steps = 3;
    c.ks = {2, 3};
    c.Ls = {100};
    c.attack_configs = {{2, 100}};
    c.detector_trees = 10;
    c.attack_trees = 10;
    c.checkpoint_max = 6.0;
    return c;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
    auto c = tiny();
    c.mode = "out-of-training";
    c.cut_measure = CutMeasure::distance;
    c.external_predictor = "python3 predictor.py";
    c.set_weights = "uniform";
    c.split = {6, 2, 2};
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    auto other = c;
    other.alpha = 0.8;
    EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(Config, PartialDocumentsKeepDefaults) {
    const auto c = config_from_json(nlohmann::json::parse(R"({"seed": 9, "detector": {"alpha": 0.5}})"));
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.synth.seed, 9u);
    EXPECT_DOUBLE_EQ(c.alpha, 0.5);
    EXPECT_EQ(c.ks, (std::vector<std::size_t>{2, 4, 7, 15, 30}));
    EXPECT_EQ(c.Ls, (std::vector<std::uint32_t>{100, 500, 1000}));
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, Rejections) {
    using nlohmann::json;
    EXPECT_THROW(config_from_json(json::parse(R"({"sed": 1})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"grid": {"rho": 1}})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"dataset": {"synth": {"size": 1}}})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"seed": "x"})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"dataset": {"split": [1, 2]}})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"patterns": {"cut_measure": "other"}})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"attack": {"configs": [[7]]}})")), UsageError);

    auto c = tiny();
    c.attack_configs = {{7, 100}};
    EXPECT_THROW(c.validate(), UsageError);
    c = tiny();
    c.ks = {1};
    EXPECT_THROW(c.validate(), UsageError);
    c = tiny();
    c.alpha = 0;
    EXPECT_THROW(c.validate(), UsageError);
    c = tiny();
    c.dataset_source = "directory";
    EXPECT_THROW(c.validate(), UsageError);
}

TEST(Workspace, HashCheckedReads) {
    const auto dir = scratch("ws");
    Workspace a{dir, "aaaa"};
    a.write("x.json", {{"value", 1}});
    EXPECT_EQ(a.read("x.json", "stage").at("value"), 1);
    Workspace b{dir, "bbbb"};
    try {
        b.read("x.json", "stage");
        FAIL() << "expected a hash mismatch";
    } catch (const DataError &e) {
        EXPECT_NE(std::string{e.what()}.find("wfdef stage"), std::string::npos);
    }
    EXPECT_THROW(a.read("missing.json", "stage"), DataError);
    fs::remove_all(dir);
}

TEST(Pipeline, IngestDirectory) {
    const auto dir = scratch("ingest");
    auto c = tiny();
    c.dataset_source = "directory";
    c.dataset_path = WFDEF_TEST_DATA "/corpus";
    std::ostringstream log;
    Pipeline p{c, dir, 1, log};
    p.ingest(c.dataset_path);
    const auto meta = read_json(dir / "dataset.json");
    EXPECT_EQ(meta.at("traces"), 4);
    EXPECT_EQ(meta.at("sites"), (std::vector<int>{0, 1}));
    EXPECT_TRUE(fs::exists(dir / "dataset/traces/1-1"));
    fs::remove_all(dir);
}

TEST(Pipeline, SmallEndToEndRun) {
    const auto dir = scratch("run");
    std::ostringstream log;
    Pipeline p{tiny(), dir, 1, log};
    p.run_all();
    for (const char *f : {"dataset.json", "pareto.json", "patterns.json", "sets.json", "safetimes.json",
                          "simulate.json", "bounds.json", "attack.json", "bounds_matrix.csv", "report/overhead_comparison.csv",
                          "report/attack_vs_bound.csv", "report/purity.csv", "report/savings_hist.csv",
                          "report/time_budget.csv"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    const auto sets = read_json(dir / "sets.json");
    ASSERT_EQ(sets.at("runs").size(), 2u);
    for (const auto &run : sets.at("runs")) {
        const auto k = run.at("k").get<std::size_t>();
        for (const auto &s : run.at("sets")) EXPECT_GE(s.at("pattern_ids").size(), k);
    }
    const auto bounds = read_json(dir / "bounds.json");
    for (const auto &cell : bounds.at("cells")) {
        const double b = cell.at("mean_bound").get<double>();
        EXPECT_GT(b, 0.0);
        EXPECT_LE(b, 1.0);
    }

    // a later stage under a different config refuses the stale artifacts
    auto changed = tiny();
    changed.alpha = 0.8;
    Pipeline q{changed, dir, 1, log};
    EXPECT_THROW(q.simulate(), DataError);
    fs::remove_all(dir);
}
