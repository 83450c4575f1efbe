#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>

#include "multishot/config.hpp"
#include "multishot/report.hpp"

using namespace multishot;

TEST_CASE("toml subset parsing") {
    const std::string text = R"(
# top comment
[solver]
mode = "single_shot"   # trailing comment
max_iters = 42
grad_tol = 1e-7

[weights]
w_sm_joint = 2.5

[train]
freeze_encoder = false
)";
    const TomlTable t = TomlTable::parse_string(text);
    REQUIRE(t.get_string("solver.mode", "") == "single_shot");
    REQUIRE(t.get_int("solver.max_iters", 0) == 42);
    REQUIRE(t.get_double("solver.grad_tol", 0) == Approx(1e-7));
    REQUIRE(t.get_double("weights.w_sm_joint", 0) == Approx(2.5));
    REQUIRE(t.get_bool("train.freeze_encoder", true) == false);
    REQUIRE(t.get_int("solver.missing_key", 17) == 17);

    const SolverConfig cfg = solver_config_from_toml(t);
    REQUIRE(cfg.mode == FitMode::single_shot);
    REQUIRE(cfg.max_iters == 42);
    REQUIRE(cfg.weights.w_sm_joint == Approx(2.5));
    REQUIRE(cfg.weights.w_proj == Approx(1.0));  // default preserved

    const TrainConfig tc = train_config_from_toml(t);
    REQUIRE(tc.freeze_encoder == false);
    REQUIRE(tc.window == 16);
}

TEST_CASE("toml errors carry the offending line") {
    try {
        TomlTable::parse_string("[solver]\nmax_iters 42\n");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
    }
    REQUIRE_THROWS_AS(TomlTable::parse_string("[unclosed\n"), DataError);

    const TomlTable t = TomlTable::parse_string("[solver]\nmode = \"nope\"\n");
    REQUIRE_THROWS_AS(solver_config_from_toml(t), DataError);
}

TEST_CASE("csv reports round trip through compare") {
    namespace fs = std::filesystem;
    const std::string pa = (fs::temp_directory_path() / "report_a.csv").string();
    const std::string pb = (fs::temp_directory_path() / "report_b.csv").string();
    std::ofstream(pa) << "alpha,pck,pairs\n0.05,40,12\n0.1,62.5,12\n0.2,81,12\n";
    std::ofstream(pb) << "alpha,pck,pairs\n0.05,35,12\n0.1,58,12\n0.2,84,12\n";

    const CsvReport a = read_csv_report(pa);
    const CsvReport b = read_csv_report(pb);
    REQUIRE(a.rows.size() == 3);
    const std::string text = compare_reports(a, b, "multi", "single");
    REQUIRE(text.find("paired keys: 3") != std::string::npos);
    REQUIRE(text.find("wins: multi 2, single 1") != std::string::npos);
    REQUIRE(text.find("verdict: multi > single") != std::string::npos);
    fs::remove(pa);
    fs::remove(pb);
}

TEST_CASE("pck report csv is monotone-friendly and labeled") {
    PckReport r;
    r.alphas = {0.05, 0.1};
    r.pck = {50.0, 75.0};
    r.pairs = 4;
    r.per_joint = Eigen::MatrixXd::Zero(2, 3);
    const std::string csv = pck_report_csv(r);
    REQUIRE(csv.find("alpha,pck,pairs\n") == 0);
    REQUIRE(csv.find("0.05,50,4") != std::string::npos);

    const std::string table = emit_report({"multi_shot", "single_frame"}, {r, r});
    REQUIRE(table.find("label,pck@0.05,pck@0.1") == 0);
    REQUIRE(table.find("multi_shot,50,75") != std::string::npos);

    REQUIRE_THROWS_AS(emit_report({}, {}), DataError);
}

TEST_CASE("manifest lands next to the artifact atomically") {
    namespace fs = std::filesystem;
    const std::string artifact = (fs::temp_directory_path() / "artifact.csv").string();
    write_file_atomic(artifact, "alpha,pck,pairs\n");
    RunManifest m;
    m.command = "eval";
    m.seed = 7;
    m.inputs = {"in.jsonl"};
    m.outputs = {artifact};
    m.wall_seconds = 0.25;
    write_manifest(artifact, m);
    std::ifstream in(artifact + ".manifest.json");
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    REQUIRE(j.at("command") == "eval");
    REQUIRE(j.at("tool_version") == kToolVersion);
    REQUIRE_FALSE(fs::exists(artifact + ".manifest.json.tmp"));
    fs::remove(artifact);
    fs::remove(artifact + ".manifest.json");
}
