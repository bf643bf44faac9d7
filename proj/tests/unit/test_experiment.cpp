#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "valbound/experiment.hpp"
#include "valbound/format.hpp"

using namespace valbound;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("valbound_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path p = dir / "config.json";
    write_text(p, j.dump(2));
    return p;
}

struct RunResult {
    int code;
    std::string out, err;
};

RunResult run_config(const fs::path& config, std::optional<std::string> sub = std::nullopt) {
    std::ostringstream out, err;
    const int code = run(config, sub, std::nullopt, std::nullopt, out, err);
    return {code, out.str(), err.str()};
}

json tiny_mdp() {
    return {{"num_states", 2},
            {"num_actions", 2},
            {"gamma", 0.9},
            {"absorbing", json::array()},
            {"reward", {{0.0, 1.0}, {-1.0, 0.5}}},
            {"transition", {{{1.0, 0.0}, {0.0, 1.0}}, {{0.5, 0.5}, {0.0, 1.0}}}}};
}

json chain_task(double left, double right) {
    const int S = 5, A = 2;
    const int nxt[5][2] = {{3, 1}, {0, 2}, {1, 4}, {3, 3}, {4, 4}};
    json P = json::array(), R = json::array();
    for (int s = 0; s < S; ++s) {
        json ps = json::array(), rs = json::array();
        for (int a = 0; a < A; ++a) {
            std::vector<double> row(S, 0.0);
            row[nxt[s][a]] = 1.0;
            ps.push_back(row);
            rs.push_back(s == 3 ? left : (s == 4 ? right : -0.1));
        }
        P.push_back(ps);
        R.push_back(rs);
    }
    return {{"num_states", S}, {"num_actions", A}, {"gamma", 1.0}, {"absorbing", {3, 4}}, {"reward", R},
            {"transition", P}};
}

}  // namespace

TEST_CASE("schema errors exit 2 and name the field") {
    auto dir = scratch("schema");
    auto out = dir / "never";
    json base = {{"task", "solve"}, {"mdp", tiny_mdp()}, {"reg", {{"beta", 1.0}}}, {"output_dir", out.string()}};

    json neg = base;
    neg["reg"]["beta"] = -1.0;
    auto r = run_config(write_config(dir, neg));
    CHECK(r.code == 2);
    CHECK(r.err.find("reg.beta") != std::string::npos);

    json unknown = base;
    unknown["colour"] = "blue";
    r = run_config(write_config(dir, unknown));
    CHECK(r.code == 2);
    CHECK(r.err.find("colour") != std::string::npos);

    json nested = base;
    nested["reg"]["temperature"] = 2.0;
    r = run_config(write_config(dir, nested));
    CHECK(r.code == 2);
    CHECK(r.err.find("reg.temperature") != std::string::npos);

    json dqn = {{"task", "dqn"}, {"dqn", {{"batch_size", 0}}}, {"output_dir", out.string()}};
    r = run_config(write_config(dir, dqn));
    CHECK(r.code == 2);
    CHECK(r.err.find("dqn.batch_size") != std::string::npos);

    r = run_config(write_config(dir, base), "clip");
    CHECK(r.code == 2);
    CHECK(r.err.find("task") != std::string::npos);

    write_text(dir / "broken.json", "{ not json");
    CHECK(run_config(dir / "broken.json").code == 2);
    CHECK(run_config(dir / "missing.json").code == 2);

    // validation precedes side effects
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("runs are reproducible and the manifest is complete") {
    auto dir = scratch("repro");
    json cfg = {{"task", "clip"},
                {"maze", {{"random", {{"rows", 4}, {"cols", 5}}}, {"goal_mode", "continuing"}}},
                {"clip", {{"method", "hard"}}},
                {"seeds", {3, 4}},
                {"tolerances", {{"tol", 1e-8}}}};
    cfg["output_dir"] = (dir / "a").string();
    REQUIRE(run_config(write_config(dir, cfg)).code == 0);
    cfg["output_dir"] = (dir / "b").string();
    REQUIRE(run_config(write_config(dir, cfg)).code == 0);

    auto manifest = json::parse(read_text(dir / "a" / "manifest.json"));
    CHECK(manifest["status"] == "complete");
    CHECK(manifest["version"] == kVersionTag);
    CHECK(manifest["config"]["clip"]["method"] == "hard");
    CHECK(manifest["timings_seconds"].size() == 2);
    std::size_t csvs = 0;
    for (auto& [key, rel] : manifest["outputs"].items()) {
        const fs::path f = dir / "a" / rel.get<std::string>();
        CHECK(fs::exists(f));
        if (f.extension() == ".csv") {
            ++csvs;
            CHECK(read_text(f) == read_text(dir / "b" / rel.get<std::string>()));
        }
    }
    CHECK(csvs == 4);

    auto trace = read_text(dir / "a" / "seed_3" / "trace.csv");
    CHECK(trace.rfind("iteration,residual,inf_delta,sup_delta,mean_q,violation_sum\n", 0) == 0);

    // --seeds and --output overrides
    std::ostringstream out, err;
    CHECK(run(dir / "config.json", std::string("clip"), dir / "c", std::vector<std::uint64_t>{9}, out, err) == 0);
    CHECK(fs::exists(dir / "c" / "seed_9" / "q.csv"));
    CHECK_FALSE(fs::exists(dir / "c" / "seed_3"));
}

TEST_CASE("bounds task reports zero oracle violations") {
    auto dir = scratch("bounds");
    json cfg = {{"task", "bounds"},
                {"mdp", tiny_mdp()},
                {"reg", "standard"},
                {"estimate", {{"kind", "random"}, {"low", -3.0}, {"high", 3.0}}},
                {"oracle", true},
                {"seeds", {1, 2, 3}},
                {"output_dir", (dir / "o").string()}};
    auto r = run_config(write_config(dir, cfg));
    REQUIRE(r.code == 0);
    auto summary = json::parse(r.out);
    for (const auto& run : summary["runs"]) CHECK(run["oracle_violations"] == 0);
}

TEST_CASE("compose-check prints pass with a small residual") {
    auto dir = scratch("compose");
    json cfg = {{"task", "compose-check"},
                {"compose", {{"tasks", {chain_task(1.0, -1.0), chain_task(-1.0, 0.5)}}, {"weights", {0.7, 0.3}}}},
                {"output_dir", (dir / "o").string()}};
    auto r = run_config(write_config(dir, cfg), "compose-check");
    REQUIRE(r.code == 0);
    auto j = json::parse(r.out);
    CHECK(j["pass"] == true);
    CHECK(j["residual"].get<double>() <= 1e-8);

    cfg["compose"]["rule"] = "mean";
    r = run_config(write_config(dir, cfg));
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["pass"] == false);
}

TEST_CASE("maze figure data has one row per iteration") {
    auto dir = scratch("figure");
    ClipTrace trace;
    for (std::size_t k = 1; k <= 3; ++k) trace.rows.push_back({k, 1.0 / static_cast<double>(k), -0.5, 0.25, -2.0, 0.0, 0});
    emit_maze_figure_data(trace, dir / "t.csv");
    const auto text = read_text(dir / "t.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    std::istringstream lines(text);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "iteration,residual,inf_delta,sup_delta,mean_q,violation_sum");
    while (std::getline(lines, line)) {
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) CHECK(std::isfinite(std::stod(cell)));
    }
    CHECK_THROWS(emit_maze_figure_data(ClipTrace{}, dir / "empty.csv"));
}

TEST_CASE("confidence intervals and method comparison") {
    auto [m1, h1] = mean_ci95({4.0});
    CHECK(m1 == 4.0);
    CHECK(h1 == 0.0);
    auto [m, h] = mean_ci95({1.0, 2.0, 3.0, 4.0});
    CHECK(m == 2.5);
    CHECK(h == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
    CHECK_THROWS(mean_ci95({}));

    auto log_with = [](std::vector<double> violations, double reward) {
        TrainLog log;
        for (std::size_t k = 0; k < violations.size(); ++k)
            log.rows.push_back({1000 * (k + 1), reward, 0.0, 0.0, violations[k], 0.1});
        return log;
    };
    std::vector<MethodRuns> single{{"hard", {log_with({5, 4, 3, 2, 1, 1, 1, 0.5}, -150.0)}}};
    std::vector<std::string> warnings;
    auto j = compare_methods(single, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("single seed") != std::string::npos);
    CHECK(j["methods"]["hard"]["checkpoints"][0]["eval_reward_half_width"] == 0.0);
    CHECK(j["methods"]["hard"]["violation_trend"]["first_quartile_mean"] == 4.5);
    CHECK(j["methods"]["hard"]["violation_trend"]["last_quartile_mean"] == 0.75);
    CHECK(j["methods"]["hard"]["violation_trend"]["decreasing"] == true);
    CHECK(j["methods"]["hard"]["final_eval_reward_mean"] == -150.0);

    std::vector<MethodRuns> two{{"none", {log_with({1, 2}, -200.0), log_with({3, 4}, -180.0)}}};
    warnings.clear();
    auto k = compare_methods(two, &warnings);
    CHECK(warnings.empty());
    CHECK(k["methods"]["none"]["checkpoints"][1]["eval_reward_mean"] == -190.0);
    CHECK(k["methods"]["none"]["checkpoints"][1]["eval_reward_half_width"].get<double>() > 0.0);

    std::vector<MethodRuns> mismatched{{"none", {log_with({1, 2}, -200.0)}}, {"hard", {log_with({1, 2, 3}, -200.0)}}};
    CHECK_THROWS(compare_methods(mismatched));
}

TEST_CASE("parallel_for covers every index and rethrows") {
    std::vector<int> hits(50, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK_THROWS(parallel_for(5, [](std::size_t i) {
        if (i == 3) throw std::runtime_error("boom");
    }));
    CHECK(worker_count() >= 1);
}

TEST_CASE("bundled configs parse") {
    for (const char* name : {"compose_check", "maze_solve", "maze_bounds", "maze_clip", "maze_compare", "dqn",
                             "dqn_compare", "dqn_smoke"}) {
        CAPTURE(name);
        CHECK_NOTHROW(load_config(fs::path(VALBOUND_TEST_CONFIG_DIR) / (std::string(name) + ".json")));
    }
}
