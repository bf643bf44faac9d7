#include "valbound/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "valbound/bounds.hpp"
#include "valbound/composition.hpp"
#include "valbound/format.hpp"
#include "valbound/mdp_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace valbound {

TaskKind parse_task(const std::string& name) {
    if (name == "solve") return TaskKind::solve;
    if (name == "bounds") return TaskKind::bounds;
    if (name == "clip") return TaskKind::clip;
    if (name == "compose-check") return TaskKind::compose_check;
    if (name == "dqn") return TaskKind::dqn;
    if (name == "compare") return TaskKind::compare;
    throw std::invalid_argument("unknown task '" + name + "'");
}

std::string to_string(TaskKind t) {
    switch (t) {
        case TaskKind::solve: return "solve";
        case TaskKind::bounds: return "bounds";
        case TaskKind::clip: return "clip";
        case TaskKind::compose_check: return "compose-check";
        case TaskKind::dqn: return "dqn";
        case TaskKind::compare: return "compare";
    }
    return "?";
}

MazeSpec MazeSource::resolve(std::uint64_t seed) const {
    MazeSpec out = spec;
    if (random) {
        Rng rng = make_rng(seed, "maze.layout");
        out.rows = random_maze_rows(random_rows, random_cols, wall_prob, rng);
    }
    return out;
}

namespace {

// ---- schema helpers -------------------------------------------------------

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw SchemaError(path.empty() ? "config" : path, "must be an object");
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    expect_object(j, path);
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw SchemaError(join(path, it.key()), "unknown key");
    }
}

double real_field(const json& obj, const std::string& key, const std::string& path, double fallback,
                  bool (*accept)(double) = nullptr, const char* requirement = nullptr) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw SchemaError(join(path, key), "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || (accept && !accept(x)))
        throw SchemaError(join(path, key), requirement ? requirement : "must be a finite real");
    return x;
}

std::size_t count_field(const json& obj, const std::string& key, const std::string& path, std::size_t fallback,
                        bool allow_zero = false) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < (allow_zero ? 0 : 1))
        throw SchemaError(join(path, key), allow_zero ? "must be a nonnegative integer" : "must be a positive integer");
    return v.get<std::size_t>();
}

std::string string_field(const json& obj, const std::string& key, const std::string& path, std::string fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string()) throw SchemaError(join(path, key), "must be a string");
    return obj.at(key).get<std::string>();
}

bool positive(double x) { return x > 0.0; }
bool unit_open(double x) { return x > 0.0 && x < 1.0; }
bool unit_half_open(double x) { return x > 0.0 && x <= 1.0; }
bool probability(double x) { return x >= 0.0 && x <= 1.0; }

fs::path resolve_path(const std::string& p, const fs::path& base) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

TabularMdp parse_mdp(const json& j, const std::string& path, const fs::path& base) {
    try {
        if (j.is_object() && j.contains("file")) {
            reject_unknown(j, path, {"file"});
            const auto file = resolve_path(j.at("file").get<std::string>(), base);
            return mdp_from_json(json::parse(read_text(file)));
        }
        return mdp_from_json(j);
    } catch (const SchemaError&) {
        throw;
    } catch (const std::exception& e) {
        throw SchemaError(path, e.what());
    }
}

MazeSource parse_maze(const json& j, const fs::path& base) {
    const std::string path = "maze";
    reject_unknown(j, path,
                   {"layout", "file", "rows", "random", "slip", "step_penalty", "goal_reward", "gamma", "beta",
                    "goal_mode"});
    MazeSource src;
    MazeSpec& spec = src.spec;
    int sources = (j.contains("layout") ? 1 : 0) + (j.contains("file") ? 1 : 0) + (j.contains("rows") ? 1 : 0) +
                  (j.contains("random") ? 1 : 0);
    if (sources > 1) throw SchemaError(path, "give at most one of layout, file, rows, random");

    spec.rows = default_maze_rows();
    if (j.contains("layout")) {
        if (string_field(j, "layout", path, "") != "default")
            throw SchemaError("maze.layout", "only \"default\" is bundled");
    }
    if (j.contains("file")) {
        const auto file = resolve_path(string_field(j, "file", path, ""), base);
        try {
            spec.rows = load_maze_rows(file);
        } catch (const std::exception& e) {
            throw SchemaError("maze.file", e.what());
        }
    }
    if (j.contains("rows")) {
        if (!j.at("rows").is_array()) throw SchemaError("maze.rows", "must be an array of strings");
        spec.rows.clear();
        for (const auto& r : j.at("rows")) {
            if (!r.is_string()) throw SchemaError("maze.rows", "must be an array of strings");
            spec.rows.push_back(r.get<std::string>());
        }
    }
    if (j.contains("random")) {
        const auto& r = j.at("random");
        reject_unknown(r, "maze.random", {"rows", "cols", "wall_prob"});
        src.random = true;
        src.random_rows = count_field(r, "rows", "maze.random", 8);
        src.random_cols = count_field(r, "cols", "maze.random", 8);
        src.wall_prob = real_field(r, "wall_prob", "maze.random", 0.25, [](double x) { return x >= 0.0 && x < 1.0; },
                                   "must be in [0, 1)");
        if (src.random_rows * src.random_cols < 2) throw SchemaError("maze.random", "need at least two cells");
        spec.rows = {"SG"};  // placeholder; replaced per seed
    }
    if (j.contains("slip")) {
        const auto& s = j.at("slip");
        if (!s.is_array() || s.size() != 3) throw SchemaError("maze.slip", "must be [p_intended, p_left, p_right]");
        for (const auto& x : s)
            if (!x.is_number()) throw SchemaError("maze.slip", "entries must be numbers");
        spec.p_intended = s[0].get<double>();
        spec.p_left = s[1].get<double>();
        spec.p_right = s[2].get<double>();
    }
    spec.step_penalty = real_field(j, "step_penalty", path, spec.step_penalty);
    spec.goal_reward = real_field(j, "goal_reward", path, spec.goal_reward);
    spec.gamma = real_field(j, "gamma", path, spec.gamma, unit_half_open, "must be in (0, 1]");
    spec.beta = real_field(j, "beta", path, spec.beta, positive, "must be a positive finite real");
    try {
        spec.goal_mode = parse_goal_mode(string_field(j, "goal_mode", path, "terminal"));
    } catch (const std::invalid_argument& e) {
        throw SchemaError("maze.goal_mode", e.what());
    }
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw SchemaError(path, e.what());
    }
    return src;
}

void parse_dqn(const json& j, DqnConfig& c) {
    const std::string p = "dqn";
    reject_unknown(j, p,
                   {"learning_rate", "batch_size", "buffer_size", "gamma", "gradient_steps", "learning_starts", "polyak",
                    "target_update_interval", "train_freq", "total_steps", "epsilon_start", "epsilon_end",
                    "epsilon_fraction", "hidden", "optimizer", "eval_interval", "eval_episodes"});
    c.learning_rate = real_field(j, "learning_rate", p, c.learning_rate, positive, "must be positive");
    c.batch_size = count_field(j, "batch_size", p, c.batch_size);
    c.buffer_size = count_field(j, "buffer_size", p, c.buffer_size);
    c.gamma = real_field(j, "gamma", p, c.gamma, unit_open, "must be in (0, 1)");
    c.gradient_steps = count_field(j, "gradient_steps", p, c.gradient_steps);
    c.learning_starts = count_field(j, "learning_starts", p, c.learning_starts, true);
    c.polyak = real_field(j, "polyak", p, c.polyak, unit_half_open, "must be in (0, 1]");
    c.target_update_interval = count_field(j, "target_update_interval", p, c.target_update_interval);
    c.train_freq = count_field(j, "train_freq", p, c.train_freq);
    c.total_steps = count_field(j, "total_steps", p, c.total_steps);
    c.epsilon_start = real_field(j, "epsilon_start", p, c.epsilon_start, probability, "must be in [0, 1]");
    c.epsilon_end = real_field(j, "epsilon_end", p, c.epsilon_end, probability, "must be in [0, 1]");
    c.epsilon_fraction = real_field(j, "epsilon_fraction", p, c.epsilon_fraction, unit_half_open, "must be in (0, 1]");
    if (j.contains("hidden")) {
        const auto& h = j.at("hidden");
        if (!h.is_array() || h.empty()) throw SchemaError("dqn.hidden", "must be a nonempty array of positive integers");
        c.hidden.clear();
        for (const auto& x : h) {
            if (!x.is_number_integer() || x.get<long long>() < 1)
                throw SchemaError("dqn.hidden", "must be a nonempty array of positive integers");
            c.hidden.push_back(x.get<int>());
        }
    }
    try {
        c.optimizer = parse_optimizer(string_field(j, "optimizer", p, to_string(c.optimizer)));
    } catch (const std::invalid_argument& e) {
        throw SchemaError("dqn.optimizer", e.what());
    }
    c.eval_interval = count_field(j, "eval_interval", p, c.eval_interval);
    c.eval_episodes = count_field(j, "eval_episodes", p, c.eval_episodes);
}

void parse_env(const json& j, MountainCarParams& e) {
    const std::string p = "env";
    reject_unknown(j, p,
                   {"name", "min_position", "max_position", "max_speed", "force", "gravity", "goal_position",
                    "step_reward", "max_episode_steps", "start_low", "start_high"});
    if (string_field(j, "name", p, "mountaincar") != "mountaincar")
        throw SchemaError("env.name", "only \"mountaincar\" is supported");
    e.min_position = real_field(j, "min_position", p, e.min_position);
    e.max_position = real_field(j, "max_position", p, e.max_position);
    e.max_speed = real_field(j, "max_speed", p, e.max_speed, positive, "must be positive");
    e.force = real_field(j, "force", p, e.force, positive, "must be positive");
    e.gravity = real_field(j, "gravity", p, e.gravity, positive, "must be positive");
    e.goal_position = real_field(j, "goal_position", p, e.goal_position);
    e.step_reward = real_field(j, "step_reward", p, e.step_reward);
    e.max_episode_steps = count_field(j, "max_episode_steps", p, e.max_episode_steps);
    e.start_low = real_field(j, "start_low", p, e.start_low);
    e.start_high = real_field(j, "start_high", p, e.start_high);
    try {
        e.validate();
    } catch (const std::invalid_argument& ex) {
        throw SchemaError(p, ex.what());
    }
}

}  // namespace

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
    reject_unknown(j, "",
                   {"task", "mdp", "maze", "env", "reg", "clip", "seeds", "output_dir", "tolerances", "estimate",
                    "oracle", "compose", "dqn", "methods"});
    ExperimentConfig c;
    c.echo = j;
    if (!j.contains("task")) throw SchemaError("task", "required");
    try {
        c.task = parse_task(string_field(j, "task", "", ""));
    } catch (const std::invalid_argument& e) {
        throw SchemaError("task", e.what());
    }

    if (j.contains("mdp") && j.contains("maze")) throw SchemaError("mdp", "give either mdp or maze, not both");
    if (j.contains("mdp")) c.mdp = parse_mdp(j.at("mdp"), "mdp", base_dir);
    if (j.contains("maze")) c.maze = parse_maze(j.at("maze"), base_dir);
    if (j.contains("env")) parse_env(j.at("env"), c.env);

    if (j.contains("reg")) {
        const auto& r = j.at("reg");
        c.reg_given = true;
        if (r.is_string()) {
            if (r.get<std::string>() != "standard") throw SchemaError("reg", "must be \"standard\" or {\"beta\": b}");
        } else {
            reject_unknown(r, "reg", {"beta"});
            if (!r.contains("beta")) throw SchemaError("reg.beta", "required");
            const auto& b = r.at("beta");
            if (b.is_string() && b.get<std::string>() == "standard") {
                // same as reg: "standard"
            } else {
                c.beta = real_field(r, "beta", "reg", 0.0, positive, "must be a positive finite real");
            }
        }
    }

    if (j.contains("clip")) {
        const auto& cl = j.at("clip");
        reject_unknown(cl, "clip", {"method", "eta"});
        try {
            c.clip.method = parse_clip_method(string_field(cl, "method", "clip", "none"));
        } catch (const std::invalid_argument& e) {
            throw SchemaError("clip.method", e.what());
        }
        c.clip.eta = real_field(cl, "eta", "clip", c.clip.eta, positive, "must be positive");
    }

    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        if (!s.is_array() || s.empty()) throw SchemaError("seeds", "must be a nonempty array of integers");
        c.seeds.clear();
        for (const auto& x : s) {
            if (!x.is_number_integer() || x.get<long long>() < 0)
                throw SchemaError("seeds", "must be a nonempty array of nonnegative integers");
            c.seeds.push_back(x.get<std::uint64_t>());
        }
    }
    if (j.contains("output_dir")) c.output_dir = resolve_path(string_field(j, "output_dir", "", ""), base_dir);
    else c.output_dir = base_dir / "out";

    if (j.contains("tolerances")) {
        const auto& t = j.at("tolerances");
        reject_unknown(t, "tolerances", {"tol", "max_iter", "compose"});
        c.tol = real_field(t, "tol", "tolerances", c.tol, positive, "must be positive");
        c.max_iter = count_field(t, "max_iter", "tolerances", c.max_iter);
        c.compose_tol = real_field(t, "compose", "tolerances", c.compose_tol, positive, "must be positive");
    }

    if (j.contains("estimate")) {
        const auto& e = j.at("estimate");
        reject_unknown(e, "estimate", {"kind", "sweeps", "low", "high"});
        const auto kind = string_field(e, "kind", "estimate", "sweeps");
        if (kind == "zero") c.estimate.kind = EstimateSpec::Kind::zero;
        else if (kind == "random") c.estimate.kind = EstimateSpec::Kind::random;
        else if (kind == "sweeps") c.estimate.kind = EstimateSpec::Kind::sweeps;
        else throw SchemaError("estimate.kind", "must be zero, random or sweeps");
        c.estimate.sweeps = count_field(e, "sweeps", "estimate", c.estimate.sweeps, true);
        c.estimate.low = real_field(e, "low", "estimate", c.estimate.low);
        c.estimate.high = real_field(e, "high", "estimate", c.estimate.high);
        if (c.estimate.low > c.estimate.high) throw SchemaError("estimate.low", "must not exceed estimate.high");
    }
    if (j.contains("oracle")) {
        if (!j.at("oracle").is_boolean()) throw SchemaError("oracle", "must be a boolean");
        c.oracle = j.at("oracle").get<bool>();
    }

    if (j.contains("compose")) {
        const auto& cm = j.at("compose");
        reject_unknown(cm, "compose", {"tasks", "weights", "tau", "rule"});
        if (!cm.contains("tasks") || !cm.at("tasks").is_array() || cm.at("tasks").empty())
            throw SchemaError("compose.tasks", "must be a nonempty array of MDPs");
        for (std::size_t i = 0; i < cm.at("tasks").size(); ++i)
            c.compose_tasks.push_back(parse_mdp(cm.at("tasks")[i], "compose.tasks[" + std::to_string(i) + "]", base_dir));
        if (cm.contains("weights")) {
            if (!cm.at("weights").is_array()) throw SchemaError("compose.weights", "must be an array");
            for (const auto& w : cm.at("weights")) {
                if (!w.is_number() || !(w.get<double>() > 0.0))
                    throw SchemaError("compose.weights", "entries must be positive numbers");
                c.compose_weights.push_back(w.get<double>());
            }
        } else {
            c.compose_weights.assign(c.compose_tasks.size(), 1.0);
        }
        if (c.compose_weights.size() != c.compose_tasks.size())
            throw SchemaError("compose.weights", "need one weight per task");
        c.compose_tau = real_field(cm, "tau", "compose", c.compose_tau, positive, "must be positive");
        c.compose_rule = string_field(cm, "rule", "compose", c.compose_rule);
        if (c.compose_rule != "logsumexp_weighted" && c.compose_rule != "max" && c.compose_rule != "mean")
            throw SchemaError("compose.rule", "must be logsumexp_weighted, max or mean");
    }

    if (j.contains("dqn")) parse_dqn(j.at("dqn"), c.dqn);
    c.dqn.clip = c.clip;

    if (j.contains("methods")) {
        const auto& m = j.at("methods");
        if (!m.is_array() || m.empty()) throw SchemaError("methods", "must be a nonempty array of clip methods");
        c.methods.clear();
        for (const auto& x : m) {
            if (!x.is_string()) throw SchemaError("methods", "entries must be strings");
            try {
                c.methods.push_back(parse_clip_method(x.get<std::string>()));
            } catch (const std::invalid_argument& e) {
                throw SchemaError("methods", e.what());
            }
        }
    }

    // task-specific requirements
    const bool tabular = c.task == TaskKind::solve || c.task == TaskKind::bounds || c.task == TaskKind::clip;
    if (tabular && !c.mdp && !c.maze) throw SchemaError("mdp", "required (or maze) for task " + to_string(c.task));
    if ((tabular || c.task == TaskKind::compare) && c.mdp && !c.reg_given) throw SchemaError("reg", "required with an explicit mdp");
    if (c.task == TaskKind::compose_check && c.compose_tasks.empty()) throw SchemaError("compose", "required");
    if ((c.task == TaskKind::bounds || c.task == TaskKind::clip) && c.mdp && c.mdp->gamma() >= 1.0)
        throw SchemaError("mdp.gamma", "bounds need gamma < 1");
    if ((c.task == TaskKind::bounds || c.task == TaskKind::clip) && c.maze && c.maze->spec.gamma >= 1.0)
        throw SchemaError("maze.gamma", "bounds need gamma < 1");
    if (c.task == TaskKind::clip && c.clip.method == ClipMethod::soft && !(c.clip.eta > 0.0))
        throw SchemaError("clip.eta", "must be positive");
    if (c.task == TaskKind::dqn || (c.task == TaskKind::compare && !c.maze)) {
        try {
            c.dqn.validate();
        } catch (const std::invalid_argument& e) {
            throw SchemaError("dqn", e.what());
        }
    }
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::string text;
    try {
        text = read_text(path);
    } catch (const std::exception& e) {
        throw SchemaError("config", e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError("config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void emit_maze_figure_data(const ClipTrace& trace, const fs::path& path) {
    if (trace.rows.empty()) throw std::invalid_argument("emit_maze_figure_data: empty trace");
    trace.to_csv().write(path);
}

std::pair<double, double> mean_ci95(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_ci95: no samples");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    return {mean, 1.96 * sd / std::sqrt(static_cast<double>(xs.size()))};
}

json compare_methods(const std::vector<MethodRuns>& runs, std::vector<std::string>* warnings) {
    if (runs.empty()) throw std::invalid_argument("compare_methods: no methods");
    std::vector<std::size_t> steps;
    for (const auto& r : runs.front().logs.front().rows) steps.push_back(r.env_step);
    for (const auto& m : runs) {
        if (m.logs.empty()) throw std::invalid_argument("compare_methods: method " + m.method + " has no runs");
        for (const auto& log : m.logs) {
            std::vector<std::size_t> s;
            for (const auto& r : log.rows) s.push_back(r.env_step);
            if (s != steps) throw std::invalid_argument("compare_methods: mismatched budgets for method " + m.method);
        }
    }

    json out;
    out["seeds"] = runs.front().logs.size();
    out["methods"] = json::object();
    bool single_seed = false;
    for (const auto& m : runs) {
        if (m.logs.size() < 2) single_seed = true;
        json checkpoints = json::array();
        std::vector<double> violation_means;
        for (std::size_t k = 0; k < steps.size(); ++k) {
            std::vector<double> rew, vio;
            for (const auto& log : m.logs) {
                rew.push_back(log.rows[k].mean_eval_reward);
                vio.push_back(log.rows[k].violation_sum);
            }
            auto [rm, rh] = mean_ci95(rew);
            auto [vm, vh] = mean_ci95(vio);
            violation_means.push_back(vm);
            checkpoints.push_back({{"env_step", steps[k]},
                                   {"eval_reward_mean", rm},
                                   {"eval_reward_half_width", rh},
                                   {"violation_sum_mean", vm},
                                   {"violation_sum_half_width", vh}});
        }
        const std::size_t q = std::max<std::size_t>(1, steps.size() / 4);
        double first = 0.0, last = 0.0;
        for (std::size_t k = 0; k < q; ++k) {
            first += violation_means[k];
            last += violation_means[steps.size() - q + k];
        }
        first /= static_cast<double>(q);
        last /= static_cast<double>(q);
        json entry;
        entry["checkpoints"] = std::move(checkpoints);
        entry["violation_trend"] = {{"first_quartile_mean", first}, {"last_quartile_mean", last},
                                    {"decreasing", last < first}};
        entry["final_eval_reward_mean"] = entry["checkpoints"].back()["eval_reward_mean"];
        out["methods"][m.method] = std::move(entry);
    }
    json warn = json::array();
    if (single_seed) {
        const std::string w = "single seed: confidence half-widths reported as 0";
        warn.push_back(w);
        if (warnings) warnings->push_back(w);
    }
    out["warnings"] = warn;
    return out;
}

std::size_t worker_count() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VALBOUND_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    }
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

namespace {

struct Problem {
    TabularMdp mdp;
    RegularizationSpec reg;
    std::optional<Maze> maze;
};

Problem resolve_problem(const ExperimentConfig& c, std::uint64_t seed) {
    std::optional<Maze> maze;
    std::optional<TabularMdp> mdp = c.mdp;
    double default_beta = 0.0;
    if (c.maze) {
        maze = maze_to_mdp(c.maze->resolve(seed));
        mdp = maze->mdp;
        default_beta = c.maze->spec.beta;
    }
    const auto S = mdp->num_states(), A = mdp->num_actions();
    RegularizationSpec reg = RegularizationSpec::standard(S, A);
    if (c.reg_given) {
        if (c.beta) reg = RegularizationSpec::soft_uniform(*c.beta, S, A);
    } else {
        reg = RegularizationSpec::soft_uniform(default_beta, S, A);
    }
    return {*mdp, reg, maze};
}

CsvWriter q_csv(const QTable& q) {
    CsvWriter csv({"state", "action", "q"});
    for (std::size_t s = 0; s < q.num_states(); ++s)
        for (std::size_t a = 0; a < q.num_actions(); ++a)
            csv.add_row(std::vector<std::string>{std::to_string(s), std::to_string(a), format_real(q(s, a))});
    return csv;
}

QTable make_estimate(const ExperimentConfig& c, const Problem& p, std::uint64_t seed) {
    QTable q(p.mdp.num_states(), p.mdp.num_actions(), 0.0);
    switch (c.estimate.kind) {
        case EstimateSpec::Kind::zero: break;
        case EstimateSpec::Kind::random: {
            Rng rng = make_rng(seed, "bounds.estimate");
            for (auto& x : q.values()) x = uniform(rng, c.estimate.low, c.estimate.high);
            break;
        }
        case EstimateSpec::Kind::sweeps:
            for (std::size_t k = 0; k < c.estimate.sweeps; ++k) q = backup(p.mdp, p.reg, q);
            break;
    }
    return q;
}

struct SeedOutput {
    json summary;
    std::vector<std::string> files;
    double seconds = 0.0;
};

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

SeedOutput run_tabular_seed(const ExperimentConfig& c, std::uint64_t seed, const fs::path& root) {
    SeedOutput out;
    const Problem p = resolve_problem(c, seed);
    const std::string dir = seed_dir(seed);
    out.summary["seed"] = seed;
    out.summary["num_states"] = p.mdp.num_states();
    out.summary["num_actions"] = p.mdp.num_actions();
    if (p.maze) out.summary["goal_reachable"] = p.maze->goal_reachable;

    if (c.task == TaskKind::solve) {
        auto report = solve(p.mdp, p.reg, c.tol, c.max_iter);
        q_csv(report.q).write(root / dir / "q.csv");
        out.files.push_back(dir + "/q.csv");
        out.summary["iterations"] = report.iterations;
        out.summary["residual"] = report.residual;
        if (p.maze) out.summary["greedy_reaches_goal"] = greedy_reaches_goal(*p.maze, report.q);
    } else if (c.task == TaskKind::bounds) {
        QTable est = make_estimate(c, p, seed);
        BoundPair b = bounds_from_estimate(p.mdp, p.reg, est);
        DeltaField d = p.reg.is_standard() ? delta_standard(p.mdp, hard_state_value(est)) : delta_soft(p.mdp, p.reg, est);
        CsvWriter csv({"state", "action", "lower", "upper", "delta"});
        for (std::size_t s = 0; s < est.num_states(); ++s)
            for (std::size_t a = 0; a < est.num_actions(); ++a)
                csv.add_row(std::vector<std::string>{std::to_string(s), std::to_string(a), format_real(b.lower(s, a)),
                                                     format_real(b.upper(s, a)), format_real(d.delta(s, a))});
        csv.write(root / dir / "bounds.csv");
        out.files.push_back(dir + "/bounds.csv");
        out.summary["inf_delta"] = b.inf_delta;
        out.summary["sup_delta"] = b.sup_delta;
        out.summary["horizon"] = b.horizon;
        if (c.oracle) {
            QTable qs = solve(p.mdp, p.reg, 1e-12, c.max_iter).q;
            std::size_t violations = 0;
            for (std::size_t i = 0; i < qs.size(); ++i) {
                const double v = qs.values()[i];
                if (v < b.lower.values()[i] - 1e-9 || v > b.upper.values()[i] + 1e-9) ++violations;
            }
            out.summary["oracle_violations"] = violations;
        }
    } else {
        ClipRun run = clipped_value_iteration(p.mdp, p.reg, c.clip, c.tol, c.max_iter);
        emit_maze_figure_data(run.trace, root / dir / "trace.csv");
        q_csv(run.report.q).write(root / dir / "q.csv");
        out.files.push_back(dir + "/trace.csv");
        out.files.push_back(dir + "/q.csv");
        out.summary["method"] = to_string(c.clip.method);
        out.summary["iterations"] = run.report.iterations;
        out.summary["residual"] = run.report.residual;
        out.summary["final_violation_sum"] = run.trace.rows.back().violation_sum;
        if (auto k = run.trace.iterations_to(1e-6)) out.summary["iterations_to_1e-6"] = *k;
    }
    return out;
}

SeedOutput run_dqn_seed(const ExperimentConfig& c, DqnConfig cfg, std::uint64_t seed, const fs::path& root,
                        const std::string& dir, TrainLog* log_out) {
    SeedOutput out;
    cfg.seed = seed;
    DqnResult res = dqn_train(c.env, cfg);
    res.log.to_csv().write(root / dir / "train_log.csv");
    write_text(root / dir / "checkpoint.json", dump_json(mlp_to_json(res.online), -1) + "\n");
    out.files = {dir + "/train_log.csv", dir + "/checkpoint.json"};
    out.summary = {{"seed", seed},
                   {"method", to_string(cfg.clip.method)},
                   {"final_eval_reward", res.log.rows.empty() ? 0.0 : res.log.rows.back().mean_eval_reward},
                   {"gradient_updates", res.gradient_updates},
                   {"hard_clip_breaches", res.hard_clip_breaches},
                   {"bound_fallbacks", res.bound_fallbacks}};
    if (log_out) *log_out = std::move(res.log);
    return out;
}

template <typename Fn>
SeedOutput timed(Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    SeedOutput out = fn();
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace

json run_experiment(const ExperimentConfig& c, std::ostream& log) {
    const fs::path root = c.output_dir;
    fs::create_directories(root);

    json manifest;
    manifest["version"] = kVersionTag;
    manifest["task"] = to_string(c.task);
    manifest["config"] = c.echo;
    manifest["seeds"] = c.seeds;
    manifest["status"] = "running";
    manifest["outputs"] = json::object();
    manifest["timings_seconds"] = json::object();
    write_text(root / "manifest.json", dump_json(manifest) + "\n");

    json summary;
    summary["task"] = to_string(c.task);
    std::vector<SeedOutput> results;

    switch (c.task) {
        case TaskKind::solve:
        case TaskKind::bounds:
        case TaskKind::clip: {
            results.resize(c.seeds.size());
            parallel_for(c.seeds.size(), [&](std::size_t i) {
                results[i] = timed([&] { return run_tabular_seed(c, c.seeds[i], root); });
            });
            break;
        }
        case TaskKind::compose_check: {
            CompositionSpec spec;
            spec.weights = c.compose_weights;
            spec.tau = c.compose_tau;
            spec.rule = parse_composition_rule(c.compose_rule);
            SeedOutput o = timed([&] {
                SeedOutput r;
                auto report = verify_exact_composition(c.compose_tasks, spec, c.compose_tol);
                r.summary = {{"pass", report.pass}, {"residual", report.residual}, {"tol", report.tol},
                             {"weights", report.weights}, {"tau", report.tau}, {"rule", c.compose_rule}};
                return r;
            });
            results.push_back(std::move(o));
            break;
        }
        case TaskKind::dqn: {
            results.resize(c.seeds.size());
            parallel_for(c.seeds.size(), [&](std::size_t i) {
                results[i] = timed([&] { return run_dqn_seed(c, c.dqn, c.seeds[i], root, seed_dir(c.seeds[i]), nullptr); });
            });
            break;
        }
        case TaskKind::compare: {
            const std::size_t n_seeds = c.seeds.size();
            const std::size_t jobs = c.methods.size() * n_seeds;
            results.resize(jobs);
            if (c.maze || c.mdp) {
                std::vector<std::size_t> iters(jobs, 0);
                parallel_for(jobs, [&](std::size_t j) {
                    const auto method = c.methods[j / n_seeds];
                    const auto seed = c.seeds[j % n_seeds];
                    results[j] = timed([&] {
                        SeedOutput r;
                        const Problem p = resolve_problem(c, seed);
                        ClipConfig cc{method, c.clip.eta};
                        ClipRun run = clipped_value_iteration(p.mdp, p.reg, cc, c.tol, c.max_iter);
                        const std::string dir = to_string(method) + "/" + seed_dir(seed);
                        emit_maze_figure_data(run.trace, root / dir / "trace.csv");
                        r.files.push_back(dir + "/trace.csv");
                        iters[j] = run.report.iterations;
                        r.summary = {{"seed", seed}, {"method", to_string(method)}, {"iterations", run.report.iterations}};
                        return r;
                    });
                });
                json methods = json::object();
                double none_mean = std::numeric_limits<double>::quiet_NaN();
                for (std::size_t m = 0; m < c.methods.size(); ++m) {
                    std::vector<double> xs;
                    for (std::size_t s = 0; s < n_seeds; ++s) xs.push_back(static_cast<double>(iters[m * n_seeds + s]));
                    auto [mean, hw] = mean_ci95(xs);
                    methods[to_string(c.methods[m])] = {{"iterations", xs}, {"mean", mean}, {"half_width", hw}};
                    if (c.methods[m] == ClipMethod::none) none_mean = mean;
                }
                if (!std::isnan(none_mean))
                    for (auto& [name, entry] : methods.items())
                        entry["le_none"] = entry["mean"].get<double>() <= none_mean;
                summary["iterations_to_tol"] = methods;
                if (n_seeds < 2) summary["warnings"] = {"single seed: confidence half-widths reported as 0"};
            } else {
                std::vector<TrainLog> logs(jobs);
                parallel_for(jobs, [&](std::size_t j) {
                    DqnConfig cfg = c.dqn;
                    cfg.clip = {c.methods[j / n_seeds], c.clip.eta};
                    const auto seed = c.seeds[j % n_seeds];
                    const std::string dir = to_string(cfg.clip.method) + "/" + seed_dir(seed);
                    results[j] = timed([&] { return run_dqn_seed(c, cfg, seed, root, dir, &logs[j]); });
                });
                std::vector<MethodRuns> runs;
                for (std::size_t m = 0; m < c.methods.size(); ++m) {
                    MethodRuns mr{to_string(c.methods[m]), {}};
                    for (std::size_t s = 0; s < n_seeds; ++s) mr.logs.push_back(logs[m * n_seeds + s]);
                    runs.push_back(std::move(mr));
                }
                std::vector<std::string> warnings;
                summary["comparison"] = compare_methods(runs, &warnings);
                for (const auto& w : warnings) log << "warning: " << w << "\n";
            }
            break;
        }
    }

    json per_run = json::array();
    for (const auto& r : results) {
        per_run.push_back(r.summary);
        for (const auto& f : r.files) manifest["outputs"][f] = f;
    }
    if (c.task == TaskKind::compose_check) {
        summary.update(results.front().summary);
    } else {
        summary["runs"] = per_run;
    }
    write_text(root / "summary.json", dump_json(summary) + "\n");

    for (std::size_t i = 0; i < results.size(); ++i) manifest["timings_seconds"][std::to_string(i)] = results[i].seconds;
    manifest["outputs"]["summary"] = "summary.json";
    manifest["status"] = "complete";
    write_text(root / "manifest.json", dump_json(manifest) + "\n");
    return summary;
}

int run(const fs::path& config_path, const std::optional<std::string>& subcommand,
        const std::optional<fs::path>& output_override, const std::optional<std::vector<std::uint64_t>>& seeds_override,
        std::ostream& out, std::ostream& err) {
    ExperimentConfig config;
    try {
        config = load_config(config_path);
        if (subcommand && parse_task(*subcommand) != config.task)
            throw SchemaError("task", "config task '" + to_string(config.task) + "' does not match subcommand '" +
                                          *subcommand + "'");
        if (seeds_override) {
            if (seeds_override->empty()) throw SchemaError("seeds", "must be nonempty");
            config.seeds = *seeds_override;
        }
        if (output_override) config.output_dir = *output_override;
    } catch (const SchemaError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        json summary = run_experiment(config, err);
        if (config.task == TaskKind::compose_check) {
            out << dump_json({{"pass", summary["pass"]}, {"residual", summary["residual"]}}, -1) << "\n";
        } else {
            out << dump_json(summary) << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace valbound
