#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "valbound/clipping.hpp"
#include "valbound/dqn.hpp"
#include "valbound/envs.hpp"
#include "valbound/mdp.hpp"

namespace valbound {

inline constexpr const char* kVersionTag = "valbound 0.1.0";

/// Config rejected before any side effect; `field` is the dotted path.
class SchemaError : public std::runtime_error {
public:
    SchemaError(std::string field, const std::string& message)
        : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

enum class TaskKind { solve, bounds, clip, compose_check, dqn, compare };

TaskKind parse_task(const std::string& name);
std::string to_string(TaskKind t);

struct MazeSource {
    MazeSpec spec;  // rows filled unless random
    bool random = false;
    std::size_t random_rows = 8;
    std::size_t random_cols = 8;
    double wall_prob = 0.25;

    /// Concrete spec for one seed.
    MazeSpec resolve(std::uint64_t seed) const;
};

struct EstimateSpec {
    enum class Kind { zero, random, sweeps } kind = Kind::sweeps;
    std::size_t sweeps = 5;
    double low = -1.0;
    double high = 1.0;
};

struct ExperimentConfig {
    TaskKind task = TaskKind::solve;
    std::optional<TabularMdp> mdp;
    std::optional<MazeSource> maze;
    std::optional<double> beta;  // empty: standard mode
    bool reg_given = false;
    ClipConfig clip{};
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "out";
    double tol = kDefaultTol;
    std::size_t max_iter = kDefaultMaxIter;
    double compose_tol = 1e-8;
    EstimateSpec estimate{};
    bool oracle = false;
    std::vector<TabularMdp> compose_tasks;
    std::vector<double> compose_weights;
    double compose_tau = 1.0;
    std::string compose_rule = "logsumexp_weighted";
    DqnConfig dqn{};
    MountainCarParams env{};
    std::vector<ClipMethod> methods{ClipMethod::none, ClipMethod::hard, ClipMethod::soft, ClipMethod::smoothed};
    nlohmann::json echo;  // the config as read
};

/// Full schema validation; relative paths resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Executes the config; writes the manifest and artifacts under
/// config.output_dir. Returns the JSON summary that is also printed.
nlohmann::json run_experiment(const ExperimentConfig& config, std::ostream& log);

/// CLI entry: 0 on success, 2 on schema errors, 1 on runtime failures.
int run(const std::filesystem::path& config_path, const std::optional<std::string>& subcommand,
        const std::optional<std::filesystem::path>& output_override,
        const std::optional<std::vector<std::uint64_t>>& seeds_override, std::ostream& out, std::ostream& err);

/// iteration,residual,inf_delta,sup_delta,mean_q,violation_sum
void emit_maze_figure_data(const ClipTrace& trace, const std::filesystem::path& path);

struct MethodRuns {
    std::string method;
    std::vector<TrainLog> logs;  // one per seed
};

/// Per-method per-checkpoint mean and 95% normal half-width of eval reward
/// and violation_sum. Throws when the methods' checkpoints differ.
nlohmann::json compare_methods(const std::vector<MethodRuns>& runs, std::vector<std::string>* warnings = nullptr);

/// Mean and 1.96 * sd / sqrt(n); half-width 0 for n < 2.
std::pair<double, double> mean_ci95(const std::vector<double>& xs);

/// Worker count: VALBOUND_THREADS if set, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads; rethrows the
/// first failure.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace valbound
