#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "valbound/bounds.hpp"
#include "valbound/mdp.hpp"
#include "valbound/rng.hpp"

namespace valbound {

enum class GoalMode {
    terminal,    // G pinned: reaching it pays goal_reward once, nothing after
    continuing,  // G self-loops and pays goal_reward on every step spent there
};

GoalMode parse_goal_mode(const std::string& name);
std::string to_string(GoalMode m);

struct MazeSpec {
    std::vector<std::string> rows;  // '#' wall, '.' open, 'S' start, 'G' goal
    double p_intended = 0.5;
    double p_left = 0.25;
    double p_right = 0.25;
    double step_penalty = -0.1;
    double goal_reward = 1.0;
    double gamma = 0.98;
    double beta = 0.1;
    GoalMode goal_mode = GoalMode::terminal;

    /// Throws std::invalid_argument on malformed grids or slip.
    void validate() const;
};

enum MazeAction : std::size_t { kUp = 0, kRight = 1, kDown = 2, kLeft = 3 };

struct Maze {
    TabularMdp mdp;
    std::vector<std::pair<int, int>> cells;  // (row, col) of each state
    std::size_t start;
    std::size_t goal;
    bool goal_reachable;

    /// Cell index of (row, col), or -1 for walls and out-of-grid.
    long state_of(int row, int col) const;
};

Maze maze_to_mdp(const MazeSpec& spec);

/// ASCII rows from text: blank lines and trailing whitespace are dropped.
std::vector<std::string> parse_maze_rows(const std::string& text);
std::vector<std::string> load_maze_rows(const std::filesystem::path& path);

/// The bundled 8x8 layout.
std::vector<std::string> default_maze_rows();
MazeSpec default_maze_spec();

/// Random rectangular maze with S at the top-left and G at the bottom-right,
/// redrawn until G is reachable.
std::vector<std::string> random_maze_rows(std::size_t rows, std::size_t cols, double wall_prob, Rng& rng);

/// Follows the greedy action's intended move from start; true when G is
/// reached within max_steps.
bool greedy_reaches_goal(const Maze& maze, const QTable& q, std::size_t max_steps = 1000);

struct MountainCarParams {
    double min_position = -1.2;
    double max_position = 0.6;
    double max_speed = 0.07;
    double force = 0.001;
    double gravity = 0.0025;
    double goal_position = 0.5;
    double step_reward = -1.0;
    std::size_t max_episode_steps = 200;
    double start_low = -0.6;
    double start_high = -0.4;

    void validate() const;
};

struct MountainCarState {
    double position;
    double velocity;
};

enum MountainCarAction : int { kPushLeft = 0, kNoPush = 1, kPushRight = 2 };

struct MountainCarStep {
    MountainCarState state;
    double reward;
    bool terminated;  // goal reached
};

/// One deterministic step of the canonical dynamics. Throws on an invalid
/// action index.
MountainCarStep mountaincar_step(const MountainCarState& state, int action, const MountainCarParams& params);

/// Single-trajectory environment with the episode step cap.
class MountainCarEnv {
public:
    explicit MountainCarEnv(MountainCarParams params = {});

    MountainCarState reset(Rng& rng);
    void reset_to(MountainCarState state);

    struct Transition {
        MountainCarState state;
        double reward;
        bool terminated;
        bool truncated;
    };
    Transition step(int action);

    const MountainCarState& state() const { return state_; }
    std::size_t steps() const { return steps_; }
    const MountainCarParams& params() const { return params_; }

    /// Position and velocity rescaled to [-1, 1].
    std::array<float, 2> features() const { return features_of(state_); }
    std::array<float, 2> features_of(const MountainCarState& s) const;

    static constexpr int kNumActions = 3;

private:
    MountainCarParams params_;
    MountainCarState state_{};
    std::size_t steps_ = 0;
};

/// Appends one action per state that stays put, rewarded identity_reward[s]
/// (absorbing states keep their pinned semantics).
std::pair<TabularMdp, IdentityActionMap> add_identity_action(const TabularMdp& mdp,
                                                              const std::vector<double>& identity_reward);
std::pair<TabularMdp, IdentityActionMap> add_identity_action(const TabularMdp& mdp, double identity_reward);

}  // namespace valbound
