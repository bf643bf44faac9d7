#include "valbound/envs.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

#include "valbound/format.hpp"

namespace valbound {

GoalMode parse_goal_mode(const std::string& name) {
    if (name == "terminal") return GoalMode::terminal;
    if (name == "continuing") return GoalMode::continuing;
    throw std::invalid_argument("unknown goal mode '" + name + "'");
}

std::string to_string(GoalMode m) { return m == GoalMode::terminal ? "terminal" : "continuing"; }

void MazeSpec::validate() const {
    if (rows.empty()) throw std::invalid_argument("maze: no rows");
    const std::size_t width = rows.front().size();
    if (width == 0) throw std::invalid_argument("maze: empty row");
    int starts = 0, goals = 0;
    for (const auto& r : rows) {
        if (r.size() != width) throw std::invalid_argument("maze: grid is not rectangular");
        for (char c : r) {
            if (c == 'S') ++starts;
            else if (c == 'G') ++goals;
            else if (c != '#' && c != '.') throw std::invalid_argument(std::string("maze: bad character '") + c + "'");
        }
    }
    if (starts != 1) throw std::invalid_argument("maze: need exactly one 'S'");
    if (goals != 1) throw std::invalid_argument("maze: need exactly one 'G'");
    if (p_intended < 0.0 || p_left < 0.0 || p_right < 0.0)
        throw std::invalid_argument("maze: slip probabilities must be nonnegative");
    if (std::abs(p_intended + p_left + p_right - 1.0) > 1e-12)
        throw std::invalid_argument("maze: slip probabilities must sum to 1");
    if (!std::isfinite(step_penalty) || !std::isfinite(goal_reward))
        throw std::invalid_argument("maze: rewards must be finite");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("maze: gamma must be in (0, 1]");
}

long Maze::state_of(int row, int col) const {
    for (std::size_t s = 0; s < cells.size(); ++s)
        if (cells[s].first == row && cells[s].second == col) return static_cast<long>(s);
    return -1;
}

namespace {

constexpr int kDr[4] = {-1, 0, 1, 0};
constexpr int kDc[4] = {0, 1, 0, -1};

bool bfs_reachable(const std::vector<std::string>& rows, std::pair<int, int> from, std::pair<int, int> to) {
    const int h = static_cast<int>(rows.size());
    const int w = static_cast<int>(rows.front().size());
    std::vector<char> seen(static_cast<std::size_t>(h * w), 0);
    std::deque<std::pair<int, int>> frontier{from};
    seen[from.first * w + from.second] = 1;
    while (!frontier.empty()) {
        auto [r, c] = frontier.front();
        frontier.pop_front();
        if (r == to.first && c == to.second) return true;
        for (int d = 0; d < 4; ++d) {
            const int nr = r + kDr[d], nc = c + kDc[d];
            if (nr < 0 || nr >= h || nc < 0 || nc >= w || rows[nr][nc] == '#') continue;
            if (seen[nr * w + nc]) continue;
            seen[nr * w + nc] = 1;
            frontier.emplace_back(nr, nc);
        }
    }
    return false;
}

}  // namespace

Maze maze_to_mdp(const MazeSpec& spec) {
    spec.validate();
    const int h = static_cast<int>(spec.rows.size());
    const int w = static_cast<int>(spec.rows.front().size());

    std::vector<long> index(static_cast<std::size_t>(h * w), -1);
    std::vector<std::pair<int, int>> cells;
    std::size_t start = 0, goal = 0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const char ch = spec.rows[r][c];
            if (ch == '#') continue;
            if (ch == 'S') start = cells.size();
            if (ch == 'G') goal = cells.size();
            index[r * w + c] = static_cast<long>(cells.size());
            cells.emplace_back(r, c);
        }
    }

    const std::size_t n = cells.size();
    auto move = [&](std::size_t s, int dir) -> std::size_t {
        const int nr = cells[s].first + kDr[dir], nc = cells[s].second + kDc[dir];
        if (nr < 0 || nr >= h || nc < 0 || nc >= w) return s;
        const long t = index[nr * w + nc];
        return t < 0 ? s : static_cast<std::size_t>(t);
    };

    std::vector<double> p(n * 4 * n, 0.0);
    RewardTable reward(n, 4, spec.step_penalty);
    for (std::size_t s = 0; s < n; ++s) {
        for (int a = 0; a < 4; ++a) {
            double* row = &p[(s * 4 + a) * n];
            if (s == goal) {
                row[s] = 1.0;
                reward(s, a) = spec.goal_reward;
                continue;
            }
            row[move(s, a)] += spec.p_intended;
            row[move(s, (a + 3) % 4)] += spec.p_left;
            row[move(s, (a + 1) % 4)] += spec.p_right;
        }
    }

    std::vector<std::size_t> absorbing;
    if (spec.goal_mode == GoalMode::terminal) absorbing.push_back(goal);
    const bool reachable = bfs_reachable(spec.rows, cells[start], cells[goal]);
    TabularMdp mdp(n, 4, std::move(p), std::move(reward), spec.gamma, std::move(absorbing));
    return {std::move(mdp), std::move(cells), start, goal, reachable};
}

std::vector<std::string> parse_maze_rows(const std::string& text) {
    std::vector<std::string> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (!line.empty()) rows.push_back(line);
    }
    return rows;
}

std::vector<std::string> load_maze_rows(const std::filesystem::path& path) { return parse_maze_rows(read_text(path)); }

std::vector<std::string> default_maze_rows() {
    return {
        "S..#....",
        ".#.#.##.",
        ".#...#..",
        ".####.#.",
        "......#.",
        ".##.#.#.",
        "..#.#...",
        "#...#.#G",
    };
}

MazeSpec default_maze_spec() {
    MazeSpec spec;
    spec.rows = default_maze_rows();
    return spec;
}

std::vector<std::string> random_maze_rows(std::size_t rows, std::size_t cols, double wall_prob, Rng& rng) {
    if (rows * cols < 2) throw std::invalid_argument("random maze: need at least two cells");
    if (!(wall_prob >= 0.0 && wall_prob < 1.0)) throw std::invalid_argument("random maze: wall_prob must be in [0, 1)");
    for (;;) {
        std::vector<std::string> grid(rows, std::string(cols, '.'));
        for (auto& r : grid)
            for (auto& c : r)
                if (uniform01(rng) < wall_prob) c = '#';
        grid.front().front() = 'S';
        grid.back().back() = 'G';
        const std::pair<int, int> goal{static_cast<int>(rows) - 1, static_cast<int>(cols) - 1};
        if (bfs_reachable(grid, {0, 0}, goal)) return grid;
    }
}

bool greedy_reaches_goal(const Maze& maze, const QTable& q, std::size_t max_steps) {
    const auto actions = greedy_actions(q);
    std::size_t s = maze.start;
    for (std::size_t t = 0; t < max_steps; ++t) {
        if (s == maze.goal) return true;
        const auto [r, c] = maze.cells[s];
        const int a = static_cast<int>(actions[s]);
        const long next = maze.state_of(r + kDr[a], c + kDc[a]);
        if (next < 0) return false;  // greedy action bumps into a wall
        s = static_cast<std::size_t>(next);
    }
    return s == maze.goal;
}

void MountainCarParams::validate() const {
    if (!(min_position < goal_position && goal_position <= max_position))
        throw std::invalid_argument("mountaincar: position range must contain the goal");
    if (!(max_speed > 0.0 && force > 0.0 && gravity > 0.0))
        throw std::invalid_argument("mountaincar: speed, force and gravity must be positive");
    if (!(min_position <= start_low && start_low <= start_high && start_high <= max_position))
        throw std::invalid_argument("mountaincar: start range outside the track");
    if (max_episode_steps == 0) throw std::invalid_argument("mountaincar: max_episode_steps must be positive");
}

MountainCarStep mountaincar_step(const MountainCarState& state, int action, const MountainCarParams& params) {
    if (action < 0 || action > 2) throw std::invalid_argument("mountaincar: invalid action " + std::to_string(action));
    double v = state.velocity + (action - 1) * params.force - std::cos(3.0 * state.position) * params.gravity;
    v = std::clamp(v, -params.max_speed, params.max_speed);
    double x = state.position + v;
    x = std::clamp(x, params.min_position, params.max_position);
    if (x == params.min_position && v < 0.0) v = 0.0;
    return {{x, v}, params.step_reward, x >= params.goal_position};
}

MountainCarEnv::MountainCarEnv(MountainCarParams params) : params_(params) { params_.validate(); }

MountainCarState MountainCarEnv::reset(Rng& rng) {
    state_ = {uniform(rng, params_.start_low, params_.start_high), 0.0};
    steps_ = 0;
    return state_;
}

void MountainCarEnv::reset_to(MountainCarState state) {
    state_ = state;
    steps_ = 0;
}

MountainCarEnv::Transition MountainCarEnv::step(int action) {
    const auto out = mountaincar_step(state_, action, params_);
    state_ = out.state;
    ++steps_;
    return {state_, out.reward, out.terminated, !out.terminated && steps_ >= params_.max_episode_steps};
}

std::array<float, 2> MountainCarEnv::features_of(const MountainCarState& s) const {
    const double mid = 0.5 * (params_.min_position + params_.max_position);
    const double half = 0.5 * (params_.max_position - params_.min_position);
    return {static_cast<float>((s.position - mid) / half), static_cast<float>(s.velocity / params_.max_speed)};
}

std::pair<TabularMdp, IdentityActionMap> add_identity_action(const TabularMdp& mdp,
                                                              const std::vector<double>& identity_reward) {
    const std::size_t n = mdp.num_states();
    const std::size_t a_old = mdp.num_actions();
    const std::size_t a_new = a_old + 1;
    if (identity_reward.size() != n) throw std::invalid_argument("add_identity_action: one reward per state");

    std::vector<double> p(n * a_new * n, 0.0);
    RewardTable r(n, a_new);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < a_old; ++a) {
            for (std::size_t t = 0; t < n; ++t) p[(s * a_new + a) * n + t] = mdp.transition(s, a, t);
            r(s, a) = mdp.reward(s, a);
        }
        p[(s * a_new + a_old) * n + s] = 1.0;
        r(s, a_old) = identity_reward[s];
    }
    TabularMdp out(n, a_new, std::move(p), std::move(r), mdp.gamma(), mdp.absorbing());
    auto map = verify_identity_actions(out, std::vector<std::size_t>(n, a_old));
    return {std::move(out), std::move(map)};
}

std::pair<TabularMdp, IdentityActionMap> add_identity_action(const TabularMdp& mdp, double identity_reward) {
    return add_identity_action(mdp, std::vector<double>(mdp.num_states(), identity_reward));
}

}  // namespace valbound
