#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "valbound/clipping.hpp"
#include "valbound/envs.hpp"
#include "valbound/format.hpp"
#include "valbound/mlp.hpp"
#include "valbound/rng.hpp"

namespace valbound {

/// Fixed-capacity FIFO of (s, a, r, s', done) with flat float storage.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::size_t obs_dim);

    void push(std::span<const float> state, int action, float reward, std::span<const float> next_state, bool done);

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t obs_dim() const { return dim_; }

    struct Batch {
        Mlp<float>::Matrix states;  // obs_dim x B
        Mlp<float>::Matrix next_states;
        std::vector<int> actions;
        std::vector<float> rewards;
        std::vector<std::uint8_t> dones;
        std::size_t size() const { return actions.size(); }
    };

    /// Uniform with replacement.
    Batch sample(std::size_t batch_size, Rng& rng) const;

    /// i-th oldest stored transition as a batch of one.
    Batch at(std::size_t i) const;

private:
    void copy_into(std::size_t slot, Batch& out, std::size_t col) const;

    std::size_t capacity_;
    std::size_t dim_;
    std::size_t size_ = 0;
    std::size_t next_ = 0;
    std::vector<float> states_;
    std::vector<float> next_states_;
    std::vector<int> actions_;
    std::vector<float> rewards_;
    std::vector<std::uint8_t> dones_;
};

enum class OptimizerKind { sgd, adam };
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind k);

struct DqnConfig {
    double learning_rate = 0.004;
    std::size_t batch_size = 128;
    std::size_t buffer_size = 10000;
    double gamma = 0.98;
    std::size_t gradient_steps = 8;
    std::size_t learning_starts = 1000;
    double polyak = 1.0;
    std::size_t target_update_interval = 600;
    std::size_t train_freq = 16;
    std::size_t total_steps = 150000;
    double epsilon_start = 1.0;
    double epsilon_end = 0.07;
    double epsilon_fraction = 0.2;
    std::vector<int> hidden = {256, 256};
    ClipConfig clip{};
    OptimizerKind optimizer = OptimizerKind::adam;
    std::size_t eval_interval = 5000;
    std::size_t eval_episodes = 10;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Linear from epsilon_start to epsilon_end over fraction * total steps, flat after.
double epsilon_at(std::size_t step, const DqnConfig& config);

struct FaBounds {
    std::vector<float> lower;
    std::vector<float> upper;
    float online_spread;  // sup - inf of the online net's Delta' over the batch
    float target_spread;
    std::size_t fallbacks = 0;  // samples where the intersection was empty
};

/// Per-sample bounds from both networks with V_N(s) = max_a N(s)[a] and the
/// batch extrema of Delta'_N = r + gamma V_N(s') - V_N(s). Terminal rows
/// collapse to [r, r].
FaBounds fa_bounds(const ReplayBuffer::Batch& batch, const MlpParams& online, const MlpParams& target, double gamma);

/// Same, from precomputed network outputs (num_actions x B) on s and s'.
FaBounds fa_bounds_from_outputs(const ReplayBuffer::Batch& batch, const Mlp<float>::Matrix& online_s,
                                const Mlp<float>::Matrix& online_next, const Mlp<float>::Matrix& target_s,
                                const Mlp<float>::Matrix& target_next, double gamma);

struct TrainLogRow {
    std::size_t env_step;
    double mean_eval_reward;
    double bellman_loss;   // mean over gradient steps since the previous row
    double clip_loss;      // mean |q - clamp(q, L, U)| over the same steps
    double violation_sum;  // mean per batch of sum |y - clip(y)|
    double epsilon;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    CsvWriter to_csv() const;
};

struct DqnResult {
    TrainLog log;
    MlpParams online;
    std::size_t gradient_updates = 0;
    std::size_t hard_clip_breaches = 0;  // applied targets outside [lower, upper]
    std::size_t bound_fallbacks = 0;
};

/// Greedy rollouts; returns the mean undiscounted return.
double evaluate_greedy(const MlpParams& net, const MountainCarParams& env_params, std::size_t episodes, Rng& rng);

DqnResult dqn_train(const MountainCarParams& env_params, const DqnConfig& config);

}  // namespace valbound
