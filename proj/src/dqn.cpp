#include "valbound/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace valbound {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t obs_dim)
    : capacity_(capacity),
      dim_(obs_dim),
      states_(capacity * obs_dim),
      next_states_(capacity * obs_dim),
      actions_(capacity),
      rewards_(capacity),
      dones_(capacity) {
    if (capacity == 0 || obs_dim == 0) throw std::invalid_argument("replay buffer: capacity and obs_dim must be positive");
}

void ReplayBuffer::push(std::span<const float> state, int action, float reward, std::span<const float> next_state,
                        bool done) {
    if (state.size() != dim_ || next_state.size() != dim_)
        throw std::invalid_argument("replay buffer: observation size mismatch");
    std::copy(state.begin(), state.end(), states_.begin() + next_ * dim_);
    std::copy(next_state.begin(), next_state.end(), next_states_.begin() + next_ * dim_);
    actions_[next_] = action;
    rewards_[next_] = reward;
    dones_[next_] = done ? 1 : 0;
    next_ = (next_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

void ReplayBuffer::copy_into(std::size_t slot, Batch& out, std::size_t col) const {
    for (std::size_t d = 0; d < dim_; ++d) {
        out.states(d, col) = states_[slot * dim_ + d];
        out.next_states(d, col) = next_states_[slot * dim_ + d];
    }
    out.actions[col] = actions_[slot];
    out.rewards[col] = rewards_[slot];
    out.dones[col] = dones_[slot];
}

namespace {

ReplayBuffer::Batch empty_batch(std::size_t dim, std::size_t n) {
    ReplayBuffer::Batch b;
    b.states.resize(dim, n);
    b.next_states.resize(dim, n);
    b.actions.resize(n);
    b.rewards.resize(n);
    b.dones.resize(n);
    return b;
}

}  // namespace

ReplayBuffer::Batch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
    if (size_ == 0) throw std::logic_error("replay buffer: sampling from an empty buffer");
    Batch b = empty_batch(dim_, batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) copy_into(uniform_index(rng, size_), b, i);
    return b;
}

ReplayBuffer::Batch ReplayBuffer::at(std::size_t i) const {
    if (i >= size_) throw std::out_of_range("replay buffer: index out of range");
    const std::size_t oldest = size_ < capacity_ ? 0 : next_;
    Batch b = empty_batch(dim_, 1);
    copy_into((oldest + i) % capacity_, b, 0);
    return b;
}

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

void DqnConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("dqn config: ") + what);
    };
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
    require(batch_size > 0, "batch_size must be positive");
    require(buffer_size > 0, "buffer_size must be positive");
    require(gamma > 0.0 && gamma < 1.0, "gamma must be in (0, 1)");
    require(gradient_steps > 0, "gradient_steps must be positive");
    require(polyak > 0.0 && polyak <= 1.0, "polyak must be in (0, 1]");
    require(target_update_interval > 0, "target_update_interval must be positive");
    require(train_freq > 0, "train_freq must be positive");
    require(total_steps > 0, "total_steps must be positive");
    require(epsilon_start >= 0.0 && epsilon_start <= 1.0, "epsilon_start must be in [0, 1]");
    require(epsilon_end >= 0.0 && epsilon_end <= 1.0, "epsilon_end must be in [0, 1]");
    require(epsilon_fraction > 0.0 && epsilon_fraction <= 1.0, "epsilon_fraction must be in (0, 1]");
    require(!hidden.empty(), "hidden must list at least one layer");
    for (int h : hidden) require(h > 0, "hidden sizes must be positive");
    require(clip.method != ClipMethod::soft || clip.eta > 0.0, "clip.eta must be positive for soft clipping");
    require(eval_interval > 0, "eval_interval must be positive");
    require(eval_episodes > 0, "eval_episodes must be positive");
}

double epsilon_at(std::size_t step, const DqnConfig& config) {
    const double span = config.epsilon_fraction * static_cast<double>(config.total_steps);
    const double progress = std::min(1.0, static_cast<double>(step) / span);
    if (progress >= 1.0) return config.epsilon_end;
    return config.epsilon_start + progress * (config.epsilon_end - config.epsilon_start);
}

FaBounds fa_bounds_from_outputs(const ReplayBuffer::Batch& batch, const Mlp<float>::Matrix& online_s,
                                const Mlp<float>::Matrix& online_next, const Mlp<float>::Matrix& target_s,
                                const Mlp<float>::Matrix& target_next, double gamma) {
    const std::size_t n = batch.size();
    if (n == 0) throw std::invalid_argument("fa_bounds: empty batch");
    const float g = static_cast<float>(gamma);
    const float horizon = static_cast<float>(1.0 / (1.0 - gamma));

    struct NetBounds {
        std::vector<float> lower, upper;
        float spread;
    };
    auto per_net = [&](const Mlp<float>::Matrix& out_s, const Mlp<float>::Matrix& out_next) {
        Eigen::VectorXf v_s = out_s.colwise().maxCoeff().transpose();
        Eigen::VectorXf v_next = out_next.colwise().maxCoeff().transpose();
        float lo = std::numeric_limits<float>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < n; ++i) {
            const float boot = batch.dones[i] ? 0.0f : v_next(i);
            const float d = batch.rewards[i] + g * boot - v_s(i);
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        NetBounds b{std::vector<float>(n), std::vector<float>(n), hi - lo};
        for (std::size_t i = 0; i < n; ++i) {
            if (batch.dones[i]) {
                b.lower[i] = b.upper[i] = batch.rewards[i];
            } else {
                b.lower[i] = batch.rewards[i] + g * (v_next(i) + lo * horizon);
                b.upper[i] = batch.rewards[i] + g * (v_next(i) + hi * horizon);
            }
        }
        return b;
    };

    NetBounds on = per_net(online_s, online_next);
    NetBounds tg = per_net(target_s, target_next);
    FaBounds out{std::vector<float>(n), std::vector<float>(n), on.spread, tg.spread, 0};
    const NetBounds& narrow = on.spread <= tg.spread ? on : tg;
    for (std::size_t i = 0; i < n; ++i) {
        const float lo = std::max(on.lower[i], tg.lower[i]);
        const float hi = std::min(on.upper[i], tg.upper[i]);
        if (lo <= hi) {
            out.lower[i] = lo;
            out.upper[i] = hi;
        } else {
            out.lower[i] = narrow.lower[i];
            out.upper[i] = narrow.upper[i];
            ++out.fallbacks;
        }
    }
    return out;
}

FaBounds fa_bounds(const ReplayBuffer::Batch& batch, const MlpParams& online, const MlpParams& target, double gamma) {
    if (batch.size() == 0) throw std::invalid_argument("fa_bounds: empty batch");
    return fa_bounds_from_outputs(batch, mlp_forward(online, batch.states), mlp_forward(online, batch.next_states),
                                  mlp_forward(target, batch.states), mlp_forward(target, batch.next_states), gamma);
}

CsvWriter TrainLog::to_csv() const {
    CsvWriter csv({"env_step", "mean_eval_reward", "bellman_loss", "clip_loss", "violation_sum", "epsilon"});
    for (const auto& r : rows)
        csv.add_row(std::vector<std::string>{std::to_string(r.env_step), format_real(r.mean_eval_reward),
                                             format_real(r.bellman_loss), format_real(r.clip_loss),
                                             format_real(r.violation_sum), format_real(r.epsilon)});
    return csv;
}

namespace {

int greedy_action(const MlpParams& net, const std::array<float, 2>& features) {
    Mlp<float>::Matrix x(2, 1);
    x << features[0], features[1];
    Mlp<float>::Matrix q = mlp_forward(net, x);
    Eigen::Index best = 0;
    q.col(0).maxCoeff(&best);
    return static_cast<int>(best);
}

void sync_target(MlpParams& target, const MlpParams& online, double polyak) {
    if (polyak >= 1.0) {
        target = online;
        return;
    }
    const float t = static_cast<float>(polyak);
    for (std::size_t l = 0; l < target.num_layers(); ++l) {
        target.weights[l] = t * online.weights[l] + (1.0f - t) * target.weights[l];
        target.biases[l] = t * online.biases[l] + (1.0f - t) * target.biases[l];
    }
}

}  // namespace

double evaluate_greedy(const MlpParams& net, const MountainCarParams& env_params, std::size_t episodes, Rng& rng) {
    MountainCarEnv env(env_params);
    double total = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
        env.reset(rng);
        for (;;) {
            auto tr = env.step(greedy_action(net, env.features()));
            total += tr.reward;
            if (tr.terminated || tr.truncated) break;
        }
    }
    return total / static_cast<double>(episodes);
}

DqnResult dqn_train(const MountainCarParams& env_params, const DqnConfig& config) {
    config.validate();
    env_params.validate();

    Rng init_rng = make_rng(config.seed, "dqn.init");
    Rng env_rng = make_rng(config.seed, "dqn.env");
    Rng explore_rng = make_rng(config.seed, "dqn.explore");
    Rng replay_rng = make_rng(config.seed, "dqn.replay");
    Rng eval_rng = make_rng(config.seed, "dqn.eval");

    std::vector<int> sizes{2};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(MountainCarEnv::kNumActions);

    DqnResult result;
    MlpParams& online = result.online;
    online = MlpParams::random(sizes, init_rng);
    MlpParams target = online;
    AdamOptimizer<float> adam(online, static_cast<float>(config.learning_rate));
    MlpGradients<float> grads = MlpGradients<float>::zeros_like(online);

    ReplayBuffer buffer(config.buffer_size, 2);
    MountainCarEnv env(env_params);
    env.reset(env_rng);

    const float g = static_cast<float>(config.gamma);
    const auto method = config.clip.method;
    double sum_bellman = 0.0, sum_clip = 0.0, sum_violation = 0.0;
    std::size_t window_updates = 0;

    MlpTrace<float> online_trace, online_next_trace, target_trace, target_next_trace;
    std::vector<float> targets(config.batch_size);
    std::vector<float> lower(config.batch_size), upper(config.batch_size);

    for (std::size_t t = 0; t < config.total_steps; ++t) {
        const double eps = epsilon_at(t, config);
        const auto features = env.features();
        int action;
        if (uniform01(explore_rng) < eps) {
            action = static_cast<int>(uniform_index(explore_rng, MountainCarEnv::kNumActions));
        } else {
            action = greedy_action(online, features);
        }
        const auto tr = env.step(action);
        const auto next_features = env.features();
        buffer.push(features, action, static_cast<float>(tr.reward), next_features, tr.terminated);
        if (tr.terminated || tr.truncated) env.reset(env_rng);

        const std::size_t done_steps = t + 1;
        if (done_steps > config.learning_starts && done_steps % config.train_freq == 0) {
            for (std::size_t k = 0; k < config.gradient_steps; ++k) {
                auto batch = buffer.sample(config.batch_size, replay_rng);
                mlp_forward_into(online, batch.states, online_trace);
                mlp_forward_into(online, batch.next_states, online_next_trace);
                mlp_forward_into(target, batch.states, target_trace);
                mlp_forward_into(target, batch.next_states, target_next_trace);
                const auto& online_s = online_trace.output();
                const auto& online_next = online_next_trace.output();
                const auto& target_s = target_trace.output();
                const auto& target_next = target_next_trace.output();
                FaBounds bounds =
                    fa_bounds_from_outputs(batch, online_s, online_next, target_s, target_next, config.gamma);
                result.bound_fallbacks += bounds.fallbacks;

                double violation = 0.0;
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    const float raw = batch.rewards[i] + (batch.dones[i] ? 0.0f : g * target_next.col(i).maxCoeff());
                    const float lo = bounds.lower[i], hi = bounds.upper[i];
                    const float clipped = std::min(std::max(raw, lo), hi);
                    const float chi = std::abs(raw - clipped);
                    violation += chi;
                    float applied = raw;
                    switch (method) {
                        case ClipMethod::none:
                        case ClipMethod::soft: break;
                        case ClipMethod::hard: applied = clipped; break;
                        case ClipMethod::smoothed: {
                            const float tau = chi / (1.0f + chi);
                            applied = chi == 0.0f ? raw : (1.0f - tau) * raw + tau * clipped;
                            break;
                        }
                    }
                    if (method == ClipMethod::hard && (applied < lo || applied > hi)) ++result.hard_clip_breaches;
                    targets[i] = applied;
                    lower[i] = lo;
                    upper[i] = hi;
                }

                ClipPenalty<float> penalty{lower, upper, static_cast<float>(config.clip.eta)};
                const LossTerms loss = mlp_gradients<float>(online, online_trace, targets, batch.actions,
                                                            method == ClipMethod::soft ? &penalty : nullptr, grads);
                if (!std::isfinite(loss.bellman) || !std::isfinite(loss.clip)) {
                    std::ostringstream msg;
                    msg << "dqn_train: non-finite loss at env step " << done_steps << " (bellman " << loss.bellman
                        << ", clip " << loss.clip << ")";
                    throw std::runtime_error(msg.str());
                }
                if (config.optimizer == OptimizerKind::sgd) {
                    sgd_step(online, grads, static_cast<float>(config.learning_rate));
                } else {
                    adam.step(online, grads);
                }
                ++result.gradient_updates;
                ++window_updates;
                sum_bellman += loss.bellman;
                // penalty statistics are tracked for every method, not only soft
                double clip_stat = 0.0;
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    const float q = online_s(batch.actions[i], i);
                    clip_stat += q > upper[i] ? q - upper[i] : (q < lower[i] ? lower[i] - q : 0.0f);
                }
                sum_clip += clip_stat / static_cast<double>(batch.size());
                sum_violation += violation;
            }
        }

        if (done_steps % config.target_update_interval == 0) sync_target(target, online, config.polyak);

        if (done_steps % config.eval_interval == 0) {
            TrainLogRow row{done_steps, evaluate_greedy(online, env_params, config.eval_episodes, eval_rng), 0.0, 0.0,
                            0.0, eps};
            if (window_updates > 0) {
                const double w = static_cast<double>(window_updates);
                row.bellman_loss = sum_bellman / w;
                row.clip_loss = sum_clip / w;
                row.violation_sum = sum_violation / w;
            }
            result.log.rows.push_back(row);
            sum_bellman = sum_clip = sum_violation = 0.0;
            window_updates = 0;
        }
    }
    return result;
}

}  // namespace valbound
