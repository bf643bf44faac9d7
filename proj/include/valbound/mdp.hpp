#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "valbound/table.hpp"

namespace valbound {

/// Raised by iterative solvers that exhaust their iteration budget.
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, std::size_t iterations, double residual)
        : std::runtime_error(what), iterations_(iterations), residual_(residual) {}
    std::size_t iterations() const { return iterations_; }
    double residual() const { return residual_; }

private:
    std::size_t iterations_;
    double residual_;
};

struct Successor {
    std::size_t state;
    double prob;
};

/// Finite MDP with dense transition tensor P[s][a][s'].
///
/// States in the absorbing set are terminal: their action values are pinned
/// to r(s, a) and nothing is propagated past them. Equivalently, an absorbing
/// state moves to an implicit zero-value sink.
class TabularMdp {
public:
    TabularMdp(std::size_t num_states, std::size_t num_actions, std::vector<double> transition,
               RewardTable reward, double gamma, std::vector<std::size_t> absorbing = {});

    std::size_t num_states() const { return states_; }
    std::size_t num_actions() const { return actions_; }
    double gamma() const { return gamma_; }
    const RewardTable& reward() const { return reward_; }
    double reward(std::size_t s, std::size_t a) const { return reward_(s, a); }
    const std::vector<std::size_t>& absorbing() const { return absorbing_; }
    bool is_absorbing(std::size_t s) const { return absorbing_mask_[s]; }

    double transition(std::size_t s, std::size_t a, std::size_t next) const {
        return transition_[(s * actions_ + a) * states_ + next];
    }
    std::span<const double> transition_tensor() const { return transition_; }

    /// Nonzero-probability successors of (s, a), in increasing state order.
    std::span<const Successor> successors(std::size_t s, std::size_t a) const;

    /// E_{s'~P(.|s,a)} v(s'); zero when s is absorbing.
    double expected_next(std::span<const double> v, std::size_t s, std::size_t a) const;

    /// True when every (s, a) has a single successor.
    bool is_deterministic() const;

    /// Horizon 1/(1-gamma). Throws when gamma == 1.
    double horizon() const;

    /// Same dynamics and discount, different reward.
    TabularMdp with_reward(RewardTable reward) const;

private:
    std::size_t states_;
    std::size_t actions_;
    std::vector<double> transition_;
    RewardTable reward_;
    double gamma_;
    std::vector<std::size_t> absorbing_;
    std::vector<bool> absorbing_mask_;
    std::vector<std::size_t> succ_offsets_;
    std::vector<Successor> succ_;
};

/// Inverse temperature plus reference policy. An unset beta means standard
/// (un-regularized) RL.
class RegularizationSpec {
public:
    static RegularizationSpec soft(double beta, StateActionTable prior);
    static RegularizationSpec soft_uniform(double beta, std::size_t num_states, std::size_t num_actions);
    static RegularizationSpec standard(std::size_t num_states, std::size_t num_actions);

    bool is_standard() const { return !beta_.has_value(); }
    /// Throws std::logic_error for standard mode.
    double beta() const;
    const StateActionTable& prior() const { return prior_; }

private:
    RegularizationSpec(std::optional<double> beta, StateActionTable prior);
    std::optional<double> beta_;
    StateActionTable prior_;
};

/// Row-stochastic table pi[s][a].
class PolicyTable {
public:
    explicit PolicyTable(StateActionTable probs);
    std::size_t num_states() const { return probs_.num_states(); }
    std::size_t num_actions() const { return probs_.num_actions(); }
    double operator()(std::size_t s, std::size_t a) const { return probs_(s, a); }
    std::span<const double> row(std::size_t s) const { return probs_.row(s); }
    const StateActionTable& table() const { return probs_; }

private:
    StateActionTable probs_;
};

struct SolveReport {
    QTable q;
    std::size_t iterations = 0;
    double residual = 0.0;
};

constexpr double kDefaultTol = 1e-10;
constexpr std::size_t kDefaultMaxIter = 100000;

/// V(s) = 1/beta log E_{a~pi0} exp(beta Q(s,a)), shifted by the row max.
StateValues soft_state_value(const QTable& q, const RegularizationSpec& reg);
/// V(s) = max_a Q(s,a).
StateValues hard_state_value(const QTable& q);
/// Dispatches on reg.is_standard().
StateValues state_value(const QTable& q, const RegularizationSpec& reg);

QTable soft_backup(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q);
QTable hard_backup(const TabularMdp& mdp, const QTable& q);
QTable backup(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q);

/// r(s,a) + gamma E V(s') for an arbitrary state-value table.
QTable backup_with_values(const TabularMdp& mdp, const StateValues& v);

/// Value iteration from Q = 0 until the sup-norm step falls to `tol`.
SolveReport solve(const TabularMdp& mdp, const RegularizationSpec& reg, double tol = kDefaultTol,
                  std::size_t max_iter = kDefaultMaxIter);

/// pi ∝ pi0 exp(beta Q); greedy one-hot (lowest index on ties) in standard mode.
PolicyTable boltzmann_policy(const QTable& q, const RegularizationSpec& reg);
PolicyTable greedy_policy(const QTable& q);
/// Lowest-index argmax per state.
std::vector<std::size_t> greedy_actions(const QTable& q);

/// Entropy-regularized (or standard) value of a fixed policy.
QTable policy_evaluation(const TabularMdp& mdp, const RegularizationSpec& reg, const PolicyTable& pi,
                         double tol = kDefaultTol, std::size_t max_iter = kDefaultMaxIter);

void check_shape(const TabularMdp& mdp, const StateActionTable& t, const char* what);

}  // namespace valbound
