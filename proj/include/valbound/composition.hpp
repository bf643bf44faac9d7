#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "valbound/mdp.hpp"

namespace valbound {

enum class CompositionRule { logsumexp_weighted, max, mean, custom };

CompositionRule parse_composition_rule(const std::string& name);
std::string to_string(CompositionRule r);

/// How M subtask values combine into one. Weights and temperature are only
/// read by the rules that use them (logsumexp_weighted, mean).
struct CompositionSpec {
    std::vector<double> weights;
    double tau = 1.0;  // temperature of the weighted log-sum-exp
    CompositionRule rule = CompositionRule::logsumexp_weighted;
    std::function<double(std::span<const double>)> custom;  // pure f: R^M -> R

    /// Throws on nonpositive weights or temperature, or a missing custom f.
    void validate(std::size_t num_tasks) const;
    double apply(std::span<const double> values) const;
};

/// Elementwise f({Q_j(s,a)}).
QTable compose_tables(const std::vector<QTable>& tables, const CompositionSpec& spec);

/// tau log sum_j w_j exp(Q_j / tau), elementwise. Requires the log-sum-exp rule.
QTable compose_q_logsumexp(const std::vector<QTable>& tables, const CompositionSpec& spec);

/// Same formula applied to rewards; each inner vector lists one task's
/// absorbing-state reward entries in a common order.
std::vector<double> compose_rewards_logsumexp(const std::vector<std::vector<double>>& rewards,
                                              const CompositionSpec& spec);

/// Composite of undiscounted tasks that share deterministic dynamics and
/// interior rewards: interior rewards copied, absorbing rewards composed
/// with spec's rule.
TabularMdp build_composite_task(const std::vector<TabularMdp>& subtasks, const CompositionSpec& spec);

struct CompositionReport {
    double residual;
    double tol;
    bool pass;
    std::vector<double> weights;
    double tau;
    QTable composed;
};

/// Solves every subtask at beta = 1/tau, composes the Q tables with spec's
/// rule and measures the composite soft Bellman residual on interior states.
CompositionReport verify_exact_composition(const std::vector<TabularMdp>& subtasks, const CompositionSpec& spec,
                                           double tol = 1e-8);

struct ShapingArtifacts {
    StateActionTable kappa;
    StateValues potential;
    QTable corrective_value;
    QTable reconstructed;  // potential (broadcast over actions) + corrective_value
};

/// Standard-RL composition: V_f = max_a f({Q_j}), kappa = f({r_j}) + gamma E V_f(s') - V_f(s),
/// K* from standard value iteration on kappa, reconstructed = V_f + K*.
ShapingArtifacts std_composition_correction(const std::vector<TabularMdp>& subtasks,
                                            const std::vector<QTable>& q_tables, const CompositionSpec& spec,
                                            double tol = 1e-12);

/// Potential-based transfer from a solved primitive with state values v_star.
ShapingArtifacts shaping_kappa(const TabularMdp& target, const StateValues& v_star, double tol = 1e-12);

/// Reward for which q is optimal under the given dynamics:
/// R = Q - gamma E V(s'), V hard or soft according to reg.
RewardTable inverse_reward(const QTable& q, const TabularMdp& dynamics, const RegularizationSpec& reg);

}  // namespace valbound
