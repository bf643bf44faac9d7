#include "valbound/composition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace valbound {

CompositionRule parse_composition_rule(const std::string& name) {
    if (name == "logsumexp_weighted") return CompositionRule::logsumexp_weighted;
    if (name == "max") return CompositionRule::max;
    if (name == "mean") return CompositionRule::mean;
    if (name == "custom") return CompositionRule::custom;
    throw std::invalid_argument("unknown composition rule '" + name + "'");
}

std::string to_string(CompositionRule r) {
    switch (r) {
        case CompositionRule::logsumexp_weighted: return "logsumexp_weighted";
        case CompositionRule::max: return "max";
        case CompositionRule::mean: return "mean";
        case CompositionRule::custom: return "custom";
    }
    return "?";
}

void CompositionSpec::validate(std::size_t num_tasks) const {
    if (num_tasks == 0) throw std::invalid_argument("composition: no subtasks");
    const bool uses_weights = rule == CompositionRule::logsumexp_weighted || rule == CompositionRule::mean;
    if (uses_weights && weights.size() != num_tasks)
        throw std::invalid_argument("composition: need one weight per subtask");
    for (double w : weights)
        if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("composition: weights must be positive");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("composition: tau must be positive");
    if (rule == CompositionRule::custom && !custom)
        throw std::invalid_argument("composition: custom rule without a function");
}

double CompositionSpec::apply(std::span<const double> x) const {
    switch (rule) {
        case CompositionRule::logsumexp_weighted: {
            const double m = *std::max_element(x.begin(), x.end());
            double acc = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) acc += weights[j] * std::exp((x[j] - m) / tau);
            return m + tau * std::log(acc);
        }
        case CompositionRule::max: return *std::max_element(x.begin(), x.end());
        case CompositionRule::mean: {
            double num = 0.0, den = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                num += weights[j] * x[j];
                den += weights[j];
            }
            return num / den;
        }
        case CompositionRule::custom: return custom(x);
    }
    throw std::logic_error("unreachable");
}

QTable compose_tables(const std::vector<QTable>& tables, const CompositionSpec& spec) {
    spec.validate(tables.size());
    for (const auto& t : tables)
        if (!t.same_shape(tables.front())) throw std::invalid_argument("composition: tables differ in shape");
    QTable out(tables.front().num_states(), tables.front().num_actions());
    std::vector<double> buf(tables.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = 0; j < tables.size(); ++j) buf[j] = tables[j].values()[i];
        out.values()[i] = spec.apply(buf);
    }
    return out;
}

QTable compose_q_logsumexp(const std::vector<QTable>& tables, const CompositionSpec& spec) {
    if (spec.rule != CompositionRule::logsumexp_weighted)
        throw std::invalid_argument("compose_q_logsumexp: spec rule must be logsumexp_weighted");
    return compose_tables(tables, spec);
}

std::vector<double> compose_rewards_logsumexp(const std::vector<std::vector<double>>& rewards,
                                              const CompositionSpec& spec) {
    if (spec.rule != CompositionRule::logsumexp_weighted)
        throw std::invalid_argument("compose_rewards_logsumexp: spec rule must be logsumexp_weighted");
    spec.validate(rewards.size());
    for (const auto& r : rewards)
        if (r.size() != rewards.front().size()) throw std::invalid_argument("composition: reward lists differ in size");
    std::vector<double> out(rewards.front().size());
    std::vector<double> buf(rewards.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = 0; j < rewards.size(); ++j) buf[j] = rewards[j][i];
        out[i] = spec.apply(buf);
    }
    return out;
}

TabularMdp build_composite_task(const std::vector<TabularMdp>& subtasks, const CompositionSpec& spec) {
    spec.validate(subtasks.size());
    const auto& first = subtasks.front();
    if (!first.is_deterministic()) throw std::invalid_argument("composite task: transition must be deterministic");
    if (first.gamma() != 1.0) throw std::invalid_argument("composite task: gamma must be 1 (undiscounted)");
    if (first.absorbing().empty()) throw std::invalid_argument("composite task: absorbing set must be nonempty");
    for (const auto& t : subtasks) {
        if (t.num_states() != first.num_states()) throw std::invalid_argument("composite task: num_states differs");
        if (t.num_actions() != first.num_actions()) throw std::invalid_argument("composite task: num_actions differs");
        if (t.gamma() != first.gamma()) throw std::invalid_argument("composite task: gamma differs");
        if (t.absorbing() != first.absorbing()) throw std::invalid_argument("composite task: absorbing differs");
        if (!std::equal(t.transition_tensor().begin(), t.transition_tensor().end(),
                        first.transition_tensor().begin()))
            throw std::invalid_argument("composite task: transition differs");
        for (std::size_t s = 0; s < t.num_states(); ++s) {
            if (t.is_absorbing(s)) continue;
            for (std::size_t a = 0; a < t.num_actions(); ++a)
                if (t.reward(s, a) != first.reward(s, a))
                    throw std::invalid_argument("composite task: interior reward differs at state " +
                                                std::to_string(s));
        }
    }

    RewardTable reward = first.reward();
    std::vector<double> buf(subtasks.size());
    for (auto g : first.absorbing()) {
        for (std::size_t a = 0; a < first.num_actions(); ++a) {
            for (std::size_t j = 0; j < subtasks.size(); ++j) buf[j] = subtasks[j].reward(g, a);
            reward(g, a) = spec.apply(buf);
        }
    }
    return first.with_reward(std::move(reward));
}

CompositionReport verify_exact_composition(const std::vector<TabularMdp>& subtasks, const CompositionSpec& spec,
                                           double tol) {
    TabularMdp composite = build_composite_task(subtasks, spec);
    auto reg = RegularizationSpec::soft_uniform(1.0 / spec.tau, composite.num_states(), composite.num_actions());

    std::vector<QTable> solved;
    solved.reserve(subtasks.size());
    for (const auto& t : subtasks) solved.push_back(solve(t, reg, 1e-13, kDefaultMaxIter).q);
    QTable composed = compose_tables(solved, spec);

    QTable next = soft_backup(composite, reg, composed);
    double residual = 0.0;
    for (std::size_t s = 0; s < composite.num_states(); ++s) {
        if (composite.is_absorbing(s)) continue;
        for (std::size_t a = 0; a < composite.num_actions(); ++a)
            residual = std::max(residual, std::abs(next(s, a) - composed(s, a)));
    }
    return {residual, tol, residual <= tol, spec.weights, spec.tau, std::move(composed)};
}

namespace {

ShapingArtifacts correct_with_potential(const TabularMdp& target, StateValues potential, double tol) {
    StateActionTable kappa = backup_with_values(target, potential);
    for (std::size_t s = 0; s < target.num_states(); ++s)
        for (auto& x : kappa.row(s)) x -= potential[s];

    TabularMdp corrective = target.with_reward(kappa);
    QTable k_star = solve(corrective, RegularizationSpec::standard(target.num_states(), target.num_actions()), tol).q;

    QTable reconstructed(target.num_states(), target.num_actions());
    for (std::size_t s = 0; s < target.num_states(); ++s)
        for (std::size_t a = 0; a < target.num_actions(); ++a) reconstructed(s, a) = potential[s] + k_star(s, a);
    return {std::move(kappa), std::move(potential), std::move(k_star), std::move(reconstructed)};
}

}  // namespace

ShapingArtifacts std_composition_correction(const std::vector<TabularMdp>& subtasks,
                                            const std::vector<QTable>& q_tables, const CompositionSpec& spec,
                                            double tol) {
    spec.validate(subtasks.size());
    if (q_tables.size() != subtasks.size()) throw std::invalid_argument("composition: one Q table per subtask");
    const auto& first = subtasks.front();
    if (first.gamma() >= 1.0) throw std::invalid_argument("std composition: gamma must be < 1");
    for (const auto& t : subtasks) {
        if (t.num_states() != first.num_states() || t.num_actions() != first.num_actions() ||
            t.gamma() != first.gamma() || t.absorbing() != first.absorbing() ||
            !std::equal(t.transition_tensor().begin(), t.transition_tensor().end(),
                        first.transition_tensor().begin()))
            throw std::invalid_argument("std composition: subtasks must share dynamics");
    }
    for (const auto& q : q_tables) check_shape(first, q, "std composition Q table");

    std::vector<QTable> rewards;
    rewards.reserve(subtasks.size());
    for (const auto& t : subtasks) rewards.push_back(t.reward());
    TabularMdp target = first.with_reward(compose_tables(rewards, spec));

    StateValues v_f = hard_state_value(compose_tables(q_tables, spec));
    return correct_with_potential(target, std::move(v_f), tol);
}

ShapingArtifacts shaping_kappa(const TabularMdp& target, const StateValues& v_star, double tol) {
    if (target.gamma() >= 1.0) throw std::invalid_argument("shaping_kappa: gamma must be < 1");
    if (v_star.size() != target.num_states()) throw std::invalid_argument("shaping_kappa: potential size mismatch");
    return correct_with_potential(target, v_star, tol);
}

RewardTable inverse_reward(const QTable& q, const TabularMdp& dynamics, const RegularizationSpec& reg) {
    check_shape(dynamics, q, "inverse_reward");
    StateValues v = state_value(q, reg);
    RewardTable r(dynamics.num_states(), dynamics.num_actions());
    for (std::size_t s = 0; s < dynamics.num_states(); ++s)
        for (std::size_t a = 0; a < dynamics.num_actions(); ++a)
            r(s, a) = q(s, a) - dynamics.gamma() * dynamics.expected_next(v, s, a);
    return r;
}

}  // namespace valbound
