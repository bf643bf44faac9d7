#include "valbound/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace valbound {

std::pair<double, double> effective_extrema(const TabularMdp& mdp, const StateActionTable& table) {
    double lo = table.min();
    double hi = table.max();
    if (!mdp.absorbing().empty()) {
        lo = std::min(lo, 0.0);
        hi = std::max(hi, 0.0);
    }
    return {lo, hi};
}

DeltaField delta_soft(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q) {
    check_shape(mdp, q, "delta_soft");
    StateActionTable delta = soft_backup(mdp, reg, q);
    auto d = delta.values();
    auto qv = q.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= qv[i];
    const double lo = delta.min();
    const double hi = delta.max();
    return {std::move(delta), DeltaMode::soft, lo, hi};
}

DeltaField delta_standard(const TabularMdp& mdp, const StateValues& v) {
    if (v.size() != mdp.num_states()) throw std::invalid_argument("delta_standard: state-value size mismatch");
    StateActionTable delta = backup_with_values(mdp, v);
    for (std::size_t s = 0; s < mdp.num_states(); ++s)
        for (auto& x : delta.row(s)) x -= v[s];
    const double lo = delta.min();
    const double hi = delta.max();
    return {std::move(delta), DeltaMode::standard, lo, hi};
}

BoundPair bounds_from_delta(const TabularMdp& mdp, const StateValues& v, const DeltaField& delta) {
    check_shape(mdp, delta.delta, "bounds_from_delta");
    if (v.size() != mdp.num_states()) throw std::invalid_argument("bounds_from_delta: state-value size mismatch");
    if (mdp.gamma() >= 1.0) throw std::invalid_argument("bounds_from_delta: bounds require gamma < 1");
    const double H = mdp.horizon();
    const double gamma = mdp.gamma();
    auto [lo, hi] = effective_extrema(mdp, delta.delta);

    BoundPair out{StateActionTable(mdp.num_states(), mdp.num_actions()),
                  StateActionTable(mdp.num_states(), mdp.num_actions()), lo, hi, H};
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        for (std::size_t a = 0; a < mdp.num_actions(); ++a) {
            const double base = mdp.reward(s, a) + gamma * mdp.expected_next(v, s, a);
            out.lower(s, a) = base + gamma * lo * H;
            out.upper(s, a) = base + gamma * hi * H;
        }
    }
    return out;
}

BoundPair bounds_from_estimate(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q) {
    if (reg.is_standard()) {
        StateValues v = hard_state_value(q);
        return bounds_from_delta(mdp, v, delta_standard(mdp, v));
    }
    StateValues v = soft_state_value(q, reg);
    return bounds_from_delta(mdp, v, delta_soft(mdp, reg, q));
}

BoundPair reward_only_bounds(const TabularMdp& mdp) {
    if (mdp.gamma() >= 1.0) throw std::invalid_argument("reward_only_bounds: bounds require gamma < 1");
    const double H = mdp.horizon();
    const double gamma = mdp.gamma();
    auto [lo, hi] = effective_extrema(mdp, mdp.reward());
    BoundPair out{StateActionTable(mdp.num_states(), mdp.num_actions()),
                  StateActionTable(mdp.num_states(), mdp.num_actions()), lo, hi, H};
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        for (std::size_t a = 0; a < mdp.num_actions(); ++a) {
            // Same association as bounds_from_delta with V = 0 so the two agree bitwise.
            const double base = mdp.reward(s, a) + gamma * 0.0;
            out.lower(s, a) = base + gamma * lo * H;
            out.upper(s, a) = base + gamma * hi * H;
        }
    }
    return out;
}

IdentityActionMap verify_identity_actions(const TabularMdp& mdp, std::vector<std::size_t> actions) {
    if (actions.size() != mdp.num_states())
        throw std::invalid_argument("identity action map must list one action per state");
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        if (actions[s] >= mdp.num_actions()) throw std::invalid_argument("identity action index out of range");
        if (mdp.transition(s, actions[s], s) != 1.0)
            throw std::invalid_argument("action " + std::to_string(actions[s]) + " is not an identity action at state " +
                                        std::to_string(s));
    }
    return {std::move(actions), true};
}

StateActionTable identity_lower_bound(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q,
                                      const IdentityActionMap& id_map) {
    if (!id_map.verified) throw std::invalid_argument("identity_lower_bound: identity action map is not verified");
    if (id_map.identity_action.size() != mdp.num_states())
        throw std::invalid_argument("identity_lower_bound: map size mismatch");
    check_shape(mdp, q, "identity_lower_bound");
    const double H = mdp.horizon();
    const double gamma = mdp.gamma();

    StateValues v = state_value(q, reg);
    DeltaField delta = reg.is_standard() ? delta_standard(mdp, v) : delta_soft(mdp, reg, q);

    // Soft mode: staying put is a deterministic policy, so it pays the relative
    // entropy against the estimate's Boltzmann policy at every step.
    std::vector<double> stay_cost(mdp.num_states(), 0.0);
    if (!reg.is_standard()) {
        PolicyTable pi = boltzmann_policy(q, reg);
        for (std::size_t s = 0; s < mdp.num_states(); ++s)
            stay_cost[s] = -std::log(pi(s, id_map.identity_action[s])) / reg.beta();
    }

    StateActionTable lower(mdp.num_states(), mdp.num_actions());
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        for (std::size_t a = 0; a < mdp.num_actions(); ++a) {
            if (mdp.is_absorbing(s)) {
                lower(s, a) = mdp.reward(s, a);  // pinned, known exactly
                continue;
            }
            auto succ = mdp.successors(s, a);
            if (succ.size() != 1)
                throw std::invalid_argument("identity_lower_bound: stochastic transition at state " +
                                            std::to_string(s) + ", action " + std::to_string(a));
            const std::size_t next = succ[0].state;
            const double tail = mdp.is_absorbing(next) ? 1.0 : H;
            const double per_step = delta.delta(next, id_map.identity_action[next]) - stay_cost[next];
            lower(s, a) = mdp.reward(s, a) + gamma * (v[next] + per_step * tail);
        }
    }
    return lower;
}

SuboptimalityReport suboptimality_bounds(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q_pi) {
    check_shape(mdp, q_pi, "suboptimality_bounds");
    const double H = mdp.horizon();
    StateValues v = state_value(q_pi, reg);
    StateActionTable d = backup_with_values(mdp, v);
    auto dv = d.values();
    auto qv = q_pi.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] -= qv[i];
    auto [lo, hi] = effective_extrema(mdp, d);
    return {std::move(d), H * lo, H * hi};
}

}  // namespace valbound
