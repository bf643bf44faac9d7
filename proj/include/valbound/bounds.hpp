#pragma once

#include <vector>

#include "valbound/mdp.hpp"

namespace valbound {

/// soft: Delta = r + gamma E V(s') - Q(s,a), V the soft value of Q.
/// standard: Delta' = r + gamma E V(s') - V(s), the V-shaped reward.
enum class DeltaMode { soft, standard };

struct DeltaField {
    StateActionTable delta;
    DeltaMode mode;
    double inf_delta;
    double sup_delta;
};

/// Double-sided bounds on Q*. The extrema are those actually used: when the
/// MDP has absorbing states they also cover the zero-reward sink (Delta = 0).
struct BoundPair {
    StateActionTable lower;
    StateActionTable upper;
    double inf_delta;
    double sup_delta;
    double horizon;
};

DeltaField delta_soft(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q);
DeltaField delta_standard(const TabularMdp& mdp, const StateValues& v);

/// lower/upper = r + gamma (E V(s') + inf/sup Delta * H). Requires gamma < 1.
BoundPair bounds_from_delta(const TabularMdp& mdp, const StateValues& v, const DeltaField& delta);

/// Convenience: Delta from q in the mode implied by reg, then bounds.
/// Standard mode uses V(s) = max_a q(s, a).
BoundPair bounds_from_estimate(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q);

/// Bounds from the reward extrema alone: r + gamma inf/sup r H.
BoundPair reward_only_bounds(const TabularMdp& mdp);

/// Extremum range a bound computation should use for `table`: the table's
/// own min/max, widened to include 0 when the MDP has absorbing states.
std::pair<double, double> effective_extrema(const TabularMdp& mdp, const StateActionTable& table);

struct IdentityActionMap {
    std::vector<std::size_t> identity_action;
    bool verified = false;
};

/// Checks P(s | s, a[s]) = 1 for every state and returns a verified map.
IdentityActionMap verify_identity_actions(const TabularMdp& mdp, std::vector<std::size_t> actions);

/// Tighter lower bound r + gamma (V(s') + Delta(s', a0(s')) H) for MDPs with an
/// identity action; the successor s' of each (s, a) must be deterministic.
/// When s' is absorbing the horizon factor is 1 (the sink follows it).
/// In soft mode the per-step term also subtracts (1/beta) log(1/pi_Q(a0|s')),
/// pi_Q the Boltzmann policy of q; without it the bound can exceed Q*.
StateActionTable identity_lower_bound(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q,
                                      const IdentityActionMap& id_map);

struct SuboptimalityReport {
    StateActionTable d;
    double lo;
    double hi;
};

/// H inf d <= Q* - Q^pi <= H sup d with d = r + gamma E V^pi(s') - Q^pi.
SuboptimalityReport suboptimality_bounds(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q_pi);

}  // namespace valbound
