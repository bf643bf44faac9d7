#include "valbound/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace valbound {

namespace {

constexpr double kRowTol = 1e-12;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void check_finite(const QTable& q, const char* op) {
    if (!q.all_finite()) throw std::invalid_argument(std::string(op) + ": non-finite Q entry");
}

}  // namespace

void check_shape(const TabularMdp& mdp, const StateActionTable& t, const char* what) {
    if (t.num_states() != mdp.num_states() || t.num_actions() != mdp.num_actions())
        throw std::invalid_argument(std::string(what) + ": shape does not match the MDP");
}

// ---------------------------------------------------------------------------
// TabularMdp

TabularMdp::TabularMdp(std::size_t num_states, std::size_t num_actions, std::vector<double> transition,
                       RewardTable reward, double gamma, std::vector<std::size_t> absorbing)
    : states_(num_states),
      actions_(num_actions),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      gamma_(gamma),
      absorbing_(std::move(absorbing)),
      absorbing_mask_(num_states, false) {
    require(states_ > 0, "num_states must be positive");
    require(actions_ > 0, "num_actions must be positive");
    require(transition_.size() == states_ * actions_ * states_, "transition tensor has wrong size");
    require(reward_.num_states() == states_ && reward_.num_actions() == actions_, "reward table has wrong shape");
    require(reward_.all_finite(), "rewards must be finite");
    require(gamma_ > 0.0 && gamma_ <= 1.0, "gamma must lie in (0, 1]");

    std::sort(absorbing_.begin(), absorbing_.end());
    absorbing_.erase(std::unique(absorbing_.begin(), absorbing_.end()), absorbing_.end());
    for (auto g : absorbing_) {
        require(g < states_, "absorbing state index out of range");
        absorbing_mask_[g] = true;
    }
    require(gamma_ < 1.0 || !absorbing_.empty(), "gamma = 1 requires a nonempty absorbing set");

    succ_offsets_.reserve(states_ * actions_ + 1);
    succ_offsets_.push_back(0);
    for (std::size_t s = 0; s < states_; ++s) {
        for (std::size_t a = 0; a < actions_; ++a) {
            double total = 0.0;
            for (std::size_t n = 0; n < states_; ++n) {
                double p = this->transition(s, a, n);
                require(std::isfinite(p) && p >= 0.0,
                        "transition probabilities must be nonnegative (state " + std::to_string(s) + ", action " +
                            std::to_string(a) + ")");
                total += p;
                if (p > 0.0) succ_.push_back({n, p});
            }
            require(std::abs(total - 1.0) <= kRowTol, "transition row (state " + std::to_string(s) + ", action " +
                                                          std::to_string(a) + ") does not sum to 1");
            if (absorbing_mask_[s])
                require(this->transition(s, a, s) == 1.0,
                        "absorbing state " + std::to_string(s) + " must self-loop under every action");
            succ_offsets_.push_back(succ_.size());
        }
    }
}

std::span<const Successor> TabularMdp::successors(std::size_t s, std::size_t a) const {
    const std::size_t i = s * actions_ + a;
    return {succ_.data() + succ_offsets_[i], succ_offsets_[i + 1] - succ_offsets_[i]};
}

double TabularMdp::expected_next(std::span<const double> v, std::size_t s, std::size_t a) const {
    if (absorbing_mask_[s]) return 0.0;
    double e = 0.0;
    for (const auto& [n, p] : successors(s, a)) e += p * v[n];
    return e;
}

bool TabularMdp::is_deterministic() const {
    for (std::size_t i = 0; i + 1 < succ_offsets_.size(); ++i)
        if (succ_offsets_[i + 1] - succ_offsets_[i] != 1) return false;
    return true;
}

double TabularMdp::horizon() const {
    if (gamma_ >= 1.0) throw std::invalid_argument("horizon 1/(1-gamma) is undefined for gamma = 1");
    return 1.0 / (1.0 - gamma_);
}

TabularMdp TabularMdp::with_reward(RewardTable reward) const {
    return TabularMdp(states_, actions_, transition_, std::move(reward), gamma_, absorbing_);
}

// ---------------------------------------------------------------------------
// RegularizationSpec / PolicyTable

RegularizationSpec::RegularizationSpec(std::optional<double> beta, StateActionTable prior)
    : beta_(beta), prior_(std::move(prior)) {}

namespace {

void check_stochastic(const StateActionTable& t, const char* what) {
    for (std::size_t s = 0; s < t.num_states(); ++s) {
        double total = 0.0;
        for (double p : t.row(s)) {
            if (!std::isfinite(p) || p < 0.0)
                throw std::invalid_argument(std::string(what) + ": negative or non-finite probability");
            total += p;
        }
        if (std::abs(total - 1.0) > kRowTol)
            throw std::invalid_argument(std::string(what) + ": row " + std::to_string(s) + " does not sum to 1");
    }
}

}  // namespace

RegularizationSpec RegularizationSpec::soft(double beta, StateActionTable prior) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("reg.beta must be a positive finite real");
    check_stochastic(prior, "prior policy");
    return RegularizationSpec(beta, std::move(prior));
}

RegularizationSpec RegularizationSpec::soft_uniform(double beta, std::size_t num_states, std::size_t num_actions) {
    return soft(beta, StateActionTable(num_states, num_actions, 1.0 / static_cast<double>(num_actions)));
}

RegularizationSpec RegularizationSpec::standard(std::size_t num_states, std::size_t num_actions) {
    return RegularizationSpec(std::nullopt,
                              StateActionTable(num_states, num_actions, 1.0 / static_cast<double>(num_actions)));
}

double RegularizationSpec::beta() const {
    if (!beta_) throw std::logic_error("standard RL has no finite beta");
    return *beta_;
}

PolicyTable::PolicyTable(StateActionTable probs) : probs_(std::move(probs)) { check_stochastic(probs_, "policy"); }

// ---------------------------------------------------------------------------
// State values and backups

StateValues soft_state_value(const QTable& q, const RegularizationSpec& reg) {
    if (reg.is_standard()) throw std::invalid_argument("soft_state_value: use hard_state_value for standard RL");
    const double beta = reg.beta();
    if (!q.same_shape(reg.prior())) throw std::invalid_argument("soft_state_value: prior shape mismatch");
    check_finite(q, "soft_state_value");

    StateValues v(q.num_states());
    for (std::size_t s = 0; s < q.num_states(); ++s) {
        auto row = q.row(s);
        auto prior = reg.prior().row(s);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < row.size(); ++a)
            if (prior[a] > 0.0) m = std::max(m, row[a]);
        // Dividing by the prior mass keeps V exact when the row is constant.
        double acc = 0.0;
        double mass = 0.0;
        for (std::size_t a = 0; a < row.size(); ++a) {
            if (prior[a] <= 0.0) continue;
            acc += prior[a] * std::exp(beta * (row[a] - m));
            mass += prior[a];
        }
        v[s] = m + std::log(acc / mass) / beta;
    }
    return v;
}

StateValues hard_state_value(const QTable& q) {
    if (q.num_actions() == 0) throw std::invalid_argument("hard_state_value: empty action set");
    check_finite(q, "hard_state_value");
    StateValues v(q.num_states());
    for (std::size_t s = 0; s < q.num_states(); ++s) {
        auto row = q.row(s);
        v[s] = *std::max_element(row.begin(), row.end());
    }
    return v;
}

StateValues state_value(const QTable& q, const RegularizationSpec& reg) {
    return reg.is_standard() ? hard_state_value(q) : soft_state_value(q, reg);
}

QTable backup_with_values(const TabularMdp& mdp, const StateValues& v) {
    if (v.size() != mdp.num_states()) throw std::invalid_argument("backup: state-value size mismatch");
    QTable out(mdp.num_states(), mdp.num_actions());
    const double gamma = mdp.gamma();
    for (std::size_t s = 0; s < mdp.num_states(); ++s)
        for (std::size_t a = 0; a < mdp.num_actions(); ++a)
            out(s, a) = mdp.reward(s, a) + gamma * mdp.expected_next(v, s, a);
    return out;
}

QTable soft_backup(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q) {
    check_shape(mdp, q, "soft_backup");
    return backup_with_values(mdp, soft_state_value(q, reg));
}

QTable hard_backup(const TabularMdp& mdp, const QTable& q) {
    check_shape(mdp, q, "hard_backup");
    return backup_with_values(mdp, hard_state_value(q));
}

QTable backup(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q) {
    return reg.is_standard() ? hard_backup(mdp, q) : soft_backup(mdp, reg, q);
}

SolveReport solve(const TabularMdp& mdp, const RegularizationSpec& reg, double tol, std::size_t max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("solve: tol must be positive");
    QTable q(mdp.num_states(), mdp.num_actions(), 0.0);
    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= max_iter; ++k) {
        QTable next = backup(mdp, reg, q);
        residual = max_abs_diff(next, q);
        q = std::move(next);
        if (residual <= tol) return {std::move(q), k, residual};
    }
    throw NonConvergenceError("solve: no convergence within " + std::to_string(max_iter) +
                                  " iterations (residual " + std::to_string(residual) + ")",
                              max_iter, residual);
}

// ---------------------------------------------------------------------------
// Policies

std::vector<std::size_t> greedy_actions(const QTable& q) {
    std::vector<std::size_t> out(q.num_states());
    for (std::size_t s = 0; s < q.num_states(); ++s) {
        auto row = q.row(s);
        out[s] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

PolicyTable greedy_policy(const QTable& q) {
    StateActionTable probs(q.num_states(), q.num_actions(), 0.0);
    auto best = greedy_actions(q);
    for (std::size_t s = 0; s < q.num_states(); ++s) probs(s, best[s]) = 1.0;
    return PolicyTable(std::move(probs));
}

PolicyTable boltzmann_policy(const QTable& q, const RegularizationSpec& reg) {
    if (!q.same_shape(reg.prior())) throw std::invalid_argument("boltzmann_policy: shape mismatch");
    if (reg.is_standard()) return greedy_policy(q);
    check_finite(q, "boltzmann_policy");
    const double beta = reg.beta();
    StateActionTable probs(q.num_states(), q.num_actions(), 0.0);
    for (std::size_t s = 0; s < q.num_states(); ++s) {
        auto row = q.row(s);
        auto prior = reg.prior().row(s);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < row.size(); ++a)
            if (prior[a] > 0.0) m = std::max(m, row[a]);
        double total = 0.0;
        for (std::size_t a = 0; a < row.size(); ++a) {
            double w = prior[a] > 0.0 ? prior[a] * std::exp(beta * (row[a] - m)) : 0.0;
            probs(s, a) = w;
            total += w;
        }
        for (auto& p : probs.row(s)) p /= total;
    }
    return PolicyTable(std::move(probs));
}

QTable policy_evaluation(const TabularMdp& mdp, const RegularizationSpec& reg, const PolicyTable& pi, double tol,
                         std::size_t max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("policy_evaluation: tol must be positive");
    check_shape(mdp, pi.table(), "policy_evaluation");

    // Per-state entropic penalty E_{a~pi}[(1/beta) log(pi/pi0)].
    std::vector<double> penalty(mdp.num_states(), 0.0);
    if (!reg.is_standard()) {
        const double beta = reg.beta();
        for (std::size_t s = 0; s < mdp.num_states(); ++s) {
            for (std::size_t a = 0; a < mdp.num_actions(); ++a) {
                double p = pi(s, a);
                if (p <= 0.0) continue;
                double p0 = reg.prior()(s, a);
                if (p0 <= 0.0)
                    throw std::invalid_argument("policy_evaluation: policy puts mass on an action the prior excludes "
                                                "(infinite KL) at state " +
                                                std::to_string(s));
                penalty[s] += p * std::log(p / p0) / beta;
            }
        }
    }

    QTable q(mdp.num_states(), mdp.num_actions(), 0.0);
    StateValues v(mdp.num_states());
    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= max_iter; ++k) {
        for (std::size_t s = 0; s < mdp.num_states(); ++s) {
            double e = 0.0;
            for (std::size_t a = 0; a < mdp.num_actions(); ++a) e += pi(s, a) * q(s, a);
            v[s] = e - penalty[s];
        }
        QTable next = backup_with_values(mdp, v);
        residual = max_abs_diff(next, q);
        q = std::move(next);
        if (residual <= tol) return q;
    }
    throw NonConvergenceError("policy_evaluation: no convergence", max_iter, residual);
}

}  // namespace valbound
