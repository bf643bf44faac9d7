#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace valbound {

/// Dense row-major table indexed by (state, action).
class StateActionTable {
public:
    StateActionTable() = default;
    StateActionTable(std::size_t num_states, std::size_t num_actions, double fill = 0.0);

    std::size_t num_states() const { return states_; }
    std::size_t num_actions() const { return actions_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t s, std::size_t a) { return data_[s * actions_ + a]; }
    double operator()(std::size_t s, std::size_t a) const { return data_[s * actions_ + a]; }

    std::span<double> row(std::size_t s) { return {data_.data() + s * actions_, actions_}; }
    std::span<const double> row(std::size_t s) const { return {data_.data() + s * actions_, actions_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool same_shape(const StateActionTable& other) const {
        return states_ == other.states_ && actions_ == other.actions_;
    }

    bool all_finite() const;
    double min() const;
    double max() const;
    double mean() const;

    bool operator==(const StateActionTable&) const = default;

private:
    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::vector<double> data_;
};

using QTable = StateActionTable;
using RewardTable = StateActionTable;
using StateValues = std::vector<double>;

/// Largest absolute elementwise difference. Shapes must agree.
double max_abs_diff(const StateActionTable& a, const StateActionTable& b);
double max_abs_diff(const StateValues& a, const StateValues& b);

}  // namespace valbound
