#include "valbound/table.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace valbound {

StateActionTable::StateActionTable(std::size_t num_states, std::size_t num_actions, double fill)
    : states_(num_states), actions_(num_actions), data_(num_states * num_actions, fill) {}

bool StateActionTable::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double StateActionTable::min() const {
    if (data_.empty()) throw std::logic_error("min of empty table");
    return *std::min_element(data_.begin(), data_.end());
}

double StateActionTable::max() const {
    if (data_.empty()) throw std::logic_error("max of empty table");
    return *std::max_element(data_.begin(), data_.end());
}

double StateActionTable::mean() const {
    if (data_.empty()) throw std::logic_error("mean of empty table");
    return std::accumulate(data_.begin(), data_.end(), 0.0) / static_cast<double>(data_.size());
}

double max_abs_diff(const StateActionTable& a, const StateActionTable& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    auto x = a.values();
    auto y = b.values();
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

double max_abs_diff(const StateValues& a, const StateValues& b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace valbound
