#include "valbound/lipschitz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace valbound {

void LipschitzSpec::validate() const {
    if (!(reward_lipschitz > 0.0)) throw std::invalid_argument("L_r must be positive");
    if (!(dynamics_lipschitz > 0.0)) throw std::invalid_argument("L_p must be positive");
    if (!(sigma_min > 0.0)) throw std::invalid_argument("sigma_min must be positive");
    if (!(state_diameter >= 0.0) || !(action_diameter >= 0.0))
        throw std::invalid_argument("diameters must be nonnegative");
}

void LipschitzConstants::check_feasible() const {
    if (!(contraction < 1.0))
        throw std::domain_error("infeasible Lipschitz constants: gamma * L_p * (1 + L_N) = " +
                                std::to_string(contraction) + " is not < 1");
}

LipschitzConstants lipschitz_constants(const LipschitzSpec& spec, double gamma, double beta) {
    spec.validate();
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("lipschitz_constants: gamma must be in (0, 1)");
    if (!(beta > 0.0)) throw std::invalid_argument("lipschitz_constants: beta must be positive");

    LipschitzConstants c{};
    const double s = spec.sigma_min;
    c.gaussian = 1.0 / (s * s * std::sqrt(2.0 * std::numbers::pi * std::numbers::e));
    c.contraction = gamma * spec.dynamics_lipschitz * (1.0 + c.gaussian);
    c.check_feasible();

    const double entropy_slope = 1.0 / (beta * s);
    c.action_value = (spec.reward_lipschitz + gamma * spec.dynamics_lipschitz * entropy_slope) / (1.0 - c.contraction);
    c.state_value = c.action_value * (1.0 + c.gaussian) + entropy_slope;
    c.delta = std::max({spec.reward_lipschitz, c.action_value, gamma * spec.dynamics_lipschitz * c.state_value});
    return c;
}

ExtremaBounds extrema_bounds(std::span<const double> values, double lipschitz, double diameter) {
    if (values.empty()) throw std::invalid_argument("extrema_bounds: empty dataset");
    if (!(lipschitz >= 0.0) || !(diameter >= 0.0))
        throw std::invalid_argument("extrema_bounds: Lipschitz constant and diameter must be nonnegative");
    auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double slack = lipschitz * diameter;
    return {*lo + slack, *hi - slack};
}

ExtremaBounds extrema_bounds(std::span<const SamplePoint> samples, double lipschitz, double diameter) {
    std::vector<double> values;
    values.reserve(samples.size());
    for (const auto& p : samples) {
        if (!std::isfinite(p.value)) throw std::invalid_argument("extrema_bounds: non-finite sample");
        values.push_back(p.value);
    }
    return extrema_bounds(std::span<const double>(values), lipschitz, diameter);
}

double gaussian_v_estimate(double q_at_mean, double sigma, double beta) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_v_estimate: sigma must be positive");
    if (!(beta > 0.0)) throw std::invalid_argument("gaussian_v_estimate: beta must be positive");
    const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) + 0.5;
    return q_at_mean + entropy / beta;
}

double v_error_bound(const LipschitzConstants& constants, double mu, double sigma, double epsilon,
                     ErrorVariant variant) {
    if (!(sigma > 0.0)) throw std::invalid_argument("v_error_bound: sigma must be positive");
    const double mad = std::sqrt(2.0 / std::numbers::pi) * constants.action_value * sigma;
    if (variant == ErrorVariant::paper) return mad * std::exp(-mu * mu / (2.0 * sigma * sigma)) + epsilon;
    return mad + epsilon;
}

ErrorProfile error_profile(const LipschitzConstants& constants, const LipschitzSpec& spec,
                           const GaussianPolicyField& field, ErrorVariant variant) {
    constants.check_feasible();
    if (field.mean.size() != field.stddev.size()) throw std::invalid_argument("error_profile: field size mismatch");
    if (!(field.epsilon >= 0.0)) throw std::invalid_argument("error_profile: epsilon must be nonnegative");
    ErrorProfile out{std::vector<double>(field.mean.size()), variant};
    for (std::size_t s = 0; s < field.mean.size(); ++s) {
        if (field.stddev[s] < spec.sigma_min)
            throw std::invalid_argument("error_profile: sigma(" + std::to_string(s) + ") below sigma_min");
        out.a[s] = v_error_bound(constants, field.mean[s], field.stddev[s], field.epsilon, variant);
    }
    return out;
}

double delta_error_bound(double gamma, const ErrorProfile& profile, std::span<const Successor> successors) {
    double e = 0.0;
    for (const auto& [n, p] : successors) {
        if (n >= profile.a.size()) throw std::out_of_range("delta_error_bound: profile has no entry for a successor");
        e += p * profile.a[n];
    }
    return gamma * e;
}

PropagatedBounds propagated_bounds(double reward, std::span<const Successor> successors, std::span<const double> v_bar,
                                   const ErrorProfile& profile, std::span<const DeltaSample> dataset,
                                   const LipschitzConstants& constants, const LipschitzSpec& spec, double gamma) {
    constants.check_feasible();
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("propagated_bounds: gamma must be in (0, 1)");
    if (dataset.empty()) throw std::invalid_argument("propagated_bounds: empty dataset");

    double ev = 0.0, ea = 0.0;
    for (const auto& [n, p] : successors) {
        if (n >= v_bar.size() || n >= profile.a.size())
            throw std::out_of_range("propagated_bounds: successor outside the value profile");
        ev += p * v_bar[n];
        ea += p * profile.a[n];
    }

    double min_up = std::numeric_limits<double>::infinity();
    double max_lo = -std::numeric_limits<double>::infinity();
    for (const auto& sample : dataset) {
        const double err = delta_error_bound(gamma, profile, sample.successors);
        min_up = std::min(min_up, sample.delta_bar + err);
        max_lo = std::max(max_lo, sample.delta_bar - err);
    }

    const double slack = constants.delta * spec.diameter();
    const double scale = gamma / (1.0 - gamma);
    return {reward + gamma * (ev - ea) + scale * (max_lo - slack), reward + gamma * (ev + ea) + scale * (min_up + slack)};
}

}  // namespace valbound
