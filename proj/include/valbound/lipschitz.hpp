#pragma once

#include <span>
#include <vector>

#include "valbound/mdp.hpp"

namespace valbound {

/// Lipschitz description of a continuous MDP with single-dimensional actions
/// under the 1-product metric, so D = D_S + D_A.
struct LipschitzSpec {
    double reward_lipschitz;    // L_r
    double dynamics_lipschitz;  // L_p
    double state_diameter;      // D_S
    double action_diameter;     // D_A
    double sigma_min;           // lower bound on the policy standard deviation

    double diameter() const { return state_diameter + action_diameter; }
    void validate() const;
};

struct LipschitzConstants {
    double gaussian;      // L_N = sigma_min^-2 (2 pi e)^-1/2
    double action_value;  // L_Q
    double state_value;   // L_V = L_Q (1 + L_N) + 1/(beta sigma_min)
    double delta;         // L_Delta = max{L_r, L_Q, gamma L_p L_V}
    double contraction;   // gamma L_p (1 + L_N); must stay below 1

    /// Throws std::domain_error unless contraction < 1.
    void check_feasible() const;
};

/// Throws std::domain_error naming the violated inequality when
/// gamma L_p (1 + L_N) >= 1.
LipschitzConstants lipschitz_constants(const LipschitzSpec& spec, double gamma, double beta);

struct SamplePoint {
    std::vector<double> state;
    std::vector<double> action;
    double value;
};

struct ExtremaBounds {
    double sup_upper;  // min over samples + L D
    double inf_lower;  // max over samples - L D
};

ExtremaBounds extrema_bounds(std::span<const SamplePoint> samples, double lipschitz, double diameter);
ExtremaBounds extrema_bounds(std::span<const double> values, double lipschitz, double diameter);

/// One-point soft state value of a Gaussian policy: Q(s, mu) plus the
/// Gaussian entropy over beta. The prior term is not included.
double gaussian_v_estimate(double q_at_mean, double sigma, double beta);

enum class ErrorVariant {
    paper,      // sqrt(2/pi) L_Q sigma exp(-mu^2 / 2 sigma^2) + eps
    corrected,  // sqrt(2/pi) L_Q sigma + eps  (Gaussian mean absolute deviation)
};

double v_error_bound(const LipschitzConstants& constants, double mu, double sigma, double epsilon,
                     ErrorVariant variant);

struct GaussianPolicyField {
    std::vector<double> mean;
    std::vector<double> stddev;
    double epsilon = 0.0;
};

/// Per-state V-estimate error A(s).
struct ErrorProfile {
    std::vector<double> a;
    ErrorVariant variant = ErrorVariant::corrected;
};

/// A(s) for every state of the field; checks sigma(s) >= sigma_min.
ErrorProfile error_profile(const LipschitzConstants& constants, const LipschitzSpec& spec,
                           const GaussianPolicyField& field, ErrorVariant variant);

/// gamma E_{s'} A(s').
double delta_error_bound(double gamma, const ErrorProfile& profile, std::span<const Successor> successors);

/// One dataset entry: the one-point Delta-bar and the successor
/// distribution of the (s, a) it was measured at.
struct DeltaSample {
    double delta_bar;
    std::vector<Successor> successors;
};

struct PropagatedBounds {
    double lower;
    double upper;
};

/// Bounds on Q*(s, a) for a query with reward r and successor distribution
/// `successors`, given the one-point values v_bar, the error profile and a
/// dataset of Delta-bar samples:
///   upper = r + gamma E[v_bar + A] + gamma/(1-gamma) (min_D(Delta_bar + gamma E A) + L_Delta D)
///   lower = r + gamma E[v_bar - A] + gamma/(1-gamma) (max_D(Delta_bar - gamma E A) - L_Delta D)
PropagatedBounds propagated_bounds(double reward, std::span<const Successor> successors, std::span<const double> v_bar,
                                   const ErrorProfile& profile, std::span<const DeltaSample> dataset,
                                   const LipschitzConstants& constants, const LipschitzSpec& spec, double gamma);

}  // namespace valbound
