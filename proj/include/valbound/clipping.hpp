#pragma once

#include <optional>
#include <string>
#include <vector>

#include "valbound/bounds.hpp"
#include "valbound/format.hpp"
#include "valbound/mdp.hpp"

namespace valbound {

enum class ClipMethod { none, hard, soft, smoothed };

ClipMethod parse_clip_method(const std::string& name);
std::string to_string(ClipMethod m);

struct ClipConfig {
    ClipMethod method = ClipMethod::none;
    double eta = 1e-5;  // soft-clip weight
};

/// min(max(target, lower), upper). Throws when lower > upper.
double clip_hard(double target, double lower, double upper);

/// |q_value - q_clipped|; combined by the caller as bellman + eta * clip.
double clip_loss(double q_value, double q_clipped);

/// (1 - tau) raw + tau clipped with tau = violation / (1 + violation).
double smoothed_target(double raw, double clipped, double violation);

/// Elementwise clipping range. A missing side means "unbounded" on that side.
struct ClipRange {
    std::optional<StateActionTable> lower;
    std::optional<StateActionTable> upper;

    static ClipRange unbounded() { return {}; }
    static ClipRange from(const BoundPair& b) { return {b.lower, b.upper}; }
};

/// max(min(B Q, U), L) elementwise, B the soft or hard backup.
QTable clipped_backup(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q, const ClipRange& range);

struct ClipTraceRow {
    std::size_t iteration;
    double residual;
    double inf_delta;
    double sup_delta;
    double mean_q;
    double violation_sum;
    std::size_t violation_count;
};

struct ClipTrace {
    std::vector<ClipTraceRow> rows;

    /// iteration,residual,inf_delta,sup_delta,mean_q,violation_sum
    CsvWriter to_csv() const;
    /// First iteration whose residual is <= tol, if any.
    std::optional<std::size_t> iterations_to(double tol) const;
};

struct ClipRun {
    SolveReport report;
    ClipTrace trace;
};

/// Value iteration from Q = 0 where each step's bounds come from the previous
/// iterate. Converged Q matches the unclipped fixed point.
ClipRun clipped_value_iteration(const TabularMdp& mdp, const RegularizationSpec& reg, const ClipConfig& config,
                                double tol = kDefaultTol, std::size_t max_iter = kDefaultMaxIter);

}  // namespace valbound
