#include "valbound/clipping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace valbound {

ClipMethod parse_clip_method(const std::string& name) {
    if (name == "none") return ClipMethod::none;
    if (name == "hard") return ClipMethod::hard;
    if (name == "soft") return ClipMethod::soft;
    if (name == "smoothed") return ClipMethod::smoothed;
    throw std::invalid_argument("unknown clip method '" + name + "'");
}

std::string to_string(ClipMethod m) {
    switch (m) {
        case ClipMethod::none: return "none";
        case ClipMethod::hard: return "hard";
        case ClipMethod::soft: return "soft";
        case ClipMethod::smoothed: return "smoothed";
    }
    return "?";
}

double clip_hard(double target, double lower, double upper) {
    if (lower > upper) throw std::invalid_argument("clip_hard: lower bound exceeds upper bound");
    return std::min(std::max(target, lower), upper);
}

double clip_loss(double q_value, double q_clipped) { return std::abs(q_value - q_clipped); }

double smoothed_target(double raw, double clipped, double violation) {
    if (violation < 0.0) throw std::invalid_argument("smoothed_target: violation must be nonnegative");
    if (violation == 0.0) return raw;
    const double tau = violation / (1.0 + violation);
    return (1.0 - tau) * raw + tau * clipped;
}

QTable clipped_backup(const TabularMdp& mdp, const RegularizationSpec& reg, const QTable& q, const ClipRange& range) {
    QTable out = backup(mdp, reg, q);
    if (range.lower) check_shape(mdp, *range.lower, "clipped_backup lower");
    if (range.upper) check_shape(mdp, *range.upper, "clipped_backup upper");
    if (range.lower && range.upper) {
        auto lo = range.lower->values();
        auto hi = range.upper->values();
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (lo[i] > hi[i]) throw std::invalid_argument("clipped_backup: invalid bounds (lower > upper)");
    }
    auto o = out.values();
    if (range.upper) {
        auto hi = range.upper->values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::min(o[i], hi[i]);
    }
    if (range.lower) {
        auto lo = range.lower->values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(o[i], lo[i]);
    }
    return out;
}

CsvWriter ClipTrace::to_csv() const {
    CsvWriter csv({"iteration", "residual", "inf_delta", "sup_delta", "mean_q", "violation_sum"});
    for (const auto& r : rows) {
        csv.add_row(std::vector<std::string>{std::to_string(r.iteration), format_real(r.residual),
                                             format_real(r.inf_delta), format_real(r.sup_delta),
                                             format_real(r.mean_q), format_real(r.violation_sum)});
    }
    return csv;
}

std::optional<std::size_t> ClipTrace::iterations_to(double tol) const {
    for (const auto& r : rows)
        if (r.residual <= tol) return r.iteration;
    return std::nullopt;
}

ClipRun clipped_value_iteration(const TabularMdp& mdp, const RegularizationSpec& reg, const ClipConfig& config,
                                double tol, std::size_t max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("clipped_value_iteration: tol must be positive");
    if (config.method == ClipMethod::soft && !(config.eta > 0.0))
        throw std::invalid_argument("clipped_value_iteration: eta must be positive for soft clipping");
    const bool have_bounds = mdp.gamma() < 1.0;
    if (!have_bounds && config.method != ClipMethod::none)
        throw std::invalid_argument("clipped_value_iteration: clipping requires gamma < 1");

    ClipRun run;
    QTable q(mdp.num_states(), mdp.num_actions(), 0.0);
    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= max_iter; ++k) {
        StateValues v = state_value(q, reg);
        QTable raw = backup_with_values(mdp, v);

        DeltaField delta{raw, reg.is_standard() ? DeltaMode::standard : DeltaMode::soft, 0.0, 0.0};
        {
            auto d = delta.delta.values();
            if (reg.is_standard()) {
                for (std::size_t s = 0; s < mdp.num_states(); ++s)
                    for (auto& x : delta.delta.row(s)) x -= v[s];
            } else {
                auto qv = q.values();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= qv[i];
            }
            delta.inf_delta = delta.delta.min();
            delta.sup_delta = delta.delta.max();
        }

        ClipTraceRow row{k, 0.0, delta.inf_delta, delta.sup_delta, 0.0, 0.0, 0};
        QTable next = raw;
        if (have_bounds) {
            BoundPair b = bounds_from_delta(mdp, v, delta);
            row.inf_delta = b.inf_delta;
            row.sup_delta = b.sup_delta;
            auto r = raw.values();
            auto lo = b.lower.values();
            auto hi = b.upper.values();
            auto n = next.values();
            for (std::size_t i = 0; i < r.size(); ++i) {
                const double clipped = clip_hard(r[i], lo[i], hi[i]);
                const double chi = clip_loss(r[i], clipped);
                if (chi > 0.0) {
                    row.violation_sum += chi;
                    ++row.violation_count;
                }
                switch (config.method) {
                    case ClipMethod::none: break;
                    case ClipMethod::hard: n[i] = clipped; break;
                    // Tabular stand-in for the clip loss: pull eta of the way toward the clipped value.
                    case ClipMethod::soft: n[i] = r[i] - config.eta * (r[i] - clipped); break;
                    case ClipMethod::smoothed: n[i] = smoothed_target(r[i], clipped, chi); break;
                }
            }
        }

        residual = max_abs_diff(next, q);
        row.residual = residual;
        row.mean_q = next.mean();
        run.trace.rows.push_back(row);
        q = std::move(next);
        if (residual <= tol) {
            run.report = {std::move(q), k, residual};
            return run;
        }
    }
    throw NonConvergenceError("clipped_value_iteration: no convergence", max_iter, residual);
}

}  // namespace valbound
