#pragma once

#include <algorithm>
#include <cmath>

#include "sensitest/designs.hpp"
#include "sensitest/quantile.hpp"

namespace sensitest {

namespace detail {

inline QuantileEstimate rmj_interval(const DesignState& state, double tau, double level) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("level must lie in (0,1)");
    const double z = normal::two_sided_z(level);
    QuantileEstimate e;
    e.p = std::get<RmjConfig>(state.config()).p;
    e.level = level;
    e.method = EstimateMethod::rmj;
    e.point = std::exp(state.position());
    e.ci_low = std::exp(state.position() - z * tau);
    e.ci_high = std::exp(state.position() + z * tau);
    return e;
}

}  // namespace detail

/// Terminal RMJ estimate x_{n+1} with the normal interval
/// exp(log x_{n+1} +- z tau_{n+1}).
inline QuantileEstimate rmj_estimate(const DesignState& state, double level) {
    if (state.kind() != DesignKind::rmj) throw StateError("not an RMJ design");
    if (!state.terminated()) throw StateError("RMJ run is not complete");
    const auto& cfg = std::get<RmjConfig>(state.config());
    const double tau = state.rmj_schedule() ? state.rmj_schedule()->tau.back() : cfg.tau1;
    return detail::rmj_interval(state, tau, level);
}

/// Estimate after the trials run so far: x_{i+1} with tau_{i+1}.
inline QuantileEstimate rmj_running_estimate(const DesignState& state, double level) {
    if (state.kind() != DesignKind::rmj) throw StateError("not an RMJ design");
    const auto& cfg = std::get<RmjConfig>(state.config());
    const auto* sched = state.rmj_schedule();
    const double tau = sched ? sched->tau[std::min(state.history().size(), sched->tau.size() - 1)] : cfg.tau1;
    return detail::rmj_interval(state, tau, level);
}

}  // namespace sensitest
