#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "sensitest/errors.hpp"

namespace sensitest {

enum class EstimateMethod { fieller_mle, cir_delta, rmj };

inline std::string_view to_string(EstimateMethod m) noexcept {
    switch (m) {
        case EstimateMethod::fieller_mle: return "fieller-mle";
        case EstimateMethod::cir_delta: return "cir-delta";
        case EstimateMethod::rmj: return "rmj";
    }
    return "?";
}

inline EstimateMethod parse_estimate_method(std::string_view s) {
    if (s == "fieller-mle" || s == "mle" || s == "fieller") return EstimateMethod::fieller_mle;
    if (s == "cir-delta" || s == "cir") return EstimateMethod::cir_delta;
    if (s == "rmj") return EstimateMethod::rmj;
    throw ConfigError("unknown estimator '" + std::string(s) + "'", "estimator");
}

/// `bounded`: [ci_low, ci_high]. `whole_line`: every stimulus. `complement`:
/// the two rays (0, ci_low] and [ci_high, inf). An endpoint at minus infinity
/// on the log scale is reported as ci_low = 0, one at plus infinity as
/// ci_high = +infinity.
enum class IntervalShape { bounded, whole_line, complement };

inline std::string_view to_string(IntervalShape s) noexcept {
    switch (s) {
        case IntervalShape::bounded: return "bounded";
        case IntervalShape::whole_line: return "whole-line";
        case IntervalShape::complement: return "complement";
    }
    return "?";
}

/// Estimate of the 100p% quantile, in stimulus units.
struct QuantileEstimate {
    double p = 0.5;
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = std::numeric_limits<double>::infinity();
    double level = 0.9;
    EstimateMethod method = EstimateMethod::fieller_mle;
    IntervalShape shape = IntervalShape::bounded;

    /// A single segment with both log-scale endpoints finite.
    bool bounded() const noexcept {
        return shape == IntervalShape::bounded && ci_low > 0.0 && std::isfinite(ci_high);
    }

    bool covers(double x) const noexcept {
        switch (shape) {
            case IntervalShape::whole_line: return true;
            case IntervalShape::complement: return x <= ci_low || x >= ci_high;
            case IntervalShape::bounded: return ci_low <= x && x <= ci_high;
        }
        return false;
    }

    /// Width on the log-stimulus scale; infinite unless bounded.
    double log_width() const noexcept {
        if (!bounded()) return std::numeric_limits<double>::infinity();
        return std::log(ci_high) - std::log(ci_low);
    }
};

}  // namespace sensitest
