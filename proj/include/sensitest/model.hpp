#pragma once

// Ground-truth response models F(x) = P(explosion | stimulus x).
//
// The probit-log family is defined on the physical stimulus (x > 0) through
// log x. The six location-scale families are defined directly on the design
// coordinate, which every design treats as log-stimulus; see
// `design_cdf` / `design_quantile` for the uniform view used by simulations.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "sensitest/errors.hpp"
#include "sensitest/normal.hpp"

namespace sensitest {

/// Probit-on-log-scale parameters: P(y=1|x) = Phi(alpha + beta log x).
struct ProbitTheta {
    double alpha = 0.0;
    double beta = 1.0;

    bool valid() const noexcept { return std::isfinite(alpha) && std::isfinite(beta) && beta > 0.0; }
    friend bool operator==(const ProbitTheta&, const ProbitTheta&) = default;
};

/// Reference sensitivity of the imagined friction-test material (newtons).
inline constexpr ProbitTheta kTheta0{-9.1258, 2.0473};

inline double probit_prob(const ProbitTheta& theta, double x) {
    if (!(x > 0.0)) throw DomainError("stimulus must be positive");
    return normal::cdf(theta.alpha + theta.beta * std::log(x));
}

enum class Family { probit_log, normal, uniform, logistic, extreme_value, skewed_logistic, cauchy };

inline std::string_view to_string(Family f) noexcept {
    switch (f) {
        case Family::probit_log: return "probit-log";
        case Family::normal: return "normal";
        case Family::uniform: return "uniform";
        case Family::logistic: return "logistic";
        case Family::extreme_value: return "extreme-value";
        case Family::skewed_logistic: return "skewed-logistic";
        case Family::cauchy: return "cauchy";
    }
    return "?";
}

inline Family parse_family(std::string_view s) {
    for (Family f : {Family::probit_log, Family::normal, Family::uniform, Family::logistic, Family::extreme_value,
                     Family::skewed_logistic, Family::cauchy})
        if (to_string(f) == s) return f;
    throw ConfigError("unknown response family '" + std::string(s) + "'", "family");
}

struct ResponseModel {
    Family family = Family::normal;
    double location = 0.0;
    double scale = 1.0;
    /// Exponent lambda of the skewed logistic (1 gives the logistic).
    double shape = 1.0;

    static ResponseModel probit_log(const ProbitTheta& theta) {
        if (!theta.valid()) throw DomainError("probit-log model needs finite alpha and beta > 0");
        return {Family::probit_log, -theta.alpha / theta.beta, 1.0 / theta.beta, 1.0};
    }

    ProbitTheta theta() const { return {-location / scale, 1.0 / scale}; }

    /// True when the model argument is a physical stimulus and designs act on its log.
    bool stimulus_is_physical() const noexcept { return family == Family::probit_log; }

    void validate() const {
        if (!std::isfinite(location)) throw ConfigError("location must be finite", "location");
        if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("scale must be positive", "scale");
        if (family == Family::skewed_logistic && !(shape > 0.0))
            throw ConfigError("skewed-logistic shape must be positive", "shape");
    }

    friend bool operator==(const ResponseModel&, const ResponseModel&) = default;
};

namespace detail {

// Standardized cdf on the real line.
inline double standard_cdf(Family f, double z, double shape) noexcept {
    switch (f) {
        case Family::probit_log:
        case Family::normal: return normal::cdf(z);
        case Family::uniform: return z <= 0.0 ? 0.0 : (z >= 1.0 ? 1.0 : z);
        case Family::logistic: return 1.0 / (1.0 + std::exp(-z));
        case Family::extreme_value: return -std::expm1(-std::exp(z));
        case Family::skewed_logistic: return std::exp(-shape * std::log1p(std::exp(-z)));
        case Family::cauchy: return 0.5 + std::atan(z) / std::numbers::pi;
    }
    return 0.0;
}

inline double standard_quantile(Family f, double p, double shape) {
    switch (f) {
        case Family::probit_log:
        case Family::normal: return normal::quantile(p);
        case Family::uniform: return p;
        case Family::logistic: return std::log(p) - std::log1p(-p);
        case Family::extreme_value: return std::log(-std::log1p(-p));
        case Family::skewed_logistic: return -std::log(std::expm1(-std::log(p) / shape));
        case Family::cauchy: return std::tan(std::numbers::pi * (p - 0.5));
    }
    return 0.0;
}

inline double clamp01(double v) noexcept { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace detail

/// F evaluated on the design coordinate (log stimulus for probit-log).
inline double design_cdf(const ResponseModel& m, double u) noexcept {
    return detail::clamp01(detail::standard_cdf(m.family, (u - m.location) / m.scale, m.shape));
}

/// Quantile on the design coordinate.
inline double design_quantile(const ResponseModel& m, double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile requires 0 < p < 1");
    return m.location + m.scale * detail::standard_quantile(m.family, p, m.shape);
}

/// F(x) on the model's native argument: the stimulus for probit-log, the
/// design coordinate otherwise. Nonpositive stimuli map to 0 for probit-log.
inline double model_cdf(const ResponseModel& m, double x) noexcept {
    if (m.family == Family::probit_log) {
        if (!(x > 0.0)) return 0.0;
        return design_cdf(m, std::log(x));
    }
    return design_cdf(m, x);
}

inline double model_quantile(const ResponseModel& m, double p) {
    const double q = design_quantile(m, p);
    return m.family == Family::probit_log ? std::exp(q) : q;
}

/// Density on the design coordinate.
inline double design_pdf(const ResponseModel& m, double u) noexcept {
    const double z = (u - m.location) / m.scale;
    double g = 0.0;
    switch (m.family) {
        case Family::probit_log:
        case Family::normal: g = normal::pdf(z); break;
        case Family::uniform: g = (z >= 0.0 && z <= 1.0) ? 1.0 : 0.0; break;
        case Family::logistic: {
            const double e = std::exp(-std::abs(z));
            g = e / ((1.0 + e) * (1.0 + e));
            break;
        }
        case Family::extreme_value: g = std::exp(z - std::exp(z)); break;
        case Family::skewed_logistic: {
            const double F1 = 1.0 / (1.0 + std::exp(-z));
            g = m.shape * std::pow(F1, m.shape) * (1.0 - F1);
            break;
        }
        case Family::cauchy: g = 1.0 / (std::numbers::pi * (1.0 + z * z)); break;
    }
    return g / m.scale;
}

}  // namespace sensitest
