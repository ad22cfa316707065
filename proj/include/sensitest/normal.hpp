#pragma once

// Standard normal primitives shared by every module.

#include <cmath>
#include <limits>
#include <numbers>

#include "sensitest/errors.hpp"

namespace sensitest::normal {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double pdf(double z) noexcept { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

/// Phi(z) through erfc, which keeps full relative precision in the lower tail.
inline double cdf(double z) noexcept { return 0.5 * std::erfc(-z * kInvSqrt2); }

/// 1 - Phi(z) without cancellation.
inline double ccdf(double z) noexcept { return 0.5 * std::erfc(z * kInvSqrt2); }

/// log Phi(z), finite for any finite z.
inline double log_cdf(double z) noexcept {
    if (z > -30.0) return std::log(cdf(z));
    // Asymptotic expansion of the Mills ratio.
    const double z2 = z * z;
    const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    return -0.5 * z2 - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

/// phi(z) / Phi(z), stable for very negative z.
inline double inverse_mills(double z) noexcept {
    if (z > -30.0) return pdf(z) / cdf(z);
    const double z2 = z * z;
    const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    return -z / series;
}

/// Inverse of Phi. Acklam's rational approximation followed by two Halley
/// steps against the erfc-based cdf.
inline double quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile requires 0 < p < 1");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double lo = 0.02425;
    double x;
    if (p < lo) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - lo) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    for (int it = 0; it < 2; ++it) {
        // Work in whichever tail keeps the residual well conditioned.
        const double e = (x < 0.0) ? cdf(x) - p : (1.0 - p) - ccdf(x);
        const double u = e / pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

/// Two-sided critical value z_{(1+level)/2}.
inline double two_sided_z(double level) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("confidence level must lie in (0,1)");
    return quantile(0.5 + 0.5 * level);
}

/// Cdf of a chi-squared variable with one degree of freedom.
inline double chi2_1_cdf(double w) noexcept {
    if (w <= 0.0) return 0.0;
    return std::erf(std::sqrt(0.5 * w));
}

}  // namespace sensitest::normal
