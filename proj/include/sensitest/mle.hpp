#pragma once

// Probit maximum likelihood on log stimulus, observed Fisher information,
// Fieller intervals for quantiles and the W statistic.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "sensitest/dataset.hpp"
#include "sensitest/errors.hpp"
#include "sensitest/model.hpp"
#include "sensitest/normal.hpp"
#include "sensitest/quantile.hpp"

namespace sensitest {

using Vec2 = std::array<double, 2>;
/// Row-major symmetric 2x2 matrix {m00, m01, m11}.
struct Mat2 {
    double a = 0.0, b = 0.0, d = 0.0;

    double det() const noexcept { return a * d - b * b; }
    std::optional<Mat2> inverse() const noexcept {
        const double dt = det();
        const double scale = std::max({std::abs(a), std::abs(d), 1e-300});
        if (!(std::abs(dt) > 1e-13 * scale * scale)) return std::nullopt;
        return Mat2{d / dt, -b / dt, a / dt};
    }
    Vec2 operator*(const Vec2& v) const noexcept { return {a * v[0] + b * v[1], b * v[0] + d * v[1]}; }
    double quad(const Vec2& v) const noexcept { return v[0] * (a * v[0] + b * v[1]) + v[1] * (b * v[0] + d * v[1]); }
    friend bool operator==(const Mat2&, const Mat2&) = default;
};

/// Trials pooled by log stimulus.
struct BinomialLevel {
    double u = 0.0;
    int positives = 0;
    int trials = 0;
};

inline std::vector<BinomialLevel> pool_levels(std::span<const double> u, std::span<const int> y) {
    if (u.size() != y.size()) throw DomainError("stimulus and outcome lengths differ");
    std::vector<std::size_t> order(u.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return u[i] < u[j]; });
    std::vector<BinomialLevel> out;
    for (std::size_t i : order) {
        if (out.empty() || out.back().u != u[i]) out.push_back({u[i], 0, 0});
        out.back().positives += y[i];
        out.back().trials += 1;
    }
    return out;
}

struct MleFit {
    ProbitTheta theta_hat;
    Mat2 info;
    std::optional<Mat2> cov;
    bool converged = false;
    int iterations = 0;
    double log_likelihood = 0.0;
    /// Slope estimate not meaningfully positive.
    bool non_monotone = false;
};

namespace detail {

inline double level_loglik(const std::vector<BinomialLevel>& lv, const Vec2& t) {
    double ll = 0.0;
    for (const auto& l : lv) {
        const double eta = t[0] + t[1] * l.u;
        if (l.positives > 0) ll += l.positives * normal::log_cdf(eta);
        if (l.trials > l.positives) ll += (l.trials - l.positives) * normal::log_cdf(-eta);
    }
    return ll;
}

inline Vec2 level_gradient(const std::vector<BinomialLevel>& lv, const Vec2& t) {
    Vec2 g{0.0, 0.0};
    for (const auto& l : lv) {
        const double eta = t[0] + t[1] * l.u;
        const double s = l.positives * normal::inverse_mills(eta) - (l.trials - l.positives) * normal::inverse_mills(-eta);
        g[0] += s;
        g[1] += s * l.u;
    }
    return g;
}

// phi^2 / (Phi (1 - Phi)) weighting of z z^T.
inline Mat2 level_information(const std::vector<BinomialLevel>& lv, const Vec2& t) {
    Mat2 j;
    for (const auto& l : lv) {
        const double eta = t[0] + t[1] * l.u;
        const double w = l.trials * normal::inverse_mills(eta) * normal::inverse_mills(-eta);
        j.a += w;
        j.b += w * l.u;
        j.d += w * l.u * l.u;
    }
    return j;
}

// The MLE exists iff the outcomes are not (quasi-)completely separated by
// a threshold on u, in either direction.
inline bool separated(const std::vector<BinomialLevel>& lv) {
    double min_pos = std::numeric_limits<double>::infinity(), max_pos = -min_pos;
    double min_neg = min_pos, max_neg = -min_pos;
    for (const auto& l : lv) {
        if (l.positives > 0) {
            min_pos = std::min(min_pos, l.u);
            max_pos = std::max(max_pos, l.u);
        }
        if (l.trials > l.positives) {
            min_neg = std::min(min_neg, l.u);
            max_neg = std::max(max_neg, l.u);
        }
    }
    if (!std::isfinite(min_pos) || !std::isfinite(min_neg)) return true;
    return max_neg <= min_pos || max_pos <= min_neg;
}

}  // namespace detail

inline double probit_log_likelihood(std::span<const double> u, std::span<const int> y, const ProbitTheta& t) {
    return detail::level_loglik(pool_levels(u, y), {t.alpha, t.beta});
}

/// Analytic score of the log-likelihood.
inline Vec2 probit_gradient(std::span<const double> u, std::span<const int> y, const ProbitTheta& t) {
    return detail::level_gradient(pool_levels(u, y), {t.alpha, t.beta});
}

/// J_n = sum phi(eta)^2 / (Phi(eta)(1 - Phi(eta))) z z^T with z = (1, log x).
inline Mat2 fisher_information(std::span<const double> u, const ProbitTheta& t) {
    Mat2 j;
    for (double ui : u) {
        const double eta = t.alpha + t.beta * ui;
        const double w = normal::inverse_mills(eta) * normal::inverse_mills(-eta);
        j.a += w;
        j.b += w * ui;
        j.d += w * ui * ui;
    }
    return j;
}

inline Mat2 fisher_information(const Dataset& data, const ProbitTheta& t) {
    const auto u = data.log_stimuli();
    return fisher_information(u, t);
}

/// Maximizes the probit log-likelihood over (alpha, beta) by Fisher scoring
/// with step halving. `u` holds log stimuli.
inline MleFit fit_probit_mle(std::span<const double> u, std::span<const int> y) {
    const auto lv = pool_levels(u, y);
    if (lv.size() < 2) throw UndefinedMleError("MLE needs at least two distinct stimulus levels");
    if (detail::separated(lv)) throw UndefinedMleError("outcomes are separated by stimulus; the MLE does not exist");

    int n = 0, r = 0;
    for (const auto& l : lv) {
        n += l.trials;
        r += l.positives;
    }
    Vec2 t{normal::quantile(static_cast<double>(r) / n), 0.0};
    double ll = detail::level_loglik(lv, t);

    MleFit fit;
    constexpr int kMaxIter = 100;
    for (int it = 1; it <= kMaxIter; ++it) {
        const Vec2 g = detail::level_gradient(lv, t);
        if (std::max(std::abs(g[0]), std::abs(g[1])) < 1e-8) {
            fit.converged = true;
            fit.iterations = it - 1;
            break;
        }
        const auto inv = detail::level_information(lv, t).inverse();
        if (!inv) throw UndefinedMleError("information matrix became singular during fitting");
        const Vec2 step = *inv * g;
        double lambda = 1.0;
        bool moved = false;
        for (int h = 0; h < 60; ++h, lambda *= 0.5) {
            const Vec2 cand{t[0] + lambda * step[0], t[1] + lambda * step[1]};
            const double lc = detail::level_loglik(lv, cand);
            if (std::isfinite(lc) && lc >= ll - 1e-12 * std::abs(ll)) {
                moved = cand != t;
                t = cand;
                ll = lc;
                break;
            }
        }
        if (!moved) {
            // No representable improvement: accept only if already stationary.
            const Vec2 g2 = detail::level_gradient(lv, t);
            fit.converged = std::max(std::abs(g2[0]), std::abs(g2[1])) < 1e-8;
            fit.iterations = it;
            break;
        }
        if (std::abs(t[1]) > 1e8 || !std::isfinite(t[0])) throw UndefinedMleError("MLE diverged");
    }
    if (!fit.converged) throw UndefinedMleError("MLE did not converge within 100 iterations");

    fit.theta_hat = {t[0], t[1]};
    fit.log_likelihood = ll;
    fit.info = detail::level_information(lv, t);
    fit.cov = fit.info.inverse();
    fit.non_monotone = !(t[1] > 1e-8);
    return fit;
}

inline MleFit fit_probit_mle(const Dataset& data) {
    const auto u = data.log_stimuli();
    const auto y = data.outcomes();
    return fit_probit_mle(u, y);
}

/// Fieller confidence set for xi_100p = exp((Phi^-1(p) - alpha)/beta).
inline QuantileEstimate fieller_ci(const MleFit& fit, double p, double level) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("p must lie in (0,1)");
    if (!(level > 0.0 && level < 1.0)) throw DomainError("level must lie in (0,1)");
    if (!fit.converged || !fit.cov) throw StatisticalError("fit has no covariance matrix");
    const double a = fit.theta_hat.alpha, b = fit.theta_hat.beta;
    if (!(b > 0.0) || fit.non_monotone) throw NonIdentifiableError("slope estimate is not positive");
    const Mat2& v = *fit.cov;
    const double c = normal::quantile(p);
    const double z = normal::two_sided_z(level);
    const double q = z * z;
    const double ac = a - c;

    QuantileEstimate e;
    e.p = p;
    e.level = level;
    e.method = EstimateMethod::fieller_mle;
    const double m_hat = -ac / b;
    e.point = std::exp(m_hat);

    // A m^2 + B m + C <= 0
    const double A = b * b - q * v.d;
    const double B = 2.0 * (b * ac - q * v.b);
    const double C = ac * ac - q * v.a;
    const double inf = std::numeric_limits<double>::infinity();
    const double disc = B * B - 4.0 * A * C;
    if (A == 0.0) {
        // Half line on the log scale.
        if (B > 0.0) e.ci_low = 0.0, e.ci_high = std::exp(-C / B);
        else if (B < 0.0) e.ci_low = std::exp(-C / B), e.ci_high = inf;
        else e.shape = IntervalShape::whole_line, e.ci_low = 0.0, e.ci_high = inf;
        return e;
    }
    if (A > 0.0) {
        const double sq = std::sqrt(std::max(disc, 0.0));
        // Stable roots.
        const double qq = -0.5 * (B + std::copysign(sq, B));
        double r1 = qq / A, r2 = qq != 0.0 ? C / qq : r1;
        if (r1 > r2) std::swap(r1, r2);
        e.ci_low = std::exp(std::min(r1, m_hat));
        e.ci_high = std::exp(std::max(r2, m_hat));
        return e;
    }
    if (disc < 0.0) {
        e.shape = IntervalShape::whole_line;
        e.ci_low = 0.0;
        e.ci_high = inf;
        return e;
    }
    const double sq = std::sqrt(disc);
    double r1 = (-B - sq) / (2.0 * A), r2 = (-B + sq) / (2.0 * A);
    if (r1 > r2) std::swap(r1, r2);
    e.shape = IntervalShape::complement;
    e.ci_low = std::exp(r1);
    e.ci_high = std::exp(r2);
    return e;
}

/// W = (f0' theta_hat)^2 / (f0' V f0).
inline double w_statistic(const MleFit& fit, const Vec2& f0) {
    if (!fit.cov) throw StatisticalError("W statistic needs an invertible information matrix");
    const double den = fit.cov->quad(f0);
    if (!(den > 0.0)) throw StatisticalError("f0' V f0 must be positive");
    const double num = f0[0] * fit.theta_hat.alpha + f0[1] * fit.theta_hat.beta;
    return num * num / den;
}

/// f0 for testing that the median equals that of theta0: f0' theta0 = 0.
inline Vec2 median_contrast(const ProbitTheta& theta0) { return {1.0, -theta0.alpha / theta0.beta}; }

}  // namespace sensitest
