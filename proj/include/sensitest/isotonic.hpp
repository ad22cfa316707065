#pragma once

// Isotonic regression of binary responses: PAVA, centred isotonic regression
// (CIR) and quantile inversion of the CIR curve.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sensitest/dataset.hpp"
#include "sensitest/errors.hpp"
#include "sensitest/normal.hpp"
#include "sensitest/quantile.hpp"

namespace sensitest {

/// Coordinate on which the curve is piecewise linear.
enum class DoseScale { natural, log };

inline std::string_view to_string(DoseScale s) noexcept { return s == DoseScale::natural ? "natural" : "log"; }

inline DoseScale parse_dose_scale(std::string_view s) {
    if (s == "natural" || s == "linear") return DoseScale::natural;
    if (s == "log") return DoseScale::log;
    throw ConfigError("unknown dose scale '" + std::string(s) + "'", "dose_scale");
}

struct IsoNode {
    double stimulus = 0.0;
    double rate = 0.0;
    double weight = 0.0;
    friend bool operator==(const IsoNode&, const IsoNode&) = default;
};

struct IsotonicFit {
    std::vector<IsoNode> nodes;
    bool centred = false;
    DoseScale scale = DoseScale::natural;

    double coord(std::size_t i) const { return to_coord(nodes[i].stimulus); }
    double to_coord(double x) const { return scale == DoseScale::log ? std::log(x) : x; }
    double from_coord(double c) const { return scale == DoseScale::log ? std::exp(c) : c; }
    double min_rate() const { return nodes.front().rate; }
    double max_rate() const { return nodes.back().rate; }
};

namespace detail {

struct IsoPoint {
    double x = 0.0;  // dose coordinate
    double y = 0.0;
    double w = 0.0;
};

struct IsoBlock {
    double sx = 0.0, sy = 0.0, w = 0.0;
    std::size_t first = 0, count = 0;
    double y() const { return sy / w; }
};

// Pool adjacent violators; with `pool_ties` equal neighbours are merged too.
inline std::vector<IsoBlock> pava_blocks(const std::vector<IsoPoint>& pts, bool pool_ties) {
    std::vector<IsoBlock> out;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out.push_back({pts[i].x * pts[i].w, pts[i].y * pts[i].w, pts[i].w, i, 1});
        while (out.size() > 1) {
            const auto& a = out[out.size() - 2];
            const auto& b = out.back();
            // Cross-multiplied comparison avoids spurious inequalities from rounding.
            const double lhs = a.sy * b.w, rhs = b.sy * a.w;
            const double tol = 1e-12 * std::max(std::abs(lhs), std::abs(rhs));
            const bool violate = pool_ties ? lhs >= rhs - tol : lhs > rhs + tol;
            if (!violate) break;
            IsoBlock m{a.sx + b.sx, a.sy + b.sy, a.w + b.w, a.first, a.count + b.count};
            out.pop_back();
            out.back() = m;
        }
    }
    return out;
}

inline std::vector<IsoPoint> level_points(const Dataset& data, DoseScale scale) {
    std::vector<IsoPoint> pts;
    for (const auto& l : data.levels()) {
        const double x = scale == DoseScale::log ? std::log(l.stimulus) : l.stimulus;
        pts.push_back({x, static_cast<double>(l.positives) / l.trials, static_cast<double>(l.trials)});
    }
    return pts;
}

inline std::vector<IsoNode> centred_nodes(const std::vector<IsoPoint>& pts, DoseScale scale) {
    std::vector<IsoNode> nodes;
    for (const auto& b : pava_blocks(pts, true)) {
        const double c = b.sx / b.w;
        nodes.push_back({scale == DoseScale::log ? std::exp(c) : c, b.y(), b.w});
    }
    return nodes;
}

// Inverse of the piecewise-linear curve through strictly increasing nodes,
// continued linearly beyond the end nodes. None when the continuation is flat.
inline std::optional<double> extended_inverse(const std::vector<double>& x, const std::vector<double>& y, double t) {
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (y[i] <= t && t <= y[i + 1] && y[i + 1] > y[i])
            return x[i] + (t - y[i]) / (y[i + 1] - y[i]) * (x[i + 1] - x[i]);
    const std::size_t i = t < y[0] ? 0 : n - 2;
    const double slope = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
    if (!(slope > 0.0)) return std::nullopt;
    return t < y[0] ? x[0] - (y[0] - t) / slope : x[n - 1] + (t - y[n - 1]) / slope;
}

inline double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
    if (at <= x.front()) return y.front();
    if (at >= x.back()) return y.back();
    auto it = std::upper_bound(x.begin(), x.end(), at);
    const std::size_t j = static_cast<std::size_t>(it - x.begin());
    const double f = (at - x[j - 1]) / (x[j] - x[j - 1]);
    return y[j - 1] + f * (y[j] - y[j - 1]);
}

// Agresti-Coull interval for a rate estimated from `n` trials.
inline std::pair<double, double> agresti_coull(double rate, double n, double z) {
    const double nt = n + z * z;
    const double pt = (rate * n + 0.5 * z * z) / nt;
    const double h = z * std::sqrt(pt * (1.0 - pt) / nt);
    return {std::max(pt - h, 0.0), std::min(pt + h, 1.0)};
}

}  // namespace detail

/// PAVA fit with one node per stimulus level; pooled levels share a rate.
inline IsotonicFit pava(const Dataset& data, DoseScale scale = DoseScale::natural) {
    if (data.empty()) throw DomainError("isotonic regression needs data");
    const auto levels = data.levels();
    const auto pts = detail::level_points(data, scale);
    IsotonicFit fit;
    fit.scale = scale;
    for (const auto& b : detail::pava_blocks(pts, false))
        for (std::size_t k = 0; k < b.count; ++k) {
            const auto& l = levels[b.first + k];
            fit.nodes.push_back({l.stimulus, b.y(), static_cast<double>(l.trials)});
        }
    return fit;
}

/// Centred isotonic regression: flat PAVA stretches collapse to a single node
/// at the weighted mean dose of the stretch.
inline IsotonicFit cir(const Dataset& data, DoseScale scale = DoseScale::natural) {
    if (data.empty()) throw DomainError("isotonic regression needs data");
    IsotonicFit fit;
    fit.scale = scale;
    fit.centred = true;
    fit.nodes = detail::centred_nodes(detail::level_points(data, scale), scale);
    return fit;
}

/// Value of the interpolated curve, constant beyond the end nodes.
inline double isotonic_curve(const IsotonicFit& fit, double stimulus) {
    if (fit.nodes.empty()) throw DomainError("empty fit");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < fit.nodes.size(); ++i) {
        x.push_back(fit.coord(i));
        y.push_back(fit.nodes[i].rate);
    }
    return detail::interpolate(x, y, fit.to_coord(stimulus));
}

/// How the forward (rate-scale) interval is formed before inversion.
/// `crossing`: Agresti-Coull interval for the rate p itself with the trial
/// weight interpolated at the crossing. `nodes`: Agresti-Coull intervals of
/// the shrunk node rates, interpolated at the crossing.
enum class CirInterval { crossing, nodes };

inline std::string_view to_string(CirInterval c) noexcept { return c == CirInterval::crossing ? "crossing" : "nodes"; }

inline CirInterval parse_cir_interval(std::string_view s) {
    if (s == "crossing") return CirInterval::crossing;
    if (s == "nodes") return CirInterval::nodes;
    throw ConfigError("unknown CIR interval recipe '" + std::string(s) + "'", "cir_interval");
}

/// Quantile estimate by inversion of the CIR curve.
///
/// The point estimate inverts the CIR curve of rates shrunk toward p by one
/// pseudo-trial per level, (r + p)/(n + 1). The forward interval [L, U]
/// (see CirInterval) is mapped back through the fitted curve, continued
/// linearly past its end nodes: the bounds solve G(x) = p - (U - p) and
/// G(x) = p + (p - L).
inline QuantileEstimate cir_quantile(const IsotonicFit& fit, double p, const Dataset& data, double level,
                                     CirInterval recipe = CirInterval::crossing) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("p must lie in (0,1)");
    if (!(level > 0.0 && level < 1.0)) throw DomainError("level must lie in (0,1)");
    if (fit.nodes.empty() || data.empty()) throw DomainError("isotonic quantile needs data");
    const double lo_rate = fit.min_rate(), hi_rate = fit.max_rate();
    if (p < lo_rate || p > hi_rate)
        throw OutOfRangeError("target p=" + io::format_number(p) + " outside the fitted rate range [" +
                                  io::format_number(lo_rate) + ", " + io::format_number(hi_rate) + "]",
                              lo_rate, hi_rate);

    auto pts = detail::level_points(data, fit.scale);
    for (auto& pt : pts) {
        pt.y = (pt.y * pt.w + p) / (pt.w + 1.0);
        pt.w += 1.0;
    }
    const auto shrunk = detail::pava_blocks(pts, true);
    std::vector<double> sx, sy, slo, shi;
    const double z = normal::two_sided_z(level);
    for (const auto& b : shrunk) {
        sx.push_back(b.sx / b.w);
        sy.push_back(b.y());
        auto [l, u] = detail::agresti_coull(b.y(), b.w, z);
        slo.push_back(l);
        shi.push_back(u);
    }

    double xs = sx.front();
    if (sx.size() > 1) {
        for (std::size_t i = 0; i + 1 < sx.size(); ++i)
            if (sy[i] <= p && p <= sy[i + 1]) {
                xs = sx[i] + (p - sy[i]) / (sy[i + 1] - sy[i]) * (sx[i + 1] - sx[i]);
                break;
            }
    }
    std::vector<double> fx, fy, fw;
    for (std::size_t i = 0; i < fit.nodes.size(); ++i) {
        fx.push_back(fit.coord(i));
        fy.push_back(fit.nodes[i].rate);
        fw.push_back(fit.nodes[i].weight);
    }
    double L = 0.0, U = 1.0;
    if (recipe == CirInterval::nodes) {
        L = detail::interpolate(sx, slo, xs);
        U = detail::interpolate(sx, shi, xs);
    } else {
        std::tie(L, U) = detail::agresti_coull(p, detail::interpolate(fx, fw, xs), z);
    }
    const auto clo = detail::extended_inverse(fx, fy, p - (U - p));
    const auto chi = detail::extended_inverse(fx, fy, p + (p - L));

    QuantileEstimate e;
    e.p = p;
    e.level = level;
    e.method = EstimateMethod::cir_delta;
    e.point = fit.from_coord(xs);
    const double inf = std::numeric_limits<double>::infinity();
    if (clo) {
        const double c = std::min(*clo, xs);
        e.ci_low = fit.scale == DoseScale::log ? std::exp(c) : std::max(c, 0.0);
    } else {
        e.ci_low = 0.0;
    }
    e.ci_high = chi ? fit.from_coord(std::max(*chi, xs)) : inf;
    return e;
}

inline QuantileEstimate cir_quantile(const Dataset& data, double p, double level,
                                     DoseScale scale = DoseScale::natural,
                                     CirInterval recipe = CirInterval::crossing) {
    return cir_quantile(cir(data, scale), p, data, level, recipe);
}

}  // namespace sensitest
