#pragma once

// Monte Carlo studies: design/estimator comparisons, the UN grid
// comparison and the log W study. Replicate i always draws from stream i of
// the master seed and results are reduced in index order, so every
// aggregate is independent of thread count and scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sensitest/designs.hpp"
#include "sensitest/errors.hpp"
#include "sensitest/isotonic.hpp"
#include "sensitest/mle.hpp"
#include "sensitest/model.hpp"
#include "sensitest/rmj.hpp"
#include "sensitest/rng.hpp"

namespace sensitest {

/// Runs body(i) for i in [0, count) on up to `threads` workers (0 = all cores).
template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(64);
                if (i >= count || failed.load()) return;
                for (std::size_t j = i; j < std::min(count, i + 64); ++j) {
                    try {
                        body(j);
                    } catch (...) {
                        if (!failed.exchange(true)) failure = std::current_exception();
                        return;
                    }
                }
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Design/estimator studies

struct StudyConfig {
    ResponseModel model;
    DesignKind design = DesignKind::up_down;
    EstimateMethod estimator = EstimateMethod::fieller_mle;
    double p = 0.5;
    int n = 30;
    int S = 10000;
    double level = 0.9;
    std::uint64_t master_seed = 1;
    /// Step size on the design coordinate (log stimulus).
    double d = 0.5;
    /// First stimulus in the model's native units; defaults to xi_100p
    /// (up-and-down, BCD) or a N(xi_100p, tau1^2) draw on the design coordinate (RMJ).
    std::optional<double> x1;
    double tau1 = 1.0;
    unsigned threads = 0;

    void validate() const {
        model.validate();
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("p must lie in (0,1)", "p");
        if (n < 1) throw ConfigError("n must be at least 1", "n");
        if (S < 1) throw ConfigError("S must be at least 1", "S");
        if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0,1)", "level");
        if (!(d > 0.0)) throw ConfigError("d must be positive", "d");
        if (!(tau1 > 0.0)) throw ConfigError("tau1 must be positive", "tau1");
        const bool ok = (design == DesignKind::up_down && estimator == EstimateMethod::fieller_mle) ||
                        (design == DesignKind::bcd && estimator == EstimateMethod::cir_delta) ||
                        (design == DesignKind::rmj && estimator == EstimateMethod::rmj);
        if (!ok)
            throw ConfigError("estimator " + std::string(to_string(estimator)) + " does not fit design " +
                                  std::string(to_string(design)),
                              "estimator");
        if (x1 && model.stimulus_is_physical() && !(*x1 > 0.0)) throw ConfigError("x1 must be positive", "x1");
    }
};

/// The design/estimator pairings compared in the study.
inline EstimateMethod default_estimator(DesignKind k) {
    switch (k) {
        case DesignKind::up_down: return EstimateMethod::fieller_mle;
        case DesignKind::bcd: return EstimateMethod::cir_delta;
        case DesignKind::rmj: return EstimateMethod::rmj;
        case DesignKind::un_staircase: break;
    }
    throw ConfigError("UN staircases have no quantile estimator", "design");
}

/// Outcome of one replicate. `defined` is false when the estimator failed
/// (undefined MLE, non-identifiable slope, target outside the fitted range).
struct ReplicateResult {
    std::size_t index = 0;
    bool defined = false;
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    IntervalShape shape = IntervalShape::bounded;
    int trials = 0;

    friend bool operator==(const ReplicateResult&, const ReplicateResult&) = default;
};

struct MetricsRow {
    StudyConfig config;
    double mse = 0.0;
    double mse_natural = 0.0;
    double mean_ci_width = 0.0;
    double mean_ci_width_natural = 0.0;
    double coverage = 0.0;
    int undefined_count = 0;
    int unbounded_count = 0;
    double mean_trials = 0.0;
    std::optional<double> classification_rate;
};

namespace detail {

inline double native_to_coord(const ResponseModel& m, double v) { return m.stimulus_is_physical() ? std::log(v) : v; }

// Simulations feed designs the stimulus exp(u) so that every design sees a
// positive stimulus while the model is evaluated on u.
inline int respond(const ResponseModel& m, double stimulus, RandomStream& rng) {
    return rng.bernoulli(design_cdf(m, std::log(stimulus))) ? 1 : 0;
}

}  // namespace detail

/// Generates replicate `index` of a study: the trials and, when defined, the estimate.
inline ReplicateResult run_replicate(const StudyConfig& c, std::size_t index,
                                     std::vector<TrialRecord>* trials_out = nullptr) {
    RandomStream rng(c.master_seed, index);
    const double target_u = design_quantile(c.model, c.p);
    ReplicateResult r;
    r.index = index;

    DesignConfig dc;
    if (c.design == DesignKind::rmj) {
        const double u1 = c.x1 ? detail::native_to_coord(c.model, *c.x1) : target_u + c.tau1 * rng.standard_normal();
        RmjConfig rc;
        rc.x1 = std::exp(u1);
        rc.p = c.p;
        rc.tau1 = c.tau1;
        rc.n = c.n;
        dc = rc;
    } else {
        const double u1 = c.x1 ? detail::native_to_coord(c.model, *c.x1) : target_u;
        if (c.design == DesignKind::up_down) {
            UpDownConfig uc;
            uc.x1 = std::exp(u1);
            uc.d = c.d;
            uc.max_trials = c.n;
            dc = uc;
        } else if (c.design == DesignKind::bcd) {
            BcdConfig bc;
            bc.x1 = std::exp(u1);
            bc.d = c.d;
            bc.p = c.p;
            bc.max_trials = c.n;
            dc = bc;
        } else {
            throw ConfigError("UN staircases are studied with un_grid_comparison", "design");
        }
    }
    // The coin of a BCD draws from its own stream so that responses and
    // coins never interleave.
    DesignState s = DesignState::start(dc, mix_seed(c.master_seed, index));
    while (!s.terminated()) s.observe(detail::respond(c.model, *s.next_stimulus(), rng));
    r.trials = static_cast<int>(s.history().size());
    if (trials_out) *trials_out = s.history();

    try {
        QuantileEstimate e;
        if (c.design == DesignKind::rmj) {
            e = rmj_estimate(s, c.level);
        } else {
            Dataset data(s.history());
            if (c.design == DesignKind::up_down) e = fieller_ci(fit_probit_mle(data), c.p, c.level);
            else e = cir_quantile(data, c.p, c.level, DoseScale::log);
        }
        r.defined = true;
        r.point = e.point;
        r.ci_low = e.ci_low;
        r.ci_high = e.ci_high;
        r.shape = e.shape;
    } catch (const StatisticalError&) {
        r.defined = false;
    }
    return r;
}

/// Aggregates replicate results in index order. MSE and width are on the
/// log-stimulus scale; unbounded intervals count toward coverage but not
/// toward mean width.
inline MetricsRow aggregate(const StudyConfig& c, const std::vector<ReplicateResult>& reps) {
    MetricsRow row;
    row.config = c;
    const double target_u = design_quantile(c.model, c.p);
    const double target_x = std::exp(target_u);
    double se = 0.0, se_nat = 0.0, width = 0.0, width_nat = 0.0, trials = 0.0;
    int defined = 0, covered = 0, bounded = 0;
    for (const auto& r : reps) {
        trials += r.trials;
        if (!r.defined) {
            ++row.undefined_count;
            continue;
        }
        ++defined;
        const double e = std::log(r.point) - target_u;
        se += e * e;
        se_nat += (r.point - target_x) * (r.point - target_x);
        QuantileEstimate q;
        q.point = r.point;
        q.ci_low = r.ci_low;
        q.ci_high = r.ci_high;
        q.shape = r.shape;
        if (q.covers(target_x)) ++covered;
        if (q.bounded()) {
            ++bounded;
            width += q.log_width();
            width_nat += r.ci_high - r.ci_low;
        } else {
            ++row.unbounded_count;
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.mse = defined ? se / defined : nan;
    row.mse_natural = defined ? se_nat / defined : nan;
    row.coverage = defined ? static_cast<double>(covered) / defined : nan;
    row.mean_ci_width = bounded ? width / bounded : nan;
    row.mean_ci_width_natural = bounded ? width_nat / bounded : nan;
    row.mean_trials = reps.empty() ? nan : trials / static_cast<double>(reps.size());
    return row;
}

inline std::vector<ReplicateResult> run_replicates(const StudyConfig& c) {
    c.validate();
    std::vector<ReplicateResult> reps(static_cast<std::size_t>(c.S));
    parallel_for(reps.size(), c.threads, [&](std::size_t i) { reps[i] = run_replicate(c, i); });
    return reps;
}

inline MetricsRow run_study(const StudyConfig& c) { return aggregate(c, run_replicates(c)); }

// ---------------------------------------------------------------------------
// UN grid comparison

struct LimitingDistribution {
    std::map<double, int> counts;  // limiting value -> frequency
    int none_count = 0;            // runs without any positive (type I undefined)
    int floor_hits = 0;
    int sensitive = 0;
    double total_trials = 0.0;
    int runs = 0;

    double classification_rate() const { return runs ? static_cast<double>(sensitive) / runs : 0.0; }
    double mean_trials() const { return runs ? total_trials / runs : 0.0; }
};

struct GridComparison {
    LimitingDistribution a;
    LimitingDistribution b;
};

/// Runs `tmpl` (whose grid is replaced) on both grids. Replicate i uses
/// stream i on both grids. A run with no limiting value (no positive at
/// all under type I) counts as insensitive.
inline LimitingDistribution un_grid_study(const ResponseModel& model, UnStaircaseConfig cfg, int S,
                                          std::uint64_t seed, unsigned threads = 0) {
    if (S < 1) throw ConfigError("S must be at least 1", "S");
    if (!cfg.threshold) throw ConfigError("grid studies need a classification threshold", "threshold");
    cfg.validate();
    std::vector<LimitingStimulusResult> runs(static_cast<std::size_t>(S));
    parallel_for(runs.size(), threads, [&](std::size_t i) {
        RandomStream rng(seed, i);
        runs[i] = un_staircase_run(
            cfg, [&](double x, RandomStream& g) { return g.bernoulli(model_cdf(model, x)) ? 1 : 0; }, rng);
        runs[i].trials.shrink_to_fit();
    });
    LimitingDistribution out;
    for (const auto& r : runs) {
        ++out.runs;
        out.total_trials += static_cast<double>(r.trials.size());
        if (r.floor_hit) ++out.floor_hits;
        if (!r.value) {
            ++out.none_count;
            continue;
        }
        ++out.counts[*r.value];
        if (r.classification == Classification::sensitive) ++out.sensitive;
    }
    return out;
}

inline GridComparison un_grid_comparison(const ResponseModel& model, const StimulusGrid& grid_a,
                                         const StimulusGrid& grid_b, int K, LimitingType type, double threshold,
                                         int S, std::uint64_t seed, unsigned threads = 0) {
    UnStaircaseConfig cfg;
    cfg.K = K;
    cfg.limiting_type = type;
    cfg.start = {StartKind::grid_max, 0.0};
    cfg.threshold = threshold;
    cfg.grid = grid_a;
    GridComparison g;
    g.a = un_grid_study(model, cfg, S, seed, threads);
    cfg.grid = grid_b;
    g.b = un_grid_study(model, cfg, S, seed, threads);
    return g;
}

// ---------------------------------------------------------------------------
// log W study

struct LogWResult {
    std::vector<double> log_w;
    int undefined_count = 0;
    int S = 0;
    double ks = 0.0;

    double undefined_fraction() const { return S ? static_cast<double>(undefined_count) / S : 0.0; }
};

/// Kolmogorov-Smirnov distance between the sample of W values and chi^2_1.
/// The distance is invariant under the monotone map W -> log W.
inline double ks_chi2_1(std::vector<double> w) {
    if (w.empty()) return 0.0;
    std::sort(w.begin(), w.end());
    const double n = static_cast<double>(w.size());
    double d = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double f = normal::chi2_1_cdf(w[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return d;
}

inline LogWResult logw_study(const ProbitTheta& theta0, double x1, double d, int n, int S, std::uint64_t seed,
                             unsigned threads = 0) {
    if (n < 1 || S < 1) throw ConfigError("n and S must be positive", "S");
    UpDownConfig uc;
    uc.x1 = x1;
    uc.d = d;
    uc.max_trials = n;
    uc.validate();
    const Vec2 f0 = median_contrast(theta0);
    std::vector<std::optional<double>> w(static_cast<std::size_t>(S));
    parallel_for(w.size(), threads, [&](std::size_t i) {
        RandomStream rng(seed, i);
        DesignState s = DesignState::start(uc);
        while (!s.terminated()) s.observe(rng.bernoulli(probit_prob(theta0, *s.next_stimulus())) ? 1 : 0);
        try {
            const auto fit = fit_probit_mle(Dataset(s.history()));
            if (fit.cov) w[i] = w_statistic(fit, f0);
        } catch (const StatisticalError&) {
        }
    });
    LogWResult out;
    out.S = S;
    std::vector<double> raw;
    for (const auto& v : w) {
        if (!v) {
            ++out.undefined_count;
            continue;
        }
        raw.push_back(*v);
        out.log_w.push_back(std::log(*v));
    }
    out.ks = ks_chi2_1(raw);
    return out;
}

// ---------------------------------------------------------------------------
// Result export

namespace detail {

inline std::string sig6(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

inline double parse_sig(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return io::parse_double(s, "results");
}

}  // namespace detail

inline const std::vector<std::string>& results_columns() {
    static const std::vector<std::string> cols{
        "family", "location", "scale", "shape", "design", "estimator", "p", "n", "S", "level", "seed", "d", "tau1",
        "x1", "mse", "mse_natural", "mean_ci_width", "mean_ci_width_natural", "coverage", "undefined_count",
        "unbounded_count", "mean_trials", "classification_rate"};
    return cols;
}

inline std::vector<std::string> row_cells(const MetricsRow& r) {
    using detail::sig6;
    const auto& c = r.config;
    return {std::string(to_string(c.model.family)), sig6(c.model.location), sig6(c.model.scale),
            sig6(c.model.shape), std::string(to_string(c.design)), std::string(to_string(c.estimator)), sig6(c.p),
            std::to_string(c.n), std::to_string(c.S), sig6(c.level), std::to_string(c.master_seed), sig6(c.d),
            sig6(c.tau1), c.x1 ? sig6(*c.x1) : std::string{}, sig6(r.mse), sig6(r.mse_natural),
            sig6(r.mean_ci_width), sig6(r.mean_ci_width_natural), sig6(r.coverage),
            std::to_string(r.undefined_count), std::to_string(r.unbounded_count), sig6(r.mean_trials),
            r.classification_rate ? sig6(*r.classification_rate) : std::string{}};
}

inline DesignKind parse_design_kind(std::string_view s) {
    if (s == "updown" || s == "up-down" || s == "up_down") return DesignKind::up_down;
    if (s == "bcd") return DesignKind::bcd;
    if (s == "rmj") return DesignKind::rmj;
    if (s == "un") return DesignKind::un_staircase;
    throw ConfigError("unknown design '" + std::string(s) + "'", "design");
}

inline MetricsRow row_from_cells(const std::vector<std::string>& v) {
    if (v.size() != results_columns().size()) throw ConfigError("results row has the wrong number of fields", "results");
    using detail::parse_sig;
    MetricsRow r;
    auto& c = r.config;
    c.model.family = parse_family(v[0]);
    c.model.location = parse_sig(v[1]);
    c.model.scale = parse_sig(v[2]);
    c.model.shape = parse_sig(v[3]);
    c.design = parse_design_kind(v[4]);
    c.estimator = parse_estimate_method(v[5]);
    c.p = parse_sig(v[6]);
    c.n = std::stoi(v[7]);
    c.S = std::stoi(v[8]);
    c.level = parse_sig(v[9]);
    c.master_seed = std::stoull(v[10]);
    c.d = parse_sig(v[11]);
    c.tau1 = parse_sig(v[12]);
    if (!v[13].empty()) c.x1 = parse_sig(v[13]);
    r.mse = parse_sig(v[14]);
    r.mse_natural = parse_sig(v[15]);
    r.mean_ci_width = parse_sig(v[16]);
    r.mean_ci_width_natural = parse_sig(v[17]);
    r.coverage = parse_sig(v[18]);
    r.undefined_count = std::stoi(v[19]);
    r.unbounded_count = std::stoi(v[20]);
    r.mean_trials = parse_sig(v[21]);
    if (!v[22].empty()) r.classification_rate = parse_sig(v[22]);
    return r;
}

inline void write_results_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    const auto& cols = results_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : rows) {
        const auto cells = row_cells(r);
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
        os << '\n';
    }
}

inline std::vector<MetricsRow> read_results_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty results file", "results");
    if (io::split_csv_line(line) != results_columns()) throw ConfigError("unexpected results header", "results");
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        rows.push_back(row_from_cells(io::split_csv_line(line)));
    }
    return rows;
}

}  // namespace sensitest
