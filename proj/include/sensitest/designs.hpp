#pragma once

// Sequential design engines: up-and-down, biased coin design (BCD),
// Robbins-Monro-Joseph (RMJ) and the UN limiting-stimulus staircase.
//
// A DesignState is a value. `observe` advances it in place; the free
// functions `up_down_next`, `bcd_next` and `rmj_next` return an advanced copy.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sensitest/dataset.hpp"
#include "sensitest/errors.hpp"
#include "sensitest/grid.hpp"
#include "sensitest/normal.hpp"
#include "sensitest/rng.hpp"

namespace sensitest {

/// Whether steps of size d are taken on log x (the default) or on x itself.
enum class StepScale { log, linear };

inline std::string_view to_string(StepScale s) noexcept { return s == StepScale::log ? "log" : "linear"; }

inline StepScale parse_step_scale(std::string_view s) {
    if (s == "log") return StepScale::log;
    if (s == "linear") return StepScale::linear;
    throw ConfigError("unknown step scale '" + std::string(s) + "'", "step_scale");
}

struct UpDownConfig {
    double x1 = 1.0;
    double d = 0.1;
    StepScale scale = StepScale::log;
    std::optional<int> max_trials;
    std::optional<StimulusGrid> grid;
    SnapPolicy snap = SnapPolicy::nearest;

    void validate() const {
        if (!(x1 > 0.0) || !std::isfinite(x1)) throw ConfigError("x1 must be positive", "x1");
        if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError("step size must be positive", "d");
        if (max_trials && *max_trials < 1) throw ConfigError("n must be at least 1", "n");
    }
};

struct BcdConfig {
    double x1 = 1.0;
    double d = 0.1;
    double p = 0.5;
    StepScale scale = StepScale::log;
    std::optional<int> max_trials;
    std::optional<StimulusGrid> grid;
    SnapPolicy snap = SnapPolicy::nearest;

    void validate() const {
        if (!(x1 > 0.0) || !std::isfinite(x1)) throw ConfigError("x1 must be positive", "x1");
        if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError("step size must be positive", "d");
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("target p must lie in (0,1)", "p");
        if (max_trials && *max_trials < 1) throw ConfigError("n must be at least 1", "n");
    }

    /// Probability of the randomized move: p/(1-p) below the median, (1-p)/p above.
    double coin_probability() const noexcept { return p <= 0.5 ? p / (1.0 - p) : (1.0 - p) / p; }
};

struct RmjConfig {
    double x1 = 1.0;
    double p = 0.5;
    double tau1 = 1.0;
    /// Proxy for the derivative of F at the target on the log scale; 0 selects phi(Phi^-1(p)).
    double slope_proxy = 0.0;
    int n = 30;
    std::optional<StimulusGrid> grid;
    SnapPolicy snap = SnapPolicy::nearest;

    double effective_slope_proxy() const { return slope_proxy > 0.0 ? slope_proxy : normal::pdf(normal::quantile(p)); }

    void validate() const {
        if (!(x1 > 0.0) || !std::isfinite(x1)) throw ConfigError("x1 must be positive", "x1");
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("target p must lie in (0,1)", "p");
        if (!(tau1 > 0.0)) throw ConfigError("tau1 must be positive", "tau1");
        if (slope_proxy < 0.0) throw ConfigError("slope proxy must be positive", "slope_proxy");
        if (n < 0) throw ConfigError("n must be nonnegative", "n");
    }
};

enum class LimitingType { I, II };

inline std::string_view to_string(LimitingType t) noexcept { return t == LimitingType::I ? "I" : "II"; }

inline LimitingType parse_limiting_type(std::string_view s) {
    if (s == "I" || s == "1") return LimitingType::I;
    if (s == "II" || s == "2") return LimitingType::II;
    throw ConfigError("limiting type must be I or II", "limiting_type");
}

enum class StartKind { grid_max, mid_range, explicit_value };

struct UnStart {
    StartKind kind = StartKind::grid_max;
    double value = 0.0;
};

enum class UnVariant { I1, I2, I3, F1, F2 };

inline UnVariant parse_un_variant(std::string_view s) {
    if (s == "I1" || s == "i1") return UnVariant::I1;
    if (s == "I2" || s == "i2") return UnVariant::I2;
    if (s == "I3" || s == "i3") return UnVariant::I3;
    if (s == "F1" || s == "f1") return UnVariant::F1;
    if (s == "F2" || s == "f2") return UnVariant::F2;
    throw ConfigError("unknown UN procedure '" + std::string(s) + "'", "procedure");
}

struct UnStaircaseConfig {
    StimulusGrid grid;
    int K = 6;
    LimitingType limiting_type = LimitingType::I;
    bool initial_stage = false;
    UnStart start;
    /// Classification threshold (e.g. 80 N for friction); none disables classification.
    std::optional<double> threshold;

    std::size_t start_index() const {
        switch (start.kind) {
            case StartKind::grid_max: return grid.size() - 1;
            case StartKind::mid_range: return (grid.size() - 1) / 2;
            case StartKind::explicit_value:
                if (auto i = grid.index_of(start.value)) return *i;
                throw ConfigError("start value " + io::format_number(start.value) + " is not a grid member", "start");
        }
        return 0;
    }

    void validate() const {
        if (grid.size() == 0) throw ConfigError("grid must not be empty", "grid");
        if (K < 1) throw ConfigError("K must be at least 1", "K");
        (void)start_index();
    }

    /// The manual's variants: I1, I2, I3 (impact) and F1, F2 (friction).
    /// F2 leaves its first stimulus undefined, so `start` is mandatory for it.
    static UnStaircaseConfig preset(UnVariant v, StimulusGrid grid, std::optional<UnStart> start = {}) {
        UnStaircaseConfig c;
        c.grid = std::move(grid);
        switch (v) {
            case UnVariant::I1: c.K = 6; c.initial_stage = true; c.limiting_type = LimitingType::I;
                c.start = {StartKind::mid_range, 0.0}; break;
            case UnVariant::I2: c.K = 3; c.initial_stage = false; c.limiting_type = LimitingType::II;
                c.start = {StartKind::grid_max, 0.0}; break;
            case UnVariant::I3: c.K = 25; c.initial_stage = true; c.limiting_type = LimitingType::II;
                c.start = {StartKind::mid_range, 0.0}; break;
            case UnVariant::F1: c.K = 6; c.initial_stage = false; c.limiting_type = LimitingType::I;
                c.start = {StartKind::grid_max, 0.0}; c.threshold = 80.0; break;
            case UnVariant::F2:
                if (!start) throw ConfigError("F2 has no defined initial stimulus; give an explicit start", "start");
                c.K = 25; c.initial_stage = false; c.limiting_type = LimitingType::II; break;
        }
        if (start) c.start = *start;
        c.validate();
        return c;
    }
};

using DesignConfig = std::variant<UpDownConfig, BcdConfig, RmjConfig, UnStaircaseConfig>;

enum class DesignKind { up_down, bcd, rmj, un_staircase };

inline std::string_view to_string(DesignKind k) noexcept {
    switch (k) {
        case DesignKind::up_down: return "updown";
        case DesignKind::bcd: return "bcd";
        case DesignKind::rmj: return "rmj";
        case DesignKind::un_staircase: return "un";
    }
    return "?";
}

inline DesignKind kind_of(const DesignConfig& c) noexcept { return static_cast<DesignKind>(c.index()); }

inline void validate(const DesignConfig& c) {
    std::visit([](const auto& cfg) { cfg.validate(); }, c);
}

// ---------------------------------------------------------------------------
// RMJ gain/offset schedule

/// Gains a_i, offsets b_i (i = 1..n) and prior standard deviations tau_i
/// (i = 1..n+1) of the RMJ recursion. Entry k of each vector holds index k+1.
struct RmjSchedule {
    double p = 0.5;
    double tau1 = 1.0;
    double slope_proxy = 0.0;
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> tau;

    std::size_t size() const noexcept { return a.size(); }
};

namespace detail {

// One step of the recursion. beta is the slope of the local probit
// approximation F(theta + z) ~ Phi(c + beta z), c = Phi^-1(p).
struct RmjStep {
    double a, b, tau_next_sq;
};

inline RmjStep rmj_step(double c, double beta, double tau_sq) {
    const double s = std::sqrt(1.0 + beta * beta * tau_sq);
    const double b = normal::cdf(c / s);
    const double g = normal::pdf(c / s);
    const double a = beta * tau_sq * g / (s * b * (1.0 - b));
    const double next = tau_sq - b * (1.0 - b) * a * a;
    return {a, b, next > 0.0 ? next : 0.0};
}

}  // namespace detail

inline RmjSchedule rmj_build_schedule(double p, double tau1, double slope_proxy, int n) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("p must lie in (0,1)");
    if (!(tau1 > 0.0)) throw DomainError("tau1 must be positive");
    if (!(slope_proxy > 0.0)) throw DomainError("slope proxy must be positive");
    if (n < 1) throw DomainError("schedule length must be at least 1");
    const double c = normal::quantile(p);
    const double beta = slope_proxy / normal::pdf(c);
    RmjSchedule s{p, tau1, slope_proxy, {}, {}, {}};
    s.a.reserve(n);
    s.b.reserve(n);
    s.tau.reserve(n + 1);
    double tau_sq = tau1 * tau1;
    s.tau.push_back(tau1);
    for (int i = 0; i < n; ++i) {
        const auto step = detail::rmj_step(c, beta, tau_sq);
        s.a.push_back(step.a);
        s.b.push_back(step.b);
        tau_sq = step.tau_next_sq;
        s.tau.push_back(std::sqrt(tau_sq));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Limiting stimulus results

enum class Classification { sensitive, insensitive };

inline std::string_view to_string(Classification c) noexcept {
    return c == Classification::sensitive ? "sensitive" : "insensitive";
}

/// Sensitive iff the limiting stimulus lies strictly below the threshold.
inline Classification classify(double value, double threshold) {
    if (!std::isfinite(value)) throw DomainError("classification needs a finite value");
    return value < threshold ? Classification::sensitive : Classification::insensitive;
}

struct LimitingStimulusResult {
    std::optional<double> value;
    LimitingType type = LimitingType::I;
    std::vector<TrialRecord> trials;
    std::optional<Classification> classification;
    bool floor_hit = false;
};

// ---------------------------------------------------------------------------
// Design state

class DesignState {
public:
    static DesignState start(DesignConfig config, std::uint64_t seed = 0) {
        validate(config);
        DesignState s;
        s.config_ = std::move(config);
        s.rng_ = RandomStream(seed, 0);
        std::visit([&s](const auto& cfg) { s.init(cfg); }, s.config_);
        return s;
    }

    DesignKind kind() const noexcept { return kind_of(config_); }
    const DesignConfig& config() const noexcept { return config_; }
    const std::vector<TrialRecord>& history() const noexcept { return history_; }
    const RandomStream& rng() const noexcept { return rng_; }
    bool terminated() const noexcept { return terminated_; }

    /// Recommended next stimulus; none once the design has terminated.
    std::optional<double> next_stimulus() const {
        if (terminated_) return std::nullopt;
        return recommended_;
    }

    std::optional<std::string> next_label() const {
        if (terminated_) return std::nullopt;
        return label_for(recommended_);
    }

    /// Current design coordinate (log x, or x for linear steps). For RMJ after
    /// n trials this is log x_{n+1}.
    double position() const noexcept { return position_; }

    /// RMJ: number of schedule steps consumed.
    std::size_t rmj_index() const noexcept { return history_.size(); }
    const RmjSchedule* rmj_schedule() const noexcept { return schedule_.get(); }

    /// BCD coin outcomes per trial: -1 no coin drawn, 0 tails, 1 heads.
    const std::vector<int>& coin_log() const noexcept { return coin_log_; }

    /// UN staircase bookkeeping.
    int consecutive_negatives() const noexcept { return un_.negatives; }
    bool in_initial_stage() const noexcept { return un_.initial; }
    bool floor_hit() const noexcept { return un_.floor_hit; }

    /// Advances the design with outcome y observed at `tested` (defaults to
    /// the recommendation). Overrides are not allowed for UN staircases.
    void observe(int y, std::optional<double> tested = std::nullopt) {
        if (terminated_) throw StateError("design has terminated");
        if (y != 0 && y != 1) throw DomainError("outcome must be 0 or 1");
        const double x = tested.value_or(recommended_);
        if (!(x > 0.0)) throw DomainError("stimulus must be positive");
        const bool overridden = tested && std::abs(*tested - recommended_) > 1e-12 * recommended_;
        if (overridden && kind() == DesignKind::un_staircase)
            throw StateError("UN staircases only accept the recommended stimulus");
        std::optional<std::string> label = label_for(x);
        history_.push_back(TrialRecord::make(static_cast<int>(history_.size()) + 1, x, y, std::move(label)));
        coin_log_.push_back(-1);
        std::visit([&](const auto& cfg) { this->advance(cfg, y, x, overridden); }, config_);
    }

    /// Type I and type II limiting stimuli implied by the trials so far.
    std::optional<double> limiting_value(LimitingType t) const {
        if (kind() != DesignKind::un_staircase) throw StateError("not a UN staircase");
        const auto& cfg = std::get<UnStaircaseConfig>(config_);
        if (t == LimitingType::I) {
            if (!un_.last_positive) return std::nullopt;
            return cfg.grid[*un_.last_positive];
        }
        if (un_.floor_hit) return cfg.grid.min();
        if (!terminated_) return std::nullopt;
        return cfg.grid[un_.level];
    }

    LimitingStimulusResult limiting_result() const {
        if (kind() != DesignKind::un_staircase) throw StateError("not a UN staircase");
        const auto& cfg = std::get<UnStaircaseConfig>(config_);
        LimitingStimulusResult r;
        r.type = cfg.limiting_type;
        r.value = limiting_value(cfg.limiting_type);
        r.trials = history_;
        r.floor_hit = un_.floor_hit;
        if (r.value && cfg.threshold) r.classification = classify(*r.value, *cfg.threshold);
        return r;
    }

    friend bool operator==(const DesignState& a, const DesignState& b) {
        return a.history_ == b.history_ && a.rng_ == b.rng_ && a.position_ == b.position_ &&
               a.recommended_ == b.recommended_ && a.terminated_ == b.terminated_ && a.coin_log_ == b.coin_log_ &&
               a.un_.level == b.un_.level && a.un_.negatives == b.un_.negatives &&
               a.un_.last_positive == b.un_.last_positive && a.un_.initial == b.un_.initial &&
               a.un_.floor_hit == b.un_.floor_hit;
    }

private:
    struct UnProgress {
        std::size_t level = 0;
        int negatives = 0;
        std::optional<std::size_t> last_positive;
        bool initial = false;
        bool floor_hit = false;
    };

    DesignConfig config_;
    std::vector<TrialRecord> history_;
    RandomStream rng_;
    double position_ = 0.0;
    double recommended_ = 0.0;
    bool terminated_ = false;
    std::vector<int> coin_log_;
    UnProgress un_;
    std::shared_ptr<const RmjSchedule> schedule_;

    const StimulusGrid* grid() const noexcept {
        return std::visit(
            [](const auto& cfg) -> const StimulusGrid* {
                using T = std::decay_t<decltype(cfg)>;
                if constexpr (std::is_same_v<T, UnStaircaseConfig>) return &cfg.grid;
                else return cfg.grid ? &*cfg.grid : nullptr;
            },
            config_);
    }

    std::optional<std::string> label_for(double x) const {
        if (const auto* g = grid())
            if (auto i = g->index_of(x)) return g->label_at(*i);
        return std::nullopt;
    }

    static double to_stimulus(double pos, StepScale s) { return s == StepScale::log ? std::exp(pos) : pos; }
    static double to_position(double x, StepScale s) { return s == StepScale::log ? std::log(x) : x; }

    // A linear walk holds at its lowest positive lattice point rather than
    // stepping to zero or below.
    void move(StepScale scale, double delta) {
        if (scale == StepScale::linear && position_ + delta <= 0.0) return;
        position_ += delta;
    }

    // `exact` avoids the exp(log x) round trip when the stimulus is known.
    template <class Cfg>
    void recommend_from_position(const Cfg& cfg, StepScale scale, std::optional<double> exact = {}) {
        const double x = exact.value_or(to_stimulus(position_, scale));
        if (!(x > 0.0)) throw StateError("walk left the positive stimulus range");
        recommended_ = cfg.grid ? snap_to_grid(x, *cfg.grid, cfg.snap) : x;
    }

    // -- initialisation
    void init(const UpDownConfig& c) {
        position_ = to_position(c.x1, c.scale);
        recommend_from_position(c, c.scale, c.x1);
    }
    void init(const BcdConfig& c) {
        position_ = to_position(c.x1, c.scale);
        recommend_from_position(c, c.scale, c.x1);
    }
    void init(const RmjConfig& c) {
        position_ = std::log(c.x1);
        if (c.n >= 1) schedule_ = std::make_shared<const RmjSchedule>(
                          rmj_build_schedule(c.p, c.tau1, c.effective_slope_proxy(), c.n));
        recommend_from_position(c, StepScale::log, c.x1);
        terminated_ = c.n == 0;
    }
    void init(const UnStaircaseConfig& c) {
        un_ = UnProgress{};
        un_.level = c.start_index();
        un_.initial = c.initial_stage;
        recommended_ = c.grid[un_.level];
    }

    // -- transitions
    template <class Cfg>
    void reposition_after_override(const Cfg&, StepScale scale, double x, bool overridden) {
        if (overridden) position_ = to_position(x, scale);
    }

    void advance(const UpDownConfig& c, int y, double x, bool overridden) {
        reposition_after_override(c, c.scale, x, overridden);
        move(c.scale, y == 1 ? -c.d : c.d);
        finish_walk_step(c, c.scale, c.max_trials);
    }

    void advance(const BcdConfig& c, int y, double x, bool overridden) {
        reposition_after_override(c, c.scale, x, overridden);
        const bool below_median = c.p <= 0.5;
        // Deterministic move on the "informative" outcome, coin on the other.
        const int forced = below_median ? 1 : 0;
        if (y == forced) {
            move(c.scale, below_median ? -c.d : c.d);
        } else {
            bool heads = true;
            if (c.p != 0.5) {
                heads = rng_.bernoulli(c.coin_probability());
                coin_log_.back() = heads ? 1 : 0;
            }
            if (heads) move(c.scale, below_median ? c.d : -c.d);
        }
        finish_walk_step(c, c.scale, c.max_trials);
    }

    void advance(const RmjConfig& c, int y, double x, bool overridden) {
        if (overridden) position_ = std::log(x);
        const std::size_t i = history_.size() - 1;
        position_ -= schedule_->a[i] * (y - schedule_->b[i]);
        if (history_.size() >= static_cast<std::size_t>(c.n)) {
            terminated_ = true;
            recommended_ = std::exp(position_);
            return;
        }
        recommend_from_position(c, StepScale::log);
    }

    void advance(const UnStaircaseConfig& c, int y, double x, bool overridden) {
        (void)x;
        (void)overridden;
        auto& u = un_;
        if (u.initial) {
            if (y == 1) {
                u.initial = false;
                on_positive(c);
            } else if (u.level + 1 < c.grid.size()) {
                ++u.level;
            } else {
                // Escalated to the top without a positive: ordinary rule from here on.
                u.initial = false;
                on_negative(c);
            }
        } else if (y == 1) {
            on_positive(c);
        } else {
            on_negative(c);
        }
        if (!terminated_) recommended_ = c.grid[u.level];
    }

    void on_positive(const UnStaircaseConfig&) {
        un_.last_positive = un_.level;
        un_.negatives = 0;
        if (un_.level == 0) {
            un_.floor_hit = true;
            terminated_ = true;
        } else {
            --un_.level;
        }
    }

    void on_negative(const UnStaircaseConfig& c) {
        if (++un_.negatives >= c.K) terminated_ = true;
    }

    template <class Cfg>
    void finish_walk_step(const Cfg& c, StepScale scale, const std::optional<int>& max_trials) {
        if (max_trials && history_.size() >= static_cast<std::size_t>(*max_trials)) {
            terminated_ = true;
            return;
        }
        recommend_from_position(c, scale);
    }
};

namespace detail {

inline DesignState advanced_copy(const DesignState& s, DesignKind expected, int y) {
    if (s.kind() != expected) throw StateError("state is not a " + std::string(to_string(expected)) + " design");
    DesignState next = s;
    next.observe(y);
    return next;
}

}  // namespace detail

inline DesignState up_down_next(const DesignState& s, int y) {
    return detail::advanced_copy(s, DesignKind::up_down, y);
}

/// The coin is drawn from the state's own stream, so the returned state
/// carries the advanced stream position.
inline DesignState bcd_next(const DesignState& s, int y) { return detail::advanced_copy(s, DesignKind::bcd, y); }

inline DesignState rmj_next(const DesignState& s, int y) { return detail::advanced_copy(s, DesignKind::rmj, y); }

/// Outcome source for staircase runs: maps a stimulus to 0/1.
using Responder = std::function<int(double stimulus, RandomStream& rng)>;

inline LimitingStimulusResult un_staircase_run(const UnStaircaseConfig& config, const Responder& responder,
                                               RandomStream& rng) {
    DesignState s = DesignState::start(config);
    while (!s.terminated()) s.observe(responder(*s.next_stimulus(), rng));
    return s.limiting_result();
}

/// Replays a recorded outcome sequence through a staircase, checking that
/// every recorded stimulus matches the procedure's recommendation.
inline LimitingStimulusResult un_staircase_replay(const UnStaircaseConfig& config, const Dataset& data) {
    DesignState s = DesignState::start(config);
    for (const auto& t : data.trials()) {
        if (s.terminated())
            throw ConfigError("trial " + std::to_string(t.index) + " follows termination of the procedure", "dataset");
        const double want = *s.next_stimulus();
        if (std::abs(t.stimulus - want) > 1e-9 * want)
            throw ConfigError("trial " + std::to_string(t.index) + " tested " + io::format_number(t.stimulus) +
                                  " but the procedure calls for " + io::format_number(want),
                              "dataset");
        s.observe(t.outcome);
    }
    if (!s.terminated()) throw ConfigError("dataset ends before the procedure terminates", "dataset");
    return s.limiting_result();
}

}  // namespace sensitest
