#pragma once

// JSON forms of configs, trials, estimates and study rows, and the
// versioned per-trial record shared by design replay and the session log.

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sensitest/designs.hpp"
#include "sensitest/errors.hpp"
#include "sensitest/isotonic.hpp"
#include "sensitest/quantile.hpp"
#include "sensitest/simharness.hpp"

namespace sensitest::json_io {

using json = nlohmann::json;

inline constexpr int kRecordVersion = 1;

// -- helpers

/// Reads a required field, converting type errors into ConfigError(field).
template <class T>
T required(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError("missing field", key);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("wrong type", key);
    }
}

template <class T>
T optional_field(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("wrong type", key);
    }
}

/// Non-finite numbers are written as the strings "inf", "-inf", "nan".
inline json number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline double to_number(const json& j, const char* key = "value") {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    throw ConfigError("expected a number", key);
}

// -- grids

inline json grid_to_json(const StimulusGrid& g) {
    json j{{"values", g.values()}};
    if (!g.labels().empty()) j["labels"] = g.labels();
    return j;
}

/// Accepts a builtin grid name, an array of values or {values, labels}.
inline StimulusGrid grid_from_json(const json& j) {
    if (j.is_string()) return builtin_grid(j.get<std::string>());
    if (j.is_array()) {
        try {
            return StimulusGrid(j.get<std::vector<double>>());
        } catch (const json::exception&) {
            throw ConfigError("grid values must be numbers", "grid");
        }
    }
    auto values = required<std::vector<double>>(j, "values");
    auto labels = optional_field<std::vector<std::string>>(j, "labels", {});
    return StimulusGrid(std::move(values), std::move(labels));
}

// -- design configs

inline json design_to_json(const DesignConfig& c) {
    return std::visit(
        [](const auto& cfg) -> json {
            using T = std::decay_t<decltype(cfg)>;
            json j;
            if constexpr (std::is_same_v<T, UpDownConfig> || std::is_same_v<T, BcdConfig>) {
                j["design"] = std::is_same_v<T, UpDownConfig> ? "updown" : "bcd";
                j["x1"] = cfg.x1;
                j["d"] = cfg.d;
                j["step_scale"] = std::string(to_string(cfg.scale));
                if constexpr (std::is_same_v<T, BcdConfig>) j["p"] = cfg.p;
                if (cfg.max_trials) j["n"] = *cfg.max_trials;
                if (cfg.grid) j["grid"] = grid_to_json(*cfg.grid);
                j["snap_policy"] = std::string(to_string(cfg.snap));
            } else if constexpr (std::is_same_v<T, RmjConfig>) {
                j["design"] = "rmj";
                j["x1"] = cfg.x1;
                j["p"] = cfg.p;
                j["tau1"] = cfg.tau1;
                j["slope_proxy"] = cfg.slope_proxy;
                j["n"] = cfg.n;
                if (cfg.grid) j["grid"] = grid_to_json(*cfg.grid);
                j["snap_policy"] = std::string(to_string(cfg.snap));
            } else {
                j["design"] = "un";
                j["grid"] = grid_to_json(cfg.grid);
                j["K"] = cfg.K;
                j["limiting_type"] = std::string(to_string(cfg.limiting_type));
                j["initial_stage"] = cfg.initial_stage;
                switch (cfg.start.kind) {
                    case StartKind::grid_max: j["start"] = "grid-max"; break;
                    case StartKind::mid_range: j["start"] = "mid-range"; break;
                    case StartKind::explicit_value: j["start"] = cfg.start.value; break;
                }
                if (cfg.threshold) j["threshold"] = *cfg.threshold;
            }
            return j;
        },
        c);
}

inline UnStart start_from_json(const json& j) {
    if (j.is_number()) return {StartKind::explicit_value, j.get<double>()};
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "grid-max") return {StartKind::grid_max, 0.0};
        if (s == "mid-range") return {StartKind::mid_range, 0.0};
    }
    throw ConfigError("start must be grid-max, mid-range or a grid value", "start");
}

/// Parses and validates a design config. UN configs may name a `procedure`
/// (I1, I2, I3, F1, F2) whose settings individual fields then override.
inline DesignConfig design_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("design config must be an object", "design");
    const auto kind = required<std::string>(j, "design");
    auto snap = [&] { return parse_snap_policy(optional_field<std::string>(j, "snap_policy", "nearest")); };
    auto grid = [&]() -> std::optional<StimulusGrid> {
        if (!j.contains("grid") || j["grid"].is_null()) return std::nullopt;
        return grid_from_json(j["grid"]);
    };
    auto max_trials = [&]() -> std::optional<int> {
        if (!j.contains("n") || j["n"].is_null()) return std::nullopt;
        return required<int>(j, "n");
    };
    DesignConfig out;
    if (kind == "updown" || kind == "up-down") {
        UpDownConfig c;
        c.x1 = required<double>(j, "x1");
        c.d = required<double>(j, "d");
        c.scale = parse_step_scale(optional_field<std::string>(j, "step_scale", "log"));
        c.max_trials = max_trials();
        c.grid = grid();
        c.snap = snap();
        out = c;
    } else if (kind == "bcd") {
        BcdConfig c;
        c.x1 = required<double>(j, "x1");
        c.d = required<double>(j, "d");
        c.p = required<double>(j, "p");
        c.scale = parse_step_scale(optional_field<std::string>(j, "step_scale", "log"));
        c.max_trials = max_trials();
        c.grid = grid();
        c.snap = snap();
        out = c;
    } else if (kind == "rmj") {
        RmjConfig c;
        c.x1 = required<double>(j, "x1");
        c.p = required<double>(j, "p");
        c.tau1 = optional_field<double>(j, "tau1", 1.0);
        c.slope_proxy = optional_field<double>(j, "slope_proxy", 0.0);
        c.n = required<int>(j, "n");
        c.grid = grid();
        c.snap = snap();
        out = c;
    } else if (kind == "un") {
        if (!j.contains("grid")) throw ConfigError("missing field", "grid");
        StimulusGrid g = grid_from_json(j["grid"]);
        std::optional<UnStart> start;
        if (j.contains("start") && !j["start"].is_null()) start = start_from_json(j["start"]);
        UnStaircaseConfig c;
        if (j.contains("procedure")) {
            c = UnStaircaseConfig::preset(parse_un_variant(required<std::string>(j, "procedure")), g, start);
        } else {
            c.grid = g;
            if (start) c.start = *start;
        }
        c.K = optional_field<int>(j, "K", c.K);
        if (j.contains("limiting_type")) c.limiting_type = parse_limiting_type(required<std::string>(j, "limiting_type"));
        c.initial_stage = optional_field<bool>(j, "initial_stage", c.initial_stage);
        if (j.contains("threshold")) {
            if (j["threshold"].is_null()) c.threshold.reset();
            else c.threshold = required<double>(j, "threshold");
        }
        out = c;
    } else {
        throw ConfigError("unknown design '" + kind + "'", "design");
    }
    validate(out);
    return out;
}

// -- trials and datasets

inline json trial_to_json(const TrialRecord& t) {
    json j{{"index", t.index}, {"stimulus", t.stimulus}, {"outcome", t.outcome}};
    if (t.grid_label) j["label"] = *t.grid_label;
    return j;
}

inline TrialRecord trial_from_json(const json& j) {
    std::optional<std::string> label;
    if (j.contains("label") && j["label"].is_string()) label = j["label"].get<std::string>();
    try {
        return TrialRecord::make(required<int>(j, "index"), required<double>(j, "stimulus"), required<int>(j, "outcome"),
                                 label);
    } catch (const DomainError& e) {
        throw ConfigError(e.what(), "trial");
    }
}

inline json dataset_to_json(const Dataset& d) {
    json trials = json::array();
    for (const auto& t : d.trials()) trials.push_back(trial_to_json(t));
    return {{"unit", d.unit()}, {"trials", trials}};
}

inline Dataset dataset_from_json(const json& j) {
    std::vector<TrialRecord> trials;
    for (const auto& t : required<json>(j, "trials")) trials.push_back(trial_from_json(t));
    return Dataset(std::move(trials), optional_field<std::string>(j, "unit", "N"));
}

// -- estimates

inline json estimate_to_json(const QuantileEstimate& e) {
    return {{"p", e.p},
            {"point", number(e.point)},
            {"ci_low", e.ci_low > 0.0 ? number(e.ci_low) : json("-inf")},
            {"ci_high", number(e.ci_high)},
            {"level", e.level},
            {"method", std::string(to_string(e.method))},
            {"shape", std::string(to_string(e.shape))},
            {"bounded", e.bounded()}};
}

// -- the versioned per-trial record

/// One trial as persisted: outcome, tested stimulus, and the coin and RNG
/// position after the step so a replay can be verified.
struct TrialEvent {
    int seq = 0;
    int outcome = 0;
    double stimulus = 0.0;
    std::optional<std::string> note;
    int coin = -1;
    std::uint64_t rng_position = 0;
    std::string timestamp;
};

inline json trial_event_to_json(const TrialEvent& e) {
    json j{{"v", kRecordVersion}, {"type", "outcome"},    {"seq", e.seq},
           {"outcome", e.outcome}, {"stimulus", e.stimulus}, {"coin", e.coin},
           {"rng_position", e.rng_position}};
    if (e.note) j["note"] = *e.note;
    if (!e.timestamp.empty()) j["ts"] = e.timestamp;
    return j;
}

inline TrialEvent trial_event_from_json(const json& j) {
    if (optional_field<int>(j, "v", 0) != kRecordVersion) throw ConfigError("unsupported record version", "v");
    TrialEvent e;
    e.seq = required<int>(j, "seq");
    e.outcome = required<int>(j, "outcome");
    e.stimulus = required<double>(j, "stimulus");
    e.coin = optional_field<int>(j, "coin", -1);
    e.rng_position = optional_field<std::uint64_t>(j, "rng_position", 0);
    if (j.contains("note") && j["note"].is_string()) e.note = j["note"].get<std::string>();
    e.timestamp = optional_field<std::string>(j, "ts", "");
    return e;
}

/// Event describing the trial just observed by `s`.
inline TrialEvent last_trial_event(const DesignState& s, std::optional<std::string> note = {}) {
    if (s.history().empty()) throw StateError("no trial recorded");
    TrialEvent e;
    e.seq = static_cast<int>(s.history().size()) - 1;
    e.outcome = s.history().back().outcome;
    e.stimulus = s.history().back().stimulus;
    e.coin = s.coin_log().back();
    e.rng_position = s.rng().position();
    e.note = std::move(note);
    return e;
}

/// Applies one persisted trial, checking that coin and stream position agree.
inline void apply_trial_event(DesignState& s, const TrialEvent& e) {
    if (e.seq != static_cast<int>(s.history().size()))
        throw StateError("record sequence " + std::to_string(e.seq) + " out of order");
    s.observe(e.outcome, e.stimulus);
    if (s.coin_log().back() != e.coin || s.rng().position() != e.rng_position)
        throw StateError("replayed coin differs from the recorded one at sequence " + std::to_string(e.seq));
}

inline DesignState replay_design(const DesignConfig& c, std::uint64_t seed, const std::vector<TrialEvent>& events) {
    DesignState s = DesignState::start(c, seed);
    for (const auto& e : events) apply_trial_event(s, e);
    return s;
}

// -- study configs and rows

inline json model_to_json(const ResponseModel& m) {
    json j{{"family", std::string(to_string(m.family))}, {"location", m.location}, {"scale", m.scale}};
    if (m.family == Family::skewed_logistic) j["shape"] = m.shape;
    return j;
}

/// {family, location, scale, shape} or {family: "probit-log", alpha, beta}.
inline ResponseModel model_from_json(const json& j) {
    const auto family = parse_family(required<std::string>(j, "family"));
    if (family == Family::probit_log && j.contains("alpha"))
        return ResponseModel::probit_log({required<double>(j, "alpha"), required<double>(j, "beta")});
    ResponseModel m{family, optional_field<double>(j, "location", 0.0), optional_field<double>(j, "scale", 1.0),
                    optional_field<double>(j, "shape", 1.0)};
    m.validate();
    return m;
}

inline json study_config_to_json(const StudyConfig& c) {
    json j{{"model", model_to_json(c.model)},
           {"design", std::string(to_string(c.design))},
           {"estimator", std::string(to_string(c.estimator))},
           {"p", c.p},
           {"n", c.n},
           {"S", c.S},
           {"level", c.level},
           {"seed", c.master_seed},
           {"d", c.d},
           {"tau1", c.tau1}};
    if (c.x1) j["x1"] = *c.x1;
    return j;
}

inline json metrics_to_json(const MetricsRow& r) {
    json j{{"config", study_config_to_json(r.config)},
           {"mse", number(r.mse)},
           {"mse_natural", number(r.mse_natural)},
           {"mean_ci_width", number(r.mean_ci_width)},
           {"mean_ci_width_natural", number(r.mean_ci_width_natural)},
           {"coverage", number(r.coverage)},
           {"undefined_count", r.undefined_count},
           {"unbounded_count", r.unbounded_count},
           {"mean_trials", number(r.mean_trials)}};
    j["classification_rate"] = r.classification_rate ? number(*r.classification_rate) : json(nullptr);
    return j;
}

inline StudyConfig study_config_from_json(const json& j) {
    StudyConfig c;
    c.model = model_from_json(required<json>(j, "model"));
    c.design = parse_design_kind(required<std::string>(j, "design"));
    c.estimator = j.contains("estimator") ? parse_estimate_method(required<std::string>(j, "estimator"))
                                          : default_estimator(c.design);
    c.p = required<double>(j, "p");
    c.n = required<int>(j, "n");
    c.S = optional_field<int>(j, "S", 10000);
    c.level = optional_field<double>(j, "level", 0.9);
    c.master_seed = optional_field<std::uint64_t>(j, "seed", 1);
    c.d = optional_field<double>(j, "d", 0.5);
    c.tau1 = optional_field<double>(j, "tau1", 1.0);
    if (j.contains("x1") && !j["x1"].is_null()) c.x1 = required<double>(j, "x1");
    c.validate();
    return c;
}

inline MetricsRow metrics_from_json(const json& j) {
    MetricsRow r;
    r.config = study_config_from_json(required<json>(j, "config"));
    r.mse = to_number(required<json>(j, "mse"), "mse");
    r.mse_natural = to_number(required<json>(j, "mse_natural"), "mse_natural");
    r.mean_ci_width = to_number(required<json>(j, "mean_ci_width"), "mean_ci_width");
    r.mean_ci_width_natural = to_number(required<json>(j, "mean_ci_width_natural"), "mean_ci_width_natural");
    r.coverage = to_number(required<json>(j, "coverage"), "coverage");
    r.undefined_count = required<int>(j, "undefined_count");
    r.unbounded_count = required<int>(j, "unbounded_count");
    r.mean_trials = to_number(required<json>(j, "mean_trials"), "mean_trials");
    if (j.contains("classification_rate") && !j["classification_rate"].is_null())
        r.classification_rate = to_number(j["classification_rate"], "classification_rate");
    return r;
}

/// A grid of study cells: every model x design x p x n. Cell seeds are
/// derived from the plan seed and the cell's position so any cell can be
/// rerun alone from its echoed seed.
struct StudyPlan {
    std::vector<ResponseModel> models;
    std::vector<DesignKind> designs;
    std::vector<double> ps;
    std::vector<int> ns;
    int S = 10000;
    double level = 0.9;
    double d = 0.5;
    double tau1 = 1.0;
    std::uint64_t seed = 1;

    std::vector<StudyConfig> cells() const {
        std::vector<StudyConfig> out;
        std::uint64_t k = 0;
        for (const auto& m : models)
            for (int n : ns)
                for (double p : ps)
                    for (DesignKind dk : designs) {
                        StudyConfig c;
                        c.model = m;
                        c.design = dk;
                        c.estimator = default_estimator(dk);
                        c.p = p;
                        c.n = n;
                        c.S = S;
                        c.level = level;
                        c.d = d;
                        c.tau1 = tau1;
                        c.master_seed = mix_seed(seed, k++);
                        c.validate();
                        out.push_back(c);
                    }
        return out;
    }
};

inline StudyPlan study_plan_from_json(const json& j) {
    StudyPlan plan;
    for (const auto& m : required<json>(j, "models")) plan.models.push_back(model_from_json(m));
    for (const auto& d : required<std::vector<std::string>>(j, "designs")) plan.designs.push_back(parse_design_kind(d));
    plan.ps = required<std::vector<double>>(j, "p");
    plan.ns = required<std::vector<int>>(j, "n");
    plan.S = optional_field<int>(j, "S", 10000);
    plan.level = optional_field<double>(j, "level", 0.9);
    plan.d = optional_field<double>(j, "d", 0.5);
    plan.tau1 = optional_field<double>(j, "tau1", 1.0);
    plan.seed = optional_field<std::uint64_t>(j, "seed", 1);
    if (plan.models.empty() || plan.designs.empty() || plan.ps.empty() || plan.ns.empty())
        throw ConfigError("study plan needs at least one model, design, p and n", "plan");
    return plan;
}

inline StudyPlan load_study_plan(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open study config '" + path + "'", "config");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed study config: ") + e.what(), "config");
    }
    return study_plan_from_json(j);
}

// -- result files

enum class ResultFormat { delimited, structured };

inline ResultFormat parse_result_format(std::string_view s) {
    if (s == "csv" || s == "delimited") return ResultFormat::delimited;
    if (s == "json" || s == "structured") return ResultFormat::structured;
    throw ConfigError("unknown format '" + std::string(s) + "'", "format");
}

inline void export_results(const std::vector<MetricsRow>& rows, const std::string& path, ResultFormat format) {
    if (path.empty()) throw ConfigError("empty destination path", "output");
    if (rows.empty()) throw ConfigError("no rows to export", "rows");
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    if (format == ResultFormat::delimited) {
        write_results_csv(f, rows);
    } else {
        json arr = json::array();
        for (const auto& r : rows) arr.push_back(metrics_to_json(r));
        f << arr.dump(2) << '\n';
    }
    if (!f) throw Error("write to '" + path + "' failed");
}

}  // namespace sensitest::json_io
