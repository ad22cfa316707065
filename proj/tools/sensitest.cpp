// Command-line entry point: studies, replays, offline estimation and the
// session service.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sensitest/sensitest.hpp"
#include "sensitest/server.hpp"

namespace fs = std::filesystem;
using namespace sensitest;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitStatistical = 3;

std::string data_root() {
    if (const char* v = std::getenv("SENSITEST_DATA_ROOT"); v && *v) return v;
#ifdef SENSITEST_DATA_ROOT
    return SENSITEST_DATA_ROOT;
#else
    return "data";
#endif
}

/// A path, or a packaged fixture alias such as petn_table5.
Dataset resolve_dataset(const std::string& ref) {
    if (fs::exists(ref)) return io::load_dataset(ref);
    const fs::path fixture = fs::path(data_root()) / "fixtures" / (ref + ".csv");
    if (fs::exists(fixture)) return io::load_dataset(fixture.string());
    throw ConfigError("no dataset file or fixture named '" + ref + "'", "dataset");
}

std::string fmt(double v, int digits = 4) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

void print_estimate(std::ostream& os, const QuantileEstimate& e, const std::string& unit) {
    os << "method   " << to_string(e.method) << "\n"
       << "p        " << e.p << "\n"
       << "point    " << fmt(e.point) << ' ' << unit << "\n"
       << "level    " << e.level << "\n";
    switch (e.shape) {
        case IntervalShape::bounded:
            os << "interval [" << (e.ci_low > 0.0 ? fmt(e.ci_low) : "0") << ", " << fmt(e.ci_high) << "] " << unit
               << "\n";
            break;
        case IntervalShape::whole_line: os << "interval whole stimulus range\n"; break;
        case IntervalShape::complement:
            os << "interval (0, " << fmt(e.ci_low) << "] and [" << fmt(e.ci_high) << ", inf) " << unit << "\n";
            break;
    }
}

void check_level(double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0,1)", "level");
}
void check_p(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("p must lie in (0,1)", "p");
}

QuantileEstimate estimate_dataset(const Dataset& data, EstimateMethod method, double p, double level,
                                  DoseScale scale, CirInterval recipe) {
    check_p(p);
    check_level(level);
    switch (method) {
        case EstimateMethod::fieller_mle: return fieller_ci(fit_probit_mle(data), p, level);
        case EstimateMethod::cir_delta: return cir_quantile(data, p, level, scale, recipe);
        case EstimateMethod::rmj: break;
    }
    throw ConfigError("the RMJ estimate needs the design run, not a dataset; replay with --procedure rmj", "method");
}

struct EstimateOpts {
    std::string dataset;
    std::string method = "fieller-mle";
    double p = 0.5;
    double level = 0.9;
    std::string dose_scale = "natural";
    std::string cir_interval = "crossing";
    std::string output = "text";
};

void add_estimate_flags(CLI::App* sub, EstimateOpts& o, const char* method_flag) {
    sub->add_option(method_flag, o.method, "Estimator: fieller-mle (mle), cir-delta (cir)");
    sub->add_option("--p", o.p, "Target response probability in (0,1)");
    sub->add_option("--level", o.level, "Two-sided confidence level in (0,1)");
    sub->add_option("--dose-scale", o.dose_scale, "CIR dose axis: natural or log")->check(CLI::IsMember({"natural", "log"}));
    sub->add_option("--cir-interval", o.cir_interval, "CIR interval recipe: crossing or nodes")
        ->check(CLI::IsMember({"crossing", "nodes"}));
}

bool structured(const std::string& output) {
    if (output == "structured" || output == "json") return true;
    if (output == "text") return false;
    throw ConfigError("output must be text or structured", "output");
}

int run_estimate(const EstimateOpts& o) {
    const Dataset data = resolve_dataset(o.dataset);
    const auto e = estimate_dataset(data, parse_estimate_method(o.method), o.p, o.level,
                                    parse_dose_scale(o.dose_scale), parse_cir_interval(o.cir_interval));
    if (structured(o.output)) {
        json j = json_io::estimate_to_json(e);
        j["unit"] = data.unit();
        j["trials"] = data.size();
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "trials   " << data.size() << "\n";
        print_estimate(std::cout, e, data.unit());
    }
    return kExitOk;
}

struct ReplayOpts {
    EstimateOpts est;
    std::string procedure;
    std::string grid = "all";
    std::optional<double> start;
    std::optional<int> K;
    std::optional<std::string> type;
    std::optional<double> threshold;
    double level = 0.9;
    std::uint64_t seed = 0;
    // updown / bcd / rmj
    std::optional<double> x1;
    std::optional<double> d;
    std::string step_scale = "log";
    double tau1 = 1.0;
};

json limiting_json(const LimitingStimulusResult& r, const std::string& unit) {
    json j{{"type", std::string(to_string(r.type))},
           {"trials", r.trials.size()},
           {"floor_hit", r.floor_hit},
           {"unit", unit}};
    j["limiting_value"] = r.value ? json(*r.value) : json(nullptr);
    if (r.classification)
        j["classification"] = *r.classification == Classification::sensitive ? "sensitive" : "insensitive";
    return j;
}

int run_replay(const ReplayOpts& o, bool estimator_given) {
    const Dataset data = resolve_dataset(o.est.dataset);
    const bool as_json = structured(o.est.output);
    json out{{"dataset", o.est.dataset}, {"trials", data.size()}, {"unit", data.unit()}};
    std::ostringstream text;
    text << "dataset  " << o.est.dataset << " (" << data.size() << " trials)\n";

    if (!o.procedure.empty()) {
        std::string proc = o.procedure;
        for (auto& c : proc) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        if (proc == "UPDOWN" || proc == "BCD" || proc == "RMJ") {
            check_level(o.est.level);
            DesignConfig cfg;
            const double x1 = o.x1.value_or(data.empty() ? 1.0 : data.trials().front().stimulus);
            if (proc == "UPDOWN") {
                cfg = UpDownConfig{x1, o.d.value_or(0.1), parse_step_scale(o.step_scale), std::nullopt, std::nullopt,
                                   SnapPolicy::nearest};
            } else if (proc == "BCD") {
                check_p(o.est.p);
                cfg = BcdConfig{x1, o.d.value_or(0.1), o.est.p, parse_step_scale(o.step_scale), std::nullopt,
                                std::nullopt, SnapPolicy::nearest};
            } else {
                check_p(o.est.p);
                RmjConfig r;
                r.x1 = x1;
                r.p = o.est.p;
                r.tau1 = o.tau1;
                r.n = static_cast<int>(data.size());
                cfg = r;
            }
            DesignState s = DesignState::start(cfg, o.seed);
            for (const auto& t : data.trials()) s.observe(t.outcome, t.stimulus);
            out["procedure"] = std::string(to_string(s.kind()));
            text << "procedure " << to_string(s.kind()) << "\n";
            if (s.kind() == DesignKind::rmj) {
                const auto e = rmj_estimate(s, o.est.level);
                out["estimate"] = json_io::estimate_to_json(e);
                print_estimate(text, e, data.unit());
            } else if (auto next = s.next_stimulus()) {
                out["next_stimulus"] = *next;
                text << "next     " << fmt(*next) << ' ' << data.unit() << "\n";
            }
        } else {
            const auto variant = parse_un_variant(proc);
            std::optional<UnStart> start;
            if (o.start) start = UnStart{StartKind::explicit_value, *o.start};
            auto cfg = UnStaircaseConfig::preset(variant, builtin_grid(o.grid), start);
            if (o.K) cfg.K = *o.K;
            if (o.type) cfg.limiting_type = parse_limiting_type(*o.type);
            if (o.threshold) cfg.threshold = *o.threshold;
            cfg.validate();
            const auto r = un_staircase_replay(cfg, data);
            out["procedure"] = proc;
            out["grid"] = o.grid;
            out["limiting"] = limiting_json(r, data.unit());
            text << "procedure " << proc << " on grid " << o.grid << " (K=" << cfg.K << ", type "
                 << to_string(cfg.limiting_type) << ")\n";
            text << "limiting " << (r.value ? fmt(*r.value, 2) + " " + data.unit() : std::string("none")) << "\n";
            if (r.floor_hit) text << "floor    reached the grid minimum\n";
            if (r.classification)
                text << "class    "
                     << (*r.classification == Classification::sensitive ? "sensitive" : "insensitive") << "\n";
        }
    }
    if (estimator_given) {
        const auto e = estimate_dataset(data, parse_estimate_method(o.est.method), o.est.p, o.est.level,
                                        parse_dose_scale(o.est.dose_scale), parse_cir_interval(o.est.cir_interval));
        out["estimate"] = json_io::estimate_to_json(e);
        print_estimate(text, e, data.unit());
    }
    if (o.procedure.empty() && !estimator_given)
        throw ConfigError("replay needs --procedure and/or --estimator", "procedure");
    if (as_json) std::cout << out.dump(2) << "\n";
    else std::cout << text.str();
    return kExitOk;
}

struct SimulateOpts {
    std::string config;
    std::optional<int> S;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    std::string out = "results.csv";
    std::string format = "csv";
    std::string output = "text";
};

int run_simulate(const SimulateOpts& o) {
    auto plan = json_io::load_study_plan(o.config);
    if (o.S) plan.S = *o.S;
    if (o.seed) plan.seed = *o.seed;
    const auto cells = plan.cells();
    std::vector<MetricsRow> rows;
    json failures = json::array();
    bool statistical_failure = false;
    for (auto c : cells) {
        c.threads = o.threads;
        try {
            rows.push_back(run_study(c));
        } catch (const std::exception& e) {
            statistical_failure = true;
            failures.push_back({{"cell", json_io::study_config_to_json(c)}, {"error", e.what()}});
            std::cerr << "cell " << to_string(c.model.family) << " " << to_string(c.design) << " p=" << c.p
                      << " n=" << c.n << " failed: " << e.what() << "\n";
        }
    }
    if (!rows.empty()) json_io::export_results(rows, o.out, json_io::parse_result_format(o.format));
    if (structured(o.output)) {
        json j{{"cells", cells.size()}, {"completed", rows.size()}, {"output", o.out}, {"failures", failures}};
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "family            design  p     n    mse      width    coverage undefined\n";
        for (const auto& r : rows)
            std::cout << std::left << std::setw(18) << to_string(r.config.model.family) << std::setw(8)
                      << to_string(r.config.design) << std::setw(6) << r.config.p << std::setw(5) << r.config.n
                      << std::setw(9) << fmt(r.mse) << std::setw(9) << fmt(r.mean_ci_width) << std::setw(9)
                      << fmt(r.coverage, 3) << r.undefined_count << "\n";
        std::cout << rows.size() << " of " << cells.size() << " cells written to " << o.out << "\n";
    }
    return statistical_failure ? kExitStatistical : kExitOk;
}

struct GridOpts {
    std::string grid_a = "notch6";
    std::string grid_b = "all";
    int K = 6;
    std::string type = "I";
    double threshold = 80.0;
    int S = 10000;
    std::uint64_t seed = 1;
    double alpha = kTheta0.alpha;
    double beta = kTheta0.beta;
    unsigned threads = 0;
    std::string output = "text";
};

json distribution_json(const LimitingDistribution& d) {
    json counts = json::object();
    for (const auto& [v, c] : d.counts) counts[io::format_number(v)] = c;
    return {{"classification_rate", d.classification_rate()},
            {"mean_trials", d.mean_trials()},
            {"none", d.none_count},
            {"floor_hits", d.floor_hits},
            {"runs", d.runs},
            {"counts", counts}};
}

int run_compare_grids(const GridOpts& o) {
    const auto model = ResponseModel::probit_log({o.alpha, o.beta});
    const auto g = un_grid_comparison(model, builtin_grid(o.grid_a), builtin_grid(o.grid_b), o.K,
                                      parse_limiting_type(o.type), o.threshold, o.S, o.seed, o.threads);
    if (structured(o.output)) {
        json j{{"S", o.S}, {"seed", o.seed}, {o.grid_a, distribution_json(g.a)}, {o.grid_b, distribution_json(g.b)}};
        std::cout << j.dump(2) << "\n";
        return kExitOk;
    }
    for (const auto& [name, d] : {std::pair{o.grid_a, g.a}, std::pair{o.grid_b, g.b}}) {
        std::cout << "grid " << name << ": classification rate " << fmt(d.classification_rate(), 4)
                  << ", mean trials " << fmt(d.mean_trials(), 2) << ", floor hits " << d.floor_hits << "\n";
        for (const auto& [v, c] : d.counts)
            std::cout << "  " << std::setw(8) << fmt(v, 1) << ' ' << fmt(static_cast<double>(c) / d.runs, 4) << "\n";
        if (d.none_count) std::cout << "  none     " << fmt(static_cast<double>(d.none_count) / d.runs, 4) << "\n";
    }
    return kExitOk;
}

struct LogwOpts {
    double x1 = 360.0;
    double d = 0.2;
    int n = 100;
    int S = 10000;
    std::uint64_t seed = 1;
    double alpha = kTheta0.alpha;
    double beta = kTheta0.beta;
    unsigned threads = 0;
    std::string out;
    std::string output = "text";
};

int run_logw(const LogwOpts& o) {
    const auto r = logw_study({o.alpha, o.beta}, o.x1, o.d, o.n, o.S, o.seed, o.threads);
    if (!o.out.empty()) {
        std::ofstream f(o.out);
        if (!f) throw ConfigError("cannot write '" + o.out + "'", "out");
        f << "log_w\n" << std::setprecision(17);
        for (double v : r.log_w) f << v << "\n";
    }
    if (structured(o.output)) {
        std::cout << json{{"S", r.S},
                          {"defined", r.log_w.size()},
                          {"undefined_count", r.undefined_count},
                          {"undefined_fraction", r.undefined_fraction()},
                          {"ks", r.ks}}
                         .dump(2)
                  << "\n";
    } else {
        std::cout << "replicates " << r.S << ", undefined " << r.undefined_count << " ("
                  << fmt(100.0 * r.undefined_fraction(), 2) << "%)\n"
                  << "KS distance to log chi2_1: " << fmt(r.ks) << "\n";
    }
    return kExitOk;
}

service::SessionStore* g_store = nullptr;
httplib::Server* g_server = nullptr;

struct ServeOpts {
    std::optional<std::string> data_dir;
    std::optional<std::string> bind;
    std::optional<std::uint64_t> seed;
};

service::ServiceEnv service_env(const ServeOpts& o) {
    auto env = service::ServiceEnv::from_environment();
    if (o.data_dir) env.data_dir = *o.data_dir;
    if (o.bind) env.set_bind(*o.bind);
    if (o.seed) env.seed = *o.seed;
    return env;
}

int run_serve(const ServeOpts& o) {
    const auto env = service_env(o);
    service::SessionStore store(env.data_dir, env.seed);
    for (const auto& e : store.load_errors()) std::cerr << "skipped session log " << e << "\n";
    httplib::Server server;
    service::install_routes(server, store);
    g_store = &store;
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    int port = env.port;
    if (port == 0) port = server.bind_to_any_port(env.host);
    else if (!server.bind_to_port(env.host, port)) throw Error("cannot bind " + env.host + ":" + std::to_string(port));
    std::cout << "listening on " << env.host << ":" << port << " with sessions in " << env.data_dir << std::endl;
    server.listen_after_bind();
    return kExitOk;
}

struct SessionOpts {
    ServeOpts store;
    std::string id;
    std::string config;
    std::optional<int> outcome;
    std::optional<int> echo;
    std::optional<std::string> note;
    std::optional<double> stimulus;
    std::string format = "csv";
    std::string out;
    std::string status = "finished";
};

int print_json(const json& j) {
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential sensitivity testing: designs, estimators, studies and live sessions", "sensitest"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", "sensitest 1.0.0");

    SimulateOpts sim;
    auto* simulate = app.add_subcommand("simulate", "Run a design/estimator study over a config grid");
    simulate->add_option("config", sim.config, "Study config (structured text)")->required();
    simulate->add_option("--S", sim.S, "Replicates per cell (overrides the config)");
    simulate->add_option("--seed", sim.seed, "Master seed (overrides the config)");
    simulate->add_option("--threads", sim.threads, "Worker threads (0: all cores)");
    simulate->add_option("--out", sim.out, "Results file");
    simulate->add_option("--format", sim.format, "Results format: csv or json")->check(CLI::IsMember({"csv", "json"}));
    simulate->add_option("--output", sim.output, "Console output: text or structured");

    GridOpts grid;
    auto* compare = app.add_subcommand("compare-grids", "Limiting-stimulus distributions of a staircase on two grids");
    compare->add_option("--grid-a", grid.grid_a, "First grid (notch6, all, f1-default)");
    compare->add_option("--grid-b", grid.grid_b, "Second grid");
    compare->add_option("--K", grid.K, "Consecutive negatives that stop the run");
    compare->add_option("--type", grid.type, "Limiting stimulus type: I or II");
    compare->add_option("--threshold", grid.threshold, "Classification threshold");
    compare->add_option("--S", grid.S, "Replicates per grid");
    compare->add_option("--seed", grid.seed, "Master seed");
    compare->add_option("--alpha", grid.alpha, "Probit intercept on log stimulus");
    compare->add_option("--beta", grid.beta, "Probit slope on log stimulus");
    compare->add_option("--threads", grid.threads, "Worker threads (0: all cores)");
    compare->add_option("--output", grid.output, "Console output: text or structured");

    LogwOpts lw;
    auto* logw = app.add_subcommand("logw", "Sample log W under up-and-down and compare with log chi2_1");
    logw->add_option("--x1", lw.x1, "First stimulus");
    logw->add_option("--d", lw.d, "Step on log stimulus");
    logw->add_option("--n", lw.n, "Trials per replicate");
    logw->add_option("--S", lw.S, "Replicates");
    logw->add_option("--seed", lw.seed, "Master seed");
    logw->add_option("--alpha", lw.alpha, "Probit intercept on log stimulus");
    logw->add_option("--beta", lw.beta, "Probit slope on log stimulus");
    logw->add_option("--threads", lw.threads, "Worker threads (0: all cores)");
    logw->add_option("--out", lw.out, "Write the log W sample to this file");
    logw->add_option("--output", lw.output, "Console output: text or structured");

    EstimateOpts est;
    auto* estimate = app.add_subcommand("estimate", "Quantile estimate and interval from a dataset");
    estimate->add_option("dataset", est.dataset, "Dataset file or fixture alias (petn_table3..6)")->required();
    add_estimate_flags(estimate, est, "--method");
    estimate->add_option("--output", est.output, "Output: text or structured");

    ReplayOpts rp;
    auto* replay = app.add_subcommand("replay", "Replay recorded outcomes through a procedure and/or estimator");
    replay->add_option("dataset", rp.est.dataset, "Dataset file or fixture alias (petn_table3..6)")->required();
    replay->add_option("--procedure", rp.procedure, "I1, I2, I3, F1, F2, updown, bcd or rmj");
    replay->add_option("--grid", rp.grid, "Staircase grid (notch6, all, f1-default)");
    replay->add_option("--start", rp.start, "Explicit staircase start (required by F2)");
    replay->add_option("--K", rp.K, "Override the procedure's K");
    replay->add_option("--type", rp.type, "Override the limiting stimulus type: I or II");
    replay->add_option("--threshold", rp.threshold, "Classification threshold");
    replay->add_option("--x1", rp.x1, "First stimulus for updown/bcd/rmj (default: first trial)");
    replay->add_option("--d", rp.d, "Step size for updown/bcd");
    replay->add_option("--step-scale", rp.step_scale, "Step scale for updown/bcd: log or linear");
    replay->add_option("--tau1", rp.tau1, "RMJ prior sd of log x1");
    replay->add_option("--seed", rp.seed, "Seed of the design's coin stream");
    auto* replay_est = replay->add_option("--estimator", rp.est.method, "Estimator: fieller-mle (mle), cir-delta (cir)");
    replay->add_option("--p", rp.est.p, "Target response probability in (0,1)");
    replay->add_option("--level", rp.est.level, "Two-sided confidence level in (0,1)");
    replay->add_option("--dose-scale", rp.est.dose_scale, "CIR dose axis: natural or log")
        ->check(CLI::IsMember({"natural", "log"}));
    replay->add_option("--cir-interval", rp.est.cir_interval, "CIR interval recipe: crossing or nodes")
        ->check(CLI::IsMember({"crossing", "nodes"}));
    replay->add_option("--output", rp.est.output, "Output: text or structured");

    ServeOpts sv;
    auto* serve = app.add_subcommand("serve", "Run the session service over HTTP");
    serve->add_option("--data-dir", sv.data_dir, "Session directory (env SENSITEST_DATA_DIR, default ./sessions)");
    serve->add_option("--bind", sv.bind, "host:port (env SENSITEST_BIND, default 127.0.0.1:8080)");
    serve->add_option("--seed", sv.seed, "Master seed (env SENSITEST_SEED, default 0)");

    SessionOpts so;
    auto* session = app.add_subcommand("session", "Operate on stored sessions without the HTTP service");
    session->add_option("--data-dir", so.store.data_dir, "Session directory (env SENSITEST_DATA_DIR)");
    session->add_option("--seed", so.store.seed, "Master seed (env SENSITEST_SEED)");
    session->require_subcommand(1, 1);
    auto* s_create = session->add_subcommand("create", "Create a session from a request body file");
    s_create->add_option("config", so.config, "JSON body: {design, material, unit, level, dose_scale}")->required();
    auto* s_list = session->add_subcommand("list", "List sessions");
    auto* s_show = session->add_subcommand("show", "Print a session snapshot");
    s_show->add_option("id", so.id, "Session id")->required();
    auto* s_record = session->add_subcommand("record", "Record one outcome");
    s_record->add_option("id", so.id, "Session id")->required();
    s_record->add_option("--outcome", so.outcome, "0 or 1")->required();
    s_record->add_option("--echo", so.echo, "Sequence number of the recommendation")->required();
    s_record->add_option("--note", so.note, "Free-text note");
    s_record->add_option("--stimulus", so.stimulus, "Stimulus actually tested, if not the recommendation");
    auto* s_close = session->add_subcommand("close", "Close a session");
    s_close->add_option("id", so.id, "Session id")->required();
    s_close->add_option("--status", so.status, "finished or abandoned")->check(CLI::IsMember({"finished", "abandoned"}));
    auto* s_export = session->add_subcommand("export", "Export a session");
    s_export->add_option("id", so.id, "Session id")->required();
    s_export->add_option("--format", so.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    s_export->add_option("--out", so.out, "Destination file (default: standard output)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*simulate) return run_simulate(sim);
        if (*compare) return run_compare_grids(grid);
        if (*logw) return run_logw(lw);
        if (*estimate) return run_estimate(est);
        if (*replay) return run_replay(rp, replay_est->count() > 0);
        if (*serve) return run_serve(sv);
        if (*session) {
            const auto env = service_env(so.store);
            service::SessionStore store(env.data_dir, env.seed);
            if (*s_create) {
                std::ifstream f(so.config);
                if (!f) throw ConfigError("cannot open '" + so.config + "'", "config");
                json body;
                try {
                    body = json::parse(f);
                } catch (const json::parse_error& e) {
                    throw ConfigError(std::string("malformed body: ") + e.what(), "config");
                }
                return print_json(store.create(body));
            }
            if (*s_list) return print_json(store.list());
            if (*s_show) return print_json(store.snapshot(so.id));
            if (*s_record) {
                json body{{"outcome", *so.outcome}, {"echo", *so.echo}};
                if (so.note) body["note"] = *so.note;
                if (so.stimulus) body["stimulus"] = *so.stimulus;
                return print_json(store.record(so.id, body));
            }
            if (*s_close) return print_json(store.close(so.id, so.status));
            if (*s_export) {
                const std::string text = store.export_session(so.id, so.format);
                if (so.out.empty()) {
                    std::cout << text;
                } else {
                    std::ofstream f(so.out);
                    if (!f) throw Error("cannot write '" + so.out + "'");
                    f << text;
                }
                return kExitOk;
            }
        }
    } catch (const StatisticalError& e) {
        std::cerr << "statistical failure: " << e.what() << "\n";
        return kExitStatistical;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const service::NotFoundError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
