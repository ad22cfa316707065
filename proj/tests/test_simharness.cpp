#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "sensitest/serialize.hpp"
#include "sensitest/simharness.hpp"

using namespace sensitest;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

StudyConfig small_study(DesignKind k, double p = 0.3) {
    StudyConfig c;
    c.model = ResponseModel{Family::logistic, 0.0, 0.5513288954217921, 1.0};
    c.design = k;
    c.estimator = default_estimator(k);
    c.p = p;
    c.n = 30;
    c.S = 200;
    c.master_seed = 11;
    return c;
}

fs::path temp_path(const std::string& name) {
    return fs::temp_directory_path() / ("sensitest_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Study, ValidationNamesTheField) {
    auto c = small_study(DesignKind::bcd);
    c.estimator = EstimateMethod::fieller_mle;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "estimator");
    }
    c = small_study(DesignKind::bcd, 1.0);
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "p");
    }
    EXPECT_THROW(default_estimator(DesignKind::un_staircase), ConfigError);
}

TEST(Study, ReplicatesAreReproducibleAndIndependentOfThreads) {
    for (auto k : {DesignKind::up_down, DesignKind::bcd, DesignKind::rmj}) {
        auto c = small_study(k);
        c.threads = 1;
        const auto one = run_replicates(c);
        c.threads = 4;
        const auto four = run_replicates(c);
        ASSERT_EQ(one, four) << to_string(k);
        // Replicate i depends only on the seed and i.
        EXPECT_EQ(run_replicate(c, 17), one[17]);
        c.master_seed = 12;
        EXPECT_NE(run_replicates(c), one);
    }
}

TEST(Study, ReplicateTrialCountsAndStimuli) {
    auto c = small_study(DesignKind::bcd, 0.1);
    std::vector<TrialRecord> trials;
    const auto r = run_replicate(c, 3, &trials);
    EXPECT_EQ(r.trials, 30);
    ASSERT_EQ(trials.size(), 30u);
    // The BCD starts at the target quantile and moves in steps of d on the log scale.
    EXPECT_NEAR(std::log(trials[0].stimulus), design_quantile(c.model, 0.1), 1e-12);
    for (std::size_t i = 1; i < trials.size(); ++i) {
        const double step = std::abs(std::log(trials[i].stimulus) - std::log(trials[i - 1].stimulus));
        EXPECT_TRUE(step < 1e-9 || std::abs(step - c.d) < 1e-9) << i;
    }
}

TEST(Study, AggregateMatchesHandComputation) {
    auto c = small_study(DesignKind::up_down, 0.5);
    const double xt = std::exp(design_quantile(c.model, 0.5));
    std::vector<ReplicateResult> reps(4);
    reps[0] = {0, true, xt * std::exp(0.1), xt * 0.5, xt * 2, IntervalShape::bounded, 30};
    reps[1] = {1, true, xt * std::exp(-0.3), xt * 1.1, xt * 2, IntervalShape::bounded, 30};
    reps[2] = {2, false, 0, 0, 0, IntervalShape::bounded, 30};
    reps[3] = {3, true, xt, 0.0, xt * 3, IntervalShape::bounded, 30};
    const auto row = aggregate(c, reps);
    EXPECT_EQ(row.undefined_count, 1);
    EXPECT_EQ(row.unbounded_count, 1);
    EXPECT_NEAR(row.mse, (0.01 + 0.09 + 0.0) / 3, 1e-12);
    EXPECT_NEAR(row.coverage, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(row.mean_ci_width, (std::log(4.0) + std::log(2 / 1.1)) / 2, 1e-12);
    EXPECT_NEAR(row.mean_trials, 30.0, 1e-12);
}

TEST(Study, CsvRoundTripPreservesSixSignificantDigits) {
    std::vector<MetricsRow> rows;
    for (auto k : {DesignKind::up_down, DesignKind::bcd, DesignKind::rmj}) {
        auto c = small_study(k);
        c.S = 50;
        rows.push_back(run_study(c));
    }
    rows[1].classification_rate = 0.123456789;
    std::stringstream ss;
    write_results_csv(ss, rows);
    const auto back = read_results_csv(ss);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back[i].config.design, rows[i].config.design);
        EXPECT_EQ(back[i].config.model.family, rows[i].config.model.family);
        EXPECT_EQ(back[i].config.master_seed, rows[i].config.master_seed);
        EXPECT_EQ(back[i].undefined_count, rows[i].undefined_count);
        EXPECT_NEAR(back[i].mse, rows[i].mse, 1e-5 * std::abs(rows[i].mse));
        EXPECT_NEAR(back[i].coverage, rows[i].coverage, 1e-5);
    }
    EXPECT_NEAR(*back[1].classification_rate, 0.123457, 1e-12);
    EXPECT_FALSE(back[0].classification_rate);
}

TEST(Study, HeaderListsEveryColumn) {
    std::stringstream ss;
    write_results_csv(ss, {});
    std::string header;
    std::getline(ss, header);
    for (const auto& col : results_columns()) EXPECT_NE(header.find(col), std::string::npos) << col;
}

TEST(Study, MalformedResultsAreRejected) {
    std::stringstream ss("not,a,header\n1,2,3\n");
    EXPECT_THROW(read_results_csv(ss), Error);
}

TEST(Export, WritesBothFormatsAndRejectsBadTargets) {
    auto c = small_study(DesignKind::bcd);
    c.S = 20;
    const std::vector<MetricsRow> rows{run_study(c)};
    const auto csv = temp_path("rows.csv");
    const auto js = temp_path("rows.json");
    json_io::export_results(rows, csv.string(), json_io::ResultFormat::delimited);
    json_io::export_results(rows, js.string(), json_io::ResultFormat::structured);
    std::ifstream fc(csv);
    ASSERT_EQ(read_results_csv(fc).size(), 1u);
    std::ifstream fj(js);
    const auto arr = json::parse(fj);
    ASSERT_EQ(arr.size(), 1u);
    const auto back = json_io::metrics_from_json(arr[0]);
    EXPECT_EQ(back.config.master_seed, c.master_seed);
    EXPECT_DOUBLE_EQ(back.coverage, rows[0].coverage);
    fs::remove(csv);
    fs::remove(js);

    try {
        json_io::export_results(rows, "", json_io::ResultFormat::delimited);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "output");
    }
    EXPECT_THROW(json_io::export_results({}, csv.string(), json_io::ResultFormat::delimited), ConfigError);
    EXPECT_THROW(json_io::export_results(rows, "/nonexistent/dir/x.csv", json_io::ResultFormat::delimited), Error);
    EXPECT_THROW(json_io::parse_result_format("xml"), ConfigError);
}

TEST(Plan, CellsCoverTheCrossProductWithDistinctSeeds) {
    const json j = {{"models", {{{"family", "normal"}}, {{"family", "cauchy"}, {"scale", 0.6744897501960817}}}},
                    {"designs", {"updown", "bcd", "rmj"}},
                    {"p", {0.1, 0.5}},
                    {"n", {30}},
                    {"S", 5},
                    {"seed", 9}};
    const auto plan = json_io::study_plan_from_json(j);
    const auto cells = plan.cells();
    ASSERT_EQ(cells.size(), 2u * 3u * 2u);
    std::set<std::uint64_t> seeds;
    for (const auto& c : cells) seeds.insert(c.master_seed);
    EXPECT_EQ(seeds.size(), cells.size());
    EXPECT_EQ(cells[0].estimator, EstimateMethod::fieller_mle);
    EXPECT_EQ(cells[1].estimator, EstimateMethod::cir_delta);
    EXPECT_EQ(cells[2].estimator, EstimateMethod::rmj);
    EXPECT_EQ(cells.back().model.family, Family::cauchy);
    EXPECT_THROW(json_io::study_plan_from_json({{"models", json::array()}}), ConfigError);
    EXPECT_THROW(json_io::load_study_plan("/nonexistent.study"), ConfigError);
}

TEST(Plan, StudyConfigJsonRoundTrip) {
    auto c = small_study(DesignKind::rmj, 0.9);
    c.x1 = 0.25;
    const auto back = json_io::study_config_from_json(json_io::study_config_to_json(c));
    EXPECT_EQ(back.model, c.model);
    EXPECT_EQ(back.design, c.design);
    EXPECT_EQ(back.p, c.p);
    EXPECT_EQ(back.n, c.n);
    EXPECT_EQ(back.master_seed, c.master_seed);
    EXPECT_EQ(back.x1, c.x1);
}

TEST(LogW, KsDistanceOracle) {
    // Against a sample placed at the chi^2_1 quantiles (i + 0.5)/n the
    // distance is exactly 0.5/n.
    std::vector<double> w;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        const double z = normal::quantile(0.5 + 0.5 * (i + 0.5) / n);
        w.push_back(z * z);
    }
    EXPECT_NEAR(ks_chi2_1(w), 0.5 / n, 1e-9);
    EXPECT_NEAR(ks_chi2_1({1e9}), 1.0, 1e-6);
}

TEST(LogW, StudyIsDeterministicAndThreadIndependent) {
    const auto a = logw_study(kTheta0, 360, 0.2, 30, 300, 5, 1);
    const auto b = logw_study(kTheta0, 360, 0.2, 30, 300, 5, 3);
    EXPECT_EQ(a.log_w, b.log_w);
    EXPECT_EQ(a.undefined_count, b.undefined_count);
    EXPECT_EQ(a.log_w.size() + a.undefined_count, 300u);
}

TEST(UnGrid, StudyIsDeterministicAndCountsAddUp) {
    const auto model = ResponseModel::probit_log(kTheta0);
    const auto g1 = un_grid_comparison(model, builtin_grid("notch6"), builtin_grid("all"), 6, LimitingType::I,
                                       80, 400, 3, 1);
    const auto g2 = un_grid_comparison(model, builtin_grid("notch6"), builtin_grid("all"), 6, LimitingType::I,
                                       80, 400, 3, 2);
    EXPECT_EQ(g1.a.counts, g2.a.counts);
    EXPECT_EQ(g1.b.counts, g2.b.counts);
    for (const LimitingDistribution* d : {&g1.a, &g1.b}) {
        int total = d->none_count;
        for (const auto& [v, k] : d->counts) total += k;
        EXPECT_EQ(total, 400);
        EXPECT_GE(d->mean_trials(), 7.0);
    }
    // Every limiting value lies on its grid.
    for (const auto& [v, k] : g1.a.counts) EXPECT_TRUE(builtin_grid("notch6").contains(v)) << v;
    UnStaircaseConfig cfg;
    cfg.grid = builtin_grid("notch6");
    EXPECT_THROW(un_grid_study(model, cfg, 10, 1), ConfigError);
}
