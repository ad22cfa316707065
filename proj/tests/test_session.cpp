#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include <unistd.h>

#include "sensitest/session.hpp"

using namespace sensitest;
using namespace sensitest::service;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("sensitest_sessions_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

Dataset fixture(const std::string& name) {
    return io::load_dataset(std::string(SENSITEST_DATA_ROOT) + "/fixtures/" + name + ".csv");
}

std::string fixture_body(const std::string& name) {
    std::ifstream f(std::string(SENSITEST_DATA_ROOT) + "/fixtures/" + name + ".csv");
    std::string line, out;
    while (std::getline(f, line))
        if (!line.empty() && line[0] != '#') out += line + "\n";
    return out;
}

json record(SessionStore& store, const std::string& id, int outcome, std::optional<double> stimulus = {}) {
    const int seq = store.snapshot(id)["seq"].get<int>();
    json body{{"outcome", outcome}, {"echo", seq}};
    if (stimulus) body["stimulus"] = *stimulus;
    return store.record(id, body);
}

const json kBcd = {{"design", "bcd"}, {"x1", 80}, {"d", 20}, {"p", 0.1}, {"step_scale", "linear"}};

}  // namespace

TEST(DesignJson, RoundTripsEveryKind) {
    const std::vector<json> configs = {
        {{"design", "updown"}, {"x1", 360}, {"d", 0.2}, {"n", 30}},
        {{"design", "bcd"}, {"x1", 80}, {"d", 20}, {"p", 0.1}, {"step_scale", "linear"}, {"n", 50}},
        {{"design", "bcd"}, {"x1", 96}, {"d", 0.1}, {"p", 0.25}, {"grid", "notch6"}, {"snap_policy", "nearest-above"}},
        {{"design", "rmj"}, {"x1", 80}, {"p", 0.1}, {"n", 20}, {"tau1", 0.5}},
        {{"design", "un"}, {"procedure", "F1"}, {"grid", "notch6"}},
        {{"design", "un"}, {"procedure", "F2"}, {"grid", "all"}, {"start", 120}},
        {{"design", "un"}, {"grid", {10, 20, 40}}, {"K", 3}, {"limiting_type", "II"}, {"start", "mid-range"}},
    };
    for (const auto& j : configs) {
        const auto c = json_io::design_from_json(j);
        const auto j2 = json_io::design_to_json(c);
        EXPECT_EQ(json_io::design_to_json(json_io::design_from_json(j2)), j2) << j.dump();
    }
    const auto f1 = std::get<UnStaircaseConfig>(json_io::design_from_json(configs[4]));
    EXPECT_EQ(f1.K, 6);
    EXPECT_EQ(*f1.threshold, 80.0);
}

TEST(DesignJson, InvalidConfigsNameTheField) {
    auto field_of = [](const json& j) {
        try {
            json_io::design_from_json(j);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("none");
    };
    EXPECT_EQ(field_of({{"design", "bcd"}, {"x1", 80}, {"d", -1}, {"p", 0.1}}), "d");
    EXPECT_EQ(field_of({{"design", "bcd"}, {"x1", 80}, {"d", 1}, {"p", 1.5}}), "p");
    EXPECT_EQ(field_of({{"design", "bcd"}, {"x1", 80}, {"d", 1}}), "p");
    EXPECT_EQ(field_of({{"design", "bcd"}, {"x1", "eighty"}, {"d", 1}, {"p", 0.1}}), "x1");
    EXPECT_EQ(field_of({{"design", "un"}, {"procedure", "F2"}, {"grid", "notch6"}}), "start");
    EXPECT_EQ(field_of({{"design", "shewhart"}}), "design");
}

TEST(Store, CreateRecordAndRestartGiveTheSameSnapshot) {
    TempDir dir;
    json before;
    std::string id;
    {
        SessionStore store(dir.path(), 5);
        const auto s = store.create({{"design", kBcd}, {"material", "PETN"}});
        id = s["id"];
        EXPECT_EQ(s["seq"], 0);
        EXPECT_EQ(s["status"], "active");
        EXPECT_EQ(s["dose_scale"], "natural");
        EXPECT_EQ(s["recommendation"]["stimulus"], 80.0);
        for (int y : {0, 1, 0, 0, 1}) record(store, id, y);
        before = store.snapshot(id);
        EXPECT_EQ(before["seq"], 5);
    }
    SessionStore again(dir.path(), 5);
    EXPECT_TRUE(again.load_errors().empty());
    EXPECT_EQ(again.snapshot(id), before);
    EXPECT_EQ(again.list().size(), 1u);
}

TEST(Store, StaleEchoIsRejectedWithTheCurrentState) {
    TempDir dir;
    SessionStore store(dir.path());
    const std::string id = store.create({{"design", kBcd}})["id"];
    store.record(id, {{"outcome", 0}, {"echo", 0}});
    try {
        store.record(id, {{"outcome", 1}, {"echo", 0}});
        FAIL();
    } catch (const StaleEchoError& e) {
        EXPECT_EQ(e.current()["seq"], 1);
    }
    EXPECT_EQ(store.snapshot(id)["seq"], 1);
}

TEST(Store, ClosedSessionsRejectOutcomes) {
    TempDir dir;
    SessionStore store(dir.path());
    const std::string id = store.create({{"design", kBcd}})["id"];
    record(store, id, 0);
    const auto closed = store.close(id, "abandoned");
    EXPECT_EQ(closed["status"], "abandoned");
    EXPECT_EQ(closed["recommendation"], nullptr);
    EXPECT_THROW(store.record(id, {{"outcome", 0}, {"echo", 1}}), SessionClosedError);
    EXPECT_THROW(store.close(id, "finished"), SessionClosedError);
    EXPECT_THROW(store.close(id, "paused"), ConfigError);

    const std::string un = store.create({{"design", {{"design", "un"}, {"procedure", "F1"}, {"grid", "notch6"}}}})["id"];
    const auto table3 = fixture("petn_table3");
    for (const auto& t : table3.trials()) record(store, un, t.outcome);
    EXPECT_EQ(store.snapshot(un)["status"], "terminated");
    EXPECT_THROW(record(store, un, 0), SessionClosedError);
}

TEST(Store, BadRequestsNameTheField) {
    TempDir dir;
    SessionStore store(dir.path());
    auto field_of = [&](auto&& f) {
        try {
            f();
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("none");
    };
    EXPECT_EQ(field_of([&] { store.create({{"design", {{"design", "bcd"}, {"x1", 80}, {"d", 0}, {"p", 0.1}}}}); }),
              "d");
    EXPECT_EQ(field_of([&] { store.create({{"material", "PETN"}}); }), "design");
    EXPECT_EQ(field_of([&] { store.create({{"design", kBcd}, {"level", 1.2}}); }), "level");
    EXPECT_EQ(field_of([&] { store.create({{"design", kBcd}, {"id", "../etc"}}); }), "id");
    const std::string id = store.create({{"design", kBcd}, {"id", "run-1"}})["id"];
    EXPECT_EQ(id, "run-1");
    EXPECT_EQ(field_of([&] { store.create({{"design", kBcd}, {"id", "run-1"}}); }), "id");
    EXPECT_EQ(field_of([&] { store.record(id, {{"outcome", 2}, {"echo", 0}}); }), "outcome");
    EXPECT_EQ(field_of([&] { store.record(id, {{"outcome", 1}}); }), "echo");
    EXPECT_EQ(field_of([&] { store.record(id, {{"outcome", 1}, {"echo", 0}, {"stimulus", -3}}); }), "stimulus");
    EXPECT_THROW(store.snapshot("missing"), NotFoundError);
    EXPECT_EQ(store.snapshot(id)["seq"], 0);

    const std::string un = store.create({{"design", {{"design", "un"}, {"procedure", "F1"}, {"grid", "notch6"}}}})["id"];
    EXPECT_EQ(field_of([&] { store.record(un, {{"outcome", 1}, {"echo", 0}, {"stimulus", 240}}); }), "stimulus");
    EXPECT_EQ(store.snapshot(un)["seq"], 0);
}

TEST(Store, TornFinalLineIsTruncatedOnLoad) {
    TempDir dir;
    std::string id;
    json before;
    {
        SessionStore store(dir.path());
        id = store.create({{"design", kBcd}})["id"];
        for (int y : {0, 0, 1}) record(store, id, y);
        before = store.snapshot(id);
    }
    const auto path = dir.path() / (id + ".jsonl");
    const auto good_size = fs::file_size(path);
    {
        std::ofstream f(path, std::ios::app);
        f << R"({"v":1,"type":"outcome","seq":3,"outc)";
    }
    SessionStore again(dir.path());
    EXPECT_TRUE(again.load_errors().empty());
    EXPECT_EQ(again.snapshot(id), before);
    EXPECT_EQ(fs::file_size(path), good_size);
    // The truncated log accepts further outcomes.
    EXPECT_EQ(record(again, id, 1)["seq"], 4);
}

TEST(Store, CorruptLogsAreReportedNotLoaded) {
    TempDir dir;
    std::string id;
    {
        SessionStore store(dir.path());
        id = store.create({{"design", kBcd}})["id"];
        record(store, id, 0);
        record(store, id, 0);
    }
    const auto path = dir.path() / (id + ".jsonl");
    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    in.close();
    // Tamper with the recorded coin of the second outcome.
    auto e = json::parse(lines[2]);
    e["coin"] = e["coin"].get<int>() == 1 ? 0 : 1;
    lines[2] = e.dump();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << "\n";
    out.close();
    SessionStore again(dir.path());
    ASSERT_EQ(again.load_errors().size(), 1u);
    EXPECT_THROW(again.snapshot(id), NotFoundError);
}

TEST(Store, PetnSeriesOneThroughABcdSession) {
    TempDir dir;
    SessionStore store(dir.path());
    const std::string id = store.create({{"design", kBcd}, {"unit", "N"}})["id"];
    const auto table5 = fixture("petn_table5");
    for (const auto& t : table5.trials()) record(store, id, t.outcome, t.stimulus);
    const auto s = store.snapshot(id);
    EXPECT_EQ(s["seq"], 30);
    EXPECT_NEAR(s["estimate"]["point"].get<double>(), 58.95, 0.01);
    EXPECT_EQ(store.export_session(id, "csv"), fixture_body("petn_table5"));
    const auto j = json::parse(store.export_session(id, "json"));
    EXPECT_EQ(j, s);
    EXPECT_THROW(store.export_session(id, "xml"), ConfigError);
}

TEST(Store, PetnTable3ThroughAnF1Session) {
    TempDir dir;
    SessionStore store(dir.path());
    const std::string id = store.create({{"design", {{"design", "un"}, {"procedure", "F1"}, {"grid", "notch6"}}}})["id"];
    EXPECT_EQ(store.snapshot(id)["recommendation"]["stimulus"], 360.0);
    const auto table3 = fixture("petn_table3");
    const auto& trials = table3.trials();
    for (const auto& t : trials) {
        const auto s = store.snapshot(id);
        ASSERT_EQ(s["recommendation"]["stimulus"].get<double>(), t.stimulus);
        record(store, id, t.outcome);
    }
    const auto s = store.snapshot(id);
    EXPECT_EQ(s["status"], "terminated");
    EXPECT_EQ(s["staircase"]["result"], 80.0);
    EXPECT_EQ(s["staircase"]["classification"], "insensitive");
    EXPECT_EQ(store.export_session(id, "csv"), fixture_body("petn_table3"));
}

TEST(Store, EmptySessionExportsHeaderOnly) {
    TempDir dir;
    SessionStore store(dir.path());
    const std::string id = store.create({{"design", kBcd}})["id"];
    EXPECT_EQ(store.export_session(id, "csv"), "index,stimulus,unit,outcome\n");
    EXPECT_EQ(store.snapshot(id)["estimate"], nullptr);
}

TEST(Store, RunningEstimatesPerDesign) {
    TempDir dir;
    SessionStore store(dir.path());
    const std::string rmj = store.create({{"design", {{"design", "rmj"}, {"x1", 80}, {"p", 0.1}, {"n", 3}}}})["id"];
    EXPECT_NEAR(store.snapshot(rmj)["estimate"]["point"].get<double>(), 80.0, 1e-9);
    EXPECT_EQ(store.snapshot(rmj)["estimate_final"], false);
    for (int y : {0, 0, 1}) record(store, rmj, y);
    EXPECT_EQ(store.snapshot(rmj)["estimate_final"], true);

    const std::string bcd = store.create({{"design", kBcd}})["id"];
    record(store, bcd, 0);
    record(store, bcd, 1);
    const auto s = store.snapshot(bcd);
    EXPECT_EQ(s["estimate"], nullptr);
    EXPECT_TRUE(s.contains("estimate_note"));
    EXPECT_EQ(s["observed_rate_range"].size(), 2u);
}

TEST(Store, RandomSessionsReplayToEqualSnapshots) {
    TempDir dir;
    std::map<std::string, json> snaps;
    RandomStream r(99, 0);
    {
        SessionStore store(dir.path(), 3);
        for (int i = 0; i < 1000; ++i) {
            json design;
            switch (i % 4) {
                case 0: design = {{"design", "updown"}, {"x1", 100}, {"d", 0.1 + r.uniform() * 0.3}}; break;
                case 1:
                    design = {{"design", "bcd"}, {"x1", 60}, {"d", 10}, {"p", 0.05 + 0.9 * r.uniform()},
                              {"step_scale", "linear"}};
                    break;
                case 2: design = {{"design", "rmj"}, {"x1", 80}, {"p", 0.1 + 0.8 * r.uniform()}, {"n", 25}}; break;
                default: design = {{"design", "un"}, {"procedure", i % 8 == 3 ? "I1" : "F1"}, {"grid", "all"}}; break;
            }
            const std::string id = store.create({{"design", design}})["id"];
            const int n = static_cast<int>(r.uniform() * 20);
            for (int t = 0; t < n; ++t) {
                if (store.snapshot(id)["status"] != "active") break;
                std::optional<double> override_x;
                if (i % 4 != 3 && r.uniform() < 0.1) override_x = 20.0 + std::floor(r.uniform() * 100);
                record(store, id, r.bernoulli(0.4), override_x);
            }
            if (i % 50 == 0) store.close(id, "abandoned");
            snaps[id] = store.snapshot(id);
        }
    }
    SessionStore again(dir.path(), 3);
    ASSERT_TRUE(again.load_errors().empty());
    ASSERT_EQ(again.list().size(), 1000u);
    for (const auto& [id, snap] : snaps) ASSERT_EQ(again.snapshot(id), snap) << id;
}

TEST(Store, ConcurrentWritersRecordEachSequenceOnce) {
    TempDir dir;
    SessionStore store(dir.path());
    const std::string id = store.create({{"design", {{"design", "updown"}, {"x1", 100}, {"d", 0.2}}}})["id"];
    std::atomic<int> accepted{0}, stale{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < 4; ++w)
        pool.emplace_back([&, w] {
            for (int k = 0; k < 50; ++k) {
                const int seq = store.snapshot(id)["seq"].get<int>();
                try {
                    store.record(id, {{"outcome", (w + k) % 2}, {"echo", seq}});
                    ++accepted;
                } catch (const StaleEchoError&) {
                    ++stale;
                }
            }
        });
    for (auto& t : pool) t.join();
    EXPECT_EQ(accepted + stale, 200);
    EXPECT_EQ(store.snapshot(id)["seq"].get<int>(), accepted.load());
    SessionStore again(dir.path());
    EXPECT_EQ(again.snapshot(id), store.snapshot(id));
}

TEST(Env, ReadsBindAndDirectory) {
    ::setenv("SENSITEST_BIND", "0.0.0.0:9123", 1);
    ::setenv("SENSITEST_DATA_DIR", "/tmp/x", 1);
    auto env = ServiceEnv::from_environment();
    EXPECT_EQ(env.host, "0.0.0.0");
    EXPECT_EQ(env.port, 9123);
    EXPECT_EQ(env.data_dir, "/tmp/x");
    EXPECT_THROW(env.set_bind("nohost"), ConfigError);
    ::unsetenv("SENSITEST_BIND");
    ::unsetenv("SENSITEST_DATA_DIR");
    env = ServiceEnv::from_environment();
    EXPECT_EQ(env.port, 8080);
}
