#include <atomic>
#include <filesystem>
#include <thread>

#include <gtest/gtest.h>

#include <unistd.h>

#include "sensitest/server.hpp"

using namespace sensitest;
using namespace sensitest::service;
namespace fs = std::filesystem;

namespace {

class ServerFixture : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("sensitest_http_" + std::to_string(::getpid()));
        fs::remove_all(dir_);
        store_ = std::make_unique<SessionStore>(dir_, 1);
        install_routes(server_, *store_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    }

    void TearDown() override {
        server_.stop();
        thread_.join();
        fs::remove_all(dir_);
    }

    httplib::Result post(const std::string& path, const json& body) {
        return client_->Post(path, body.dump(), "application/json");
    }

    fs::path dir_;
    std::unique_ptr<SessionStore> store_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::unique_ptr<httplib::Client> client_;
};

const json kF1 = {{"design", "un"}, {"procedure", "F1"}, {"grid", "notch6"}};

}  // namespace

TEST_F(ServerFixture, SessionLifecycle) {
    auto res = post("/sessions", {{"design", kF1}, {"material", "PETN"}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 201);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    const auto created = json::parse(res->body);
    const std::string id = created["id"];
    EXPECT_EQ(created["recommendation"]["stimulus"], 360.0);

    int seq = 0;
    for (int y : {1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0}) {
        res = post("/sessions/" + id + "/outcomes", {{"outcome", y}, {"echo", seq++}});
        ASSERT_EQ(res->status, 200) << res->body;
    }
    const auto done = json::parse(res->body);
    EXPECT_EQ(done["status"], "terminated");
    EXPECT_EQ(done["staircase"]["result"], 80.0);
    EXPECT_EQ(done["staircase"]["classification"], "insensitive");

    res = client_->Get("/sessions/" + id);
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body), done);

    res = client_->Get("/sessions");
    ASSERT_EQ(res->status, 200);
    const auto list = json::parse(res->body);
    ASSERT_EQ(list.size(), 1u);
    EXPECT_EQ(list[0]["trials"], 12);

    res = client_->Get("/sessions/" + id + "/export?format=csv");
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Content-Type"), "text/csv");
    EXPECT_NE(res->get_header_value("Content-Disposition").find(id + ".csv"), std::string::npos);
    EXPECT_EQ(res->body.substr(0, 27), "index,stimulus,unit,outcome");
    EXPECT_NE(res->body.find("12,60,N,0"), std::string::npos);

    res = client_->Get("/sessions/" + id + "/export?format=json");
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body), done);
}

TEST_F(ServerFixture, ErrorStatuses) {
    auto res = post("/sessions", {{"design", {{"design", "bcd"}, {"x1", 80}, {"d", -2}, {"p", 0.1}}}});
    ASSERT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["field"], "d");

    res = client_->Post("/sessions", "{not json", "application/json");
    EXPECT_EQ(res->status, 400);

    res = client_->Get("/sessions/nope");
    EXPECT_EQ(res->status, 404);

    const std::string id =
        json::parse(post("/sessions", {{"design", {{"design", "updown"}, {"x1", 100}, {"d", 0.2}}}})->body)["id"];
    ASSERT_EQ(post("/sessions/" + id + "/outcomes", {{"outcome", 1}, {"echo", 0}})->status, 200);
    res = post("/sessions/" + id + "/outcomes", {{"outcome", 1}, {"echo", 0}});
    ASSERT_EQ(res->status, 409);
    auto body = json::parse(res->body);
    EXPECT_EQ(body["reason"], "stale-echo");
    EXPECT_EQ(body["current"]["seq"], 1);

    res = post("/sessions/" + id + "/outcomes", {{"outcome", "yes"}, {"echo", 1}});
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["field"], "outcome");

    res = post("/sessions/" + id + "/close", {{"status", "abandoned"}});
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body)["status"], "abandoned");
    res = post("/sessions/" + id + "/outcomes", {{"outcome", 1}, {"echo", 1}});
    ASSERT_EQ(res->status, 409);
    EXPECT_EQ(json::parse(res->body)["reason"], "closed");

    res = client_->Get("/sessions/" + id + "/export?format=pdf");
    EXPECT_EQ(res->status, 400);
}

TEST_F(ServerFixture, PreflightIsAnswered) {
    auto res = client_->Options("/sessions");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST_F(ServerFixture, DoubleSubmitRecordsOneOutcome) {
    const std::string id = json::parse(post("/sessions", {{"design", kF1}})->body)["id"];
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> pool;
    for (int i = 0; i < 2; ++i)
        pool.emplace_back([&] {
            httplib::Client c("127.0.0.1", port_);
            auto r = c.Post("/sessions/" + id + "/outcomes", json{{"outcome", 1}, {"echo", 0}}.dump(),
                            "application/json");
            if (r && r->status == 200) ++ok;
            if (r && r->status == 409) ++conflict;
        });
    for (auto& t : pool) t.join();
    EXPECT_EQ(ok, 1);
    EXPECT_EQ(conflict, 1);
    EXPECT_EQ(json::parse(client_->Get("/sessions/" + id)->body)["seq"], 1);
}
