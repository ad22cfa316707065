#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(SENSITEST_CLI) + " " + args + " 2>/dev/null";
    Run r;
    std::FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

class Scratch {
public:
    Scratch() {
        path_ = fs::temp_directory_path() / ("sensitest_cli_" + std::to_string(::getpid()));
        fs::create_directories(path_);
    }
    ~Scratch() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }
    std::string str() const { return path_.string(); }

private:
    fs::path path_;
};

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Cli, HelpMatchesGolden) {
    const auto r = run("--help");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, slurp(fs::path(SENSITEST_GOLDEN) / "help.txt"));
    EXPECT_EQ(run("--version").out, "sensitest 1.0.0\n");
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("simulate").code, 2);
    EXPECT_EQ(run("simulate /nonexistent.study").code, 2);
    EXPECT_EQ(run("estimate petn_table5 --method cir --p 0.1 --level 1.5").code, 2);
    EXPECT_EQ(run("estimate /nonexistent.csv --method cir --p 0.1").code, 2);
    EXPECT_EQ(run("replay petn_table3 --procedure F9").code, 2);
}

TEST(Cli, ReplaysPetnStaircases) {
    auto r = run("replay petn_table3 --procedure F1 --grid notch6 --output structured");
    ASSERT_EQ(r.code, 0);
    auto j = json::parse(r.out);
    EXPECT_EQ(j["limiting"]["limiting_value"], 80.0);
    EXPECT_EQ(j["limiting"]["classification"], "insensitive");

    r = run("replay petn_table4 --procedure F1 --grid all --output structured");
    ASSERT_EQ(r.code, 0);
    j = json::parse(r.out);
    EXPECT_EQ(j["limiting"]["limiting_value"], 48.0);
    EXPECT_EQ(j["limiting"]["classification"], "sensitive");

    r = run("replay petn_table3 --procedure F1 --grid notch6");
    EXPECT_NE(r.out.find("80"), std::string::npos);
    EXPECT_NE(r.out.find("insensitive"), std::string::npos);
}

TEST(Cli, EstimatesFromDatasets) {
    auto r = run("estimate petn_table5 --method cir --p 0.1 --level 0.9 --output structured");
    ASSERT_EQ(r.code, 0);
    const auto j = json::parse(r.out);
    EXPECT_NEAR(j["point"].get<double>(), 58.95, 0.01);
    EXPECT_EQ(j["method"], "cir-delta");
    // Complete separation: the MLE does not exist.
    EXPECT_EQ(run("estimate petn_table3 --method mle --p 0.5").code, 3);
    // Target outside the fitted rate range.
    Scratch dir;
    write(dir / "flat.csv", "index,stimulus,unit,outcome\n1,10,N,0\n2,10,N,1\n3,20,N,1\n4,20,N,0\n");
    EXPECT_EQ(run("estimate " + (dir / "flat.csv").string() + " --method cir --p 0.1").code, 3);
}

TEST(Cli, SimulateIsDeterministic) {
    Scratch dir;
    write(dir / "plan.study", R"({"models":[{"family":"normal"},{"family":"logistic","scale":0.5513288954217921}],
                                 "designs":["updown","bcd","rmj"],"p":[0.1,0.5],"n":[30],"S":50,"seed":3})");
    const std::string base = "simulate " + (dir / "plan.study").string() + " --S 1 --seed 7 --threads 1 --out ";
    ASSERT_EQ(run(base + (dir / "a.csv").string()).code, 0);
    ASSERT_EQ(run(base + (dir / "b.csv").string()).code, 0);
    const auto a = slurp(dir / "a.csv");
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(dir / "b.csv"));
    // 12 cells plus the header.
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 13);

    ASSERT_EQ(run("simulate " + (dir / "plan.study").string() + " --out " + (dir / "c.json").string() +
                  " --format json")
                  .code,
              0);
    EXPECT_EQ(json::parse(slurp(dir / "c.json")).size(), 12u);
    EXPECT_EQ(run("simulate " + (dir / "plan.study").string() + " --out " + (dir / "d.csv").string() +
                  " --format xml")
                  .code,
              2);
}

TEST(Cli, LogWStudy) {
    Scratch dir;
    const auto r = run("logw --n 30 --S 200 --seed 2 --output structured --out " + (dir / "w.txt").string());
    ASSERT_EQ(r.code, 0);
    const auto j = json::parse(r.out);
    EXPECT_EQ(j["S"], 200);
    EXPECT_GE(j["ks"].get<double>(), 0.0);
    EXPECT_TRUE(fs::exists(dir / "w.txt"));
}

TEST(Cli, SessionCommands) {
    Scratch dir;
    write(dir / "body.json", R"({"design":{"design":"un","procedure":"F1","grid":"notch6"},"id":"t3"})");
    const std::string s = "session --data-dir " + (dir / "store").string() + " ";
    auto r = run(s + "create " + (dir / "body.json").string());
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(json::parse(r.out)["recommendation"]["stimulus"], 360.0);
    int echo = 0;
    for (int y : {1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0})
        ASSERT_EQ(run(s + "record t3 --outcome " + std::to_string(y) + " --echo " + std::to_string(echo++)).code, 0);
    r = run(s + "show t3");
    EXPECT_EQ(json::parse(r.out)["staircase"]["result"], 80.0);
    EXPECT_EQ(run(s + "record t3 --outcome 0 --echo 12").code, 2);
    EXPECT_EQ(run(s + "show missing").code, 2);
    r = run(s + "export t3 --format csv");
    EXPECT_EQ(r.out.substr(0, 27), "index,stimulus,unit,outcome");
    EXPECT_EQ(json::parse(run(s + "list").out).size(), 1u);
}
