#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <downscaler/cli.hpp>

using namespace downscaler;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "downscaler");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("downscaler_cli_" + name);
    fs::remove_all(d);
    return d;
}

const std::string kToy = std::string(DOWNSCALER_SOURCE_DIR) + "/configs/toy.json";

// pooled coverage of the downscaler rows over all held-out observations
double downscaler_coverage(const fs::path& scores) {
    CsvReader reader(scores.string(), {"pollutant", "method", "stratum", "n", "pmse", "pmae", "coverage95", "width95", "crps", "interval_score"});
    std::vector<std::string> f;
    double hit = 0.0, n = 0.0;
    while (reader.next(f))
        if (f[1] == "downscaler" && f[2] == "All") {
            hit += std::stod(f[6]) * std::stod(f[3]);
            n += std::stod(f[3]);
        }
    return hit / n;
}

}  // namespace

TEST(Cli, HelpListsEveryFlag) {
    const auto r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("--config"), std::string::npos);
    for (auto key : kScalarKeys) {
        std::replace(key.begin(), key.end(), '_', '-');
        EXPECT_NE(r.out.find("--" + key), std::string::npos) << key;
    }
    for (auto sub : {"simulate", "fit", "predict", "evaluate", "sensitivity", "baseline"}) EXPECT_NE(r.out.find(sub), std::string::npos);
}

TEST(Cli, MissingInputFileExitsWithTwo) {
    const auto r = run({"fit", "--monitoring", "/no/such/monitoring.csv", "--out", scratch("missing").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("MissingFile"), std::string::npos);
    EXPECT_NE(r.err.find("/no/such/monitoring.csv"), std::string::npos);
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, BadInvocationsExitWithTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"fly"}).code, 2);
    EXPECT_EQ(run({"simulate", "--seed", "abc"}).code, 2);
    EXPECT_EQ(run({"simulate", "--threads", "0"}).code, 2);
    EXPECT_EQ(run({"simulate", "--config", "/no/such/config.json"}).code, 2);

    const auto dir = scratch("badcfg");
    fs::create_directories(dir);
    std::ofstream(dir / "c.json") << R"({"seed": 1, "sede": 2})";
    const auto r = run({"simulate", "--config", (dir / "c.json").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("ConfigError"), std::string::npos);
    EXPECT_NE(r.err.find("sede"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, FlagsBeatEnvironmentBeatsConfig) {
    const auto a = scratch("env_a"), b = scratch("env_b");
    ::setenv("DOWNSCALER_OUT", a.string().c_str(), 1);
    EXPECT_EQ(run({"simulate", "--config", kToy}).code, 0);
    EXPECT_TRUE(fs::exists(a / "monitoring.csv"));
    EXPECT_EQ(run({"simulate", "--config", kToy, "--out", b.string()}).code, 0);
    EXPECT_TRUE(fs::exists(b / "monitoring.csv"));
    ::unsetenv("DOWNSCALER_OUT");
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, EveryOutputCarriesTheConfigHash) {
    const auto dir = scratch("hash");
    const std::vector<std::string> base{"--config", kToy, "--out", dir.string(), "--n-iter", "200", "--burn-in", "100", "--thin", "2"};
    for (const auto* sub : {"simulate", "fit", "predict", "evaluate", "baseline"}) {
        auto args = base;
        args.insert(args.begin(), sub);
        const auto r = run(args);
        ASSERT_EQ(r.code, 0) << sub << ": " << r.err;
    }
    std::string hash;
    int n = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string text = slurp(e.path());
        std::string h;
        if (e.path().extension() == ".csv") {
            ASSERT_EQ(text.rfind("# config_hash=", 0), 0u) << e.path();
            h = text.substr(14, text.find('\n') - 14);
        } else {
            h = nlohmann::json::parse(text).at("config_hash").get<std::string>();
        }
        if (hash.empty()) hash = h;
        EXPECT_EQ(h, hash) << e.path();
        ++n;
    }
    EXPECT_GE(n, 12);
    fs::remove_all(dir);
}

TEST(Cli, ToyPipelineIsCalibrated) {
    const auto dir = scratch("toy");
    for (const auto* sub : {"simulate", "fit", "evaluate"}) {
        const auto r = run({sub, "--config", kToy, "--out", dir.string()});
        ASSERT_EQ(r.code, 0) << sub << ": " << r.err;
    }
    const double cover = downscaler_coverage(dir / "scores.csv");
    EXPECT_GE(cover, 0.90);
    EXPECT_LE(cover, 0.98);
    fs::remove_all(dir);
}

TEST(Cli, OutputsAreByteIdenticalAcrossRunsAndThreadCounts) {
    std::vector<fs::path> dirs{scratch("det1"), scratch("det2"), scratch("det4")};
    const std::vector<std::string> threads{"1", "1", "4"};
    for (std::size_t k = 0; k < dirs.size(); ++k)
        for (const auto* sub : {"simulate", "fit", "evaluate"}) {
            const auto r = run({sub, "--config", kToy, "--out", dirs[k].string(), "--threads", threads[k], "--n-iter", "400", "--burn-in", "200"});
            ASSERT_EQ(r.code, 0) << sub << ": " << r.err;
        }
    for (const auto* file : {"chains/chain_0.csv", "chains/chain_1.csv", "chains/latent_1.csv", "scores.csv", "diagnostics.csv"}) {
        const auto ref = slurp(dirs[0] / file);
        EXPECT_FALSE(ref.empty()) << file;
        EXPECT_EQ(slurp(dirs[1] / file), ref) << file;
        EXPECT_EQ(slurp(dirs[2] / file), ref) << file;
    }
    for (const auto& d : dirs) fs::remove_all(d);
}
