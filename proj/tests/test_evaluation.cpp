#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <downscaler/evaluation.hpp>
#include <downscaler/ols.hpp>
#include <downscaler/simulator.hpp>

using namespace downscaler;

namespace {

// Trapezoid rule for the integral of (F(z) - 1{z >= y})^2 over the empirical
// CDF of the draws, with nodes at every jump so each panel is exact.
double crps_by_integration(std::vector<double> draws, double y) {
    std::sort(draws.begin(), draws.end());
    std::vector<double> knots = draws;
    knots.push_back(y);
    std::sort(knots.begin(), knots.end());
    const double n = static_cast<double>(draws.size());
    auto g = [&](double z) {
        const double F = static_cast<double>(std::upper_bound(draws.begin(), draws.end(), z) - draws.begin()) / n;
        const double H = z >= y ? 1.0 : 0.0;
        return (F - H) * (F - H);
    };
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
        const double a = knots[k], b = knots[k + 1];
        if (b <= a) continue;
        // one-sided limits inside the panel
        const double eps = 1e-9 * (b - a);
        total += 0.5 * (g(a + eps) + g(b - eps)) * (b - a);
    }
    return total;
}

std::string temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "downscaler_evaluation";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

}  // namespace

TEST(Scores, PmseAndPmaeHandCases) {
    EXPECT_EQ(pmse({1.0, 2.0}, {1.0, 2.0}), 0.0);
    EXPECT_DOUBLE_EQ(pmse({1.0, 2.0}, {2.0, 4.0}), 2.5);
    EXPECT_DOUBLE_EQ(pmae({1.0, 2.0}, {2.0, 4.0}), 1.5);
    const std::vector<double> pred{1.0, 5.0, 2.0, 9.0}, obs{2.0, 0.0, 4.0, 1.0};
    const std::vector<bool> mask{true, false, true, false};
    EXPECT_DOUBLE_EQ(pmse(pred, obs, mask), pmse({1.0, 2.0}, {2.0, 4.0}));
    EXPECT_DOUBLE_EQ(pmae(pred, obs, mask), pmae({1.0, 2.0}, {2.0, 4.0}));
    EXPECT_DOUBLE_EQ(pmse({2.0, 1.0}, {4.0, 2.0}), 2.5);
    EXPECT_THROW(pmse(pred, obs, {false, false, false, false}), EmptyMask);
    EXPECT_THROW(pmae({1.0}, {1.0, 2.0}), DimensionMismatch);
}

TEST(Scores, CrpsHandCases) {
    EXPECT_EQ(crps_empirical({3.0, 3.0, 3.0}, 3.0), 0.0);
    EXPECT_DOUBLE_EQ(crps_empirical({0.0, 1.0}, 0.5), 0.25);
    EXPECT_THROW(crps_empirical({1.0}, 0.0), InsufficientDraws);
}

TEST(Scores, CrpsOfStandardNormalSample) {
    Rng rng(12);
    std::vector<double> d(10000);
    for (auto& v : d) v = rng.normal();
    // closed form at y = 0: 2 phi(0) - 1/sqrt(pi)
    const double exact = 2.0 / std::sqrt(2.0 * std::numbers::pi) - 1.0 / std::sqrt(std::numbers::pi);
    EXPECT_NEAR(exact, 0.2337, 1e-4);
    EXPECT_NEAR(crps_empirical(d, 0.0), exact, 0.02 * exact);
}

TEST(Scores, CrpsMatchesNumericalIntegration) {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> d(5 + rep * 3);
        for (auto& v : d) v = 2.0 * rng.normal() + 1.0;
        const double y = 3.0 * rng.normal();
        EXPECT_NEAR(crps_empirical(d, y), crps_by_integration(d, y), 1e-6);
    }
}

TEST(Scores, IntervalScoreHandCases) {
    EXPECT_DOUBLE_EQ(interval_score(0.0, 1.0, 0.05, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(interval_score(0.0, 1.0, 0.05, -0.25), 11.0);
    EXPECT_DOUBLE_EQ(interval_score(0.0, 1.0, 0.05, 1.25), 11.0);
    EXPECT_DOUBLE_EQ(interval_score(0.0, 1.0, 0.999, 0.2), 1.0);
    EXPECT_THROW(interval_score(1.0, 0.0, 0.05, 0.5), InvalidInterval);
    EXPECT_THROW(interval_score(0.0, 1.0, 1.0, 0.5), InvalidInterval);
    Rng rng(5);
    for (int k = 0; k < 200; ++k) {
        const double l = rng.normal(), u = l + std::abs(rng.normal()), y = 2.0 * rng.normal();
        const double s = interval_score(l, u, 0.1, y);
        EXPECT_GE(s, u - l);
        EXPECT_EQ(s == u - l, y >= l && y <= u);
    }
}

TEST(Scores, CoverageAndWidth) {
    auto cw = coverage_and_width({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, {0.5, 2.0, 1.0});
    EXPECT_DOUBLE_EQ(cw.coverage, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(cw.width, 1.0);
    cw = coverage_and_width({-1e300, -1e300}, {1e300, 1e300}, {3.0, -7.0});
    EXPECT_EQ(cw.coverage, 1.0);
    cw = coverage_and_width({3.0, -7.0}, {3.0, -7.0}, {3.0, -7.0});
    EXPECT_EQ(cw.coverage, 1.0);
    EXPECT_EQ(cw.width, 0.0);
    EXPECT_THROW(coverage_and_width({0.0}, {1.0}, {0.5}, {false}), EmptyMask);
}

TEST(Scores, StrataPartitionValidationSites) {
    PredictiveSamples pred;
    std::vector<Observation> obs;
    std::map<std::string, double> dist;
    Rng rng(8);
    for (int k = 0; k < 12; ++k) {
        const std::string id = "v" + std::to_string(k);
        std::vector<double> d(50);
        for (auto& v : d) v = 10.0 + rng.normal();
        pred.series.push_back({id, {-90.0, 35.0}, 0, 1, d, {}});
        obs.push_back({id, 0, 1, 10.0 + rng.normal()});
        dist[id] = 10.0 * k;
    }
    const auto rep = score_predictions(pred, obs, "m", dist, 40.0);
    EXPECT_EQ(rep.get(1, "m", Stratum::All).n, 12u);
    EXPECT_EQ(rep.get(1, "m", Stratum::Near).n, 5u);
    EXPECT_EQ(rep.get(1, "m", Stratum::Far).n, 7u);
    for (const auto& r : rep.rows) {
        EXPECT_GE(r.coverage95, 0.0);
        EXPECT_LE(r.coverage95, 1.0);
        EXPECT_GE(r.crps, 0.0);
        EXPECT_GE(r.interval_score, r.width95 - 1e-12);
    }
    const auto path = temp_path("scores.csv");
    write_score_csv(path, rep, "h");
    std::ifstream in(path);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    EXPECT_EQ(l1, "# config_hash=h");
    EXPECT_EQ(l2, "pollutant,method,stratum,n,pmse,pmae,coverage95,width95,crps,interval_score");
    EXPECT_NE(score_table(rep).find("[Near <= 40 km]"), std::string::npos);
}

TEST(Sensitivity, UnitMultiplierMatchesStandaloneFit) {
    auto tc = recovery_truth(16, 3, 0.004, 6);
    tc.roles = {{"t", 14, {true, true}, {1, 1}, {0.0, 0.0}, false}, {"v", 4, {true, true}, {1, 1}, {0.0, 0.0}, true}};
    const auto sim = simulate(tc, 6);
    const auto train = sim.train(), val = sim.validation();
    FitSettings fit;
    fit.run = RunLength{60, 20, 4};
    fit.chains = 2;
    const auto rows = sensitivity_sweep(train, val, tc.spec, fit, {1.0, 10.0});
    const auto direct = downscaler_scores(train, val, tc.spec, fit, "downscaler");
    BaselineOptions opt;
    opt.phi = {0.004, 0.004};
    const auto krig = baseline_scores(train, val, opt, "kriging");
    std::size_t matched = 0;
    for (const auto& r : rows) {
        if (r.multiplier != 1.0 || r.score.stratum != Stratum::All) continue;
        const auto& ref = (r.score.method == "downscaler" ? direct : krig).get(r.score.pollutant, r.score.method);
        EXPECT_EQ(r.score.pmse, ref.pmse);
        EXPECT_EQ(r.score.crps, ref.crps);
        EXPECT_EQ(r.score.coverage95, ref.coverage95);
        ++matched;
    }
    EXPECT_EQ(matched, 4u);
    EXPECT_THROW(sensitivity_sweep(train, val, tc.spec, fit, {0.0}), DomainError);
    EXPECT_THROW(sensitivity_sweep(train, val, tc.spec, fit, {1.0}, {"splines"}), ConfigError);
}

TEST(Ols, ExactLinearFit) {
    Rng rng(3);
    Mat X(30, 3);
    Vec y(30);
    for (int a = 0; a < 30; ++a) {
        X(a, 0) = 1.0;
        X(a, 1) = rng.normal();
        X(a, 2) = rng.normal();
        y(a) = 0.5 + 2.0 * X(a, 1) - 1.5 * X(a, 2);
    }
    const auto r = ols_fit(X, y);
    EXPECT_NEAR(r.r2, 1.0, 1e-12);
    EXPECT_NEAR(r.coef[0], 0.5, 1e-10);
    EXPECT_NEAR(r.coef[1], 2.0, 1e-10);
    EXPECT_NEAR(r.coef[2], -1.5, 1e-10);
    Mat Xd = X;
    Xd.col(2) = 2.0 * X.col(1);
    EXPECT_THROW(ols_fit(Xd, y), RankDeficient);
}

TEST(Ols, NullResponseGivesNominalFalsePositives) {
    Rng rng(21);
    int hits = 0, total = 0;
    for (int s = 0; s < 2000; ++s) {
        Mat X(40, 3);
        Vec y(40);
        for (int a = 0; a < 40; ++a) {
            X(a, 0) = 1.0;
            X(a, 1) = rng.normal();
            X(a, 2) = rng.normal();
            y(a) = rng.normal();
        }
        const auto r = ols_fit(X, y);
        for (int j = 0; j < 3; ++j) hits += r.significant[static_cast<std::size_t>(j)] ? 1 : 0;
        total += 3;
    }
    const double rate = static_cast<double>(hits) / total;
    // binomial sd at 6000 tests is about 0.003
    EXPECT_NEAR(rate, 0.05, 0.012);
}

TEST(Ols, WeakerSiteInterceptsForPollutantTwo) {
    Grid grid = Grid::regular(-90.0, 32.0, 25.0, 12, 12);
    Rng rng(13);
    std::vector<Site> sites;
    std::vector<Observation> obs;
    std::vector<GridOutput> out;
    for (int t = 0; t < 30; ++t)
        for (const auto& c : grid.cells())
            for (int i = 1; i <= 2; ++i) out.push_back({c.id, t, i, rng.normal()});
    const auto probe = AlignedDataset::build({}, grid, {}, out, TransformSpec::identity(2), 2);
    for (int k = 0; k < 50; ++k) {
        Site s{"s" + std::to_string(k), -89.9 + 2.6 * rng.uniform(), 32.1 + 2.5 * rng.uniform()};
        sites.push_back(s);
        const auto cell = probe.grid().locate(s.lon, s.lat);
        const double b1 = 1.0 * rng.normal(), b2 = 0.02 * rng.normal();
        for (int t = 0; t < 30; ++t) {
            obs.push_back({s.id, t, 1, b1 + 0.8 * probe.grid_value(cell, t, 1) + 0.5 * rng.normal()});
            obs.push_back({s.id, t, 2, b2 + 0.8 * probe.grid_value(cell, t, 2) + 0.5 * rng.normal()});
        }
    }
    sites.push_back({"short", -88.0, 33.0});
    for (int t = 0; t < 5; ++t) obs.push_back({"short", t, 1, 1.0});
    const auto ds = AlignedDataset::build(sites, grid, obs, out, TransformSpec::identity(2), 2);
    const auto regs = site_ols_diagnostics(ds);
    bool saw_short = false;
    for (const auto& r : regs)
        if (r.site_id == "short") {
            saw_short = true;
            EXPECT_FALSE(r.ok);
        }
    EXPECT_TRUE(saw_short);
    const double f1 = significant_fraction(regs, 1, 0), f2 = significant_fraction(regs, 2, 0);
    EXPECT_GT(f1, 0.6);
    EXPECT_LT(f2, 0.3);
    EXPECT_GT(significant_fraction(regs, 2, 2), 0.9);
    const auto path = temp_path("ols.csv");
    write_ols_csv(path, regs, 2, "h");
    std::ifstream in(path);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    EXPECT_EQ(l2.substr(0, 24), "site_id,pollutant,n,ok,r");
}
