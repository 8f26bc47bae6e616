#include <gtest/gtest.h>

#include <cmath>

#include <downscaler/kriging.hpp>
#include <downscaler/simulator.hpp>

using namespace downscaler;

namespace {

std::vector<PointValue> line_of_points(int n, double spacing_deg, const std::vector<double>& values) {
    std::vector<PointValue> out;
    for (int k = 0; k < n; ++k) out.push_back({{-90.0 + spacing_deg * k, 35.0 + 0.3 * std::sin(k)}, values[static_cast<std::size_t>(k)]});
    return out;
}

// n sites x n_days of N(mu, sigma2 R(phi) + tau2 I) on a 1800 km square.
std::vector<std::vector<PointValue>> simulate_days(int n, int n_days, double phi, double sigma2, double tau2, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LonLat> locs;
    for (int k = 0; k < n; ++k) locs.push_back({-95.0 + 20.0 * rng.uniform(), 30.0 + 16.0 * rng.uniform()});
    Mat C = sigma2 * exp_cov_matrix(distance_matrix(std::span<const LonLat>(locs), DistanceMetric::GreatCircle), phi);
    C.diagonal().array() += tau2;
    const Mat L = Eigen::LLT<Mat>(C).matrixL();
    std::vector<std::vector<PointValue>> days;
    for (int t = 0; t < n_days; ++t) {
        Vec z(n);
        for (int k = 0; k < n; ++k) z(k) = rng.normal();
        const Vec y = L * z;
        std::vector<PointValue> d;
        for (int k = 0; k < n; ++k) d.push_back({locs[static_cast<std::size_t>(k)], 3.0 + y(k)});
        days.push_back(d);
    }
    return days;
}

AlignedDataset dataset_from_days(const std::vector<std::vector<PointValue>>& days) {
    std::vector<Site> sites;
    for (std::size_t k = 0; k < days.front().size(); ++k) sites.push_back({"s" + std::to_string(k), days.front()[k].loc.lon, days.front()[k].loc.lat});
    std::vector<Observation> obs;
    for (std::size_t t = 0; t < days.size(); ++t)
        for (std::size_t k = 0; k < days[t].size(); ++k) obs.push_back({sites[k].id, static_cast<int>(t), 1, days[t][k].value});
    return AlignedDataset::build(sites, Grid::regular(-96.0, 29.0, 50.0, 44, 38), obs, {}, TransformSpec::identity(1), 1);
}

}  // namespace

TEST(Krige, TwoObservationsMatchHandSolution) {
    const std::vector<PointValue> obs{{{-90.0, 35.0}, 2.0}, {{-89.0, 35.5}, 5.0}};
    const KrigingModel m{1.5, 0.2, 0.004, DistanceMetric::GreatCircle};
    const LonLat target{-89.6, 35.1};
    const double s = m.sigma2, t2 = m.tau2;
    const double e = std::exp(-m.phi * distance_km(obs[0].loc, obs[1].loc, m.metric));
    const double c1 = s * std::exp(-m.phi * distance_km(target, obs[0].loc, m.metric));
    const double c2 = s * std::exp(-m.phi * distance_km(target, obs[1].loc, m.metric));
    // symmetric 2x2 block: l1 - l2 = (c1 - c2) / (s + t2 - s e), l1 + l2 = 1
    const double delta = (c1 - c2) / (s + t2 - s * e);
    const double l1 = 0.5 * (1.0 + delta), l2 = 0.5 * (1.0 - delta);
    const double mu = c1 - (s + t2) * l1 - s * e * l2;
    const auto p = krige(obs, m, {target});
    ASSERT_EQ(p.size(), 1u);
    EXPECT_NEAR(p[0].weights(0), l1, 1e-12);
    EXPECT_NEAR(p[0].weights(1), l2, 1e-12);
    EXPECT_NEAR(p[0].mean, 2.0 * l1 + 5.0 * l2, 1e-12);
    EXPECT_NEAR(p[0].variance, s + t2 - l1 * c1 - l2 * c2 - mu, 1e-12);
}

TEST(Krige, ZeroNuggetInterpolatesObservedSites) {
    const auto obs = line_of_points(7, 0.4, {1.0, 3.0, 2.5, -1.0, 0.0, 4.0, 2.0});
    const KrigingModel m{2.0, 0.0, 0.01, DistanceMetric::GreatCircle};
    std::vector<LonLat> targets;
    for (const auto& o : obs) targets.push_back(o.loc);
    targets.push_back({-88.9, 35.2});
    const auto p = krige(obs, m, targets);
    for (std::size_t k = 0; k < obs.size(); ++k) {
        EXPECT_NEAR(p[k].mean, obs[k].value, 1e-8);
        EXPECT_NEAR(p[k].variance, 0.0, 1e-8);
    }
    for (const auto& q : p) {
        EXPECT_NEAR(q.weights.sum(), 1.0, 1e-12);
        EXPECT_GE(q.variance, 0.0);
        EXPECT_LE(q.variance, m.sigma2 + m.tau2 + 1e-12);
    }
}

TEST(Krige, FarFieldTargetGetsGlsMean) {
    const auto obs = line_of_points(5, 0.5, {1.0, 2.0, 4.0, 3.0, 0.5});
    const KrigingModel m{1.0, 0.3, 0.01, DistanceMetric::GreatCircle};
    const auto p = krige(obs, m, {{-40.0, 60.0}});
    Mat C(5, 5);
    Vec y(5);
    for (int a = 0; a < 5; ++a) {
        y(a) = obs[static_cast<std::size_t>(a)].value;
        for (int b = 0; b < 5; ++b) C(a, b) = m.cov(distance_km(obs[static_cast<std::size_t>(a)].loc, obs[static_cast<std::size_t>(b)].loc, m.metric), a == b);
    }
    const Vec ci1 = C.ldlt().solve(Vec::Ones(5));
    const double gls = ci1.dot(y) / ci1.sum();
    EXPECT_NEAR(p[0].mean, gls, 1e-9);
    EXPECT_NEAR(p[0].variance, m.sigma2 + m.tau2 + 1.0 / ci1.sum(), 1e-9);
}

TEST(Krige, Errors) {
    const KrigingModel m;
    EXPECT_THROW(krige({{{-90.0, 35.0}, 1.0}}, m, {{-90.0, 35.0}}), TooFewSites);
    EXPECT_THROW(krige(line_of_points(3, 0.5, {1, 2, 3}), KrigingModel{0.0, 0.1, 0.01}, {{-90.0, 35.0}}), DomainError);
    // duplicated location without nugget: singular, rescued by the ridge
    const std::vector<PointValue> dup{{{-90.0, 35.0}, 1.0}, {{-90.0, 35.0}, 1.0}, {{-89.0, 35.0}, 2.0}};
    const auto p = krige(dup, KrigingModel{1.0, 0.0, 0.01}, {{-89.5, 35.0}});
    EXPECT_TRUE(std::isfinite(p[0].mean));
}

TEST(Cokrige, ZeroCrossCovarianceEqualsKriging) {
    const auto o1 = line_of_points(5, 0.5, {1.0, 2.0, 4.0, 3.0, 0.5});
    const auto o2 = line_of_points(4, 0.7, {7.0, 6.0, 9.0, 8.0});
    const KrigingModel k1{1.0, 0.2, 0.01}, k2{2.0, 0.4, 0.005};
    const CokrigingModel cm{k1, k2, 1.0, 0.0, 0.8, 0.01};
    std::vector<CoObservation> co;
    for (const auto& v : o1) co.push_back({v.loc, 1, v.value});
    for (const auto& v : o2) co.push_back({v.loc, 2, v.value});
    const std::vector<LonLat> targets{{-89.3, 35.2}, {-88.1, 35.6}};
    for (int i = 1; i <= 2; ++i) {
        const auto ck = cokrige(co, cm, targets, i);
        const auto kr = krige(i == 1 ? o1 : o2, i == 1 ? k1 : k2, targets);
        for (std::size_t a = 0; a < targets.size(); ++a) {
            EXPECT_NEAR(ck[a].mean, kr[a].mean, 1e-12);
            EXPECT_NEAR(ck[a].variance, kr[a].variance, 1e-12);
        }
    }
}

TEST(Cokrige, MatchesDenseGaussianOracles) {
    // three sites per pollutant
    const std::vector<CoObservation> co{{{-90.0, 35.0}, 1, 1.2}, {{-89.4, 35.3}, 1, 0.7}, {{-89.0, 34.8}, 1, 1.9},
                                        {{-89.8, 35.4}, 2, 3.1}, {{-89.1, 35.1}, 2, 2.6}, {{-88.7, 35.5}, 2, 3.4}};
    const KrigingModel k1{1.0, 0.1, 0.004}, k2{0.9, 0.05, 0.004};
    const CokrigingModel cm{k1, k2, 0.9, 0.6, 0.5, 0.004};
    const LonLat target{-89.5, 35.15};
    const Eigen::Index n = 6;
    auto cov = [&](int pa, int pb, LonLat a, LonLat b, bool same) {
        const double d = distance_km(a, b, DistanceMetric::GreatCircle);
        if (pa != pb) return 0.9 * 0.6 * std::exp(-0.004 * d);
        const auto& k = pa == 1 ? k1 : k2;
        return k.sigma2 * std::exp(-k.phi * d) + (same ? k.tau2 : 0.0);
    };
    Mat C(n, n);
    Vec y(n);
    Mat X = Mat::Zero(n, 2);
    for (Eigen::Index a = 0; a < n; ++a) {
        y(a) = co[static_cast<std::size_t>(a)].value;
        X(a, co[static_cast<std::size_t>(a)].pollutant - 1) = 1.0;
        for (Eigen::Index b = 0; b < n; ++b)
            C(a, b) = cov(co[static_cast<std::size_t>(a)].pollutant, co[static_cast<std::size_t>(b)].pollutant, co[static_cast<std::size_t>(a)].loc,
                          co[static_cast<std::size_t>(b)].loc, a == b);
    }
    const Eigen::LDLT<Mat> ldlt(C);
    for (int i = 1; i <= 2; ++i) {
        Vec c0(n);
        for (Eigen::Index a = 0; a < n; ++a) c0(a) = cov(i, co[static_cast<std::size_t>(a)].pollutant, target, co[static_cast<std::size_t>(a)].loc, false);
        const double c00 = (i == 1 ? k1 : k2).sigma2 + (i == 1 ? k1 : k2).tau2;
        // known means
        const Vec mvec = X * Vec((Vec(2) << 1.0, 3.0).finished());
        const double m_simple = (i == 1 ? 1.0 : 3.0) + c0.dot(ldlt.solve(y - mvec));
        const double v_simple = c00 - c0.dot(ldlt.solve(c0));
        const auto s = cokrige(co, cm, {target}, i, CokrigingForm::Simple, std::pair{1.0, 3.0});
        EXPECT_NEAR(s[0].mean, m_simple, 1e-10);
        EXPECT_NEAR(s[0].variance, v_simple, 1e-10);
        // unknown means: generalised least squares plus the mean-estimation term
        const Mat CiX = ldlt.solve(X);
        const Mat XtCiX = X.transpose() * CiX;
        const Vec bhat = XtCiX.ldlt().solve(X.transpose() * ldlt.solve(y));
        Vec x0 = Vec::Zero(2);
        x0(i - 1) = 1.0;
        const Vec gap = x0 - CiX.transpose() * c0;
        const double m_ord = x0.dot(bhat) + c0.dot(ldlt.solve(y - X * bhat));
        const double v_ord = c00 - c0.dot(ldlt.solve(c0)) + gap.dot(XtCiX.ldlt().solve(gap));
        const auto o = cokrige(co, cm, {target}, i);
        EXPECT_NEAR(o[0].mean, m_ord, 1e-10);
        EXPECT_NEAR(o[0].variance, v_ord, 1e-10);
    }
}

TEST(Cokrige, IncompatibleCrossTermRejected) {
    const std::vector<CoObservation> co{{{-90.0, 35.0}, 1, 1.2}, {{-90.0, 35.0}, 2, 3.1}, {{-89.0, 35.0}, 1, 0.7}, {{-89.0, 35.0}, 2, 2.6}};
    const CokrigingModel cm{{0.1, 0.0, 0.01}, {0.1, 0.0, 0.01}, 1.0, 1.0, 0.5, 0.01};
    EXPECT_THROW(cokrige(co, cm, {{-89.5, 35.0}}, 1), NotPositiveDefinite);
    EXPECT_THROW(cokrige(co, cm, {{-89.5, 35.0}}, 3), DomainError);
}

TEST(Reml, MedianDecayRecoversTruth) {
    const auto days = simulate_days(100, 60, 0.0016, 1.0, 0.2, 41);
    const auto est = estimate_decay(dataset_from_days(days), 1);
    EXPECT_GE(est.days.size(), 50u);
    EXPECT_NEAR(est.median_phi, 0.0016, 0.25 * 0.0016);
}

TEST(Reml, EstimateBeatsRandomDecays) {
    const auto days = simulate_days(40, 1, 0.004, 1.0, 0.3, 5);
    const auto d = reml_day(days[0]);
    ASSERT_TRUE(d.has_value());
    Rng rng(9);
    for (int k = 0; k < 20; ++k) {
        const double phi = std::exp(std::log(kPhiMin) + (std::log(kPhiMax) - std::log(kPhiMin)) * rng.uniform());
        const detail::RemlDay day(days[0], phi, DistanceMetric::GreatCircle);
        EXPECT_LE(std::get<0>(detail::best_nugget(day)), d->loglik + 1e-9);
    }
}

TEST(Reml, PureNuggetDayIsSkipped) {
    auto days = simulate_days(30, 3, 0.004, 1.0, 0.3, 6);
    Rng rng(2);
    for (auto& v : days[1]) v.value = rng.normal();
    EXPECT_FALSE(reml_day(days[1]).has_value());
    const auto est = estimate_decay(dataset_from_days(days), 1);
    ASSERT_EQ(est.skipped.size(), 1u);
    EXPECT_EQ(est.skipped[0], 1);
    ASSERT_EQ(est.warnings.size(), 1u);
}

TEST(Reml, SingleDayMedianIsThatDay) {
    const auto days = simulate_days(30, 1, 0.004, 1.0, 0.3, 7);
    const auto est = estimate_decay(dataset_from_days(days), 1);
    ASSERT_EQ(est.days.size(), 1u);
    EXPECT_EQ(est.median_phi, est.days[0].phi);
}

TEST(Reml, FewSitesAreSkippedOrRejected) {
    auto days = simulate_days(4, 2, 0.004, 1.0, 0.3, 8);
    EXPECT_THROW(reml_day(days[0]), TooFewSites);
    EXPECT_THROW(estimate_decay(dataset_from_days(days), 1), TooFewSites);
    EXPECT_THROW(fit_sill_nugget({days[0][0], days[0][1]}, 0.004), TooFewSites);
}

TEST(Baseline, PredictionsCoverEveryDayAndFallBack) {
    auto tc = recovery_truth(12, 3, 0.004, 3);
    tc.roles.push_back({"sparse", 2, {false, true}, {1, 1}, {0.0, 0.0}, false});
    tc.roles[0].reports = {true, false};
    const auto sim = simulate(tc, 3);
    BaselineOptions opt;
    opt.phi = {0.004, 0.004};
    const std::vector<Site> targets{{"t1", -89.0, 33.0}, {"t2", -88.2, 33.9}};
    const auto g = baseline_predictions(sim.dataset, targets, opt);
    ASSERT_EQ(g.size(), 3u * 2u * 2u);
    // pollutant 2 has two sites a day: pooled moments, identical across targets
    const GaussianPrediction* a = nullptr;
    const GaussianPrediction* b = nullptr;
    for (const auto& x : g)
        if (x.pollutant == 2 && x.t == 0) (x.id == "t1" ? a : b) = &x;
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->mean, b->mean);
    EXPECT_EQ(a->var, b->var);
    opt.method = BaselineMethod::Cokriging;
    opt.A11 = 1.0;
    opt.A41 = 0.5;
    opt.A44 = 0.8;
    EXPECT_EQ(baseline_predictions(sim.dataset, targets, opt).size(), g.size());
}

TEST(Baseline, QuantileDrawsAreDeterministic) {
    const std::vector<GaussianPrediction> g{{"a", {-90.0, 35.0}, 0, 1, 2.0, 0.25}};
    const auto s = gaussian_to_samples(g, TransformSpec::identity(1), 1000);
    ASSERT_EQ(s.series.size(), 1u);
    const auto& d = s.series[0].draws;
    ASSERT_EQ(d.size(), 1000u);
    EXPECT_TRUE(std::is_sorted(d.begin(), d.end()));
    double m = 0.0;
    for (double v : d) m += v;
    EXPECT_NEAR(m / 1000.0, 2.0, 1e-12);
    EXPECT_NEAR(d[500] + d[499], 4.0, 1e-12);
    const auto again = gaussian_to_samples(g, TransformSpec::identity(1), 1000);
    EXPECT_EQ(again.series[0].draws, d);
    const auto sq = gaussian_to_samples(g, TransformSpec{{Transform::Sqrt}}, 1000);
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_NEAR(sq.series[0].draws[k], std::max(0.0, d[k]) * std::max(0.0, d[k]), 1e-12);
}
