#include <gtest/gtest.h>

#include <downscaler/covariance.hpp>
#include <downscaler/model_spec.hpp>

using namespace downscaler;

TEST(DefaultSpec, BivariateDownscaler) {
    auto s = default_spec(2, VariantPattern::SharedIntercept,
                          {OverallStructure::IndependentAcrossTime, LocalStructure::IndependentReplicates, {}, {}});
    EXPECT_TRUE(validate_spec(s).empty());
    Coregionalization c(2, s.mask());
    std::vector<std::pair<int, int>> expect{{0, 0}, {3, 0}, {3, 3}};
    EXPECT_EQ(c.free_entries(), expect);
    EXPECT_EQ(s.phi.size(), 6u);
    EXPECT_EQ(s.priors.beta_var, 1e4);
    EXPECT_EQ(s.priors.nugget_shape, (std::vector<double>{2.0, 2.0}));
    EXPECT_EQ(s.priors.diagA_logsd, 10.0);
}

TEST(DefaultSpec, IndependentPollutantsDropsCrossTerms) {
    auto s = default_spec(2, VariantPattern::IndependentPollutants);
    EXPECT_TRUE(validate_spec(s).empty());
    const auto free = s.overall_free();
    // beta_12 and beta_21 (cross-pollutant slopes) are fixed at zero
    EXPECT_EQ(free, (std::vector<bool>{true, true, false, true, false, true}));
    const Mask m = s.mask();
    for (int r = 0; r < 3; ++r)
        for (int k = 3; k < 6; ++k) EXPECT_FALSE(m(k, r));
}

TEST(DefaultSpec, Univariate) {
    auto s = default_spec(1, VariantPattern::Full, {OverallStructure::Static, LocalStructure::Static, {}, {}});
    EXPECT_TRUE(validate_spec(s).empty());
    EXPECT_EQ(s.mask().rows(), 2);
    EXPECT_EQ(s.phi.size(), 2u);
}

TEST(ValidateSpec, Violations) {
    auto s = default_spec(2, VariantPattern::SharedIntercept);
    s.phi[2] = 0.0;
    auto v = validate_spec(s);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0], "decay must be positive");

    auto d = default_spec(2, VariantPattern::SharedIntercept, {OverallStructure::Dynamic, LocalStructure::IndependentReplicates, {}, {}});
    d.temporal.rho[0] = 1.0;
    d.priors.beta_var = -1.0;
    v = validate_spec(d);
    EXPECT_EQ(v.size(), 2u);

    auto st = default_spec(2, VariantPattern::SharedIntercept, {OverallStructure::Static, LocalStructure::IndependentReplicates, {}, {}});
    EXPECT_EQ(validate_spec(st).size(), 1u);
    EXPECT_THROW(require_valid(st), InvalidSpec);
}

TEST(SpecJson, RoundTrip) {
    auto s = default_spec(2, VariantPattern::WithinPollutantCorrelated, {OverallStructure::Dynamic, LocalStructure::Dynamic, {}, {}});
    s.phi = {0.0016, 0.002, 0.003, 0.00125, 0.01, 0.02};
    s.temporal.rho = {0.9, 0.5, 0.1, -0.2, 0.3, 0.0};
    s.temporal.gamma = {0.7, 0.0, 0.0, 0.7, 0.0, 0.1};
    s.priors.dyn_stationary_init = true;
    s.priors.nugget_scale = {0.5, 0.25};
    s.metric = DistanceMetric::Chordal;
    const auto back = spec_from_json(nlohmann::json::parse(spec_to_json(s).dump()));
    EXPECT_TRUE(back == s);
}

TEST(SpecJson, UnknownVariant) {
    nlohmann::json j{{"p", 2}, {"variant", "Banded"}};
    EXPECT_THROW(spec_from_json(j), ConfigError);
}

// Two independent univariate downscalers and the IndependentPollutants
// bivariate model imply the same marginal covariance for each pollutant.
TEST(DefaultSpec, IndependentPollutantsMatchesTwoUnivariate) {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        const double a11 = std::exp(rng.normal()), a21 = rng.normal(), a22 = std::exp(rng.normal());
        const double a44 = std::exp(rng.normal()), a64 = rng.normal(), a66 = std::exp(rng.normal());
        Coregionalization biv(2, VariantPattern::IndependentPollutants);
        biv.set(0, 0, a11);
        biv.set(1, 0, a21);
        biv.set(1, 1, a22);
        biv.set(3, 3, a44);
        biv.set(5, 3, a64);
        biv.set(5, 5, a66);
        Coregionalization u1(1, VariantPattern::Full), u2(1, VariantPattern::Full);
        u1.set(0, 0, a11);
        u1.set(1, 0, a21);
        u1.set(1, 1, a22);
        u2.set(0, 0, a44);
        u2.set(1, 0, a64);
        u2.set(1, 1, a66);
        const std::vector<double> phi{0.002, 0.003, 0.1, 0.004, 0.1, 0.005};
        const std::vector<double> xb{rng.normal(7, 1), rng.normal(3, 0.5)}, xbp{rng.normal(7, 1), rng.normal(3, 0.5)};
        const double d = 300.0 * rng.uniform();
        const std::vector<double> nug{0.1, 0.2};
        Mat m = induced_joint_cov(biv, phi, xb, xbp, d, nug, false);
        const std::vector<double> phi1{0.002, 0.003}, phi2{0.004, 0.005};
        Mat m1 = induced_joint_cov(u1, phi1, std::vector<double>{xb[0]}, std::vector<double>{xbp[0]}, d);
        Mat m2 = induced_joint_cov(u2, phi2, std::vector<double>{xb[1]}, std::vector<double>{xbp[1]}, d);
        EXPECT_NEAR(m(0, 0), m1(0, 0), 1e-12);
        EXPECT_NEAR(m(1, 1), m2(0, 0), 1e-12);
        EXPECT_NEAR(m(0, 1), 0.0, 1e-15);
    }
}
