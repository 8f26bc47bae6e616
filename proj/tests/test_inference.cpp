#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <downscaler/diagnostics.hpp>
#include <downscaler/ffbs.hpp>
#include <downscaler/sampler.hpp>
#include <downscaler/simulator.hpp>

#include "sampler_oracles.hpp"

using namespace downscaler;
using namespace downscaler::oracle;

// Successive-conditional simulator against independent prior-predictive
// draws (Geweke 2004) on a reduced run; the acceptance suite uses 50,000.
TEST(Sampler, GewekeJointDistribution) {
    const auto z = oracle::geweke_z(15000, 5);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_LT(std::abs(z[k]), 4.0) << "test function " << k;
}

TEST(Sampler, PriorRecoveryForUnobservedPollutant) {
    for (const auto& c : prior_recovery_unobserved_pollutant()) EXPECT_TRUE(c.ok()) << c.name << " z " << c.z << " var ratio " << c.var_ratio;
}

TEST(Sampler, PriorRecoveryWithoutObservations) {
    for (const auto& c : prior_recovery_without_data()) EXPECT_TRUE(c.ok()) << c.name << " z " << c.z << " var ratio " << c.var_ratio;
}

// The latent block full conditional equals dense Gaussian conditioning of
// the joint law of (w, y), with the design recovered by perturbing w.
TEST(Sampler, LatentBlockMatchesDenseConditioning) {
    auto tc = toy_truth(4, 1, 12);
    tc.roles = {{"b", 2, {true, true}, {1, 1}, {0.0, 0.0}, false},
                {"o", 1, {true, false}, {1, 1}, {0.0, 0.0}, false},
                {"q", 1, {false, true}, {1, 1}, {0.0, 0.0}, false}};
    auto sim = simulate(tc, 12);
    Sampler s(sim.dataset, tc.spec, {}, Rng(2));
    for (int it = 0; it < 20; ++it) s.sweep(false);
    // equal nuggets so the noise covariance does not depend on row order
    ChainState st = s.state();
    st.tau2.setConstant(0.2);
    s.set_state(st);
    const auto& slot = s.slots()[0];
    const auto n_sites = static_cast<Eigen::Index>(slot.locations.size());
    ASSERT_EQ(n_sites, 4);
    const auto K = static_cast<Eigen::Index>(s.active().size());
    const Vec y = s.y();
    const auto n = y.size();
    // stacked w (process-major) -> eta is affine; recover G column by column
    const Vec eta0 = s.eta();
    const Eigen::Index dim = n_sites * K;
    Mat G(n, dim);
    for (Eigen::Index kk = 0; kk < K; ++kk)
        for (Eigen::Index a = 0; a < n_sites; ++a) {
            ChainState p = st;
            p.w[0](a, kk) += 1.0;
            s.set_state(p);
            G.col(kk * n_sites + a) = s.eta() - eta0;
        }
    s.set_state(st);
    Vec wvec(dim);
    for (Eigen::Index kk = 0; kk < K; ++kk) wvec.segment(kk * n_sites, n_sites) = st.w[0].col(kk);
    const Vec offset = eta0 - G * wvec;
    Mat Sww = Mat::Zero(dim, dim);
    for (Eigen::Index kk = 0; kk < K; ++kk)
        Sww.block(kk * n_sites, kk * n_sites, n_sites, n_sites) =
            latent_cov_matrix(std::span<const LonLat>(slot.locations), tc.spec.phi[static_cast<std::size_t>(s.active()[kk])], tc.spec.metric);
    const Vec d = Vec::Constant(n, 0.2);
    Mat Syy = G * Sww * G.transpose();
    Syy.diagonal() += d;
    const Mat Swy = Sww * G.transpose();
    const Vec yc = y - offset;
    for (Eigen::Index kk = 0; kk < K; ++kk) {
        const auto& blocks = s.blocks(0);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto [start, len] = blocks[b];
            // conditioning set: y and every w coordinate outside the block
            std::vector<Eigen::Index> in, out;
            for (Eigen::Index j = 0; j < dim; ++j) {
                const bool inside = j >= kk * n_sites + start && j < kk * n_sites + start + len;
                (inside ? in : out).push_back(j);
            }
            const auto ni = static_cast<Eigen::Index>(in.size()), no = static_cast<Eigen::Index>(out.size());
            Mat S11(ni, ni), S12(ni, no + n), S22(no + n, no + n);
            Vec z2(no + n);
            for (Eigen::Index a = 0; a < ni; ++a) {
                for (Eigen::Index c = 0; c < ni; ++c) S11(a, c) = Sww(in[a], in[c]);
                for (Eigen::Index c = 0; c < no; ++c) S12(a, c) = Sww(in[a], out[c]);
                S12.row(a).tail(n) = Swy.row(in[a]);
            }
            for (Eigen::Index a = 0; a < no; ++a) {
                for (Eigen::Index c = 0; c < no; ++c) S22(a, c) = Sww(out[a], out[c]);
                S22.row(a).tail(n) = Swy.row(out[a]);
                S22.col(a).tail(n) = Swy.row(out[a]).transpose();
                z2(a) = wvec(out[a]);
            }
            S22.bottomRightCorner(n, n) = Syy;
            z2.tail(n) = yc;
            const Eigen::LDLT<Mat> ldlt(S22);
            const Vec mean = S12 * ldlt.solve(z2);
            const Mat cov = S11 - S12 * ldlt.solve(S12.transpose());
            const auto [m, c] = s.latent_block_conditional(0, static_cast<int>(kk), static_cast<int>(b));
            EXPECT_LT((m - mean).cwiseAbs().maxCoeff(), 1e-6);
            EXPECT_LT((c - cov).cwiseAbs().maxCoeff(), 1e-6);
        }
    }
}

TEST(Sampler, CoregionalizationIdentity) {
    auto tc = toy_truth(6, 3, 2);
    auto sim = simulate(tc, 2);
    auto ch = run_chain(sim.dataset, tc.spec, RunLength{60, 20, 10}, 4);
    for (const auto& st : ch.draws)
        for (std::size_t u = 0; u < ch.slots.size(); ++u) {
            const Mat bl = st.beta_local(u, ch.active);
            for (std::size_t kk = 0; kk < ch.active.size(); ++kk) {
                const int k = ch.active[kk];
                for (int r = 0; r < 6; ++r)
                    if (r != 0 && r != 3) EXPECT_EQ(st.A(r, k), 0.0);
            }
            Mat direct = Mat::Zero(bl.rows(), 6);
            for (Eigen::Index a = 0; a < bl.rows(); ++a)
                for (int r = 0; r < 6; ++r)
                    for (std::size_t kk = 0; kk < ch.active.size(); ++kk) direct(a, r) += st.A(r, ch.active[kk]) * st.w[u](a, static_cast<Eigen::Index>(kk));
            EXPECT_LT((bl - direct).cwiseAbs().maxCoeff(), 1e-12);
        }
}

TEST(Sampler, SeedDeterminismAcrossThreads) {
    auto tc = toy_truth(6, 3, 21);
    auto sim = simulate(tc, 21);
    const RunLength run{80, 40, 4};
    auto a = run_chains(sim.dataset, tc.spec, run, 99, 3, 1);
    auto b = run_chains(sim.dataset, tc.spec, run, 99, 3, 4);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t c = 0; c < a.size(); ++c) {
        ASSERT_EQ(a[c].draws.size(), b[c].draws.size());
        for (std::size_t d = 0; d < a[c].draws.size(); ++d) EXPECT_EQ(a[c].scalar_row(d), b[c].scalar_row(d));
    }
    EXPECT_NE(a[0].scalar_row(0), a[1].scalar_row(0));
}

TEST(Sampler, RunLengthAndThinning) {
    auto tc = toy_truth(5, 2, 1);
    auto sim = simulate(tc, 1);
    auto ch = run_chain(sim.dataset, tc.spec, RunLength{100, 40, 10}, 1);
    EXPECT_EQ(ch.draws.size(), 6u);
    EXPECT_EQ(ch.iterations.front(), 50);
    EXPECT_THROW(run_chain(sim.dataset, tc.spec, RunLength{10, 20, 1}, 1), ConfigError);
}

TEST(Sampler, RejectsMismatchedSpec) {
    auto tc = toy_truth(5, 2, 1);
    auto sim = simulate(tc, 1);
    auto uni = default_spec(1, VariantPattern::Full);
    uni.transform = TransformSpec::identity(1);
    EXPECT_THROW(Sampler(sim.dataset, uni, {}, Rng(1)), DimensionMismatch);
    auto other = tc.spec;
    other.transform = default_spec(2, VariantPattern::SharedIntercept).transform;
    EXPECT_THROW(Sampler(sim.dataset, other, {}, Rng(1)), InvalidSpec);
}

TEST(Sampler, AllTemporalStructuresRun) {
    for (auto ov : {OverallStructure::Static, OverallStructure::IndependentAcrossTime, OverallStructure::Dynamic})
        for (auto lo : {LocalStructure::Static, LocalStructure::IndependentReplicates, LocalStructure::Dynamic}) {
            if (ov == OverallStructure::Static && lo != LocalStructure::Static) continue;
            auto tc = toy_truth(6, 4, 3);
            tc.spec.temporal = {ov, lo, std::vector<double>(6, 0.5), std::vector<double>(6, 0.3)};
            if (ov == OverallStructure::Static) tc.beta = tc.beta.col(0).eval();
            auto sim = simulate(tc, 3);
            for (auto v : {VariantPattern::SharedIntercept, VariantPattern::WithinPollutantCorrelated, VariantPattern::Full}) {
                auto spec = tc.spec;
                spec.variant = v;
                auto ch = run_chain(sim.dataset, spec, RunLength{40, 20, 5}, 6);
                ASSERT_EQ(ch.draws.size(), 4u);
                for (std::size_t d = 0; d < ch.draws.size(); ++d)
                    for (double x : ch.scalar_row(d)) EXPECT_TRUE(std::isfinite(x)) << to_string(ov) << "/" << to_string(lo);
            }
        }
}

// A p = 2 IndependentPollutants fit and a p = 1 fit of the pollutant-1 slice
// target the same marginal posterior for pollutant 1.
TEST(Sampler, IndependentPollutantsMatchesUnivariateFit) {
    auto tc = toy_truth(10, 3, 17);
    auto sim = simulate(tc, 17);
    auto spec2 = tc.spec;
    spec2.variant = VariantPattern::IndependentPollutants;
    spec2.temporal.overall = OverallStructure::Static;
    spec2.temporal.local = LocalStructure::Static;
    std::vector<Observation> obs1;
    std::vector<GridOutput> out1;
    for (const auto& o : sim.dataset.observations())
        if (o.pollutant == 1) obs1.push_back(o);
    for (const auto& g : sim.dataset.grid_outputs())
        if (g.pollutant == 1) out1.push_back(g);
    auto ds1 = AlignedDataset::build(sim.dataset.sites(), sim.dataset.grid(), obs1, out1, TransformSpec::identity(1), 1);
    auto spec1 = default_spec(1, VariantPattern::Full, {OverallStructure::Static, LocalStructure::Static, {}, {}});
    spec1.transform = TransformSpec::identity(1);
    spec1.phi = {spec2.phi[0], spec2.phi[1]};
    const RunLength run{12000, 2000, 20};
    auto a = run_chain(sim.dataset, spec2, run, 5);
    auto b = run_chain(ds1, spec1, run, 6);
    auto da = a.scalar("beta_1_0"), db = b.scalar("beta_1_0");
    std::sort(da.begin(), da.end());
    std::sort(db.begin(), db.end());
    double dmax = 0.0;
    for (double x : da) {
        const double fa = static_cast<double>(std::upper_bound(da.begin(), da.end(), x) - da.begin()) / static_cast<double>(da.size());
        const double fb = static_cast<double>(std::upper_bound(db.begin(), db.end(), x) - db.begin()) / static_cast<double>(db.size());
        dmax = std::max(dmax, std::abs(fa - fb));
    }
    const double ne = std::min(effective_sample_size(a.scalar("beta_1_0")), effective_sample_size(b.scalar("beta_1_0"))) / 2.0;
    EXPECT_GT(ks_pvalue(dmax, ne), 0.01) << "D = " << dmax;
}

// ---------------------------------------------------------------------------
// FFBS
// ---------------------------------------------------------------------------

TEST(Ffbs, TwoStepSmootherMatchesDenseGaussian) {
    Ar1StateSpace m;
    m.rho = Vec::Constant(1, 0.6);
    m.q = Vec::Constant(1, 0.5);
    m.m0 = Vec::Constant(1, 0.3);
    m.C0 = Mat::Constant(1, 1, 2.0);
    m.H = {Mat::Constant(2, 1, 1.0), Mat::Constant(1, 1, 2.0)};
    m.H[0](1, 0) = 0.5;
    m.y = {Vec(2), Vec::Constant(1, -0.4)};
    m.y[0] << 1.2, 0.7;
    m.obs_var = {Vec::Constant(2, 0.3), Vec::Constant(1, 0.2)};
    // joint of (x_-1, x_0, x_1) then condition on y
    Mat L = Mat::Zero(3, 3);  // x = mu + L e
    L(0, 0) = std::sqrt(2.0);
    L(1, 0) = 0.6 * std::sqrt(2.0);
    L(1, 1) = std::sqrt(0.5);
    L.row(2) = 0.6 * L.row(1);
    L(2, 2) = std::sqrt(0.5);
    Vec mu(3);
    mu << 0.3, 0.18, 0.108;
    const Mat Sx = L * L.transpose();
    Mat Hf = Mat::Zero(3, 3);
    Hf(0, 1) = 1.0;
    Hf(1, 1) = 0.5;
    Hf(2, 2) = 2.0;
    Vec yv(3);
    yv << 1.2, 0.7, -0.4;
    Mat Syy = Hf * Sx * Hf.transpose();
    Syy.diagonal() += Vec::Constant(3, 0.3);
    Syy(2, 2) += -0.3 + 0.2;
    const Mat K = Sx * Hf.transpose() * Syy.inverse();
    const Vec pm = mu + K * (yv - Hf * mu);
    const Mat pc = Sx - K * Hf * Sx;
    const auto sm = m.smooth();
    ASSERT_EQ(sm.size(), 3u);
    for (int t = 0; t < 3; ++t) {
        EXPECT_NEAR(sm[static_cast<std::size_t>(t)].first(0), pm(t), 1e-10);
        EXPECT_NEAR(sm[static_cast<std::size_t>(t)].second(0, 0), pc(t, t), 1e-10);
    }
    // sampled paths reproduce the smoothed moments
    Rng rng(7);
    std::vector<double> x1;
    for (int n = 0; n < 40000; ++n) x1.push_back(m.sample(rng)[1](0));
    const auto mm = moments(x1);
    EXPECT_NEAR(mm.mean, pm(1), 4.0 * std::sqrt(pc(1, 1) / 40000));
    EXPECT_NEAR(mm.var / pc(1, 1), 1.0, 0.03);
}

TEST(Ffbs, NoDataGivesStationaryMarginals) {
    Ar1StateSpace m;
    m.rho = Vec::Constant(1, 0.8);
    m.q = Vec::Constant(1, 0.36);
    m.m0 = Vec::Zero(1);
    m.C0 = Mat::Constant(1, 1, 1.0);  // stationary variance 0.36 / (1 - 0.64)
    for (int t = 0; t < 5; ++t) {
        m.H.push_back(Mat(0, 1));
        m.y.push_back(Vec(0));
        m.obs_var.push_back(Vec(0));
    }
    Rng rng(8);
    std::vector<std::vector<double>> xs(6);
    for (int n = 0; n < 20000; ++n) {
        const auto path = m.sample(rng);
        for (std::size_t t = 0; t < path.size(); ++t) xs[t].push_back(path[t](0));
    }
    for (const auto& v : xs) {
        const auto mm = moments(v);
        EXPECT_NEAR(mm.mean, 0.0, 3.0 * std::sqrt(1.0 / 20000));
        EXPECT_NEAR(mm.var, 1.0, 3.0 * std::sqrt(2.0 / 20000));
    }
}

TEST(Ffbs, ZeroAutocorrelationDecouplesTime) {
    Ar1StateSpace m;
    m.rho = Vec::Zero(1);
    m.q = Vec::Constant(1, 1.0);
    m.m0 = Vec::Zero(1);
    m.C0 = Mat::Constant(1, 1, 1.0);
    for (int t = 0; t < 2; ++t) {
        m.H.push_back(Mat::Constant(1, 1, 1.0));
        m.y.push_back(Vec::Constant(1, 1.0 + t));
        m.obs_var.push_back(Vec::Constant(1, 1.0));
    }
    Rng rng(9);
    std::vector<double> a, b;
    for (int n = 0; n < 20000; ++n) {
        const auto path = m.sample(rng);
        a.push_back(path[1](0));
        b.push_back(path[2](0));
    }
    const auto ma = moments(a), mb = moments(b);
    EXPECT_NEAR(ma.mean, 0.5, 0.02);
    EXPECT_NEAR(mb.mean, 1.0, 0.02);
    double c = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) c += (a[n] - ma.mean) * (b[n] - mb.mean);
    c /= static_cast<double>(a.size()) * std::sqrt(ma.var * mb.var);
    EXPECT_LT(std::abs(c), 4.0 / std::sqrt(20000.0));
}

TEST(Ffbs, NonStationaryRejected) {
    Ar1StateSpace m;
    m.rho = Vec::Constant(1, 1.0);
    m.q = Vec::Constant(1, 1.0);
    m.m0 = Vec::Zero(1);
    m.C0 = Mat::Constant(1, 1, 1.0);
    EXPECT_THROW(m.filter(), NonStationary);
}

// ---------------------------------------------------------------------------
// Diagnostics and chain files
// ---------------------------------------------------------------------------

TEST(Diagnostics, IidChainsConverge) {
    Rng rng(10);
    std::vector<std::vector<double>> chains(4);
    for (auto& c : chains)
        for (int n = 0; n < 4000; ++n) c.push_back(rng.normal());
    const double r = split_rhat(chains);
    EXPECT_GE(r, 0.999);
    EXPECT_LE(r, 1.01);
    const double ess = effective_sample_size(chains[0]);
    EXPECT_NEAR(ess / 4000.0, 1.0, 0.15);
}

TEST(Diagnostics, DisjointChainsFlagged) {
    Rng rng(11);
    std::vector<std::vector<double>> chains(2);
    for (int n = 0; n < 500; ++n) {
        chains[0].push_back(rng.normal());
        chains[1].push_back(10.0 + rng.normal());
    }
    EXPECT_GT(split_rhat(chains), 1.1);
}

TEST(Diagnostics, ConstantChainIsInsufficient) {
    std::vector<double> c(100, 2.0);
    EXPECT_THROW(effective_sample_size(c), InsufficientDraws);
    EXPECT_THROW(split_rhat({c}), InsufficientDraws);
}

TEST(Diagnostics, ChainSummaryFlagsFixedParameters) {
    auto tc = toy_truth(5, 2, 4);
    auto sim = simulate(tc, 4);
    auto chains = run_chains(sim.dataset, tc.spec, RunLength{200, 100, 5}, 3, 2);
    const auto d = chain_diagnostics(chains);
    EXPECT_GE(d.get("A_1_1").ess, 0.0);
    EXPECT_FALSE(d.get("A_1_1").flagged);
    EXPECT_TRUE(d.acceptance.count("A_1_1"));
}

TEST(ChainFiles, RoundTrip) {
    auto tc = toy_truth(5, 2, 4);
    auto sim = simulate(tc, 4);
    auto ch = run_chain(sim.dataset, tc.spec, RunLength{30, 10, 5}, 3, 1);
    const auto dir = std::filesystem::temp_directory_path() / "downscaler_chain_rt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    write_chain(dir.string(), ch, "abc");
    const auto back = read_chain(dir.string(), 1);
    ASSERT_EQ(back.draws.size(), ch.draws.size());
    EXPECT_EQ(back.slots.size(), ch.slots.size());
    for (std::size_t d = 0; d < ch.draws.size(); ++d) {
        const auto a = ch.scalar_row(d), b = back.scalar_row(d);
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12 * std::max(1.0, std::abs(a[k])));
        for (std::size_t u = 0; u < ch.slots.size(); ++u) EXPECT_LT((ch.draws[d].w[u] - back.draws[d].w[u]).cwiseAbs().maxCoeff(), 1e-12);
    }
    std::filesystem::remove_all(dir);
}
