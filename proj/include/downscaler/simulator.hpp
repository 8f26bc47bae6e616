#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "covariance.hpp"
#include "data.hpp"
#include "linalg.hpp"
#include "model_spec.hpp"
#include "rng.hpp"

namespace downscaler {

/// Largest dense covariance the simulator factorises in one piece.
inline constexpr int kSimulatorCap = 2000;

/// Smooth Gaussian fields standing in for numerical-model output, built on
/// the transformed scale. x_j(B,t) = mean_j + sd_j (sqrt(day_share) d_jt +
/// sqrt(1 - day_share) z_j(B,t)); the day effects d and the spatial fields
/// z are cross-correlated across pollutants by `cross_corr`.
struct CovariateFieldConfig {
    std::vector<double> mean{7.41, 2.72};
    std::vector<double> sd{1.31, 0.56};
    double phi = 0.002;
    double cross_corr = 0.3;
    double day_share = 0.5;
};

enum class GridOutputSource { GaussianField, FileProvided };

/// A group of sites sharing a reporting role. `reports[i]` is true when the
/// site measures pollutant i+1; `period[i]` is the sampling period in days
/// (1 = daily) and `missing[i]` an extra random-missingness rate.
struct SiteRole {
    std::string prefix;
    int count = 0;
    std::vector<bool> reports;
    std::vector<int> period;
    std::vector<double> missing;
    bool validation = false;
};

struct TruthConfig {
    ModelSpec spec;
    Mat A;                 ///< p(p+1) square, zero outside the spec mask
    Vec tau2;              ///< nugget per pollutant
    Mat beta;              ///< p(p+1) x (1 or n_days); one column means constant
    int n_days = 20;
    std::vector<SiteRole> roles;
    // grid and site placement
    double origin_lon = -90.0;
    double origin_lat = 32.0;
    double cell_km = 25.0;
    int n_x = 20;
    int n_y = 20;
    GridOutputSource source = GridOutputSource::GaussianField;
    CovariateFieldConfig covariates;
    std::vector<GridOutput> provided;  ///< raw-scale outputs when source == FileProvided
};

struct LatentTruth {
    std::vector<int> days;
    std::vector<std::string> site_ids;
    std::vector<Mat> w;           ///< per slot: sites x p(p+1) (all processes, inactive ones zero)
    std::vector<Mat> beta_local;  ///< per day: sites x p(p+1)
    Mat beta;                     ///< p(p+1) x n_days
    Mat A;
    Vec tau2;
    /// Transformed-scale mean surface x~(B,t)(beta_t + beta_local(s,t)), per day: sites x p
    std::vector<Mat> mean;
};

struct SimulationResult {
    AlignedDataset dataset;
    std::set<std::string> validation_ids;
    LatentTruth truth;

    [[nodiscard]] AlignedDataset train() const {
        std::set<std::string> keep;
        for (const auto& s : dataset.sites())
            if (!validation_ids.count(s.id)) keep.insert(s.id);
        return dataset.subset_sites(keep);
    }
    [[nodiscard]] AlignedDataset validation() const { return dataset.subset_sites(validation_ids); }
};

/// Daily AR(1) path for every stacked coefficient: beta_t = rho beta_{t-1} + N(0, xi2).
inline Mat ar1_coefficient_path(const Vec& beta0, const Vec& rho, const Vec& xi2, int n_days, Rng& rng) {
    Mat out(beta0.size(), n_days);
    Vec prev = beta0;
    for (int t = 0; t < n_days; ++t) {
        for (Eigen::Index r = 0; r < beta0.size(); ++r) prev(r) = rho(r) * prev(r) + std::sqrt(xi2(r)) * rng.normal();
        out.col(t) = prev;
    }
    return out;
}

namespace detail {

inline Eigen::LLT<Mat> sim_cholesky(const std::vector<LonLat>& pts, double phi, DistanceMetric metric) {
    if (static_cast<int>(pts.size()) > kSimulatorCap) {
        throw DimensionMismatch("simulation needs a dense factorisation of " + std::to_string(pts.size()) + " points; the cap is " +
                                std::to_string(kSimulatorCap) + " (use fewer sites or a coarser grid)");
    }
    return cholesky_ridge(latent_cov_matrix(pts, phi, metric), kRidge, "simulation covariance");
}

}  // namespace detail

/// Draw a dataset and its latent truth from the generative model.
inline SimulationResult simulate(const TruthConfig& truth, std::uint64_t seed) {
    const ModelSpec& spec = truth.spec;
    require_valid(spec);
    const int p = spec.p, P1 = p + 1, nproc = n_processes(p), T = truth.n_days;
    if (truth.A.rows() != nproc || truth.A.cols() != nproc) throw DimensionMismatch("truth A must be p(p+1) square");
    if (truth.tau2.size() != p) throw DimensionMismatch("truth tau2 must have p entries");
    if (truth.beta.rows() != nproc || (truth.beta.cols() != 1 && truth.beta.cols() != T)) {
        throw DimensionMismatch("truth beta must be p(p+1) x 1 or p(p+1) x n_days");
    }
    const Mask mask = spec.mask();
    for (int r = 0; r < nproc; ++r)
        for (int k = 0; k < nproc; ++k)
            if (!mask(r, k) && truth.A(r, k) != 0.0) throw InvalidSpec("truth A has a non-zero entry outside the variant mask");
    const auto ofree = spec.overall_free();
    for (int r = 0; r < nproc; ++r)
        if (!ofree[static_cast<std::size_t>(r)] && truth.beta.row(r).cwiseAbs().maxCoeff() != 0.0) {
            throw InvalidSpec("truth beta has a non-zero coefficient the variant fixes at zero");
        }

    Rng rng_sites = Rng::stream(seed, {1});
    Rng rng_cov = Rng::stream(seed, {2});
    Rng rng_w = Rng::stream(seed, {3});
    Rng rng_y = Rng::stream(seed, {4});
    Rng rng_mask = Rng::stream(seed, {5});

    Grid grid = Grid::regular(truth.origin_lon, truth.origin_lat, truth.cell_km, truth.n_x, truth.n_y);
    double lo_lon = 1e9, hi_lon = -1e9, lo_lat = 1e9, hi_lat = -1e9;
    for (const auto& c : grid.cells()) {
        lo_lon = std::min(lo_lon, c.lon_min);
        hi_lon = std::max(hi_lon, c.lon_max);
        lo_lat = std::min(lo_lat, c.lat_min);
        hi_lat = std::max(hi_lat, c.lat_max);
    }

    // sites
    std::vector<Site> sites;
    std::vector<const SiteRole*> role_of;
    SimulationResult res;
    for (const auto& role : truth.roles) {
        if (static_cast<int>(role.reports.size()) != p || static_cast<int>(role.period.size()) != p || static_cast<int>(role.missing.size()) != p) {
            throw DimensionMismatch("site role '" + role.prefix + "' must describe every pollutant");
        }
        for (int k = 0; k < role.count; ++k) {
            Site s{role.prefix + std::to_string(k), lo_lon + (hi_lon - lo_lon) * (0.02 + 0.96 * rng_sites.uniform()),
                   lo_lat + (hi_lat - lo_lat) * (0.02 + 0.96 * rng_sites.uniform())};
            sites.push_back(s);
            role_of.push_back(&role);
            if (role.validation) res.validation_ids.insert(s.id);
        }
    }
    const int S = static_cast<int>(sites.size());
    std::vector<LonLat> pts;
    for (const auto& s : sites) pts.push_back(s.location());
    std::vector<std::size_t> site_cell;
    for (const auto& s : sites) site_cell.push_back(grid.locate(s.lon, s.lat));

    // covariates on the transformed scale, per (cell, day)
    std::vector<GridOutput> outputs;
    std::map<std::pair<std::size_t, int>, std::vector<double>> xval;  // (cell, day) -> x_1..x_p
    if (truth.source == GridOutputSource::FileProvided) {
        for (const auto& g : truth.provided) {
            const auto cell = grid.find(g.cell_id);
            if (!cell) throw DomainError("provided output for unknown cell '" + g.cell_id + "'");
            auto& v = xval[{*cell, g.t}];
            v.resize(static_cast<std::size_t>(p), std::numeric_limits<double>::quiet_NaN());
            v[static_cast<std::size_t>(g.pollutant - 1)] = spec.transform.forward(g.value_raw, g.pollutant);
            outputs.push_back(g);
        }
    } else {
        const auto& cf = truth.covariates;
        if (static_cast<int>(cf.mean.size()) < p || static_cast<int>(cf.sd.size()) < p) throw DimensionMismatch("covariate moments must cover every pollutant");
        std::vector<std::size_t> cells;
        if (static_cast<int>(grid.size()) <= kSimulatorCap) {
            for (std::size_t c = 0; c < grid.size(); ++c) cells.push_back(c);
        } else {
            std::set<std::size_t> occ(site_cell.begin(), site_cell.end());
            cells.assign(occ.begin(), occ.end());
        }
        std::vector<LonLat> cpts;
        for (auto c : cells) cpts.push_back(grid.cells()[c].centroid());
        const auto llt = detail::sim_cholesky(cpts, cf.phi, spec.metric);
        const Mat L = llt.matrixL();
        const double rc = cf.cross_corr, rc2 = std::sqrt(std::max(0.0, 1.0 - rc * rc));
        const double ds = std::sqrt(cf.day_share), fs = std::sqrt(1.0 - cf.day_share);
        const auto nc = static_cast<Eigen::Index>(cells.size());
        for (int t = 0; t < T; ++t) {
            std::vector<Vec> z;
            std::vector<double> d;
            for (int j = 0; j < p; ++j) {
                z.push_back(L * standard_normal_vector(rng_cov, nc));
                d.push_back(rng_cov.normal());
            }
            for (int j = 1; j < p; ++j) {
                z[static_cast<std::size_t>(j)] = rc * z[0] + rc2 * z[static_cast<std::size_t>(j)];
                d[static_cast<std::size_t>(j)] = rc * d[0] + rc2 * d[static_cast<std::size_t>(j)];
            }
            for (Eigen::Index c = 0; c < nc; ++c) {
                std::vector<double> v(static_cast<std::size_t>(p));
                for (int j = 0; j < p; ++j) {
                    const auto ju = static_cast<std::size_t>(j);
                    v[ju] = cf.mean[ju] + cf.sd[ju] * (ds * d[ju] + fs * z[ju](c));
                    // keep the value inside the transform's domain
                    if (spec.transform.of(j + 1) == Transform::Sqrt) v[ju] = std::max(v[ju], 0.0);
                    outputs.push_back({grid.cells()[cells[static_cast<std::size_t>(c)]].id, t, j + 1, spec.transform.backward(v[ju], j + 1)});
                    v[ju] = spec.transform.forward(outputs.back().value_raw, j + 1);
                }
                xval[{cells[static_cast<std::size_t>(c)], t}] = std::move(v);
            }
        }
    }

    // latent fields
    LatentTruth& lt = res.truth;
    for (int t = 0; t < T; ++t) lt.days.push_back(t);
    for (const auto& s : sites) lt.site_ids.push_back(s.id);
    lt.A = truth.A;
    lt.tau2 = truth.tau2;
    lt.beta = truth.beta.cols() == 1 ? Mat(truth.beta.replicate(1, T)) : truth.beta;
    std::vector<int> active;
    for (int k = 0; k < nproc; ++k)
        if (mask.col(k).any()) active.push_back(k);
    std::map<double, Mat> chol_cache;
    auto draw_fields = [&]() {
        Mat w = Mat::Zero(S, nproc);
        if (S == 0) return w;
        for (int k : active) {
            const double phi = spec.phi[static_cast<std::size_t>(k)];
            auto it = chol_cache.find(phi);
            if (it == chol_cache.end()) it = chol_cache.emplace(phi, Mat(detail::sim_cholesky(pts, phi, spec.metric).matrixL())).first;
            w.col(k) = it->second * standard_normal_vector(rng_w, S);
        }
        return w;
    };
    const int n_slots = spec.temporal.local == LocalStructure::Static ? 1 : T;
    for (int u = 0; u < n_slots; ++u) lt.w.push_back(draw_fields());
    for (int t = 0; t < T; ++t) {
        Mat bl;
        switch (spec.temporal.local) {
            case LocalStructure::Static: bl = lt.w[0] * truth.A.transpose(); break;
            case LocalStructure::IndependentReplicates: bl = lt.w[static_cast<std::size_t>(t)] * truth.A.transpose(); break;
            case LocalStructure::Dynamic: {
                bl = lt.w[static_cast<std::size_t>(t)] * truth.A.transpose();
                if (t > 0) {
                    const Mat& prev = lt.beta_local.back();
                    for (int r = 0; r < nproc; ++r) bl.col(r) += spec.temporal.gamma[static_cast<std::size_t>(r)] * prev.col(r);
                }
                break;
            }
        }
        lt.beta_local.push_back(std::move(bl));
    }

    // observations
    std::vector<Observation> obs;
    for (int t = 0; t < T; ++t) {
        Mat mean = Mat::Zero(S, p);
        for (int s = 0; s < S; ++s) {
            const auto it = xval.find({site_cell[static_cast<std::size_t>(s)], t});
            if (it == xval.end()) throw MissingGridOutput("simulation needs grid output for the cell of site '" + sites[static_cast<std::size_t>(s)].id + "'");
            const auto& x = it->second;
            for (int i = 0; i < p; ++i) {
                double m = 0.0;
                for (int j = 0; j < P1; ++j) {
                    const double xj = j == 0 ? 1.0 : x[static_cast<std::size_t>(j - 1)];
                    m += xj * (lt.beta(i * P1 + j, t) + lt.beta_local[static_cast<std::size_t>(t)](s, i * P1 + j));
                }
                mean(s, i) = m;
            }
        }
        for (int s = 0; s < S; ++s) {
            const SiteRole& role = *role_of[static_cast<std::size_t>(s)];
            for (int i = 0; i < p; ++i) {
                const double y = mean(s, i) + std::sqrt(truth.tau2(i)) * rng_y.normal();
                const double u = rng_mask.uniform();
                const auto iu = static_cast<std::size_t>(i);
                if (!role.reports[iu] || t % role.period[iu] != 0 || u < role.missing[iu]) continue;
                obs.push_back({sites[static_cast<std::size_t>(s)].id, t, i + 1, spec.transform.backward(y, i + 1)});
            }
        }
        lt.mean.push_back(std::move(mean));
    }
    res.dataset = AlignedDataset::build(sites, grid, std::move(obs), std::move(outputs), spec.transform, p);
    return res;
}

// ---------------------------------------------------------------------------
// Test beds
// ---------------------------------------------------------------------------

/// Truth used by the synthetic test beds: the preferred bivariate model
/// (shared intercept process, per-day coefficients) with non-zero
/// cross-pollutant slopes.
inline TruthConfig bivariate_truth(int n_days, double phi = 0.004, std::uint64_t seed = 1) {
    TruthConfig tc;
    tc.spec = default_spec(2, VariantPattern::SharedIntercept,
                           {OverallStructure::IndependentAcrossTime, LocalStructure::IndependentReplicates, {}, {}});
    tc.spec.phi.assign(6, phi);
    tc.n_days = n_days;
    tc.A = Mat::Zero(6, 6);
    tc.A(0, 0) = 0.55;
    tc.A(3, 0) = 0.22;
    tc.A(3, 3) = 0.16;
    tc.tau2 = Vec(2);
    tc.tau2 << 0.12, 0.02;
    Rng rng = Rng::stream(seed, {0xbe7a});
    Vec base(6);
    base << 1.85, 0.62, 0.35, 0.48, 0.1, 0.55;
    tc.beta = Mat(6, n_days);
    for (int t = 0; t < n_days; ++t) {
        tc.beta.col(t) = base;
        tc.beta(0, t) += 0.4 * rng.normal();
        tc.beta(3, t) += 0.15 * rng.normal();
    }
    return tc;
}

/// SharedIntercept truth for parameter-recovery studies: every site reports
/// both pollutants daily, A11 = 1, A41 = 0.5, A44 = 0.8, tau2 = (0.1, 0.1).
inline TruthConfig recovery_truth(int n_sites, int n_days, double phi = 0.004, std::uint64_t seed = 1) {
    TruthConfig tc = bivariate_truth(n_days, phi, seed);
    tc.A.setZero();
    tc.A(0, 0) = 1.0;
    tc.A(3, 0) = 0.5;
    tc.A(3, 3) = 0.8;
    tc.tau2 << 0.1, 0.1;
    tc.roles = {{"s", n_sites, {true, true}, {1, 1}, {0.0, 0.0}, false}};
    return tc;
}

struct TestbedOptions {
    double site_scale = 1.0;  ///< multiplies every site count
    int n_days = 122;
    double phi = 0.004;
    double cell_km = 36.0;
    /// Keep the full-scale number of daily pollutant-2 sites when site_scale
    /// shrinks the network (off-days are otherwise left with a handful of
    /// sites to inform three day-specific coefficients).
    bool keep_daily_sites = true;
};

/// Site roles mirroring the monitoring network: 70 both / 52 pollutant-1 only
/// / 39 pollutant-2 only for fitting, 35 / 15 / 15 held out. Pollutant-2 is
/// sampled daily at 10% of its sites, every third day at 83% and every sixth
/// day at the rest.
inline std::vector<SiteRole> paper_roles(double scale, bool keep_daily_sites = false) {
    auto n = [&](int c) { return std::max(1, static_cast<int>(std::lround(c * scale))); };
    std::vector<SiteRole> roles;
    auto add = [&](const std::string& prefix, int count, bool r1, bool r2, int period2, bool val) {
        if (count <= 0) return;
        roles.push_back({prefix, count, {r1, r2}, {1, period2}, {0.017, 0.07}, val});
    };
    // split pollutant-2 sites into daily / every-third / every-sixth groups
    auto split2 = [&](const std::string& prefix, int full, bool r1, bool val) {
        const int total = n(full);
        int daily = static_cast<int>(std::lround(total * 11.0 / 109.0));
        if (keep_daily_sites) daily = std::max(daily, std::min(total, static_cast<int>(std::lround(full * 11.0 / 109.0))));
        const int sixth = static_cast<int>(std::lround(total * 8.0 / 109.0));
        add(prefix + "d", daily, r1, true, 1, val);
        add(prefix + "t", std::max(0, total - daily - sixth), r1, true, 3, val);
        add(prefix + "x", std::min(sixth, total - daily), r1, true, 6, val);
    };
    split2("b", 70, true, false);
    add("o", n(52), true, false, 1, false);
    split2("p", 39, false, false);
    split2("vb", 35, true, true);
    add("vo", n(15), true, false, 1, true);
    split2("vp", 15, false, true);
    return roles;
}

/// Synthetic stand-in for the monitoring network and model output.
inline SimulationResult paper_scale_testbed(std::uint64_t seed, const TestbedOptions& opt = {}) {
    TruthConfig tc = bivariate_truth(opt.n_days, opt.phi, seed);
    tc.roles = paper_roles(opt.site_scale, opt.keep_daily_sites);
    tc.cell_km = opt.cell_km;
    tc.origin_lon = -92.0;
    tc.origin_lat = 31.0;
    tc.n_x = 25;
    tc.n_y = 25;
    return simulate(tc, seed);
}

}  // namespace downscaler
