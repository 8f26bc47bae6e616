#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "chain.hpp"
#include "covariance.hpp"
#include "data.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "model_spec.hpp"
#include "rng.hpp"

namespace downscaler {

enum class TargetKind { Point, CellCentroidGrid, Region };

struct PredictionTarget {
    TargetKind kind = TargetKind::Point;
    std::vector<Site> points;        ///< Point targets
    std::vector<std::string> cells;  ///< grid subset or region cells; empty = whole grid
    std::vector<int> days;           ///< empty = every fitted day
    std::vector<int> pollutants;     ///< 1-based; empty = all
    std::string label = "region";

    static PredictionTarget at_sites(std::vector<Site> sites, std::vector<int> days = {}) {
        PredictionTarget t;
        t.kind = TargetKind::Point;
        t.points = std::move(sites);
        t.days = std::move(days);
        return t;
    }
    static PredictionTarget grid(std::vector<int> days = {}, std::vector<std::string> cells = {}) {
        PredictionTarget t;
        t.kind = TargetKind::CellCentroidGrid;
        t.days = std::move(days);
        t.cells = std::move(cells);
        return t;
    }
    static PredictionTarget region(std::string label, std::vector<std::string> cells, std::vector<int> days = {}) {
        PredictionTarget t;
        t.kind = TargetKind::Region;
        t.label = std::move(label);
        t.cells = std::move(cells);
        t.days = std::move(days);
        return t;
    }
};

struct Summary {
    double mean = 0.0;
    double median = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
};

/// Type-7 (linear interpolation) sample quantile of sorted values.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw InsufficientDraws("quantile of an empty sample");
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Summary summarize(std::vector<double> draws) {
    if (draws.empty()) throw InsufficientDraws("no draws to summarise");
    Summary s;
    double m = 0.0;
    for (double d : draws) m += d;
    s.mean = m / static_cast<double>(draws.size());
    std::sort(draws.begin(), draws.end());
    s.median = sorted_quantile(draws, 0.5);
    s.q025 = sorted_quantile(draws, 0.025);
    s.q975 = sorted_quantile(draws, 0.975);
    return s;
}

/// Draws for one (location, day, pollutant).
struct PredictiveSeries {
    std::string id;
    LonLat location;
    int t = 0;
    int pollutant = 1;
    std::vector<double> draws;              ///< raw scale
    std::vector<double> draws_transformed;  ///< model scale

    [[nodiscard]] Summary summary() const { return summarize(draws); }
};

struct PredictiveSamples {
    std::vector<PredictiveSeries> series;

    [[nodiscard]] const PredictiveSeries* find(const std::string& id, int t, int pollutant) const {
        for (const auto& s : series)
            if (s.id == id && s.t == t && s.pollutant == pollutant) return &s;
        return nullptr;
    }
    [[nodiscard]] std::size_t n_draws() const { return series.empty() ? 0 : series.front().draws.size(); }
};

struct PredictOptions {
    bool include_nugget = true;
    /// Draw latent values jointly across targets (needed for spatial
    /// averages); otherwise each target is drawn from its own marginal.
    std::optional<bool> joint;
};

inline std::vector<PredictiveSeries> block_average_series(const PredictiveSamples& pred, const std::vector<std::string>& region,
                                                         const std::string& label);

namespace detail {

struct TargetPoint {
    std::string id;
    LonLat loc;
    std::size_t cell;
};

/// Kriging operator of one slot for one decay: W = R_TV R_VV^{-1}, and
/// either the conditional standard deviations or a factor of the
/// conditional covariance.
struct SlotOperator {
    Mat W;
    Vec sd;
    Mat L;
    std::vector<int> copy_from;  ///< slot position holding the target itself, or -1
};

inline SlotOperator slot_operator(const LatentSlot& slot, const std::vector<TargetPoint>& targets, double phi, DistanceMetric metric, bool joint) {
    SlotOperator op;
    const auto nT = static_cast<Eigen::Index>(targets.size());
    const auto nV = static_cast<Eigen::Index>(slot.locations.size());
    std::vector<LonLat> tl;
    for (const auto& t : targets) tl.push_back(t.loc);
    op.copy_from.assign(targets.size(), -1);
    std::map<std::string, int> pos;
    for (std::size_t v = 0; v < slot.site_ids.size(); ++v) pos[slot.site_ids[v]] = static_cast<int>(v);
    for (std::size_t a = 0; a < targets.size(); ++a)
        if (auto it = pos.find(targets[a].id); it != pos.end()) {
            const auto& l = slot.locations[static_cast<std::size_t>(it->second)];
            if (l.lon == targets[a].loc.lon && l.lat == targets[a].loc.lat) op.copy_from[a] = it->second;
        }
    if (nV == 0) {
        op.W = Mat::Zero(nT, 0);
        if (joint) op.L = cholesky_ridge(exp_cov_matrix(distance_matrix(std::span<const LonLat>(tl), metric), phi)).matrixL();
        else op.sd = Vec::Ones(nT);
        return op;
    }
    const Mat Rvv = exp_cov_matrix(distance_matrix(std::span<const LonLat>(slot.locations), metric), phi);
    const Mat Rtv = exp_cov_matrix(distance_matrix(std::span<const LonLat>(tl), std::span<const LonLat>(slot.locations), metric), phi);
    const auto llt = cholesky_ridge(Rvv, kRidge, "latent correlation matrix");
    op.W = llt.solve(Rtv.transpose()).transpose();
    if (joint) {
        Mat C = exp_cov_matrix(distance_matrix(std::span<const LonLat>(tl), metric), phi) - op.W * Rtv.transpose();
        for (std::size_t a = 0; a < targets.size(); ++a)
            if (op.copy_from[a] >= 0) {
                C.row(static_cast<Eigen::Index>(a)).setZero();
                C.col(static_cast<Eigen::Index>(a)).setZero();
            }
        op.L = cholesky_ridge(symmetrize(C), kRidge, "conditional latent covariance").matrixL();
    } else {
        op.sd.resize(nT);
        for (Eigen::Index a = 0; a < nT; ++a) op.sd(a) = std::sqrt(std::max(0.0, 1.0 - op.W.row(a).dot(Rtv.row(a))));
    }
    return op;
}

inline std::vector<TargetPoint> resolve_targets(const AlignedDataset& ds, const PredictionTarget& target) {
    std::vector<TargetPoint> out;
    const Grid& g = ds.grid();
    if (target.kind == TargetKind::Point) {
        for (const auto& s : target.points) {
            validate_site(s);
            out.push_back({s.id, s.location(), g.locate(s.lon, s.lat)});
        }
    } else {
        if (target.cells.empty()) {
            if (target.kind == TargetKind::Region) throw EmptyRegion("region '" + target.label + "' has no cells");
            for (std::size_t c = 0; c < g.size(); ++c) out.push_back({g.cells()[c].id, g.cells()[c].centroid(), c});
        } else {
            for (const auto& id : target.cells) {
                const auto c = g.find(id);
                if (!c) throw OutOfDomain("unknown cell '" + id + "'");
                out.push_back({id, g.cells()[*c].centroid(), *c});
            }
        }
    }
    return out;
}

}  // namespace detail

/// Posterior-predictive draws at the targets: for every stored draw the
/// latent fields at the targets are drawn from their GP conditional given
/// the stored fit-site fields, the coefficients are assembled through A, the
/// mean uses the output of the containing cell, nugget noise is added and
/// the result is back-transformed.
inline PredictiveSamples predict(const std::vector<ChainSamples>& chains, const AlignedDataset& ds, const PredictionTarget& target,
                                 std::uint64_t seed, const PredictOptions& opt = {}) {
    if (chains.empty() || chains.front().draws.empty()) throw InsufficientDraws("prediction needs at least one posterior draw");
    const ChainSamples& c0 = chains.front();
    const ModelSpec& spec = c0.spec;
    const int p = spec.p, P1 = p + 1;
    const auto targets = detail::resolve_targets(ds, target);
    const bool joint = opt.joint.value_or(target.kind != TargetKind::Point);
    std::vector<int> days = target.days.empty() ? c0.days : target.days;
    std::vector<int> pollutants = target.pollutants;
    if (pollutants.empty())
        for (int i = 1; i <= p; ++i) pollutants.push_back(i);
    for (int t : days) {
        if (!std::binary_search(c0.days.begin(), c0.days.end(), t)) throw DomainError("day " + std::to_string(t) + " was not part of the fit");
    }
    // x~ per target and day (checks grid output up front)
    std::map<int, Mat> xt;  // day -> targets x (p+1)
    for (int t : days) {
        Mat x(static_cast<Eigen::Index>(targets.size()), P1);
        for (std::size_t a = 0; a < targets.size(); ++a) {
            x(static_cast<Eigen::Index>(a), 0) = 1.0;
            for (int j = 1; j <= p; ++j) x(static_cast<Eigen::Index>(a), j) = ds.grid_value(targets[a].cell, t, j);
        }
        xt[t] = std::move(x);
    }

    PredictiveSamples out;
    std::map<std::tuple<std::size_t, int, int>, std::size_t> index;  // (target, t, pollutant) -> series
    for (int t : days)
        for (std::size_t a = 0; a < targets.size(); ++a)
            for (int i : pollutants) {
                index[{a, t, i}] = out.series.size();
                out.series.push_back({targets[a].id, targets[a].loc, t, i, {}, {}});
            }

    const auto nT = static_cast<Eigen::Index>(targets.size());
    for (const auto& ch : chains) {
        if (ch.slots.size() != c0.slots.size()) throw DimensionMismatch("chains disagree on the latent layout");
        const int K = static_cast<int>(ch.active.size());
        // slot operators per (slot, active process), shared by equal decays
        std::vector<std::vector<detail::SlotOperator>> ops(ch.slots.size());
        std::vector<bool> needed(ch.slots.size(), false);
        std::map<int, int> slot_of_day;
        for (std::size_t u = 0; u < ch.slots.size(); ++u)
            if (ch.slots[u].day >= 0) slot_of_day[ch.slots[u].day] = static_cast<int>(u);
        auto day_index = [&](int t) { return static_cast<int>(std::lower_bound(ch.days.begin(), ch.days.end(), t) - ch.days.begin()); };
        for (int t : days) {
            const int di = day_index(t);
            switch (spec.temporal.local) {
                case LocalStructure::Static: needed[0] = true; break;
                case LocalStructure::IndependentReplicates:
                    if (slot_of_day.count(di)) needed[static_cast<std::size_t>(slot_of_day[di])] = true;
                    break;
                case LocalStructure::Dynamic:
                    for (int u = 0; u <= di; ++u)
                        if (slot_of_day.count(u)) needed[static_cast<std::size_t>(slot_of_day[u])] = true;
                    break;
            }
        }
        for (std::size_t u = 0; u < ch.slots.size(); ++u) {
            if (!needed[u]) continue;
            std::map<double, std::size_t> cache;
            for (int kk = 0; kk < K; ++kk) {
                const double phi = spec.phi[static_cast<std::size_t>(ch.active[static_cast<std::size_t>(kk)])];
                if (auto it = cache.find(phi); it != cache.end()) {
                    ops[u].push_back(ops[u][it->second]);
                    continue;
                }
                cache[phi] = ops[u].size();
                ops[u].push_back(detail::slot_operator(ch.slots[u], targets, phi, spec.metric, joint));
            }
        }
        // operator for a day whose slot is missing (no reporting sites): prior draws
        std::vector<detail::SlotOperator> prior_ops;
        {
            LatentSlot empty;
            std::map<double, std::size_t> cache;
            for (int kk = 0; kk < K; ++kk) {
                const double phi = spec.phi[static_cast<std::size_t>(ch.active[static_cast<std::size_t>(kk)])];
                if (auto it = cache.find(phi); it != cache.end()) {
                    prior_ops.push_back(prior_ops[it->second]);
                    continue;
                }
                cache[phi] = prior_ops.size();
                prior_ops.push_back(detail::slot_operator(empty, targets, phi, spec.metric, joint));
            }
        }

        for (std::size_t d = 0; d < ch.draws.size(); ++d) {
            const ChainState& st = ch.draws[d];
            Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(ch.chain), static_cast<std::uint64_t>(d)});
            auto draw_latent = [&](const detail::SlotOperator& op, const Mat* w, int kk) {
                Vec z = standard_normal_vector(rng, nT);
                Vec v = joint ? Vec(op.L * z) : Vec(op.sd.cwiseProduct(z));
                if (w && op.W.cols() > 0) v += op.W * w->col(kk);
                if (w)
                    for (Eigen::Index a = 0; a < nT; ++a)
                        if (op.copy_from[static_cast<std::size_t>(a)] >= 0) v(a) = (*w)(op.copy_from[static_cast<std::size_t>(a)], kk);
                return v;
            };
            // latent values per needed slot: targets x K
            std::map<int, Mat> w0;
            auto latent_for_slot = [&](int u) -> const Mat& {
                auto it = w0.find(u);
                if (it != w0.end()) return it->second;
                Mat m(nT, K);
                for (int kk = 0; kk < K; ++kk) m.col(kk) = draw_latent(ops[static_cast<std::size_t>(u)][static_cast<std::size_t>(kk)], &st.w[static_cast<std::size_t>(u)], kk);
                return w0.emplace(u, std::move(m)).first->second;
            };
            for (int t : days) {
                const int di = day_index(t);
                const int os = spec.temporal.overall == OverallStructure::Static ? 0 : di;
                // local coefficients at the targets: targets x p(p+1)
                Mat bl = Mat::Zero(nT, n_processes(p));
                auto add_slot = [&](const Mat& lat, int lag) {
                    for (int kk = 0; kk < K; ++kk) {
                        const int k = ch.active[static_cast<std::size_t>(kk)];
                        for (int r = 0; r < n_processes(p); ++r) {
                            const double a = st.A(r, k);
                            if (a == 0.0) continue;
                            const double g = lag == 0 ? 1.0 : std::pow(spec.temporal.gamma[static_cast<std::size_t>(r)], lag);
                            bl.col(r) += (a * g) * lat.col(kk);
                        }
                    }
                };
                switch (spec.temporal.local) {
                    case LocalStructure::Static: add_slot(latent_for_slot(0), 0); break;
                    case LocalStructure::IndependentReplicates:
                        if (slot_of_day.count(di)) {
                            add_slot(latent_for_slot(slot_of_day[di]), 0);
                        } else {
                            Mat m(nT, K);
                            for (int kk = 0; kk < K; ++kk) m.col(kk) = draw_latent(prior_ops[static_cast<std::size_t>(kk)], nullptr, kk);
                            add_slot(m, 0);
                        }
                        break;
                    case LocalStructure::Dynamic:
                        for (int u = 0; u <= di; ++u)
                            if (slot_of_day.count(u)) add_slot(latent_for_slot(slot_of_day[u]), di - u);
                        break;
                }
                const Mat& x = xt[t];
                for (int i : pollutants) {
                    const int r0 = (i - 1) * P1;
                    const double sd = opt.include_nugget ? std::sqrt(st.tau2(i - 1)) : 0.0;
                    for (Eigen::Index a = 0; a < nT; ++a) {
                        double mu = 0.0;
                        for (int j = 0; j < P1; ++j) mu += x(a, j) * (st.beta(r0 + j, os) + bl(a, r0 + j));
                        const double y = mu + sd * rng.normal();
                        auto& s = out.series[index[{static_cast<std::size_t>(a), t, i}]];
                        s.draws_transformed.push_back(y);
                        s.draws.push_back(spec.transform.backward(y, i));
                    }
                }
            }
        }
    }
    if (target.kind == TargetKind::Region) {
        std::vector<std::string> cells;
        for (const auto& tp : targets) cells.push_back(tp.id);
        PredictiveSamples reg;
        for (int t : days)
            for (int i : pollutants) {
                PredictiveSamples sub;
                for (const auto& s : out.series)
                    if (s.t == t && s.pollutant == i) sub.series.push_back(s);
                auto avg = block_average_series(sub, cells, target.label);
                reg.series.insert(reg.series.end(), avg.begin(), avg.end());
            }
        return reg;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frozen-parameter predictive (latent fields integrated out)
// ---------------------------------------------------------------------------

struct GaussianMoments {
    double mean = 0.0;
    double var = 0.0;
};

/// Predictive mean and variance of Y_i at `target` on day `t` (model scale)
/// with A, tau2 and the overall coefficients held fixed and the latent
/// fields integrated analytically, conditioning on every observation of
/// that day. Independent-replicate or static local structure on one day.
inline GaussianMoments frozen_predictive(const AlignedDataset& ds, const ModelSpec& spec, const Mat& A, const Vec& tau2, const Vec& beta, int t,
                                         const Site& target, int pollutant, bool include_nugget = true) {
    const int p = spec.p, P1 = p + 1, nproc = n_processes(p);
    std::vector<int> active;
    for (int k = 0; k < nproc; ++k)
        if (A.col(k).cwiseAbs().maxCoeff() > 0.0) active.push_back(k);
    const int K = static_cast<int>(active.size());
    // reporting sites and observations of the day
    std::vector<std::string> ids;
    std::map<std::string, int> pos;
    std::vector<const Observation*> obs;
    for (const auto& o : ds.observations()) {
        if (o.t != t) continue;
        obs.push_back(&o);
        if (!pos.count(o.site_id)) {
            pos[o.site_id] = static_cast<int>(ids.size());
            ids.push_back(o.site_id);
        }
    }
    const auto nV = static_cast<Eigen::Index>(ids.size());
    std::vector<LonLat> locs;
    for (const auto& id : ids) locs.push_back(ds.site(id).location());
    auto xrow = [&](std::size_t cell) {
        Vec x(P1);
        x(0) = 1.0;
        for (int j = 1; j <= p; ++j) x(j) = ds.grid_value(cell, t, j);
        return x;
    };
    // stacked latent vector: process-major, nV per process
    const Eigen::Index dim = nV * K;
    Mat prec = Mat::Zero(dim, dim);
    Vec lin = Vec::Zero(dim);
    std::vector<Mat> Rinv(static_cast<std::size_t>(K));
    for (int kk = 0; kk < K; ++kk) {
        if (nV == 0) continue;
        Rinv[static_cast<std::size_t>(kk)] = inverse_spd(exp_cov_matrix(distance_matrix(std::span<const LonLat>(locs), spec.metric), spec.phi[static_cast<std::size_t>(active[static_cast<std::size_t>(kk)])]), 0.0, "latent correlation matrix");
        prec.block(kk * nV, kk * nV, nV, nV) = Rinv[static_cast<std::size_t>(kk)];
    }
    for (const auto* o : obs) {
        const int i = o->pollutant - 1;
        const auto sidx = *ds.site_index(o->site_id);
        const Vec x = xrow(ds.cell_of_site(sidx));
        const double y = ds.transformed(*o) - x.dot(beta.segment(i * P1, P1));
        Vec g = Vec::Zero(dim);
        for (int kk = 0; kk < K; ++kk) g(kk * nV + pos[o->site_id]) = x.dot(A.block(i * P1, active[static_cast<std::size_t>(kk)], P1, 1).col(0));
        prec += g * g.transpose() / tau2(i);
        lin += g * y / tau2(i);
    }
    Mat post_cov = dim > 0 ? inverse_spd(prec, 0.0, "latent posterior precision") : Mat();
    Vec post_mean = dim > 0 ? Vec(post_cov * lin) : Vec();

    const std::size_t cell = ds.grid().locate(target.lon, target.lat);
    const Vec x0 = xrow(cell);
    const int i = pollutant - 1;
    // y0 = x0'beta + sum_k c_k w_k(s0) + eps,  w_k(s0) | w_k(V) ~ N(W_k w_k, v_k)
    Vec h = Vec::Zero(dim);
    double cond_var = 0.0;
    for (int kk = 0; kk < K; ++kk) {
        const double c = x0.dot(A.block(i * P1, active[static_cast<std::size_t>(kk)], P1, 1).col(0));
        const double phi = spec.phi[static_cast<std::size_t>(active[static_cast<std::size_t>(kk)])];
        if (nV == 0) {
            cond_var += c * c;
            continue;
        }
        Vec r(nV);
        for (Eigen::Index v = 0; v < nV; ++v) r(v) = exp_cov(distance_km(target.location(), locs[static_cast<std::size_t>(v)], spec.metric), phi);
        const Vec W = Rinv[static_cast<std::size_t>(kk)] * r;
        h.segment(kk * nV, nV) = c * W;
        cond_var += c * c * std::max(0.0, 1.0 - W.dot(r));
    }
    GaussianMoments m;
    m.mean = x0.dot(beta.segment(i * P1, P1)) + (dim > 0 ? h.dot(post_mean) : 0.0);
    m.var = (dim > 0 ? h.dot(post_cov * h) : 0.0) + cond_var + (include_nugget ? tau2(i) : 0.0);
    return m;
}

// ---------------------------------------------------------------------------
// Upscaling and contrasts
// ---------------------------------------------------------------------------

/// Per-draw raw-scale average over the region cells, one series per
/// (day, pollutant), labelled `label`.
inline std::vector<PredictiveSeries> block_average_series(const PredictiveSamples& pred, const std::vector<std::string>& region, const std::string& label) {
    if (region.empty()) throw EmptyRegion("region '" + label + "' has no cells");
    std::map<std::pair<int, int>, std::vector<const PredictiveSeries*>> groups;
    std::set<std::string> want(region.begin(), region.end());
    for (const auto& s : pred.series)
        if (want.count(s.id)) groups[{s.t, s.pollutant}].push_back(&s);
    std::vector<PredictiveSeries> out;
    for (const auto& [key, members] : groups) {
        if (members.size() != want.size()) throw EmptyRegion("region '" + label + "' includes cells that were not predicted");
        PredictiveSeries avg{label, {}, key.first, key.second, {}, {}};
        const std::size_t n = members.front()->draws.size();
        avg.draws.assign(n, 0.0);
        double lon = 0.0, lat = 0.0;
        for (const auto* m : members) {
            if (m->draws.size() != n) throw DrawCountMismatch("region members have different draw counts");
            for (std::size_t d = 0; d < n; ++d) avg.draws[d] += m->draws[d];
            lon += m->location.lon;
            lat += m->location.lat;
        }
        for (auto& v : avg.draws) v /= static_cast<double>(members.size());
        avg.location = {lon / static_cast<double>(members.size()), lat / static_cast<double>(members.size())};
        out.push_back(std::move(avg));
    }
    if (out.empty()) throw EmptyRegion("region '" + label + "' matches no predicted cell");
    return out;
}

inline PredictiveSamples block_average(const PredictiveSamples& pred, const std::vector<std::string>& region, const std::string& label = "region") {
    PredictiveSamples out;
    out.series = block_average_series(pred, region, label);
    return out;
}

/// Draw-wise difference a - b for matching (day, pollutant) series.
inline PredictiveSamples contrast(const PredictiveSamples& a, const PredictiveSamples& b, const std::string& label = "contrast") {
    PredictiveSamples out;
    for (const auto& sa : a.series) {
        const PredictiveSeries* sb = nullptr;
        for (const auto& s : b.series)
            if (s.t == sa.t && s.pollutant == sa.pollutant) {
                sb = &s;
                break;
            }
        if (!sb) continue;
        if (sb->draws.size() != sa.draws.size()) throw DrawCountMismatch("contrast needs matched draws");
        PredictiveSeries c{label, sa.location, sa.t, sa.pollutant, {}, {}};
        c.draws.resize(sa.draws.size());
        for (std::size_t d = 0; d < sa.draws.size(); ++d) c.draws[d] = sa.draws[d] - sb->draws[d];
        out.series.push_back(std::move(c));
    }
    if (out.series.empty() && !a.series.empty()) throw DrawCountMismatch("contrast operands share no (day, pollutant) series");
    return out;
}

// ---------------------------------------------------------------------------
// Bias surfaces
// ---------------------------------------------------------------------------

struct SurfaceValue {
    std::string cell_id;
    LonLat centroid;
    double value = 0.0;
};

/// Posterior mean over draws of the GP-conditional mean of the local
/// coefficient beta_ij(s, t) at every cell centroid (j = 0 intercept).
inline std::vector<SurfaceValue> bias_surface(const std::vector<ChainSamples>& chains, const Grid& grid, int t, int pollutant, int j) {
    if (chains.empty() || chains.front().draws.empty()) throw InsufficientDraws("bias surface needs posterior draws");
    const ModelSpec& spec = chains.front().spec;
    if (j < 0 || j > spec.p) throw DomainError("coefficient index must lie in 0..p");
    if (pollutant < 1 || pollutant > spec.p) throw DomainError("pollutant index out of range");
    const int r = (pollutant - 1) * (spec.p + 1) + j;
    std::vector<detail::TargetPoint> targets;
    for (std::size_t c = 0; c < grid.size(); ++c) targets.push_back({grid.cells()[c].id, grid.cells()[c].centroid(), c});
    const auto nT = static_cast<Eigen::Index>(targets.size());
    Vec acc = Vec::Zero(nT);
    std::size_t n = 0;
    for (const auto& ch : chains) {
        const auto di = static_cast<int>(std::lower_bound(ch.days.begin(), ch.days.end(), t) - ch.days.begin());
        if (spec.temporal.local != LocalStructure::Static && (di >= static_cast<int>(ch.days.size()) || ch.days[static_cast<std::size_t>(di)] != t)) {
            throw DomainError("day " + std::to_string(t) + " was not part of the fit");
        }
        std::vector<std::pair<int, int>> slots;  // (slot, lag)
        for (std::size_t u = 0; u < ch.slots.size(); ++u) {
            const int sd = ch.slots[u].day;
            if (spec.temporal.local == LocalStructure::Static) slots.emplace_back(static_cast<int>(u), 0);
            else if (spec.temporal.local == LocalStructure::IndependentReplicates && sd == di) slots.emplace_back(static_cast<int>(u), 0);
            else if (spec.temporal.local == LocalStructure::Dynamic && sd <= di) slots.emplace_back(static_cast<int>(u), di - sd);
        }
        std::map<std::pair<int, int>, Mat> W;  // (slot, kk) -> kriging operator
        for (auto [u, lag] : slots)
            for (std::size_t kk = 0; kk < ch.active.size(); ++kk) {
                const double phi = spec.phi[static_cast<std::size_t>(ch.active[kk])];
                W[{u, static_cast<int>(kk)}] = detail::slot_operator(ch.slots[static_cast<std::size_t>(u)], targets, phi, spec.metric, false).W;
            }
        for (const auto& st : ch.draws) {
            for (auto [u, lag] : slots) {
                const double g = lag == 0 ? 1.0 : std::pow(spec.temporal.gamma[static_cast<std::size_t>(r)], lag);
                for (std::size_t kk = 0; kk < ch.active.size(); ++kk) {
                    const double a = st.A(r, ch.active[kk]);
                    if (a == 0.0) continue;
                    const Mat& Wk = W[{u, static_cast<int>(kk)}];
                    if (Wk.cols() == 0) continue;
                    acc += (a * g) * (Wk * st.w[static_cast<std::size_t>(u)].col(static_cast<Eigen::Index>(kk)));
                }
            }
            ++n;
        }
    }
    std::vector<SurfaceValue> out;
    for (Eigen::Index a = 0; a < nT; ++a) out.push_back({targets[static_cast<std::size_t>(a)].id, targets[static_cast<std::size_t>(a)].loc, acc(a) / static_cast<double>(n)});
    return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// `cell_id,lon,lat,t,pollutant,mean,median,q025,q975`, with a trailing
/// `method` column when `method` is non-empty.
inline void write_surface_csv(const std::string& path, const PredictiveSamples& pred, const std::string& config_hash, const std::string& method = "") {
    auto out = open_output(path, config_hash);
    out << "cell_id,lon,lat,t,pollutant,mean,median,q025,q975" << (method.empty() ? "" : ",method") << '\n';
    for (const auto& s : pred.series) {
        const Summary m = s.summary();
        out << s.id << ',' << fmt_num(s.location.lon) << ',' << fmt_num(s.location.lat) << ',' << s.t << ',' << s.pollutant << ','
            << fmt_num(m.mean) << ',' << fmt_num(m.median) << ',' << fmt_num(m.q025) << ',' << fmt_num(m.q975);
        if (!method.empty()) out << ',' << method;
        out << '\n';
    }
}

inline void write_contrast_csv(const std::string& path, const PredictiveSamples& pred, const std::string& config_hash, bool dump_draws = false) {
    auto out = open_output(path, config_hash);
    out << "label,t,pollutant,mean,q025,q975" << (dump_draws ? ",draws" : "") << '\n';
    for (const auto& s : pred.series) {
        const Summary m = s.summary();
        out << s.id << ',' << s.t << ',' << s.pollutant << ',' << fmt_num(m.mean) << ',' << fmt_num(m.q025) << ',' << fmt_num(m.q975);
        if (dump_draws) {
            out << ',';
            for (std::size_t d = 0; d < s.draws.size(); ++d) out << (d ? ";" : "") << fmt_num(s.draws[d]);
        }
        out << '\n';
    }
}

inline void write_bias_surface_csv(const std::string& path, const std::vector<SurfaceValue>& surface, int t, int pollutant, int j,
                                   const std::string& config_hash) {
    auto out = open_output(path, config_hash);
    out << "cell_id,lon,lat,t,pollutant,coefficient,mean\n";
    for (const auto& v : surface)
        out << v.cell_id << ',' << fmt_num(v.centroid.lon) << ',' << fmt_num(v.centroid.lat) << ',' << t << ',' << pollutant << ',' << j << ','
            << fmt_num(v.value) << '\n';
}

}  // namespace downscaler
