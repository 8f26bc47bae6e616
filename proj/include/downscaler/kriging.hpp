#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/minima.hpp>

#include "covariance.hpp"
#include "data.hpp"
#include "distance.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "prediction.hpp"

namespace downscaler {

/// Constant unknown mean, exponential covariance plus nugget.
struct KrigingModel {
    double sigma2 = 1.0;
    double tau2 = 0.0;
    double phi = 0.0016;
    DistanceMetric metric = DistanceMetric::GreatCircle;

    [[nodiscard]] double cov(double d, bool same_point) const { return sigma2 * exp_cov(d, phi) + (same_point ? tau2 : 0.0); }
    void check() const {
        if (!(sigma2 > 0.0) || !(tau2 >= 0.0) || !(phi > 0.0)) throw DomainError("kriging model needs sigma2 > 0, tau2 >= 0, phi > 0");
    }
};

struct PointValue {
    LonLat loc;
    double value = 0.0;
};

struct KrigingPrediction {
    double mean = 0.0;
    double variance = 0.0;
    Vec weights;  ///< on the observations, in input order
};

namespace detail {

/// Universal-kriging solve: [[C, X], [X', 0]] [l; m] = [c0; x0].
/// Returns (weights, multipliers); throws SingularSystem.
inline std::pair<Vec, Vec> bordered_solve(const Mat& C, const Mat& X, const Mat& rhs_c, const Mat& rhs_x, Mat* sol_out = nullptr) {
    const auto n = C.rows(), q = X.cols();
    Mat K = Mat::Zero(n + q, n + q);
    K.topLeftCorner(n, n) = C;
    K.topRightCorner(n, q) = X;
    K.bottomLeftCorner(q, n) = X.transpose();
    Mat rhs(n + q, rhs_c.cols());
    rhs.topRows(n) = rhs_c;
    rhs.bottomRows(q) = rhs_x;
    Eigen::FullPivLU<Mat> lu(K);
    if (!lu.isInvertible()) {
        const double scale = C.diagonal().cwiseAbs().maxCoeff();
        K.topLeftCorner(n, n).diagonal().array() += kRidge * std::max(scale, 1.0);
        lu.compute(K);
        if (!lu.isInvertible()) throw SingularSystem("kriging system is singular after ridge");
    }
    Mat sol = lu.solve(rhs);
    if (!sol.allFinite()) throw SingularSystem("kriging system produced non-finite weights");
    if (sol_out) *sol_out = sol;
    return {sol.topRows(n).col(0), sol.bottomRows(q).col(0)};
}

}  // namespace detail

/// Ordinary kriging of a new measurement at each target (nugget included
/// in the target variance; an observed location with tau2 = 0 reproduces
/// its observation).
inline std::vector<KrigingPrediction> krige(const std::vector<PointValue>& obs, const KrigingModel& model, const std::vector<LonLat>& targets) {
    model.check();
    if (obs.size() < 2) throw TooFewSites("ordinary kriging needs at least 2 observations");
    const auto n = static_cast<Eigen::Index>(obs.size());
    std::vector<LonLat> locs;
    Vec y(n);
    for (Eigen::Index a = 0; a < n; ++a) {
        locs.push_back(obs[static_cast<std::size_t>(a)].loc);
        y(a) = obs[static_cast<std::size_t>(a)].value;
    }
    const Mat D = distance_matrix(std::span<const LonLat>(locs), model.metric);
    Mat C(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b) C(a, b) = model.cov(D(a, b), a == b);
    const Mat X = Mat::Ones(n, 1);
    const auto T = static_cast<Eigen::Index>(targets.size());
    Mat c0(n, T);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index a = 0; a < n; ++a) c0(a, t) = model.cov(distance_km(targets[static_cast<std::size_t>(t)], locs[static_cast<std::size_t>(a)], model.metric), false);
    Mat sol;
    if (T > 0) detail::bordered_solve(C, X, c0, Mat::Ones(1, T), &sol);
    std::vector<KrigingPrediction> out;
    for (Eigen::Index t = 0; t < T; ++t) {
        KrigingPrediction p;
        p.weights = sol.col(t).head(n);
        const double mu = sol(n, t);
        p.mean = p.weights.dot(y);
        p.variance = std::max(0.0, model.sigma2 + model.tau2 - p.weights.dot(c0.col(t)) - mu);
        out.push_back(std::move(p));
    }
    return out;
}

/// Parameters of the bivariate cokriging baseline: marginal kriging models
/// plus the intercept coregionalization (cross-covariance A11 A41 exp(-phi1 d)).
struct CokrigingModel {
    KrigingModel k1, k2;
    double A11 = 0.0, A41 = 0.0, A44 = 0.0;
    double phi1 = 0.0016;

    [[nodiscard]] double cross(double d) const { return A11 * A41 * exp_cov(d, phi1); }
};

struct CoObservation {
    LonLat loc;
    int pollutant = 1;  ///< 1 or 2
    double value = 0.0;
};

enum class CokrigingForm { Ordinary, Simple };

/// Cokriging through the joint Gaussian conditional. Ordinary form: one
/// unknown constant mean per observed pollutant. Simple form: means known
/// (`means`, defaulting to the day's sample means).
inline std::vector<KrigingPrediction> cokrige(const std::vector<CoObservation>& obs, const CokrigingModel& model, const std::vector<LonLat>& targets,
                                              int target_pollutant, CokrigingForm form = CokrigingForm::Ordinary,
                                              std::optional<std::pair<double, double>> means = std::nullopt) {
    model.k1.check();
    model.k2.check();
    if (target_pollutant != 1 && target_pollutant != 2) throw DomainError("target pollutant must be 1 or 2");
    const auto n = static_cast<Eigen::Index>(obs.size());
    int count[2] = {0, 0};
    for (const auto& o : obs) {
        if (o.pollutant != 1 && o.pollutant != 2) throw DomainError("cokriging observations must be pollutant 1 or 2");
        ++count[o.pollutant - 1];
    }
    if (count[target_pollutant - 1] < (form == CokrigingForm::Ordinary ? 2 : 1)) throw TooFewSites("too few observations of the target pollutant");
    const DistanceMetric metric = model.k1.metric;
    auto cov = [&](int pa, int pb, double d, bool same) {
        if (pa == pb) return (pa == 1 ? model.k1 : model.k2).cov(d, same);
        return model.cross(d);
    };
    Mat C(n, n);
    Vec y(n);
    for (Eigen::Index a = 0; a < n; ++a) {
        const auto& oa = obs[static_cast<std::size_t>(a)];
        y(a) = oa.value;
        for (Eigen::Index b = 0; b < n; ++b) {
            const auto& ob = obs[static_cast<std::size_t>(b)];
            C(a, b) = cov(oa.pollutant, ob.pollutant, distance_km(oa.loc, ob.loc, metric), a == b);
        }
    }
    if (n > 0) cholesky_ridge(C, 0.0, "cokriging joint covariance");
    const auto T = static_cast<Eigen::Index>(targets.size());
    Mat c0(n, T);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index a = 0; a < n; ++a) {
            const auto& oa = obs[static_cast<std::size_t>(a)];
            c0(a, t) = cov(target_pollutant, oa.pollutant, distance_km(targets[static_cast<std::size_t>(t)], oa.loc, metric), false);
        }
    const KrigingModel& kt = target_pollutant == 1 ? model.k1 : model.k2;
    const double c00 = kt.sigma2 + kt.tau2;
    std::vector<KrigingPrediction> out;
    if (form == CokrigingForm::Ordinary) {
        std::vector<int> cols;
        for (int i = 0; i < 2; ++i)
            if (count[i] > 0) cols.push_back(i + 1);
        Mat X = Mat::Zero(n, static_cast<Eigen::Index>(cols.size()));
        Mat x0 = Mat::Zero(static_cast<Eigen::Index>(cols.size()), T);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            for (Eigen::Index a = 0; a < n; ++a)
                if (obs[static_cast<std::size_t>(a)].pollutant == cols[c]) X(a, static_cast<Eigen::Index>(c)) = 1.0;
            if (cols[c] == target_pollutant) x0.row(static_cast<Eigen::Index>(c)).setOnes();
        }
        Mat sol;
        if (T > 0) detail::bordered_solve(C, X, c0, x0, &sol);
        for (Eigen::Index t = 0; t < T; ++t) {
            KrigingPrediction p;
            p.weights = sol.col(t).head(n);
            p.mean = p.weights.dot(y);
            const Vec mu = sol.col(t).tail(X.cols());
            p.variance = std::max(0.0, c00 - p.weights.dot(c0.col(t)) - mu.dot(x0.col(t)));
            out.push_back(std::move(p));
        }
    } else {
        double m[2] = {0.0, 0.0};
        if (means) {
            m[0] = means->first;
            m[1] = means->second;
        } else {
            for (const auto& o : obs) m[o.pollutant - 1] += o.value;
            for (int i = 0; i < 2; ++i) m[i] = count[i] ? m[i] / count[i] : 0.0;
        }
        Vec yc(n);
        for (Eigen::Index a = 0; a < n; ++a) yc(a) = y(a) - m[obs[static_cast<std::size_t>(a)].pollutant - 1];
        const auto llt = cholesky_ridge(C, 0.0, "cokriging joint covariance");
        const Mat Wt = llt.solve(c0);
        for (Eigen::Index t = 0; t < T; ++t) {
            KrigingPrediction p;
            p.weights = Wt.col(t);
            p.mean = m[target_pollutant - 1] + p.weights.dot(yc);
            p.variance = std::max(0.0, c00 - p.weights.dot(c0.col(t)));
            out.push_back(std::move(p));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// REML
// ---------------------------------------------------------------------------

namespace detail {

/// Profiled restricted log-likelihood of one day for fixed decay, as a
/// function of the nugget ratio nu = tau2 / sigma2 (sigma2 profiled out).
/// Uses one eigendecomposition of the correlation matrix per decay.
class RemlDay {
public:
    RemlDay(const std::vector<PointValue>& obs, double phi, DistanceMetric metric) : n_(static_cast<Eigen::Index>(obs.size())) {
        std::vector<LonLat> locs;
        Vec y(n_);
        for (Eigen::Index a = 0; a < n_; ++a) {
            locs.push_back(obs[static_cast<std::size_t>(a)].loc);
            y(a) = obs[static_cast<std::size_t>(a)].value;
        }
        const Mat R = exp_cov_matrix(distance_matrix(std::span<const LonLat>(locs), metric), phi);
        Eigen::SelfAdjointEigenSolver<Mat> es(R);
        lambda_ = es.eigenvalues().cwiseMax(0.0);
        yt_ = es.eigenvectors().transpose() * y;
        ot_ = es.eigenvectors().transpose() * Vec::Ones(n_);
    }

    /// Profiled REML log-likelihood (up to a constant) and sigma2-hat.
    [[nodiscard]] std::pair<double, double> eval(double nu) const {
        double logdet = 0.0, s11 = 0.0, s1y = 0.0, syy = 0.0;
        for (Eigen::Index a = 0; a < n_; ++a) {
            const double v = lambda_(a) + nu;
            logdet += std::log(v);
            s11 += ot_(a) * ot_(a) / v;
            s1y += ot_(a) * yt_(a) / v;
            syy += yt_(a) * yt_(a) / v;
        }
        const double q = std::max(syy - s1y * s1y / s11, 1e-300);
        const double m = static_cast<double>(n_ - 1);
        const double ll = -0.5 * (m * std::log(q / m) + logdet + std::log(s11));
        return {ll, q / m};
    }

private:
    Eigen::Index n_;
    Vec lambda_, yt_, ot_;
};

inline constexpr double kLogNuMin = -9.0;  // nu in [1e-4, 1e4] (log-e bounds)
inline constexpr double kLogNuMax = 9.2;

/// Best nugget ratio for one day at fixed decay: (loglik, nu, sigma2).
inline std::tuple<double, double, double> best_nugget(const RemlDay& day) {
    auto f = [&](double lnu) { return -day.eval(std::exp(lnu)).first; };
    auto r = boost::math::tools::brent_find_minima(f, kLogNuMin, kLogNuMax, 30);
    // the boundary can beat the interior optimum of a monotone objective
    double best_l = r.first, best_v = -r.second;
    for (double edge : {kLogNuMin, kLogNuMax}) {
        const double v = -f(edge);
        if (v > best_v) {
            best_v = v;
            best_l = edge;
        }
    }
    const double nu = std::exp(best_l);
    return {best_v, nu, day.eval(nu).second};
}

}  // namespace detail

/// Sill and nugget of one day by REML at fixed decay.
inline KrigingModel fit_sill_nugget(const std::vector<PointValue>& obs, double phi, DistanceMetric metric = DistanceMetric::GreatCircle) {
    if (obs.size() < 3) throw TooFewSites("REML needs at least 3 observations");
    detail::RemlDay day(obs, phi, metric);
    auto [ll, nu, s2] = detail::best_nugget(day);
    (void)ll;
    return KrigingModel{s2, nu * s2, phi, metric};
}

struct DailyDecay {
    int t = 0;
    double phi = 0.0;
    double sigma2 = 0.0;
    double tau2 = 0.0;
    double loglik = 0.0;
};

struct DecayEstimate {
    std::vector<DailyDecay> days;  ///< usable days
    std::vector<int> skipped;      ///< too few sites or flat objective
    std::vector<std::string> warnings;
    double median_phi = 0.0;
};

inline constexpr double kPhiMin = 1e-6;
inline constexpr double kPhiMax = 1.0;
inline constexpr std::size_t kMinRemlSites = 5;

/// Profile REML of (phi, sigma2, tau2) for one day, or nullopt if the
/// objective is flat in phi (decay unidentified).
inline std::optional<DailyDecay> reml_day(const std::vector<PointValue>& obs, DistanceMetric metric = DistanceMetric::GreatCircle) {
    if (obs.size() < kMinRemlSites) throw TooFewSites("REML needs at least 5 sites on a day");
    auto profile = [&](double lphi) {
        detail::RemlDay day(obs, std::exp(lphi), metric);
        return detail::best_nugget(day);
    };
    const double lo = std::log(kPhiMin), hi = std::log(kPhiMax);
    constexpr int kStarts = 5;
    double best_ll = -std::numeric_limits<double>::infinity(), best_lphi = lo;
    double min_ll = std::numeric_limits<double>::infinity();
    for (int s = 0; s < kStarts; ++s) {
        const double a = lo + (hi - lo) * s / kStarts, b = lo + (hi - lo) * (s + 1) / kStarts;
        auto r = boost::math::tools::brent_find_minima([&](double lp) { return -std::get<0>(profile(lp)); }, a, b, 20);
        const double ll = -r.second;
        min_ll = std::min(min_ll, ll);
        if (ll > best_ll) {
            best_ll = ll;
            best_lphi = r.first;
        }
    }
    auto [ll, nu, s2] = profile(best_lphi);
    const bool flat = best_ll - min_ll < 1e-3 || nu >= 0.99 * std::exp(detail::kLogNuMax);
    if (flat) return std::nullopt;
    return DailyDecay{0, std::exp(best_lphi), s2, nu * s2, ll};
}

/// Observations of one pollutant on one day (model scale) at site locations.
inline std::vector<PointValue> day_values(const AlignedDataset& ds, int t, int pollutant) {
    std::vector<PointValue> out;
    for (const auto& o : ds.observations())
        if (o.t == t && o.pollutant == pollutant) out.push_back({ds.site(o.site_id).location(), ds.transformed(o)});
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw InsufficientDraws("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Daily REML decay estimates of one pollutant and their median.
inline DecayEstimate estimate_decay(const AlignedDataset& ds, int pollutant, DistanceMetric metric = DistanceMetric::GreatCircle) {
    DecayEstimate est;
    std::vector<double> phis;
    for (int t : ds.days()) {
        const auto obs = day_values(ds, t, pollutant);
        if (obs.size() < kMinRemlSites) {
            est.skipped.push_back(t);
            est.warnings.push_back("day " + std::to_string(t) + ": fewer than 5 sites");
            continue;
        }
        auto d = reml_day(obs, metric);
        if (!d) {
            est.skipped.push_back(t);
            est.warnings.push_back("day " + std::to_string(t) + ": flat REML objective in the decay");
            continue;
        }
        d->t = t;
        phis.push_back(d->phi);
        est.days.push_back(*d);
    }
    if (phis.empty()) throw TooFewSites("no day has enough sites for REML");
    est.median_phi = median_of(phis);
    return est;
}

// ---------------------------------------------------------------------------
// Baseline predictions at target sites
// ---------------------------------------------------------------------------

/// Gaussian predictive moments on the model scale for one target, day and
/// pollutant.
struct GaussianPrediction {
    std::string id;
    LonLat loc;
    int t = 0;
    int pollutant = 1;
    double mean = 0.0;
    double var = 0.0;
};

enum class BaselineMethod { Kriging, Cokriging };

inline std::string to_string(BaselineMethod m) { return m == BaselineMethod::Kriging ? "kriging" : "cokriging"; }

struct BaselineOptions {
    BaselineMethod method = BaselineMethod::Kriging;
    std::vector<double> phi;  ///< per pollutant decay for the kriging models
    /// Per-pollutant decay used only for sill/nugget REML; defaults to `phi`.
    std::vector<double> reml_phi;
    double A11 = 0.0, A41 = 0.0, A44 = 0.0;  ///< cokriging cross parameters
    double phi1 = 0.0016;
    CokrigingForm form = CokrigingForm::Ordinary;
    DistanceMetric metric = DistanceMetric::GreatCircle;
};

/// Kriging or cokriging predictions at the target sites for every day of
/// the training data. Sill and nugget are fitted by REML per day; a day with
/// too few observations falls back to the pooled mean and variance of the
/// pollutant.
inline std::vector<GaussianPrediction> baseline_predictions(const AlignedDataset& train, const std::vector<Site>& targets, const BaselineOptions& opt,
                                                            std::vector<int> pollutants = {}) {
    const int p = train.p();
    if (pollutants.empty())
        for (int i = 1; i <= p; ++i) pollutants.push_back(i);
    if (opt.phi.size() < static_cast<std::size_t>(p)) throw DimensionMismatch("baseline needs one decay per pollutant");
    if (opt.method == BaselineMethod::Cokriging && p != 2) throw UnsupportedVariant("cokriging baseline is bivariate");
    const auto& reml_phi = opt.reml_phi.empty() ? opt.phi : opt.reml_phi;
    std::vector<LonLat> tl;
    for (const auto& s : targets) tl.push_back(s.location());
    // pooled fallback moments per pollutant
    std::vector<double> pooled_mean(static_cast<std::size_t>(p), 0.0), pooled_var(static_cast<std::size_t>(p), 1.0);
    for (int i = 1; i <= p; ++i) {
        double s = 0.0, ss = 0.0, n = 0.0;
        for (const auto& o : train.observations())
            if (o.pollutant == i) {
                const double v = train.transformed(o);
                s += v;
                ss += v * v;
                n += 1.0;
            }
        if (n > 0) {
            pooled_mean[static_cast<std::size_t>(i - 1)] = s / n;
            pooled_var[static_cast<std::size_t>(i - 1)] = n > 1 ? std::max(1e-12, (ss - s * s / n) / (n - 1.0)) : 1.0;
        }
    }
    std::vector<GaussianPrediction> out;
    for (int t : train.days()) {
        std::vector<std::vector<PointValue>> vals;
        std::vector<std::optional<KrigingModel>> models;
        for (int i = 1; i <= p; ++i) {
            vals.push_back(day_values(train, t, i));
            std::optional<KrigingModel> m;
            if (vals.back().size() >= 3) {
                m = fit_sill_nugget(vals.back(), reml_phi[static_cast<std::size_t>(i - 1)], opt.metric);
                m->phi = opt.phi[static_cast<std::size_t>(i - 1)];
            }
            models.push_back(m);
        }
        for (int i : pollutants) {
            const auto& mi = models[static_cast<std::size_t>(i - 1)];
            std::vector<KrigingPrediction> preds;
            if (mi) {
                if (opt.method == BaselineMethod::Kriging || !models[static_cast<std::size_t>(2 - i)]) {
                    preds = krige(vals[static_cast<std::size_t>(i - 1)], *mi, tl);
                } else {
                    CokrigingModel cm{*models[0], *models[1], opt.A11, opt.A41, opt.A44, opt.phi1};
                    std::vector<CoObservation> co;
                    for (int q = 1; q <= 2; ++q)
                        for (const auto& v : vals[static_cast<std::size_t>(q - 1)]) co.push_back({v.loc, q, v.value});
                    try {
                        preds = cokrige(co, cm, tl, i, opt.form);
                    } catch (const NotPositiveDefinite&) {
                        // cross term incompatible with the day's marginal fits
                        preds = krige(vals[static_cast<std::size_t>(i - 1)], *mi, tl);
                    }
                }
            }
            for (std::size_t a = 0; a < targets.size(); ++a) {
                GaussianPrediction g{targets[a].id, tl[a], t, i, 0.0, 0.0};
                if (mi) {
                    g.mean = preds[a].mean;
                    g.var = preds[a].variance;
                } else {
                    g.mean = pooled_mean[static_cast<std::size_t>(i - 1)];
                    g.var = pooled_var[static_cast<std::size_t>(i - 1)];
                }
                out.push_back(g);
            }
        }
    }
    return out;
}

/// Represents Gaussian predictives by `n_draws` evenly spaced quantiles
/// (no randomness), back-transformed per pollutant.
inline PredictiveSamples gaussian_to_samples(const std::vector<GaussianPrediction>& preds, const TransformSpec& transform, std::size_t n_draws = 1000) {
    if (n_draws < 2) throw InsufficientDraws("need at least 2 quantile draws");
    boost::math::normal_distribution<double> nd;
    std::vector<double> z(n_draws);
    for (std::size_t k = 0; k < n_draws; ++k) z[k] = boost::math::quantile(nd, (static_cast<double>(k) + 0.5) / static_cast<double>(n_draws));
    PredictiveSamples out;
    for (const auto& g : preds) {
        PredictiveSeries s{g.id, g.loc, g.t, g.pollutant, {}, {}};
        const double sd = std::sqrt(std::max(0.0, g.var));
        for (double zk : z) {
            const double v = g.mean + sd * zk;
            s.draws_transformed.push_back(v);
            s.draws.push_back(transform.backward(v, g.pollutant));
        }
        out.series.push_back(std::move(s));
    }
    return out;
}

}  // namespace downscaler
