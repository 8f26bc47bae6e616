#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <boost/math/distributions/students_t.hpp>

#include "data.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "linalg.hpp"

namespace downscaler {

struct SiteRegression {
    std::string site_id;
    int pollutant = 1;
    std::size_t n = 0;
    bool ok = false;          ///< false: too few days or rank deficient
    std::string note;
    std::vector<double> coef;  ///< intercept, slope_1 .. slope_p
    std::vector<double> se;
    std::vector<double> pvalue;
    std::vector<bool> significant;
    double r2 = 0.0;
};

inline constexpr std::size_t kMinOlsDays = 10;

/// Least squares of one response on a design with intercept column; throws
/// RankDeficient.
inline SiteRegression ols_fit(const Mat& X, const Vec& y, double level = 0.05) {
    const auto n = X.rows(), k = X.cols();
    if (n <= k) throw RankDeficient("more coefficients than observations");
    Eigen::ColPivHouseholderQR<Mat> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < k) throw RankDeficient("design matrix is rank deficient");
    const Vec b = qr.solve(y);
    const Vec res = y - X * b;
    const double dof = static_cast<double>(n - k);
    const double s2 = res.squaredNorm() / dof;
    const Mat XtXi = inverse_spd(X.transpose() * X, 0.0, "OLS normal matrix");
    boost::math::students_t dist(dof);
    SiteRegression r;
    r.ok = true;
    r.n = static_cast<std::size_t>(n);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double se = std::sqrt(std::max(0.0, s2 * XtXi(j, j)));
        r.coef.push_back(b(j));
        r.se.push_back(se);
        double pv = 1.0;
        if (se > 0.0) pv = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(b(j) / se)));
        else if (b(j) != 0.0) pv = 0.0;
        r.pvalue.push_back(pv);
        r.significant.push_back(pv < level);
    }
    const double ybar = y.mean();
    const double tss = (y.array() - ybar).square().sum();
    r.r2 = tss > 0.0 ? 1.0 - res.squaredNorm() / tss : 1.0;
    return r;
}

/// Per-site regressions of each pollutant on all p grid outputs, after
/// z-scoring the response and every covariate with their all-site means
/// and standard deviations (transformed scale).
inline std::vector<SiteRegression> site_ols_diagnostics(const AlignedDataset& ds, double level = 0.05) {
    const int p = ds.p();
    // (site, t) -> observation per pollutant
    std::vector<std::vector<double>> yv(static_cast<std::size_t>(p));
    std::vector<std::vector<double>> xv(static_cast<std::size_t>(p));
    struct Row {
        std::size_t site;
        int t;
        int pollutant;
        double y;
        std::vector<double> x;
    };
    std::vector<Row> rows;
    for (const auto& o : ds.observations()) {
        const auto sidx = *ds.site_index(o.site_id);
        const auto cell = ds.cell_of_site(sidx);
        Row r{sidx, o.t, o.pollutant, ds.transformed(o), {}};
        for (int j = 1; j <= p; ++j) r.x.push_back(ds.grid_value(cell, o.t, j));
        rows.push_back(r);
    }
    auto zstats = [](const std::vector<double>& v) {
        double s = 0.0, ss = 0.0;
        for (double x : v) {
            s += x;
            ss += x * x;
        }
        const double n = static_cast<double>(v.size());
        const double m = s / n;
        const double sd = std::sqrt(std::max(1e-300, (ss - n * m * m) / std::max(1.0, n - 1.0)));
        return std::pair{m, sd};
    };
    std::vector<std::pair<double, double>> ys(static_cast<std::size_t>(p)), xs(static_cast<std::size_t>(p));
    for (int i = 1; i <= p; ++i) {
        std::vector<double> v;
        for (const auto& r : rows)
            if (r.pollutant == i) v.push_back(r.y);
        ys[static_cast<std::size_t>(i - 1)] = v.empty() ? std::pair{0.0, 1.0} : zstats(v);
    }
    for (int j = 0; j < p; ++j) {
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r.x[static_cast<std::size_t>(j)]);
        xs[static_cast<std::size_t>(j)] = v.empty() ? std::pair{0.0, 1.0} : zstats(v);
    }
    std::map<std::pair<std::size_t, int>, std::vector<const Row*>> groups;
    for (const auto& r : rows) groups[{r.site, r.pollutant}].push_back(&r);
    std::vector<SiteRegression> out;
    for (const auto& [key, members] : groups) {
        SiteRegression res;
        res.site_id = ds.sites()[key.first].id;
        res.pollutant = key.second;
        res.n = members.size();
        if (members.size() < kMinOlsDays) {
            res.note = "fewer than 10 days";
            out.push_back(res);
            continue;
        }
        const auto n = static_cast<Eigen::Index>(members.size());
        Mat X(n, p + 1);
        Vec y(n);
        for (Eigen::Index a = 0; a < n; ++a) {
            const Row& r = *members[static_cast<std::size_t>(a)];
            const auto& yst = ys[static_cast<std::size_t>(r.pollutant - 1)];
            y(a) = (r.y - yst.first) / yst.second;
            X(a, 0) = 1.0;
            for (int j = 0; j < p; ++j) X(a, j + 1) = (r.x[static_cast<std::size_t>(j)] - xs[static_cast<std::size_t>(j)].first) / xs[static_cast<std::size_t>(j)].second;
        }
        try {
            auto fit = ols_fit(X, y, level);
            fit.site_id = res.site_id;
            fit.pollutant = res.pollutant;
            out.push_back(fit);
        } catch (const RankDeficient& e) {
            res.note = e.what();
            out.push_back(res);
        }
    }
    return out;
}

/// Fraction of usable sites whose coefficient j is significant.
inline double significant_fraction(const std::vector<SiteRegression>& regs, int pollutant, std::size_t j) {
    double n = 0.0, s = 0.0;
    for (const auto& r : regs)
        if (r.ok && r.pollutant == pollutant) {
            n += 1.0;
            if (r.significant[j]) s += 1.0;
        }
    if (n == 0.0) throw EmptyMask("no usable site regressions");
    return s / n;
}

inline void write_ols_csv(const std::string& path, const std::vector<SiteRegression>& regs, int p, const std::string& config_hash) {
    auto out = open_output(path, config_hash);
    out << "site_id,pollutant,n,ok,r2";
    for (int j = 0; j <= p; ++j) out << ",coef_" << j << ",se_" << j << ",p_" << j << ",sig_" << j;
    out << '\n';
    for (const auto& r : regs) {
        out << r.site_id << ',' << r.pollutant << ',' << r.n << ',' << (r.ok ? 1 : 0) << ',' << (r.ok ? fmt_num(r.r2) : "NA");
        for (int j = 0; j <= p; ++j) {
            if (r.ok) {
                const auto u = static_cast<std::size_t>(j);
                out << ',' << fmt_num(r.coef[u]) << ',' << fmt_num(r.se[u]) << ',' << fmt_num(r.pvalue[u]) << ',' << (r.significant[u] ? 1 : 0);
            } else {
                out << ",NA,NA,NA,NA";
            }
        }
        out << '\n';
    }
}

}  // namespace downscaler
