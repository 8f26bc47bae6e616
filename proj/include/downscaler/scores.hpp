#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "distance.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "prediction.hpp"

namespace downscaler {

namespace detail {
inline void check_lengths(std::size_t a, std::size_t b, std::size_t mask) {
    if (a != b || (mask && mask != a)) throw DimensionMismatch("score inputs must have matching lengths");
}
}  // namespace detail

/// Mean squared error over entries with mask true (empty mask = all).
inline double pmse(const std::vector<double>& pred, const std::vector<double>& obs, const std::vector<bool>& mask = {}) {
    detail::check_lengths(pred.size(), obs.size(), mask.size());
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask.empty() || mask[i]) {
            s += (pred[i] - obs[i]) * (pred[i] - obs[i]);
            ++n;
        }
    if (n == 0) throw EmptyMask("no observed entries to score");
    return s / static_cast<double>(n);
}

/// Mean absolute error of medians over masked entries.
inline double pmae(const std::vector<double>& pred, const std::vector<double>& obs, const std::vector<bool>& mask = {}) {
    detail::check_lengths(pred.size(), obs.size(), mask.size());
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask.empty() || mask[i]) {
            s += std::abs(pred[i] - obs[i]);
            ++n;
        }
    if (n == 0) throw EmptyMask("no observed entries to score");
    return s / static_cast<double>(n);
}

/// Empirical CRPS, mean|X - y| - 0.5 mean|X - X'| over all ordered pairs;
/// the pair sum is evaluated through the sorted sample.
inline double crps_empirical(std::vector<double> draws, double y) {
    const std::size_t n = draws.size();
    if (n < 2) throw InsufficientDraws("CRPS needs at least 2 draws");
    double a = 0.0;
    for (double x : draws) a += std::abs(x - y);
    a /= static_cast<double>(n);
    std::sort(draws.begin(), draws.end());
    double pair = 0.0;  // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i), i from 0
    for (std::size_t i = 0; i < n; ++i) pair += (2.0 * static_cast<double>(i) - static_cast<double>(n) + 1.0) * draws[i];
    pair *= 2.0 / (static_cast<double>(n) * static_cast<double>(n));
    return a - 0.5 * pair;
}

/// Interval score of the central (1 - alpha) interval [l, u].
inline double interval_score(double l, double u, double alpha, double y) {
    if (!(l <= u)) throw InvalidInterval("interval lower bound exceeds upper bound");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInterval("alpha must lie in (0, 1)");
    double s = u - l;
    if (y < l) s += 2.0 / alpha * (l - y);
    if (y > u) s += 2.0 / alpha * (y - u);
    return s;
}

struct CoverageWidth {
    double coverage = 0.0;
    double width = 0.0;
};

inline CoverageWidth coverage_and_width(const std::vector<double>& lo, const std::vector<double>& hi, const std::vector<double>& obs,
                                        const std::vector<bool>& mask = {}) {
    detail::check_lengths(lo.size(), obs.size(), mask.size());
    detail::check_lengths(hi.size(), obs.size(), mask.size());
    double in = 0.0, w = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < obs.size(); ++i)
        if (mask.empty() || mask[i]) {
            if (lo[i] <= obs[i] && obs[i] <= hi[i]) in += 1.0;
            w += hi[i] - lo[i];
            ++n;
        }
    if (n == 0) throw EmptyMask("no observed entries to score");
    return {in / static_cast<double>(n), w / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// Score reports
// ---------------------------------------------------------------------------

enum class Stratum { All, Near, Far };

inline std::string to_string(Stratum s) {
    switch (s) {
        case Stratum::All: return "All";
        case Stratum::Near: return "Near";
        case Stratum::Far: return "Far";
    }
    return "All";
}

struct ScoreRow {
    int pollutant = 1;
    std::string method;
    Stratum stratum = Stratum::All;
    std::size_t n = 0;
    double pmse = 0.0;
    double pmae = 0.0;
    double coverage95 = 0.0;
    double width95 = 0.0;
    double crps = 0.0;
    double interval_score = 0.0;
};

struct ScoreReport {
    std::vector<ScoreRow> rows;
    double near_km = 40.0;

    [[nodiscard]] const ScoreRow& get(int pollutant, const std::string& method, Stratum stratum = Stratum::All) const {
        for (const auto& r : rows)
            if (r.pollutant == pollutant && r.method == method && r.stratum == stratum) return r;
        throw DomainError("no score row for pollutant " + std::to_string(pollutant) + ", method " + method);
    }
    void append(const ScoreReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
};

/// Distance from each validation site to its closest training site.
inline std::map<std::string, double> nearest_training_distance(const AlignedDataset& train, const AlignedDataset& validation,
                                                               DistanceMetric metric = DistanceMetric::GreatCircle) {
    std::map<std::string, double> out;
    for (const auto& v : validation.sites()) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : train.sites()) best = std::min(best, distance_km(v.location(), s.location(), metric));
        out[v.id] = best;
    }
    return out;
}

/// Scores predictive draws against the raw-scale validation observations.
/// Observations without a matching predictive series are ignored; strata
/// follow `distance` (validation site -> km to the closest training site).
inline ScoreReport score_predictions(const PredictiveSamples& pred, const std::vector<Observation>& obs, const std::string& method,
                                     const std::map<std::string, double>& distance = {}, double near_km = 40.0, double alpha = 0.05) {
    std::map<std::tuple<std::string, int, int>, const PredictiveSeries*> index;
    for (const auto& s : pred.series) index[{s.id, s.t, s.pollutant}] = &s;
    struct Acc {
        std::vector<double> mean, median, lo, hi, y, crps, is;
    };
    std::map<std::pair<int, Stratum>, Acc> acc;
    for (const auto& o : obs) {
        auto it = index.find({o.site_id, o.t, o.pollutant});
        if (it == index.end()) continue;
        const Summary sm = it->second->summary();
        std::vector<Stratum> strata{Stratum::All};
        if (auto d = distance.find(o.site_id); d != distance.end()) strata.push_back(d->second <= near_km ? Stratum::Near : Stratum::Far);
        const double c = crps_empirical(it->second->draws, o.value_raw);
        std::vector<double> sorted = it->second->draws;
        std::sort(sorted.begin(), sorted.end());
        const double l = sorted_quantile(sorted, alpha / 2.0), u = sorted_quantile(sorted, 1.0 - alpha / 2.0);
        const double is = interval_score(l, u, alpha, o.value_raw);
        for (auto st : strata) {
            auto& a = acc[{o.pollutant, st}];
            a.mean.push_back(sm.mean);
            a.median.push_back(sm.median);
            a.lo.push_back(l);
            a.hi.push_back(u);
            a.y.push_back(o.value_raw);
            a.crps.push_back(c);
            a.is.push_back(is);
        }
    }
    ScoreReport rep;
    rep.near_km = near_km;
    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    for (const auto& [key, a] : acc) {
        ScoreRow r;
        r.pollutant = key.first;
        r.method = method;
        r.stratum = key.second;
        r.n = a.y.size();
        r.pmse = pmse(a.mean, a.y);
        r.pmae = pmae(a.median, a.y);
        const auto cw = coverage_and_width(a.lo, a.hi, a.y);
        r.coverage95 = cw.coverage;
        r.width95 = cw.width;
        r.crps = mean_of(a.crps);
        r.interval_score = mean_of(a.is);
        rep.rows.push_back(r);
    }
    if (rep.rows.empty()) throw EmptyMask("no validation observation matches a prediction");
    return rep;
}

inline void write_score_csv(const std::string& path, const ScoreReport& rep, const std::string& config_hash) {
    auto out = open_output(path, config_hash);
    out << "pollutant,method,stratum,n,pmse,pmae,coverage95,width95,crps,interval_score\n";
    for (const auto& r : rep.rows)
        out << r.pollutant << ',' << r.method << ',' << to_string(r.stratum) << ',' << r.n << ',' << fmt_num(r.pmse) << ',' << fmt_num(r.pmae) << ','
            << fmt_num(r.coverage95) << ',' << fmt_num(r.width95) << ',' << fmt_num(r.crps) << ',' << fmt_num(r.interval_score) << '\n';
}

/// Aligned plain-text table, one block per stratum.
inline std::string score_table(const ScoreReport& rep) {
    std::ostringstream os;
    char buf[256];
    for (auto st : {Stratum::All, Stratum::Near, Stratum::Far}) {
        bool header = false;
        for (const auto& r : rep.rows) {
            if (r.stratum != st) continue;
            if (!header) {
                os << "[" << to_string(st);
                if (st == Stratum::Near) os << " <= " << fmt_num(rep.near_km) << " km";
                if (st == Stratum::Far) os << " > " << fmt_num(rep.near_km) << " km";
                os << "]\n";
                std::snprintf(buf, sizeof buf, "%-9s %-16s %6s %10s %10s %9s %10s %10s %10s\n", "pollutant", "method", "n", "PMSE", "PMAE", "cover95",
                              "width95", "CRPS", "IS");
                os << buf;
                header = true;
            }
            std::snprintf(buf, sizeof buf, "%-9d %-16s %6zu %10.4f %10.4f %8.1f%% %10.4f %10.4f %10.4f\n", r.pollutant, r.method.c_str(), r.n, r.pmse, r.pmae,
                          100.0 * r.coverage95, r.width95, r.crps, r.interval_score);
            os << buf;
        }
        if (header) os << '\n';
    }
    return os.str();
}

}  // namespace downscaler
