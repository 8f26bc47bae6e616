#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "chain.hpp"
#include "errors.hpp"
#include "io.hpp"

namespace downscaler {

/// Effective sample size of one chain using Geyer's initial positive
/// sequence on the autocovariance (computed directly, O(n * lag)).
inline double effective_sample_size(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 4) throw InsufficientDraws("ESS needs at least 4 draws");
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(n);
    auto acov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
        return s / static_cast<double>(n);
    };
    const double g0 = acov(0);
    if (!(g0 > 0.0)) throw InsufficientDraws("ESS undefined for a constant chain");
    double tau = -1.0;
    for (std::size_t k = 0; k + 1 < n; k += 2) {
        const double pair = (acov(k) + acov(k + 1)) / g0;
        if (pair <= 0.0) break;
        tau += 2.0 * pair;
    }
    tau = std::max(tau, 1.0 / std::log10(static_cast<double>(n)));
    return static_cast<double>(n) / tau;
}

/// Split-R-hat over chains of equal length (each split in half).
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
    if (chains.size() < 2) throw InsufficientDraws("R-hat needs at least 2 chains");
    std::vector<std::vector<double>> halves;
    for (const auto& c : chains) {
        if (c.size() < 4) throw InsufficientDraws("R-hat needs at least 4 draws per chain");
        const std::size_t h = c.size() / 2;
        halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
        halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
    }
    const double n = static_cast<double>(halves.front().size());
    const double m = static_cast<double>(halves.size());
    std::vector<double> means, vars;
    for (const auto& c : halves) {
        double mu = 0.0;
        for (double v : c) mu += v;
        mu /= n;
        double s = 0.0;
        for (double v : c) s += (v - mu) * (v - mu);
        means.push_back(mu);
        vars.push_back(s / (n - 1.0));
    }
    double grand = 0.0;
    for (double v : means) grand += v;
    grand /= m;
    double B = 0.0;
    for (double v : means) B += (v - grand) * (v - grand);
    B *= n / (m - 1.0);
    double W = 0.0;
    for (double v : vars) W += v;
    W /= m;
    if (!(W > 0.0)) throw InsufficientDraws("R-hat undefined for constant chains");
    const double var_plus = (n - 1.0) / n * W + B / n;
    return std::sqrt(var_plus / W);
}

struct ParameterDiagnostics {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double ess = 0.0;
    double rhat = 1.0;
    bool flagged = false;  ///< constant or degenerate draws
};

struct ChainDiagnostics {
    std::vector<ParameterDiagnostics> parameters;
    std::map<std::string, double> acceptance;  ///< averaged over chains

    [[nodiscard]] const ParameterDiagnostics& get(const std::string& name) const {
        for (const auto& p : parameters)
            if (p.name == name) return p;
        throw DomainError("no diagnostics for '" + name + "'");
    }
};

inline ChainDiagnostics chain_diagnostics(const std::vector<ChainSamples>& chains) {
    if (chains.empty()) throw InsufficientDraws("no chains");
    ChainDiagnostics out;
    const auto names = chains.front().scalar_names();
    std::vector<std::vector<std::vector<double>>> cols(names.size(), std::vector<std::vector<double>>(chains.size()));
    for (std::size_t c = 0; c < chains.size(); ++c) {
        if (chains[c].draws.size() < 4) throw InsufficientDraws("each chain needs at least 4 stored draws");
        for (std::size_t d = 0; d < chains[c].draws.size(); ++d) {
            const auto row = chains[c].scalar_row(d);
            for (std::size_t k = 0; k < names.size(); ++k) cols[k][c].push_back(row[k]);
        }
        for (const auto& [k, v] : chains[c].acceptance) out.acceptance[k] += v / static_cast<double>(chains.size());
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
        ParameterDiagnostics pd;
        pd.name = names[k];
        double s = 0.0, ss = 0.0, n = 0.0;
        for (const auto& c : cols[k])
            for (double v : c) {
                s += v;
                ss += v * v;
                n += 1.0;
            }
        pd.mean = s / n;
        pd.sd = std::sqrt(std::max(0.0, ss / n - pd.mean * pd.mean));
        try {
            pd.ess = 0.0;
            for (const auto& c : cols[k]) pd.ess += effective_sample_size(c);
            pd.rhat = cols[k].size() >= 2 ? split_rhat(cols[k]) : 1.0;
        } catch (const InsufficientDraws&) {
            pd.flagged = true;
            pd.ess = 0.0;
            pd.rhat = std::nan("");
        }
        out.parameters.push_back(pd);
    }
    return out;
}

inline void write_diagnostics_csv(const std::string& path, const ChainDiagnostics& d, const std::string& config_hash) {
    auto out = open_output(path, config_hash);
    out << "parameter,mean,sd,ess,rhat,flagged\n";
    for (const auto& p : d.parameters)
        out << p.name << ',' << fmt_num(p.mean) << ',' << fmt_num(p.sd) << ',' << fmt_num(p.ess) << ',' << (std::isnan(p.rhat) ? "NA" : fmt_num(p.rhat)) << ','
            << (p.flagged ? 1 : 0) << '\n';
    for (const auto& [k, v] : d.acceptance) out << "acceptance_" << k << ',' << fmt_num(v) << ",,,,0\n";
}

}  // namespace downscaler
