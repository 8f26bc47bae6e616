#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "covariance.hpp"
#include "io.hpp"
#include "model_spec.hpp"

namespace downscaler {

/// One latent "slot": a set of locations sharing a joint GP draw for every
/// latent process. Under independent replicates there is one slot per day,
/// under static local coefficients a single slot, under dynamic local
/// coefficients one innovation slot per day.
struct LatentSlot {
    int day = -1;  ///< day index, -1 for the static slot
    std::vector<std::string> site_ids;
    std::vector<LonLat> locations;
    std::vector<bool> extra;  ///< true for non-reporting sites sampled in-chain
};

struct ChainState {
    Mat beta;                 ///< overall coefficients, p(p+1) x overall slots
    Vec beta0;                ///< pre-sample state under dynamic overall coefficients
    Mat A;                    ///< coregionalization matrix
    Vec tau2;                 ///< nugget per pollutant
    Vec xi2;                  ///< innovation variances under dynamic overall coefficients
    std::vector<Mat> w;       ///< per slot: sites x active processes

    /// Local coefficients at the sites of a slot (sites x p(p+1)); equals A w.
    [[nodiscard]] Mat beta_local(std::size_t slot, const std::vector<int>& active) const {
        Mat out = Mat::Zero(w[slot].rows(), A.rows());
        for (std::size_t kk = 0; kk < active.size(); ++kk)
            out.noalias() += w[slot].col(static_cast<Eigen::Index>(kk)) * A.col(active[kk]).transpose();
        return out;
    }
};

struct ChainSamples {
    ModelSpec spec;
    std::vector<int> days;
    std::vector<int> active;  ///< latent processes carried by the chain
    std::vector<LatentSlot> slots;
    std::vector<ChainState> draws;
    std::vector<int> iterations;
    std::uint64_t seed = 0;
    int chain = 0;
    int n_iter = 0;
    int burn_in = 0;
    int thin = 1;
    std::map<std::string, double> acceptance;

    [[nodiscard]] std::size_t size() const { return draws.size(); }
    [[nodiscard]] int overall_slots() const { return draws.empty() ? 0 : static_cast<int>(draws.front().beta.cols()); }

    /// Index of the overall-coefficient column used on a given day.
    [[nodiscard]] int overall_slot_of_day(int t) const {
        if (spec.temporal.overall == OverallStructure::Static) return 0;
        auto it = std::lower_bound(days.begin(), days.end(), t);
        if (it == days.end() || *it != t) throw DomainError("day " + std::to_string(t) + " was not part of the fit");
        return static_cast<int>(it - days.begin());
    }

    /// Names of the scalar parameters, in column order.
    [[nodiscard]] std::vector<std::string> scalar_names() const {
        std::vector<std::string> names;
        const int p = spec.p;
        const auto free = spec.overall_free();
        const bool per_day = spec.temporal.overall != OverallStructure::Static;
        for (int s = 0; s < overall_slots(); ++s)
            for (int r = 0; r < n_processes(p); ++r) {
                if (!free[static_cast<std::size_t>(r)]) continue;
                std::string n = "beta_" + std::to_string(r / (p + 1) + 1) + "_" + std::to_string(r % (p + 1));
                if (per_day) n += "_t" + std::to_string(days[static_cast<std::size_t>(s)]);
                names.push_back(n);
            }
        if (spec.temporal.overall == OverallStructure::Dynamic) {
            for (int r = 0; r < n_processes(p); ++r)
                if (free[static_cast<std::size_t>(r)]) names.push_back("beta0_" + std::to_string(r / (p + 1) + 1) + "_" + std::to_string(r % (p + 1)));
        }
        const Mask mask = spec.mask();
        for (int r = 0; r < mask.rows(); ++r)
            for (int k = 0; k <= r; ++k)
                if (mask(r, k)) names.push_back("A_" + std::to_string(r + 1) + "_" + std::to_string(k + 1));
        for (int i = 0; i < p; ++i) names.push_back("tau2_" + std::to_string(i + 1));
        if (spec.temporal.overall == OverallStructure::Dynamic) {
            for (int r = 0; r < n_processes(p); ++r)
                if (free[static_cast<std::size_t>(r)]) names.push_back("xi2_" + std::to_string(r / (p + 1) + 1) + "_" + std::to_string(r % (p + 1)));
        }
        return names;
    }

    [[nodiscard]] std::vector<double> scalar_row(std::size_t d) const {
        const ChainState& s = draws[d];
        std::vector<double> row;
        const int p = spec.p;
        const auto free = spec.overall_free();
        for (int c = 0; c < s.beta.cols(); ++c)
            for (int r = 0; r < n_processes(p); ++r)
                if (free[static_cast<std::size_t>(r)]) row.push_back(s.beta(r, c));
        if (spec.temporal.overall == OverallStructure::Dynamic) {
            for (int r = 0; r < n_processes(p); ++r)
                if (free[static_cast<std::size_t>(r)]) row.push_back(s.beta0(r));
        }
        const Mask mask = spec.mask();
        for (int r = 0; r < mask.rows(); ++r)
            for (int k = 0; k <= r; ++k)
                if (mask(r, k)) row.push_back(s.A(r, k));
        for (int i = 0; i < p; ++i) row.push_back(s.tau2(i));
        if (spec.temporal.overall == OverallStructure::Dynamic) {
            for (int r = 0; r < n_processes(p); ++r)
                if (free[static_cast<std::size_t>(r)]) row.push_back(s.xi2(r));
        }
        return row;
    }

    /// Draws of one named scalar parameter.
    [[nodiscard]] std::vector<double> scalar(const std::string& name) const {
        const auto names = scalar_names();
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw DomainError("no parameter named '" + name + "'");
        const auto col = static_cast<std::size_t>(it - names.begin());
        std::vector<double> out;
        out.reserve(draws.size());
        for (std::size_t d = 0; d < draws.size(); ++d) out.push_back(scalar_row(d)[col]);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// One row per draw, one column per scalar parameter.
inline void write_chain_csv(const std::string& path, const ChainSamples& s, const std::string& config_hash) {
    auto out = open_output(path, config_hash);
    out << "chain,iter";
    for (const auto& n : s.scalar_names()) out << ',' << n;
    out << '\n';
    for (std::size_t d = 0; d < s.size(); ++d) {
        out << s.chain << ',' << s.iterations[d];
        for (double v : s.scalar_row(d)) out << ',' << fmt_num(v);
        out << '\n';
    }
}

/// Latent fields: one row per (draw, slot, site) with the active w values
/// and the local coefficients they induce.
inline void write_latent_csv(const std::string& path, const ChainSamples& s, const std::string& config_hash) {
    auto out = open_output(path, config_hash);
    const int p = s.spec.p;
    out << "draw,slot,t,site_id,lon,lat,extra";
    for (int k : s.active) out << ",w_" << (k + 1);
    for (int r = 0; r < n_processes(p); ++r) out << ",b_" << (r / (p + 1) + 1) << '_' << (r % (p + 1));
    out << '\n';
    for (std::size_t d = 0; d < s.size(); ++d) {
        for (std::size_t u = 0; u < s.slots.size(); ++u) {
            const auto& slot = s.slots[u];
            const Mat bl = s.draws[d].beta_local(u, s.active);
            const int t = slot.day >= 0 ? s.days[static_cast<std::size_t>(slot.day)] : -1;
            for (std::size_t v = 0; v < slot.site_ids.size(); ++v) {
                out << d << ',' << u << ',' << t << ',' << slot.site_ids[v] << ',' << fmt_num(slot.locations[v].lon) << ','
                    << fmt_num(slot.locations[v].lat) << ',' << (slot.extra[v] ? 1 : 0);
                for (Eigen::Index kk = 0; kk < s.draws[d].w[u].cols(); ++kk) out << ',' << fmt_num(s.draws[d].w[u](static_cast<Eigen::Index>(v), kk));
                for (Eigen::Index r = 0; r < bl.cols(); ++r) out << ',' << fmt_num(bl(static_cast<Eigen::Index>(v), r));
                out << '\n';
            }
        }
    }
}

inline void write_chain_metadata(const std::string& path, const ChainSamples& s, const std::string& config_hash) {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["seed"] = s.seed;
    j["chain"] = s.chain;
    j["n_iter"] = s.n_iter;
    j["burn_in"] = s.burn_in;
    j["thin"] = s.thin;
    j["draws"] = s.size();
    j["days"] = s.days;
    j["active"] = s.active;
    j["acceptance"] = s.acceptance;
    j["spec"] = spec_to_json(s.spec);
    auto out = open_output(path, "");
    out << j.dump(2) << '\n';
}

/// Writes chain_<c>.csv, latent_<c>.csv and chain_<c>.json under `dir`.
inline void write_chain(const std::string& dir, const ChainSamples& s, const std::string& config_hash) {
    const std::string stem = dir + "/chain_" + std::to_string(s.chain);
    write_chain_csv(stem + ".csv", s, config_hash);
    write_latent_csv(dir + "/latent_" + std::to_string(s.chain) + ".csv", s, config_hash);
    write_chain_metadata(stem + ".json", s, config_hash);
}

/// Reads back what write_chain produced.
inline ChainSamples read_chain(const std::string& dir, int chain) {
    const std::string stem = dir + "/chain_" + std::to_string(chain);
    const nlohmann::json meta = read_json_file(stem + ".json");
    ChainSamples s;
    try {
        s.spec = spec_from_json(meta.at("spec"));
        s.seed = meta.at("seed").get<std::uint64_t>();
        s.chain = meta.at("chain").get<int>();
        s.n_iter = meta.at("n_iter").get<int>();
        s.burn_in = meta.at("burn_in").get<int>();
        s.thin = meta.at("thin").get<int>();
        s.days = meta.at("days").get<std::vector<int>>();
        s.active = meta.at("active").get<std::vector<int>>();
        s.acceptance = meta.at("acceptance").get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed chain metadata " + stem + ".json: " + e.what());
    }
    const int p = s.spec.p;
    const int nproc = n_processes(p);
    const auto free = s.spec.overall_free();
    const Mask mask = s.spec.mask();
    const bool dynamic = s.spec.temporal.overall == OverallStructure::Dynamic;
    const int n_overall = s.spec.temporal.overall == OverallStructure::Static ? 1 : static_cast<int>(s.days.size());

    // scalar columns
    {
        std::ifstream probe(stem + ".csv");
        if (!probe) throw MissingFile("input file not found: " + stem + ".csv");
        ChainSamples shape = s;
        shape.draws.resize(1);
        shape.draws[0].beta = Mat::Zero(nproc, n_overall);
        std::vector<std::string> header{"chain", "iter"};
        for (auto& n : shape.scalar_names()) header.push_back(n);
        CsvReader reader(stem + ".csv", header);
        std::vector<std::string> f;
        while (reader.next(f)) {
            ChainState st;
            st.beta = Mat::Zero(nproc, n_overall);
            st.A = Mat::Zero(nproc, nproc);
            st.tau2 = Vec::Zero(p);
            st.beta0 = Vec::Zero(dynamic ? nproc : 0);
            st.xi2 = Vec::Zero(dynamic ? nproc : 0);
            std::size_t c = 2;
            for (int col = 0; col < n_overall; ++col)
                for (int r = 0; r < nproc; ++r)
                    if (free[static_cast<std::size_t>(r)]) st.beta(r, col) = reader.to_double(f[c++]);
            if (dynamic)
                for (int r = 0; r < nproc; ++r)
                    if (free[static_cast<std::size_t>(r)]) st.beta0(r) = reader.to_double(f[c++]);
            for (int r = 0; r < nproc; ++r)
                for (int k = 0; k <= r; ++k)
                    if (mask(r, k)) st.A(r, k) = reader.to_double(f[c++]);
            for (int i = 0; i < p; ++i) st.tau2(i) = reader.to_double(f[c++]);
            if (dynamic)
                for (int r = 0; r < nproc; ++r)
                    if (free[static_cast<std::size_t>(r)]) st.xi2(r) = reader.to_double(f[c++]);
            s.iterations.push_back(reader.to_int(f[1]));
            s.draws.push_back(std::move(st));
        }
    }

    // latent fields
    std::vector<std::string> header{"draw", "slot", "t", "site_id", "lon", "lat", "extra"};
    for (int k : s.active) header.push_back("w_" + std::to_string(k + 1));
    for (int r = 0; r < nproc; ++r) header.push_back("b_" + std::to_string(r / (p + 1) + 1) + "_" + std::to_string(r % (p + 1)));
    CsvReader reader(dir + "/latent_" + std::to_string(chain) + ".csv", header);
    std::vector<std::string> f;
    std::vector<std::vector<std::vector<double>>> rows(s.draws.size());  // draw -> slot -> flattened w
    while (reader.next(f)) {
        const auto d = static_cast<std::size_t>(reader.to_int(f[0]));
        const auto u = static_cast<std::size_t>(reader.to_int(f[1]));
        if (d >= s.draws.size()) throw ParseError(reader.path(), reader.line(), "draw index beyond the chain file");
        if (d == 0) {
            if (s.slots.size() <= u) s.slots.resize(u + 1);
            auto& slot = s.slots[u];
            const int t = reader.to_int(f[2]);
            if (t >= 0) {
                auto it = std::lower_bound(s.days.begin(), s.days.end(), t);
                slot.day = static_cast<int>(it - s.days.begin());
            }
            slot.site_ids.push_back(f[3]);
            slot.locations.push_back({reader.to_double(f[4]), reader.to_double(f[5])});
            slot.extra.push_back(f[6] == "1");
        }
        if (rows[d].size() <= u) rows[d].resize(u + 1);
        for (std::size_t kk = 0; kk < s.active.size(); ++kk) rows[d][u].push_back(reader.to_double(f[7 + kk]));
    }
    const auto K = static_cast<Eigen::Index>(s.active.size());
    for (std::size_t d = 0; d < s.draws.size(); ++d) {
        s.draws[d].w.resize(s.slots.size());
        for (std::size_t u = 0; u < s.slots.size(); ++u) {
            const auto n = static_cast<Eigen::Index>(s.slots[u].site_ids.size());
            Mat w(n, K);
            const auto& flat = u < rows[d].size() ? rows[d][u] : std::vector<double>{};
            if (static_cast<Eigen::Index>(flat.size()) != n * K) throw ParseError(reader.path(), reader.line(), "incomplete latent field for a draw");
            for (Eigen::Index v = 0; v < n; ++v)
                for (Eigen::Index kk = 0; kk < K; ++kk) w(v, kk) = flat[static_cast<std::size_t>(v * K + kk)];
            s.draws[d].w[u] = std::move(w);
        }
    }
    return s;
}

}  // namespace downscaler
