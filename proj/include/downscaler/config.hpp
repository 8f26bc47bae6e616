#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "model_spec.hpp"
#include "sampler.hpp"

namespace downscaler {

/// What `simulate` draws. "paper" is the testbed network (scaled by
/// site_scale); "recovery" is the all-daily SharedIntercept truth.
struct SimulateSettings {
    std::string testbed = "paper";
    double site_scale = 1.0;
    int n_days = 122;
    double phi = 0.004;
    double cell_km = 36.0;
    bool keep_daily_sites = true;
    int n_sites = 60;
};

struct PredictSettings {
    std::string target = "grid";  ///< grid | validation | region
    std::vector<int> days;
    std::vector<std::string> cells;
    std::string label = "region";
    std::vector<std::string> contrast_cells;  ///< region only: second region for a difference
};

struct BaselineSettings {
    std::vector<std::string> methods{"kriging", "cokriging"};
    std::vector<double> phi;  ///< empty: per-pollutant median daily REML decay
    std::optional<double> A11, A41, A44, phi1;  ///< cokriging cross terms; unset: posterior means of a saved fit
};

struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 1;
    std::string out = "out";
    RunLength run;
    int chains = 3;
    double near_km = 40.0;
    // input paths; empty means the file `simulate` writes under `out`
    std::string monitoring;
    std::string grid_outputs;
    std::string grid;
    std::string validation;
    ModelSpec spec = default_spec(2, VariantPattern::SharedIntercept);
    SimulateSettings simulate;
    PredictSettings predict;
    std::vector<std::string> evaluate_methods{"downscaler"};
    std::vector<double> multipliers{0.01, 0.1, 1.0, 10.0, 100.0};
    std::vector<std::string> sensitivity_methods{"downscaler", "kriging"};
    BaselineSettings baseline;

    [[nodiscard]] std::string path_or(const std::string& configured, const std::string& name) const {
        return configured.empty() ? out + "/" + name : configured;
    }
    [[nodiscard]] std::string monitoring_path() const { return path_or(monitoring, "monitoring.csv"); }
    [[nodiscard]] std::string grid_outputs_path() const { return path_or(grid_outputs, "grid_outputs.csv"); }
    [[nodiscard]] std::string grid_path() const { return path_or(grid, "grid.json"); }
    [[nodiscard]] std::string validation_path() const { return path_or(validation, "validation_sites.csv"); }
    [[nodiscard]] std::string chain_dir() const { return out + "/chains"; }
};

/// Top-level scalar keys. Each has a `--flag` (underscores become dashes)
/// and a DOWNSCALER_<KEY> environment override.
inline const std::vector<std::string> kScalarKeys{"seed",  "threads",  "out",        "n_iter",       "burn_in", "thin",
                                                  "chains", "near_km", "monitoring", "grid_outputs", "grid",    "validation"};
inline const std::vector<std::string> kSectionKeys{"model", "simulate", "predict", "evaluate", "sensitivity", "baseline"};

namespace detail {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown key '" + k + "' in " + where);
}

}  // namespace detail

inline std::vector<std::string> validate_config(const RunConfig& c) {
    std::vector<std::string> e;
    if (c.threads < 1) e.push_back("threads must be >= 1");
    if (c.chains < 1) e.push_back("chains must be >= 1");
    if (c.run.n_iter < 1 || c.run.burn_in < 0 || c.run.burn_in >= c.run.n_iter || c.run.thin < 1) {
        e.push_back("run length needs n_iter >= 1, 0 <= burn_in < n_iter, thin >= 1");
    }
    if (!(c.near_km > 0.0)) e.push_back("near_km must be positive");
    if (c.out.empty()) e.push_back("out must not be empty");
    for (auto& m : validate_spec(c.spec)) e.push_back(m);
    const auto& s = c.simulate;
    if (s.testbed != "paper" && s.testbed != "recovery") e.push_back("simulate.testbed must be 'paper' or 'recovery'");
    if (!(s.site_scale > 0.0) || s.n_days < 1 || !(s.phi > 0.0) || !(s.cell_km > 0.0) || s.n_sites < 1) {
        e.push_back("simulate needs positive site_scale, n_days, phi, cell_km and n_sites");
    }
    const auto& t = c.predict.target;
    if (t != "grid" && t != "validation" && t != "region") e.push_back("predict.target must be grid, validation or region");
    if (t == "region" && c.predict.cells.empty()) e.push_back("predict.target 'region' needs predict.cells");
    for (const auto& m : c.evaluate_methods)
        if (m != "downscaler" && m != "kriging" && m != "cokriging") e.push_back("unknown evaluate method '" + m + "'");
    for (const auto& m : c.sensitivity_methods)
        if (m != "downscaler" && m != "kriging") e.push_back("unknown sensitivity method '" + m + "'");
    for (double m : c.multipliers)
        if (!(m > 0.0)) e.push_back("sensitivity multipliers must be positive");
    for (const auto& m : c.baseline.methods)
        if (m != "kriging" && m != "cokriging") e.push_back("unknown baseline method '" + m + "'");
    return e;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    std::vector<std::string> known = kScalarKeys;
    known.insert(known.end(), kSectionKeys.begin(), kSectionKeys.end());
    detail::reject_unknown(j, known, "config");
    RunConfig c;
    try {
        using detail::read_key;
        read_key(j, "seed", c.seed);
        read_key(j, "threads", c.threads);
        read_key(j, "out", c.out);
        read_key(j, "n_iter", c.run.n_iter);
        read_key(j, "burn_in", c.run.burn_in);
        read_key(j, "thin", c.run.thin);
        read_key(j, "chains", c.chains);
        read_key(j, "near_km", c.near_km);
        read_key(j, "monitoring", c.monitoring);
        read_key(j, "grid_outputs", c.grid_outputs);
        read_key(j, "grid", c.grid);
        read_key(j, "validation", c.validation);
        if (j.contains("model")) c.spec = spec_from_json(j.at("model"));
        if (j.contains("simulate")) {
            const auto& s = j.at("simulate");
            detail::reject_unknown(s, {"testbed", "site_scale", "n_days", "phi", "cell_km", "keep_daily_sites", "n_sites"}, "simulate");
            read_key(s, "testbed", c.simulate.testbed);
            read_key(s, "site_scale", c.simulate.site_scale);
            read_key(s, "n_days", c.simulate.n_days);
            read_key(s, "phi", c.simulate.phi);
            read_key(s, "cell_km", c.simulate.cell_km);
            read_key(s, "keep_daily_sites", c.simulate.keep_daily_sites);
            read_key(s, "n_sites", c.simulate.n_sites);
        }
        if (j.contains("predict")) {
            const auto& s = j.at("predict");
            detail::reject_unknown(s, {"target", "days", "cells", "label", "contrast_cells"}, "predict");
            read_key(s, "target", c.predict.target);
            read_key(s, "days", c.predict.days);
            read_key(s, "cells", c.predict.cells);
            read_key(s, "label", c.predict.label);
            read_key(s, "contrast_cells", c.predict.contrast_cells);
        }
        if (j.contains("evaluate")) {
            detail::reject_unknown(j.at("evaluate"), {"methods"}, "evaluate");
            read_key(j.at("evaluate"), "methods", c.evaluate_methods);
        }
        if (j.contains("sensitivity")) {
            const auto& s = j.at("sensitivity");
            detail::reject_unknown(s, {"multipliers", "methods"}, "sensitivity");
            read_key(s, "multipliers", c.multipliers);
            read_key(s, "methods", c.sensitivity_methods);
        }
        if (j.contains("baseline")) {
            const auto& s = j.at("baseline");
            detail::reject_unknown(s, {"methods", "phi", "A11", "A41", "A44", "phi1"}, "baseline");
            read_key(s, "methods", c.baseline.methods);
            read_key(s, "phi", c.baseline.phi);
            for (auto [key, slot] : {std::pair{"A11", &c.baseline.A11}, std::pair{"A41", &c.baseline.A41}, std::pair{"A44", &c.baseline.A44},
                                     std::pair{"phi1", &c.baseline.phi1}})
                if (s.contains(key)) *slot = s.at(key).get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    if (const auto errs = validate_config(c); !errs.empty()) throw ConfigError(errs.front());
    return c;
}

/// Canonical form of everything that affects results. `threads` and `out`
/// are left out: they change neither numbers nor file contents.
inline nlohmann::json canonical_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["n_iter"] = c.run.n_iter;
    j["burn_in"] = c.run.burn_in;
    j["thin"] = c.run.thin;
    j["chains"] = c.chains;
    j["near_km"] = c.near_km;
    j["monitoring"] = c.monitoring;
    j["grid_outputs"] = c.grid_outputs;
    j["grid"] = c.grid;
    j["validation"] = c.validation;
    j["model"] = spec_to_json(c.spec);
    const auto& s = c.simulate;
    j["simulate"] = {{"testbed", s.testbed}, {"site_scale", s.site_scale}, {"n_days", s.n_days}, {"phi", s.phi},
                     {"cell_km", s.cell_km}, {"keep_daily_sites", s.keep_daily_sites}, {"n_sites", s.n_sites}};
    const auto& p = c.predict;
    j["predict"] = {{"target", p.target}, {"days", p.days}, {"cells", p.cells}, {"label", p.label}, {"contrast_cells", p.contrast_cells}};
    j["evaluate"] = {{"methods", c.evaluate_methods}};
    j["sensitivity"] = {{"multipliers", c.multipliers}, {"methods", c.sensitivity_methods}};
    nlohmann::json b = {{"methods", c.baseline.methods}, {"phi", c.baseline.phi}};
    if (c.baseline.A11) b["A11"] = *c.baseline.A11;
    if (c.baseline.A41) b["A41"] = *c.baseline.A41;
    if (c.baseline.A44) b["A44"] = *c.baseline.A44;
    if (c.baseline.phi1) b["phi1"] = *c.baseline.phi1;
    j["baseline"] = b;
    return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string config_hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(c).dump())));
    return buf;
}

/// Sets a top-level scalar key from its textual form (flag or environment).
inline void set_scalar(nlohmann::json& j, const std::string& key, const std::string& text) {
    static const std::vector<std::string> string_keys{"out", "monitoring", "grid_outputs", "grid", "validation"};
    if (std::find(string_keys.begin(), string_keys.end(), key) != string_keys.end()) {
        j[key] = text;
        return;
    }
    auto v = nlohmann::json::parse(text, nullptr, false);
    if (v.is_discarded() || !v.is_number()) throw ConfigError("value for '" + key + "' is not a number: '" + text + "'");
    if ((key != "near_km") && !v.is_number_integer()) throw ConfigError("value for '" + key + "' must be an integer: '" + text + "'");
    if (key == "seed" && v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("seed must be non-negative");
    j[key] = v;
}

inline std::string env_name(const std::string& key) {
    std::string s = "DOWNSCALER_";
    for (char ch : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return s;
}

}  // namespace downscaler
