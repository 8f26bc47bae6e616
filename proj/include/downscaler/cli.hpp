#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "chain.hpp"
#include "config.hpp"
#include "diagnostics.hpp"
#include "evaluation.hpp"
#include "io.hpp"
#include "kriging.hpp"
#include "prediction.hpp"
#include "sampler.hpp"
#include "simulator.hpp"

namespace downscaler {

namespace cli {

inline constexpr int kExitError = 2;
inline constexpr std::uint64_t kPredictStream = 0x9e37u;

struct Data {
    AlignedDataset all;
    AlignedDataset train;
    AlignedDataset validation;
    bool has_validation = false;
};

inline std::set<std::string> read_site_ids(const std::string& path) {
    CsvReader reader(path, {"site_id"});
    std::set<std::string> ids;
    std::vector<std::string> f;
    while (reader.next(f)) ids.insert(f[0]);
    return ids;
}

inline void write_site_ids(const std::string& path, const std::set<std::string>& ids, const std::string& hash) {
    auto out = open_output(path, hash);
    out << "site_id\n";
    for (const auto& id : ids) out << id << '\n';
}

/// Loads the inputs and splits off the validation sites. Without a
/// validation file every site is used for fitting.
inline Data load_data(const RunConfig& cfg) {
    const auto mon = ingest_monitoring(cfg.monitoring_path());
    auto outputs = ingest_grid(cfg.grid_outputs_path());
    Grid grid = load_grid_definition(cfg.grid_path());
    Data d;
    d.all = AlignedDataset::build(mon.sites, std::move(grid), mon.observations, std::move(outputs), cfg.spec.transform, cfg.spec.p);
    std::set<std::string> val;
    if (!cfg.validation.empty() || std::filesystem::exists(cfg.validation_path())) val = read_site_ids(cfg.validation_path());
    std::set<std::string> keep;
    for (const auto& s : d.all.sites())
        if (!val.count(s.id)) keep.insert(s.id);
    d.has_validation = !val.empty();
    d.train = d.has_validation ? d.all.subset_sites(keep) : d.all;
    if (d.has_validation) d.validation = d.all.subset_sites(val);
    return d;
}

inline std::vector<ChainSamples> load_chains(const RunConfig& cfg) {
    std::vector<ChainSamples> chains;
    for (int c = 0; c < cfg.chains; ++c) chains.push_back(read_chain(cfg.chain_dir(), c));
    return chains;
}

inline nlohmann::json matrix_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

inline std::vector<double> reml_decays(const AlignedDataset& train, const RunConfig& cfg) {
    if (!cfg.baseline.phi.empty()) return cfg.baseline.phi;
    std::vector<double> phi;
    for (int i = 1; i <= train.p(); ++i) phi.push_back(estimate_decay(train, i, cfg.spec.metric).median_phi);
    return phi;
}

inline FitSettings fit_settings(const RunConfig& cfg) { return {cfg.run, cfg.chains, cfg.threads, cfg.seed, cfg.near_km}; }

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int simulate(const RunConfig& cfg, const std::string& hash, std::ostream& log) {
    const auto& s = cfg.simulate;
    SimulationResult res;
    if (s.testbed == "paper") {
        res = paper_scale_testbed(cfg.seed, TestbedOptions{s.site_scale, s.n_days, s.phi, s.cell_km, s.keep_daily_sites});
    } else {
        TruthConfig tc = recovery_truth(s.n_sites, s.n_days, s.phi, cfg.seed);
        tc.cell_km = s.cell_km;
        res = simulate(tc, cfg.seed);
    }
    const auto& ds = res.dataset;
    write_monitoring_csv(cfg.out + "/monitoring.csv", ds.sites(), ds.observations(), hash);
    write_grid_csv(cfg.out + "/grid_outputs.csv", ds.grid_outputs(), hash);
    write_grid_definition(cfg.out + "/grid.json", ds.grid(), hash);
    write_site_ids(cfg.out + "/validation_sites.csv", res.validation_ids, hash);
    nlohmann::json truth;
    truth["config_hash"] = hash;
    truth["A"] = matrix_json(res.truth.A);
    truth["tau2"] = std::vector<double>(res.truth.tau2.data(), res.truth.tau2.data() + res.truth.tau2.size());
    truth["beta"] = matrix_json(res.truth.beta);
    auto out = open_output(cfg.out + "/truth.json", "");
    out << truth.dump(2) << '\n';
    log << "simulated " << ds.sites().size() << " sites (" << res.validation_ids.size() << " held out), " << ds.days().size() << " days, "
        << ds.observations().size() << " observations -> " << cfg.out << '\n';
    return 0;
}

inline int fit(const RunConfig& cfg, const std::string& hash, std::ostream& log) {
    const auto data = load_data(cfg);
    const auto chains = run_chains(data.train, cfg.spec, cfg.run, cfg.seed, cfg.chains, cfg.threads);
    for (const auto& c : chains) write_chain(cfg.chain_dir(), c, hash);
    write_diagnostics_csv(cfg.out + "/diagnostics.csv", chain_diagnostics(chains), hash);
    log << "fitted " << cfg.chains << " chain(s) on " << data.train.sites().size() << " sites -> " << cfg.chain_dir() << '\n';
    return 0;
}

inline int predict(const RunConfig& cfg, const std::string& hash, std::ostream& log) {
    const auto data = load_data(cfg);
    const auto chains = load_chains(cfg);
    const std::uint64_t seed = cfg.seed ^ kPredictStream;
    const auto& p = cfg.predict;
    if (p.target == "validation") {
        if (!data.has_validation) throw ConfigError("predict.target 'validation' needs a validation site list");
        write_surface_csv(cfg.out + "/predictions.csv", predict_validation(chains, data.train, data.validation, seed), hash);
        log << "wrote " << cfg.out << "/predictions.csv\n";
    } else if (p.target == "grid") {
        write_surface_csv(cfg.out + "/surface.csv", downscaler::predict(chains, data.train, PredictionTarget::grid(p.days, p.cells), seed), hash);
        log << "wrote " << cfg.out << "/surface.csv\n";
    } else {
        auto region = downscaler::predict(chains, data.train, PredictionTarget::region(p.label, p.cells, p.days), seed);
        if (!p.contrast_cells.empty()) {
            // both regions come from one joint draw so the difference keeps their correlation
            std::vector<std::string> cells = p.cells;
            cells.insert(cells.end(), p.contrast_cells.begin(), p.contrast_cells.end());
            const auto joint = downscaler::predict(chains, data.train, PredictionTarget::grid(p.days, cells), seed);
            region = contrast(block_average(joint, p.cells, p.label), block_average(joint, p.contrast_cells, "other"), p.label + "_minus_other");
        }
        write_contrast_csv(cfg.out + "/region.csv", region, hash);
        log << "wrote " << cfg.out << "/region.csv\n";
    }
    return 0;
}

inline BaselineOptions baseline_options(const std::string& method, const AlignedDataset& train, const RunConfig& cfg) {
    BaselineOptions opt;
    opt.metric = cfg.spec.metric;
    opt.phi = reml_decays(train, cfg);
    if (method == "cokriging") {
        opt.method = BaselineMethod::Cokriging;
        const auto& b = cfg.baseline;
        if (b.A11 && b.A41 && b.A44) {
            opt.A11 = *b.A11;
            opt.A41 = *b.A41;
            opt.A44 = *b.A44;
        } else {
            // posterior means of the saved bivariate fit
            const auto chains = load_chains(cfg);
            double a11 = 0.0, a41 = 0.0, a44 = 0.0, n = 0.0;
            for (const auto& c : chains)
                for (const auto& d : c.draws) {
                    a11 += d.A(0, 0);
                    a41 += d.A(3, 0);
                    a44 += d.A(3, 3);
                    n += 1.0;
                }
            if (n == 0.0) throw InsufficientDraws("cokriging needs A11/A41/A44 in the config or a saved fit");
            opt.A11 = a11 / n;
            opt.A41 = a41 / n;
            opt.A44 = a44 / n;
        }
        opt.phi1 = b.phi1.value_or(cfg.spec.phi[0]);
    }
    return opt;
}

inline int evaluate(const RunConfig& cfg, const std::string& hash, std::ostream& log) {
    const auto data = load_data(cfg);
    if (!data.has_validation) throw ConfigError("evaluate needs a validation site list");
    ScoreReport rep;
    rep.near_km = cfg.near_km;
    for (const auto& m : cfg.evaluate_methods) {
        if (m == "downscaler") {
            const auto chains = load_chains(cfg);
            const auto pred = predict_validation(chains, data.train, data.validation, cfg.seed ^ kPredictStream);
            const auto days = common_days(data.train, data.validation);
            rep.append(score_predictions(pred, observations_on(data.validation, days), m,
                                         nearest_training_distance(data.train, data.validation, cfg.spec.metric), cfg.near_km));
        } else {
            rep.append(baseline_scores(data.train, data.validation, baseline_options(m, data.train, cfg), m, cfg.near_km));
        }
    }
    write_score_csv(cfg.out + "/scores.csv", rep, hash);
    log << score_table(rep);
    return 0;
}

inline int sensitivity(const RunConfig& cfg, const std::string& hash, std::ostream& log) {
    const auto data = load_data(cfg);
    if (!data.has_validation) throw ConfigError("sensitivity needs a validation site list");
    std::vector<double> kphi;
    if (std::find(cfg.sensitivity_methods.begin(), cfg.sensitivity_methods.end(), "kriging") != cfg.sensitivity_methods.end()) {
        kphi = reml_decays(data.train, cfg);
    }
    const auto rows = sensitivity_sweep(data.train, data.validation, cfg.spec, fit_settings(cfg), cfg.multipliers, cfg.sensitivity_methods, kphi);
    write_sensitivity_csv(cfg.out + "/sensitivity.csv", rows, hash);
    log << "wrote " << cfg.out << "/sensitivity.csv (" << rows.size() << " rows)\n";
    return 0;
}

inline int baseline(const RunConfig& cfg, const std::string& hash, std::ostream& log) {
    const auto data = load_data(cfg);
    std::vector<Site> targets;
    if (data.has_validation) {
        targets = data.validation.sites();
    } else {
        for (const auto& c : data.train.grid().cells()) targets.push_back({c.id, c.centroid().lon, c.centroid().lat});
    }
    ScoreReport rep;
    rep.near_km = cfg.near_km;
    for (const auto& m : cfg.baseline.methods) {
        const auto opt = baseline_options(m, data.train, cfg);
        const auto pred = gaussian_to_samples(baseline_predictions(data.train, targets, opt), data.train.transform());
        write_surface_csv(cfg.out + "/baseline_" + m + ".csv", pred, hash, m);
        if (data.has_validation) {
            const auto days = common_days(data.train, data.validation);
            rep.append(score_predictions(pred, observations_on(data.validation, days), m,
                                         nearest_training_distance(data.train, data.validation, cfg.spec.metric), cfg.near_km));
        }
    }
    if (data.has_validation) {
        write_score_csv(cfg.out + "/baseline_scores.csv", rep, hash);
        log << score_table(rep);
    } else {
        log << "wrote baseline surfaces under " << cfg.out << '\n';
    }
    return 0;
}

}  // namespace cli

/// Full command line: `downscaler <subcommand> [flags]`. Values come from
/// the config file, then DOWNSCALER_* environment variables, then flags.
/// Errors print one `error: <Kind>: <message>` line on stderr and return 2.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Spatially varying coefficient downscaler", "downscaler"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration")->envname("DOWNSCALER_CONFIG");
    std::map<std::string, std::string> flag_values;
    for (const auto& key : kScalarKeys) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        app.add_option(flag, flag_values[key], "overrides config key '" + key + "' (env " + env_name(key) + ")");
    }
    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const RunConfig&, const std::string&, std::ostream&);
    };
    const std::vector<Sub> subs{{"simulate", "draw a synthetic dataset with known truth", cli::simulate},
                                {"fit", "run the MCMC sampler and save chains", cli::fit},
                                {"predict", "posterior-predictive surfaces from saved chains", cli::predict},
                                {"evaluate", "score held-out predictions", cli::evaluate},
                                {"sensitivity", "rescale the decay parameters and rescore", cli::sensitivity},
                                {"baseline", "kriging and cokriging predictions and scores", cli::baseline}};
    for (const auto& s : subs) app.add_subcommand(s.name, s.help);

    auto fail = [&](const std::string& kind, std::string msg) {
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << kind << ": " << msg << '\n';
        return cli::kExitError;
    };
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        return fail("UsageError", e.what());
    }
    try {
        nlohmann::json j = nlohmann::json::object();
        if (!config_path.empty()) j = read_json_file(config_path);
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        for (const auto& key : kScalarKeys)
            if (const char* v = std::getenv(env_name(key).c_str()); v != nullptr && *v != '\0') set_scalar(j, key, v);
        for (const auto& key : kScalarKeys) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            if (app.get_option(flag)->count() > 0) set_scalar(j, key, flag_values[key]);
        }
        const RunConfig cfg = config_from_json(j);
        const std::string hash = config_hash(cfg);
        for (const auto& s : subs)
            if (app.got_subcommand(s.name)) return s.fn(cfg, hash, out);
        return fail("UsageError", "no subcommand");
    } catch (const Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail("InternalError", e.what());
    }
}

}  // namespace downscaler
