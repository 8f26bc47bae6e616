#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "data.hpp"
#include "kriging.hpp"
#include "model_spec.hpp"
#include "prediction.hpp"
#include "sampler.hpp"
#include "scores.hpp"

namespace downscaler {

struct FitSettings {
    RunLength run;
    int chains = 3;
    int threads = 1;
    std::uint64_t seed = 1;
    double near_km = 40.0;
};

/// Days of the validation data that were fitted.
inline std::vector<int> common_days(const AlignedDataset& train, const AlignedDataset& validation) {
    std::vector<int> out;
    for (int t : validation.days())
        if (std::binary_search(train.days().begin(), train.days().end(), t)) out.push_back(t);
    return out;
}

inline std::vector<Observation> observations_on(const AlignedDataset& ds, const std::vector<int>& days) {
    std::vector<Observation> out;
    for (const auto& o : ds.observations())
        if (std::binary_search(days.begin(), days.end(), o.t)) out.push_back(o);
    return out;
}

/// Posterior-predictive draws at the validation sites from a fitted chain set.
inline PredictiveSamples predict_validation(const std::vector<ChainSamples>& chains, const AlignedDataset& train, const AlignedDataset& validation,
                                            std::uint64_t seed) {
    return predict(chains, train, PredictionTarget::at_sites(validation.sites(), common_days(train, validation)), seed);
}

/// Fit the downscaler on `train` and score it at the validation sites.
inline ScoreReport downscaler_scores(const AlignedDataset& train, const AlignedDataset& validation, const ModelSpec& spec, const FitSettings& fit,
                                     const std::string& label) {
    const auto chains = run_chains(train, spec, fit.run, fit.seed, fit.chains, fit.threads);
    const auto pred = predict_validation(chains, train, validation, fit.seed ^ 0x9e37u);
    const auto days = common_days(train, validation);
    return score_predictions(pred, observations_on(validation, days), label, nearest_training_distance(train, validation, spec.metric), fit.near_km);
}

inline ScoreReport baseline_scores(const AlignedDataset& train, const AlignedDataset& validation, const BaselineOptions& opt, const std::string& label,
                                   double near_km = 40.0) {
    const auto g = baseline_predictions(train, validation.sites(), opt);
    const auto pred = gaussian_to_samples(g, train.transform());
    const auto days = common_days(train, validation);
    return score_predictions(pred, observations_on(validation, days), label, nearest_training_distance(train, validation, opt.metric), near_km);
}

struct SensitivityRow {
    double multiplier = 1.0;
    ScoreRow score;
};

inline const std::vector<double> kDefaultMultipliers{0.01, 0.1, 1.0, 10.0, 100.0};

/// Refit each method with every decay scaled by each multiplier. Kriging
/// keeps the sill and nugget estimated at the base decay.
inline std::vector<SensitivityRow> sensitivity_sweep(const AlignedDataset& train, const AlignedDataset& validation, const ModelSpec& spec,
                                                     const FitSettings& fit, const std::vector<double>& multipliers = kDefaultMultipliers,
                                                     const std::vector<std::string>& methods = {"downscaler", "kriging"},
                                                     std::vector<double> kriging_phi = {}) {
    require_valid(spec);
    if (kriging_phi.empty())
        for (int i = 1; i <= spec.p; ++i) kriging_phi.push_back(spec.phi[static_cast<std::size_t>((i - 1) * (spec.p + 1))]);
    std::vector<SensitivityRow> out;
    for (double m : multipliers) {
        if (!(m > 0.0)) throw DomainError("decay multipliers must be positive");
        for (const auto& method : methods) {
            ScoreReport rep;
            if (method == "downscaler") {
                ModelSpec s = spec;
                for (auto& v : s.phi) v *= m;
                rep = downscaler_scores(train, validation, s, fit, method);
            } else if (method == "kriging") {
                BaselineOptions opt;
                opt.metric = spec.metric;
                opt.reml_phi = kriging_phi;
                for (double v : kriging_phi) opt.phi.push_back(v * m);
                rep = baseline_scores(train, validation, opt, method, fit.near_km);
            } else {
                throw ConfigError("unknown sensitivity method '" + method + "'");
            }
            for (const auto& r : rep.rows) out.push_back({m, r});
        }
    }
    return out;
}

inline void write_sensitivity_csv(const std::string& path, const std::vector<SensitivityRow>& rows, const std::string& config_hash) {
    auto out = open_output(path, config_hash);
    out << "multiplier,pollutant,method,stratum,n,pmse,pmae,coverage95,width95,crps,interval_score\n";
    for (const auto& sr : rows) {
        const auto& r = sr.score;
        out << fmt_num(sr.multiplier) << ',' << r.pollutant << ',' << r.method << ',' << to_string(r.stratum) << ',' << r.n << ',' << fmt_num(r.pmse) << ','
            << fmt_num(r.pmae) << ',' << fmt_num(r.coverage95) << ',' << fmt_num(r.width95) << ',' << fmt_num(r.crps) << ',' << fmt_num(r.interval_score)
            << '\n';
    }
}

}  // namespace downscaler
