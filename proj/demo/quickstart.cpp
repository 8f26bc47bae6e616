// Simulate a small network, fit the bivariate downscaler, and score it
// against ordinary kriging at the held-out sites.
#include <iostream>

#include <downscaler/downscaler.hpp>

using namespace downscaler;

int main() {
    TestbedOptions opt;
    opt.site_scale = 0.3;
    opt.n_days = 15;
    const auto sim = paper_scale_testbed(7, opt);
    const auto train = sim.train(), val = sim.validation();
    std::cout << train.sites().size() << " training sites, " << val.sites().size() << " held out\n";

    ModelSpec spec = default_spec(2, VariantPattern::SharedIntercept);
    spec.priors.nugget_scale = {0.01, 0.01};

    FitSettings fit;
    fit.run = RunLength{8000, 4000, 5};
    fit.chains = 2;
    fit.seed = 7;
    const auto chains = run_chains(train, spec, fit.run, fit.seed, fit.chains);

    const auto diag = chain_diagnostics(chains);
    for (const char* name : {"A_1_1", "A_4_1", "A_4_4", "tau2_1", "tau2_2"}) {
        const auto& d = diag.get(name);
        std::cout << name << "  mean " << d.mean << "  sd " << d.sd << "  rhat " << d.rhat << '\n';
    }

    const auto days = common_days(train, val);
    ScoreReport rep = score_predictions(predict_validation(chains, train, val, 1), observations_on(val, days), "downscaler",
                                        nearest_training_distance(train, val));
    BaselineOptions krig;
    krig.phi = {estimate_decay(train, 1).median_phi, estimate_decay(train, 2).median_phi};
    rep.append(baseline_scores(train, val, krig, "kriging"));
    std::cout << score_table(rep);
}
