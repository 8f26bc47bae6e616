// Posterior for the difference in mean pollutant-1 level between two
// blocks of grid cells on one day.
#include <iomanip>
#include <iostream>

#include <downscaler/downscaler.hpp>

using namespace downscaler;

int main() {
    TestbedOptions opt;
    opt.site_scale = 0.3;
    opt.n_days = 10;
    const auto sim = paper_scale_testbed(3, opt);
    const auto train = sim.train();

    ModelSpec spec = default_spec(2, VariantPattern::SharedIntercept);
    spec.priors.nugget_scale = {0.01, 0.01};
    const auto chains = run_chains(train, spec, RunLength{2000, 1000, 5}, 3, 2);

    // 3 x 3 blocks near the south-west and north-east corners of the grid
    auto block = [](int x0, int y0) {
        std::vector<std::string> ids;
        for (int y = y0; y < y0 + 3; ++y)
            for (int x = x0; x < x0 + 3; ++x) ids.push_back("c" + std::to_string(x) + "_" + std::to_string(y));
        return ids;
    };
    const auto west = block(4, 4), east = block(18, 18);
    std::vector<std::string> both = west;
    both.insert(both.end(), east.begin(), east.end());

    // one joint draw over both blocks keeps their correlation in the contrast
    auto target = PredictionTarget::grid({0}, both);
    target.pollutants = {1};
    const auto draws = predict(chains, train, target, 11);
    const auto diff = contrast(block_average(draws, west, "west"), block_average(draws, east, "east"), "west-east");

    std::cout << std::fixed << std::setprecision(2);
    for (const auto& s : diff.series) {
        const auto sm = s.summary();
        std::cout << "day " << s.t << " pollutant " << s.pollutant << ": " << sm.mean << " [" << sm.q025 << ", " << sm.q975 << "]\n";
    }
}
