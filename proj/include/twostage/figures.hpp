#pragma once

// Figure data as CSV text. Plotting is left to external tools.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace twostage {

struct FigureParams {
    // Figures 2 and 3
    std::vector<std::int64_t> n_stars{50, 100, 200, 500};
    std::vector<double> r2_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    // LLM pool sizes as multiples of n*.
    std::vector<double> N_multiples{1, 1.5, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    // Figures 3 and 4
    std::int64_t n_star = 200;
    // Figure 4
    std::int64_t N1 = 500;
    std::int64_t N2 = 500;
    double r1_squared = 0.8;
    double r2_squared = 0.3;
    std::optional<std::int64_t> budget = 100;
    std::size_t curve_points = 200;
    // Figure 5
    std::int64_t N = 1000;
    double f1_step = 0.01;
};

// Figure 5 defaults differ from figure 4 in the second stratum's r².
FigureParams figure5_defaults();

// Human count against LLM pool size, one series per (n*, R²).
std::string figure2_csv(const FigureParams& p);
// Human count and percent reduction against R² for several pool sizes.
std::string figure3_csv(const FigureParams& p);
// Two-stratum allocation curve, the minimum-cost point and the budget line.
std::string figure4_csv(const FigureParams& p);
// Savings of stratified over uniform allocation as the first stratum's share
// varies.
std::string figure5_csv(const FigureParams& p);

std::string figure_csv(int figure, const FigureParams& p);

} // namespace twostage
