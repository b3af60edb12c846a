#include "twostage/figures.hpp"

#include "twostage/design.hpp"
#include "twostage/error.hpp"
#include "twostage/numeric.hpp"
#include "twostage/strata.hpp"

#include <cmath>
#include <sstream>

namespace twostage {

namespace {

std::string num(double v) { return format_double(v); }

std::vector<std::int64_t> pool_sizes(std::int64_t n_star, const std::vector<double>& multiples) {
    std::vector<std::int64_t> out;
    for (double m : multiples) out.push_back(static_cast<std::int64_t>(std::llround(m * static_cast<double>(n_star))));
    return out;
}

} // namespace

FigureParams figure5_defaults() {
    FigureParams p;
    p.r2_squared = 0.1;
    return p;
}

std::string figure2_csv(const FigureParams& p) {
    std::ostringstream out;
    out << "n_star,r2,N,N_multiple,n,n_unrounded,pi,floor_n,feasible\n";
    for (const auto n_star : p.n_stars) {
        std::vector<DesignTarget> targets;
        for (double r2 : p.r2_grid) targets.push_back({n_star, r2});
        const auto grid = pool_sizes(n_star, p.N_multiples);
        for (const auto& row : design_curve(targets, grid)) {
            out << row.n_star << ',' << num(row.r2) << ',' << row.N << ','
                << num(static_cast<double>(row.N) / static_cast<double>(n_star)) << ',';
            if (row.solution) {
                out << row.solution->n << ',' << num(row.solution->unrounded) << ',' << num(row.solution->pi) << ','
                    << num(row.solution->floor_n) << ",true\n";
            } else {
                out << ",,,,false\n";
            }
        }
    }
    return out.str();
}

std::string figure3_csv(const FigureParams& p) {
    std::ostringstream out;
    out << "n_star,N,r2,n,n_unrounded,floor_n,percent_reduction\n";
    std::vector<DesignTarget> targets;
    for (int k = 0; k <= 20; ++k) targets.push_back({p.n_star, k / 20.0});
    const auto grid = pool_sizes(p.n_star, p.N_multiples);
    for (const auto N : grid) {
        for (const auto& t : targets) {
            const std::int64_t one[] = {N};
            const DesignTarget single[] = {t};
            const auto row = design_curve(single, one).front();
            out << row.n_star << ',' << row.N << ',' << num(row.r2) << ',';
            if (row.solution) {
                out << row.solution->n << ',' << num(row.solution->unrounded) << ',' << num(row.solution->floor_n)
                    << ',' << num(row.percent_reduction) << '\n';
            } else {
                out << ",,,\n";
            }
        }
    }
    return out.str();
}

std::string figure4_csv(const FigureParams& p) {
    const std::vector<StratumSpec> strata{{"1", p.N1, p.r1_squared}, {"2", p.N2, p.r2_squared}};
    const auto grid = default_p1_grid(p.n_star, strata, p.curve_points);
    const auto curve = allocation_curve(p.n_star, strata, grid);
    const auto plan = optimal_allocation(p.n_star, strata);
    const double N1 = static_cast<double>(p.N1);
    const double N2 = static_cast<double>(p.N2);

    std::ostringstream out;
    out << "series,p1,p2,valid,expected_total\n";
    for (const auto& pt : curve.points) {
        out << "curve," << num(pt.p1) << ',' << num(pt.p2) << ',' << (pt.valid ? "true" : "false") << ','
            << num(N1 * pt.p1 + N2 * pt.p2) << '\n';
    }
    const double q1 = plan.allocations[0].p;
    const double q2 = plan.allocations[1].p;
    out << "optimal," << num(q1) << ',' << num(q2) << ",true," << num(N1 * q1 + N2 * q2) << '\n';
    if (p.budget) {
        const double b = static_cast<double>(*p.budget);
        // Endpoints of N1 p1 + N2 p2 = budget inside the unit square.
        const double p1_hi = std::min(1.0, b / N1);
        const double p2_hi = std::min(1.0, b / N2);
        out << "budget," << num((b - N2 * p2_hi) / N1) << ',' << num(p2_hi) << ",true," << num(b) << '\n';
        out << "budget," << num(p1_hi) << ',' << num((b - N1 * p1_hi) / N2) << ",true," << num(b) << '\n';
    }
    return out.str();
}

std::string figure5_csv(const FigureParams& p) {
    if (!(p.f1_step > 0.0 && p.f1_step < 1.0)) throw InputError("f1 step must lie in (0, 1)");
    std::ostringstream out;
    out << "r1_squared,r2_squared,f1,N1,N2,savings,optimal_total,uniform_total,rounded_savings\n";
    const auto steps = static_cast<int>(std::floor(1.0 / p.f1_step + 1e-9));
    for (int k = 1; k < steps; ++k) {
        const double f1 = k * p.f1_step;
        const auto N1 = static_cast<std::int64_t>(std::llround(f1 * static_cast<double>(p.N)));
        const std::int64_t N2 = p.N - N1;
        if (N1 < 1 || N2 < 1) continue;
        const std::vector<StratumSpec> strata{{"1", N1, p.r1_squared}, {"2", N2, p.r2_squared}};
        const double savings = stratification_savings(strata, p.n_star);
        const auto opt = optimal_allocation(p.n_star, strata);
        const auto uni = uniform_allocation(p.n_star, strata);
        const double share = static_cast<double>(N1) / static_cast<double>(p.N);
        out << num(p.r1_squared) << ',' << num(p.r2_squared) << ',' << num(share) << ',' << N1 << ',' << N2 << ','
            << num(savings) << ',' << opt.human_total << ',' << uni.human_total << ','
            << num(1.0 - static_cast<double>(opt.human_total) / static_cast<double>(uni.human_total)) << '\n';
    }
    return out.str();
}

std::string figure_csv(int figure, const FigureParams& p) {
    switch (figure) {
    case 2: return figure2_csv(p);
    case 3: return figure3_csv(p);
    case 4: return figure4_csv(p);
    case 5: return figure5_csv(p);
    default: break;
    }
    throw InputError("unknown figure " + std::to_string(figure) + " (expected 2, 3, 4 or 5)");
}

} // namespace twostage
