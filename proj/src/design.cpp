#include "twostage/design.hpp"

#include "twostage/error.hpp"
#include "twostage/numeric.hpp"

#include <algorithm>
#include <cmath>

namespace twostage {

void DesignTarget::validate() const {
    if (n_star < 2) throw InputError("target effective sample size n* must be at least 2");
    if (!(r2 >= 0.0 && r2 <= 1.0)) throw InputError("R² must lie in [0, 1]");
}

double human_floor(const DesignTarget& target) {
    target.validate();
    return static_cast<double>(target.n_star) * (1.0 - target.r2);
}

double effective_sample_size(std::int64_t N, std::int64_t n, double r2) {
    if (n < 1 || n > N) throw InputError("effective sample size needs 1 <= n <= N");
    if (!(r2 >= 0.0 && r2 <= 1.0)) throw InputError("R² must lie in [0, 1]");
    const double Nd = static_cast<double>(N);
    const double nd = static_cast<double>(n);
    return Nd * nd / (nd + (Nd - nd) * (1.0 - r2));
}

DesignSolution required_human_n(const DesignTarget& target, std::int64_t N, const DesignOptions& options) {
    target.validate();
    if (N < target.n_star) throw InfeasibleError("infeasible: LLM pool smaller than target effective size");

    const double Nd = static_cast<double>(N);
    const double ns = static_cast<double>(target.n_star);
    DesignSolution s;
    s.N = N;
    s.floor_n = human_floor(target);
    const double denom = Nd - ns * target.r2;
    // denom vanishes only at N = n* with R² = 1, where no human rating is needed.
    s.unrounded = denom > 0.0 ? Nd * ns * (1.0 - target.r2) / denom : 0.0;
    s.n = std::clamp(ceil_count(s.unrounded), std::int64_t{0}, N);
    if (s.n < options.min_human_count) {
        s.n = std::min(options.min_human_count, N);
        s.warnings.emplace_back("R² = 1 implies no human ratings; raised to the minimum human count of " +
                                std::to_string(s.n) + " to keep the estimate anchored");
    }
    if (target.r2 == 0.0) s.warnings.emplace_back("LLM pool provides no reduction at R² = 0");
    s.pi = static_cast<double>(s.n) / Nd;
    s.achieved_n_eff = s.n > 0 ? effective_sample_size(N, s.n, target.r2) : Nd;
    return s;
}

DesignSolution required_llm_N(const DesignTarget& target, std::int64_t n) {
    target.validate();
    if (n < 1) throw InputError("human count must be at least 1");
    const double nd = static_cast<double>(n);
    const double ns = static_cast<double>(target.n_star);
    const double floor_n = human_floor(target);

    DesignSolution s;
    s.n = n;
    s.floor_n = floor_n;
    if (n >= target.n_star) {
        // Full human review of n >= n* items already meets the target.
        s.unrounded = target.r2 > 0.0 ? nd * ns * target.r2 / (nd - floor_n) : ns;
        s.N = n;
    } else {
        if (target.r2 == 0.0 || nd <= floor_n) {
            throw InfeasibleError("infeasible: human budget at or below the floor n*(1-R²); increase R² or n");
        }
        s.unrounded = nd * ns * target.r2 / (nd - floor_n);
        s.N = std::max(ceil_count(s.unrounded), n);
    }
    s.pi = nd / static_cast<double>(s.N);
    s.achieved_n_eff = effective_sample_size(s.N, n, target.r2);
    return s;
}

std::vector<DesignCurveRow> design_curve(std::span<const DesignTarget> targets,
                                         std::span<const std::int64_t> N_grid,
                                         const DesignOptions& options) {
    if (targets.empty() || N_grid.empty()) throw InputError("design curve grids must be nonempty");
    std::vector<DesignCurveRow> rows;
    rows.reserve(targets.size() * N_grid.size());
    for (const auto& t : targets) {
        for (const std::int64_t N : N_grid) {
            DesignCurveRow row;
            row.n_star = t.n_star;
            row.r2 = t.r2;
            row.N = N;
            try {
                row.solution = required_human_n(t, N, options);
                row.percent_reduction =
                    1.0 - static_cast<double>(row.solution->n) / static_cast<double>(t.n_star);
            } catch (const Error& e) {
                row.error = e.what();
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

} // namespace twostage
