#include "twostage/strata.hpp"

#include "twostage/design.hpp"
#include "twostage/error.hpp"
#include "twostage/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace twostage {

namespace {

struct Weights {
    double N = 0.0;
    std::vector<double> f;        // N_s / N
    std::vector<double> w;        // f_s (1 - r_s²)
    double w_total = 0.0;
};

Weights weights_of(std::span<const StratumSpec> strata) {
    Weights out;
    out.N = static_cast<double>(total_size(strata));
    for (const auto& s : strata) {
        const double f = static_cast<double>(s.size) / out.N;
        out.f.push_back(f);
        out.w.push_back(f * (1.0 - s.r2));
        out.w_total += out.w.back();
    }
    return out;
}

void require_feasible_pool(std::int64_t n_star, std::span<const StratumSpec> strata) {
    if (n_star < 2) throw InputError("target effective sample size n* must be at least 2");
    if (total_size(strata) < n_star) throw InfeasibleError("infeasible pool: N is smaller than n*");
}

AllocationPlan finalize(PlanKind kind, std::int64_t n_star, std::span<const StratumSpec> strata,
                        std::span<const double> p, const std::vector<bool>& clamped) {
    AllocationPlan plan;
    plan.kind = kind;
    plan.n_star = n_star;
    plan.strata.assign(strata.begin(), strata.end());
    std::vector<double> rounded_rates;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        StratumAllocation a;
        a.label = strata[s].label;
        a.p = p[s];
        a.clamped = clamped.empty() ? false : clamped[s];
        const double expected = static_cast<double>(strata[s].size) * p[s];
        a.n = std::clamp(ceil_count(expected), std::int64_t{0}, strata[s].size);
        plan.unrounded_total += expected;
        plan.human_total += a.n;
        plan.total_cost += strata[s].cost * static_cast<double>(a.n);
        rounded_rates.push_back(static_cast<double>(a.n) / static_cast<double>(strata[s].size));
        plan.allocations.push_back(std::move(a));
    }
    plan.achieved_n_eff = stratified_effective_size(strata, rounded_rates);
    return plan;
}

} // namespace

void validate_strata(std::span<const StratumSpec> strata) {
    if (strata.empty()) throw InputError("at least one stratum is required");
    std::set<std::string> labels;
    for (const auto& s : strata) {
        if (!labels.insert(s.label).second) throw InputError("duplicate stratum label '" + s.label + "'");
        if (s.size < 1) throw InputError("stratum '" + s.label + "' must contain at least one item");
        if (!(s.r2 >= 0.0 && s.r2 <= 1.0)) throw InputError("stratum '" + s.label + "': r² must lie in [0, 1]");
        if (!(s.cost > 0.0) || !std::isfinite(s.cost)) {
            throw InputError("stratum '" + s.label + "': cost must be positive");
        }
    }
}

std::int64_t total_size(std::span<const StratumSpec> strata) {
    std::int64_t N = 0;
    for (const auto& s : strata) N += s.size;
    return N;
}

std::string to_string(PlanKind kind) {
    switch (kind) {
    case PlanKind::optimal: return "optimal";
    case PlanKind::uniform: return "uniform";
    case PlanKind::custom: return "custom";
    }
    return "unknown";
}

double stratified_effective_size(std::span<const StratumSpec> strata, std::span<const double> p) {
    if (p.size() != strata.size()) throw InputError("one sampling rate per stratum is required");
    const auto W = weights_of(strata);
    double penalty = 0.0;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        if (W.w[s] == 0.0) continue;
        if (!(p[s] > 0.0)) return 0.0;
        penalty += W.w[s] * (1.0 / p[s] - 1.0);
    }
    return W.N / (1.0 + penalty);
}

AllocationCurve allocation_curve(std::int64_t n_star, std::span<const StratumSpec> strata,
                                 std::span<const double> p1_grid) {
    if (strata.size() != 2) throw InputError("allocation curve needs exactly two strata");
    validate_strata(strata);
    require_feasible_pool(n_star, strata);
    const auto W = weights_of(strata);
    const double K = W.N / static_cast<double>(n_star) - 1.0;
    const double w1 = W.w[0];
    const double w2 = W.w[1];

    AllocationCurve curve;
    curve.p1_min = K + w1 > 0.0 ? w1 / (K + w1) : 1.0;
    curve.points.reserve(p1_grid.size());
    for (const double p1 : p1_grid) {
        if (!(p1 > 0.0 && p1 <= 1.0)) throw InputError("curve p1 values must lie in (0, 1]");
        const double denom = K + w1 + w2 - w1 / p1;
        CurvePoint pt;
        pt.p1 = p1;
        pt.p2 = denom > 0.0 ? w2 / denom : std::numeric_limits<double>::infinity();
        pt.valid = denom > 0.0 && pt.p2 > 0.0 && pt.p2 <= 1.0 + 1e-12;
        curve.points.push_back(pt);
    }
    return curve;
}

std::vector<double> default_p1_grid(std::int64_t n_star, std::span<const StratumSpec> strata,
                                    std::size_t points) {
    if (points < 2) throw InputError("a curve grid needs at least 2 points");
    const double start = std::max(allocation_curve(n_star, strata, {}).p1_min, 1e-6);
    std::vector<double> grid(points);
    const double log_lo = std::log(start);
    for (std::size_t i = 0; i < points; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(points - 1);
        grid[i] = std::exp(log_lo * (1.0 - t));
    }
    grid.front() = start;
    grid.back() = 1.0;
    return grid;
}

AllocationPlan optimal_allocation(std::int64_t n_star, std::span<const StratumSpec> strata,
                                  const AllocationOptions& options) {
    validate_strata(strata);
    require_feasible_pool(n_star, strata);
    const auto W = weights_of(strata);
    const double K = W.N / static_cast<double>(n_star) - 1.0;
    const std::size_t S = strata.size();

    // Rates before the common scale: sqrt((1 - r²)/cost). w_s/p_s summed over the
    // constraint must equal K + sum_s w_s.
    std::vector<double> shape(S);
    for (std::size_t s = 0; s < S; ++s) shape[s] = std::sqrt((1.0 - strata[s].r2) / strata[s].cost);

    std::vector<double> p(S, 0.0);
    std::vector<bool> clamped(S, false);
    for (;;) {
        double budget = K + W.w_total; // sum of w_s / p_s still to be met by free strata
        double scale_num = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            if (clamped[s]) {
                budget -= W.w[s];
            } else if (shape[s] > 0.0) {
                scale_num += W.w[s] / shape[s];
            }
        }
        const double c = budget > 0.0 ? scale_num / budget : 0.0;
        bool changed = false;
        for (std::size_t s = 0; s < S; ++s) {
            if (clamped[s]) {
                p[s] = 1.0;
                continue;
            }
            p[s] = c * shape[s];
            if (p[s] > 1.0 + 1e-12 || (budget <= 0.0 && W.w[s] > 0.0)) {
                clamped[s] = true;
                changed = true;
            }
        }
        if (!changed) break;
    }

    std::vector<std::string> warnings;
    for (std::size_t s = 0; s < S; ++s) {
        p[s] = std::min(p[s], 1.0);
        if (p[s] <= 0.0) {
            const double floor_rate =
                static_cast<double>(std::min(options.min_human_per_stratum, strata[s].size)) /
                static_cast<double>(strata[s].size);
            p[s] = floor_rate;
            warnings.push_back("stratum '" + strata[s].label +
                               "' has r² = 1; kept at the minimum human count for oversight");
        }
    }
    auto plan = finalize(PlanKind::optimal, n_star, strata, p, clamped);
    for (std::size_t s = 0; s < S; ++s) {
        if (clamped[s]) warnings.push_back("stratum '" + strata[s].label + "' requires full human review");
    }
    plan.warnings = std::move(warnings);
    return plan;
}

AllocationPlan uniform_allocation(std::int64_t n_star, std::span<const StratumSpec> strata) {
    validate_strata(strata);
    require_feasible_pool(n_star, strata);
    const auto W = weights_of(strata);
    const DesignTarget target{n_star, std::clamp(1.0 - W.w_total, 0.0, 1.0)};
    const auto sol = required_human_n(target, total_size(strata));
    const std::vector<double> p(strata.size(), sol.pi);
    auto plan = finalize(PlanKind::uniform, n_star, strata, p, {});
    plan.warnings = sol.warnings;
    return plan;
}

AllocationPlan custom_allocation(std::int64_t n_star, std::span<const StratumSpec> strata,
                                 std::span<const double> p) {
    validate_strata(strata);
    require_feasible_pool(n_star, strata);
    if (p.size() != strata.size()) throw InputError("one sampling rate per stratum is required");
    for (const double v : p) {
        if (!(v > 0.0 && v <= 1.0)) throw InputError("sampling rates must lie in (0, 1]");
    }
    auto plan = finalize(PlanKind::custom, n_star, strata, p, {});
    if (plan.achieved_n_eff < static_cast<double>(n_star) - 0.5) {
        plan.warnings.emplace_back("custom rates fall short of the target effective size");
    }
    return plan;
}

double stratification_savings(std::span<const StratumSpec> strata, std::int64_t n_star) {
    validate_strata(strata);
    if (n_star < 2) throw InputError("target effective sample size n* must be at least 2");
    const auto W = weights_of(strata);
    if (W.w_total <= 0.0) throw InputError("savings undefined: zero residual variance everywhere");
    double root_sum = 0.0;
    for (std::size_t s = 0; s < strata.size(); ++s) root_sum += W.f[s] * std::sqrt(1.0 - strata[s].r2);
    return std::max(0.0, 1.0 - root_sum * root_sum / W.w_total);
}

BudgetReport feasible_under_budget(const AllocationPlan& plan, std::int64_t budget) {
    if (budget < 0) throw InputError("budget must be nonnegative");
    BudgetReport report;
    report.budget = budget;
    report.total = plan.total_cost;
    const double b = static_cast<double>(budget);
    report.feasible = report.total <= b + 1e-9;
    if (report.feasible) {
        report.slack = b - report.total;
        return report;
    }
    report.deficit = report.total - b;

    // Pre-rounding optimal cost at inflation t is t N S² / (t N/n* - 1 + sum w),
    // which falls toward n* S² as t grows.
    const auto W = weights_of(plan.strata);
    double S = 0.0;
    for (std::size_t s = 0; s < plan.strata.size(); ++s) {
        S += W.f[s] * std::sqrt(plan.strata[s].cost * (1.0 - plan.strata[s].r2));
    }
    const double ns = static_cast<double>(plan.n_star);
    const double asymptotic_floor = ns * S * S;
    if (b <= asymptotic_floor) throw InfeasibleError("budget below asymptotic floor");

    auto scaled = [&](double t) {
        std::vector<StratumSpec> out = plan.strata;
        for (auto& s : out) s.size = static_cast<std::int64_t>(std::ceil(t * static_cast<double>(s.size) - 1e-9));
        return out;
    };
    auto fits = [&](double t) { return optimal_allocation(plan.n_star, scaled(t)).total_cost <= b + 1e-9; };

    double t = std::max(1.0, b * (1.0 - W.w_total) / (W.N * (b / ns - S * S)));
    double failed = 1.0;
    int steps = 0;
    while (!fits(t)) {
        failed = t;
        t *= 1.01;
        if (++steps > 3000) throw InfeasibleError("budget below asymptotic floor after rounding");
    }
    if (steps > 0) {
        // pull t back toward the last failing factor
        for (int i = 0; i < 40; ++i) {
            const double mid = 0.5 * (failed + t);
            if (fits(mid)) t = mid; else failed = mid;
        }
    }
    report.inflation_factor = t;
    report.scaled_strata = scaled(t);
    report.scaled_plan = optimal_allocation(plan.n_star, report.scaled_strata);
    return report;
}

} // namespace twostage
