#pragma once

// Stratified second-stage designs. Stratum s holds N_s items with stratum
// predictive quality r_s² and is human-rated at rate p_s. With f_s = N_s/N
// and w_s = f_s (1 - r_s²) the design reaches effective size n* when
//   N/n* - 1 = sum_s w_s (1/p_s - 1).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace twostage {

struct StratumSpec {
    std::string label;
    std::int64_t size = 0;
    double r2 = 0.0;
    // Relative cost of one human rating in this stratum.
    double cost = 1.0;
};

// Throws InputError on empty input, duplicate labels, sizes < 1, r² outside
// [0, 1] or non-positive costs.
void validate_strata(std::span<const StratumSpec> strata);

std::int64_t total_size(std::span<const StratumSpec> strata);

enum class PlanKind { optimal, uniform, custom };

std::string to_string(PlanKind kind);

struct StratumAllocation {
    std::string label;
    double p = 0.0;
    std::int64_t n = 0;
    bool clamped = false;
};

struct AllocationPlan {
    PlanKind kind = PlanKind::custom;
    std::int64_t n_star = 0;
    std::vector<StratumSpec> strata;
    std::vector<StratumAllocation> allocations;
    std::int64_t human_total = 0;
    // sum_s cost_s n_s; equals human_total at unit costs.
    double total_cost = 0.0;
    // sum_s N_s p_s before rounding.
    double unrounded_total = 0.0;
    // Effective size of the rounded design, rates n_s / N_s.
    double achieved_n_eff = 0.0;
    std::vector<std::string> warnings;
};

// Effective sample size of stratified rates p (one per stratum).
double stratified_effective_size(std::span<const StratumSpec> strata, std::span<const double> p);

struct CurvePoint {
    double p1 = 0.0;
    double p2 = 0.0;
    bool valid = false;
};

struct AllocationCurve {
    std::vector<CurvePoint> points;
    // p1 at which the solved p2 reaches 1.
    double p1_min = 0.0;
};

// Solves the two-stratum constraint for p2 at each p1:
//   p2 = w2 / (K + w1 + w2 - w1/p1),  K = N/n* - 1.
// Points with p2 outside (0, 1] are kept and flagged invalid.
AllocationCurve allocation_curve(std::int64_t n_star, std::span<const StratumSpec> strata,
                                 std::span<const double> p1_grid);

// Log-spaced p1 values from p1_min to 1.
std::vector<double> default_p1_grid(std::int64_t n_star, std::span<const StratumSpec> strata,
                                    std::size_t points = 200);

struct AllocationOptions {
    // Strata with r² = 1 get zero rate from the closed form; they still
    // receive at least this many human ratings.
    std::int64_t min_human_per_stratum = 1;
};

// Minimum-cost rates p_s = c sqrt((1 - r_s²)/cost_s). Strata whose rate
// would exceed 1 are fixed at full review and the rest re-solved.
AllocationPlan optimal_allocation(std::int64_t n_star, std::span<const StratumSpec> strata,
                                  const AllocationOptions& options = {});

// One rate for every stratum, sized by required_human_n at the pooled
// R² = sum_s f_s r_s².
AllocationPlan uniform_allocation(std::int64_t n_star, std::span<const StratumSpec> strata);

// Caller-chosen rates, rounded and scored.
AllocationPlan custom_allocation(std::int64_t n_star, std::span<const StratumSpec> strata,
                                 std::span<const double> p);

// Fractional reduction in human count of the optimal over the uniform design,
//   1 - [sum_s f_s sqrt(1 - r_s²)]² / (1 - sum_s f_s r_s²),
// before rounding. Independent of N and n*.
double stratification_savings(std::span<const StratumSpec> strata, std::int64_t n_star);

struct BudgetReport {
    bool feasible = false;
    std::int64_t budget = 0;
    double total = 0.0;
    // budget - total when feasible, total - budget otherwise.
    double slack = 0.0;
    double deficit = 0.0;
    // Deficit branch only: factor applied to every N_s, the scaled strata and
    // their optimal plan, which fits in the budget.
    std::optional<double> inflation_factor;
    std::vector<StratumSpec> scaled_strata;
    std::optional<AllocationPlan> scaled_plan;
};

BudgetReport feasible_under_budget(const AllocationPlan& plan, std::int64_t budget);

} // namespace twostage
