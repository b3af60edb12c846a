#pragma once

// Sample-size algebra for a single second-stage sampling rate. Given the
// effective sample size n* a fully human-rated study would need and the
// planning R² between human and LLM ratings, a design (N, n) with pi = n/N
// matches that precision when
//   1/n* = (1/N) [ 1 + ((1 - pi)/pi) (1 - R²) ].

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace twostage {

struct DesignTarget {
    std::int64_t n_star = 0;
    double r2 = 0.0;

    // Throws InputError unless n_star >= 2 and r2 in [0, 1].
    void validate() const;
};

struct DesignOptions {
    // Lower bound on the human count. Only binds at R² = 1, where the
    // closed form asks for no human ratings at all.
    std::int64_t min_human_count = 1;
};

struct DesignSolution {
    std::int64_t N = 0;
    std::int64_t n = 0;
    double pi = 0.0;
    // Value of the solved-for quantity before rounding up.
    double unrounded = 0.0;
    double floor_n = 0.0;
    double achieved_n_eff = 0.0;
    std::vector<std::string> warnings;
};

// Smallest n with effective_sample_size(N, n, R²) >= n*:
//   n = ceil( N n* (1 - R²) / (N - n* R²) ).
DesignSolution required_human_n(const DesignTarget& target, std::int64_t N,
                                const DesignOptions& options = {});

// Smallest N for which n human ratings reach n*:
//   N = ceil( n n* R² / (n - n* (1 - R²)) ), never below n.
DesignSolution required_llm_N(const DesignTarget& target, std::int64_t n);

// n_eff = N n / ( n + (N - n)(1 - R²) ).
double effective_sample_size(std::int64_t N, std::int64_t n, double r2);

// n* (1 - R²): the human count required as N grows without bound.
double human_floor(const DesignTarget& target);

struct DesignCurveRow {
    std::int64_t n_star = 0;
    double r2 = 0.0;
    std::int64_t N = 0;
    std::optional<DesignSolution> solution;
    // 1 - n/n*, set only for feasible rows.
    double percent_reduction = 0.0;
    std::string error;
};

// required_human_n over every (target, N) combination, targets outermost.
// Infeasible cells are reported in-row.
std::vector<DesignCurveRow> design_curve(std::span<const DesignTarget> targets,
                                         std::span<const std::int64_t> N_grid,
                                         const DesignOptions& options = {});

} // namespace twostage
