#pragma once

// Seeded Monte Carlo harness: draws synthetic (LLM, human) rating
// populations, applies Bernoulli second-stage sampling and compares the
// spread of the estimates with the asymptotic variance.

#include "twostage/estimator.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace twostage {

enum class Distribution { gaussian, likert };

std::string to_string(Distribution d);
Distribution parse_distribution(const std::string& text);

struct SimStratum {
    std::string label = "all";
    // Share of the N items in this stratum. Shares must sum to 1.
    double proportion = 1.0;
    // Second-stage inclusion probability.
    double pi = 1.0;
    // Correlation between LLM and human ratings; defaults to SimConfig::rho.
    std::optional<double> rho;
};

struct ModelSpec {
    ModelKind kind = ModelKind::linear;
    // Fit on each replication's observed pairs; otherwise use the fixed
    // coefficients below.
    bool fit = true;
    double intercept = 0.0;
    double slope = 1.0;
    // Added to every prediction. A nonzero offset makes the model wrong on
    // purpose.
    double bias_offset = 0.0;
    bool per_stratum = true;
};

struct SimConfig {
    std::int64_t N = 2000;
    // Gaussian only. Likert ratings are uniform over 1..levels, which fixes
    // the mean and spread.
    double true_mean = 0.0;
    double true_sd = 1.0;
    double rho = 0.7;
    Distribution distribution = Distribution::gaussian;
    int likert_levels = 5;
    std::vector<SimStratum> strata{SimStratum{}};
    ModelSpec model;
    std::int64_t replications = 1000;
    std::uint64_t seed = 1;
    double confidence_level = 0.95;
    // 0 picks the hardware concurrency.
    unsigned threads = 0;

    // Throws InputError on any out-of-range field.
    void validate() const;

    static SimConfig uniform(double pi) {
        SimConfig c;
        c.strata.front().pi = pi;
        return c;
    }
};

// Stratum item counts: round(proportion * N) for every stratum but the last,
// which takes the remainder.
std::vector<std::int64_t> stratum_sizes(const SimConfig& config);

// Complete (LLM, human) ratings for every item.
struct Population {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<std::uint32_t> stratum;

    std::size_t size() const noexcept { return x.size(); }
    double correlation() const;
};

Population generate_population(const SimConfig& config, std::uint64_t seed);

// Latent gaussian correlation for which discretized Likert ratings reach the
// target correlation, found by bisection on a fixed pilot draw.
struct LikertCalibration {
    double latent_rho = 0.0;
    double achieved_rho = 0.0;
};
LikertCalibration calibrate_likert(double target_rho, int levels, std::uint64_t seed);

// Bernoulli second-stage draw: item i is human-rated with its stratum's pi.
Dataset sample_second_stage(const Population& pop, const SimConfig& config, std::uint64_t seed);

// Asymptotic variance of the doubly robust estimator for the configured
// population and model, computed from the true moments.
double theoretical_variance(const SimConfig& config);

struct SimResult {
    double true_mean = 0.0;
    double true_variance = 0.0;
    double mean_estimate = 0.0;
    double empirical_bias = 0.0;
    double empirical_variance = 0.0;
    double theoretical_variance = 0.0;
    double coverage = 0.0;
    double achieved_rho2 = 0.0;
    double mc_se = 0.0;
    // true_variance / empirical_variance
    double empirical_n_eff = 0.0;
    double mean_observed = 0.0;
    std::int64_t replications = 0;
    std::int64_t failed = 0;
};

SimResult run_study(const SimConfig& config);

struct PointEstimate {
    double theta = 0.0;
    double variance = 0.0;
};

// Fill unobserved human ratings with model predictions and average.
PointEstimate prediction_only_estimate(const Dataset& data, const StratifiedModel& model);
// Hajek-normalized inverse probability weighting of the observed ratings.
PointEstimate ipw_estimate(const Dataset& data);

struct EstimatorSummary {
    std::string estimator;
    double bias = 0.0;
    double variance = 0.0;
    double coverage = 0.0;
    double mc_se = 0.0;
};

// prediction_only, ipw_only and doubly_robust on identical replications.
std::vector<EstimatorSummary> compare_estimators(const SimConfig& config);

} // namespace twostage
