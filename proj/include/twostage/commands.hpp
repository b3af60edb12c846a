#pragma once

// Investigator workflows behind the command-line subcommands. Each returns a
// JSON report (plus any CSV side output) and throws the toolkit's error
// types; mapping errors to exit codes is left to the executable.

#include "twostage/figures.hpp"
#include "twostage/io.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace twostage {

enum ExitCode : int { kExitOk = 0, kExitInfeasible = 2, kExitInputError = 3 };

// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);
// {"error": {"kind": ..., "message": ...}}
Json error_json(const std::exception& e);

struct PilotParams {
    ModelKind model = ModelKind::linear;
};

// R² overall and per stratum from complete (llm, human) pairs. Rows without
// a human rating are skipped and counted.
Json cmd_pilot(std::span<const RatingRecord> records, const PilotParams& params = {});

struct DesignParams {
    std::int64_t n_star = 0;
    double r2 = 0.0;
    // Exactly one of these selects the solve direction.
    std::optional<std::int64_t> N;
    std::optional<std::int64_t> n;
    std::optional<std::int64_t> budget;
    std::int64_t min_human_count = 1;
    double sensitivity_span = 0.2;
    double sensitivity_step = 0.05;
};

DesignParams design_params_from_json(const Json& j, DesignParams base = {});
Json cmd_design(const DesignParams& params);

struct AllocateParams {
    std::int64_t n_star = 0;
    std::vector<StratumSpec> strata;
    std::optional<std::int64_t> budget;
    // Optional caller-chosen rates, one per stratum, scored alongside.
    std::vector<double> custom_p;
    std::size_t curve_points = 200;
};

AllocateParams allocate_params_from_json(const Json& j, AllocateParams base = {});

struct AllocateOutput {
    Json report;
    // Allocation curve CSV; empty unless there are exactly two strata.
    std::string curve_csv;
};

AllocateOutput cmd_allocate(const AllocateParams& params);

struct EstimateParams {
    ModelKind model = ModelKind::linear;
    double confidence_level = 0.95;
    bool per_stratum = false;
};

Json cmd_estimate(std::span<const RatingRecord> records, const EstimateParams& params = {});

struct SimulateOutput {
    Json report;
    std::string csv;
};

SimulateOutput cmd_simulate(const SimConfig& config, bool compare);

std::string cmd_figures(int figure, const FigureParams& params);

} // namespace twostage
