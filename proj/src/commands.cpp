#include "twostage/commands.hpp"

#include "twostage/error.hpp"
#include "twostage/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace twostage {

namespace {

constexpr std::size_t kMinPilotPairs = 3;

std::string stratum_key(const RatingRecord& r) { return r.stratum.value_or(""); }

Json pilot_entry(std::span<const Pair> pairs, ModelKind kind) {
    Json j;
    j["pairs"] = pairs.size();
    if (pairs.size() < kMinPilotPairs) {
        j["error"] = "insufficient pilot data";
        return j;
    }
    try {
        const auto model = kind == ModelKind::identity ? PredictionModel::identity() : fit_prediction_model(pairs, kind);
        j["r2"] = estimate_r_squared(pairs, model);
        j["model"] = to_json(model);
    } catch (const Error& e) {
        j["error"] = e.what();
    }
    return j;
}

std::vector<double> sensitivity_grid(double r2, double span, double step) {
    std::vector<double> out;
    if (!(step > 0.0)) throw InputError("sensitivity step must be positive");
    const int count = static_cast<int>(std::floor(span / step + 1e-9));
    for (int k = count; k >= 0; --k) {
        const double v = std::round((r2 - k * step) * 1e12) / 1e12;
        if (v < -1e-12) continue;
        out.push_back(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

bool uniform_equivalent(std::span<const StratumSpec> strata) {
    return std::all_of(strata.begin(), strata.end(), [&](const StratumSpec& s) {
        return std::abs(s.r2 - strata.front().r2) < 1e-12 && s.cost == strata.front().cost;
    });
}

Json budget_verdict(const AllocationPlan& plan, std::int64_t budget) {
    try {
        return to_json(feasible_under_budget(plan, budget));
    } catch (const InfeasibleError& e) {
        Json j;
        j["budget"] = budget;
        j["total"] = plan.total_cost;
        j["feasible"] = false;
        j["deficit"] = plan.total_cost - static_cast<double>(budget);
        j["verdict"] = "infeasible, deficit " + format_double(plan.total_cost - static_cast<double>(budget));
        j["note"] = e.what();
        return j;
    }
}

Json savings_sweep(std::int64_t n_star, std::span<const StratumSpec> strata) {
    const std::int64_t N = total_size(strata);
    Json series = Json::array();
    double best = -1.0;
    double best_f1 = 0.0;
    for (int k = 1; k < 100; ++k) {
        const auto N1 = static_cast<std::int64_t>(std::llround(k * 0.01 * static_cast<double>(N)));
        if (N1 < 1 || N1 >= N) continue;
        std::vector<StratumSpec> s(strata.begin(), strata.end());
        s[0].size = N1;
        s[1].size = N - N1;
        const double f1 = static_cast<double>(N1) / static_cast<double>(N);
        const double v = stratification_savings(s, n_star);
        series.push_back({{"f1", f1}, {"savings", v}});
        if (v > best) {
            best = v;
            best_f1 = f1;
        }
    }
    Json j;
    j["max_savings"] = best;
    j["f1_at_max"] = best_f1;
    j["series"] = std::move(series);
    return j;
}

std::string curve_csv(std::int64_t n_star, std::span<const StratumSpec> strata, std::size_t points) {
    const auto grid = default_p1_grid(n_star, strata, points);
    const auto curve = allocation_curve(n_star, strata, grid);
    const double N1 = static_cast<double>(strata[0].size);
    const double N2 = static_cast<double>(strata[1].size);
    std::ostringstream out;
    out << "p1,p2,valid,expected_total\n";
    for (const auto& pt : curve.points) {
        out << format_double(pt.p1) << ',' << format_double(pt.p2) << ',' << (pt.valid ? "true" : "false") << ','
            << format_double(N1 * pt.p1 + N2 * pt.p2) << '\n';
    }
    return out.str();
}

template <class T>
void read_opt(const Json& j, const char* key, std::optional<T>& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

} // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const InfeasibleError*>(&e) != nullptr) return kExitInfeasible;
    return kExitInputError;
}

Json error_json(const std::exception& e) {
    std::string kind = "input";
    if (dynamic_cast<const InfeasibleError*>(&e) != nullptr) kind = "infeasible";
    else if (dynamic_cast<const NumericalError*>(&e) != nullptr) kind = "numerical";
    return {{"error", {{"kind", kind}, {"message", e.what()}}}};
}

Json cmd_pilot(std::span<const RatingRecord> records, const PilotParams& params) {
    std::vector<Pair> all;
    std::map<std::string, std::vector<Pair>> by_stratum;
    std::size_t skipped = 0;
    bool any_stratum = false;
    for (const auto& r : records) {
        if (!r.observed()) {
            ++skipped;
            continue;
        }
        const Pair p{r.llm_rating, *r.human_rating};
        all.push_back(p);
        if (r.stratum) any_stratum = true;
        by_stratum[stratum_key(r)].push_back(p);
    }
    if (all.size() < kMinPilotPairs) {
        throw InputError("pilot needs at least 3 complete pairs, found " + std::to_string(all.size()));
    }
    const auto model = params.model == ModelKind::identity ? PredictionModel::identity()
                                                           : fit_prediction_model(all, params.model);
    Json j;
    j["pairs"] = all.size();
    j["skipped_without_human"] = skipped;
    j["r2"] = estimate_r_squared(all, model);
    j["model"] = to_json(model);
    if (any_stratum) {
        Json strata = Json::array();
        for (const auto& [label, pairs] : by_stratum) {
            Json row{{"label", label}};
            row.update(pilot_entry(pairs, params.model));
            strata.push_back(std::move(row));
        }
        j["strata"] = std::move(strata);
    }
    return j;
}

DesignParams design_params_from_json(const Json& j, DesignParams p) {
    if (!j.is_object()) throw InputError("design config must be a JSON object");
    try {
        if (j.contains("n_star")) p.n_star = j.at("n_star").get<std::int64_t>();
        if (j.contains("r2")) p.r2 = j.at("r2").get<double>();
        read_opt(j, "N", p.N);
        read_opt(j, "n", p.n);
        read_opt(j, "budget", p.budget);
        p.min_human_count = j.value("min_human_count", p.min_human_count);
        p.sensitivity_span = j.value("sensitivity_span", p.sensitivity_span);
        p.sensitivity_step = j.value("sensitivity_step", p.sensitivity_step);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid design config: ") + e.what());
    }
    return p;
}

Json cmd_design(const DesignParams& params) {
    const DesignTarget target{params.n_star, params.r2};
    target.validate();
    if (params.N && params.n) throw InputError("give either N or n, not both");
    if (!params.N && !params.n && !params.budget) throw InputError("design needs one of N, n or budget");
    const DesignOptions options{params.min_human_count};

    // A budget without N is a cap on human ratings: solve for the LLM pool.
    const std::optional<std::int64_t> n = params.n ? params.n : (params.N ? std::nullopt : params.budget);
    auto solve = [&](const DesignTarget& t) {
        return n ? required_llm_N(t, *n) : required_human_n(t, *params.N, options);
    };

    Json j;
    Json inputs{{"n_star", params.n_star}, {"r2", params.r2}};
    if (params.N) inputs["N"] = *params.N;
    if (params.n) inputs["n"] = *params.n;
    if (params.budget) inputs["budget"] = *params.budget;
    j["inputs"] = std::move(inputs);
    j["solve_for"] = n ? "N" : "n";

    const auto solution = solve(target);
    j["solution"] = to_json(solution);
    j["floor_n"] = human_floor(target);
    j["achieved_n_eff"] = solution.achieved_n_eff;
    if (params.budget && params.N) {
        const bool ok = solution.n <= *params.budget;
        const auto gap = static_cast<double>(*params.budget - solution.n);
        j["budget"] = {{"budget", *params.budget},
                       {"feasible", ok},
                       {"verdict", ok ? "feasible, slack " + format_double(gap)
                                      : "infeasible, deficit " + format_double(-gap)}};
    }

    Json table = Json::array();
    for (double r2 : sensitivity_grid(params.r2, params.sensitivity_span, params.sensitivity_step)) {
        Json row{{"r2", r2}};
        try {
            const auto s = solve({params.n_star, r2});
            row["feasible"] = true;
            row["N"] = s.N;
            row["n"] = s.n;
            row["unrounded"] = s.unrounded;
        } catch (const InfeasibleError& e) {
            row["feasible"] = false;
            row["error"] = e.what();
        }
        table.push_back(std::move(row));
    }
    j["sensitivity"] = std::move(table);
    j["warnings"] = solution.warnings;
    return j;
}

AllocateParams allocate_params_from_json(const Json& j, AllocateParams p) {
    if (!j.is_object()) throw InputError("allocation config must be a JSON object");
    try {
        if (j.contains("n_star")) p.n_star = j.at("n_star").get<std::int64_t>();
        if (j.contains("strata")) {
            p.strata.clear();
            for (const auto& s : j.at("strata")) p.strata.push_back(stratum_from_json(s));
        }
        read_opt(j, "budget", p.budget);
        if (j.contains("custom_p")) p.custom_p = j.at("custom_p").get<std::vector<double>>();
        p.curve_points = j.value("curve_points", p.curve_points);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid allocation config: ") + e.what());
    }
    return p;
}

AllocateOutput cmd_allocate(const AllocateParams& params) {
    validate_strata(params.strata);
    const auto optimal = optimal_allocation(params.n_star, params.strata);
    const auto uniform = uniform_allocation(params.n_star, params.strata);

    AllocateOutput out;
    Json& j = out.report;
    Json strata = Json::array();
    for (const auto& s : params.strata) {
        Json row{{"label", s.label}, {"N", s.size}, {"r2", s.r2}};
        if (s.cost != 1.0) row["cost"] = s.cost;
        strata.push_back(std::move(row));
    }
    j["inputs"] = {{"n_star", params.n_star}, {"strata", std::move(strata)}};
    if (params.budget) j["inputs"]["budget"] = *params.budget;

    j["optimal"] = to_json(optimal);
    j["uniform"] = to_json(uniform);
    j["savings"] = stratification_savings(params.strata, params.n_star);
    j["uniform_equivalent"] = uniform_equivalent(params.strata);
    if (params.budget) j["budget"] = budget_verdict(optimal, *params.budget);
    if (!params.custom_p.empty()) {
        const auto custom = custom_allocation(params.n_star, params.strata, params.custom_p);
        j["custom"] = to_json(custom);
        if (params.budget) j["custom"]["budget"] = budget_verdict(custom, *params.budget);
    }
    if (params.strata.size() == 2) {
        j["savings_sweep"] = savings_sweep(params.n_star, params.strata);
        out.curve_csv = curve_csv(params.n_star, params.strata, params.curve_points);
    }
    return out;
}

Json cmd_estimate(std::span<const RatingRecord> records, const EstimateParams& params) {
    const Dataset data(std::vector<RatingRecord>(records.begin(), records.end()));
    auto fitted = params.model == ModelKind::identity
                      ? FittedModel{StratifiedModel(PredictionModel::identity()), {}}
                      : fit_stratified_model(data, params.model, params.per_stratum);
    auto estimate = dr_mean_estimate(data, fitted.model, {params.confidence_level});
    estimate.warnings.insert(estimate.warnings.begin(), fitted.warnings.begin(), fitted.warnings.end());

    Json j = to_json(estimate);
    const auto pairs = observed_pairs(data);
    if (pairs.size() >= kMinPilotPairs) {
        try {
            j["r2"] = estimate_r_squared(pairs, fitted.model.pooled());
        } catch (const Error& e) {
            j["r2"] = nullptr;
            j["warnings"].push_back(e.what());
        }
    } else {
        j["r2"] = nullptr;
    }
    j["model"] = to_json(fitted.model.pooled());
    if (!fitted.model.by_stratum().empty()) {
        Json by = Json::object();
        for (const auto& [label, m] : fitted.model.by_stratum()) by[label] = to_json(m);
        j["model_by_stratum"] = std::move(by);
    }
    // keep warnings last for readability
    auto warnings = j["warnings"];
    j.erase("warnings");
    j["warnings"] = std::move(warnings);
    return j;
}

SimulateOutput cmd_simulate(const SimConfig& config, bool compare) {
    config.validate();
    SimulateOutput out;
    out.report["config"] = to_json(config);
    const auto result = run_study(config);
    out.report["result"] = to_json(result);

    std::ostringstream csv;
    csv << "true_mean,mean_estimate,empirical_bias,empirical_variance,theoretical_variance,coverage,"
           "achieved_rho2,mc_se,empirical_n_eff,mean_observed,replications,failed\n";
    csv << format_double(result.true_mean) << ',' << format_double(result.mean_estimate) << ','
        << format_double(result.empirical_bias) << ',' << format_double(result.empirical_variance) << ','
        << format_double(result.theoretical_variance) << ',' << format_double(result.coverage) << ','
        << format_double(result.achieved_rho2) << ',' << format_double(result.mc_se) << ','
        << format_double(result.empirical_n_eff) << ',' << format_double(result.mean_observed) << ','
        << result.replications << ',' << result.failed << '\n';

    if (compare) {
        Json rows = Json::array();
        csv << "\nestimator,bias,variance,coverage,mc_se\n";
        for (const auto& s : compare_estimators(config)) {
            rows.push_back(to_json(s));
            csv << s.estimator << ',' << format_double(s.bias) << ',' << format_double(s.variance) << ','
                << format_double(s.coverage) << ',' << format_double(s.mc_se) << '\n';
        }
        out.report["comparison"] = std::move(rows);
    }
    out.csv = csv.str();
    return out;
}

std::string cmd_figures(int figure, const FigureParams& params) { return figure_csv(figure, params); }

} // namespace twostage
