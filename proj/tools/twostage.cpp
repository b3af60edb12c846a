// twostage: plan, estimate and validate two-stage LLM/human rating studies.

#include "twostage/commands.hpp"
#include "twostage/error.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

using namespace twostage;

namespace {

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
}

void write_report(const std::string& path, const Json& report) { write_text(path, report.dump(2) + "\n"); }

Json load_config(const std::string& path) { return path.empty() ? Json::object() : read_json_file(path); }

bool given(const CLI::Option* opt) { return opt->count() > 0; }

template <class T>
void override_with(const CLI::Option* opt, T& target, const T& value) {
    if (given(opt)) target = value;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage LLM/human rating study planner and estimator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output;
    app.add_option("--config", config_path, "JSON config file; explicit flags take precedence");
    app.add_option("-o,--output", output, "Report path (default stdout)");

    // pilot
    auto* pilot = app.add_subcommand("pilot", "Estimate R² from a pilot ratings file");
    std::string pilot_file;
    std::string pilot_model = "linear";
    pilot->add_option("ratings", pilot_file, "Ratings CSV with complete pairs")->required();
    pilot->add_option("--model", pilot_model, "identity, linear or constant");

    // design
    auto* design = app.add_subcommand("design", "Solve the single-rate design");
    DesignParams dp;
    std::int64_t d_N = 0, d_n = 0, d_budget = 0;
    auto* o_dnstar = design->add_option("--n-star", dp.n_star, "Target effective sample size");
    auto* o_dr2 = design->add_option("--r2", dp.r2, "Planning R²");
    auto* o_dN = design->add_option("--N", d_N, "LLM pool size (solve for n)");
    auto* o_dn = design->add_option("--n", d_n, "Human count (solve for N)");
    auto* o_db = design->add_option("--budget", d_budget, "Human rating budget");
    auto* o_dmin = design->add_option("--min-human", dp.min_human_count, "Minimum human count");
    auto* o_dspan = design->add_option("--sensitivity-span", dp.sensitivity_span, "R² span of the sensitivity table");
    auto* o_dstep = design->add_option("--sensitivity-step", dp.sensitivity_step, "R² step of the sensitivity table");

    // allocate
    auto* allocate = app.add_subcommand("allocate", "Stratified allocation and budget check");
    AllocateParams ap;
    std::vector<std::string> a_strata;
    std::int64_t a_budget = 0;
    std::string curve_out;
    auto* o_anstar = allocate->add_option("--n-star", ap.n_star, "Target effective sample size");
    auto* o_astrata = allocate->add_option("--stratum", a_strata, "label:N:r2[:cost], repeatable");
    auto* o_ab = allocate->add_option("--budget", a_budget, "Human rating budget");
    auto* o_ap = allocate->add_option("--custom-p", ap.custom_p, "Rates to score, one per stratum");
    auto* o_apts = allocate->add_option("--curve-points", ap.curve_points, "Points on the allocation curve");
    allocate->add_option("--curve-out", curve_out, "Allocation curve CSV path");

    // estimate
    auto* estimate = app.add_subcommand("estimate", "Doubly robust estimate from a ratings file");
    std::string est_file;
    std::string est_model = "linear";
    EstimateParams ep;
    estimate->add_option("ratings", est_file, "Ratings CSV")->required();
    estimate->add_option("--model", est_model, "identity, linear or constant");
    estimate->add_option("--level", ep.confidence_level, "Confidence level");
    estimate->add_flag("--per-stratum", ep.per_stratum, "Fit one model per stratum");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo validation study");
    SimConfig sc;
    std::vector<std::string> s_strata;
    double s_pi = 1.0;
    std::string s_dist = "gaussian", s_model = "linear", csv_out;
    bool compare = false;
    bool s_fit = true, s_per = true;
    auto* o_sN = simulate->add_option("--N", sc.N, "Population size");
    auto* o_smean = simulate->add_option("--true-mean", sc.true_mean, "Mean of the human ratings");
    auto* o_ssd = simulate->add_option("--true-sd", sc.true_sd, "SD of the human ratings");
    auto* o_srho = simulate->add_option("--rho", sc.rho, "LLM/human correlation");
    auto* o_sdist = simulate->add_option("--distribution", s_dist, "gaussian or likert");
    auto* o_slev = simulate->add_option("--levels", sc.likert_levels, "Likert levels");
    auto* o_spi = simulate->add_option("--pi", s_pi, "Inclusion probability (single stratum)");
    auto* o_sstrata = simulate->add_option("--stratum", s_strata, "label:proportion:pi[:rho], repeatable");
    auto* o_sreps = simulate->add_option("--replications", sc.replications, "Replications");
    auto* o_sseed = simulate->add_option("--seed", sc.seed, "Master seed");
    auto* o_slevel = simulate->add_option("--level", sc.confidence_level, "Confidence level");
    auto* o_smodel = simulate->add_option("--model", s_model, "identity, linear or constant");
    auto* o_sfit = simulate->add_option("--fit", s_fit, "Fit the model per replication (true/false)");
    auto* o_sint = simulate->add_option("--intercept", sc.model.intercept, "Fixed model intercept");
    auto* o_sslope = simulate->add_option("--slope", sc.model.slope, "Fixed model slope");
    auto* o_soff = simulate->add_option("--bias-offset", sc.model.bias_offset, "Offset added to predictions");
    auto* o_sper = simulate->add_option("--per-stratum", s_per, "Fit per stratum (true/false)");
    auto* o_sthr = simulate->add_option("--threads", sc.threads, "Worker threads, 0 for all cores");
    simulate->add_flag("--compare", compare, "Also run prediction-only and IPW estimators");
    simulate->add_option("--csv-out", csv_out, "Result table CSV path");

    // figures
    auto* figures = app.add_subcommand("figures", "Figure data as CSV");
    int figure_id = 0;
    FigureParams fp;
    figures->add_option("figure", figure_id, "2, 3, 4 or 5")->required();
    auto* o_fnstar = figures->add_option("--n-star", fp.n_star, "Target effective sample size (figures 3, 4, 5)");
    auto* o_fN1 = figures->add_option("--N1", fp.N1, "Stratum 1 size (figure 4)");
    auto* o_fN2 = figures->add_option("--N2", fp.N2, "Stratum 2 size (figure 4)");
    auto* o_fr1 = figures->add_option("--r1-squared", fp.r1_squared, "Stratum 1 r²");
    auto* o_fr2 = figures->add_option("--r2-squared", fp.r2_squared, "Stratum 2 r²");
    std::int64_t f_budget = 0;
    auto* o_fb = figures->add_option("--budget", f_budget, "Budget line (figure 4)");
    auto* o_fN = figures->add_option("--N", fp.N, "Total pool size (figure 5)");
    auto* o_fstep = figures->add_option("--f1-step", fp.f1_step, "Share step (figure 5)");
    auto* o_fpts = figures->add_option("--curve-points", fp.curve_points, "Points on the allocation curve");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInputError;
    }

    try {
        const Json config = load_config(config_path);

        if (*pilot) {
            const auto records = read_ratings_file(pilot_file, {false});
            write_report(output, cmd_pilot(records, {parse_model_kind(pilot_model)}));
            return kExitOk;
        }

        if (*design) {
            DesignParams p = design_params_from_json(config);
            override_with(o_dnstar, p.n_star, dp.n_star);
            override_with(o_dr2, p.r2, dp.r2);
            if (given(o_dN)) p.N = d_N;
            if (given(o_dn)) p.n = d_n;
            if (given(o_db)) p.budget = d_budget;
            override_with(o_dmin, p.min_human_count, dp.min_human_count);
            override_with(o_dspan, p.sensitivity_span, dp.sensitivity_span);
            override_with(o_dstep, p.sensitivity_step, dp.sensitivity_step);
            const Json report = cmd_design(p);
            write_report(output, report);
            if (report.contains("budget") && !report["budget"]["feasible"].get<bool>()) return kExitInfeasible;
            return kExitOk;
        }

        if (*allocate) {
            AllocateParams p = allocate_params_from_json(config);
            override_with(o_anstar, p.n_star, ap.n_star);
            if (given(o_astrata)) {
                p.strata.clear();
                for (const auto& s : a_strata) p.strata.push_back(parse_stratum_spec(s));
            }
            if (given(o_ab)) p.budget = a_budget;
            override_with(o_ap, p.custom_p, ap.custom_p);
            override_with(o_apts, p.curve_points, ap.curve_points);
            const auto out = cmd_allocate(p);
            write_report(output, out.report);
            if (!curve_out.empty() && !out.curve_csv.empty()) write_text(curve_out, out.curve_csv);
            if (out.report.contains("budget") && !out.report["budget"]["feasible"].get<bool>()) {
                return kExitInfeasible;
            }
            return kExitOk;
        }

        if (*estimate) {
            if (config.contains("model")) est_model = config["model"].get<std::string>();
            ep.model = parse_model_kind(est_model);
            const auto records = read_ratings_file(est_file);
            write_report(output, cmd_estimate(records, ep));
            return kExitOk;
        }

        if (*simulate) {
            SimConfig c = sim_config_from_json(config);
            override_with(o_sN, c.N, sc.N);
            override_with(o_smean, c.true_mean, sc.true_mean);
            override_with(o_ssd, c.true_sd, sc.true_sd);
            override_with(o_srho, c.rho, sc.rho);
            if (given(o_sdist)) c.distribution = parse_distribution(s_dist);
            override_with(o_slev, c.likert_levels, sc.likert_levels);
            if (given(o_spi)) c.strata = {SimStratum{"all", 1.0, s_pi, std::nullopt}};
            if (given(o_sstrata)) {
                c.strata.clear();
                for (const auto& s : s_strata) c.strata.push_back(parse_sim_stratum(s));
            }
            override_with(o_sreps, c.replications, sc.replications);
            override_with(o_sseed, c.seed, sc.seed);
            override_with(o_slevel, c.confidence_level, sc.confidence_level);
            if (given(o_smodel)) c.model.kind = parse_model_kind(s_model);
            override_with(o_sfit, c.model.fit, s_fit);
            override_with(o_sint, c.model.intercept, sc.model.intercept);
            override_with(o_sslope, c.model.slope, sc.model.slope);
            override_with(o_soff, c.model.bias_offset, sc.model.bias_offset);
            override_with(o_sper, c.model.per_stratum, s_per);
            override_with(o_sthr, c.threads, sc.threads);
            const auto out = cmd_simulate(c, compare || config.value("compare", false));
            write_report(output, out.report);
            if (!csv_out.empty()) write_text(csv_out, out.csv);
            return kExitOk;
        }

        if (*figures) {
            FigureParams p = figure_id == 5 ? figure5_defaults() : FigureParams{};
            override_with(o_fnstar, p.n_star, fp.n_star);
            override_with(o_fN1, p.N1, fp.N1);
            override_with(o_fN2, p.N2, fp.N2);
            override_with(o_fr1, p.r1_squared, fp.r1_squared);
            override_with(o_fr2, p.r2_squared, fp.r2_squared);
            if (given(o_fb)) p.budget = f_budget;
            override_with(o_fN, p.N, fp.N);
            override_with(o_fstep, p.f1_step, fp.f1_step);
            override_with(o_fpts, p.curve_points, fp.curve_points);
            write_text(output, cmd_figures(figure_id, p));
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::cout << error_json(e).dump(2) << "\n";
        return exit_code_for(e);
    }
    return kExitInputError;
}
