#include "twostage/io.hpp"

#include "twostage/error.hpp"
#include "twostage/numeric.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace twostage {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::optional<double> parse_real(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::vector<std::string> split_on(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream in(text);
    while (std::getline(in, part, sep)) out.push_back(part);
    return out;
}

double require_real(const std::string& text, const std::string& what) {
    auto v = parse_real(text);
    if (!v) throw InputError("cannot parse " + what + " from '" + text + "'");
    return *v;
}

} // namespace

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    if (quoted) throw InputError("unterminated quoted field");
    fields.push_back(std::move(cur));
    return fields;
}

std::string csv_field(std::string_view text) {
    if (text.find_first_of(",\"\n\r") == std::string_view::npos && trim(text) == text) return std::string(text);
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::vector<RatingRecord> read_ratings_csv(std::istream& in, const RatingsReadOptions& options) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_csv_line(line);
            break;
        }
    }
    if (header.empty()) throw InputError("ratings file is empty: a header row is required");

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[std::string(trim(header[i]))] = i;
    for (const char* required : {"item_id", "llm_rating", "human_rating"}) {
        if (!col.contains(required)) {
            throw InputError(std::string("line 1: header is missing required column '") + required + "'");
        }
    }
    const auto idx = [&](const char* name) -> std::optional<std::size_t> {
        auto it = col.find(name);
        return it == col.end() ? std::nullopt : std::optional(it->second);
    };
    const auto item_col = *idx("item_id");
    const auto llm_col = *idx("llm_rating");
    const auto human_col = *idx("human_rating");
    const auto stratum_col = idx("stratum");
    const auto pi_col = idx("inclusion_prob");

    std::vector<RatingRecord> records;
    std::vector<std::string> errors;
    std::vector<std::size_t> missing_pi_lines;
    bool any_human = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        std::vector<std::string> f;
        try {
            f = split_csv_line(line);
        } catch (const InputError& e) {
            errors.push_back(where + e.what());
            continue;
        }
        if (f.size() != header.size()) {
            errors.push_back(where + "expected " + std::to_string(header.size()) + " fields, found " +
                             std::to_string(f.size()));
            continue;
        }
        RatingRecord r;
        r.item_id = f[item_col];
        if (stratum_col && !trim(f[*stratum_col]).empty()) r.stratum = std::string(trim(f[*stratum_col]));
        if (auto v = parse_real(f[llm_col])) {
            r.llm_rating = *v;
        } else {
            errors.push_back(where + "llm_rating '" + f[llm_col] + "' is not a finite real");
            continue;
        }
        if (!trim(f[human_col]).empty()) {
            if (auto v = parse_real(f[human_col])) {
                r.human_rating = *v;
                any_human = true;
            } else {
                errors.push_back(where + "human_rating '" + f[human_col] + "' is not a finite real");
                continue;
            }
        }
        if (pi_col && !trim(f[*pi_col]).empty()) {
            auto v = parse_real(f[*pi_col]);
            if (!v || !(*v > 0.0 && *v <= 1.0)) {
                errors.push_back(where + "inclusion_prob '" + f[*pi_col] + "' must be a real in (0, 1]");
                continue;
            }
            r.inclusion_prob = *v;
        } else {
            missing_pi_lines.push_back(line_no);
        }
        records.push_back(std::move(r));
    }
    if (options.require_inclusion_prob && any_human) {
        for (auto l : missing_pi_lines) {
            errors.push_back("line " + std::to_string(l) +
                             ": inclusion_prob is required when the file carries human ratings");
        }
    }
    if (!errors.empty()) {
        std::string msg = "invalid ratings file";
        for (const auto& e : errors) msg += "\n  " + e;
        throw InputError(msg);
    }
    if (records.empty()) throw InputError("no records");
    return records;
}

std::vector<RatingRecord> read_ratings_file(const std::filesystem::path& path, const RatingsReadOptions& options) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open ratings file '" + path.string() + "'");
    return read_ratings_csv(in, options);
}

void write_ratings_csv(std::ostream& out, std::span<const RatingRecord> records) {
    out << "item_id,stratum,llm_rating,human_rating,inclusion_prob\n";
    for (const auto& r : records) {
        out << csv_field(r.item_id) << ',' << (r.stratum ? csv_field(*r.stratum) : "") << ','
            << format_double(r.llm_rating) << ',' << (r.human_rating ? format_double(*r.human_rating) : "")
            << ',' << format_double(r.inclusion_prob) << '\n';
    }
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

Json to_json(const PredictionModel& m) {
    Json j;
    j["kind"] = to_string(m.kind);
    if (m.kind != ModelKind::identity) j["intercept"] = m.intercept;
    if (m.kind == ModelKind::linear) j["slope"] = m.slope;
    if (m.degenerate) j["degenerate"] = true;
    return j;
}

Json to_json(const DrEstimate& e) {
    Json j;
    j["theta_hat"] = e.theta_hat;
    j["std_error"] = e.std_error;
    j["variance"] = e.variance;
    j["ci_lower"] = e.ci_lower;
    j["ci_upper"] = e.ci_upper;
    j["confidence_level"] = e.confidence_level;
    j["n_eff"] = e.n_eff;
    j["sigma2_hat"] = e.sigma2_hat;
    j["sigma_e2_hat"] = e.sigma_e2_hat;
    j["N"] = e.N;
    j["n"] = e.n;
    j["warnings"] = e.warnings;
    return j;
}

Json to_json(const DesignSolution& s) {
    Json j;
    j["N"] = s.N;
    j["n"] = s.n;
    j["pi"] = s.pi;
    j["unrounded"] = s.unrounded;
    j["floor_n"] = s.floor_n;
    j["achieved_n_eff"] = s.achieved_n_eff;
    j["warnings"] = s.warnings;
    return j;
}

Json to_json(const AllocationPlan& p) {
    Json j;
    j["kind"] = to_string(p.kind);
    j["n_star"] = p.n_star;
    Json strata = Json::array();
    for (std::size_t s = 0; s < p.strata.size(); ++s) {
        Json row;
        row["label"] = p.strata[s].label;
        row["N"] = p.strata[s].size;
        row["r2"] = p.strata[s].r2;
        if (p.strata[s].cost != 1.0) row["cost"] = p.strata[s].cost;
        row["p"] = p.allocations[s].p;
        row["n"] = p.allocations[s].n;
        if (p.allocations[s].clamped) row["clamped"] = true;
        strata.push_back(std::move(row));
    }
    j["strata"] = std::move(strata);
    j["human_total"] = p.human_total;
    j["total_cost"] = p.total_cost;
    j["unrounded_total"] = p.unrounded_total;
    j["achieved_n_eff"] = p.achieved_n_eff;
    j["warnings"] = p.warnings;
    return j;
}

Json to_json(const BudgetReport& b) {
    Json j;
    j["budget"] = b.budget;
    j["total"] = b.total;
    j["feasible"] = b.feasible;
    if (b.feasible) {
        j["slack"] = b.slack;
        j["verdict"] = "feasible, slack " + format_double(b.slack);
    } else {
        j["deficit"] = b.deficit;
        j["verdict"] = "infeasible, deficit " + format_double(b.deficit);
        if (b.inflation_factor) {
            j["inflation_factor"] = *b.inflation_factor;
            Json scaled = Json::array();
            for (const auto& s : b.scaled_strata) scaled.push_back({{"label", s.label}, {"N", s.size}});
            j["scaled_strata"] = std::move(scaled);
            if (b.scaled_plan) j["scaled_plan"] = to_json(*b.scaled_plan);
        }
    }
    return j;
}

Json to_json(const SimConfig& c) {
    Json j;
    j["N"] = c.N;
    j["true_mean"] = c.true_mean;
    j["true_sd"] = c.true_sd;
    j["rho"] = c.rho;
    j["distribution"] = to_string(c.distribution);
    j["likert_levels"] = c.likert_levels;
    Json strata = Json::array();
    for (const auto& s : c.strata) {
        Json row;
        row["label"] = s.label;
        row["proportion"] = s.proportion;
        row["pi"] = s.pi;
        if (s.rho) row["rho"] = *s.rho;
        strata.push_back(std::move(row));
    }
    j["strata"] = std::move(strata);
    j["model"] = {
        {"kind", to_string(c.model.kind)},   {"fit", c.model.fit},
        {"intercept", c.model.intercept},    {"slope", c.model.slope},
        {"bias_offset", c.model.bias_offset}, {"per_stratum", c.model.per_stratum},
    };
    j["replications"] = c.replications;
    j["seed"] = c.seed;
    j["confidence_level"] = c.confidence_level;
    return j;
}

SimConfig sim_config_from_json(const Json& j, SimConfig c) {
    if (!j.is_object()) throw InputError("simulation config must be a JSON object");
    try {
        if (j.contains("N")) c.N = j.at("N").get<std::int64_t>();
        if (j.contains("true_mean")) c.true_mean = j.at("true_mean").get<double>();
        if (j.contains("true_sd")) c.true_sd = j.at("true_sd").get<double>();
        if (j.contains("rho")) c.rho = j.at("rho").get<double>();
        if (j.contains("distribution")) c.distribution = parse_distribution(j.at("distribution").get<std::string>());
        if (j.contains("likert_levels")) c.likert_levels = j.at("likert_levels").get<int>();
        if (j.contains("pi")) {
            c.strata = {SimStratum{}};
            c.strata.front().pi = j.at("pi").get<double>();
        }
        if (j.contains("strata")) {
            c.strata.clear();
            for (const auto& s : j.at("strata")) {
                SimStratum st;
                st.label = s.value("label", std::string("s") + std::to_string(c.strata.size() + 1));
                st.proportion = s.value("proportion", 1.0);
                st.pi = s.at("pi").get<double>();
                if (s.contains("rho")) st.rho = s.at("rho").get<double>();
                c.strata.push_back(std::move(st));
            }
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            if (m.contains("kind")) c.model.kind = parse_model_kind(m.at("kind").get<std::string>());
            c.model.fit = m.value("fit", c.model.fit);
            c.model.intercept = m.value("intercept", c.model.intercept);
            c.model.slope = m.value("slope", c.model.slope);
            c.model.bias_offset = m.value("bias_offset", c.model.bias_offset);
            c.model.per_stratum = m.value("per_stratum", c.model.per_stratum);
        }
        if (j.contains("replications")) c.replications = j.at("replications").get<std::int64_t>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("confidence_level")) c.confidence_level = j.at("confidence_level").get<double>();
        if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid simulation config: ") + e.what());
    }
    return c;
}

Json to_json(const SimResult& r) {
    Json j;
    j["true_mean"] = r.true_mean;
    j["mean_estimate"] = r.mean_estimate;
    j["empirical_bias"] = r.empirical_bias;
    j["empirical_variance"] = r.empirical_variance;
    j["theoretical_variance"] = r.theoretical_variance;
    j["variance_ratio"] = r.theoretical_variance > 0.0 ? r.empirical_variance / r.theoretical_variance : 0.0;
    j["coverage"] = r.coverage;
    j["achieved_rho2"] = r.achieved_rho2;
    j["mc_se"] = r.mc_se;
    j["empirical_n_eff"] = r.empirical_n_eff;
    j["mean_observed"] = r.mean_observed;
    j["replications"] = r.replications;
    j["failed"] = r.failed;
    return j;
}

Json to_json(const EstimatorSummary& s) {
    return {{"estimator", s.estimator}, {"bias", s.bias}, {"variance", s.variance},
            {"coverage", s.coverage},   {"mc_se", s.mc_se}};
}

StratumSpec stratum_from_json(const Json& j) {
    try {
        StratumSpec s;
        s.label = j.at("label").get<std::string>();
        s.size = j.contains("N") ? j.at("N").get<std::int64_t>() : j.at("size").get<std::int64_t>();
        s.r2 = j.at("r2").get<double>();
        s.cost = j.value("cost", 1.0);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid stratum entry: ") + e.what());
    }
}

StratumSpec parse_stratum_spec(const std::string& text) {
    const auto parts = split_on(text, ':');
    if (parts.size() < 3 || parts.size() > 4) {
        throw InputError("stratum '" + text + "' must look like label:N:r2[:cost]");
    }
    StratumSpec s;
    s.label = parts[0];
    const double size = require_real(parts[1], "stratum size");
    if (size != std::floor(size)) throw InputError("stratum size must be an integer in '" + text + "'");
    s.size = static_cast<std::int64_t>(size);
    s.r2 = require_real(parts[2], "stratum r2");
    if (parts.size() == 4) s.cost = require_real(parts[3], "stratum cost");
    return s;
}

SimStratum parse_sim_stratum(const std::string& text) {
    const auto parts = split_on(text, ':');
    if (parts.size() < 3 || parts.size() > 4) {
        throw InputError("stratum '" + text + "' must look like label:proportion:pi[:rho]");
    }
    SimStratum s;
    s.label = parts[0];
    s.proportion = require_real(parts[1], "stratum proportion");
    s.pi = require_real(parts[2], "stratum pi");
    if (parts.size() == 4) s.rho = require_real(parts[3], "stratum rho");
    return s;
}

} // namespace twostage
