#include "twostage/simulate.hpp"

#include "twostage/error.hpp"
#include "twostage/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <thread>

namespace twostage {

namespace {

// Seed streams under the master seed.
constexpr std::uint64_t kPopulationStream = 1;
constexpr std::uint64_t kSamplingStream = 2; // +1 for the single resample
constexpr std::uint64_t kCalibrationStream = 99;

constexpr std::size_t kLikertPilotSize = 100000;

int likert_level(double z, int levels) {
    const double u = 0.5 * std::erfc(-z / std::sqrt(2.0));
    return std::min(levels, 1 + static_cast<int>(u * levels));
}

double correlation_of(std::span<const double> a, std::span<const double> b) {
    const double n = static_cast<double>(a.size());
    std::vector<double> tmp(a.begin(), a.end());
    const double ma = pairwise_sum(tmp) / n;
    tmp.assign(b.begin(), b.end());
    const double mb = pairwise_sum(tmp) / n;
    std::vector<double> sab(a.size()), saa(a.size()), sbb(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab[i] = da * db;
        saa[i] = da * da;
        sbb[i] = db * db;
    }
    const double denom = std::sqrt(pairwise_sum(saa) * pairwise_sum(sbb));
    return denom > 0.0 ? pairwise_sum(sab) / denom : 0.0;
}

// Everything a replication needs that does not change between replications.
struct Prepared {
    SimConfig config;
    std::vector<std::int64_t> sizes;
    std::vector<double> rho;        // target correlation per stratum
    std::vector<double> latent_rho; // generator correlation per stratum
    std::vector<double> achieved_rho;
    double mean = 0.0;
    double sd = 1.0;
};

Prepared prepare(const SimConfig& config) {
    config.validate();
    Prepared p;
    p.config = config;
    p.sizes = stratum_sizes(config);
    std::map<double, LikertCalibration> calibrated;
    for (const auto& s : config.strata) {
        const double target = s.rho.value_or(config.rho);
        p.rho.push_back(target);
        if (config.distribution == Distribution::gaussian) {
            p.latent_rho.push_back(target);
            p.achieved_rho.push_back(target);
            continue;
        }
        auto it = calibrated.find(target);
        if (it == calibrated.end()) {
            it = calibrated
                     .emplace(target, calibrate_likert(target, config.likert_levels,
                                                       derive_seed(config.seed, kCalibrationStream, 0)))
                     .first;
        }
        p.latent_rho.push_back(it->second.latent_rho);
        p.achieved_rho.push_back(it->second.achieved_rho);
    }
    if (config.distribution == Distribution::gaussian) {
        p.mean = config.true_mean;
        p.sd = config.true_sd;
    } else {
        const double L = config.likert_levels;
        p.mean = (L + 1.0) / 2.0;
        p.sd = std::sqrt((L * L - 1.0) / 12.0);
    }
    return p;
}

Population draw(const Prepared& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Population pop;
    const auto N = static_cast<std::size_t>(p.config.N);
    pop.x.reserve(N);
    pop.y.reserve(N);
    pop.stratum.reserve(N);
    const bool likert = p.config.distribution == Distribution::likert;
    for (std::size_t s = 0; s < p.sizes.size(); ++s) {
        const double r = p.latent_rho[s];
        const double resid = std::sqrt(std::max(0.0, 1.0 - r * r));
        for (std::int64_t i = 0; i < p.sizes[s]; ++i) {
            const double z1 = normal(rng);
            const double z2 = normal(rng);
            const double zx = r * z1 + resid * z2;
            if (likert) {
                pop.y.push_back(likert_level(z1, p.config.likert_levels));
                pop.x.push_back(likert_level(zx, p.config.likert_levels));
            } else {
                pop.y.push_back(p.mean + p.sd * z1);
                pop.x.push_back(p.mean + p.sd * zx);
            }
            pop.stratum.push_back(static_cast<std::uint32_t>(s));
        }
    }
    return pop;
}

// E[(Y - (a + bX))²] when X and Y share mean mu, spread sd and correlation rho.
double residual_second_moment(double mu, double sd, double rho, double a, double b) {
    const double bias = mu * (1.0 - b) - a;
    return bias * bias + sd * sd * (1.0 - 2.0 * b * rho + b * b);
}

double theoretical_variance_of(const Prepared& p) {
    const auto& cfg = p.config;
    const double N = static_cast<double>(cfg.N);
    double pooled_slope = 0.0;
    for (std::size_t s = 0; s < p.sizes.size(); ++s) {
        pooled_slope += static_cast<double>(p.sizes[s]) / N * p.achieved_rho[s];
    }
    const bool per_stratum = cfg.model.per_stratum && cfg.strata.size() > 1;

    double penalty = 0.0;
    for (std::size_t s = 0; s < p.sizes.size(); ++s) {
        const double rho = p.achieved_rho[s];
        // The fitted model converges to the population least-squares line.
        double a = 0.0;
        double b = 0.0;
        switch (cfg.model.kind) {
        case ModelKind::identity:
            b = 1.0;
            break;
        case ModelKind::constant:
            a = cfg.model.fit ? p.mean : cfg.model.intercept;
            break;
        case ModelKind::linear:
            if (cfg.model.fit) {
                b = per_stratum ? rho : pooled_slope;
                a = p.mean * (1.0 - b);
            } else {
                a = cfg.model.intercept;
                b = cfg.model.slope;
            }
            break;
        }
        a += cfg.model.bias_offset;
        const double e2 = residual_second_moment(p.mean, p.sd, rho, a, b);
        const double f = static_cast<double>(p.sizes[s]) / N;
        penalty += f * (1.0 / cfg.strata[s].pi - 1.0) * e2;
    }
    return (p.sd * p.sd + penalty) / N;
}

Dataset sample(const Population& pop, const SimConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const bool labelled = config.strata.size() > 1;
    std::vector<RatingRecord> records(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const auto& st = config.strata[pop.stratum[i]];
        auto& r = records[i];
        r.llm_rating = pop.x[i];
        r.inclusion_prob = st.pi;
        if (unif(rng) < st.pi) r.human_rating = pop.y[i];
        if (labelled) r.stratum = st.label;
    }
    return Dataset(std::move(records));
}

bool usable(const Dataset& data, const SimConfig& config) {
    if (data.observed_count() < 2) return false;
    const bool per_stratum_fit = config.model.fit && config.model.kind != ModelKind::identity &&
                                 config.model.per_stratum && config.strata.size() > 1;
    if (!per_stratum_fit) return true;
    std::map<std::string, int> counts;
    for (const auto& r : data.records()) {
        if (r.observed()) ++counts[*r.stratum];
    }
    for (const auto& s : config.strata) {
        if (counts[s.label] < 2) return false;
    }
    return true;
}

StratifiedModel build_model(const Dataset& data, const SimConfig& config) {
    const auto& spec = config.model;
    StratifiedModel model = PredictionModel::identity();
    if (spec.fit) {
        model = fit_stratified_model(data, spec.kind, spec.per_stratum && config.strata.size() > 1).model;
    } else if (spec.kind == ModelKind::linear) {
        model = PredictionModel::linear(spec.intercept, spec.slope);
    } else if (spec.kind == ModelKind::constant) {
        model = PredictionModel::constant(spec.intercept);
    }
    return with_offset(model, spec.bias_offset);
}

struct Outcome {
    bool ok = false;
    double rho2 = 0.0;
    double observed = 0.0;
    double dr = 0.0;
    bool dr_covered = false;
    double pred = 0.0;
    bool pred_covered = false;
    double ipw = 0.0;
    bool ipw_covered = false;
};

Outcome replicate(const Prepared& p, std::int64_t rep, bool compare, double z) {
    const auto& cfg = p.config;
    const auto index = static_cast<std::uint64_t>(rep);
    const Population pop = draw(p, derive_seed(cfg.seed, kPopulationStream, index));
    Outcome out;
    out.rho2 = std::pow(pop.correlation(), 2);

    std::optional<Dataset> data;
    for (std::uint64_t attempt = 0; attempt < 2 && !data; ++attempt) {
        Dataset d = sample(pop, cfg, derive_seed(cfg.seed, kSamplingStream + attempt, index));
        if (usable(d, cfg)) data.emplace(std::move(d));
    }
    if (!data) return out;

    const StratifiedModel model = build_model(*data, cfg);
    const auto est = dr_mean_estimate(*data, model, EstimateOptions{cfg.confidence_level});
    const double truth = p.mean;
    out.ok = true;
    out.observed = static_cast<double>(data->observed_count());
    out.dr = est.theta_hat;
    out.dr_covered = est.ci_lower <= truth && truth <= est.ci_upper;
    if (compare) {
        const auto pred = prediction_only_estimate(*data, model);
        out.pred = pred.theta;
        out.pred_covered = std::abs(pred.theta - truth) <= z * std::sqrt(pred.variance);
        const auto ipw = ipw_estimate(*data);
        out.ipw = ipw.theta;
        out.ipw_covered = std::abs(ipw.theta - truth) <= z * std::sqrt(ipw.variance);
    }
    return out;
}

std::vector<Outcome> run_replications(const Prepared& p, bool compare) {
    const double z = normal_critical_value(p.config.confidence_level);
    const auto reps = static_cast<std::size_t>(p.config.replications);
    std::vector<Outcome> outcomes(reps);
    unsigned threads = p.config.threads ? p.config.threads : std::thread::hardware_concurrency();
    threads = std::clamp<unsigned>(threads, 1, static_cast<unsigned>(std::min<std::size_t>(reps, 256)));

    auto work = [&](unsigned t) {
        for (std::size_t r = t; r < reps; r += threads) {
            outcomes[r] = replicate(p, static_cast<std::int64_t>(r), compare, z);
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    }
    return outcomes;
}

struct Summary {
    double mean = 0.0;
    double variance = 0.0;
    std::int64_t count = 0;
};

template <class Get>
Summary summarize(const std::vector<Outcome>& outcomes, Get get) {
    std::vector<double> values;
    for (const auto& o : outcomes) {
        if (o.ok) values.push_back(get(o));
    }
    Summary s;
    s.count = static_cast<std::int64_t>(values.size());
    if (values.empty()) return s;
    s.mean = pairwise_sum(values) / static_cast<double>(values.size());
    if (values.size() > 1) {
        for (double& v : values) v = (v - s.mean) * (v - s.mean);
        s.variance = pairwise_sum(values) / static_cast<double>(values.size() - 1);
    }
    return s;
}

template <class Get>
double coverage_of(const std::vector<Outcome>& outcomes, Get covered) {
    std::int64_t hits = 0;
    for (const auto& o : outcomes) hits += (o.ok && covered(o)) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

} // namespace

std::string to_string(Distribution d) {
    return d == Distribution::gaussian ? "gaussian" : "likert";
}

Distribution parse_distribution(const std::string& text) {
    if (text == "gaussian") return Distribution::gaussian;
    if (text == "likert") return Distribution::likert;
    throw InputError("unknown distribution '" + text + "' (expected gaussian or likert)");
}

void SimConfig::validate() const {
    if (N < 2) throw InputError("simulation needs N >= 2");
    if (!(true_sd > 0.0) || !std::isfinite(true_sd)) throw InputError("true_sd must be positive");
    if (!std::isfinite(true_mean)) throw InputError("true_mean must be finite");
    auto check_rho = [](double r) {
        if (!(r >= -1.0 && r <= 1.0)) throw InputError("rho must lie in [-1, 1]");
    };
    check_rho(rho);
    if (distribution == Distribution::likert && likert_levels < 2) {
        throw InputError("likert needs at least 2 levels");
    }
    if (strata.empty()) throw InputError("simulation needs at least one stratum");
    double share = 0.0;
    for (const auto& s : strata) {
        if (!(s.proportion > 0.0)) throw InputError("stratum proportions must be positive");
        if (!(s.pi > 0.0 && s.pi <= 1.0)) throw InputError("stratum pi must lie in (0, 1]");
        if (s.rho) check_rho(*s.rho);
        share += s.proportion;
    }
    if (std::abs(share - 1.0) > 1e-6) throw InputError("stratum proportions must sum to 1");
    if (replications < 1) throw InputError("replications must be at least 1");
    if (!(confidence_level > 0.0 && confidence_level < 1.0)) {
        throw InputError("confidence level must lie in (0, 1)");
    }
    if (model.kind == ModelKind::linear && !model.fit && !std::isfinite(model.slope)) {
        throw InputError("model slope must be finite");
    }
    for (auto n : stratum_sizes(*this)) {
        if (n < 1) throw InputError("every stratum must receive at least one item");
    }
}

std::vector<std::int64_t> stratum_sizes(const SimConfig& config) {
    std::vector<std::int64_t> sizes;
    std::int64_t used = 0;
    for (std::size_t s = 0; s + 1 < config.strata.size(); ++s) {
        sizes.push_back(std::llround(config.strata[s].proportion * static_cast<double>(config.N)));
        used += sizes.back();
    }
    sizes.push_back(config.N - used);
    return sizes;
}

double Population::correlation() const { return correlation_of(x, y); }

Population generate_population(const SimConfig& config, std::uint64_t seed) {
    return draw(prepare(config), seed);
}

LikertCalibration calibrate_likert(double target_rho, int levels, std::uint64_t seed) {
    if (levels < 2) throw InputError("likert needs at least 2 levels");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> z1(kLikertPilotSize), z2(kLikertPilotSize);
    for (std::size_t i = 0; i < kLikertPilotSize; ++i) {
        z1[i] = normal(rng);
        z2[i] = normal(rng);
    }
    std::vector<double> y(kLikertPilotSize), x(kLikertPilotSize);
    for (std::size_t i = 0; i < kLikertPilotSize; ++i) y[i] = likert_level(z1[i], levels);
    auto discrete = [&](double r) {
        const double resid = std::sqrt(std::max(0.0, 1.0 - r * r));
        for (std::size_t i = 0; i < kLikertPilotSize; ++i) x[i] = likert_level(r * z1[i] + resid * z2[i], levels);
        return correlation_of(x, y);
    };

    double lo = -1.0;
    double hi = 1.0;
    if (target_rho >= discrete(hi)) return {hi, discrete(hi)};
    if (target_rho <= discrete(lo)) return {lo, discrete(lo)};
    for (int i = 0; i < 40; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (discrete(mid) < target_rho) lo = mid; else hi = mid;
    }
    const double latent = 0.5 * (lo + hi);
    return {latent, discrete(latent)};
}

Dataset sample_second_stage(const Population& pop, const SimConfig& config, std::uint64_t seed) {
    return sample(pop, config, seed);
}

double theoretical_variance(const SimConfig& config) { return theoretical_variance_of(prepare(config)); }

SimResult run_study(const SimConfig& config) {
    const Prepared p = prepare(config);
    const auto outcomes = run_replications(p, false);

    SimResult r;
    r.true_mean = p.mean;
    r.true_variance = p.sd * p.sd;
    r.replications = config.replications;
    const auto dr = summarize(outcomes, [](const Outcome& o) { return o.dr; });
    r.failed = config.replications - dr.count;
    r.mean_estimate = dr.mean;
    r.empirical_bias = dr.mean - p.mean;
    r.empirical_variance = dr.variance;
    r.theoretical_variance = theoretical_variance_of(p);
    r.coverage = coverage_of(outcomes, [](const Outcome& o) { return o.dr_covered; });
    r.mc_se = dr.count > 0 ? std::sqrt(dr.variance / static_cast<double>(dr.count)) : 0.0;
    r.empirical_n_eff = dr.variance > 0.0 ? r.true_variance / dr.variance : 0.0;
    r.mean_observed = summarize(outcomes, [](const Outcome& o) { return o.observed; }).mean;

    std::vector<double> rho2;
    for (const auto& o : outcomes) rho2.push_back(o.rho2);
    r.achieved_rho2 = pairwise_sum(rho2) / static_cast<double>(rho2.size());
    return r;
}

PointEstimate prediction_only_estimate(const Dataset& data, const StratifiedModel& model) {
    const auto records = data.records();
    std::vector<double> z(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        z[i] = r.observed() ? *r.human_rating : model.predict(r);
    }
    const double N = static_cast<double>(z.size());
    PointEstimate e;
    e.theta = pairwise_sum(z) / N;
    for (double& v : z) v = (v - e.theta) * (v - e.theta);
    e.variance = pairwise_sum(z) / N / N;
    return e;
}

PointEstimate ipw_estimate(const Dataset& data) {
    if (data.observed_count() == 0) throw InputError("no observed ratings to weight");
    std::vector<double> wy, w;
    for (const auto& r : data.records()) {
        if (!r.observed()) continue;
        w.push_back(1.0 / r.inclusion_prob);
        wy.push_back(w.back() * *r.human_rating);
    }
    PointEstimate e;
    e.theta = pairwise_sum(wy) / pairwise_sum(w);
    std::size_t k = 0;
    for (const auto& r : data.records()) {
        if (!r.observed()) continue;
        const double d = w[k] * (*r.human_rating - e.theta);
        wy[k++] = d * d;
    }
    const double N = static_cast<double>(data.size());
    e.variance = pairwise_sum(wy) / N / N;
    return e;
}

std::vector<EstimatorSummary> compare_estimators(const SimConfig& config) {
    const Prepared p = prepare(config);
    const auto outcomes = run_replications(p, true);

    auto row = [&](std::string name, auto get, auto covered) {
        const auto s = summarize(outcomes, get);
        EstimatorSummary e;
        e.estimator = std::move(name);
        e.bias = s.mean - p.mean;
        e.variance = s.variance;
        e.coverage = coverage_of(outcomes, covered);
        e.mc_se = s.count > 0 ? std::sqrt(s.variance / static_cast<double>(s.count)) : 0.0;
        return e;
    };
    return {
        row("prediction_only", [](const Outcome& o) { return o.pred; },
            [](const Outcome& o) { return o.pred_covered; }),
        row("ipw_only", [](const Outcome& o) { return o.ipw; }, [](const Outcome& o) { return o.ipw_covered; }),
        row("doubly_robust", [](const Outcome& o) { return o.dr; }, [](const Outcome& o) { return o.dr_covered; }),
    };
}

} // namespace twostage
