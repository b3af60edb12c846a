#include "twostage/estimator.hpp"

#include "twostage/error.hpp"
#include "twostage/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace twostage {

namespace {

// Relative threshold under which a sample variance counts as zero.
constexpr double kDegenerateVariance = 1e-12;

bool negligible_variance(double variance, double mean) {
    return variance <= kDegenerateVariance * std::max(1.0, mean * mean);
}

struct WeightedMoments {
    double weight = 0.0;
    double mean = 0.0;
    double variance = 0.0;
};

WeightedMoments weighted_moments(std::span<const double> values, std::span<const double> weights) {
    std::vector<double> scratch(values.size());
    WeightedMoments m;
    m.weight = pairwise_sum(weights);
    for (std::size_t i = 0; i < values.size(); ++i) scratch[i] = weights[i] * values[i];
    m.mean = pairwise_sum(scratch) / m.weight;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = values[i] - m.mean;
        scratch[i] = weights[i] * d * d;
    }
    m.variance = pairwise_sum(scratch) / m.weight;
    return m;
}

} // namespace

Dataset::Dataset(std::vector<RatingRecord> records) : records_(std::move(records)) {
    if (records_.empty()) throw InputError("no records");
    for (const auto& r : records_) {
        if (!std::isfinite(r.llm_rating)) {
            throw InputError("record '" + r.item_id + "': llm_rating is not finite");
        }
        if (r.human_rating && !std::isfinite(*r.human_rating)) {
            throw InputError("record '" + r.item_id + "': human_rating is not finite");
        }
        if (!(r.inclusion_prob > 0.0 && r.inclusion_prob <= 1.0)) {
            throw InputError("record '" + r.item_id + "': inclusion_prob must lie in (0, 1]");
        }
        if (r.observed()) ++observed_;
    }
}

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::identity: return "identity";
    case ModelKind::linear: return "linear";
    case ModelKind::constant: return "constant";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& text) {
    if (text == "identity") return ModelKind::identity;
    if (text == "linear") return ModelKind::linear;
    if (text == "constant") return ModelKind::constant;
    throw InputError("unknown model kind '" + text + "' (expected identity, linear or constant)");
}

const PredictionModel& StratifiedModel::for_record(const RatingRecord& r) const {
    if (r.stratum && !by_stratum_.empty()) {
        if (auto it = by_stratum_.find(*r.stratum); it != by_stratum_.end()) return it->second;
    }
    return pooled_;
}

EstimatingFunction EstimatingFunction::mean() {
    return {
        [](double theta, double, double y) { return y - theta; },
        [](double theta, double x, const PredictionModel& m) { return m(x) - theta; },
    };
}

EstimatingFunction EstimatingFunction::quantile(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("quantile level must lie in (0, 1)");
    return {
        [tau](double theta, double, double y) { return (y <= theta ? 1.0 : 0.0) - tau; },
        [tau](double theta, double x, const PredictionModel& m) {
            return (m(x) <= theta ? 1.0 : 0.0) - tau;
        },
    };
}

std::vector<Pair> observed_pairs(const Dataset& data) {
    std::vector<Pair> pairs;
    pairs.reserve(data.observed_count());
    for (const auto& r : data.records()) {
        if (r.observed()) pairs.push_back({r.llm_rating, *r.human_rating});
    }
    return pairs;
}

DrEstimate dr_mean_estimate(const Dataset& data, const StratifiedModel& model,
                            const EstimateOptions& options) {
    const double z = normal_critical_value(options.confidence_level);
    const auto records = data.records();

    std::vector<double> terms(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const double predicted = model.predict(r);
        terms[i] = predicted;
        if (r.observed()) terms[i] += (*r.human_rating - predicted) / r.inclusion_prob;
    }

    DrEstimate est;
    est.N = records.size();
    est.n = data.observed_count();
    est.confidence_level = options.confidence_level;
    est.theta_hat = pairwise_sum(terms) / static_cast<double>(est.N);

    if (est.n == 0) {
        est.warnings.emplace_back(
            "no observed human ratings: estimate is the mean model prediction and is not anchored");
    }
    if (est.n < 2) {
        constexpr double inf = std::numeric_limits<double>::infinity();
        est.variance = inf;
        est.std_error = inf;
        est.ci_lower = -inf;
        est.ci_upper = inf;
        est.sigma2_hat = std::numeric_limits<double>::quiet_NaN();
        est.sigma_e2_hat = std::numeric_limits<double>::quiet_NaN();
        est.n_eff = static_cast<double>(est.n);
        est.warnings.emplace_back("insufficient observations for variance");
        return est;
    }

    const auto comps = dr_variance_components(data, est.theta_hat, model);
    est.variance = comps.variance;
    est.std_error = std::sqrt(comps.variance);
    est.ci_lower = est.theta_hat - z * est.std_error;
    est.ci_upper = est.theta_hat + z * est.std_error;
    est.sigma2_hat = comps.sigma2;
    est.sigma_e2_hat = comps.sigma_e2;
    est.n_eff = comps.variance > 0.0 ? comps.sigma2 / comps.variance : static_cast<double>(est.N);
    return est;
}

FittedModel fit_stratified_model(const Dataset& data, ModelKind kind, bool per_stratum) {
    if (kind == ModelKind::identity) return {PredictionModel::identity(), {}};
    if (data.observed_count() == 0) throw InputError("no observed ratings to anchor estimate");

    std::vector<std::string> warnings;
    auto fit = [&](std::span<const Pair> pairs, std::span<const double> weights) {
        if (kind == ModelKind::linear && pairs.size() < 2) {
            warnings.emplace_back("a single observed pair: linear model replaced by constant");
            return fit_prediction_model(pairs, ModelKind::constant, weights);
        }
        auto m = fit_prediction_model(pairs, kind, weights);
        if (m.degenerate) warnings.emplace_back("LLM ratings have zero variance: linear model collapsed to constant");
        return m;
    };

    std::vector<Pair> pairs;
    std::vector<double> weights;
    std::map<std::string, std::pair<std::vector<Pair>, std::vector<double>>> grouped;
    for (const auto& r : data.records()) {
        if (!r.observed()) continue;
        pairs.push_back({r.llm_rating, *r.human_rating});
        weights.push_back(1.0 / r.inclusion_prob);
        if (per_stratum && r.stratum) {
            auto& g = grouped[*r.stratum];
            g.first.push_back(pairs.back());
            g.second.push_back(weights.back());
        }
    }
    const PredictionModel pooled = fit(pairs, weights);

    std::map<std::string, PredictionModel> by_stratum;
    if (per_stratum) {
        for (const auto& r : data.records()) {
            if (!r.stratum || by_stratum.contains(*r.stratum)) continue;
            auto it = grouped.find(*r.stratum);
            if (it == grouped.end()) {
                warnings.push_back("stratum '" + *r.stratum + "' has no observed ratings: pooled model used");
                by_stratum.emplace(*r.stratum, pooled);
                continue;
            }
            by_stratum.emplace(*r.stratum, fit(it->second.first, it->second.second));
        }
    }
    return {StratifiedModel(std::move(by_stratum), pooled), std::move(warnings)};
}

PredictionModel with_offset(const PredictionModel& m, double offset) {
    if (offset == 0.0) return m;
    switch (m.kind) {
    case ModelKind::identity: return PredictionModel::linear(offset, 1.0);
    case ModelKind::constant: return PredictionModel::constant(m.intercept + offset);
    case ModelKind::linear: break;
    }
    return PredictionModel::linear(m.intercept + offset, m.slope);
}

StratifiedModel with_offset(const StratifiedModel& m, double offset) {
    std::map<std::string, PredictionModel> shifted;
    for (const auto& [label, model] : m.by_stratum()) shifted.emplace(label, with_offset(model, offset));
    return {std::move(shifted), with_offset(m.pooled(), offset)};
}

DrEstimate dr_estimate_fitted(const Dataset& data, ModelKind kind, bool per_stratum,
                              const EstimateOptions& options) {
    auto fitted = fit_stratified_model(data, kind, per_stratum);
    auto est = dr_mean_estimate(data, fitted.model, options);
    est.warnings.insert(est.warnings.begin(), fitted.warnings.begin(), fitted.warnings.end());
    return est;
}

double estimating_equation(const Dataset& data, const EstimatingFunction& fn,
                           const StratifiedModel& model, double theta) {
    const auto records = data.records();
    std::vector<double> terms(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const double cond = fn.conditional(theta, r.llm_rating, model.for_record(r));
        if (r.observed()) {
            const double w = 1.0 / r.inclusion_prob;
            terms[i] = w * fn.u(theta, r.llm_rating, *r.human_rating) - (w - 1.0) * cond;
        } else {
            terms[i] = cond;
        }
    }
    return pairwise_sum(terms);
}

double dr_solve(const Dataset& data, const EstimatingFunction& fn, const StratifiedModel& model,
                const SolveOptions& options) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& r : data.records()) {
        const double p = model.predict(r);
        lo = std::min(lo, p);
        hi = std::max(hi, p);
        if (r.observed()) {
            // The mean root is an average of these corrected values, so they
            // bound it even when 1/pi pushes it outside the data range.
            const double corrected = p + (*r.human_rating - p) / r.inclusion_prob;
            lo = std::min({lo, *r.human_rating, corrected});
            hi = std::max({hi, *r.human_rating, corrected});
        }
    }
    const double span = hi - lo;
    const double widen = span > 0.0 ? options.bracket_margin * span : options.bracket_margin;
    // Nudge past the extreme data points so step functions see both sides.
    lo -= widen + 1e-9 * std::max(1.0, std::abs(lo));
    hi += widen + 1e-9 * std::max(1.0, std::abs(hi));

    const double f_lo = estimating_equation(data, fn, model, lo);
    const double f_hi = estimating_equation(data, fn, model, hi);
    if (f_lo == 0.0) return lo;
    if ((f_lo > 0.0 && f_hi > 0.0) || (f_lo < 0.0 && f_hi < 0.0)) {
        throw NumericalError("estimating equation has no root in bracket", hi);
    }
    // Invariant: side * W(lo) < 0 <= side * W(hi).
    const double side = f_lo < 0.0 ? 1.0 : -1.0;
    int iter = 0;
    while (hi - lo > options.tol) {
        if (iter++ >= options.max_iter) {
            throw NumericalError("estimating equation did not converge within max_iter", 0.5 * (lo + hi));
        }
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break; // bracket at floating-point resolution
        if (side * estimating_equation(data, fn, model, mid) >= 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

VarianceComponents dr_variance_components(const Dataset& data, double theta,
                                          const StratifiedModel& model) {
    if (!std::isfinite(theta)) throw InputError("theta must be finite");
    if (data.observed_count() < 2) throw InputError("insufficient observations for variance");

    std::vector<double> u;
    std::vector<double> w;
    std::vector<double> e2;
    std::vector<double> pe2;
    u.reserve(data.observed_count());
    w.reserve(data.observed_count());
    e2.reserve(data.observed_count());
    pe2.reserve(data.observed_count());
    for (const auto& r : data.records()) {
        if (!r.observed()) continue;
        const double weight = 1.0 / r.inclusion_prob;
        const double resid = *r.human_rating - model.predict(r);
        u.push_back(*r.human_rating - theta);
        w.push_back(weight);
        e2.push_back(weight * resid * resid);
        pe2.push_back(weight * (weight - 1.0) * resid * resid);
    }

    const auto moments = weighted_moments(u, w);
    VarianceComponents c;
    c.sigma2 = moments.variance;
    c.sigma_e2 = pairwise_sum(e2) / moments.weight;
    c.penalty = pairwise_sum(pe2) / moments.weight;
    c.variance = (c.sigma2 + c.penalty) / static_cast<double>(data.size());
    return c;
}

double dr_variance(const Dataset& data, double theta, const StratifiedModel& model) {
    return dr_variance_components(data, theta, model).variance;
}

PredictionModel fit_prediction_model(std::span<const Pair> pairs, ModelKind kind,
                                     std::span<const double> weights) {
    if (pairs.empty()) throw InputError("cannot fit a prediction model to zero pairs");
    if (!weights.empty() && weights.size() != pairs.size()) {
        throw InputError("weights must match pairs in length");
    }
    std::vector<double> w(pairs.size(), 1.0);
    if (!weights.empty()) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) throw InputError("weights must be positive");
            w[i] = weights[i];
        }
    }
    std::vector<double> xs(pairs.size());
    std::vector<double> ys(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        xs[i] = pairs[i].x;
        ys[i] = pairs[i].y;
    }

    switch (kind) {
    case ModelKind::identity: return PredictionModel::identity();
    case ModelKind::constant: return PredictionModel::constant(weighted_moments(ys, w).mean);
    case ModelKind::linear: break;
    }

    if (pairs.size() < 2) throw InputError("linear model needs at least 2 pairs");
    const auto mx = weighted_moments(xs, w);
    const auto my = weighted_moments(ys, w);
    if (negligible_variance(mx.variance, mx.mean)) {
        auto m = PredictionModel::constant(my.mean);
        m.degenerate = true;
        return m;
    }
    std::vector<double> cross(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) cross[i] = w[i] * (xs[i] - mx.mean) * (ys[i] - my.mean);
    const double slope = pairwise_sum(cross) / mx.weight / mx.variance;
    return PredictionModel::linear(my.mean - slope * mx.mean, slope);
}

double estimate_r_squared(std::span<const Pair> pairs, const PredictionModel& model,
                          DegeneratePolicy policy) {
    if (pairs.size() < 3) throw InputError("at least 3 pairs are needed to estimate R²");
    std::vector<double> ys(pairs.size());
    std::vector<double> ps(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        ys[i] = pairs[i].y;
        ps[i] = model(pairs[i].x);
    }
    const std::vector<double> unit(pairs.size(), 1.0);
    const auto my = weighted_moments(ys, unit);
    const auto mp = weighted_moments(ps, unit);
    if (negligible_variance(my.variance, my.mean) || negligible_variance(mp.variance, mp.mean)) {
        if (policy == DegeneratePolicy::conservative_zero) return 0.0;
        throw InputError("degenerate pilot sample: R² undefined");
    }
    std::vector<double> cross(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) cross[i] = (ys[i] - my.mean) * (ps[i] - mp.mean);
    const double cov = pairwise_sum(cross) / static_cast<double>(pairs.size());
    return std::clamp(cov * cov / (my.variance * mp.variance), 0.0, 1.0);
}

} // namespace twostage
