#pragma once

// Doubly robust estimation of a human-rating parameter from a two-stage
// sample: LLM ratings on every item, human ratings on a subsample drawn with
// known inclusion probabilities.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace twostage {

struct RatingRecord {
    std::string item_id;
    double llm_rating = 0.0;
    // Present iff the item received a human rating at the second stage.
    std::optional<double> human_rating;
    double inclusion_prob = 1.0;
    std::optional<std::string> stratum;

    bool observed() const noexcept { return human_rating.has_value(); }
};

// Validated, immutable collection of records.
class Dataset {
public:
    // Throws InputError on: empty input, non-finite ratings, inclusion
    // probabilities outside (0, 1].
    explicit Dataset(std::vector<RatingRecord> records);

    std::span<const RatingRecord> records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    std::size_t observed_count() const noexcept { return observed_; }

private:
    std::vector<RatingRecord> records_;
    std::size_t observed_ = 0;
};

enum class ModelKind { identity, linear, constant };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

// m(x) = E[Y | X = x] used to predict human ratings from LLM ratings.
struct PredictionModel {
    ModelKind kind = ModelKind::identity;
    double intercept = 0.0;
    double slope = 1.0;
    // Set by fit_prediction_model when the LLM ratings had zero variance and
    // a linear fit collapsed to the constant model.
    bool degenerate = false;

    static PredictionModel identity() { return {}; }
    static PredictionModel constant(double c) { return {ModelKind::constant, c, 0.0, false}; }
    static PredictionModel linear(double a, double b) { return {ModelKind::linear, a, b, false}; }

    double operator()(double x) const noexcept {
        switch (kind) {
        case ModelKind::identity: return x;
        case ModelKind::constant: return intercept;
        case ModelKind::linear: break;
        }
        return intercept + slope * x;
    }
};

// One prediction model per stratum with a pooled fallback. Implicitly
// constructible from a single model so the common unstratified call sites
// read naturally.
class StratifiedModel {
public:
    StratifiedModel(PredictionModel pooled) : pooled_(pooled) {} // NOLINT(google-explicit-constructor)
    StratifiedModel(std::map<std::string, PredictionModel> by_stratum, PredictionModel pooled)
        : by_stratum_(std::move(by_stratum)), pooled_(pooled) {}

    const PredictionModel& for_record(const RatingRecord& r) const;
    double predict(const RatingRecord& r) const { return for_record(r)(r.llm_rating); }

    const PredictionModel& pooled() const noexcept { return pooled_; }
    const std::map<std::string, PredictionModel>& by_stratum() const noexcept { return by_stratum_; }

private:
    std::map<std::string, PredictionModel> by_stratum_;
    PredictionModel pooled_;
};

// U(theta; x, y) together with its conditional expectation given x under the
// prediction model.
struct EstimatingFunction {
    std::function<double(double theta, double x, double y)> u;
    std::function<double(double theta, double x, const PredictionModel& m)> conditional;

    // U = y - theta, E[U | x] = m(x) - theta.
    static EstimatingFunction mean();
    // U = 1{y <= theta} - tau. The conditional term treats the predicted value
    // as a point mass: 1{m(x) <= theta} - tau.
    static EstimatingFunction quantile(double tau);
};

struct DrEstimate {
    double theta_hat = 0.0;
    double variance = 0.0;
    double std_error = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double confidence_level = 0.95;
    double sigma2_hat = 0.0;
    double sigma_e2_hat = 0.0;
    double n_eff = 0.0;
    std::size_t N = 0;
    std::size_t n = 0;
    std::vector<std::string> warnings;
};

struct VarianceComponents {
    double sigma2 = 0.0;      // weighted variance of U
    double sigma_e2 = 0.0;    // weighted mean squared residual
    double penalty = 0.0;     // weighted mean of (1/pi - 1) * residual^2
    double variance = 0.0;    // (sigma2 + penalty) / N
};

struct EstimateOptions {
    double confidence_level = 0.95;
};

// Closed-form root of the doubly robust estimating equation for the mean:
//   theta = (1/N) sum_i [ m(x_i) + (delta_i / pi_i) (y_i - m(x_i)) ].
// With no observed ratings the estimate falls back to the mean prediction and
// carries a warning; with fewer than two the variance is reported as
// infinite.
DrEstimate dr_mean_estimate(const Dataset& data, const StratifiedModel& model,
                            const EstimateOptions& options = {});

struct FittedModel {
    StratifiedModel model;
    std::vector<std::string> warnings;
};

// Fits a model of the given kind on the observed pairs, each weighted by
// 1/pi. With per_stratum, every labelled stratum gets its own fit; strata
// without observations fall back to the pooled fit. A linear fit on a single
// pair degrades to constant.
FittedModel fit_stratified_model(const Dataset& data, ModelKind kind, bool per_stratum);

// m(x) + offset for every member model.
PredictionModel with_offset(const PredictionModel& m, double offset);
StratifiedModel with_offset(const StratifiedModel& m, double offset);

// fit_stratified_model followed by dr_mean_estimate. Identity needs no fit; every other
// kind fails when nothing was observed.
DrEstimate dr_estimate_fitted(const Dataset& data, ModelKind kind, bool per_stratum = false,
                              const EstimateOptions& options = {});

// W(theta) for an arbitrary estimating function.
double estimating_equation(const Dataset& data, const EstimatingFunction& fn,
                           const StratifiedModel& model, double theta);

struct SolveOptions {
    double tol = 1e-10;
    int max_iter = 200;
    // Bracket is [lo - margin*span, hi + margin*span] over observed,
    // predicted and m(x) + (y - m(x))/pi values; a zero span widens by
    // `margin` in absolute terms.
    double bracket_margin = 0.1;
};

// Bisection root of W(theta) = 0. Works for increasing or decreasing W and
// for step functions; when W vanishes on an interval the left end is
// returned.
double dr_solve(const Dataset& data, const EstimatingFunction& fn, const StratifiedModel& model,
                const SolveOptions& options = {});

VarianceComponents dr_variance_components(const Dataset& data, double theta,
                                          const StratifiedModel& model);

// Plug-in variance (1/N) [ sigma2 + avg((1/pi - 1) e^2) ] for the mean.
double dr_variance(const Dataset& data, double theta, const StratifiedModel& model);

struct Pair {
    double x = 0.0;
    double y = 0.0;
};

// Least squares for linear, (weighted) mean for constant. Weights, when
// given, must match pairs in length and be positive.
PredictionModel fit_prediction_model(std::span<const Pair> pairs, ModelKind kind,
                                     std::span<const double> weights = {});

enum class DegeneratePolicy { error, conservative_zero };

// Squared Pearson correlation between y and m(x).
double estimate_r_squared(std::span<const Pair> pairs, const PredictionModel& model,
                          DegeneratePolicy policy = DegeneratePolicy::error);

std::vector<Pair> observed_pairs(const Dataset& data);

} // namespace twostage
