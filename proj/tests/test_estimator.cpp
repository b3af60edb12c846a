#include "doctest.h"

#include "twostage/error.hpp"
#include "twostage/estimator.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

using namespace twostage;

namespace {

RatingRecord rec(double x, std::optional<double> y, double pi = 1.0, std::optional<std::string> stratum = {}) {
    static int counter = 0;
    return RatingRecord{"i" + std::to_string(counter++), x, y, pi, std::move(stratum)};
}

Dataset worked_dataset() {
    return Dataset({rec(1, 1.5, 0.5), rec(2, std::nullopt, 0.5), rec(3, 3.5, 0.5), rec(4, std::nullopt, 0.5)});
}

// Independent evaluation of the augmented IPW mean.
double aipw_oracle(const Dataset& d, const StratifiedModel& m) {
    long double s = 0.0L;
    for (const auto& r : d.records()) {
        const double pred = m.predict(r);
        s += pred;
        if (r.observed()) s += (*r.human_rating - pred) / r.inclusion_prob;
    }
    return static_cast<double>(s / d.size());
}

Dataset random_dataset(std::mt19937_64& rng, std::size_t N, bool uniform_pi) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.05, 1.0);
    const double common = u(rng);
    std::vector<RatingRecord> out;
    std::size_t observed = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double x = 2.0 + z(rng);
        const double pi = uniform_pi ? common : u(rng);
        const bool obs = std::uniform_real_distribution<double>(0, 1)(rng) < pi || (i + 2 >= N && observed < 2);
        std::optional<double> y;
        if (obs) {
            y = 0.5 + 0.8 * x + 0.6 * z(rng);
            ++observed;
        }
        out.push_back(rec(x, y, pi));
    }
    return Dataset(std::move(out));
}

double sq_error(std::span<const Pair> pairs, double a, double b) {
    double s = 0.0;
    for (const auto& p : pairs) s += (p.y - a - b * p.x) * (p.y - a - b * p.x);
    return s;
}

double pearson_sq(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / n;
        mb += b[i] / n;
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab * sab / (saa * sbb);
}

} // namespace

TEST_SUITE("records") {
    TEST_CASE("dataset validation") {
        CHECK_THROWS_WITH_AS(Dataset({}), "no records", InputError);
        CHECK_THROWS_AS(Dataset({rec(1, 1, 0.0)}), InputError);
        CHECK_THROWS_AS(Dataset({rec(1, 1, 1.5)}), InputError);
        CHECK_THROWS_AS(Dataset({rec(std::nan(""), 1, 1.0)}), InputError);
        CHECK_THROWS_AS(Dataset({rec(1, std::numeric_limits<double>::infinity(), 1.0)}), InputError);
        const Dataset d = worked_dataset();
        CHECK(d.size() == 4);
        CHECK(d.observed_count() == 2);
    }

    TEST_CASE("model kinds") {
        CHECK(PredictionModel::identity()(3.5) == 3.5);
        CHECK(PredictionModel::constant(7)(100) == 7);
        CHECK(PredictionModel::linear(1, 2)(3) == 7);
        CHECK(parse_model_kind("linear") == ModelKind::linear);
        CHECK(to_string(ModelKind::constant) == "constant");
        CHECK_THROWS_AS(parse_model_kind("cubic"), InputError);
    }
}

TEST_SUITE("dr_mean_estimate") {
    TEST_CASE("complete data gives the sample mean") {
        const Dataset d({rec(9, 1), rec(-4, 2), rec(0, 3)});
        for (const auto& m : {PredictionModel::identity(), PredictionModel::constant(100), PredictionModel::linear(3, -2)}) {
            CHECK(dr_mean_estimate(d, m).theta_hat == doctest::Approx(2.0).epsilon(1e-14));
        }
    }

    TEST_CASE("zero residuals give the mean of LLM ratings") {
        const Dataset d({rec(1, 1, 0.3), rec(2, std::nullopt, 0.3), rec(3, 3, 0.7), rec(4, std::nullopt, 0.2)});
        CHECK(dr_mean_estimate(d, PredictionModel::identity()).theta_hat == doctest::Approx(2.5));
    }

    TEST_CASE("worked four-record dataset") {
        const Dataset d = worked_dataset();
        const auto e = dr_mean_estimate(d, PredictionModel::identity());
        CHECK(e.theta_hat == doctest::Approx(3.0).epsilon(1e-14));
        CHECK(aipw_oracle(d, PredictionModel::identity()) == doctest::Approx(3.0));
        CHECK(dr_solve(d, EstimatingFunction::mean(), PredictionModel::identity()) == doctest::Approx(3.0).epsilon(1e-9));
    }

    TEST_CASE("interval and error fields") {
        const Dataset d = worked_dataset();
        const auto e = dr_mean_estimate(d, PredictionModel::identity(), {0.9});
        CHECK(e.std_error == doctest::Approx(std::sqrt(e.variance)));
        CHECK(e.ci_lower <= e.theta_hat);
        CHECK(e.theta_hat <= e.ci_upper);
        CHECK(e.ci_upper - e.theta_hat == doctest::Approx(1.6448536269514722 * e.std_error));
        CHECK(e.N == 4);
        CHECK(e.n == 2);
    }

    TEST_CASE("no observations falls back to mean prediction with a warning") {
        const Dataset d({rec(1, std::nullopt, 0.5), rec(3, std::nullopt, 0.5)});
        const auto e = dr_mean_estimate(d, PredictionModel::identity());
        CHECK(e.theta_hat == doctest::Approx(2.0));
        REQUIRE_FALSE(e.warnings.empty());
        CHECK(std::isinf(e.variance));
        CHECK_THROWS_WITH_AS(dr_estimate_fitted(d, ModelKind::linear), "no observed ratings to anchor estimate", InputError);
    }

    TEST_CASE("single observation reports infinite variance") {
        const Dataset d({rec(1, 1.2, 0.5), rec(3, std::nullopt, 0.5)});
        const auto e = dr_mean_estimate(d, PredictionModel::identity());
        CHECK(std::isinf(e.variance));
        CHECK_FALSE(e.warnings.empty());
    }
}

TEST_SUITE("dr_solve") {
    TEST_CASE("constant complete data") {
        const Dataset d({rec(0, 5), rec(1, 5), rec(2, 5)});
        CHECK(dr_solve(d, EstimatingFunction::mean(), PredictionModel::identity()) == doctest::Approx(5.0).epsilon(1e-9));
    }

    TEST_CASE("median takes the left end of the root interval") {
        const Dataset d({rec(1, 1), rec(2, 2), rec(3, 3), rec(4, 4), rec(5, 5)});
        const auto fn = EstimatingFunction::quantile(0.5);
        const double got = dr_solve(d, fn, PredictionModel::identity());

        // Brute-force scan: first grid point where W turns nonnegative.
        double first = std::nan("");
        for (int k = 0; k <= 60000; ++k) {
            const double t = k * 1e-4;
            if (estimating_equation(d, fn, PredictionModel::identity(), t) >= 0.0) {
                first = t;
                break;
            }
        }
        CHECK(first == doctest::Approx(3.0).epsilon(1e-9));
        CHECK(got == doctest::Approx(3.0).epsilon(1e-8));
        CHECK(got >= 3.0 - 1e-9);
    }

    TEST_CASE("no sign change in bracket") {
        EstimatingFunction never{[](double, double, double) { return 1.0; },
                                 [](double, double, const PredictionModel&) { return 1.0; }};
        const Dataset d({rec(1, 1), rec(2, 2)});
        CHECK_THROWS_WITH_AS(dr_solve(d, never, PredictionModel::identity()),
                             "estimating equation has no root in bracket", NumericalError);
    }

    TEST_CASE("iteration cap carries the last iterate") {
        const Dataset d({rec(1, 1.3), rec(2, 2.9)});
        SolveOptions opt;
        opt.max_iter = 3;
        opt.tol = 1e-15;
        try {
            dr_solve(d, EstimatingFunction::mean(), PredictionModel::identity(), opt);
            FAIL("expected NumericalError");
        } catch (const NumericalError& e) {
            CHECK(std::isfinite(e.last_iterate()));
            CHECK(e.last_iterate() > 0.0);
        }
    }

    TEST_CASE("agrees with the closed form on random datasets") {
        std::mt19937_64 rng(2024);
        for (int t = 0; t < 100; ++t) {
            const auto N = 2 + rng() % 19;
            const Dataset d = random_dataset(rng, N, false);
            const auto fitted = fit_stratified_model(d, ModelKind::linear, false);
            const double closed = dr_mean_estimate(d, fitted.model).theta_hat;
            CHECK(closed == doctest::Approx(aipw_oracle(d, fitted.model)).epsilon(1e-12));
            CHECK(std::abs(dr_solve(d, EstimatingFunction::mean(), fitted.model) - closed) < 1e-9);
        }
    }
}

TEST_SUITE("dr_variance") {
    TEST_CASE("full review reduces to sigma2 over N") {
        const Dataset d({rec(1, 1), rec(5, 2), rec(2, 4), rec(7, 3)});
        const auto c = dr_variance_components(d, 2.5, PredictionModel::constant(0));
        CHECK(c.sigma2 == doctest::Approx(1.25));
        CHECK(c.penalty == 0.0);
        CHECK(c.variance == doctest::Approx(1.25 / 4));
    }

    TEST_CASE("zero residuals remove the penalty") {
        const Dataset d({rec(1, 1, 0.2), rec(3, 3, 0.4), rec(4, std::nullopt, 0.1), rec(6, 6, 0.3)});
        const auto c = dr_variance_components(d, 3.0, PredictionModel::identity());
        CHECK(c.penalty == 0.0);
        CHECK(c.variance == doctest::Approx(c.sigma2 / 4));
    }

    TEST_CASE("hand-built moments: sigma2 = 4, sigma_e2 = 1, pi = 0.5, N = 100") {
        std::vector<RatingRecord> rs;
        for (int i = 0; i < 50; ++i) {
            const double y = (i % 2 == 0) ? 2.0 : -2.0;
            const double e = (i % 4 < 2) ? 1.0 : -1.0;
            rs.push_back(rec(y - e, y, 0.5));
        }
        for (int i = 0; i < 50; ++i) rs.push_back(rec(0.0, std::nullopt, 0.5));
        const Dataset d(std::move(rs));
        const auto c = dr_variance_components(d, 0.0, PredictionModel::identity());
        CHECK(c.sigma2 == doctest::Approx(4.0));
        CHECK(c.sigma_e2 == doctest::Approx(1.0));
        CHECK(c.variance == doctest::Approx(0.05));
    }

    TEST_CASE("the 0.05 prediction matches repeated sampling") {
        // Y = X + e, Var X = 3, Var e = 1; identity model; Bernoulli(0.5).
        std::mt19937_64 rng(99);
        std::normal_distribution<double> z;
        std::bernoulli_distribution coin(0.5);
        const int reps = 100000;
        double s = 0.0;
        double ss = 0.0;
        std::vector<RatingRecord> rs(100);
        for (int r = 0; r < reps; ++r) {
            long double sum = 0.0L;
            for (auto& rr : rs) {
                const double x = std::sqrt(3.0) * z(rng);
                const double y = x + z(rng);
                sum += x;
                if (coin(rng)) sum += (y - x) / 0.5;
            }
            const double theta = static_cast<double>(sum / 100.0L);
            s += theta;
            ss += theta * theta;
        }
        const double mean = s / reps;
        const double var = ss / reps - mean * mean;
        CHECK(var == doctest::Approx(0.05).epsilon(0.02));
    }

    TEST_CASE("nonincreasing in pi with moments fixed") {
        std::vector<RatingRecord> base{rec(1, 1.5), rec(2, 1.0), rec(3, 4.0), rec(4, std::nullopt)};
        double prev = std::numeric_limits<double>::infinity();
        for (double pi : {0.1, 0.2, 0.4, 0.7, 1.0}) {
            auto rs = base;
            for (auto& r : rs) r.inclusion_prob = pi;
            const double v = dr_variance(Dataset(rs), 2.0, PredictionModel::identity());
            CHECK(v <= prev);
            prev = v;
        }
    }

    TEST_CASE("too few observations") {
        const Dataset d({rec(1, 1), rec(2, std::nullopt)});
        CHECK_THROWS_WITH_AS(dr_variance(d, 1.0, PredictionModel::identity()),
                             "insufficient observations for variance", InputError);
    }

    TEST_CASE("penalty ordering: fitted line against constant, uniform pi") {
        std::mt19937_64 rng(5);
        for (int t = 0; t < 100; ++t) {
            const Dataset d = random_dataset(rng, 5 + rng() % 40, true);
            const auto lin = fit_stratified_model(d, ModelKind::linear, false).model;
            const auto con = fit_stratified_model(d, ModelKind::constant, false).model;
            const double th = dr_mean_estimate(d, lin).theta_hat;
            const auto cl = dr_variance_components(d, th, lin);
            const auto cc = dr_variance_components(d, th, con);
            CHECK(cc.penalty >= cl.penalty - 1e-12);
            CHECK(cl.sigma_e2 <= cl.sigma2 + 1e-12);
        }
    }
}

TEST_SUITE("fit_prediction_model") {
    TEST_CASE("exact line") {
        const std::vector<Pair> p{{1, 2}, {2, 4}, {3, 6}};
        const auto m = fit_prediction_model(p, ModelKind::linear);
        CHECK(m.intercept == doctest::Approx(0.0).epsilon(1e-12).scale(1));
        CHECK(m.slope == doctest::Approx(2.0));
    }

    TEST_CASE("constant response") {
        const std::vector<Pair> p{{1, 7}, {2, 7}, {5, 7}};
        const auto m = fit_prediction_model(p, ModelKind::linear);
        CHECK(m.intercept == doctest::Approx(7.0));
        CHECK(m.slope == doctest::Approx(0.0).scale(1));
        CHECK(fit_prediction_model(p, ModelKind::constant).intercept == doctest::Approx(7.0));
    }

    TEST_CASE("least squares against a grid minimizer") {
        const std::vector<Pair> p{{1, 1}, {2, 2}, {3, 4}};
        const auto m = fit_prediction_model(p, ModelKind::linear);
        CHECK(m.intercept == doctest::Approx(-2.0 / 3.0));
        CHECK(m.slope == doctest::Approx(1.5));

        double best = std::numeric_limits<double>::infinity();
        double ba = 0, bb = 0;
        for (int i = -2000; i <= 2000; ++i) {
            for (int j = 0; j <= 3000; ++j) {
                const double a = i * 1e-3;
                const double b = j * 1e-3;
                const double s = sq_error(p, a, b);
                if (s < best) {
                    best = s;
                    ba = a;
                    bb = b;
                }
            }
        }
        CHECK(std::abs(ba - m.intercept) < 2e-3);
        CHECK(std::abs(bb - m.slope) < 2e-3);
    }

    TEST_CASE("degenerate x collapses to constant") {
        const std::vector<Pair> p{{2, 1}, {2, 3}, {2, 5}};
        const auto m = fit_prediction_model(p, ModelKind::linear);
        CHECK(m.degenerate);
        CHECK(m.kind == ModelKind::constant);
        CHECK(m.intercept == doctest::Approx(3.0));
    }

    TEST_CASE("input errors") {
        CHECK_THROWS_AS(fit_prediction_model({}, ModelKind::constant), InputError);
        const std::vector<Pair> one{{1, 2}};
        CHECK_THROWS_AS(fit_prediction_model(one, ModelKind::linear), InputError);
        CHECK(fit_prediction_model(one, ModelKind::constant).intercept == 2.0);
    }

    TEST_CASE("single observed pair degrades to constant in the fitted pipeline") {
        const Dataset d({rec(1, 3.0, 0.5), rec(2, std::nullopt, 0.5)});
        const auto f = fit_stratified_model(d, ModelKind::linear, false);
        CHECK(f.model.pooled().kind == ModelKind::constant);
        CHECK_FALSE(f.warnings.empty());
    }

    TEST_CASE("per-stratum fits fall back to pooled for empty strata") {
        const Dataset d({rec(1, 1, 1, "a"), rec(2, 2, 1, "a"), rec(3, 3, 1, "a"), rec(4, std::nullopt, 0.5, "b")});
        const auto f = fit_stratified_model(d, ModelKind::linear, true);
        REQUIRE(f.model.by_stratum().size() == 2);
        CHECK(f.model.by_stratum().at("b").slope == doctest::Approx(f.model.pooled().slope));
        CHECK_FALSE(f.warnings.empty());
    }
}

TEST_SUITE("estimate_r_squared") {
    TEST_CASE("perfect prediction") {
        const std::vector<Pair> p{{1, 1}, {2, 2}, {4, 4}, {8, 8}};
        CHECK(estimate_r_squared(p, PredictionModel::identity()) == doctest::Approx(1.0));
    }

    TEST_CASE("hand Pearson example") {
        const std::vector<Pair> p{{1, 1}, {2, 2}, {3, 4}};
        const double oracle = pearson_sq({1, 2, 3}, {1, 2, 4});
        CHECK(oracle == doctest::Approx(27.0 / 28.0));
        CHECK(estimate_r_squared(p, PredictionModel::identity()) == doctest::Approx(oracle));
    }

    TEST_CASE("independent samples give a small R²") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> z;
        std::vector<Pair> p(10000);
        for (auto& q : p) q = {z(rng), z(rng)};
        CHECK(estimate_r_squared(p, fit_prediction_model(p, ModelKind::linear)) <= 0.01);
    }

    TEST_CASE("degenerate samples") {
        const std::vector<Pair> p{{1, 2}, {2, 2}, {3, 2}};
        CHECK_THROWS_WITH_AS(estimate_r_squared(p, PredictionModel::identity()),
                             "degenerate pilot sample: R² undefined", InputError);
        CHECK(estimate_r_squared(p, PredictionModel::identity(), DegeneratePolicy::conservative_zero) == 0.0);
        const std::vector<Pair> two{{1, 2}, {2, 3}};
        CHECK_THROWS_AS(estimate_r_squared(two, PredictionModel::identity()), InputError);
    }

    TEST_CASE("affine invariance through the fitted line") {
        std::mt19937_64 rng(8);
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(-5, 5);
        for (int t = 0; t < 100; ++t) {
            std::vector<Pair> p(30);
            for (auto& q : p) {
                const double x = z(rng);
                q = {x, 0.4 * x + z(rng)};
            }
            const double base = estimate_r_squared(p, fit_prediction_model(p, ModelKind::linear));
            double a = u(rng), c = u(rng);
            if (std::abs(a) < 0.1) a = 1.3;
            if (std::abs(c) < 0.1) c = -0.7;
            const double b = u(rng), d = u(rng);
            auto q = p;
            for (auto& r : q) r = {a * r.x + b, c * r.y + d};
            const double moved = estimate_r_squared(q, fit_prediction_model(q, ModelKind::linear));
            CHECK(moved == doctest::Approx(base).epsilon(1e-9));
        }
    }

    TEST_CASE("fitted line R² equals one minus residual over total variance") {
        std::mt19937_64 rng(12);
        std::normal_distribution<double> z;
        std::vector<RatingRecord> rs;
        for (int i = 0; i < 200; ++i) {
            const double x = z(rng);
            rs.push_back(rec(x, 1 + 0.7 * x + 0.5 * z(rng)));
        }
        const Dataset d(rs);
        const auto f = fit_stratified_model(d, ModelKind::linear, false);
        const auto e = dr_mean_estimate(d, f.model);
        const double r2 = estimate_r_squared(observed_pairs(d), f.model.pooled());
        CHECK(r2 == doctest::Approx(1.0 - e.sigma_e2_hat / e.sigma2_hat).epsilon(1e-9));
    }
}

TEST_CASE("offset models") {
    CHECK(with_offset(PredictionModel::identity(), 5)(2) == 7);
    CHECK(with_offset(PredictionModel::linear(1, 2), 5)(2) == 10);
    CHECK(with_offset(PredictionModel::constant(1), 5)(2) == 6);
}
