// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include "twostage/design.hpp"
#include "twostage/estimator.hpp"
#include "twostage/simulate.hpp"
#include "twostage/strata.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

using namespace twostage;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (detail.size() < 600) detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

int failures = 0;

void criterion(int id, const char* title, double budget_seconds, const std::function<void(Check&)>& body) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.require(secs < budget_seconds, fmt("took %.1fs, limit %.0fs", secs, budget_seconds));
    if (!c.ok) ++failures;
    std::printf("%s criterion %d: %s (%.2fs)%s%s\n", c.ok ? "PASS" : "FAIL", id, title, secs,
                c.detail.empty() ? "" : " -- ", c.detail.c_str());
    std::fflush(stdout);
}

// Minimum of N1 p1 + N2 p2 along the two-stratum variance constraint, by
// ternary search on p1 (cost is convex along the curve).
double oracle_min_cost(double N1, double N2, double r1, double r2, double n_star) {
    const double N = N1 + N2;
    const double w1 = N1 / N * (1 - r1), w2 = N2 / N * (1 - r2);
    const double K = N / n_star - 1;
    auto p2_of = [&](double p1) { return w2 / (K + w1 + w2 - w1 / p1); };
    auto cost = [&](double p1) { return N1 * p1 + N2 * p2_of(p1); };
    double lo = w1 / (K + w1) * (1 + 1e-12);
    double hi = 1.0;
    if (p2_of(hi) <= 0) return std::nan("");
    for (int i = 0; i < 300; ++i) {
        const double a = lo + (hi - lo) / 3, b = hi - (hi - lo) / 3;
        if (cost(a) < cost(b)) hi = b; else lo = a;
    }
    return cost(0.5 * (lo + hi));
}

double oracle_uniform_cost(double N1, double N2, double r1, double r2, double n_star) {
    const double N = N1 + N2;
    const double wsum = N1 / N * (1 - r1) + N2 / N * (1 - r2);
    const double K = N / n_star - 1;
    return N * wsum / (K + wsum);
}

double max_savings(double r1, double r2, double step = 1e-3) {
    double best = 0;
    for (int k = 1; k * step < 1.0 - 1e-12; ++k) {
        const auto N1 = static_cast<std::int64_t>(std::llround(k * step * 1e6));
        const std::vector<StratumSpec> s{{"1", N1, r1}, {"2", 1000000 - N1, r2}};
        best = std::max(best, stratification_savings(s, 200));
    }
    return best;
}

} // namespace

int main() {
    criterion(1, "reference sample sizes from required_human_n", 1.0, [](Check& c) {
        struct Row {
            std::int64_t n_star;
            double r2;
            std::int64_t N;
            double unrounded;
            std::int64_t reference_n;
        };
        const Row rows[] = {{100, 0.1, 200, 94.7, 95}, {100, 0.1, 400, 92.3, 92}, {100, 0.8, 200, 33.3, 33},
                            {100, 0.8, 400, 25.0, 25}, {200, 0.7, 2000, 64.5, 65}};
        for (const auto& r : rows) {
            const auto s = required_human_n({r.n_star, r.r2}, r.N);
            c.require(std::abs(s.unrounded - r.unrounded) < 0.1,
                      fmt("unrounded %.3f vs %.1f", s.unrounded, r.unrounded));
            c.require(s.n >= r.reference_n && s.n <= r.reference_n + 1,
                      fmt("n %.0f vs reference %.0f", static_cast<double>(s.n), static_cast<double>(r.reference_n)));
        }
        c.require(required_human_n({200, 0.7}, 2000).n == 65, "65 humans at N = 2000");
    });

    criterion(2, "human floor at N = 1e8", 1.0, [](Check& c) {
        const auto s = required_human_n({200, 0.7}, 100000000);
        c.require(s.n >= 60 && s.n <= 61, fmt("n = %.0f", static_cast<double>(s.n)));
        c.require(std::abs(human_floor({200, 0.7}) - 60.0) < 1e-9, "floor = 60");
    });

    criterion(3, "two-stratum optimal allocation and budget flag", 1.0, [](Check& c) {
        const std::vector<StratumSpec> s{{"1", 500, 0.8}, {"2", 500, 0.3}};
        const auto plan = optimal_allocation(200, s);
        c.require(std::abs(plan.allocations[0].p - 0.0645) < 1e-3, fmt("p1 = %.5f", plan.allocations[0].p));
        c.require(std::abs(plan.allocations[1].p - 0.1207) < 1e-3, fmt("p2 = %.5f", plan.allocations[1].p));
        c.require(plan.allocations[0].n == 33 && plan.allocations[1].n == 61,
                  fmt("n = (%.0f, %.0f)", static_cast<double>(plan.allocations[0].n),
                      static_cast<double>(plan.allocations[1].n)));
        c.require(plan.human_total == 94, "total 94");
        c.require(feasible_under_budget(plan, 100).feasible, "optimal plan fits budget 100");

        const double alt[] = {0.3, 0.085};
        const auto other = custom_allocation(200, s, alt);
        c.require(other.human_total >= 193 && other.human_total <= 195,
                  fmt("alternative total %.0f", static_cast<double>(other.human_total)));
        c.require(!feasible_under_budget(other, 100).feasible, "alternative flagged over budget 100");
        const double p1 = 0.3;
        const auto curve = allocation_curve(200, s, std::span<const double>(&p1, 1));
        c.require(std::abs(curve.points.front().p2 - 0.085) < 1e-3, fmt("curve p2(0.3) = %.5f", curve.points.front().p2));
    });

    criterion(4, "stratification savings maxima and oracle agreement", 5.0, [](Check& c) {
        const double a = max_savings(0.8, 0.1);
        c.require(std::abs(a - 0.129) <= 0.003, fmt("max savings (0.8, 0.1) = %.4f", a));
        const double b = max_savings(0.6, 0.3);
        c.require(b >= 0.019 && b <= 0.025, fmt("max savings (0.6, 0.3) = %.4f", b));

        double worst = 0;
        for (const auto& [r1, r2] : {std::pair{0.8, 0.1}, std::pair{0.6, 0.3}}) {
            for (int k = 1; k < 1000; ++k) {
                const double N = 1000.0;
                const double N1 = k * 1e-3 * N;
                const double oracle =
                    1.0 - oracle_min_cost(N1, N - N1, r1, r2, 200) / oracle_uniform_cost(N1, N - N1, r1, r2, 200);
                const std::vector<StratumSpec> s{{"1", k, r1}, {"2", 1000 - k, r2}};
                worst = std::max(worst, std::abs(stratification_savings(s, 200) - oracle));
            }
        }
        c.require(worst < 1e-4, fmt("closed form vs oracle max gap %.2e", worst));
    });

    criterion(5, "dr_solve agrees with the closed form on 100 random datasets", 10.0, [](Check& c) {
        std::mt19937_64 rng(505);
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(0.05, 1.0);
        double worst = 0;
        for (int t = 0; t < 100; ++t) {
            const std::size_t N = 1 + rng() % 20;
            std::vector<RatingRecord> rs;
            for (std::size_t i = 0; i < N; ++i) {
                const double x = z(rng) * 3;
                const double pi = u(rng);
                std::optional<double> y;
                if (i == 0 || u(rng) < pi) y = 1.0 + 0.5 * x + z(rng);
                rs.push_back({std::to_string(i), x, y, pi, {}});
            }
            const Dataset d(rs);
            const auto model = t % 2 == 0 ? StratifiedModel(PredictionModel::identity())
                                          : fit_stratified_model(d, ModelKind::constant, false).model;
            const double closed = dr_mean_estimate(d, model).theta_hat;
            const double root = dr_solve(d, EstimatingFunction::mean(), model);
            worst = std::max(worst, std::abs(closed - root));
        }
        c.require(worst < 1e-9, fmt("max |root - closed form| = %.2e", worst));
    });

    criterion(6, "Monte Carlo variance and coverage over the (pi, rho²) grid", 300.0, [](Check& c) {
        for (double pi : {0.1, 0.3, 0.5, 1.0}) {
            for (double r2 : {0.0, 0.3, 0.7, 0.9}) {
                SimConfig cfg = SimConfig::uniform(pi);
                cfg.N = 2000;
                cfg.rho = std::sqrt(r2);
                cfg.replications = 10000;
                cfg.seed = 6000 + static_cast<std::uint64_t>(pi * 100) * 10 + static_cast<std::uint64_t>(r2 * 10);
                const auto res = run_study(cfg);
                const double ratio = res.empirical_variance / res.theoretical_variance;
                c.require(std::abs(ratio - 1.0) <= 0.05, fmt("pi %.1f rho2 %.1f variance ratio %.4f", pi, r2, ratio));
                c.require(res.coverage >= 0.94 && res.coverage <= 0.96,
                          fmt("pi %.1f rho2 %.1f coverage %.4f", pi, r2, res.coverage));
            }
        }
    });

    criterion(7, "double robustness under a biased model", 60.0, [](Check& c) {
        SimConfig cfg = SimConfig::uniform(0.3);
        cfg.N = 2000;
        cfg.replications = 10000;
        cfg.seed = 7;
        cfg.model.kind = ModelKind::identity;
        cfg.model.fit = false;
        cfg.model.bias_offset = 5.0;
        const auto rows = compare_estimators(cfg);
        for (const auto& r : rows) {
            if (r.estimator == "doubly_robust") {
                c.require(std::abs(r.bias) < 3 * r.mc_se, fmt("DR bias %.4g vs 3 SE %.4g", r.bias, 3 * r.mc_se));
            } else if (r.estimator == "prediction_only") {
                c.require(std::abs(r.bias) > 10 * r.mc_se,
                          fmt("prediction-only bias %.4g vs 10 SE %.4g", r.bias, 10 * r.mc_se));
            }
        }
    });

    criterion(8, "design attainment for (n* = 200, R² = 0.7, N = 2000, n = 65)", 120.0, [](Check& c) {
        const auto design = required_human_n({200, 0.7}, 2000);
        SimConfig cfg = SimConfig::uniform(design.pi);
        cfg.N = design.N;
        cfg.rho = std::sqrt(0.7);
        cfg.replications = 10000;
        cfg.seed = 8;
        const auto res = run_study(cfg);
        const double n_eff = cfg.true_sd * cfg.true_sd / res.empirical_variance;
        c.require(design.n == 65, "design n = 65");
        c.require(n_eff >= 190.0, fmt("empirical n_eff %.1f", n_eff));
    });

    criterion(9, "design and allocation property suites", 60.0, [](Check& c) {
        std::mt19937_64 rng(909);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        int bad_design = 0;
        for (int t = 0; t < 1000; ++t) {
            const std::int64_t n_star = 2 + static_cast<std::int64_t>(rng() % 2000);
            const double r2 = u01(rng) * 0.999;
            const std::int64_t N = n_star + static_cast<std::int64_t>(u01(rng) * 50.0 * static_cast<double>(n_star));
            const DesignTarget target{n_star, r2};
            const auto s = required_human_n(target, N);
            bool ok = s.n <= N && static_cast<double>(s.n) >= human_floor(target) - 1e-9 &&
                      effective_sample_size(N, s.n, r2) >= static_cast<double>(n_star) - 1e-6;
            if (static_cast<double>(s.n) > human_floor(target)) ok = ok && required_llm_N(target, s.n).N <= N;
            const auto more = required_human_n(target, N + 1 + static_cast<std::int64_t>(rng() % 5000));
            ok = ok && more.n <= s.n && more.unrounded < s.unrounded + 1e-12;
            if (r2 > 0) ok = ok && more.unrounded < s.unrounded;
            ok = ok && required_human_n({n_star, std::min(1.0, r2 + u01(rng) * (1 - r2))}, N).n <= s.n;
            if (!ok) ++bad_design;
        }
        c.require(bad_design == 0, fmt("%.0f design instances violated invariants", bad_design));

        int bad_tangent = 0, bad_ratio = 0, instances = 0;
        double worst_cross = 0, worst_ratio = 0;
        while (instances < 1000) {
            const std::int64_t n_star = 10 + static_cast<std::int64_t>(rng() % 500);
            const std::int64_t N1 = 20 + static_cast<std::int64_t>(rng() % 5000);
            const std::int64_t N2 = 20 + static_cast<std::int64_t>(rng() % 5000);
            if (N1 + N2 < 2 * n_star) continue;
            const std::vector<StratumSpec> s{{"1", N1, u01(rng) * 0.99}, {"2", N2, u01(rng) * 0.99}};
            const auto plan = optimal_allocation(n_star, s);
            if (plan.allocations[0].clamped || plan.allocations[1].clamped) continue;
            ++instances;
            const double p1 = plan.allocations[0].p, p2 = plan.allocations[1].p;
            const auto curve = allocation_curve(n_star, s, std::span<const double>(&p1, 1));
            const double N = static_cast<double>(N1 + N2);
            const double g1 = static_cast<double>(N1) / N * (1 - s[0].r2) / (p1 * p1);
            const double g2 = static_cast<double>(N2) / N * (1 - s[1].r2) / (p2 * p2);
            const double cross = std::abs(g1 * static_cast<double>(N2) - g2 * static_cast<double>(N1)) /
                                 (std::hypot(g1, g2) * std::hypot(static_cast<double>(N1), static_cast<double>(N2)));
            const double on_curve = std::abs(curve.points.front().p2 - p2) / p2;
            worst_cross = std::max({worst_cross, cross, on_curve});
            if (cross > 1e-6 || on_curve > 1e-6) ++bad_tangent;
            const double ratio = std::abs(p1 / p2 - std::sqrt((1 - s[0].r2) / (1 - s[1].r2)));
            worst_ratio = std::max(worst_ratio, ratio);
            if (ratio > 1e-9) ++bad_ratio;
        }
        c.require(bad_tangent == 0, fmt("tangency failures %.0f (worst %.2e)", bad_tangent, worst_cross));
        c.require(bad_ratio == 0, fmt("sqrt-ratio failures %.0f (worst %.2e)", bad_ratio, worst_ratio));
    });

    std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ALL PASS" : "FAILED", failures);
    return failures == 0 ? 0 : 1;
}
