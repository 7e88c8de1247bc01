#include "nlgrowth/estimator.hpp"
#include "nlgrowth/errors.hpp"
#include "nlgrowth/simulate.hpp"

#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace nlgrowth;
using namespace testutil;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelSpec lgcm_spec(CurveKind kind, bool intrinsic = false) {
    ModelSpec s;
    s.family = Family::LGCM;
    s.form = {kind, intrinsic};
    s.outcome = "Y";
    return s;
}

SimConfig linear_sim(int n, std::uint64_t seed) {
    SimConfig cfg;
    cfg.spec = lgcm_spec(CurveKind::Linear);
    cfg.n = n;
    cfg.waves = {0, 1, 2, 3, 4, 5};
    cfg.jitter_window = 0.25;
    cfg.seed = seed;
    cfg.truth = {{"mu_eta0", 50.0},      {"mu_eta1", 3.0},     {"psi_eta0_eta0", 25.0},
                 {"psi_eta0_eta1", 1.5}, {"psi_eta1_eta1", 1.0}, {"theta_eps", 9.0}};
    return cfg;
}

} // namespace

TEST_CASE("quasi-Newton core on closed-form problems") {
    SECTION("quadratic bowl") {
        const Objective f = [](const Eigen::VectorXd& x) -> std::optional<double> {
            return 3.0 * (x[0] - 1.0) * (x[0] - 1.0) + 0.5 * (x[1] + 2.0) * (x[1] + 2.0) +
                   x[0] * x[1] * 0.2 + 7.0;
        };
        MinimizeOptions mopt;
        mopt.grad_tol = 1e-8;
        const auto res = bfgs_minimize(f, Eigen::VectorXd::Zero(2), mopt);
        REQUIRE(res.status == 0);
        // analytic optimum of the coupled quadratic
        Eigen::MatrixXd h(2, 2);
        h << 6.0, 0.2, 0.2, 1.0;
        Eigen::VectorXd b(2);
        b << 6.0, -2.0;
        const Eigen::VectorXd opt = h.ldlt().solve(b);
        REQUIRE_THAT(res.x[0], WithinAbs(opt[0], 1e-6));
        REQUIRE_THAT(res.x[1], WithinAbs(opt[1], 1e-6));
    }
    SECTION("saturated one-parameter mean model") {
        // -2 ln L of N(theta, 1) data with sample mean 3.2
        const std::vector<double> xs{2.0, 3.0, 3.5, 4.3, 3.2};
        const double mean = 3.2;
        const Objective f = [&](const Eigen::VectorXd& t) -> std::optional<double> {
            double s = 0.0;
            for (double x : xs) s += (x - t[0]) * (x - t[0]);
            return s + xs.size() * std::log(2.0 * M_PI);
        };
        MinimizeOptions mopt;
        mopt.grad_tol = 1e-8;
        const auto res = bfgs_minimize(f, Eigen::VectorXd::Zero(1), mopt);
        REQUIRE(res.status == 0);
        REQUIRE_THAT(res.x[0], WithinAbs(mean, 1e-7));
    }
    SECTION("evaluation failure at the start is status 3") {
        const Objective f = [](const Eigen::VectorXd&) -> std::optional<double> {
            return std::nullopt;
        };
        const auto res = bfgs_minimize(f, Eigen::VectorXd::Zero(1), {});
        REQUIRE(res.status == 3);
    }
    SECTION("iteration limit is status 1") {
        const Objective f = [](const Eigen::VectorXd& x) -> std::optional<double> {
            // slow valley
            return std::pow(x[0] - 1.0, 4) + std::pow(x[1] - 2.0, 4) + 1.0;
        };
        MinimizeOptions opt;
        opt.max_iterations = 2;
        const auto res = bfgs_minimize(f, Eigen::VectorXd::Constant(2, 40.0), opt);
        REQUIRE(res.status == 1);
    }
}

TEST_CASE("central differences agree with forward differences to first order") {
    const Objective f = [](const Eigen::VectorXd& x) -> std::optional<double> {
        return std::exp(0.3 * x[0]) + std::sin(x[1]) + x[0] * x[1];
    };
    Rng rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd x(2);
        x << rng.normal(0, 2), rng.normal(0, 2);
        const double fx = *f(x);
        const auto g = central_gradient(f, x, fx);
        REQUIRE(g.has_value());
        for (int j = 0; j < 2; ++j) {
            const double h = std::max(1e-6, 1e-6 * std::fabs(x[j]));
            Eigen::VectorXd xp = x;
            xp[j] += h;
            const double fwd = (*f(xp) - fx) / h;
            REQUIRE_THAT((*g)[j], WithinAbs(fwd, 20.0 * h + 1e-7));
        }
    }
}

TEST_CASE("jitter") {
    const auto roles = single_roles("Y", 3);
    ModelDesign design(lgcm_spec(CurveKind::Linear), roles);
    Eigen::VectorXd starts(design.layout().size());
    for (int i = 0; i < starts.size(); ++i) starts[i] = 0.3 + i;

    SECTION("zero scale leaves the starts unchanged") {
        FitConfig cfg;
        cfg.scale = 0.0;
        Rng rng(1);
        const auto out = jitter(design, starts, cfg, rng);
        REQUIRE((out - starts).lpNorm<Eigen::Infinity>() == 0.0);
    }
    SECTION("default uniform jitter multiplies by values in [0.75, 1.25]") {
        FitConfig cfg; // defaults: runif, loc 1, scale 0.25
        Rng rng(2);
        for (int rep = 0; rep < 50; ++rep) {
            const auto out = jitter(design, starts, cfg, rng);
            for (int i = 0; i < starts.size(); ++i) {
                const double mult = out[i] / starts[i];
                REQUIRE(std::fabs(mult) >= 0.75 - 1e-12);
                REQUIRE(std::fabs(mult) <= 1.25 + 1e-12);
            }
        }
    }
    SECTION("a fixed seed reproduces the jitter stream bit for bit") {
        FitConfig cfg;
        Rng a(77), b(77);
        const auto out1 = jitter(design, starts, cfg, a);
        const auto out2 = jitter(design, starts, cfg, b);
        REQUIRE((out1 - out2).lpNorm<Eigen::Infinity>() == 0.0);
    }
    SECTION("Cholesky diagonals stay positive under heavy-tailed jitter") {
        FitConfig cfg;
        cfg.jitter_dist = JitterDist::Rcauchy;
        Rng rng(3);
        for (int rep = 0; rep < 100; ++rep) {
            const auto out = jitter(design, starts, cfg, rng);
            for (int i = 0; i < out.size(); ++i)
                if (design.layout().is_chol_diag(i)) REQUIRE(out[i] >= 0.0);
        }
    }
}

TEST_CASE("derived starting values") {
    SECTION("noiseless linear data recovers the generating line exactly") {
        const auto roles = single_roles("Y", 4);
        std::vector<std::map<std::string, double>> rows;
        Rng rng(9);
        for (int i = 0; i < 10; ++i) {
            std::map<std::string, double> row;
            double t = rng.uniform(-0.2, 0.2);
            for (int w = 0; w < 4; ++w) {
                row["T" + std::to_string(w + 1)] = t;
                row["Y" + std::to_string(w + 1)] = 1.0 + 2.0 * t;
                t += rng.uniform(0.8, 1.2);
            }
            rows.push_back(row);
        }
        const auto data = make_data(roles, rows);
        ModelDesign design(lgcm_spec(CurveKind::Linear), roles);
        const auto v = derive_starts(design, data, {});
        REQUIRE_THAT(v[design.layout().index_of("mu_eta0")], WithinAbs(1.0, 1e-8));
        REQUIRE_THAT(v[design.layout().index_of("mu_eta1")], WithinAbs(2.0, 1e-8));
        const auto psi = design.layout().cov_matrix(design.psi_block_of_proc()[0], v);
        REQUIRE(psi.diagonal().maxCoeff() < 1e-6);
    }
    SECTION("residual start is the configured share of the mean wave variance") {
        const auto roles = single_roles("Y", 2);
        // two individuals per wave with values 0 and 10: sample variance 50
        std::vector<std::map<std::string, double>> rows;
        rows.push_back({{"Y1", 0.0}, {"T1", 0.0}, {"Y2", 0.0}, {"T2", 1.0}});
        rows.push_back({{"Y1", 10.0}, {"T1", 0.0}, {"Y2", 10.0}, {"T2", 1.0}});
        const auto data = make_data(roles, rows);
        ModelDesign design(lgcm_spec(CurveKind::Linear), roles);
        FitConfig cfg;
        cfg.res_scale = {0.1};
        const auto v = derive_starts(design, data, cfg);
        const double theta =
            design.layout().cov_matrix(design.procs()[0].theta_block, v)(0, 0);
        REQUIRE_THAT(theta, WithinRel(5.0, 1e-9));
    }
    SECTION("the rate-ratio grid lands within one grid step of the truth") {
        SimConfig cfg;
        cfg.spec = lgcm_spec(CurveKind::NegExponential, false);
        cfg.n = 300;
        cfg.waves = {0, 1, 2, 3, 4, 5};
        cfg.jitter_window = 0.2;
        cfg.seed = 31;
        cfg.truth = {{"mu_eta0", 10.0},      {"mu_eta1", 20.0},      {"mu_b", 0.5},
                     {"psi_eta0_eta0", 1.0}, {"psi_eta0_eta1", 0.1}, {"psi_eta1_eta1", 1.0},
                     {"theta_eps", 0.5}};
        const auto sim = simulate(cfg);
        ModelDesign design(cfg.spec, sim.data.roles());
        const auto v = derive_starts(design, sim.data, {});
        const double step = 1.9 / 11.0;
        REQUIRE(std::fabs(v[design.layout().index_of("mu_b")] - 0.5) <= step + 1e-12);
    }
    SECTION("too few usable individuals is degenerate data") {
        const auto roles = single_roles("Y", 3);
        const auto data =
            make_data(roles, {{{"Y1", 1.0}, {"T1", 0.0}}, {{"Y1", 2.0}, {"T1", 0.0}}});
        ModelDesign design(lgcm_spec(CurveKind::Linear), roles);
        REQUIRE_THROWS_AS(derive_starts(design, data, {}), DegenerateData);
    }
}

TEST_CASE("fitting a linear trajectory model") {
    const auto sim = simulate(linear_sim(150, 7));
    ModelDesign design(lgcm_spec(CurveKind::Linear), sim.data.roles());
    FitConfig cfg;
    cfg.seed = 1;

    const FitResult fit1 = fit(design, sim.data, cfg);
    REQUIRE(fit1.status == 0);
    REQUIRE(fit1.user_se.has_value());
    REQUIRE(fit1.n_parameters == 6);

    SECTION("estimates sit near the generating values") {
        const auto idx = [&](const std::string& n) {
            return std::find(fit1.user_names.begin(), fit1.user_names.end(), n) -
                   fit1.user_names.begin();
        };
        REQUIRE_THAT(fit1.user_estimates[idx("mu_eta0")], WithinAbs(50.0, 1.5));
        REQUIRE_THAT(fit1.user_estimates[idx("mu_eta1")], WithinAbs(3.0, 0.4));
    }
    SECTION("gradient at the solution is below tolerance") {
        FimlEvaluator ev(design, design.prepare_all(sim.data));
        const Objective f = [&](const Eigen::VectorXd& x) -> std::optional<double> {
            auto r = ev.try_evaluate(x);
            if (!r) return std::nullopt;
            return r->minus_two_log_lik;
        };
        const double fx = *f(fit1.internal_estimates);
        const auto g = central_gradient(f, fit1.internal_estimates, fx);
        REQUIRE(g.has_value());
        REQUIRE(g->lpNorm<Eigen::Infinity>() < cfg.grad_tol);
    }
    SECTION("the fit does not worsen its own starting objective") {
        FimlEvaluator ev(design, design.prepare_all(sim.data));
        const auto starts = derive_starts(design, sim.data, cfg);
        const auto at_start = ev.evaluate(starts);
        REQUIRE(fit1.minus_two_log_lik <= at_start.minus_two_log_lik + 1e-9);
    }
    SECTION("refitting from the solution is a fixed point") {
        FitConfig warm = cfg;
        std::map<std::string, double> starts;
        for (std::size_t i = 0; i < fit1.internal_names.size(); ++i)
            starts[fit1.internal_names[i]] = fit1.internal_estimates[static_cast<Eigen::Index>(i)];
        warm.starts = starts;
        const FitResult fit2 = fit(design, sim.data, warm);
        REQUIRE(std::fabs(fit2.minus_two_log_lik - fit1.minus_two_log_lik) < 1e-6);
    }
    SECTION("fitting is deterministic given the seed") {
        const FitResult fit2 = fit(design, sim.data, cfg);
        REQUIRE(fit2.minus_two_log_lik == fit1.minus_two_log_lik);
        REQUIRE((fit2.internal_estimates - fit1.internal_estimates).lpNorm<Eigen::Infinity>() ==
                0.0);
        REQUIRE(fit2.attempts.size() == fit1.attempts.size());
        REQUIRE(fit2.attempts[0].start_hash == fit1.attempts[0].start_hash);
    }
}

TEST_CASE("multi-start escapes a collapsed mixture start") {
    // identical class starts sit on the label-symmetry manifold: the first
    // attempt stalls there (non-PD information), jittered attempts split the
    // classes and reach the real optimum
    SimConfig sc;
    sc.spec = lgcm_spec(CurveKind::Linear);
    sc.spec.family = Family::Mixture;
    sc.spec.mixture = MixtureSpec{2, Family::LGCM, {}, {}};
    sc.n = 200;
    sc.waves = {0, 1, 2, 3, 4};
    sc.jitter_window = 0.2;
    sc.seed = 17;
    sc.truth = {{"c1_mu_eta0", 40.0}, {"c1_mu_eta1", 1.0},  {"c1_psi_eta0_eta0", 9.0},
                {"c1_psi_eta0_eta1", 0.5}, {"c1_psi_eta1_eta1", 0.5}, {"c1_theta_eps", 4.0},
                {"c2_mu_eta0", 58.0}, {"c2_mu_eta1", 4.0},  {"c2_psi_eta0_eta0", 9.0},
                {"c2_psi_eta0_eta1", 0.5}, {"c2_psi_eta1_eta1", 0.5}, {"c2_theta_eps", 4.0},
                {"pi2_int", 0.0}};
    const auto sim = simulate(sc);
    ModelDesign design(sc.spec, sim.data.roles());

    // deliberately bad start: a +150 membership logit starves class 1 so
    // far that its parameters are numerically flat and the first attempt
    // converges onto a singular information matrix (status 2); wide jitter
    // can deflate the logit back into identified territory
    FitConfig base_cfg;
    const auto derived = derive_starts(design, sim.data, base_cfg);
    std::map<std::string, double> bad;
    for (int i = 0; i < design.layout().size(); ++i)
        bad[design.layout().entries()[static_cast<std::size_t>(i)].name] = derived[i];
    bad["pi2_int"] = 150.0;

    FitConfig cfg;
    cfg.starts = bad;
    cfg.tries = 5;
    cfg.loc = 0.5;  // wide multiplicative jitter can deflate the logit
    cfg.scale = 0.5;
    cfg.seed = 1;
    const FitResult res = fit(design, sim.data, cfg);
    REQUIRE(res.attempts.size() >= 2);
    REQUIRE(res.attempts[0].status == 2);
    REQUIRE(res.status == 0);
}
