#include "nlgrowth/model_builder.hpp"
#include "nlgrowth/errors.hpp"

#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace nlgrowth;
using namespace testutil;
using Catch::Matchers::WithinAbs;

namespace {

ModelSpec lgcm_spec(CurveKind kind, bool intrinsic = false) {
    ModelSpec s;
    s.family = Family::LGCM;
    s.form = {kind, intrinsic};
    s.outcome = "Y";
    return s;
}

std::vector<int> all_present(const ModelDesign& d, const IndividualData& ind) {
    return ind.present_nodes;
}

} // namespace

TEST_CASE("identity structure reproduces its own moments") {
    // A = 0, S = I, M = 0, nu = 0 over three observed nodes
    StructuralMatrices sm;
    sm.n_nodes = 3;
    sm.n_obs = 3;
    sm.paths = Eigen::MatrixXd::Zero(3, 3);
    sm.exo_cov = Eigen::MatrixXd::Identity(3, 3);
    sm.node_mean = Eigen::VectorXd::Zero(3);
    sm.obs_offset = Eigen::VectorXd::Zero(3);
    const auto im = implied_moments(sm, {0, 1, 2});
    REQUIRE(im.mean.isZero(0));
    REQUIRE(im.cov.isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-14));
}

TEST_CASE("singular path structure is reported") {
    StructuralMatrices sm;
    sm.n_nodes = 2;
    sm.n_obs = 2;
    sm.paths = Eigen::MatrixXd::Identity(2, 2); // (I - A) singular
    sm.exo_cov = Eigen::MatrixXd::Identity(2, 2);
    sm.node_mean = Eigen::VectorXd::Zero(2);
    sm.obs_offset = Eigen::VectorXd::Zero(2);
    REQUIRE_THROWS_AS(implied_moments(sm, {0, 1}), SingularStructure);
}

TEST_CASE("linear trajectory model implies the line through the factor means") {
    const auto roles = single_roles("Y", 3);
    ModelDesign design(lgcm_spec(CurveKind::Linear), roles);
    const auto v = internal_params(design.layout(), {{"mu_eta0", 2.0}, {"mu_eta1", 0.5}},
                                   {{"psi", cov2(1.0, 0.2, 0.4)}, {"theta_eps", cov1(1.0)}});
    const auto data = one_individual(roles, {0.0, 1.0, 2.0});
    const auto ind = design.prepare(data, data.individuals()[0]);
    auto sm = design.make_structural();
    design.build_structural(v, ind, sm);
    const auto im = implied_moments(sm, all_present(design, ind));
    REQUIRE_THAT(im.mean[0], WithinAbs(2.0, 1e-12));
    REQUIRE_THAT(im.mean[1], WithinAbs(2.5, 1e-12));
    REQUIRE_THAT(im.mean[2], WithinAbs(3.0, 1e-12));
}

TEST_CASE("no latent variance leaves the residual identity covariance") {
    const auto roles = single_roles("Y", 3);
    ModelDesign design(lgcm_spec(CurveKind::Linear), roles);
    const auto v = internal_params(design.layout(), {{"mu_eta0", 1.0}, {"mu_eta1", 1.0}},
                                   {{"psi", cov2(0.0, 0.0, 0.0)}, {"theta_eps", cov1(1.0)}});
    const auto data = one_individual(roles, {0.0, 1.0, 2.0});
    const auto ind = design.prepare(data, data.individuals()[0]);
    auto sm = design.make_structural();
    design.build_structural(v, ind, sm);
    const auto im = implied_moments(sm, all_present(design, ind));
    REQUIRE(im.cov.isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-9));
}

TEST_CASE("implied covariance is symmetric and positive semidefinite by construction") {
    Rng rng(101);
    const auto roles = single_roles("Y", 4);
    for (const bool intrinsic : {false, true}) {
        ModelDesign design(lgcm_spec(CurveKind::NegExponential, intrinsic), roles);
        const auto data = one_individual(roles, {0.0, 0.9, 2.1, 3.4});
        const auto ind = design.prepare(data, data.individuals()[0]);
        auto sm = design.make_structural();
        for (int rep = 0; rep < 50; ++rep) {
            Eigen::VectorXd v(design.layout().size());
            for (int i = 0; i < v.size(); ++i) v[i] = rng.normal(0.0, 1.0);
            v[design.layout().index_of("mu_b")] = rng.uniform(0.1, 1.5);
            design.build_structural(v, ind, sm);
            const auto im = implied_moments(sm, ind.present_nodes);
            REQUIRE((im.cov - im.cov.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(im.cov);
            REQUIRE(es.eigenvalues().minCoeff() >= -1e-8 * im.cov.trace());
        }
    }
}

TEST_CASE("intrinsic model with a silenced deviation factor reproduces the reduced model") {
    const auto roles = single_roles("Y", 4);
    const std::vector<double> times{0.0, 1.0, 2.2, 3.1};
    ModelDesign full(lgcm_spec(CurveKind::NegExponential, true), roles);
    ModelDesign reduced(lgcm_spec(CurveKind::NegExponential, false), roles);

    Eigen::MatrixXd psi_full = Eigen::MatrixXd::Zero(3, 3);
    psi_full.topLeftCorner(2, 2) = cov2(4.0, 0.5, 1.0);
    const auto vf = internal_params(full.layout(),
                                    {{"mu_eta0", 10.0}, {"mu_eta1", 20.0}, {"mu_b", 0.5}},
                                    {{"psi", psi_full}, {"theta_eps", cov1(2.0)}});
    const auto vr = internal_params(reduced.layout(),
                                    {{"mu_eta0", 10.0}, {"mu_eta1", 20.0}, {"mu_b", 0.5}},
                                    {{"psi", cov2(4.0, 0.5, 1.0)}, {"theta_eps", cov1(2.0)}});
    const auto data = one_individual(roles, times);
    const auto indf = full.prepare(data, data.individuals()[0]);
    const auto indr = reduced.prepare(data, data.individuals()[0]);
    auto smf = full.make_structural();
    auto smr = reduced.make_structural();
    full.build_structural(vf, indf, smf);
    reduced.build_structural(vr, indr, smr);
    const auto imf = implied_moments(smf, indf.present_nodes);
    const auto imr = implied_moments(smr, indr.present_nodes);
    REQUIRE((imf.mean - imr.mean).lpNorm<Eigen::Infinity>() < 1e-12);
    REQUIRE((imf.cov - imr.cov).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("TVC with a zero state effect matches the plain trajectory model") {
    ColumnRoles roles = single_roles("Y", 4);
    roles.longitudinal.push_back(var_with_waves("X", "T", {0, 1, 2, 3}));

    ModelSpec spec = lgcm_spec(CurveKind::Linear);
    spec.family = Family::TVC;
    spec.tvc = TvcSpec{"X", 1, Family::LGCM};
    ModelDesign design(spec, roles);

    Eigen::VectorXd v = internal_params(
        design.layout(),
        {{"alpha_eta0_Y", 3.0}, {"alpha_eta1_Y", 1.0}, {"mu_eta0_X", 5.0}, {"mu_eta1_X", 0.5},
         {"kappa", 0.0}, {"rrate2_X", 1.2}, {"rrate3_X", 0.8}},
        {{"psi_Y", cov2(4.0, 0.3, 1.0)},
         {"psi_X", cov2(1.0, 0.1, 0.3)},
         {"theta_eps_Y", cov1(2.0)},
         {"theta_eps_X", cov1(1.0)}});

    ModelDesign base(lgcm_spec(CurveKind::Linear), single_roles("Y", 4));
    const auto vb = internal_params(base.layout(), {{"mu_eta0", 3.0}, {"mu_eta1", 1.0}},
                                    {{"psi", cov2(4.0, 0.3, 1.0)}, {"theta_eps", cov1(2.0)}});

    const std::vector<double> times{0.0, 1.0, 2.0, 3.5};
    const auto data = one_individual(roles, times);
    const auto base_data = one_individual(single_roles("Y", 4), times);
    const auto ind = design.prepare(data, data.individuals()[0]);
    const auto bind = base.prepare(base_data, base_data.individuals()[0]);
    auto sm = design.make_structural();
    auto smb = base.make_structural();
    design.build_structural(v, ind, sm);
    base.build_structural(vb, bind, smb);
    const auto im = implied_moments(sm, ind.present_nodes);
    const auto imb = implied_moments(smb, bind.present_nodes);
    // with kappa = 0 and no trait path, the outcome block matches the plain model
    REQUIRE((im.mean.head(4) - imb.mean).lpNorm<Eigen::Infinity>() < 1e-10);
    REQUIRE((im.cov.topLeftCorner(4, 4) - imb.cov).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("decomposed-covariate state weights follow the three recursions") {
    ColumnRoles roles = single_roles("Y", 4);
    roles.longitudinal.push_back(var_with_waves("X", "T", {0, 1, 2, 3}));
    const std::vector<double> times{0.0, 2.0, 3.0, 4.5};

    const auto weights_for = [&](int type) {
        ModelSpec spec = lgcm_spec(CurveKind::Linear);
        spec.family = Family::TVC;
        spec.tvc = TvcSpec{"X", type, Family::LGCM};
        ModelDesign design(spec, roles);
        Eigen::VectorXd v = internal_params(
            design.layout(),
            {{"alpha_eta0_Y", 0.0}, {"alpha_eta1_Y", 0.0}, {"mu_eta0_X", 0.0}, {"mu_eta1_X", 0.0},
             {"kappa", 1.0}, {"rrate2_X", 1.3}, {"rrate3_X", 0.8}},
            {{"psi_Y", cov2(1.0, 0.0, 1.0)},
             {"psi_X", cov2(1.0, 0.0, 1.0)},
             {"theta_eps_Y", cov1(1.0)},
             {"theta_eps_X", cov1(1.0)}});
        const auto data = one_individual(roles, times);
        const auto ind = design.prepare(data, data.individuals()[0]);
        auto sm = design.make_structural();
        design.build_structural(v, ind, sm);
        // with kappa = 1 the path from the covariate slope factor to y_j is w_j
        const int x_eta1 = design.procs()[1].first_factor_node + 1;
        Eigen::VectorXd w(4);
        for (int j = 0; j < 4; ++j) w[j] = sm.paths(j, x_eta1);
        return w;
    };

    const Eigen::VectorXd w1 = weights_for(1);
    const Eigen::VectorXd w2 = weights_for(2);
    const Eigen::VectorXd w3 = weights_for(3);

    // example: change-from-baseline weight at the second wave equals the gap
    {
        ColumnRoles r2 = single_roles("Y", 2);
        r2.longitudinal.push_back(var_with_waves("X", "T", {0, 1}));
        ModelSpec spec = lgcm_spec(CurveKind::Linear);
        spec.family = Family::TVC;
        spec.tvc = TvcSpec{"X", 3, Family::LGCM};
        ModelDesign design(spec, r2);
        Eigen::VectorXd v = internal_params(
            design.layout(),
            {{"alpha_eta0_Y", 0.0}, {"alpha_eta1_Y", 0.0}, {"mu_eta0_X", 0.0}, {"mu_eta1_X", 0.0},
             {"kappa", 1.0}},
            {{"psi_Y", cov2(1.0, 0.0, 1.0)},
             {"psi_X", cov2(1.0, 0.0, 1.0)},
             {"theta_eps_Y", cov1(1.0)},
             {"theta_eps_X", cov1(1.0)}});
        const auto data = one_individual(r2, {0.0, 2.0});
        const auto ind = design.prepare(data, data.individuals()[0]);
        auto sm = design.make_structural();
        design.build_structural(v, ind, sm);
        REQUIRE_THAT(sm.paths(1, design.procs()[1].first_factor_node + 1), WithinAbs(2.0, 1e-12));
    }

    // type-2 weights are type-1 weights scaled by interval lengths
    for (int j = 1; j < 4; ++j) {
        const double dt = times[static_cast<std::size_t>(j)] - times[static_cast<std::size_t>(j - 1)];
        REQUIRE_THAT(w2[j], WithinAbs(w1[j] * dt, 1e-12));
    }
    // type-3 weights accumulate the type-2 weights
    double acc = 0.0;
    for (int j = 1; j < 4; ++j) {
        acc += w2[j];
        REQUIRE_THAT(w3[j], WithinAbs(acc, 1e-12));
    }
    // baseline rows carry no state effect
    REQUIRE(w1[0] == 0.0);
    REQUIRE(w2[0] == 0.0);
    REQUIRE(w3[0] == 0.0);
}

TEST_CASE("TVC type 0 requires the covariate wherever the outcome is observed") {
    ColumnRoles roles = single_roles("Y", 3);
    roles.longitudinal.push_back(var_with_waves("X", "T", {0, 1, 2}));
    ModelSpec spec = lgcm_spec(CurveKind::Linear);
    spec.family = Family::TVC;
    spec.tvc = TvcSpec{"X", 0, Family::LGCM};
    ModelDesign design(spec, roles);
    std::map<std::string, double> row{{"Y1", 1.0}, {"Y2", 2.0}, {"Y3", 3.0},
                                      {"T1", 0.0}, {"T2", 1.0}, {"T3", 2.0},
                                      {"X1", 0.5}, {"X3", 0.7}}; // X2 missing
    const auto data = make_data(roles, {row});
    REQUIRE_THROWS_AS(design.prepare(data, data.individuals()[0]), RoleMismatch);
}

TEST_CASE("multivariate model with zero cross blocks splits into the univariate models") {
    ColumnRoles roles;
    roles.longitudinal.push_back(var_with_waves("Y", "T", {0, 1, 2}));
    roles.longitudinal.push_back(var_with_waves("Z", "T", {0, 1, 2}));
    ModelSpec spec;
    spec.family = Family::MGM;
    spec.form = {CurveKind::Linear, false};
    spec.mgm = MgmSpec{{"Y", "Z"}, Family::LGCM};
    ModelDesign design(spec, roles);

    Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(4, 4);
    psi.topLeftCorner(2, 2) = cov2(4.0, 0.4, 1.0);
    psi.bottomRightCorner(2, 2) = cov2(2.0, 0.1, 0.5);
    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(2, 2);
    theta(0, 0) = 1.5;
    theta(1, 1) = 0.7;
    const auto v = internal_params(design.layout(),
                                   {{"mu_eta0_Y", 3.0}, {"mu_eta1_Y", 1.0}, {"mu_eta0_Z", -1.0},
                                    {"mu_eta1_Z", 0.2}},
                                   {{"psi", psi}, {"theta_eps", theta}});
    const auto data = one_individual(roles, {0.0, 1.0, 2.0});
    const auto ind = design.prepare(data, data.individuals()[0]);
    auto sm = design.make_structural();
    design.build_structural(v, ind, sm);
    const auto im = implied_moments(sm, ind.present_nodes);
    REQUIRE(im.cov.topRightCorner(3, 3).lpNorm<Eigen::Infinity>() < 1e-12);

    ModelDesign uni(lgcm_spec(CurveKind::Linear), single_roles("Y", 3));
    const auto vu = internal_params(uni.layout(), {{"mu_eta0", 3.0}, {"mu_eta1", 1.0}},
                                    {{"psi", cov2(4.0, 0.4, 1.0)}, {"theta_eps", cov1(1.5)}});
    const auto udata = one_individual(single_roles("Y", 3), {0.0, 1.0, 2.0});
    const auto uind = uni.prepare(udata, udata.individuals()[0]);
    auto usm = uni.make_structural();
    uni.build_structural(vu, uind, usm);
    const auto imu = implied_moments(usm, uind.present_nodes);
    REQUIRE((im.cov.topLeftCorner(3, 3) - imu.cov).lpNorm<Eigen::Infinity>() < 1e-12);
    REQUIRE((im.mean.head(3) - imu.mean).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("mediation with all paths removed factorizes into process blocks") {
    ColumnRoles roles;
    roles.longitudinal.push_back(var_with_waves("X", "T", {0, 1, 2}));
    roles.longitudinal.push_back(var_with_waves("M", "T", {0, 1, 2}));
    roles.longitudinal.push_back(var_with_waves("Y", "T", {0, 1, 2}));
    ModelSpec spec;
    spec.family = Family::Mediation;
    spec.form = {CurveKind::Linear, false};
    spec.mediation = MediationSpec{"X", "M", "Y", true, {}};
    ModelDesign design(spec, roles);

    std::map<std::string, double> scalars{{"mu_eta0_X", 1.0},   {"mu_eta1_X", 0.5},
                                          {"alpha_eta0_M", 2.0}, {"alpha_eta1_M", 0.2},
                                          {"alpha_eta0_Y", 3.0}, {"alpha_eta1_Y", 0.1}};
    for (const auto& mp : design.mediation_paths())
        if (mp.param_idx >= 0) scalars[mp.name] = 0.0;
    const auto v = internal_params(design.layout(), scalars,
                                   {{"psi_X", cov2(1.0, 0.1, 0.5)},
                                    {"psi_M", cov2(1.0, 0.1, 0.5)},
                                    {"psi_Y", cov2(1.0, 0.1, 0.5)},
                                    {"theta_eps_X", cov1(1.0)},
                                    {"theta_eps_M", cov1(1.0)},
                                    {"theta_eps_Y", cov1(1.0)}});
    const auto data = one_individual(roles, {0.0, 1.0, 2.0});
    const auto ind = design.prepare(data, data.individuals()[0]);
    auto sm = design.make_structural();
    design.build_structural(v, ind, sm);
    const auto im = implied_moments(sm, ind.present_nodes);
    REQUIRE(im.cov.block(0, 3, 3, 6).lpNorm<Eigen::Infinity>() < 1e-12);
    REQUIRE(im.cov.block(3, 6, 3, 3).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("membership probabilities") {
    SECTION("zero coefficients spread classes uniformly") {
        const auto p = class_probabilities(Eigen::VectorXd::Zero(2), Eigen::MatrixXd(), {}, 3);
        for (int g = 0; g < 3; ++g) REQUIRE_THAT(p[g], WithinAbs(1.0 / 3.0, 1e-12));
    }
    SECTION("a log-3 intercept splits 1:3") {
        Eigen::VectorXd b0(1);
        b0 << std::log(3.0);
        const auto p = class_probabilities(b0, Eigen::MatrixXd(), {}, 2);
        REQUIRE_THAT(p[0], WithinAbs(0.25, 1e-12));
        REQUIRE_THAT(p[1], WithinAbs(0.75, 1e-12));
    }
    SECTION("extreme coefficients stay inside [0, 1]") {
        Eigen::VectorXd b0(1);
        for (const double v : {800.0, -800.0}) {
            b0 << v;
            const auto p = class_probabilities(b0, Eigen::MatrixXd(), {}, 2);
            REQUIRE(p[0] >= 0.0);
            REQUIRE(p[0] <= 1.0);
            REQUIRE(p[1] >= 0.0);
            REQUIRE(p[1] <= 1.0);
            REQUIRE_THAT(p.sum(), WithinAbs(1.0, 1e-12));
        }
    }
    SECTION("probabilities sum to one on random coefficients") {
        Rng rng(31);
        for (int rep = 0; rep < 100; ++rep) {
            Eigen::VectorXd b0(3);
            Eigen::MatrixXd bc(3, 2);
            Eigen::VectorXd x(2);
            for (int i = 0; i < 3; ++i) b0[i] = rng.normal(0, 5);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 2; ++j) bc(i, j) = rng.normal(0, 2);
            x << rng.normal(), rng.normal();
            const auto p = class_probabilities(b0, bc, x, 4);
            REQUIRE_THAT(p.sum(), WithinAbs(1.0, 1e-12));
            REQUIRE(p.minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("mixture submodels") {
    const auto roles = single_roles("Y", 3);
    ModelSpec spec = lgcm_spec(CurveKind::Linear);
    spec.family = Family::Mixture;
    spec.mixture = MixtureSpec{2, Family::LGCM, {}, {}};
    ModelDesign design(spec, roles);

    SECTION("one class is rejected") {
        ModelSpec bad = spec;
        bad.mixture->n_classes = 1;
        REQUIRE_THROWS_WITH(ModelDesign(bad, roles), Catch::Matchers::ContainsSubstring("grp must be >= 2"));
    }
    SECTION("class index bounds") {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(design.layout().size());
        REQUIRE_THROWS_AS(class_submodel(design, v, 0), ClassIndexOutOfRange);
        REQUIRE_THROWS_AS(class_submodel(design, v, 3), ClassIndexOutOfRange);
    }
    SECTION("identical class parameters give identical implied moments") {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(design.layout().size());
        for (int g = 1; g <= 2; ++g) {
            const std::string cp = "c" + std::to_string(g) + "_";
            v[design.layout().index_of(cp + "mu_eta0")] = 4.0;
            v[design.layout().index_of(cp + "mu_eta1")] = 1.0;
            v[design.layout().index_of("L." + cp + "psi.0.0")] = 2.0;
            v[design.layout().index_of("L." + cp + "psi.1.1")] = 1.0;
            v[design.layout().index_of("L." + cp + "theta_eps.0.0")] = 1.0;
        }
        const auto [spec1, v1] = class_submodel(design, v, 1);
        const auto [spec2, v2] = class_submodel(design, v, 2);
        REQUIRE((v1 - v2).lpNorm<Eigen::Infinity>() == 0.0);
        REQUIRE(spec1.family == Family::LGCM);

        const auto data = one_individual(roles, {0.0, 1.0, 2.0});
        const auto ind = design.prepare(data, data.individuals()[0]);
        auto sm = design.make_structural();
        design.build_structural(v1, ind, sm);
        const auto im1 = implied_moments(sm, ind.present_nodes);
        design.build_structural(v2, ind, sm);
        const auto im2 = implied_moments(sm, ind.present_nodes);
        REQUIRE((im1.mean - im2.mean).lpNorm<Eigen::Infinity>() == 0.0);
        REQUIRE((im1.cov - im2.cov).lpNorm<Eigen::Infinity>() == 0.0);
    }
    SECTION("class slices partition the master vector") {
        Eigen::VectorXd v(design.layout().size());
        for (int i = 0; i < v.size(); ++i) v[i] = i + 1;
        const auto s1 = design.class_slice(v, 0);
        const auto s2 = design.class_slice(v, 1);
        REQUIRE(s1.size() + s2.size() + 1 == v.size()); // one logit intercept
        std::set<double> seen;
        for (int i = 0; i < s1.size(); ++i) seen.insert(s1[i]);
        for (int i = 0; i < s2.size(); ++i) seen.insert(s2[i]);
        seen.insert(v[design.layout().index_of("pi2_int")]);
        REQUIRE(seen.size() == static_cast<std::size_t>(v.size()));
    }
}

TEST_CASE("implied moments match brute-force simulation of the exact curves") {
    // reduced models are linear in their factors, so drawing factors and
    // evaluating the exact curve is an independent oracle for the implied
    // moments
    const auto roles = single_roles("Y", 4);
    ModelDesign design(lgcm_spec(CurveKind::NegExponential, false), roles);
    const Eigen::VectorXd mu = (Eigen::VectorXd(2) << 10.0, 20.0).finished();
    const Eigen::MatrixXd psi = cov2(4.0, 0.6, 2.25);
    const double b = 0.5, theta = 1.44;
    const auto v = internal_params(design.layout(),
                                   {{"mu_eta0", mu[0]}, {"mu_eta1", mu[1]}, {"mu_b", b}},
                                   {{"psi", psi}, {"theta_eps", cov1(theta)}});
    const std::vector<double> times{0.1, 0.9, 2.2, 3.6};
    const auto data = one_individual(roles, times);
    const auto ind = design.prepare(data, data.individuals()[0]);
    auto sm = design.make_structural();
    design.build_structural(v, ind, sm);
    const auto im = implied_moments(sm, ind.present_nodes);

    Rng rng(20211);
    const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(psi).matrixL();
    MomentAccumulator acc(4);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd eta = mu + l * (Eigen::VectorXd(2) << rng.normal(), rng.normal()).finished();
        Eigen::VectorXd y(4);
        for (int j = 0; j < 4; ++j)
            y[j] = true_trajectory(CurveKind::NegExponential, times[static_cast<std::size_t>(j)],
                                   eta, b) +
                   std::sqrt(theta) * rng.normal();
        acc.add(y);
    }
    REQUIRE(acc.mean_close(im.mean, im.cov));
    REQUIRE(acc.cov_close(im.cov));
}

TEST_CASE("decomposed-covariate moments match the latent change recursion") {
    // oracle: build the covariate's latent true scores by the literal
    // recursion, form the interval-specific changes, and regress the outcome
    // on them
    ColumnRoles roles = single_roles("Y", 4);
    roles.longitudinal.push_back(var_with_waves("X", "T", {0, 1, 2, 3}));
    ModelSpec spec = lgcm_spec(CurveKind::Linear);
    spec.family = Family::TVC;
    spec.tvc = TvcSpec{"X", 2, Family::LGCM};
    ModelDesign design(spec, roles);

    const double kappa = 0.5, b_trait0 = 0.4, b_trait1 = 0.15;
    const Eigen::MatrixXd psi_y = cov2(4.0, 0.3, 1.0);
    const Eigen::MatrixXd psi_x = cov2(1.0, 0.1, 0.3);
    const Eigen::VectorXd rates = (Eigen::VectorXd(3) << 1.0, 1.3, 0.8).finished();
    const auto v = internal_params(
        design.layout(),
        {{"alpha_eta0_Y", 3.0}, {"alpha_eta1_Y", 1.0}, {"mu_eta0_X", 5.0}, {"mu_eta1_X", 0.6},
         {"kappa", kappa}, {"beta_tvc_eta0", b_trait0}, {"beta_tvc_eta1", b_trait1},
         {"rrate2_X", rates[1]}, {"rrate3_X", rates[2]}},
        {{"psi_Y", psi_y}, {"psi_X", psi_x}, {"theta_eps_Y", cov1(1.2)}, {"theta_eps_X", cov1(0.8)}});

    const std::vector<double> times{0.0, 1.1, 2.0, 3.4};
    const auto data = one_individual(roles, times);
    const auto ind = design.prepare(data, data.individuals()[0]);
    auto sm = design.make_structural();
    design.build_structural(v, ind, sm);
    const auto im = implied_moments(sm, ind.present_nodes);

    Rng rng(777);
    const Eigen::MatrixXd ly = Eigen::LLT<Eigen::MatrixXd>(psi_y).matrixL();
    const Eigen::MatrixXd lx = Eigen::LLT<Eigen::MatrixXd>(psi_x).matrixL();
    MomentAccumulator acc(8);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd eta_x =
            (Eigen::VectorXd(2) << 5.0, 0.6).finished() +
            lx * (Eigen::VectorXd(2) << rng.normal(), rng.normal()).finished();
        Eigen::VectorXd eta_y =
            (Eigen::VectorXd(2) << 3.0, 1.0).finished() +
            (Eigen::VectorXd(2) << b_trait0, b_trait1).finished() * eta_x[0] +
            ly * (Eigen::VectorXd(2) << rng.normal(), rng.normal()).finished();
        // latent true scores of the covariate by the recursion
        Eigen::VectorXd xstar(4), delta(4);
        xstar[0] = eta_x[0];
        delta[0] = 0.0;
        for (int j = 1; j < 4; ++j) {
            delta[j] = eta_x[1] * rates[j - 1] *
                       (times[static_cast<std::size_t>(j)] - times[static_cast<std::size_t>(j - 1)]);
            xstar[j] = xstar[j - 1] + delta[j];
        }
        Eigen::VectorXd obs(8);
        for (int j = 0; j < 4; ++j) {
            obs[j] = eta_y[0] + eta_y[1] * times[static_cast<std::size_t>(j)] + kappa * delta[j] +
                     std::sqrt(1.2) * rng.normal();
            obs[4 + j] = xstar[j] + std::sqrt(0.8) * rng.normal();
        }
        acc.add(obs);
    }
    REQUIRE(acc.mean_close(im.mean, im.cov));
    REQUIRE(acc.cov_close(im.cov));
}
