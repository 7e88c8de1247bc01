#include "nlgrowth/postfit.hpp"

#include "nlgrowth/curves.hpp"
#include "nlgrowth/errors.hpp"
#include "nlgrowth/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace nlgrowth {

namespace {

using UserFn = std::function<double(const Eigen::VectorXd&)>;

// delta-method SE of g at theta-hat with covariance v
double delta_se(const UserFn& g, const Eigen::VectorXd& theta, const Eigen::MatrixXd& v) {
    const Eigen::Index p = theta.size();
    Eigen::VectorXd grad(p);
    Eigen::VectorXd xt = theta;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double h = std::max(1e-6, 1e-6 * std::fabs(theta[j]));
        xt[j] = theta[j] + h;
        const double fp = g(xt);
        xt[j] = theta[j] - h;
        const double fm = g(xt);
        xt[j] = theta[j];
        grad[j] = (fp - fm) / (2.0 * h);
    }
    const double var = grad.dot(v * grad);
    return std::sqrt(std::max(0.0, var));
}

struct NameIndex {
    std::map<std::string, int> idx;
    explicit NameIndex(const std::vector<std::string>& names) {
        for (std::size_t i = 0; i < names.size(); ++i) idx[names[i]] = static_cast<int>(i);
    }
    int at(const std::string& n) const {
        auto it = idx.find(n);
        if (it == idx.end()) throw Error("derived parameters: free parameter '" + n + "' not found");
        return it->second;
    }
    bool has(const std::string& n) const { return idx.count(n) > 0; }
};

std::string med_short(const std::string& label) {
    return label == "etag" ? std::string("g") : label.substr(3);
}

} // namespace

DerivedParamTable derived_params(const FitResult& fit, const ModelDesign& design) {
    if (!fit.user_vcov.has_value())
        throw NoCovarianceAvailable("derived parameters need a fit with standard errors");
    const Eigen::VectorXd& theta = fit.user_estimates;
    const Eigen::MatrixXd& v = *fit.user_vcov;
    const NameIndex names(fit.user_names);

    DerivedParamTable table;
    const auto add = [&](const std::string& name, const UserFn& g) {
        DerivedParam row;
        row.name = name;
        row.estimate = g(theta);
        row.se = delta_se(g, theta, v);
        table.rows.push_back(row);
    };

    const int n_classes = design.n_classes();
    for (int g = 0; g < n_classes; ++g) {
        const std::string cp = n_classes > 1 ? "c" + std::to_string(g + 1) + "_" : "";
        auto pick = [&](const std::string& plain) {
            // tied mixture parameters live without the class prefix
            return names.has(cp + plain) ? cp + plain : plain;
        };

        const auto& procs = design.procs();
        const bool has_tic = design.tic_phi_block() >= 0;

        // ---- TIC models: marginal and conditional growth-factor moments ----
        if (has_tic) {
            const auto& p = procs[static_cast<std::size_t>(design.regressed_proc())];
            const int nf = p.n_factors();
            const int m = design.tic_count();
            std::vector<std::string> flabels = p.factor_labels;
            // index grids resolved once
            std::vector<int> alpha_idx(static_cast<std::size_t>(nf), -1);
            for (int f = 0; f < p.K; ++f)
                alpha_idx[static_cast<std::size_t>(f)] =
                    names.at(pick("alpha_" + flabels[static_cast<std::size_t>(f)] + p.tag));
            std::vector<std::vector<int>> b_idx(static_cast<std::size_t>(nf));
            for (int f = 0; f < nf; ++f)
                for (int t = 0; t < m; ++t)
                    b_idx[static_cast<std::size_t>(f)].push_back(names.at(
                        pick("beta_" + flabels[static_cast<std::size_t>(f)] + "_" +
                             design.tic_names()[static_cast<std::size_t>(t)])));
            std::vector<int> mu_tic_idx;
            for (int t = 0; t < m; ++t)
                mu_tic_idx.push_back(
                    names.at(pick("mu_tic_" + design.tic_names()[static_cast<std::size_t>(t)])));
            const auto phi_idx = [&](int a, int b) {
                const std::string na = design.tic_names()[static_cast<std::size_t>(std::min(a, b))];
                const std::string nb = design.tic_names()[static_cast<std::size_t>(std::max(a, b))];
                return names.at(pick(m == 1 ? "phi_tic" : "phi_tic_" + na + "_" + nb));
            };
            const std::string psi_block = "psi" + p.tag;
            const auto psi_idx = [&](int a, int b) {
                const std::string la = flabels[static_cast<std::size_t>(std::min(a, b))];
                const std::string lb = flabels[static_cast<std::size_t>(std::max(a, b))];
                return names.at(pick(psi_block + "_" + la + "_" + lb));
            };

            const auto marg_mean = [=](const Eigen::VectorXd& th, int f) {
                double val = alpha_idx[static_cast<std::size_t>(f)] >= 0
                                 ? th[alpha_idx[static_cast<std::size_t>(f)]]
                                 : 0.0;
                for (int t = 0; t < m; ++t)
                    val += th[b_idx[static_cast<std::size_t>(f)][static_cast<std::size_t>(t)]] *
                           th[mu_tic_idx[static_cast<std::size_t>(t)]];
                return val;
            };
            const auto marg_cov = [=](const Eigen::VectorXd& th, int a, int b) {
                double val = th[psi_idx(a, b)];
                for (int s = 0; s < m; ++s)
                    for (int t = 0; t < m; ++t)
                        val += th[b_idx[static_cast<std::size_t>(a)][static_cast<std::size_t>(s)]] *
                               th[phi_idx(s, t)] *
                               th[b_idx[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]];
                return val;
            };

            for (int f = 0; f < nf; ++f)
                add(cp + "marg_mu_" + flabels[static_cast<std::size_t>(f)] + p.tag,
                    [=](const Eigen::VectorXd& th) { return marg_mean(th, f); });
            for (int a = 0; a < nf; ++a)
                for (int b = a; b < nf; ++b)
                    add(cp + "marg_psi_" + flabels[static_cast<std::size_t>(a)] + "_" +
                            flabels[static_cast<std::size_t>(b)] + p.tag,
                        [=](const Eigen::VectorXd& th) { return marg_cov(th, a, b); });
            // conditional-on-TIC covariance equals the unexplained block
            for (int a = 0; a < nf; ++a)
                for (int b = a; b < nf; ++b) {
                    const int pidx = psi_idx(a, b);
                    add(cp + "cond_psi_" + flabels[static_cast<std::size_t>(a)] + "_" +
                            flabels[static_cast<std::size_t>(b)] + p.tag,
                        [=](const Eigen::VectorXd& th) { return th[pidx]; });
                }
        }

        // ---- bilinear spline: original-coordinate growth factors ----
        for (std::size_t pi = 0; pi < procs.size(); ++pi) {
            const auto& p = procs[pi];
            if (p.form.kind != CurveKind::BilinearSpline || p.mediation_param) continue;
            const bool intrinsic = p.form.intrinsic;
            const int d = intrinsic ? 4 : 3;
            const int gamma_idx = names.at(pick("mu_gamma" + p.tag));
            std::vector<int> mu_idx;
            const bool regressed_here = has_tic && static_cast<int>(pi) == design.regressed_proc();
            for (int k = 0; k < 3; ++k) {
                const std::string base = (regressed_here ? "alpha_" : "mu_") + p.factor_labels[static_cast<std::size_t>(k)] + p.tag;
                mu_idx.push_back(names.at(pick(base)));
            }
            const std::string psi_block = "psi" + p.tag;
            std::vector<std::string> rlabels = {p.factor_labels[0], p.factor_labels[1],
                                                p.factor_labels[2]};
            if (intrinsic) rlabels.push_back("dev");
            const auto psi_idx = [=, &names](int a, int b) {
                const int lo = std::min(a, b), hi = std::max(a, b);
                return names.at(pick(psi_block + "_" + rlabels[static_cast<std::size_t>(lo)] + "_" +
                                     rlabels[static_cast<std::size_t>(hi)]));
            };

            const auto reparam_of = [=](const Eigen::VectorXd& th) {
                Eigen::VectorXd mean(d);
                Eigen::MatrixXd cov(d, d);
                for (int k = 0; k < 3; ++k) mean[k] = th[mu_idx[static_cast<std::size_t>(k)]];
                if (intrinsic) mean[3] = th[gamma_idx];
                for (int a = 0; a < d; ++a)
                    for (int b = 0; b < d; ++b) cov(a, b) = th[psi_idx(a, b)];
                return std::make_pair(mean, cov);
            };
            const auto orig_of = [=](const Eigen::VectorXd& th) {
                const auto [mean, cov] = reparam_of(th);
                Eigen::VectorXd om;
                Eigen::MatrixXd oc;
                knot_reparam_inverse(mean, cov, th[gamma_idx], om, oc);
                return std::make_pair(om, oc);
            };

            std::vector<std::string> olabels = {"eta0", "eta1", "eta2"};
            if (intrinsic) olabels.push_back("knot");
            for (int k = 0; k < 3; ++k)
                add(cp + "mu_" + olabels[static_cast<std::size_t>(k)] + "_orig" + p.tag,
                    [=](const Eigen::VectorXd& th) { return orig_of(th).first[k]; });
            for (int a = 0; a < d; ++a)
                for (int b = a; b < d; ++b)
                    add(cp + "psi_orig_" + olabels[static_cast<std::size_t>(a)] + "_" +
                            olabels[static_cast<std::size_t>(b)] + p.tag,
                        [=](const Eigen::VectorXd& th) { return orig_of(th).second(a, b); });
        }

        // ---- mediation: indirect and total effects ----
        if (design.spec().effective_family() == Family::Mediation) {
            const auto& med = *design.spec().mediation;
            const bool xl = med.x_longitudinal;
            const std::size_t xp = 0, mp = xl ? 1 : 0, yp = xl ? 2 : 1;
            const auto& pm = procs[mp];
            const auto& py = procs[yp];
            const int kx = xl ? procs[xp].K : 1;

            const auto path_idx = [&](const std::string& name) {
                return names.has(pick(name)) ? names.at(pick(name)) : -1;
            };
            const auto xshort = [&](int s) {
                return xl ? med_short(procs[xp].factor_labels[static_cast<std::size_t>(s)])
                          : std::string("");
            };

            for (int s = 0; s < kx; ++s) {
                for (int t = 0; t < py.K; ++t) {
                    if (xl && t < s) continue; // outside the lower-triangular path pattern
                    // indirect components x_s -> m_k -> y_t
                    struct Comp {
                        int ia, ib, mk;
                    };
                    std::vector<Comp> components;
                    for (int k = 0; k < pm.K; ++k) {
                        const std::string a =
                            xl ? "b_xm_" + xshort(s) + med_short(pm.factor_labels[static_cast<std::size_t>(k)])
                               : "b_xm_" + med_short(pm.factor_labels[static_cast<std::size_t>(k)]);
                        const std::string b = "b_my_" +
                                              med_short(pm.factor_labels[static_cast<std::size_t>(k)]) +
                                              med_short(py.factor_labels[static_cast<std::size_t>(t)]);
                        const int ia = path_idx(a);
                        const int ib = path_idx(b);
                        if (ia >= 0 && ib >= 0) components.push_back({ia, ib, k});
                    }
                    const std::string dname = xl ? "b_xy_" + xshort(s) +
                                                       med_short(py.factor_labels[static_cast<std::size_t>(t)])
                                                 : "b_xy_" +
                                                       med_short(py.factor_labels[static_cast<std::size_t>(t)]);
                    const int idirect = path_idx(dname);
                    if (components.empty() && idirect < 0) continue;

                    const std::string suffix =
                        (xl ? "x" + xshort(s) : "x") + "_y" +
                        med_short(py.factor_labels[static_cast<std::size_t>(t)]);
                    for (const auto& comp : components) {
                        const int ia = comp.ia, ib = comp.ib;
                        add(cp + "ind_" + (xl ? "x" + xshort(s) : "x") + "_m" +
                                med_short(pm.factor_labels[static_cast<std::size_t>(comp.mk)]) + "_y" +
                                med_short(py.factor_labels[static_cast<std::size_t>(t)]),
                            [=](const Eigen::VectorXd& th) { return th[ia] * th[ib]; });
                    }
                    add(cp + "total_" + suffix, [=](const Eigen::VectorXd& th) {
                        double val = idirect >= 0 ? th[idirect] : 0.0;
                        for (const auto& comp : components) val += th[comp.ia] * th[comp.ib];
                        return val;
                    });
                }
            }
        }
    }
    return table;
}

// ---------------------------------------------------------------------------

LrtResult lrt(const FitResult& full, const FitResult& reduced) {
    const std::set<std::string> full_names(full.user_names.begin(), full.user_names.end());
    const std::set<std::string> red_names(reduced.user_names.begin(), reduced.user_names.end());
    for (const auto& n : red_names)
        if (!full_names.count(n))
            throw NotNested("reduced-model parameter '" + n + "' is not part of the full model");
    std::vector<std::string> removed;
    for (const auto& n : full_names)
        if (!red_names.count(n)) removed.push_back(n);

    LrtResult r;
    r.df = static_cast<int>(removed.size());
    r.statistic = reduced.minus_two_log_lik - full.minus_two_log_lik;
    if (r.statistic < -1e-8)
        throw NegativeStatistic(
            "the full model fits worse than the reduced one (statistic " +
            std::to_string(r.statistic) +
            "); refit the full model starting from the reduced estimates");
    r.statistic = std::max(0.0, r.statistic);
    r.p_value = r.df == 0 ? 1.0 : chi_square_sf(r.statistic, r.df);
    return r;
}

// ---------------------------------------------------------------------------

namespace {

// latent moments and cross-covariance with the observed entries
struct ScoreContext {
    Eigen::MatrixXd sig_total;
    Eigen::VectorXd mu_total;
};

void total_moments(const StructuralMatrices& sm, ScoreContext& sc) {
    const int n = sm.n_nodes;
    Eigen::MatrixXd ima = Eigen::MatrixXd::Identity(n, n) - sm.paths;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(ima);
    const Eigen::MatrixXd t = lu.inverse();
    sc.mu_total = t * sm.node_mean;
    sc.sig_total = t * sm.exo_cov * t.transpose();
}

} // namespace

FactorScores factor_scores(const FitResult& fit, const ModelDesign& design,
                           const LongitudinalDataset& data) {
    FactorScores out;
    const auto inds = design.prepare_all(data);
    StructuralMatrices sm = design.make_structural();
    out.labels = sm.factor_labels;
    const int nf = static_cast<int>(sm.factor_nodes.size());
    out.scores.resize(static_cast<Eigen::Index>(inds.size()), nf);

    std::vector<int> modal;
    if (design.is_mixture()) {
        const PosteriorMatrix post = posterior_classify(fit, design, data);
        modal = post.modal;
        out.modal_class = modal;
    }

    ScoreContext sc;
    for (std::size_t i = 0; i < inds.size(); ++i) {
        const int g = design.is_mixture() ? modal[i] : 0;
        const Eigen::VectorXd slice = design.class_slice(fit.internal_estimates, g);
        design.build_structural(slice, inds[i], sm);
        total_moments(sm, sc);

        const auto& present = inds[i].present_nodes;
        const int p = static_cast<int>(present.size());
        Eigen::VectorXd mu_fac(nf);
        Eigen::MatrixXd psi_fac(nf, nf);
        for (int a = 0; a < nf; ++a) {
            mu_fac[a] = sc.mu_total[sm.factor_nodes[static_cast<std::size_t>(a)]];
            for (int b = 0; b < nf; ++b)
                psi_fac(a, b) = sc.sig_total(sm.factor_nodes[static_cast<std::size_t>(a)],
                                             sm.factor_nodes[static_cast<std::size_t>(b)]);
        }
        if (p == 0) {
            out.scores.row(static_cast<Eigen::Index>(i)) = mu_fac.transpose();
            out.score_cov.push_back(psi_fac);
            continue;
        }
        Eigen::VectorXd mu_obs(p);
        Eigen::MatrixXd sig_obs(p, p);
        Eigen::MatrixXd cross(nf, p);
        for (int a = 0; a < p; ++a) {
            const int ga = present[static_cast<std::size_t>(a)];
            mu_obs[a] = sc.mu_total[ga] + sm.obs_offset[ga];
            for (int b = 0; b < p; ++b)
                sig_obs(a, b) = sc.sig_total(ga, present[static_cast<std::size_t>(b)]);
            for (int f = 0; f < nf; ++f)
                cross(f, a) = sc.sig_total(sm.factor_nodes[static_cast<std::size_t>(f)], ga);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(sig_obs);
        if (llt.info() != Eigen::Success)
            throw NonPDImpliedCovariance(inds[i].id, 0.0, design.is_mixture() ? g : -1);
        const Eigen::VectorXd resid = inds[i].omega - mu_obs;
        const Eigen::MatrixXd k = llt.solve(cross.transpose()).transpose(); // C Sigma^{-1}
        out.scores.row(static_cast<Eigen::Index>(i)) = (mu_fac + k * resid).transpose();
        out.score_cov.push_back(psi_fac - k * cross.transpose());
    }
    return out;
}

PosteriorMatrix posterior_classify(const FitResult& fit, const ModelDesign& design,
                                   const LongitudinalDataset& data) {
    if (!design.is_mixture()) throw Error("posterior_classify needs a mixture fit");
    FimlEvaluator ev(design, design.prepare_all(data));
    const ObjectiveValue obj = ev.evaluate(fit.internal_estimates);
    const int n = ev.n_individuals();
    const int g_count = design.n_classes();
    PosteriorMatrix pm;
    pm.prob.resize(n, g_count);
    pm.modal.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd row = obj.log_joint.row(i);
        const double lse = log_sum_exp(row);
        for (int g = 0; g < g_count; ++g) pm.prob(i, g) = std::exp(row[g] - lse);
        // argmax with ties toward the lower class index
        int best = 0;
        for (int g = 1; g < g_count; ++g)
            if (pm.prob(i, g) > pm.prob(i, best)) best = g;
        pm.modal[static_cast<std::size_t>(i)] = best;
    }
    return pm;
}

std::vector<CriteriaRow> criteria_table(const std::vector<CriteriaEntry>& entries) {
    std::vector<CriteriaRow> rows;
    if (entries.empty()) return rows;
    const std::uint64_t fp = entries[0].fit->data_fingerprint;
    const int n = entries[0].fit->n_individuals;
    for (const auto& e : entries) {
        if (e.fit->data_fingerprint != fp || e.fit->n_individuals != n)
            throw DatasetMismatch("criteria table entries were fitted on different datasets");
        CriteriaRow r;
        r.label = e.label;
        r.log_lik = e.fit->log_lik();
        r.n_params = e.fit->n_parameters;
        r.bic = r.n_params * std::log(static_cast<double>(n)) + e.fit->minus_two_log_lik;
        if (e.posterior && e.posterior->prob.rows() > 0) {
            for (int g = 0; g < e.posterior->prob.cols(); ++g)
                r.class_proportions.push_back(e.posterior->prob.col(g).mean());
        } else {
            r.class_proportions. push_back(1.0);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace nlgrowth
