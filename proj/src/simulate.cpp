#include "nlgrowth/simulate.hpp"

#include "nlgrowth/curves.hpp"
#include "nlgrowth/errors.hpp"
#include "nlgrowth/rng.hpp"
#include "nlgrowth/stats.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace nlgrowth {

namespace {

struct TruthView {
    const std::map<std::string, double>* m;
    std::string prefix;

    const double* find(const std::string& name) const {
        auto it = m->find(prefix + name);
        if (it != m->end()) return &it->second;
        it = m->find(name);
        if (it != m->end()) return &it->second;
        return nullptr;
    }
    double get(const std::string& name, double def) const {
        const double* v = find(name);
        return v ? *v : def;
    }
    double require(const std::string& name) const {
        const double* v = find(name);
        if (!v) throw Error("simulate: missing true parameter '" + prefix + name + "'");
        return *v;
    }
    // factor location: regressed processes carry alpha_ names, others mu_
    double location(const std::string& label, const std::string& tag) const {
        if (const double* v = find("alpha_" + label + tag)) return *v;
        return require("mu_" + label + tag);
    }
    double cov_entry(const std::string& block, const std::string& a, const std::string& b,
                     double def) const {
        if (const double* v = find(block + "_" + a + "_" + b)) return *v;
        if (const double* v = find(block + "_" + b + "_" + a)) return *v;
        return def;
    }
    double cov_require(const std::string& block, const std::string& a, const std::string& b) const {
        if (const double* v = find(block + "_" + a + "_" + b)) return *v;
        if (const double* v = find(block + "_" + b + "_" + a)) return *v;
        throw Error("simulate: missing true parameter '" + prefix + block + "_" + a + "_" + b + "'");
    }
};

std::vector<std::string> sim_factor_labels(CurveKind kind, bool mediation_param) {
    if (mediation_param && kind == CurveKind::BilinearSpline) return {"eta1", "etag", "eta2"};
    int k = 0;
    switch (kind) {
        case CurveKind::Linear: k = 2; break;
        case CurveKind::Quadratic: k = 3; break;
        case CurveKind::NegExponential: k = 2; break;
        case CurveKind::JenssBayley: k = 3; break;
        case CurveKind::BilinearSpline: k = 3; break;
        case CurveKind::Nonparametric: k = 2; break;
    }
    std::vector<std::string> l;
    for (int i = 0; i < k; ++i) l.push_back("eta" + std::to_string(i));
    return l;
}

// One generative latent process.
struct ProcGen {
    std::string var;
    std::string tag;
    CurveKind kind = CurveKind::Linear;
    bool intrinsic = false;
    bool lcsm = false;
    bool med_param = false;
    std::vector<std::string> labels;
    int K = 0;
    Eigen::VectorXd mean;       // K factor locations
    double shape = std::numeric_limits<double>::quiet_NaN();
    Eigen::MatrixXd cov;        // (K [+1]) joint covariance, shape coefficient last
    Eigen::MatrixXd chol;
    Eigen::VectorXd rates;      // nonparametric slope quotients
    double theta = 1.0;
    std::vector<int> waves;     // global wave indices
    int dim() const { return K + (intrinsic ? 1 : 0); }
};

Eigen::MatrixXd chol_or_throw(const Eigen::MatrixXd& cov, const std::string& what) {
    Eigen::MatrixXd l;
    if (!psd_cholesky(cov, l))
        throw NonPDTrueCovariance("true covariance for " + what + " is not positive semidefinite");
    return l;
}

ProcGen make_proc_gen(const TruthView& tv, const std::string& var, const std::string& tag,
                      const FunctionalForm& form, bool lcsm, bool med_param,
                      const std::vector<int>& waves, int n_waves_total, bool joint_psi = false) {
    ProcGen p;
    p.var = var;
    p.tag = tag;
    p.kind = form.kind;
    p.intrinsic = form.intrinsic;
    p.lcsm = lcsm;
    p.med_param = med_param;
    p.labels = sim_factor_labels(form.kind, med_param);
    p.K = static_cast<int>(p.labels.size());
    p.waves = waves;
    (void)n_waves_total;

    p.mean.resize(p.K);
    for (int k = 0; k < p.K; ++k) p.mean[k] = tv.location(p.labels[static_cast<std::size_t>(k)], tag);
    switch (form.kind) {
        case CurveKind::NegExponential: p.shape = tv.require("mu_b" + tag); break;
        case CurveKind::JenssBayley: p.shape = tv.require("mu_c" + tag); break;
        case CurveKind::BilinearSpline:
            p.shape = med_param ? tv.require("gamma" + tag) : tv.require("mu_gamma" + tag);
            break;
        default: break;
    }
    // multivariate models keep one joint latent block named "psi" with
    // process-tagged labels
    const std::string psi = joint_psi ? "psi" : "psi" + tag;
    const std::string lsuf = joint_psi ? tag : "";
    const int d = p.dim();
    p.cov.resize(d, d);
    for (int i = 0; i < p.K; ++i)
        for (int j = 0; j <= i; ++j) {
            const double v = tv.cov_require(psi, p.labels[static_cast<std::size_t>(j)] + lsuf,
                                            p.labels[static_cast<std::size_t>(i)] + lsuf);
            p.cov(i, j) = p.cov(j, i) = v;
        }
    if (p.intrinsic) {
        p.cov(p.K, p.K) = tv.cov_require(psi, "dev" + lsuf, "dev" + lsuf);
        for (int k = 0; k < p.K; ++k) {
            const double v =
                tv.cov_entry(psi, p.labels[static_cast<std::size_t>(k)] + lsuf, "dev" + lsuf, 0.0);
            p.cov(p.K, k) = p.cov(k, p.K) = v;
        }
    }
    p.chol = chol_or_throw(p.cov, "process '" + var + "'");
    if (form.kind == CurveKind::Nonparametric) {
        const int n_int = static_cast<int>(waves.size()) - 1;
        p.rates.resize(std::max(0, n_int));
        if (n_int > 0) p.rates[0] = 1.0;
        for (int j = 2; j <= n_int; ++j)
            p.rates[j - 1] = tv.get("rrate" + std::to_string(j) + tag, 1.0);
    }
    p.theta = tv.require(tag.empty() ? "theta_eps" : "theta_eps_" + var);
    if (!(p.theta >= 0.0)) throw Error("simulate: residual variance must be nonnegative");
    return p;
}

// exact trajectory at local wave index j given this individual's coefficients
double proc_true_value(const ProcGen& p, const Eigen::VectorXd& coefs, double shape_i,
                       const std::vector<double>& times, int j) {
    if (p.med_param) {
        const double t = times[static_cast<std::size_t>(j)];
        return coefs[0] * std::min(0.0, t - shape_i) + coefs[1] +
               coefs[2] * std::max(0.0, t - shape_i);
    }
    if (p.kind == CurveKind::Nonparametric) {
        double v = coefs[0];
        for (int k = 1; k <= j; ++k)
            v += coefs[1] * p.rates[k - 1] *
                 (times[static_cast<std::size_t>(k)] - times[static_cast<std::size_t>(k - 1)]);
        return v;
    }
    return true_trajectory(p.kind, times[static_cast<std::size_t>(j)], coefs, shape_i);
}

bool admissible(const ProcGen& p, double shape_i, const std::vector<double>& times) {
    switch (p.kind) {
        case CurveKind::NegExponential: return shape_i > 0.0;
        case CurveKind::JenssBayley: return shape_i < 0.0;
        case CurveKind::BilinearSpline:
            if (p.med_param) return true; // fixed knot
            return shape_i > times.front() && shape_i < times.back();
        default: return true;
    }
}

} // namespace

SimResult simulate(const SimConfig& cfg) {
    cfg.spec.validate();
    if (cfg.n <= 0) throw Error("simulate: n must be positive");
    const int n_waves = static_cast<int>(cfg.waves.size());
    if (n_waves < 2) throw Error("simulate: need at least two waves");
    for (int w = 1; w < n_waves; ++w) {
        if (!(cfg.waves[static_cast<std::size_t>(w)] > cfg.waves[static_cast<std::size_t>(w - 1)]))
            throw Error("simulate: wave times must be strictly increasing");
        if (!(cfg.waves[static_cast<std::size_t>(w)] - cfg.waves[static_cast<std::size_t>(w - 1)] >
              2.0 * cfg.jitter_window))
            throw Error("simulate: wave gaps must exceed twice the jitter window");
    }

    const ModelSpec sub = cfg.spec.family == Family::Mixture ? cfg.spec.submodel_spec() : cfg.spec;
    const Family fam = sub.family;
    const int n_classes = cfg.spec.family == Family::Mixture ? cfg.spec.mixture->n_classes : 1;

    // variable list (name, form, lcsm, med_param) in process order
    struct ProcNames {
        std::string var, tag;
        FunctionalForm form;
        bool lcsm, med_param;
    };
    std::vector<ProcNames> pnames;
    switch (fam) {
        case Family::LGCM: pnames.push_back({sub.outcome, "", sub.form, false, false}); break;
        case Family::LCSM: pnames.push_back({sub.outcome, "", sub.form, true, false}); break;
        case Family::TVC: {
            pnames.push_back({sub.outcome, "_" + sub.outcome, sub.form,
                              sub.tvc->base_model == Family::LCSM, false});
            FunctionalForm xf;
            xf.kind = CurveKind::Nonparametric;
            pnames.push_back({sub.tvc->var, "_" + sub.tvc->var, xf, true, false});
            break;
        }
        case Family::MGM:
            for (const auto& o : sub.mgm->outcomes)
                pnames.push_back({o, "_" + o, sub.form, sub.mgm->base_model == Family::LCSM, false});
            break;
        case Family::Mediation: {
            const bool bl = sub.form.kind == CurveKind::BilinearSpline;
            if (sub.mediation->x_longitudinal)
                pnames.push_back({sub.mediation->x_var, "_" + sub.mediation->x_var, sub.form, false, bl});
            pnames.push_back({sub.mediation->m_var, "_" + sub.mediation->m_var, sub.form, false, bl});
            pnames.push_back({sub.mediation->y_var, "_" + sub.mediation->y_var, sub.form, false, bl});
            break;
        }
        default: throw Error("simulate: unsupported family");
    }

    // wave subsets
    std::vector<std::vector<int>> wave_sets;
    for (std::size_t pi = 0; pi < pnames.size(); ++pi) {
        if (pi < cfg.wave_sets.size() && !cfg.wave_sets[pi].empty()) {
            wave_sets.push_back(cfg.wave_sets[pi]);
            for (int w : wave_sets.back())
                if (w < 0 || w >= n_waves) throw Error("simulate: wave subset index out of range");
        } else {
            std::vector<int> all(static_cast<std::size_t>(n_waves));
            for (int w = 0; w < n_waves; ++w) all[static_cast<std::size_t>(w)] = w;
            wave_sets.push_back(std::move(all));
        }
    }

    // per-class generators
    struct ClassGen {
        std::vector<ProcGen> procs;
        Eigen::MatrixXd joint_chol; // MGM: joint over all processes
        Eigen::VectorXd joint_mean;
        double theta_cross = 0.0;
        Eigen::VectorXd tic_mean;
        Eigen::MatrixXd tic_chol;
        Eigen::MatrixXd b_tic; // (K+dev) x m for the regressed process
        double kappa = 0.0;
        Eigen::VectorXd beta_trait;
        double x_mean = 0.0, x_sd = 1.0; // baseline mediation predictor
        std::map<std::string, double> paths;
    };
    std::vector<ClassGen> gens;
    for (int g = 0; g < n_classes; ++g) {
        TruthView tv{&cfg.truth, n_classes > 1 ? "c" + std::to_string(g + 1) + "_" : ""};
        ClassGen cg;
        for (std::size_t pi = 0; pi < pnames.size(); ++pi)
            cg.procs.push_back(make_proc_gen(tv, pnames[pi].var, pnames[pi].tag, pnames[pi].form,
                                             pnames[pi].lcsm, pnames[pi].med_param, wave_sets[pi],
                                             n_waves, fam == Family::MGM));
        if (fam == Family::MGM) {
            // joint latent covariance across outcomes, block name "psi"
            int dim = 0;
            std::vector<int> off;
            for (const auto& p : cg.procs) {
                off.push_back(dim);
                dim += p.dim();
            }
            Eigen::MatrixXd cov(dim, dim);
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
            auto tagged = [&](const ProcGen& p, int k) {
                const std::string base = k < p.K ? p.labels[static_cast<std::size_t>(k)] : "dev";
                return base + p.tag;
            };
            for (std::size_t a = 0; a < cg.procs.size(); ++a) {
                mean.segment(off[a], cg.procs[a].K) = cg.procs[a].mean;
                cov.block(off[a], off[a], cg.procs[a].dim(), cg.procs[a].dim()) = cg.procs[a].cov;
                for (std::size_t b = a + 1; b < cg.procs.size(); ++b)
                    for (int i = 0; i < cg.procs[a].dim(); ++i)
                        for (int j = 0; j < cg.procs[b].dim(); ++j) {
                            const double v = tv.cov_entry("psi", tagged(cg.procs[a], i),
                                                          tagged(cg.procs[b], j), 0.0);
                            cov(off[a] + i, off[b] + j) = v;
                            cov(off[b] + j, off[a] + i) = v;
                        }
            }
            cg.joint_mean = mean;
            cg.joint_chol = chol_or_throw(cov, "the joint growth-factor block");
            cg.theta_cross = tv.cov_entry("theta_eps", cg.procs[0].var, cg.procs[1].var, 0.0);
            const double r = cg.theta_cross / std::sqrt(cg.procs[0].theta * cg.procs[1].theta);
            if (!(std::fabs(r) < 1.0) && cg.theta_cross != 0.0)
                throw NonPDTrueCovariance("cross-outcome residual covariance too large");
        }
        if (!sub.tic_names.empty()) {
            const int m = static_cast<int>(sub.tic_names.size());
            cg.tic_mean.resize(m);
            Eigen::MatrixXd phi(m, m);
            for (int a = 0; a < m; ++a) {
                cg.tic_mean[a] = tv.get("mu_tic_" + sub.tic_names[static_cast<std::size_t>(a)], 0.0);
                for (int b = 0; b <= a; ++b) {
                    const double v = tv.cov_entry("phi_tic", sub.tic_names[static_cast<std::size_t>(b)],
                                                  sub.tic_names[static_cast<std::size_t>(a)],
                                                  a == b ? 1.0 : 0.0);
                    phi(a, b) = phi(b, a) = v;
                }
            }
            cg.tic_chol = chol_or_throw(phi, "the TIC block");
            const auto& p0 = cg.procs[0];
            cg.b_tic = Eigen::MatrixXd::Zero(p0.dim(), m);
            for (int k = 0; k < p0.dim(); ++k) {
                const std::string fl = k < p0.K ? p0.labels[static_cast<std::size_t>(k)] : "dev";
                for (int t = 0; t < m; ++t)
                    cg.b_tic(k, t) =
                        tv.get("beta_" + fl + "_" + sub.tic_names[static_cast<std::size_t>(t)], 0.0);
            }
        }
        if (fam == Family::TVC) {
            cg.kappa = tv.get("kappa", 0.0);
            if (sub.tvc->type > 0) {
                cg.beta_trait.resize(cg.procs[0].dim());
                for (int k = 0; k < cg.procs[0].dim(); ++k) {
                    const std::string fl =
                        k < cg.procs[0].K ? cg.procs[0].labels[static_cast<std::size_t>(k)] : "dev";
                    cg.beta_trait[k] = tv.get("beta_tvc_" + fl, 0.0);
                }
            }
        }
        if (fam == Family::Mediation) {
            if (!sub.mediation->x_longitudinal) {
                cg.x_mean = tv.get("mu_" + sub.mediation->x_var, 0.0);
                cg.x_sd = std::sqrt(tv.get("phi_" + sub.mediation->x_var, 1.0));
            }
            // copy every b_* entry visible under this class prefix
            for (const auto& [k, v] : cfg.truth) {
                std::string name = k;
                if (!tv.prefix.empty() && name.rfind(tv.prefix, 0) == 0)
                    name = name.substr(tv.prefix.size());
                if (name.rfind("b_", 0) == 0) cg.paths[name] = v;
            }
        }
        gens.push_back(std::move(cg));
    }

    // mixture membership logits
    const int n_ctics =
        cfg.spec.family == Family::Mixture ? static_cast<int>(cfg.spec.mixture->class_tic_names.size()) : 0;
    Eigen::VectorXd logit_int(std::max(0, n_classes - 1));
    Eigen::MatrixXd logit_coef(std::max(0, n_classes - 1), std::max(1, n_ctics));
    logit_coef.setZero();
    if (n_classes > 1) {
        TruthView tv{&cfg.truth, ""};
        for (int g = 2; g <= n_classes; ++g) {
            logit_int[g - 2] = tv.get("pi" + std::to_string(g) + "_int", 0.0);
            for (int t = 0; t < n_ctics; ++t)
                logit_coef(g - 2, t) = tv.get("pi" + std::to_string(g) + "_" +
                                                  cfg.spec.mixture->class_tic_names[static_cast<std::size_t>(t)],
                                              0.0);
        }
    }

    // ---- columns -----------------------------------------------------------
    std::vector<std::string> cols;
    cols.push_back(cfg.id_col);
    ColumnRoles roles;
    roles.id_col = cfg.id_col;
    std::vector<std::string> time_cols(static_cast<std::size_t>(n_waves));
    for (int w = 0; w < n_waves; ++w) time_cols[static_cast<std::size_t>(w)] = cfg.time_prefix + std::to_string(w + 1);
    for (std::size_t pi = 0; pi < pnames.size(); ++pi) {
        LongitudinalVar lv;
        lv.name = pnames[pi].var;
        for (int w : wave_sets[pi]) {
            lv.value_cols.push_back(pnames[pi].var + std::to_string(w + 1));
            lv.time_cols.push_back(time_cols[static_cast<std::size_t>(w)]);
            lv.waves.push_back(w);
            cols.push_back(lv.value_cols.back());
        }
        roles.longitudinal.push_back(std::move(lv));
    }
    for (int w = 0; w < n_waves; ++w) cols.push_back(time_cols[static_cast<std::size_t>(w)]);
    if (fam == Family::Mediation && !sub.mediation->x_longitudinal) cols.push_back(sub.mediation->x_var);
    for (const auto& t : sub.tic_names) {
        cols.push_back(t);
        roles.tic_cols.push_back(t);
    }
    if (cfg.spec.family == Family::Mixture)
        for (const auto& t : cfg.spec.mixture->class_tic_names) {
            cols.push_back(t);
            roles.class_tic_cols.push_back(t);
        }
    std::map<std::string, int> col_idx;
    for (std::size_t i = 0; i < cols.size(); ++i) col_idx[cols[i]] = static_cast<int>(i);

    // ---- generation ----------------------------------------------------------
    std::vector<IndividualRecord> recs;
    std::vector<int> class_labels;
    long long total_draws = 0, kept_draws = 0;
    for (int i = 0; i < cfg.n; ++i) {
        Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(i));
        IndividualRecord rec;
        rec.id = std::to_string(i + 1);
        rec.values.assign(cols.size(), std::nullopt);

        // one visit schedule per individual
        std::vector<double> gt(static_cast<std::size_t>(n_waves));
        for (int w = 0; w < n_waves; ++w)
            gt[static_cast<std::size_t>(w)] =
                cfg.waves[static_cast<std::size_t>(w)] +
                (cfg.jitter_window > 0.0 ? rng.uniform(-cfg.jitter_window, cfg.jitter_window) : 0.0);
        for (int w = 0; w < n_waves; ++w)
            rec.values[static_cast<std::size_t>(col_idx[time_cols[static_cast<std::size_t>(w)]])] =
                gt[static_cast<std::size_t>(w)];

        // class membership
        Eigen::VectorXd ctics(n_ctics);
        int g = 0;
        if (n_classes > 1) {
            for (int t = 0; t < n_ctics; ++t) ctics[t] = rng.normal();
            Eigen::VectorXd logits = Eigen::VectorXd::Zero(n_classes);
            for (int c = 2; c <= n_classes; ++c) {
                double v = logit_int[c - 2];
                for (int t = 0; t < n_ctics; ++t) v += logit_coef(c - 2, t) * ctics[t];
                logits[c - 1] = v;
            }
            const double lse = log_sum_exp(logits);
            const double u = rng.uniform();
            double acc = 0.0;
            for (int c = 0; c < n_classes; ++c) {
                acc += std::exp(logits[c] - lse);
                if (u < acc || c == n_classes - 1) {
                    g = c;
                    break;
                }
            }
            for (int t = 0; t < n_ctics; ++t)
                rec.values[static_cast<std::size_t>(
                    col_idx[cfg.spec.mixture->class_tic_names[static_cast<std::size_t>(t)]])] = ctics[t];
        }
        const ClassGen& cg = gens[static_cast<std::size_t>(g)];

        // covariates
        Eigen::VectorXd tics;
        if (!sub.tic_names.empty()) {
            tics.resize(cg.tic_mean.size());
            for (int t = 0; t < tics.size(); ++t) tics[t] = rng.normal();
            tics = cg.tic_mean + cg.tic_chol * tics;
            for (int t = 0; t < tics.size(); ++t)
                rec.values[static_cast<std::size_t>(col_idx[sub.tic_names[static_cast<std::size_t>(t)]])] =
                    tics[t];
        }
        double x_baseline = 0.0;
        if (fam == Family::Mediation && !sub.mediation->x_longitudinal) {
            x_baseline = cg.x_mean + cg.x_sd * rng.normal();
            rec.values[static_cast<std::size_t>(col_idx[sub.mediation->x_var])] = x_baseline;
        }

        // latent draws (redraw until admissible)
        std::vector<Eigen::VectorXd> coefs(cg.procs.size());
        std::vector<double> shapes(cg.procs.size());
        auto draw_all = [&]() {
            ++total_draws;
            if (fam == Family::MGM) {
                Eigen::VectorXd z(cg.joint_mean.size());
                for (int k = 0; k < z.size(); ++k) z[k] = rng.normal();
                Eigen::VectorXd lat = cg.joint_mean + cg.joint_chol * z;
                int off = 0;
                for (std::size_t pi = 0; pi < cg.procs.size(); ++pi) {
                    const auto& p = cg.procs[pi];
                    coefs[pi] = lat.segment(off, p.K);
                    shapes[pi] = p.shape + (p.intrinsic ? lat[off + p.K] : 0.0);
                    off += p.dim();
                }
                return;
            }
            for (std::size_t pi = 0; pi < cg.procs.size(); ++pi) {
                const auto& p = cg.procs[pi];
                Eigen::VectorXd z(p.dim());
                for (int k = 0; k < z.size(); ++k) z[k] = rng.normal();
                Eigen::VectorXd lat = p.chol * z;
                lat.head(p.K) += p.mean;
                // exogenous covariate effects on the primary process
                if (pi == 0 && tics.size() > 0) lat += cg.b_tic * tics;
                coefs[pi] = lat.head(p.K);
                shapes[pi] = p.shape + (p.intrinsic ? lat[p.K] : 0.0);
            }
            // directed structure between processes
            if (fam == Family::TVC && sub.tvc->type > 0) {
                coefs[0] += cg.beta_trait.head(cg.procs[0].K) * coefs[1][0];
                if (cg.procs[0].intrinsic) shapes[0] += cg.beta_trait[cg.procs[0].K] * coefs[1][0];
            }
            if (fam == Family::Mediation) {
                const bool xl = sub.mediation->x_longitudinal;
                const std::size_t mp = xl ? 1 : 0, yp = xl ? 2 : 1;
                auto shorts = [&](const ProcGen& p, int k) {
                    const std::string& l = p.labels[static_cast<std::size_t>(k)];
                    return l == "etag" ? std::string("g") : l.substr(3);
                };
                auto path = [&](const std::string& name) {
                    auto it = cg.paths.find(name);
                    return it == cg.paths.end() ? 0.0 : it->second;
                };
                Eigen::VectorXd m_add = Eigen::VectorXd::Zero(cg.procs[mp].K);
                Eigen::VectorXd y_add = Eigen::VectorXd::Zero(cg.procs[yp].K);
                if (xl) {
                    for (int s = 0; s < cg.procs[0].K; ++s)
                        for (int t = s; t < cg.procs[mp].K; ++t) {
                            m_add[t] += path("b_xm_" + shorts(cg.procs[0], s) + shorts(cg.procs[mp], t)) *
                                        coefs[0][s];
                            y_add[t] += path("b_xy_" + shorts(cg.procs[0], s) + shorts(cg.procs[yp], t)) *
                                        coefs[0][s];
                        }
                } else {
                    for (int t = 0; t < cg.procs[mp].K; ++t) {
                        m_add[t] += path("b_xm_" + shorts(cg.procs[mp], t)) * x_baseline;
                        y_add[t] += path("b_xy_" + shorts(cg.procs[yp], t)) * x_baseline;
                    }
                }
                coefs[mp] += m_add;
                Eigen::VectorXd my = Eigen::VectorXd::Zero(cg.procs[yp].K);
                for (int s = 0; s < cg.procs[mp].K; ++s)
                    for (int t = s; t < cg.procs[yp].K; ++t)
                        my[t] += path("b_my_" + shorts(cg.procs[mp], s) + shorts(cg.procs[yp], t)) *
                                 coefs[mp][s];
                coefs[yp] += y_add + my;
            }
        };
        bool ok = false;
        for (int attempt = 0; attempt < 100000 && !ok; ++attempt) {
            draw_all();
            ok = true;
            for (std::size_t pi = 0; pi < cg.procs.size(); ++pi) {
                std::vector<double> tloc;
                for (int w : cg.procs[pi].waves) tloc.push_back(gt[static_cast<std::size_t>(w)]);
                if (!admissible(cg.procs[pi], shapes[pi], tloc)) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok) throw Error("simulate: admissibility redraw limit reached");
        ++kept_draws;

        // trajectories + residuals
        std::vector<std::vector<double>> truevals(cg.procs.size());
        for (std::size_t pi = 0; pi < cg.procs.size(); ++pi) {
            const auto& p = cg.procs[pi];
            std::vector<double> tloc;
            for (int w : p.waves) tloc.push_back(gt[static_cast<std::size_t>(w)]);
            truevals[pi].resize(tloc.size());
            for (std::size_t j = 0; j < tloc.size(); ++j)
                truevals[pi][j] = proc_true_value(p, coefs[pi], shapes[pi], tloc, static_cast<int>(j));
        }
        // decomposed-covariate state effects on the outcome
        if (fam == Family::TVC) {
            const auto& px = cg.procs[1];
            std::vector<double> tloc;
            for (int w : px.waves) tloc.push_back(gt[static_cast<std::size_t>(w)]);
            const double eta1x = coefs[1][1];
            for (std::size_t j = 1; j < truevals[0].size(); ++j) {
                double feature = 0.0;
                const double dt = tloc[j] - tloc[j - 1];
                if (sub.tvc->type == 1)
                    feature = eta1x * px.rates[static_cast<Eigen::Index>(j - 1)];
                else if (sub.tvc->type == 2)
                    feature = eta1x * px.rates[static_cast<Eigen::Index>(j - 1)] * dt;
                else if (sub.tvc->type == 3)
                    for (std::size_t k = 1; k <= j; ++k)
                        feature += eta1x * px.rates[static_cast<Eigen::Index>(k - 1)] *
                                   (tloc[k] - tloc[k - 1]);
                if (sub.tvc->type > 0) truevals[0][j] += cg.kappa * feature;
            }
        }

        // residuals (cross-outcome covariance at shared waves for MGM)
        std::vector<std::vector<double>> eps(cg.procs.size());
        for (std::size_t pi = 0; pi < cg.procs.size(); ++pi)
            eps[pi].assign(truevals[pi].size(), 0.0);
        if (fam == Family::MGM && cg.theta_cross != 0.0) {
            const double sy = std::sqrt(cg.procs[0].theta);
            const double sz = std::sqrt(cg.procs[1].theta);
            const double rho = cg.theta_cross / (sy * sz);
            std::vector<std::pair<int, int>> shared;
            for (std::size_t a = 0; a < cg.procs[0].waves.size(); ++a)
                for (std::size_t b = 0; b < cg.procs[1].waves.size(); ++b)
                    if (cg.procs[0].waves[a] == cg.procs[1].waves[b])
                        shared.emplace_back(static_cast<int>(a), static_cast<int>(b));
            std::vector<bool> ydone(cg.procs[0].waves.size(), false), zdone(cg.procs[1].waves.size(), false);
            for (const auto& [a, b] : shared) {
                const double z1 = rng.normal(), z2 = rng.normal();
                eps[0][static_cast<std::size_t>(a)] = sy * z1;
                eps[1][static_cast<std::size_t>(b)] = sz * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
                ydone[static_cast<std::size_t>(a)] = true;
                zdone[static_cast<std::size_t>(b)] = true;
            }
            for (std::size_t a = 0; a < ydone.size(); ++a)
                if (!ydone[a]) eps[0][a] = sy * rng.normal();
            for (std::size_t b = 0; b < zdone.size(); ++b)
                if (!zdone[b]) eps[1][b] = sz * rng.normal();
        } else {
            for (std::size_t pi = 0; pi < cg.procs.size(); ++pi) {
                const double sd = std::sqrt(cg.procs[pi].theta);
                for (auto& e : eps[pi]) e = sd * rng.normal();
            }
        }

        for (std::size_t pi = 0; pi < cg.procs.size(); ++pi) {
            const auto& lv = roles.longitudinal[pi];
            for (std::size_t j = 0; j < lv.value_cols.size(); ++j)
                rec.values[static_cast<std::size_t>(col_idx[lv.value_cols[j]])] =
                    truevals[pi][j] + eps[pi][j];
        }

        // completely-at-random wave-level missingness on the outcomes
        for (std::size_t pi = 0; pi < cg.procs.size(); ++pi) {
            const auto& lv = roles.longitudinal[pi];
            for (std::size_t j = 0; j < lv.value_cols.size(); ++j)
                if (rng.uniform() < cfg.missing_rate_at(j))
                    rec.values[static_cast<std::size_t>(col_idx[lv.value_cols[j]])] = std::nullopt;
        }
        recs.push_back(std::move(rec));
        if (n_classes > 1) class_labels.push_back(g);
    }

    SimResult out;
    out.data = LongitudinalDataset(cols, roles, std::move(recs));
    out.truncation_rate =
        total_draws > 0 ? 1.0 - static_cast<double>(kept_draws) / total_draws : 0.0;
    out.class_labels = std::move(class_labels);
    return out;
}

} // namespace nlgrowth
