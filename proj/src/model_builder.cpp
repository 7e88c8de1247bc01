#include "nlgrowth/model_builder.hpp"

#include "nlgrowth/errors.hpp"
#include "nlgrowth/stats.hpp"

#include <algorithm>
#include <cmath>

namespace nlgrowth {

std::string family_name(Family f) {
    switch (f) {
        case Family::LGCM: return "lgcm";
        case Family::LCSM: return "lcsm";
        case Family::TVC: return "tvc";
        case Family::MGM: return "mgm";
        case Family::Mediation: return "mediation";
        case Family::Mixture: return "mixture";
    }
    return "?";
}

Family family_from_name(const std::string& s) {
    if (s == "lgcm") return Family::LGCM;
    if (s == "lcsm") return Family::LCSM;
    if (s == "tvc") return Family::TVC;
    if (s == "mgm") return Family::MGM;
    if (s == "mediation" || s == "med") return Family::Mediation;
    if (s == "mixture" || s == "gmm") return Family::Mixture;
    throw Error("unknown family: " + s);
}

void ModelSpec::validate() const {
    const Family eff = family == Family::Mixture ? mixture.value().sub_family : family;
    if (family == Family::Mixture) {
        if (!mixture) throw Error("mixture spec missing");
        if (mixture->n_classes < 2)
            throw Error("grp must be >= 2; use the submodel command for a single class");
        if (mixture->sub_family == Family::Mixture) throw Error("mixture submodel cannot be a mixture");
    }
    if (eff == Family::TVC && !tvc) throw Error("tvc spec missing");
    if (eff == Family::MGM && !mgm) throw Error("mgm spec missing");
    if (eff == Family::Mediation && !mediation) throw Error("mediation spec missing");
    if (eff != Family::TVC && tvc) throw Error("tvc options set for a non-TVC family");
    if (eff != Family::MGM && mgm) throw Error("mgm options set for a non-MGM family");
    if (eff != Family::Mediation && mediation) throw Error("mediation options set for a non-mediation family");

    if (eff == Family::Mediation) {
        if (form.kind != CurveKind::Linear && form.kind != CurveKind::BilinearSpline)
            throw Error("mediation supports linear and bilinear_spline forms only");
        if (form.intrinsic) throw Error("mediation models use fixed (non-random) knots");
    } else {
        form.validate();
    }
    if (eff == Family::LGCM && form.kind == CurveKind::Nonparametric)
        throw Error("the nonparametric form is a change-score model; use the lcsm family");
    if ((eff == Family::LCSM ||
         (eff == Family::TVC && tvc->base_model == Family::LCSM) ||
         (eff == Family::MGM && mgm->base_model == Family::LCSM)) &&
        (form.kind == CurveKind::Linear || form.kind == CurveKind::BilinearSpline))
        throw Error("change-score models cover quadratic, neg_exponential, jenss_bayley and "
                    "nonparametric forms");
    if (eff == Family::TVC && (tvc->type < 0 || tvc->type > 3))
        throw Error("TVC type must be 0, 1, 2 or 3");
    if ((eff == Family::MGM || eff == Family::Mediation) && !tic_names.empty())
        throw Error("time-invariant covariates are supported for lgcm/lcsm/tvc families");
}

ModelSpec ModelSpec::submodel_spec() const {
    ModelSpec sub = *this;
    sub.family = mixture ? mixture->sub_family : family;
    sub.mixture.reset();
    return sub;
}

// ---------------------------------------------------------------------------
// design construction
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> form_factor_labels(const FunctionalForm& form, bool mediation_param) {
    if (mediation_param && form.kind == CurveKind::BilinearSpline)
        return {"eta1", "etag", "eta2"};
    std::vector<std::string> l;
    for (int k = 0; k < form.base_factors(); ++k) l.push_back("eta" + std::to_string(k));
    return l;
}

std::string shape_param_name(CurveKind kind) {
    switch (kind) {
        case CurveKind::NegExponential: return "mu_b";
        case CurveKind::JenssBayley: return "mu_c";
        case CurveKind::BilinearSpline: return "mu_gamma";
        default: return "";
    }
}

} // namespace

ModelDesign::ModelDesign(ModelSpec spec, const ColumnRoles& roles)
    : spec_(std::move(spec)), roles_(roles) {
    spec_.validate();
    class_spec_ = spec_.family == Family::Mixture ? spec_.submodel_spec() : spec_;
    n_classes_ = spec_.family == Family::Mixture ? spec_.mixture->n_classes : 1;
    build_processes();
    build_class_layout();
    build_master_layout();
    build_nodes();
}

void ModelDesign::build_processes() {
    const Family fam = class_spec_.family;
    auto make_proc = [&](const std::string& var, const FunctionalForm& form, bool lcsm,
                         bool mediation_param, const std::string& tag) {
        const LongitudinalVar* lv = roles_.find(var);
        if (!lv) throw RoleMismatch("longitudinal variable '" + var + "' not declared in roles");
        ProcessDesign p;
        p.var = var;
        p.tag = tag;
        p.form = form;
        p.lcsm = lcsm;
        p.mediation_param = mediation_param;
        p.n_waves = lv->wave_count();
        p.K = mediation_param ? static_cast<int>(form_factor_labels(form, true).size())
                              : form.base_factors();
        p.factor_labels = form_factor_labels(form, mediation_param);
        if (form.intrinsic) p.factor_labels.push_back("dev");
        if (p.n_waves < 2) throw Error("variable '" + var + "' needs at least two waves");
        return p;
    };

    switch (fam) {
        case Family::LGCM:
            procs_.push_back(make_proc(class_spec_.outcome, class_spec_.form, false, false, ""));
            break;
        case Family::LCSM:
            procs_.push_back(make_proc(class_spec_.outcome, class_spec_.form, true, false, ""));
            break;
        case Family::TVC: {
            const auto& tv = *class_spec_.tvc;
            const bool y_lcsm = tv.base_model == Family::LCSM;
            procs_.push_back(make_proc(class_spec_.outcome, class_spec_.form, y_lcsm, false,
                                       "_" + class_spec_.outcome));
            if (tv.type > 0) {
                FunctionalForm xform;
                xform.kind = CurveKind::Nonparametric;
                procs_.push_back(make_proc(tv.var, xform, true, false, "_" + tv.var));
            }
            break;
        }
        case Family::MGM: {
            for (const auto& out : class_spec_.mgm->outcomes) {
                const bool lcsm = class_spec_.mgm->base_model == Family::LCSM;
                procs_.push_back(make_proc(out, class_spec_.form, lcsm, false, "_" + out));
            }
            if (procs_.size() < 2) throw Error("mgm needs at least two outcomes");
            break;
        }
        case Family::Mediation: {
            const auto& med = *class_spec_.mediation;
            FunctionalForm mform = class_spec_.form; // never intrinsic here
            if (med.x_longitudinal)
                procs_.push_back(make_proc(med.x_var, mform, false,
                                           mform.kind == CurveKind::BilinearSpline, "_" + med.x_var));
            procs_.push_back(make_proc(med.m_var, mform, false,
                                       mform.kind == CurveKind::BilinearSpline, "_" + med.m_var));
            procs_.push_back(make_proc(med.y_var, mform, false,
                                       mform.kind == CurveKind::BilinearSpline, "_" + med.y_var));
            break;
        }
        default:
            throw Error("unsupported family");
    }

    for (auto& p : procs_) {
        p.requires_grid_cache = p.needs_time_grid();
        if (fam == Family::TVC && class_spec_.tvc->type > 0) p.requires_grid_cache = true;
    }

    for (const auto& p : procs_)
        if (p.form.intrinsic) dev_labels_.push_back("dev" + p.tag);
}

void ModelDesign::build_class_layout() {
    ParameterLayout& L = class_layout_;
    const Family fam = class_spec_.family;
    const bool has_tic = !class_spec_.tic_names.empty();

    // regressed process: the primary outcome for LGCM/LCSM/TVC
    regressed_proc_ = 0;

    // 1. per-process location parameters
    for (std::size_t pi = 0; pi < procs_.size(); ++pi) {
        auto& p = procs_[pi];
        bool regressed = false;
        if (fam == Family::Mediation) {
            // the mediator and outcome receive directed paths; a longitudinal
            // predictor keeps free means
            regressed = !(class_spec_.mediation->x_longitudinal && pi == 0);
        } else if (static_cast<int>(pi) == regressed_proc_) {
            regressed = has_tic || (fam == Family::TVC && class_spec_.tvc->type > 0);
        }
        const std::string loc = regressed ? "alpha_" : "mu_";
        for (int k = 0; k < p.K; ++k)
            p.mean_idx.push_back(L.add_scalar(loc + p.factor_labels[static_cast<std::size_t>(k)] + p.tag,
                                              ParamRole::FactorMean));
        if (fam == Family::Mediation) {
            if (class_spec_.form.kind == CurveKind::BilinearSpline)
                p.shape_idx = L.add_scalar("gamma" + p.tag, ParamRole::ShapeMean);
        } else {
            const std::string sn = shape_param_name(p.form.kind);
            if (!sn.empty()) p.shape_idx = L.add_scalar(sn + p.tag, ParamRole::ShapeMean);
        }
        if (p.form.kind == CurveKind::Nonparametric) {
            for (int j = 2; j <= p.n_waves - 1; ++j)
                p.rel_rate_idx.push_back(
                    L.add_scalar("rrate" + std::to_string(j) + p.tag, ParamRole::RelRate));
        }
    }

    // 2. latent covariance blocks
    psi_block_of_proc_.assign(procs_.size(), -1);
    if (fam == Family::MGM) {
        std::vector<std::string> labels;
        for (const auto& p : procs_)
            for (const auto& l : p.factor_labels) labels.push_back(l + p.tag);
        const int b = L.add_cov_block("psi", labels);
        for (std::size_t pi = 0; pi < procs_.size(); ++pi) psi_block_of_proc_[pi] = b;
    } else {
        for (std::size_t pi = 0; pi < procs_.size(); ++pi)
            psi_block_of_proc_[pi] =
                L.add_cov_block("psi" + procs_[pi].tag, procs_[pi].factor_labels);
    }

    // 3. residual blocks
    if (fam == Family::MGM) {
        std::vector<std::string> labels;
        std::vector<std::string> unames;
        for (const auto& p : procs_) labels.push_back(p.var);
        for (std::size_t i = 0; i < procs_.size(); ++i)
            for (std::size_t j = 0; j <= i; ++j)
                unames.push_back(i == j ? "theta_eps_" + procs_[i].var
                                        : "theta_eps_" + procs_[j].var + "_" + procs_[i].var);
        const int b = L.add_cov_block("theta_eps", labels, unames);
        for (std::size_t pi = 0; pi < procs_.size(); ++pi) {
            procs_[pi].theta_block = b;
            procs_[pi].theta_row = static_cast<int>(pi);
        }
    } else {
        for (auto& p : procs_) {
            p.theta_block = L.add_cov_block("theta_eps" + p.tag, {"eps"});
            p.theta_row = 0;
        }
    }

    // 4. time-invariant covariates (regress onto the primary process)
    tic_names_ = class_spec_.tic_names;
    if (has_tic) {
        const auto& p = procs_[static_cast<std::size_t>(regressed_proc_)];
        tic_path_idx_.assign(p.factor_labels.size(), {});
        for (std::size_t f = 0; f < p.factor_labels.size(); ++f)
            for (const auto& tic : tic_names_)
                tic_path_idx_[f].push_back(
                    L.add_scalar("beta_" + p.factor_labels[f] + "_" + tic, ParamRole::TicPath));
        for (const auto& tic : tic_names_)
            tic_mean_idx_.push_back(L.add_scalar("mu_tic_" + tic, ParamRole::TicMean));
        tic_phi_block_ = L.add_cov_block("phi_tic", tic_names_);
    }

    // 5. time-varying covariate effects
    if (fam == Family::TVC) {
        const auto& p = procs_[0];
        if (class_spec_.tvc->type > 0) {
            for (const auto& l : p.factor_labels)
                tvc_trait_idx_.push_back(L.add_scalar("beta_tvc_" + l, ParamRole::TvcTrait));
        }
        kappa_idx_ = L.add_scalar("kappa", ParamRole::TvcState);
    }

    // 6. mediation structure
    if (fam == Family::Mediation) {
        const auto& med = *class_spec_.mediation;
        const int xp = med.x_longitudinal ? 0 : -1;
        const int mp = med.x_longitudinal ? 1 : 0;
        const int yp = med.x_longitudinal ? 2 : 1;
        if (!med.x_longitudinal) {
            baseline_x_mean_idx_ = L.add_scalar("mu_" + med.x_var, ParamRole::TicMean);
            baseline_x_var_block_ = L.add_cov_block("phi_" + med.x_var, {med.x_var});
        }
        const auto shorts = [&](const ProcessDesign& p) {
            std::vector<std::string> s;
            for (const auto& l : p.factor_labels) {
                if (l == "etag")
                    s.push_back("g");
                else
                    s.push_back(l.substr(3));
            }
            return s;
        };
        auto add_paths = [&](const std::string& stem, int src_proc, int dst_proc) {
            const auto& dst = procs_[static_cast<std::size_t>(dst_proc)];
            const auto ds = shorts(dst);
            if (src_proc < 0) {
                for (int t = 0; t < dst.K; ++t) {
                    MedPath mp2{src_proc, 0, dst_proc, t, -1, stem + "_" + ds[static_cast<std::size_t>(t)]};
                    if (std::find(med.disabled_paths.begin(), med.disabled_paths.end(), mp2.name) ==
                        med.disabled_paths.end())
                        mp2.param_idx = L.add_scalar(mp2.name, ParamRole::MedPath);
                    med_paths_.push_back(mp2);
                }
                return;
            }
            const auto& src = procs_[static_cast<std::size_t>(src_proc)];
            const auto ss = shorts(src);
            for (int s = 0; s < src.K; ++s)
                for (int t = s; t < dst.K; ++t) {
                    MedPath mp2{src_proc, s, dst_proc, t, -1,
                                stem + "_" + ss[static_cast<std::size_t>(s)] + ds[static_cast<std::size_t>(t)]};
                    if (std::find(med.disabled_paths.begin(), med.disabled_paths.end(), mp2.name) ==
                        med.disabled_paths.end())
                        mp2.param_idx = L.add_scalar(mp2.name, ParamRole::MedPath);
                    med_paths_.push_back(mp2);
                }
        };
        add_paths("b_xm", xp, mp);
        add_paths("b_xy", xp, yp);
        add_paths("b_my", mp, yp);
    }
}

void ModelDesign::build_master_layout() {
    if (n_classes_ == 1) {
        master_layout_ = class_layout_;
        class_param_map_.assign(1, {});
        auto& m = class_param_map_[0];
        for (int i = 0; i < class_layout_.size(); ++i) m.push_back(i);
        return;
    }
    const auto& ties = spec_.mixture->tie_names;
    const auto tied = [&](const std::string& n) {
        return std::find(ties.begin(), ties.end(), n) != ties.end();
    };
    class_param_map_.assign(static_cast<std::size_t>(n_classes_), {});
    for (int g = 0; g < n_classes_; ++g) {
        const std::string prefix = "c" + std::to_string(g + 1) + "_";
        auto& map = class_param_map_[static_cast<std::size_t>(g)];
        map.resize(static_cast<std::size_t>(class_layout_.size()));
        const auto& entries = class_layout_.entries();
        for (std::size_t i = 0; i < entries.size();) {
            const auto& e = entries[i];
            if (e.role != ParamRole::CholEntry) {
                if (tied(e.name)) {
                    if (!master_layout_.has(e.name)) master_layout_.add_scalar(e.name, e.role);
                    map[i] = master_layout_.index_of(e.name);
                } else {
                    map[i] = master_layout_.add_scalar(prefix + e.name, e.role);
                }
                ++i;
                continue;
            }
            const CovBlock& b = class_layout_.block(e.block);
            const bool share = tied(b.name);
            const std::string bname = share ? b.name : prefix + b.name;
            int first = -1;
            if (share && master_layout_.has("L." + bname + ".0.0")) {
                first = master_layout_.index_of("L." + bname + ".0.0");
            } else {
                std::vector<std::string> unames = b.user_names;
                if (!share)
                    for (auto& u : unames) u = prefix + u;
                const int nb = master_layout_.add_cov_block(bname, b.labels, unames);
                first = master_layout_.block(nb).offset;
            }
            for (int k = 0; k < b.n_entries(); ++k) map[i + static_cast<std::size_t>(k)] = first + k;
            i += static_cast<std::size_t>(b.n_entries());
        }
    }
    // multinomial logit coefficients, class 1 as reference
    for (int g = 2; g <= n_classes_; ++g) {
        logit_intercept_idx_.push_back(
            master_layout_.add_scalar("pi" + std::to_string(g) + "_int", ParamRole::Logit));
        std::vector<int> coefs;
        for (const auto& tic : spec_.mixture->class_tic_names)
            coefs.push_back(
                master_layout_.add_scalar("pi" + std::to_string(g) + "_" + tic, ParamRole::Logit));
        logit_coef_idx_.push_back(std::move(coefs));
    }
}

void ModelDesign::build_nodes() {
    int node = 0;
    for (auto& p : procs_) {
        p.first_obs_node = node;
        const LongitudinalVar* lv = roles_.find(p.var);
        for (const auto& c : lv->value_cols) node_names_.push_back(c);
        node += p.n_waves;
    }
    if (class_spec_.family == Family::Mediation && !class_spec_.mediation->x_longitudinal) {
        baseline_x_node_ = node++;
        node_names_.push_back(class_spec_.mediation->x_var);
    }
    for (const auto& tic : tic_names_) {
        tic_nodes_.push_back(node++);
        node_names_.push_back(tic);
    }
    n_obs_nodes_ = node;
    for (auto& p : procs_) {
        p.first_factor_node = node;
        for (const auto& l : p.factor_labels) node_names_.push_back(l + p.tag);
        node += p.n_factors();
    }
    n_nodes_ = node;

    // shared-wave residual pairs for multivariate outcomes
    if (class_spec_.family == Family::MGM) {
        const LongitudinalVar* a = roles_.find(procs_[0].var);
        const LongitudinalVar* b = roles_.find(procs_[1].var);
        for (std::size_t i = 0; i < a->waves.size(); ++i)
            for (std::size_t j = 0; j < b->waves.size(); ++j)
                if (a->waves[i] == b->waves[j])
                    mgm_shared_rows_.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
}

StructuralMatrices ModelDesign::make_structural() const {
    StructuralMatrices sm;
    sm.n_nodes = n_nodes_;
    sm.n_obs = n_obs_nodes_;
    sm.paths = Eigen::MatrixXd::Zero(n_nodes_, n_nodes_);
    sm.exo_cov = Eigen::MatrixXd::Zero(n_nodes_, n_nodes_);
    sm.node_mean = Eigen::VectorXd::Zero(n_nodes_);
    sm.obs_offset = Eigen::VectorXd::Zero(n_obs_nodes_);
    sm.node_names = node_names_;
    for (const auto& p : procs_)
        for (int k = 0; k < p.n_factors(); ++k) {
            sm.factor_nodes.push_back(p.first_factor_node + k);
            sm.factor_labels.push_back(p.factor_labels[static_cast<std::size_t>(k)] + p.tag);
        }
    return sm;
}

Eigen::VectorXd ModelDesign::class_slice(const Eigen::VectorXd& master, int g) const {
    const auto& map = class_param_map_[static_cast<std::size_t>(g)];
    Eigen::VectorXd out(static_cast<Eigen::Index>(map.size()));
    for (std::size_t i = 0; i < map.size(); ++i) out[static_cast<Eigen::Index>(i)] = master[map[i]];
    return out;
}

Eigen::VectorXd class_probabilities(const Eigen::VectorXd& intercepts, const Eigen::MatrixXd& coefs,
                                    const Eigen::VectorXd& x, int n_classes) {
    Eigen::VectorXd logits = Eigen::VectorXd::Zero(n_classes);
    for (int g = 1; g < n_classes; ++g) {
        double v = intercepts[g - 1];
        if (x.size() > 0 && coefs.size() > 0) v += coefs.row(g - 1).head(x.size()).dot(x);
        logits[g] = v;
    }
    const double lse = log_sum_exp(logits);
    return (logits.array() - lse).exp();
}

Eigen::VectorXd ModelDesign::class_log_probs(const Eigen::VectorXd& master,
                                             const IndividualData& ind) const {
    Eigen::VectorXd logits = Eigen::VectorXd::Zero(n_classes_);
    for (int g = 1; g < n_classes_; ++g) {
        double v = master[logit_intercept_idx_[static_cast<std::size_t>(g - 1)]];
        const auto& coefs = logit_coef_idx_[static_cast<std::size_t>(g - 1)];
        for (std::size_t m = 0; m < coefs.size(); ++m)
            v += master[coefs[m]] * ind.class_tics[static_cast<Eigen::Index>(m)];
        logits[g] = v;
    }
    const double lse = log_sum_exp(logits);
    return logits.array() - lse;
}

IndividualData ModelDesign::prepare(const LongitudinalDataset& data,
                                    const IndividualRecord& rec) const {
    IndividualData d;
    d.id = rec.id;
    d.procs.resize(procs_.size());
    std::vector<double> omega;
    for (std::size_t pi = 0; pi < procs_.size(); ++pi) {
        const auto& p = procs_[pi];
        auto& pd = d.procs[pi];
        pd.times = data.times(rec, p.var);
        const LongitudinalVar* lv = roles_.find(p.var);
        for (int j = 0; j < p.n_waves; ++j) {
            const auto v = data.cell(rec, lv->value_cols[static_cast<std::size_t>(j)]);
            if (v.has_value()) {
                pd.obs_rows.push_back(j);
                d.present_nodes.push_back(p.first_obs_node + j);
                omega.push_back(*v);
            }
        }
        if (p.requires_grid_cache && !pd.obs_rows.empty()) {
            const int last = pd.obs_rows.back();
            for (int k = 0; k <= last; ++k)
                if (!std::isfinite(pd.times[static_cast<std::size_t>(k)]))
                    throw IncompleteTimeGrid(
                        "individual '" + rec.id + "': interval-based loadings for '" + p.var +
                        "' need time values at every wave up to its last observation");
        }
    }
    if (class_spec_.family == Family::TVC && class_spec_.tvc->type == 0) {
        const LongitudinalVar* xv = roles_.find(class_spec_.tvc->var);
        if (!xv) throw RoleMismatch("TVC variable '" + class_spec_.tvc->var + "' not in roles");
        d.tvc_values.assign(static_cast<std::size_t>(procs_[0].n_waves),
                            std::numeric_limits<double>::quiet_NaN());
        for (int j = 0; j < procs_[0].n_waves; ++j) {
            const auto v = data.cell(rec, xv->value_cols[static_cast<std::size_t>(j)]);
            if (v.has_value()) d.tvc_values[static_cast<std::size_t>(j)] = *v;
        }
        for (int j : d.procs[0].obs_rows)
            if (!std::isfinite(d.tvc_values[static_cast<std::size_t>(j)]))
                throw RoleMismatch("individual '" + rec.id + "': TVC type 0 needs '" +
                                   class_spec_.tvc->var + "' observed wherever the outcome is");
    }
    if (baseline_x_node_ >= 0) {
        const auto v = data.cell(rec, class_spec_.mediation->x_var);
        if (v.has_value()) {
            d.present_nodes.push_back(baseline_x_node_);
            omega.push_back(*v);
        }
    }
    for (std::size_t m = 0; m < tic_names_.size(); ++m) {
        const auto v = data.cell(rec, tic_names_[m]);
        if (v.has_value()) {
            d.present_nodes.push_back(tic_nodes_[m]);
            omega.push_back(*v);
        }
    }
    if (is_mixture() && !spec_.mixture->class_tic_names.empty()) {
        d.class_tics.resize(static_cast<Eigen::Index>(spec_.mixture->class_tic_names.size()));
        for (std::size_t m = 0; m < spec_.mixture->class_tic_names.size(); ++m) {
            const auto v = data.cell(rec, spec_.mixture->class_tic_names[m]);
            if (!v.has_value())
                throw Error("individual '" + rec.id + "': class membership covariate '" +
                            spec_.mixture->class_tic_names[m] + "' must be complete");
            d.class_tics[static_cast<Eigen::Index>(m)] = *v;
        }
    }
    d.omega = Eigen::Map<Eigen::VectorXd>(omega.data(), static_cast<Eigen::Index>(omega.size()));
    return d;
}

std::vector<IndividualData> ModelDesign::prepare_all(const LongitudinalDataset& data) const {
    std::vector<IndividualData> out;
    out.reserve(static_cast<std::size_t>(data.n_individuals()));
    for (const auto& rec : data.individuals()) out.push_back(prepare(data, rec));
    return out;
}

void ModelDesign::fill_loadings(const Eigen::VectorXd& v, const IndividualData& ind,
                                StructuralMatrices& sm) const {
    for (std::size_t pi = 0; pi < procs_.size(); ++pi) {
        const auto& p = procs_[pi];
        const auto& pd = ind.procs[pi];
        ShapeParams sp;
        if (p.shape_idx >= 0) {
            const double s = v[p.shape_idx];
            if (p.form.kind == CurveKind::NegExponential) sp.b = s;
            if (p.form.kind == CurveKind::JenssBayley) sp.c = s;
            if (p.form.kind == CurveKind::BilinearSpline) sp.gamma = s;
        }
        if (p.form.intrinsic) {
            if (p.form.kind == CurveKind::NegExponential) sp.mu_eta1 = v[p.mean_idx[1]];
            if (p.form.kind == CurveKind::JenssBayley) sp.mu_eta2 = v[p.mean_idx[2]];
            if (p.form.kind == CurveKind::BilinearSpline) {
                sp.mu_eta1 = v[p.mean_idx[1]];
                sp.mu_eta2 = v[p.mean_idx[2]];
            }
        }
        if (p.form.kind == CurveKind::Nonparametric) {
            sp.rel_rates.resize(std::max(0, p.n_waves - 1));
            if (sp.rel_rates.size() > 0) sp.rel_rates[0] = 1.0;
            for (std::size_t r = 0; r < p.rel_rate_idx.size(); ++r)
                sp.rel_rates[static_cast<Eigen::Index>(r + 1)] = v[p.rel_rate_idx[r]];
        }
        std::vector<double> prefix_times;
        for (int j : pd.obs_rows) {
            Eigen::VectorXd row;
            if (p.lcsm) {
                prefix_times.assign(pd.times.begin(), pd.times.begin() + j + 1);
                row = lcsm_loading_row(p.form, prefix_times, sp);
            } else if (p.mediation_param) {
                row = mediation_loading_row(p.form.kind, pd.times[static_cast<std::size_t>(j)],
                                            sp.gamma);
            } else {
                row = lgcm_loading_row(p.form, pd.times[static_cast<std::size_t>(j)], sp);
            }
            for (int k = 0; k < row.size(); ++k)
                sm.paths(p.first_obs_node + j, p.first_factor_node + k) = row[k];
        }
    }

    // time-varying covariate: state effects on the outcome rows
    if (class_spec_.family == Family::TVC) {
        const int type = class_spec_.tvc->type;
        const auto& py = procs_[0];
        const auto& pdy = ind.procs[0];
        const double kappa = v[kappa_idx_];
        if (type == 0) {
            for (int j : pdy.obs_rows)
                sm.obs_offset[py.first_obs_node + j] =
                    kappa * ind.tvc_values[static_cast<std::size_t>(j)];
        } else {
            const auto& px = procs_[1];
            const auto& pdx = ind.procs[1];
            Eigen::VectorXd rates(std::max(0, px.n_waves - 1));
            if (rates.size() > 0) rates[0] = 1.0;
            for (std::size_t r = 0; r < px.rel_rate_idx.size(); ++r)
                rates[static_cast<Eigen::Index>(r + 1)] = v[px.rel_rate_idx[r]];
            const int x_eta1 = px.first_factor_node + 1;
            for (int j : pdy.obs_rows) {
                if (j == 0) continue; // baseline carries no state feature
                double w = 0.0;
                if (type == 1) {
                    w = rates[j - 1];
                } else if (type == 2) {
                    w = rates[j - 1] * (pdx.times[static_cast<std::size_t>(j)] -
                                        pdx.times[static_cast<std::size_t>(j - 1)]);
                } else {
                    for (int k = 1; k <= j; ++k)
                        w += rates[k - 1] * (pdx.times[static_cast<std::size_t>(k)] -
                                             pdx.times[static_cast<std::size_t>(k - 1)]);
                }
                sm.paths(py.first_obs_node + j, x_eta1) = kappa * w;
            }
        }
    }
}

void ModelDesign::build_structural(const Eigen::VectorXd& v, const IndividualData& ind,
                                   StructuralMatrices& sm) const {
    if (v.size() != class_layout_.size())
        throw IncompleteParameterSet("parameter vector length " + std::to_string(v.size()) +
                                     " does not match layout size " +
                                     std::to_string(class_layout_.size()));
    sm.paths.setZero();
    sm.exo_cov.setZero();
    sm.node_mean.setZero();
    sm.obs_offset.setZero();

    // latent covariance blocks
    if (class_spec_.family == Family::MGM) {
        const Eigen::MatrixXd psi = class_layout_.cov_matrix(psi_block_of_proc_[0], v);
        std::vector<int> nodes;
        for (const auto& p : procs_)
            for (int k = 0; k < p.n_factors(); ++k) nodes.push_back(p.first_factor_node + k);
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (std::size_t j = 0; j < nodes.size(); ++j)
                sm.exo_cov(nodes[i], nodes[j]) = psi(static_cast<Eigen::Index>(i),
                                                     static_cast<Eigen::Index>(j));
    } else {
        for (std::size_t pi = 0; pi < procs_.size(); ++pi) {
            const auto& p = procs_[pi];
            const Eigen::MatrixXd psi = class_layout_.cov_matrix(psi_block_of_proc_[pi], v);
            for (int i = 0; i < p.n_factors(); ++i)
                for (int j = 0; j < p.n_factors(); ++j)
                    sm.exo_cov(p.first_factor_node + i, p.first_factor_node + j) = psi(i, j);
        }
    }

    // residual variances (and cross-outcome residual covariance)
    if (class_spec_.family == Family::MGM) {
        const Eigen::MatrixXd th = class_layout_.cov_matrix(procs_[0].theta_block, v);
        for (std::size_t pi = 0; pi < procs_.size(); ++pi) {
            const auto& p = procs_[pi];
            for (int j = 0; j < p.n_waves; ++j)
                sm.exo_cov(p.first_obs_node + j, p.first_obs_node + j) =
                    th(static_cast<Eigen::Index>(pi), static_cast<Eigen::Index>(pi));
        }
        for (const auto& [ry, rz] : mgm_shared_rows_) {
            const int a = procs_[0].first_obs_node + ry;
            const int b = procs_[1].first_obs_node + rz;
            sm.exo_cov(a, b) = sm.exo_cov(b, a) = th(0, 1);
        }
    } else {
        for (const auto& p : procs_) {
            const double th = class_layout_.cov_matrix(p.theta_block, v)(0, 0);
            for (int j = 0; j < p.n_waves; ++j)
                sm.exo_cov(p.first_obs_node + j, p.first_obs_node + j) = th;
        }
    }

    // factor means / intercepts (deviation factors stay at zero)
    for (const auto& p : procs_)
        for (int k = 0; k < p.K; ++k) sm.node_mean[p.first_factor_node + k] = v[p.mean_idx[k]];

    // time-invariant covariates: exogenous observed variables
    for (std::size_t m = 0; m < tic_names_.size(); ++m)
        sm.node_mean[tic_nodes_[m]] = v[tic_mean_idx_[m]];
    if (tic_phi_block_ >= 0) {
        const Eigen::MatrixXd phi = class_layout_.cov_matrix(tic_phi_block_, v);
        for (std::size_t i = 0; i < tic_nodes_.size(); ++i)
            for (std::size_t j = 0; j < tic_nodes_.size(); ++j)
                sm.exo_cov(tic_nodes_[i], tic_nodes_[j]) =
                    phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        const auto& p = procs_[static_cast<std::size_t>(regressed_proc_)];
        for (std::size_t f = 0; f < p.factor_labels.size(); ++f)
            for (std::size_t m = 0; m < tic_names_.size(); ++m)
                sm.paths(p.first_factor_node + static_cast<int>(f), tic_nodes_[m]) =
                    v[tic_path_idx_[f][m]];
    }

    // trait path of a decomposed TVC
    if (!tvc_trait_idx_.empty()) {
        const auto& py = procs_[0];
        const int x_eta0 = procs_[1].first_factor_node;
        for (std::size_t f = 0; f < tvc_trait_idx_.size(); ++f)
            sm.paths(py.first_factor_node + static_cast<int>(f), x_eta0) = v[tvc_trait_idx_[f]];
    }

    // mediation: baseline predictor moments and directed paths
    if (baseline_x_node_ >= 0) {
        sm.node_mean[baseline_x_node_] = v[baseline_x_mean_idx_];
        sm.exo_cov(baseline_x_node_, baseline_x_node_) =
            class_layout_.cov_matrix(baseline_x_var_block_, v)(0, 0);
    }
    for (const auto& mp : med_paths_) {
        if (mp.param_idx < 0) continue;
        const int src = mp.src_proc < 0
                            ? baseline_x_node_
                            : procs_[static_cast<std::size_t>(mp.src_proc)].first_factor_node +
                                  mp.src_factor;
        const int dst =
            procs_[static_cast<std::size_t>(mp.dst_proc)].first_factor_node + mp.dst_factor;
        sm.paths(dst, src) = v[mp.param_idx];
    }

    fill_loadings(v, ind, sm);
}

// ---------------------------------------------------------------------------
// implied moments
// ---------------------------------------------------------------------------

ImpliedMoments implied_moments(const StructuralMatrices& sm, const std::vector<int>& present) {
    const int n = sm.n_nodes;
    Eigen::MatrixXd ima = Eigen::MatrixXd::Identity(n, n) - sm.paths;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(ima);
    const Eigen::VectorXd udiag = lu.matrixLU().diagonal().cwiseAbs();
    const double umax = udiag.maxCoeff();
    const double rcond_est = umax > 0.0 ? udiag.minCoeff() / umax : 0.0;
    if (!(rcond_est > 1e-12))
        throw SingularStructure("(I - A) is singular to working precision (rcond ~ " +
                                std::to_string(rcond_est) + ")");
    const Eigen::MatrixXd t = lu.inverse();
    const Eigen::VectorXd mu_full = t * sm.node_mean;
    const Eigen::MatrixXd sig_full = t * sm.exo_cov * t.transpose();

    ImpliedMoments im;
    const int p = static_cast<int>(present.size());
    im.mean.resize(p);
    im.cov.resize(p, p);
    for (int i = 0; i < p; ++i) {
        im.mean[i] = mu_full[present[static_cast<std::size_t>(i)]] +
                     sm.obs_offset[present[static_cast<std::size_t>(i)]];
        for (int j = 0; j < p; ++j)
            im.cov(i, j) = sig_full(present[static_cast<std::size_t>(i)],
                                    present[static_cast<std::size_t>(j)]);
    }
    return im;
}

StructuralMatrices build_structural(const ModelDesign& design, const Eigen::VectorXd& internal,
                                    const LongitudinalDataset& data, const IndividualRecord& rec) {
    StructuralMatrices sm = design.make_structural();
    const IndividualData ind = design.prepare(data, rec);
    design.build_structural(internal, ind, sm);
    return sm;
}

std::pair<ModelSpec, Eigen::VectorXd> class_submodel(const ModelDesign& design,
                                                     const Eigen::VectorXd& master, int g) {
    if (!design.is_mixture()) throw Error("class_submodel: not a mixture design");
    if (g < 1 || g > design.n_classes())
        throw ClassIndexOutOfRange("class index " + std::to_string(g) + " outside 1.." +
                                   std::to_string(design.n_classes()));
    return {design.spec().submodel_spec(), design.class_slice(master, g - 1)};
}

} // namespace nlgrowth
