#include "nlgrowth/cli.hpp"

#include "nlgrowth/errors.hpp"
#include "nlgrowth/estimator.hpp"
#include "nlgrowth/fitfile.hpp"
#include "nlgrowth/postfit.hpp"
#include "nlgrowth/simulate.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace nlgrowth::cli {

namespace {

using Json = nlohmann::ordered_json;

// "1:6" or "2,4,6" -> 0-based wave indices
std::vector<int> parse_records(const std::string& s) {
    std::vector<int> out;
    const auto colon = s.find(':');
    if (colon != std::string::npos) {
        const int a = std::stoi(s.substr(0, colon));
        const int b = std::stoi(s.substr(colon + 1));
        if (b < a) throw Error("bad record range: " + s);
        for (int w = a; w <= b; ++w) out.push_back(w - 1);
        return out;
    }
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok) - 1);
    if (out.empty()) throw Error("empty record list");
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

LongitudinalVar make_var(const std::string& var, const std::string& tvar,
                         const std::vector<int>& waves) {
    LongitudinalVar lv;
    lv.name = var;
    for (int w : waves) {
        lv.value_cols.push_back(var + std::to_string(w + 1));
        lv.time_cols.push_back(tvar + std::to_string(w + 1));
        lv.waves.push_back(w);
    }
    return lv;
}

// options shared by all estimation commands
struct FitArgs {
    std::string data_path;
    std::string out;
    std::string starts_path;
    std::vector<double> res_scale{0.1};
    std::vector<double> rand_scale{1.0};
    double rand_cor = 0.0;
    double joint_cor = 0.0;
    int tries = 0;
    std::string jitter_d = "runif";
    double loc = 1.0;
    double scale = 0.25;
    std::vector<int> ok_status{0};
    std::uint64_t seed = 0;
    int max_iter = 500;
    double gtol = 1e-4;
    int threads = 0;
    bool no_se = false;
};

void add_fit_options(CLI::App* cmd, FitArgs& a) {
    cmd->add_option("--data", a.data_path, "wide-format CSV input")->required();
    cmd->add_option("--out", a.out, "output prefix")->required();
    cmd->add_option("--starts", a.starts_path, "JSON file or fit file with starting values");
    cmd->add_option("--res-scale", a.res_scale,
                    "residual share of total variance used for starts (per process)");
    cmd->add_option("--rand-scale", a.rand_scale,
                    "deviation-factor variance scale for intrinsic starts (per process)");
    cmd->add_option("--rand-cor", a.rand_cor, "deviation-to-factor starting correlation");
    cmd->add_option("--joint-cor", a.joint_cor, "cross-outcome starting correlation");
    cmd->add_option("--tries", a.tries, "additional jittered attempts");
    cmd->add_option("--jitter-d", a.jitter_d, "jitter distribution: runif, rnorm, rcauchy");
    cmd->add_option("--loc", a.loc, "jitter location parameter");
    cmd->add_option("--scale", a.scale, "jitter scale parameter");
    cmd->add_option("--ok-status-code", a.ok_status, "acceptable optimizer status codes");
    cmd->add_option("--seed", a.seed, "random seed (64-bit)");
    cmd->add_option("--max-iter", a.max_iter, "iteration limit");
    cmd->add_option("--gtol", a.gtol, "gradient max-norm tolerance");
    cmd->add_option("--threads", a.threads, "worker threads (0: hardware)");
    cmd->add_flag("--no-se", a.no_se, "skip standard errors");
}

FitConfig make_config(const FitArgs& a) {
    FitConfig cfg;
    cfg.res_scale = a.res_scale;
    cfg.rand_scale = a.rand_scale;
    cfg.rand_cor = a.rand_cor;
    cfg.joint_cor = a.joint_cor;
    cfg.tries = a.tries;
    cfg.jitter_dist = jitter_dist_from_name(a.jitter_d);
    cfg.loc = a.loc;
    cfg.scale = a.scale;
    cfg.ok_status = a.ok_status;
    cfg.seed = a.seed;
    cfg.max_iterations = a.max_iter;
    cfg.grad_tol = a.gtol;
    cfg.threads = a.threads;
    cfg.compute_se = !a.no_se;
    if (!a.starts_path.empty()) {
        std::ifstream in(a.starts_path);
        if (!in) throw Error("cannot open starts file: " + a.starts_path);
        Json j;
        in >> j;
        std::map<std::string, double> starts;
        if (j.contains("schema") && j["schema"] == "nlgrowth-fit/1") {
            for (const auto& row : j.at("internal"))
                starts[row[0].get<std::string>()] = row[1].get<double>();
        } else {
            for (const auto& [k, v] : j.items()) starts[k] = v.get<double>();
        }
        cfg.starts = std::move(starts);
    }
    return cfg;
}

void write_table_csv(const std::string& path, const std::vector<std::string>& names,
                     const Eigen::VectorXd& est, const Eigen::VectorXd* se) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "name,estimate,se\n";
    char buf[64];
    for (std::size_t i = 0; i < names.size(); ++i) {
        out << names[i] << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", est[static_cast<Eigen::Index>(i)]);
        out << buf << ',';
        if (se) {
            std::snprintf(buf, sizeof(buf), "%.17g", (*se)[static_cast<Eigen::Index>(i)]);
            out << buf;
        }
        out << '\n';
    }
}

void write_derived_csv(const std::string& path, const DerivedParamTable& table) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "name,estimate,se\n";
    char buf[64];
    for (const auto& r : table.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.estimate);
        out << r.name << ',' << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", r.se);
        out << buf << '\n';
    }
}

const char* status_text(int s) {
    switch (s) {
        case 0: return "converged";
        case 1: return "iteration limit";
        case 2: return "non-positive-definite information";
        case 3: return "evaluation failures exhausted";
        default: return "not run";
    }
}

void print_summary(const FitResult& fit, const DerivedParamTable& derived) {
    std::printf("model: %s", family_name(fit.spec.family).c_str());
    if (fit.spec.family == Family::Mixture)
        std::printf(" (%d classes, %s)", fit.spec.mixture->n_classes,
                    family_name(fit.spec.mixture->sub_family).c_str());
    std::printf(" / %s%s\n", curve_kind_name(fit.spec.form.kind).c_str(),
                fit.spec.form.intrinsic ? " (intrinsic)" : "");
    std::printf("individuals: %d   free parameters: %d\n", fit.n_individuals, fit.n_parameters);
    std::printf("-2 log-likelihood: %.6f\n", fit.minus_two_log_lik);
    std::printf("status: %d (%s), attempts: %zu\n", fit.status, status_text(fit.status),
                fit.attempts.size());
    std::printf("%-28s %14s %12s\n", "parameter", "estimate", "s.e.");
    for (std::size_t i = 0; i < fit.user_names.size(); ++i) {
        if (fit.user_se)
            std::printf("%-28s %14.6f %12.6f\n", fit.user_names[i].c_str(),
                        fit.user_estimates[static_cast<Eigen::Index>(i)],
                        (*fit.user_se)[static_cast<Eigen::Index>(i)]);
        else
            std::printf("%-28s %14.6f %12s\n", fit.user_names[i].c_str(),
                        fit.user_estimates[static_cast<Eigen::Index>(i)], "-");
    }
    if (!derived.rows.empty()) {
        std::printf("%-28s %14s %12s\n", "derived parameter", "estimate", "s.e.");
        for (const auto& r : derived.rows)
            std::printf("%-28s %14.6f %12.6f\n", r.name.c_str(), r.estimate, r.se);
    }
}

int finish_fit(const ModelSpec& spec, const ColumnRoles& roles, const LongitudinalDataset& data,
               const FitConfig& cfg, const std::string& out_prefix) {
    ModelDesign design(spec, roles);
    FitResult fit = nlgrowth::fit(design, data, cfg);
    DerivedParamTable derived;
    if (fit.user_vcov) derived = derived_params(fit, design);

    write_table_csv(out_prefix + "_params.csv", fit.user_names, fit.user_estimates,
                    fit.user_se ? &*fit.user_se : nullptr);
    write_derived_csv(out_prefix + "_derived.csv", derived);
    save_fit(fit, derived, out_prefix + "_fit.json");
    if (design.is_mixture()) {
        const PosteriorMatrix pm = posterior_classify(fit, design, data);
        std::ofstream out(out_prefix + "_posterior.csv");
        out << "id";
        for (int g = 1; g <= design.n_classes(); ++g) out << ",prob_" << g;
        out << ",modal\n";
        char buf[64];
        for (int i = 0; i < pm.prob.rows(); ++i) {
            out << data.individuals()[static_cast<std::size_t>(i)].id;
            for (int g = 0; g < pm.prob.cols(); ++g) {
                std::snprintf(buf, sizeof(buf), "%.17g", pm.prob(i, g));
                out << ',' << buf;
            }
            out << ',' << (pm.modal[static_cast<std::size_t>(i)] + 1) << '\n';
        }
    }
    print_summary(fit, derived);
    const bool ok =
        std::find(cfg.ok_status.begin(), cfg.ok_status.end(), fit.status) != cfg.ok_status.end();
    if (!ok) {
        std::fprintf(stderr, "estimation did not reach an acceptable status (best attempt: %d, %s)\n",
                     fit.status, status_text(fit.status));
        for (const auto& a : fit.attempts)
            std::fprintf(stderr, "  attempt: value %.6f status %d iterations %d\n", a.final_value,
                         a.status, a.iterations);
    }
    return ok ? 0 : 1;
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"nonlinear latent growth, change-score and mixture trajectory models"};
    app.require_subcommand(1);

    // ---- shared state ----
    FitArgs fa;
    std::string traj_var, t_var = "T", t_records, curve_fun = "linear";
    bool intrinsic_flag = false, no_intrinsic_flag = false, add_tic = false;
    std::string growth_tic;
    std::string tvc_var, bs_model = "lgcm";
    int tvc_type = 1;
    int no_traj = 0;
    std::string x_var, m_var, y_var;
    int grp = 2;
    std::string sub_model = "lgcm", class_tic, tie_names, disable_paths;

    const auto add_common = [&](CLI::App* c, bool needs_curve) {
        add_fit_options(c, fa);
        if (needs_curve) {
            c->add_option("--curve-fun", curve_fun, "functional form");
            c->add_flag("--intrinsic", intrinsic_flag, "random rate ratio / acceleration / knot");
            c->add_flag("--no-intrinsic", no_intrinsic_flag, "population rate ratio / acceleration / knot");
        }
        c->add_option("--t-var", t_var, "time column prefix (comma list for several outcomes)");
        c->add_option("--t-records", t_records,
                      "wave records per outcome, e.g. 1:6 or 1,3,5 (';' between outcomes)");
    };

    CLI::App* lgcm = app.add_subcommand("lgcm", "latent growth curve model");
    add_common(lgcm, true);
    lgcm->add_option("--traj-var", traj_var, "longitudinal outcome prefix")->required();
    lgcm->add_flag("--add-tic", add_tic, "regress growth factors on covariates");
    lgcm->add_option("--growth-tic", growth_tic, "comma list of covariate columns");

    CLI::App* lcsm = app.add_subcommand("lcsm", "latent change score model");
    add_common(lcsm, true);
    lcsm->add_option("--traj-var", traj_var, "longitudinal outcome prefix")->required();
    lcsm->add_flag("--add-tic", add_tic, "regress growth factors on covariates");
    lcsm->add_option("--growth-tic", growth_tic, "comma list of covariate columns");

    CLI::App* tvc = app.add_subcommand("tvc", "trajectory model with a time-varying covariate");
    add_common(tvc, true);
    tvc->add_option("--traj-var", traj_var, "longitudinal outcome prefix")->required();
    tvc->add_option("--tvc-var", tvc_var, "time-varying covariate prefix")->required();
    tvc->add_option("--type", tvc_type, "0 direct, 1 slopes, 2 changes, 3 change-from-baseline");
    tvc->add_option("--bs-model", bs_model, "outcome model: lgcm or lcsm");
    tvc->add_flag("--add-tic", add_tic, "regress growth factors on covariates");
    tvc->add_option("--growth-tic", growth_tic, "comma list of covariate columns");

    CLI::App* mgm = app.add_subcommand("mgm", "multivariate (parallel-process) growth model");
    add_common(mgm, true);
    mgm->add_option("--traj-var", traj_var, "comma list of outcome prefixes")->required();
    mgm->add_option("--no-traj", no_traj, "number of longitudinal processes (default 2)");
    mgm->add_option("--bs-model", bs_model, "lgcm or lcsm");

    CLI::App* med = app.add_subcommand("mediation", "longitudinal mediation model");
    add_common(med, true);
    med->add_option("--x-var", x_var, "predictor (prefix, or column when baseline)")->required();
    med->add_option("--m-var", m_var, "mediator prefix")->required();
    med->add_option("--y-var", y_var, "outcome prefix")->required();
    med->add_option("--no-traj", no_traj, "3: longitudinal predictor (default), 2: baseline");
    med->add_option("--disable-path", disable_paths, "comma list of path names to fix at zero");

    CLI::App* gmm = app.add_subcommand("gmm", "growth mixture model");
    add_common(gmm, true);
    gmm->add_option("--grp", grp, "number of latent classes (>= 2)");
    gmm->add_option("--sub-model", sub_model, "lgcm, lcsm, tvc, mgm or med");
    gmm->add_option("--class-tic", class_tic, "comma list of class-membership covariates");
    gmm->add_option("--tie", tie_names, "comma list of parameters shared across classes");
    gmm->add_option("--traj-var", traj_var, "outcome prefix(es)");
    gmm->add_option("--tvc-var", tvc_var, "time-varying covariate prefix");
    gmm->add_option("--type", tvc_type, "TVC type");
    gmm->add_option("--bs-model", bs_model, "lgcm or lcsm base");
    gmm->add_option("--no-traj", no_traj, "process count for mgm/mediation submodels");
    gmm->add_option("--x-var", x_var, "mediation predictor");
    gmm->add_option("--m-var", m_var, "mediation mediator");
    gmm->add_option("--y-var", y_var, "mediation outcome");
    gmm->add_flag("--add-tic", add_tic, "regress growth factors on covariates");
    gmm->add_option("--growth-tic", growth_tic, "comma list of covariate columns");

    // ---- simulate ----
    std::string sim_config, sim_out;
    CLI::App* sim = app.add_subcommand("simulate", "generate data from the exact curves");
    sim->add_option("--config", sim_config, "JSON generative configuration")->required();
    sim->add_option("--out", sim_out, "output prefix")->required();

    // ---- post-fit commands ----
    std::string full_path, reduced_path, fit_path, data_path, out_prefix;
    std::vector<std::string> crit_fits, crit_labels;
    CLI::App* lrt_cmd = app.add_subcommand("lrt", "likelihood ratio test of nested fits");
    lrt_cmd->add_option("--full", full_path)->required();
    lrt_cmd->add_option("--reduced", reduced_path)->required();
    lrt_cmd->add_option("--out", out_prefix);

    CLI::App* fs_cmd = app.add_subcommand("fscores", "factor scores from a saved fit");
    fs_cmd->add_option("--fit", fit_path)->required();
    fs_cmd->add_option("--data", data_path)->required();
    fs_cmd->add_option("--out", out_prefix)->required();

    CLI::App* cls_cmd = app.add_subcommand("classify", "posterior classification of a mixture fit");
    cls_cmd->add_option("--fit", fit_path)->required();
    cls_cmd->add_option("--data", data_path)->required();
    cls_cmd->add_option("--out", out_prefix)->required();

    CLI::App* crit_cmd = app.add_subcommand("criteria", "enumeration criteria table");
    crit_cmd->add_option("--fit", crit_fits, "fit files (repeatable)")->required();
    crit_cmd->add_option("--label", crit_labels, "row labels (defaults to file names)");
    crit_cmd->add_option("--data", data_path, "dataset (for mixture posterior proportions)");
    crit_cmd->add_option("--out", out_prefix);

    std::vector<std::string> argv_copy = args;
    std::vector<char*> argv;
    argv.reserve(argv_copy.size());
    std::string prog = "nlgrowth";
    argv.push_back(prog.data());
    for (auto& s : argv_copy) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const auto records_per_outcome = [&](std::size_t n_expected) {
            std::vector<std::vector<int>> out;
            for (const auto& part : split(t_records, ';')) out.push_back(parse_records(part));
            if (out.size() == 1 && n_expected > 1) out.resize(n_expected, out[0]);
            if (out.size() != n_expected)
                throw Error("--t-records must give " + std::to_string(n_expected) + " list(s)");
            return out;
        };
        const auto tvars_per_outcome = [&](std::size_t n_expected) {
            std::vector<std::string> tv = split(t_var, ',');
            if (tv.size() == 1 && n_expected > 1) tv.resize(n_expected, tv[0]);
            if (tv.size() != n_expected) throw Error("--t-var must give 1 or per-outcome prefixes");
            return tv;
        };

        if (app.got_subcommand(sim)) {
            std::ifstream in(sim_config);
            if (!in) throw Error("cannot open simulation config: " + sim_config);
            Json j;
            in >> j;
            SimConfig cfg;
            cfg.spec = spec_from_json(j.at("spec"));
            cfg.n = j.at("n").get<int>();
            cfg.waves = j.at("waves").get<std::vector<double>>();
            if (j.contains("wave_sets")) {
                for (const auto& ws : j["wave_sets"])
                    cfg.wave_sets.push_back(ws.get<std::vector<int>>());
            }
            cfg.jitter_window = j.value("jitter_window", 0.0);
            if (j.contains("missing_rates"))
                cfg.missing_rates = j["missing_rates"].get<std::vector<double>>();
            else if (j.contains("missing_rate"))
                cfg.missing_rates = {j["missing_rate"].get<double>()};
            cfg.seed = j.value("seed", 1ULL);
            cfg.time_prefix = j.value("time_prefix", std::string("T"));
            cfg.id_col = j.value("id_col", std::string("id"));
            for (const auto& [k, v] : j.at("truth").items()) cfg.truth[k] = v.get<double>();
            const SimResult res = simulate(cfg);
            write_wide_csv(res.data, sim_out + ".csv");
            Json sidecar;
            sidecar["schema"] = "nlgrowth-sim/1";
            sidecar["config"] = j;
            sidecar["roles"] = roles_to_json(res.data.roles());
            sidecar["truncation_rate"] = res.truncation_rate;
            std::ofstream side(sim_out + "_truth.json");
            side << sidecar.dump(1) << '\n';
            std::printf("simulated %d individuals at %zu waves (truncation rate %.4f)\n", cfg.n,
                        cfg.waves.size(), res.truncation_rate);
            return 0;
        }

        if (app.got_subcommand(lrt_cmd)) {
            const LoadedFit full = load_fit(full_path);
            const LoadedFit reduced = load_fit(reduced_path);
            const LrtResult r = lrt(full.fit, reduced.fit);
            std::printf("LRT statistic: %.6f\ndf: %d\np-value: %.6g\n", r.statistic, r.df, r.p_value);
            std::printf("note: when the comparison fixes a variance at its zero boundary the naive "
                        "chi-square p-value is conservative\n");
            if (!out_prefix.empty()) {
                std::ofstream out(out_prefix + "_lrt.csv");
                out << "statistic,df,p_value\n";
                char buf[96];
                std::snprintf(buf, sizeof(buf), "%.17g,%d,%.17g\n", r.statistic, r.df, r.p_value);
                out << buf;
            }
            return 0;
        }

        if (app.got_subcommand(fs_cmd) || app.got_subcommand(cls_cmd)) {
            const LoadedFit lf = load_fit(fit_path);
            const LongitudinalDataset data = load_wide_csv(data_path, lf.fit.roles);
            ModelDesign design(lf.fit.spec, lf.fit.roles);
            if (app.got_subcommand(cls_cmd)) {
                const PosteriorMatrix pm = posterior_classify(lf.fit, design, data);
                std::ofstream out(out_prefix + "_posterior.csv");
                out << "id";
                for (int g = 1; g <= design.n_classes(); ++g) out << ",prob_" << g;
                out << ",modal\n";
                char buf[64];
                for (int i = 0; i < pm.prob.rows(); ++i) {
                    out << data.individuals()[static_cast<std::size_t>(i)].id;
                    for (int g = 0; g < pm.prob.cols(); ++g) {
                        std::snprintf(buf, sizeof(buf), "%.17g", pm.prob(i, g));
                        out << ',' << buf;
                    }
                    out << ',' << (pm.modal[static_cast<std::size_t>(i)] + 1) << '\n';
                }
                std::printf("wrote posterior matrix for %d individuals\n",
                            static_cast<int>(pm.prob.rows()));
            } else {
                const FactorScores fs = factor_scores(lf.fit, design, data);
                std::ofstream out(out_prefix + "_fscores.csv");
                out << "id";
                for (const auto& l : fs.labels) out << ',' << l;
                if (!fs.modal_class.empty()) out << ",modal";
                out << '\n';
                char buf[64];
                for (int i = 0; i < fs.scores.rows(); ++i) {
                    out << data.individuals()[static_cast<std::size_t>(i)].id;
                    for (int k = 0; k < fs.scores.cols(); ++k) {
                        std::snprintf(buf, sizeof(buf), "%.17g", fs.scores(i, k));
                        out << ',' << buf;
                    }
                    if (!fs.modal_class.empty())
                        out << ',' << (fs.modal_class[static_cast<std::size_t>(i)] + 1);
                    out << '\n';
                }
                std::printf("wrote factor scores for %d individuals\n",
                            static_cast<int>(fs.scores.rows()));
            }
            return 0;
        }

        if (app.got_subcommand(crit_cmd)) {
            std::vector<LoadedFit> fits;
            for (const auto& p : crit_fits) fits.push_back(load_fit(p));
            std::vector<PosteriorMatrix> posts(fits.size());
            std::vector<CriteriaEntry> entries;
            for (std::size_t i = 0; i < fits.size(); ++i) {
                CriteriaEntry e;
                e.label = i < crit_labels.size() ? crit_labels[i] : crit_fits[i];
                e.fit = &fits[i].fit;
                if (fits[i].fit.spec.family == Family::Mixture) {
                    if (data_path.empty())
                        throw Error("criteria: --data is needed for mixture posterior proportions");
                    const LongitudinalDataset data = load_wide_csv(data_path, fits[i].fit.roles);
                    ModelDesign design(fits[i].fit.spec, fits[i].fit.roles);
                    posts[i] = posterior_classify(fits[i].fit, design, data);
                    e.posterior = &posts[i];
                }
                entries.push_back(e);
            }
            const auto rows = criteria_table(entries);
            std::printf("%-20s %14s %8s %14s %s\n", "model", "logLik", "params", "BIC",
                        "class proportions");
            std::string csv = "label,log_lik,n_params,bic,proportions\n";
            for (const auto& r : rows) {
                std::string props;
                for (std::size_t g = 0; g < r.class_proportions.size(); ++g) {
                    char b[32];
                    std::snprintf(b, sizeof(b), "%s%.4f", g ? " " : "", r.class_proportions[g]);
                    props += b;
                }
                std::printf("%-20s %14.4f %8d %14.4f %s\n", r.label.c_str(), r.log_lik, r.n_params,
                            r.bic, props.c_str());
                char b[160];
                std::snprintf(b, sizeof(b), "%s,%.17g,%d,%.17g,%s\n", r.label.c_str(), r.log_lik,
                              r.n_params, r.bic, props.c_str());
                csv += b;
            }
            if (!out_prefix.empty()) {
                std::ofstream out(out_prefix + "_criteria.csv");
                out << csv;
            }
            return 0;
        }

        // ---- estimation commands ----
        ModelSpec spec;
        ColumnRoles roles;
        const FitConfig cfg = make_config(fa);
        const bool is_gmm = app.got_subcommand(gmm);
        Family fam;
        if (app.got_subcommand(lgcm)) fam = Family::LGCM;
        else if (app.got_subcommand(lcsm)) fam = Family::LCSM;
        else if (app.got_subcommand(tvc)) fam = Family::TVC;
        else if (app.got_subcommand(mgm)) fam = Family::MGM;
        else if (app.got_subcommand(med)) fam = Family::Mediation;
        else fam = family_from_name(sub_model);

        FunctionalForm form;
        form.kind = curve_kind_from_name(curve_fun);
        if (intrinsic_flag && no_intrinsic_flag) throw Error("--intrinsic conflicts with --no-intrinsic");
        form.intrinsic = intrinsic_flag ? true : (no_intrinsic_flag ? false : form.supports_intrinsic());
        if (fam == Family::Mediation) form.intrinsic = false;
        spec.form = form;
        spec.family = is_gmm ? Family::Mixture : fam;
        if (add_tic) spec.tic_names = split(growth_tic, ',');

        switch (fam) {
            case Family::LGCM:
            case Family::LCSM: {
                const auto recs = records_per_outcome(1);
                const auto tvars = tvars_per_outcome(1);
                spec.outcome = traj_var;
                roles.longitudinal.push_back(make_var(traj_var, tvars[0], recs[0]));
                break;
            }
            case Family::TVC: {
                const auto recs = records_per_outcome(1);
                const auto tvars = tvars_per_outcome(1);
                spec.outcome = traj_var;
                TvcSpec t;
                t.var = tvc_var;
                t.type = tvc_type;
                t.base_model = family_from_name(bs_model);
                spec.tvc = t;
                roles.longitudinal.push_back(make_var(traj_var, tvars[0], recs[0]));
                roles.longitudinal.push_back(make_var(tvc_var, tvars[0], recs[0]));
                break;
            }
            case Family::MGM: {
                const auto outs = split(traj_var, ',');
                if (no_traj > 0 && static_cast<int>(outs.size()) != no_traj)
                    throw Error("--no-traj disagrees with the number of outcomes in --traj-var");
                const auto recs = records_per_outcome(outs.size());
                const auto tvars = tvars_per_outcome(outs.size());
                MgmSpec m;
                m.outcomes = outs;
                m.base_model = family_from_name(bs_model);
                spec.mgm = m;
                for (std::size_t i = 0; i < outs.size(); ++i)
                    roles.longitudinal.push_back(make_var(outs[i], tvars[i], recs[i]));
                break;
            }
            case Family::Mediation: {
                MediationSpec m;
                m.x_var = x_var;
                m.m_var = m_var;
                m.y_var = y_var;
                m.x_longitudinal = no_traj != 2;
                m.disabled_paths = split(disable_paths, ',');
                spec.mediation = m;
                const std::size_t nproc = m.x_longitudinal ? 3 : 2;
                const auto recs = records_per_outcome(nproc);
                const auto tvars = tvars_per_outcome(nproc);
                std::size_t r = 0;
                if (m.x_longitudinal) {
                    roles.longitudinal.push_back(make_var(x_var, tvars[r], recs[r]));
                    ++r;
                }
                roles.longitudinal.push_back(make_var(m_var, tvars[r], recs[r]));
                ++r;
                roles.longitudinal.push_back(make_var(y_var, tvars[r], recs[r]));
                break;
            }
            default:
                throw Error("unsupported submodel");
        }
        if (is_gmm) {
            MixtureSpec mix;
            mix.n_classes = grp;
            mix.sub_family = fam;
            mix.class_tic_names = split(class_tic, ',');
            mix.tie_names = split(tie_names, ',');
            spec.mixture = mix;
            roles.class_tic_cols = mix.class_tic_names;
        }
        roles.tic_cols = spec.tic_names;

        const LongitudinalDataset data = load_wide_csv(fa.data_path, roles);
        return finish_fit(spec, roles, data, cfg, fa.out);
    } catch (const NonPDImpliedCovariance& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

} // namespace nlgrowth::cli
