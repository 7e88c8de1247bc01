#include "nlgrowth/estimator.hpp"

#include "nlgrowth/errors.hpp"
#include "nlgrowth/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nlgrowth {

JitterDist jitter_dist_from_name(const std::string& s) {
    if (s == "runif") return JitterDist::Runif;
    if (s == "rnorm") return JitterDist::Rnorm;
    if (s == "rcauchy") return JitterDist::Rcauchy;
    throw Error("unknown jitter distribution: " + s + " (runif, rnorm, rcauchy)");
}

std::string jitter_dist_name(JitterDist d) {
    switch (d) {
        case JitterDist::Runif: return "runif";
        case JitterDist::Rnorm: return "rnorm";
        case JitterDist::Rcauchy: return "rcauchy";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// numeric differentiation
// ---------------------------------------------------------------------------

namespace {
double diff_step(double xj) { return std::max(1e-6, 1e-6 * std::fabs(xj)); }
double hess_step(double xj) { return std::max(1e-4, 1e-4 * std::fabs(xj)); }
} // namespace

std::optional<Eigen::VectorXd> central_gradient(const Objective& f, const Eigen::VectorXd& x,
                                                double fx) {
    const Eigen::Index p = x.size();
    Eigen::VectorXd g(p);
    Eigen::VectorXd xt = x;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double h = diff_step(x[j]);
        xt[j] = x[j] + h;
        const auto fp = f(xt);
        xt[j] = x[j] - h;
        const auto fm = f(xt);
        xt[j] = x[j];
        if (fp && fm) {
            g[j] = (*fp - *fm) / (2.0 * h);
        } else if (fp) {
            g[j] = (*fp - fx) / h;
        } else if (fm) {
            g[j] = (fx - *fm) / h;
        } else {
            return std::nullopt;
        }
    }
    return g;
}

std::optional<Eigen::MatrixXd> central_hessian(const Objective& f, const Eigen::VectorXd& x,
                                               double fx) {
    const Eigen::Index p = x.size();
    Eigen::MatrixXd h(p, p);
    Eigen::VectorXd xt = x;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double hj = hess_step(x[j]);
        xt[j] = x[j] + 2.0 * hj;
        const auto fp = f(xt);
        xt[j] = x[j] - 2.0 * hj;
        const auto fm = f(xt);
        xt[j] = x[j];
        if (!fp || !fm) return std::nullopt;
        h(j, j) = (*fp - 2.0 * fx + *fm) / (4.0 * hj * hj);
    }
    for (Eigen::Index j = 0; j < p; ++j) {
        for (Eigen::Index k = j + 1; k < p; ++k) {
            const double hj = hess_step(x[j]);
            const double hk = hess_step(x[k]);
            double v[4];
            const double sj[4] = {1.0, 1.0, -1.0, -1.0};
            const double sk[4] = {1.0, -1.0, 1.0, -1.0};
            for (int q = 0; q < 4; ++q) {
                xt[j] = x[j] + sj[q] * hj;
                xt[k] = x[k] + sk[q] * hk;
                const auto fv = f(xt);
                xt[j] = x[j];
                xt[k] = x[k];
                if (!fv) return std::nullopt;
                v[q] = *fv;
            }
            h(j, k) = h(k, j) = (v[0] - v[1] - v[2] + v[3]) / (4.0 * hj * hk);
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// BFGS with Armijo backtracking
// ---------------------------------------------------------------------------

MinimizeResult bfgs_minimize(const Objective& f, Eigen::VectorXd x, const MinimizeOptions& opt) {
    MinimizeResult res;
    const Eigen::Index p = x.size();
    int evals = 0;
    const auto eval = [&](const Eigen::VectorXd& v) {
        ++evals;
        return f(v);
    };

    auto f0 = eval(x);
    if (!f0) {
        res.x = x;
        res.status = 3;
        res.n_evaluations = evals;
        return res;
    }
    double fx = *f0;
    auto gopt = central_gradient(f, x, fx);
    evals += 2 * static_cast<int>(p);
    if (!gopt) {
        res.x = x;
        res.f = fx;
        res.status = 3;
        res.n_evaluations = evals;
        return res;
    }
    Eigen::VectorXd g = *gopt;

    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(p, p);
    bool reset_used = false;
    int iter = 0;
    for (; iter < opt.max_iterations; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
            res.status = 0;
            break;
        }
        Eigen::VectorXd d = -(hinv * g);
        double slope = d.dot(g);
        if (!(slope < 0.0)) {
            hinv.setIdentity();
            d = -g;
            slope = d.dot(g);
        }

        // backtracking line search with halving on evaluation failures
        double alpha = 1.0;
        bool accepted = false;
        Eigen::VectorXd xn;
        double fn = 0.0;
        for (int halving = 0; halving <= opt.max_halvings; ++halving) {
            xn = x + alpha * d;
            const auto fv = eval(xn);
            if (fv && *fv <= fx + 1e-4 * alpha * slope) {
                fn = *fv;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            if (!reset_used) {
                // one restart from a fresh metric before declaring failure
                reset_used = true;
                hinv.setIdentity();
                continue;
            }
            res.status = g.lpNorm<Eigen::Infinity>() < opt.grad_tol ? 0 : 3;
            break;
        }

        auto gn_opt = central_gradient(f, xn, fn);
        evals += 2 * static_cast<int>(p);
        if (!gn_opt) {
            res.status = 3;
            x = xn;
            fx = fn;
            break;
        }
        const Eigen::VectorXd s = xn - x;
        const Eigen::VectorXd y = *gn_opt - g;
        x = xn;
        fx = fn;
        g = *gn_opt;

        const double sy = s.dot(y);
        if (sy > 1e-10 * s.norm() * y.norm()) {
            if (iter == 0) hinv *= sy / y.squaredNorm(); // initial metric scaling
            const Eigen::VectorXd hy = hinv * y;
            const double yhy = y.dot(hy);
            const double rho = 1.0 / sy;
            // BFGS inverse update
            hinv += (sy + yhy) * rho * rho * (s * s.transpose()) -
                    rho * (hy * s.transpose() + s * hy.transpose());
        }
    }
    if (res.status == -1) {
        if (iter >= opt.max_iterations)
            res.status = g.lpNorm<Eigen::Infinity>() < opt.grad_tol ? 0 : 1;
    }
    res.x = x;
    res.f = fx;
    res.iterations = iter;
    res.n_evaluations = evals;
    return res;
}

// ---------------------------------------------------------------------------
// starting values
// ---------------------------------------------------------------------------

namespace {

struct ProcSummary {
    std::vector<double> wave_mean_t;
    std::vector<double> wave_mean_y;
    std::vector<bool> wave_has_data;
    std::vector<double> wave_var_y;
    double median_time = 0.0;
    Eigen::MatrixXd scores; // usable individuals x K
};

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Ordinary least squares of the wave-mean curve on the reduced basis; used to
// score a grid of candidate shape values.
double mean_curve_sse(const ProcSummary& s, const std::function<Eigen::VectorXd(double)>& basis) {
    std::vector<int> waves;
    for (std::size_t j = 0; j < s.wave_has_data.size(); ++j)
        if (s.wave_has_data[j]) waves.push_back(static_cast<int>(j));
    if (waves.empty()) return std::numeric_limits<double>::infinity();
    const int k = static_cast<int>(basis(s.wave_mean_t[static_cast<std::size_t>(waves[0])]).size());
    Eigen::MatrixXd x(static_cast<int>(waves.size()), k);
    Eigen::VectorXd y(static_cast<int>(waves.size()));
    for (std::size_t r = 0; r < waves.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) =
            basis(s.wave_mean_t[static_cast<std::size_t>(waves[r])]).transpose();
        y[static_cast<Eigen::Index>(r)] = s.wave_mean_y[static_cast<std::size_t>(waves[r])];
    }
    if (x.rows() < x.cols()) return std::numeric_limits<double>::infinity();
    const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
    return (y - x * beta).squaredNorm();
}

// 11 grid points over (0.1, 2]; negated for the Jenss-Bayley acceleration
// ratio, which is negative for decelerating growth.
std::vector<double> shape_grid(bool negate) {
    std::vector<double> g;
    for (int i = 1; i <= 11; ++i) {
        const double v = 0.1 + 1.9 * i / 11.0;
        g.push_back(negate ? -v : v);
    }
    return g;
}

} // namespace

Eigen::VectorXd derive_starts(const ModelDesign& design, const LongitudinalDataset& data,
                              const FitConfig& cfg) {
    if (data.n_individuals() == 0) throw DegenerateData("empty dataset");
    const auto& layout = design.layout();
    const auto& cl = design.class_layout();
    const auto inds = design.prepare_all(data);
    Eigen::VectorXd cv = Eigen::VectorXd::Zero(cl.size());

    std::vector<Eigen::MatrixXd> psi_of_proc;
    std::vector<double> theta_of_proc;

    for (std::size_t pi = 0; pi < design.procs().size(); ++pi) {
        const auto& p = design.procs()[pi];

        // wave-level summaries
        ProcSummary s;
        s.wave_mean_t.assign(static_cast<std::size_t>(p.n_waves), 0.0);
        s.wave_mean_y.assign(static_cast<std::size_t>(p.n_waves), 0.0);
        s.wave_var_y.assign(static_cast<std::size_t>(p.n_waves), 0.0);
        s.wave_has_data.assign(static_cast<std::size_t>(p.n_waves), false);
        std::vector<int> n_t(static_cast<std::size_t>(p.n_waves), 0);
        std::vector<int> n_y(static_cast<std::size_t>(p.n_waves), 0);
        std::vector<double> all_times;
        for (const auto& ind : inds) {
            const auto& pd = ind.procs[pi];
            for (int j = 0; j < p.n_waves; ++j) {
                const double t = pd.times[static_cast<std::size_t>(j)];
                if (std::isfinite(t)) {
                    s.wave_mean_t[static_cast<std::size_t>(j)] += t;
                    ++n_t[static_cast<std::size_t>(j)];
                    all_times.push_back(t);
                }
            }
            std::size_t oi = 0;
            for (std::size_t k = 0; k < ind.present_nodes.size(); ++k) {
                const int node = ind.present_nodes[k];
                if (node >= p.first_obs_node && node < p.first_obs_node + p.n_waves) {
                    const int j = node - p.first_obs_node;
                    s.wave_mean_y[static_cast<std::size_t>(j)] += ind.omega[static_cast<Eigen::Index>(k)];
                    ++n_y[static_cast<std::size_t>(j)];
                }
                (void)oi;
            }
        }
        for (int j = 0; j < p.n_waves; ++j) {
            if (n_t[static_cast<std::size_t>(j)] > 0)
                s.wave_mean_t[static_cast<std::size_t>(j)] /= n_t[static_cast<std::size_t>(j)];
            if (n_y[static_cast<std::size_t>(j)] > 0) {
                s.wave_mean_y[static_cast<std::size_t>(j)] /= n_y[static_cast<std::size_t>(j)];
                s.wave_has_data[static_cast<std::size_t>(j)] = true;
            }
        }
        // wave variances
        std::vector<double> ss(static_cast<std::size_t>(p.n_waves), 0.0);
        for (const auto& ind : inds) {
            for (std::size_t k = 0; k < ind.present_nodes.size(); ++k) {
                const int node = ind.present_nodes[k];
                if (node >= p.first_obs_node && node < p.first_obs_node + p.n_waves) {
                    const int j = node - p.first_obs_node;
                    const double d =
                        ind.omega[static_cast<Eigen::Index>(k)] - s.wave_mean_y[static_cast<std::size_t>(j)];
                    ss[static_cast<std::size_t>(j)] += d * d;
                }
            }
        }
        double total_var = 0.0;
        int var_waves = 0;
        for (int j = 0; j < p.n_waves; ++j)
            if (n_y[static_cast<std::size_t>(j)] > 1) {
                s.wave_var_y[static_cast<std::size_t>(j)] =
                    ss[static_cast<std::size_t>(j)] / (n_y[static_cast<std::size_t>(j)] - 1);
                total_var += s.wave_var_y[static_cast<std::size_t>(j)];
                ++var_waves;
            }
        const double mean_wave_var = var_waves > 0 ? total_var / var_waves : 1.0;
        s.median_time = median_of(all_times);

        // provisional shape value
        double shape0 = std::numeric_limits<double>::quiet_NaN();
        if (p.form.kind == CurveKind::NegExponential) {
            double best = std::numeric_limits<double>::infinity();
            for (double b : shape_grid(false)) {
                const double sse = mean_curve_sse(s, [&](double t) {
                    Eigen::VectorXd r(2);
                    r << 1.0, 1.0 - std::exp(-b * t);
                    return r;
                });
                if (sse < best) {
                    best = sse;
                    shape0 = b;
                }
            }
        } else if (p.form.kind == CurveKind::JenssBayley) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : shape_grid(true)) {
                const double sse = mean_curve_sse(s, [&](double t) {
                    Eigen::VectorXd r(3);
                    r << 1.0, t, std::exp(c * t) - 1.0;
                    return r;
                });
                if (sse < best) {
                    best = sse;
                    shape0 = c;
                }
            }
        } else if (p.form.kind == CurveKind::BilinearSpline) {
            shape0 = s.median_time;
        }
        if (p.shape_idx >= 0) cv[p.shape_idx] = shape0;

        // relative-rate starts from wave-mean slopes (unit fallback)
        std::vector<double> rates(static_cast<std::size_t>(std::max(0, p.n_waves - 1)), 1.0);
        if (p.form.kind == CurveKind::Nonparametric) {
            std::vector<double> slope(rates.size(), std::numeric_limits<double>::quiet_NaN());
            for (std::size_t j = 0; j + 1 < static_cast<std::size_t>(p.n_waves); ++j) {
                if (s.wave_has_data[j] && s.wave_has_data[j + 1]) {
                    const double dt = s.wave_mean_t[j + 1] - s.wave_mean_t[j];
                    if (dt > 0.0)
                        slope[j] = (s.wave_mean_y[j + 1] - s.wave_mean_y[j]) / dt;
                }
            }
            if (!slope.empty() && std::isfinite(slope[0]) && std::fabs(slope[0]) > 1e-8) {
                for (std::size_t j = 1; j < rates.size(); ++j)
                    if (std::isfinite(slope[j])) rates[j] = slope[j] / slope[0];
            }
            for (std::size_t r = 0; r < p.rel_rate_idx.size(); ++r) cv[p.rel_rate_idx[r]] = rates[r + 1];
        }

        // crude factor scores by per-individual least squares on the reduced basis
        ShapeParams sp;
        sp.b = shape0;
        sp.c = shape0;
        sp.gamma = shape0;
        sp.rel_rates =
            Eigen::Map<const Eigen::VectorXd>(rates.data(), static_cast<Eigen::Index>(rates.size()));
        FunctionalForm reduced = p.form;
        reduced.intrinsic = false;
        std::vector<Eigen::VectorXd> score_rows;
        for (const auto& ind : inds) {
            const auto& pd = ind.procs[pi];
            const int ni = static_cast<int>(pd.obs_rows.size());
            if (ni < p.K) continue;
            Eigen::MatrixXd x(ni, p.K);
            Eigen::VectorXd y(ni);
            int r = 0;
            bool ok = true;
            for (int j : pd.obs_rows) {
                Eigen::VectorXd row;
                try {
                    if (p.lcsm) {
                        std::vector<double> prefix(pd.times.begin(), pd.times.begin() + j + 1);
                        row = lcsm_loading_row(reduced, prefix, sp);
                    } else if (p.mediation_param) {
                        row = mediation_loading_row(p.form.kind, pd.times[static_cast<std::size_t>(j)],
                                                    sp.gamma);
                    } else {
                        row = lgcm_loading_row(reduced, pd.times[static_cast<std::size_t>(j)], sp);
                    }
                } catch (const Error&) {
                    ok = false;
                    break;
                }
                x.row(r) = row.transpose();
                // locate the observed value for this row
                for (std::size_t k = 0; k < ind.present_nodes.size(); ++k)
                    if (ind.present_nodes[k] == p.first_obs_node + j)
                        y[r] = ind.omega[static_cast<Eigen::Index>(k)];
                ++r;
            }
            if (!ok) continue;
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
            if (qr.rank() < p.K) continue;
            score_rows.push_back(qr.solve(y));
        }
        if (static_cast<int>(score_rows.size()) < std::max(2, p.K))
            throw DegenerateData("variable '" + p.var +
                                 "': fewer usable individuals than growth factors");
        Eigen::MatrixXd scores(static_cast<Eigen::Index>(score_rows.size()), p.K);
        for (std::size_t i = 0; i < score_rows.size(); ++i)
            scores.row(static_cast<Eigen::Index>(i)) = score_rows[i].transpose();
        const Eigen::VectorXd mu = scores.colwise().mean();
        Eigen::MatrixXd centered = scores.rowwise() - mu.transpose();
        Eigen::MatrixXd psi_base =
            centered.transpose() * centered / std::max<double>(1.0, scores.rows() - 1);

        for (int k = 0; k < p.K; ++k) cv[p.mean_idx[static_cast<std::size_t>(k)]] = mu[k];

        // deviation-factor block for intrinsic forms
        Eigen::MatrixXd psi = psi_base;
        if (p.form.intrinsic) {
            const int kk = p.K;
            psi.conservativeResize(kk + 1, kk + 1);
            const double dev_var =
                std::max(1e-6, cfg.rand_scale_for(pi) * shape0 * shape0);
            psi(kk, kk) = dev_var;
            for (int k = 0; k < kk; ++k) {
                double cov = cfg.rand_cor * std::sqrt(dev_var * std::max(psi_base(k, k), 1e-12));
                psi(kk, k) = psi(k, kk) = cov;
            }
            // shrink the deviation covariances until the block is factorizable
            for (int tryi = 0; tryi < 20; ++tryi) {
                Eigen::LLT<Eigen::MatrixXd> llt(psi +
                                                Eigen::MatrixXd::Identity(kk + 1, kk + 1) * 1e-10);
                if (llt.info() == Eigen::Success) break;
                for (int k = 0; k < kk; ++k) {
                    psi(kk, k) *= 0.5;
                    psi(k, kk) *= 0.5;
                }
            }
        }
        psi_of_proc.push_back(psi);
        theta_of_proc.push_back(std::max(1e-6, cfg.res_scale_for(pi) * mean_wave_var));

        if (design.spec().effective_family() != Family::MGM) {
            cl.set_cov_matrix(design.procs()[pi].theta_block,
                              Eigen::MatrixXd::Constant(1, 1, theta_of_proc.back()), cv);
            cl.set_cov_matrix(design.psi_block_of_proc()[pi], psi, cv);
        }
    }

    // MGM: joint latent block and residual block with joint_cor cross starts
    if (design.spec().effective_family() == Family::MGM) {
        const auto& procs = design.procs();
        int dim = 0;
        std::vector<int> offsets;
        for (const auto& p : procs) {
            offsets.push_back(dim);
            dim += p.n_factors();
        }
        Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(dim, dim);
        for (std::size_t pi = 0; pi < procs.size(); ++pi)
            psi.block(offsets[pi], offsets[pi], procs[pi].n_factors(), procs[pi].n_factors()) =
                psi_of_proc[pi];
        for (std::size_t a = 0; a < procs.size(); ++a)
            for (std::size_t b = a + 1; b < procs.size(); ++b)
                for (int k = 0; k < std::min(procs[a].n_factors(), procs[b].n_factors()); ++k) {
                    const double covv = cfg.joint_cor *
                                        std::sqrt(psi(offsets[a] + k, offsets[a] + k) *
                                                  psi(offsets[b] + k, offsets[b] + k));
                    psi(offsets[a] + k, offsets[b] + k) = covv;
                    psi(offsets[b] + k, offsets[a] + k) = covv;
                }
        cl.set_cov_matrix(design.psi_block_of_proc()[0], psi, cv);

        const std::size_t np = procs.size();
        Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(np),
                                                      static_cast<Eigen::Index>(np));
        for (std::size_t pi = 0; pi < np; ++pi)
            theta(static_cast<Eigen::Index>(pi), static_cast<Eigen::Index>(pi)) = theta_of_proc[pi];
        for (std::size_t a = 0; a < np; ++a)
            for (std::size_t b = a + 1; b < np; ++b) {
                const double covv = cfg.joint_cor * std::sqrt(theta_of_proc[a] * theta_of_proc[b]);
                theta(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = covv;
                theta(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = covv;
            }
        cl.set_cov_matrix(design.procs()[0].theta_block, theta, cv);
    }

    // TIC sample moments (complete cases); regression paths start at zero
    if (design.tic_phi_block() >= 0) {
        const int m = design.tic_count();
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
        Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(m, m);
        int n_complete = 0;
        std::vector<Eigen::VectorXd> rows;
        for (const auto& rec : data.individuals()) {
            Eigen::VectorXd x(m);
            bool all = true;
            for (int k = 0; k < m; ++k) {
                const auto v = data.cell(rec, design.tic_names()[static_cast<std::size_t>(k)]);
                if (!v.has_value()) {
                    all = false;
                    break;
                }
                x[k] = *v;
            }
            if (all) {
                rows.push_back(x);
                mu += x;
                ++n_complete;
            }
        }
        if (n_complete >= 2) {
            mu /= n_complete;
            for (const auto& x : rows) phi += (x - mu) * (x - mu).transpose();
            phi /= std::max(1, n_complete - 1);
        } else {
            phi = Eigen::MatrixXd::Identity(m, m);
        }
        for (int k = 0; k < m; ++k) cv[design.tic_mean_idx()[static_cast<std::size_t>(k)]] = mu[k];
        design.class_layout().set_cov_matrix(design.tic_phi_block(), phi, cv);
    }

    // baseline mediation predictor moments
    if (design.baseline_x_node() >= 0) {
        double mu = 0.0, s2 = 0.0;
        int n = 0;
        for (const auto& rec : data.individuals()) {
            const auto v = data.cell(rec, design.spec().mediation->x_var);
            if (v.has_value()) {
                mu += *v;
                ++n;
            }
        }
        if (n > 0) mu /= n;
        for (const auto& rec : data.individuals()) {
            const auto v = data.cell(rec, design.spec().mediation->x_var);
            if (v.has_value()) s2 += (*v - mu) * (*v - mu);
        }
        s2 = n > 1 ? s2 / (n - 1) : 1.0;
        cv[design.baseline_x_mean_idx()] = mu;
        design.class_layout().set_cov_matrix(design.baseline_x_var_block(),
                                             Eigen::MatrixXd::Constant(1, 1, std::max(s2, 1e-6)), cv);
    }

    // assemble the master vector (mixture classes split around the base start)
    Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.size());
    const int G = design.n_classes();
    for (int g = 0; g < G; ++g) {
        Eigen::VectorXd cg = cv;
        if (G > 1) {
            const double offset = -1.0 + 2.0 * g / (G - 1.0);
            for (std::size_t pi = 0; pi < design.procs().size(); ++pi) {
                const auto& p = design.procs()[pi];
                for (int k = 0; k < p.K; ++k)
                    cg[p.mean_idx[static_cast<std::size_t>(k)]] +=
                        offset * std::sqrt(std::max(0.0, psi_of_proc[pi](k, k)));
            }
        }
        const auto& map = design.class_param_map()[static_cast<std::size_t>(g)];
        for (std::size_t i = 0; i < map.size(); ++i) v[map[i]] = cg[static_cast<Eigen::Index>(i)];
    }
    // logit starts stay at zero

    if (cfg.starts) {
        for (const auto& [name, value] : *cfg.starts) v[layout.index_of(name)] = value;
    }
    return v;
}

Eigen::VectorXd jitter(const ModelDesign& design, const Eigen::VectorXd& starts,
                       const FitConfig& cfg, Rng& rng) {
    Eigen::VectorXd out = starts;
    const auto& layout = design.layout();
    for (int i = 0; i < layout.size(); ++i) {
        double mult = 1.0;
        switch (cfg.jitter_dist) {
            case JitterDist::Runif: mult = rng.uniform(cfg.loc - cfg.scale, cfg.loc + cfg.scale); break;
            case JitterDist::Rnorm: mult = rng.normal(cfg.loc, cfg.scale); break;
            case JitterDist::Rcauchy: mult = rng.cauchy(cfg.loc, cfg.scale); break;
        }
        out[i] = starts[i] * mult;
        if (layout.is_chol_diag(i)) out[i] = std::fabs(out[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// fit: multi-start quasi-Newton with observed-information standard errors
// ---------------------------------------------------------------------------

FitResult fit(const ModelDesign& design, const LongitudinalDataset& data, const FitConfig& cfg) {
    FimlEvaluator ev(design, design.prepare_all(data), cfg.threads);
    const auto& layout = design.layout();

    const Objective objective = [&](const Eigen::VectorXd& x) -> std::optional<double> {
        auto r = ev.try_evaluate(x);
        if (!r) return std::nullopt;
        return r->minus_two_log_lik;
    };

    const Eigen::VectorXd base_starts = derive_starts(design, data, cfg);
    Rng rng(cfg.seed);

    const auto acceptable = [&](int status) {
        return std::find(cfg.ok_status.begin(), cfg.ok_status.end(), status) != cfg.ok_status.end();
    };

    MinimizeOptions mopt;
    mopt.max_iterations = cfg.max_iterations;
    mopt.grad_tol = cfg.grad_tol;

    struct Attempt {
        MinimizeResult min;
        int status = -1;
        std::optional<Eigen::MatrixXd> hinv; // inverse Hessian of -2lnL when PD
        std::uint64_t hash = 0;
    };
    std::vector<Attempt> attempts;

    const int n_attempts = 1 + std::max(0, cfg.tries);
    for (int a = 0; a < n_attempts; ++a) {
        Eigen::VectorXd x0 = a == 0 ? base_starts : jitter(design, base_starts, cfg, rng);
        Attempt at;
        at.hash = fnv1a(x0.data(), static_cast<std::size_t>(x0.size()) * sizeof(double));
        at.min = bfgs_minimize(objective, x0, mopt);
        at.status = at.min.status;
        if (at.status == 0 && cfg.compute_se) {
            const auto fx = objective(at.min.x);
            const auto h = fx ? central_hessian(objective, at.min.x, *fx) : std::nullopt;
            bool pd = false;
            if (h) {
                Eigen::LLT<Eigen::MatrixXd> llt(*h);
                if (llt.info() == Eigen::Success) {
                    at.hinv = llt.solve(
                        Eigen::MatrixXd::Identity(layout.size(), layout.size()));
                    pd = true;
                }
            }
            if (!pd) at.status = 2; // converged onto a non-PD information matrix
        }
        attempts.push_back(std::move(at));
        if (acceptable(attempts.back().status)) break;
    }

    // best acceptable attempt by objective; otherwise best overall
    int chosen = -1;
    for (std::size_t i = 0; i < attempts.size(); ++i) {
        if (!acceptable(attempts[i].status)) continue;
        if (std::isnan(attempts[i].min.f)) continue;
        if (chosen < 0 || attempts[i].min.f < attempts[static_cast<std::size_t>(chosen)].min.f)
            chosen = static_cast<int>(i);
    }
    if (chosen < 0) {
        for (std::size_t i = 0; i < attempts.size(); ++i) {
            if (std::isnan(attempts[i].min.f)) continue;
            if (chosen < 0 || attempts[i].min.f < attempts[static_cast<std::size_t>(chosen)].min.f)
                chosen = static_cast<int>(i);
        }
    }
    if (chosen < 0) chosen = 0;
    const Attempt& win = attempts[static_cast<std::size_t>(chosen)];

    FitResult res;
    res.spec = design.spec();
    res.roles = design.roles();
    for (const auto& e : layout.entries()) res.internal_names.push_back(e.name);
    res.user_names = layout.user_names();
    res.internal_estimates = win.min.x;
    res.user_estimates = layout.to_user(win.min.x);
    res.minus_two_log_lik = win.min.f;
    res.status = win.status;
    res.n_individuals = data.n_individuals();
    res.n_parameters = layout.size();
    res.data_fingerprint = data.fingerprint();
    for (const auto& at : attempts)
        res.attempts.push_back({at.hash, at.min.f, at.status, at.min.iterations});

    if (win.hinv && acceptable(win.status)) {
        // covariance of the internal estimates is 2 H^{-1}; the user-facing
        // covariance follows by the delta method through L L^T
        const Eigen::MatrixXd v_int = 2.0 * (*win.hinv);
        const Eigen::MatrixXd jac = layout.to_user_jacobian(win.min.x);
        Eigen::MatrixXd v_user = jac * v_int * jac.transpose();
        Eigen::VectorXd se(layout.size());
        bool ok = true;
        for (int i = 0; i < layout.size(); ++i) {
            const double d = v_user(i, i);
            if (d < -1e-8) ok = false;
            se[i] = std::sqrt(std::max(0.0, d));
        }
        if (ok) {
            res.user_se = se;
            res.user_vcov = v_user;
        }
    }
    return res;
}

} // namespace nlgrowth
