#include "nlgrowth/curves.hpp"

#include "nlgrowth/errors.hpp"

#include <cmath>

namespace nlgrowth {

namespace {

// |t - gamma| is not differentiable at the knot; the symmetric limit of the
// sign term is taken as 0 inside this window.
constexpr double kKnotSignWindow = 1e-9;

double sign_term(double dt) {
    if (std::fabs(dt) < kKnotSignWindow) return 0.0;
    return dt > 0.0 ? 1.0 : -1.0;
}

void require(bool ok, const char* what) {
    if (!ok) throw MissingShapeParameter(what);
}

} // namespace

std::string curve_kind_name(CurveKind k) {
    switch (k) {
        case CurveKind::Linear: return "linear";
        case CurveKind::Quadratic: return "quadratic";
        case CurveKind::NegExponential: return "neg_exponential";
        case CurveKind::JenssBayley: return "jenss_bayley";
        case CurveKind::BilinearSpline: return "bilinear_spline";
        case CurveKind::Nonparametric: return "nonparametric";
    }
    return "?";
}

CurveKind curve_kind_from_name(const std::string& s) {
    if (s == "linear") return CurveKind::Linear;
    if (s == "quadratic") return CurveKind::Quadratic;
    if (s == "neg_exponential" || s == "negexp" || s == "nege") return CurveKind::NegExponential;
    if (s == "jenss_bayley" || s == "jb") return CurveKind::JenssBayley;
    if (s == "bilinear_spline" || s == "bilinear" || s == "bls") return CurveKind::BilinearSpline;
    if (s == "nonparametric" || s == "nonpar") return CurveKind::Nonparametric;
    throw Error("unknown functional form: " + s);
}

bool FunctionalForm::supports_intrinsic() const {
    return kind == CurveKind::NegExponential || kind == CurveKind::JenssBayley ||
           kind == CurveKind::BilinearSpline;
}

void FunctionalForm::validate() const {
    if (intrinsic && !supports_intrinsic())
        throw Error("functional form '" + curve_kind_name(kind) + "' has no intrinsic variant");
}

int FunctionalForm::base_factors() const {
    switch (kind) {
        case CurveKind::Linear: return 2;
        case CurveKind::Quadratic: return 3;
        case CurveKind::NegExponential: return 2;
        case CurveKind::JenssBayley: return 3;
        case CurveKind::BilinearSpline: return 3;
        case CurveKind::Nonparametric: return 2;
    }
    return 0;
}

Eigen::VectorXd lgcm_loading_row(const FunctionalForm& form, double t, const ShapeParams& sp) {
    form.validate();
    Eigen::VectorXd row(form.factor_count());
    switch (form.kind) {
        case CurveKind::Linear:
            row << 1.0, t;
            break;
        case CurveKind::Quadratic:
            row << 1.0, t, t * t;
            break;
        case CurveKind::NegExponential: {
            require(std::isfinite(sp.b), "neg_exponential needs b (or mu_b)");
            const double e = std::exp(-sp.b * t);
            row[0] = 1.0;
            row[1] = 1.0 - e;
            if (form.intrinsic) {
                require(std::isfinite(sp.mu_eta1), "intrinsic neg_exponential needs mu_eta1");
                row[2] = sp.mu_eta1 * e * t;
            }
            break;
        }
        case CurveKind::JenssBayley: {
            require(std::isfinite(sp.c), "jenss_bayley needs c (or mu_c)");
            const double e = std::exp(sp.c * t);
            row[0] = 1.0;
            row[1] = t;
            row[2] = e - 1.0;
            if (form.intrinsic) {
                require(std::isfinite(sp.mu_eta2), "intrinsic jenss_bayley needs mu_eta2");
                row[3] = sp.mu_eta2 * e * t;
            }
            break;
        }
        case CurveKind::BilinearSpline: {
            require(std::isfinite(sp.gamma), "bilinear_spline needs gamma (or mu_gamma)");
            const double dt = t - sp.gamma;
            row[0] = 1.0;
            row[1] = dt;
            row[2] = std::fabs(dt);
            if (form.intrinsic) {
                // d/dgamma of (eta0' + eta1'(t-gamma) + eta2'|t-gamma|) at the means
                require(std::isfinite(sp.mu_eta1) && std::isfinite(sp.mu_eta2),
                        "intrinsic bilinear_spline needs mu_eta1 and mu_eta2");
                row[3] = -sp.mu_eta1 - sp.mu_eta2 * sign_term(dt);
            }
            break;
        }
        case CurveKind::Nonparametric:
            throw Error("nonparametric form has no status-time loading row; use lcsm_loading_row");
    }
    return row;
}

Eigen::VectorXd lcsm_loading_row(const FunctionalForm& form, const std::vector<double>& times,
                                 const ShapeParams& sp) {
    form.validate();
    if (form.kind == CurveKind::Linear || form.kind == CurveKind::BilinearSpline)
        throw Error("latent change score rows are defined for quadratic, neg_exponential, "
                    "jenss_bayley and nonparametric forms");
    if (times.empty()) throw Error("lcsm_loading_row: needs at least the baseline time");
    for (std::size_t k = 1; k < times.size(); ++k)
        if (!(times[k] > times[k - 1]))
            throw NonMonotoneTimes("lcsm_loading_row: times not strictly increasing");

    Eigen::VectorXd row = Eigen::VectorXd::Zero(form.factor_count());
    row[0] = 1.0;
    switch (form.kind) {
        case CurveKind::Quadratic: {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t k = 1; k < times.size(); ++k) {
                const double dt = times[k] - times[k - 1];
                const double mid = 0.5 * (times[k] + times[k - 1]);
                s1 += dt;
                s2 += 2.0 * mid * dt;
            }
            row[1] = s1;
            row[2] = s2;
            break;
        }
        case CurveKind::NegExponential: {
            require(std::isfinite(sp.b), "neg_exponential needs b (or mu_b)");
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t k = 1; k < times.size(); ++k) {
                const double dt = times[k] - times[k - 1];
                const double mid = 0.5 * (times[k] + times[k - 1]);
                const double e = std::exp(-sp.b * mid);
                s1 += sp.b * e * dt;
                s2 += e * (1.0 - sp.b * mid) * dt;
            }
            row[1] = s1;
            if (form.intrinsic) {
                require(std::isfinite(sp.mu_eta1), "intrinsic neg_exponential needs mu_eta1");
                row[2] = sp.mu_eta1 * s2;
            }
            break;
        }
        case CurveKind::JenssBayley: {
            require(std::isfinite(sp.c), "jenss_bayley needs c (or mu_c)");
            double s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t k = 1; k < times.size(); ++k) {
                const double dt = times[k] - times[k - 1];
                const double mid = 0.5 * (times[k] + times[k - 1]);
                const double e = std::exp(sp.c * mid);
                s1 += dt;
                s2 += sp.c * e * dt;
                s3 += e * (1.0 + sp.c * mid) * dt;
            }
            row[1] = s1;
            row[2] = s2;
            if (form.intrinsic) {
                require(std::isfinite(sp.mu_eta2), "intrinsic jenss_bayley needs mu_eta2");
                row[3] = sp.mu_eta2 * s3;
            }
            break;
        }
        case CurveKind::Nonparametric: {
            const std::size_t need = times.size() >= 1 ? times.size() - 1 : 0;
            if (static_cast<std::size_t>(sp.rel_rates.size()) < need)
                throw MissingShapeParameter("nonparametric form needs a slope quotient per interval");
            double s = 0.0;
            for (std::size_t k = 1; k < times.size(); ++k)
                s += sp.rel_rates[static_cast<Eigen::Index>(k - 1)] * (times[k] - times[k - 1]);
            row[1] = s;
            break;
        }
        default:
            break;
    }
    return row;
}

Eigen::VectorXd mediation_loading_row(CurveKind kind, double t, double gamma) {
    if (kind == CurveKind::Linear) {
        Eigen::VectorXd row(2);
        row << 1.0, t;
        return row;
    }
    if (kind == CurveKind::BilinearSpline) {
        Eigen::VectorXd row(3);
        row << std::min(0.0, t - gamma), 1.0, std::max(0.0, t - gamma);
        return row;
    }
    throw Error("mediation supports linear and bilinear_spline forms only");
}

double true_trajectory(CurveKind kind, double t, const Eigen::VectorXd& coefs, double shape) {
    switch (kind) {
        case CurveKind::Linear:
            return coefs[0] + coefs[1] * t;
        case CurveKind::Quadratic:
            return coefs[0] + coefs[1] * t + coefs[2] * t * t;
        case CurveKind::NegExponential:
            return coefs[0] + coefs[1] * (1.0 - std::exp(-shape * t));
        case CurveKind::JenssBayley:
            return coefs[0] + coefs[1] * t + coefs[2] * (std::exp(shape * t) - 1.0);
        case CurveKind::BilinearSpline:
            if (t < shape) return coefs[0] + coefs[1] * t;
            return coefs[0] + coefs[1] * shape + coefs[2] * (t - shape);
        case CurveKind::Nonparametric:
            throw Error("nonparametric trajectories are defined per time grid, not pointwise");
    }
    return 0.0;
}

Eigen::Vector3d knot_reparam_forward(const Eigen::Vector3d& o, double gamma) {
    return {o[0] + gamma * o[1], 0.5 * (o[1] + o[2]), 0.5 * (o[2] - o[1])};
}

Eigen::Vector3d knot_reparam_inverse_mean(const Eigen::Vector3d& r, double gamma) {
    const double eta1 = r[1] - r[2];
    const double eta2 = r[1] + r[2];
    return {r[0] - gamma * eta1, eta1, eta2};
}

Eigen::MatrixXd knot_reparam_inverse_jacobian(const Eigen::VectorXd& r, double gamma) {
    if (r.size() == 3) {
        Eigen::MatrixXd j(3, 3);
        j << 1.0, -gamma, gamma, //
            0.0, 1.0, -1.0,      //
            0.0, 1.0, 1.0;
        return j;
    }
    if (r.size() == 4) {
        // last input coordinate is the knot; eta0 = r0 - gamma*(r1 - r2)
        Eigen::MatrixXd j(4, 4);
        j.setZero();
        j(0, 0) = 1.0;
        j(0, 1) = -gamma;
        j(0, 2) = gamma;
        j(0, 3) = -(r[1] - r[2]);
        j(1, 1) = 1.0;
        j(1, 2) = -1.0;
        j(2, 1) = 1.0;
        j(2, 2) = 1.0;
        j(3, 3) = 1.0;
        return j;
    }
    throw Error("knot reparameterization expects 3 or 4 coordinates");
}

void knot_reparam_inverse(const Eigen::VectorXd& reparam_mean, const Eigen::MatrixXd& reparam_cov,
                          double gamma, Eigen::VectorXd& original_mean,
                          Eigen::MatrixXd& original_cov) {
    if (reparam_cov.rows() != reparam_mean.size() || reparam_cov.cols() != reparam_mean.size())
        throw Error("knot_reparam_inverse: mean / covariance dimensions disagree");
    const Eigen::MatrixXd j = knot_reparam_inverse_jacobian(reparam_mean, gamma);
    if (reparam_mean.size() == 3) {
        original_mean = knot_reparam_inverse_mean(reparam_mean.head<3>(), gamma);
    } else {
        original_mean.resize(4);
        original_mean.head<3>() = knot_reparam_inverse_mean(reparam_mean.head<3>(), gamma);
        original_mean[3] = reparam_mean[3];
    }
    original_cov = j * reparam_cov * j.transpose();
}

} // namespace nlgrowth
