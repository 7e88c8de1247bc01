#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace nlgrowth {

enum class CurveKind {
    Linear,
    Quadratic,
    NegExponential,
    JenssBayley,
    BilinearSpline,
    Nonparametric
};

std::string curve_kind_name(CurveKind k);
CurveKind curve_kind_from_name(const std::string& s);

// Functional form of one latent process. `intrinsic` marks the variant whose
// rate/acceleration ratio or knot varies across individuals and enters the
// loadings through a first-order expansion around the population value.
struct FunctionalForm {
    CurveKind kind = CurveKind::Linear;
    bool intrinsic = false;

    void validate() const; // intrinsic is rejected for linear/quadratic/nonparametric
    // Base growth-factor count (excluding the deviation factor).
    int base_factors() const;
    int factor_count() const { return base_factors() + (intrinsic ? 1 : 0); }
    bool supports_intrinsic() const;
};

// Shape constants a loading row may need: the population rate ratio b,
// acceleration ratio c, or knot location gamma, plus the factor means that
// appear in the expansion columns.
struct ShapeParams {
    double b = std::numeric_limits<double>::quiet_NaN();
    double c = std::numeric_limits<double>::quiet_NaN();
    double gamma = std::numeric_limits<double>::quiet_NaN();
    double mu_eta1 = std::numeric_limits<double>::quiet_NaN(); // slope-like mean (neg. exponential)
    double mu_eta2 = std::numeric_limits<double>::quiet_NaN(); // acceleration / half-difference mean
    Eigen::VectorXd rel_rates; // nonparametric slope quotients, entry j-1 for interval j (first == 1)
};

// Status-time loading row at time t. For intrinsic forms the extra trailing
// column multiplies the deviation factor (b_i - mu_b, c_i - mu_c, or
// gamma_i - mu_gamma).
Eigen::VectorXd lgcm_loading_row(const FunctionalForm& form, double t, const ShapeParams& sp);

// Accumulated-change loading row for wave j (1-based), built from the times
// of waves 1..j. Row 1 is (1, 0, ...); later rows accumulate interval terms
// evaluated at interval midpoints (or slope quotients for the nonparametric
// form).
Eigen::VectorXd lcsm_loading_row(const FunctionalForm& form, const std::vector<double>& times_to_j,
                                 const ShapeParams& sp);

// Mediation-style bilinear row (min(0,t-gamma), 1, max(0,t-gamma)).
Eigen::VectorXd mediation_loading_row(CurveKind kind, double t, double gamma);

// Exact (non-linearized) curve value for an individual's own coefficients.
// For bilinear, `coefs` is (eta0, eta1, eta2) in the original parameterization
// and `shape` is the individual's knot; for neg. exponential / Jenss-Bayley,
// `shape` is b_i / c_i.
double true_trajectory(CurveKind kind, double t, const Eigen::VectorXd& coefs, double shape = 0.0);

// ---------------------------------------------------------------------------
// Bilinear-spline reparameterization between the estimation coordinates
// (measurement at the knot, mean slope, half slope difference) and the
// original coordinates (intercept, first slope, second slope).
// ---------------------------------------------------------------------------

// (eta0, eta1, eta2) -> (eta0 + gamma*eta1, (eta1+eta2)/2, (eta2-eta1)/2)
Eigen::Vector3d knot_reparam_forward(const Eigen::Vector3d& original, double gamma);
Eigen::Vector3d knot_reparam_inverse_mean(const Eigen::Vector3d& reparam, double gamma);

// Jacobian of the inverse map at fixed gamma (3x3), or including gamma as a
// fourth coordinate (4x4) for the intrinsic model. Row order of the output
// coordinates is (eta0, eta1, eta2[, gamma]).
Eigen::MatrixXd knot_reparam_inverse_jacobian(const Eigen::VectorXd& reparam_mean, double gamma);

// Delta-method transform of the mean vector and covariance from the
// reparameterized coordinates to the original ones. Accepts 3-dimensional
// input (fixed knot) or 4-dimensional input whose last coordinate is the
// knot itself.
void knot_reparam_inverse(const Eigen::VectorXd& reparam_mean, const Eigen::MatrixXd& reparam_cov,
                          double gamma, Eigen::VectorXd& original_mean,
                          Eigen::MatrixXd& original_cov);

} // namespace nlgrowth
