#pragma once

#include "nlgrowth/estimator.hpp"
#include "nlgrowth/model_builder.hpp"

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace nlgrowth {

// One derived (non-estimable) parameter: a function of the free parameters
// with a delta-method standard error.
struct DerivedParam {
    std::string name;
    double estimate = 0.0;
    double se = std::numeric_limits<double>::quiet_NaN();
};

struct DerivedParamTable {
    std::vector<DerivedParam> rows;
};

// Emits, where the model defines them:
//  - original-coordinate growth-factor means/covariances for bilinear-spline
//    models (by the inverse knot map),
//  - marginal and conditional growth-factor moments for models with TICs,
//  - indirect and total effects for mediation models.
DerivedParamTable derived_params(const FitResult& fit, const ModelDesign& design);

struct LrtResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
};

// Likelihood ratio test of a reduced model nested in a full one (checked by
// parameter-name subset). A boundary caveat applies when the comparison
// fixes a variance at zero; the naive chi-square tail is reported.
LrtResult lrt(const FitResult& full, const FitResult& reduced);

struct FactorScores {
    std::vector<std::string> labels;
    Eigen::MatrixXd scores;                  // N x n_factors
    std::vector<Eigen::MatrixXd> score_cov;  // per individual
    std::vector<int> modal_class;            // 0-based; empty unless mixture
};

// Regression-method (empirical Bayes) factor scores; mixture fits score each
// individual under their modal class.
FactorScores factor_scores(const FitResult& fit, const ModelDesign& design,
                           const LongitudinalDataset& data);

struct PosteriorMatrix {
    Eigen::MatrixXd prob;    // N x G, rows sum to one
    std::vector<int> modal;  // 0-based, ties toward the lower class
};

PosteriorMatrix posterior_classify(const FitResult& fit, const ModelDesign& design,
                                   const LongitudinalDataset& data);

struct CriteriaEntry {
    std::string label;
    const FitResult* fit = nullptr;
    const PosteriorMatrix* posterior = nullptr; // null for single-group fits
};

struct CriteriaRow {
    std::string label;
    double log_lik = 0.0;
    int n_params = 0;
    double bic = 0.0;
    std::vector<double> class_proportions;
};

// Enumeration summary: log-likelihood, parameter count, BIC (with N = number
// of individuals), and posterior class proportions.
std::vector<CriteriaRow> criteria_table(const std::vector<CriteriaEntry>& entries);

} // namespace nlgrowth
