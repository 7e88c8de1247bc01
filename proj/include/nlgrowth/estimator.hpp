#pragma once

#include "nlgrowth/fiml.hpp"
#include "nlgrowth/model_builder.hpp"
#include "nlgrowth/rng.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

namespace nlgrowth {

enum class JitterDist { Runif, Rnorm, Rcauchy };

JitterDist jitter_dist_from_name(const std::string& s);
std::string jitter_dist_name(JitterDist d);

struct FitConfig {
    // Explicit starting values by internal parameter name; derived from the
    // data when absent. A partial map overrides the derived entries.
    std::optional<std::map<std::string, double>> starts;
    std::vector<double> res_scale = {0.1};  // residual share of total variance, per process
    std::vector<double> rand_scale = {1.0}; // deviation-factor variance scale, per process
    double rand_cor = 0.0;                  // deviation-to-factor starting correlation
    double joint_cor = 0.0;                 // cross-outcome starting correlation (multivariate)
    int tries = 0;                          // additional jittered attempts
    JitterDist jitter_dist = JitterDist::Runif;
    double loc = 1.0;
    double scale = 0.25;
    std::vector<int> ok_status = {0};
    int max_iterations = 500;
    double grad_tol = 1e-4;
    std::uint64_t seed = 0;
    bool compute_se = true;
    int threads = 0; // 0: hardware default

    double res_scale_for(std::size_t proc) const {
        return res_scale.empty() ? 0.1 : res_scale[std::min(proc, res_scale.size() - 1)];
    }
    double rand_scale_for(std::size_t proc) const {
        return rand_scale.empty() ? 1.0 : rand_scale[std::min(proc, rand_scale.size() - 1)];
    }
};

// Optimizer status codes. The paper's interface fixes 0 as "no error"; the
// remaining taxonomy is this library's.
//   0 converged: gradient max-norm below tolerance
//   1 iteration limit reached
//   2 converged but observed information not positive definite
//   3 objective evaluation / line-search failures exhausted
struct AttemptInfo {
    std::uint64_t start_hash = 0;
    double final_value = std::numeric_limits<double>::quiet_NaN();
    int status = -1;
    int iterations = 0;
};

struct FitResult {
    ModelSpec spec;
    ColumnRoles roles;
    std::vector<std::string> internal_names;
    std::vector<std::string> user_names;
    Eigen::VectorXd internal_estimates;
    Eigen::VectorXd user_estimates;
    std::optional<Eigen::VectorXd> user_se;
    std::optional<Eigen::MatrixXd> user_vcov;
    double minus_two_log_lik = std::numeric_limits<double>::quiet_NaN();
    int status = -1;
    std::vector<AttemptInfo> attempts;
    int n_individuals = 0;
    int n_parameters = 0;
    std::uint64_t data_fingerprint = 0;

    double log_lik() const { return -0.5 * minus_two_log_lik; }
};

// ---- numeric differentiation (central differences) -------------------------

using Objective = std::function<std::optional<double>(const Eigen::VectorXd&)>;

// Per-coordinate step max(1e-6, 1e-6 |x_j|); falls back to a one-sided
// difference when one side fails to evaluate.
std::optional<Eigen::VectorXd> central_gradient(const Objective& f, const Eigen::VectorXd& x,
                                                double fx);
std::optional<Eigen::MatrixXd> central_hessian(const Objective& f, const Eigen::VectorXd& x,
                                               double fx);

// ---- quasi-Newton core ------------------------------------------------------

struct MinimizeOptions {
    int max_iterations = 500;
    double grad_tol = 1e-4;
    int max_halvings = 30; // step halvings per line search before giving up
};

struct MinimizeResult {
    Eigen::VectorXd x;
    double f = std::numeric_limits<double>::quiet_NaN();
    int status = -1; // 0 / 1 / 3 (2 is assigned by fit() from the information matrix)
    int iterations = 0;
    int n_evaluations = 0;
};

MinimizeResult bfgs_minimize(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& opt);

// ---- spec operations --------------------------------------------------------

// Data-driven starting values on the internal (Cholesky) scale.
Eigen::VectorXd derive_starts(const ModelDesign& design, const LongitudinalDataset& data,
                              const FitConfig& cfg);

// One multiplicative perturbation of a start vector; Cholesky diagonals are
// folded back to positive values.
Eigen::VectorXd jitter(const ModelDesign& design, const Eigen::VectorXd& starts,
                       const FitConfig& cfg, Rng& rng);

FitResult fit(const ModelDesign& design, const LongitudinalDataset& data, const FitConfig& cfg);

} // namespace nlgrowth
