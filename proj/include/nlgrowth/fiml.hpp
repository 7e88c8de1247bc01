#pragma once

#include "nlgrowth/model_builder.hpp"

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nlgrowth {

// -2 ln L together with each individual's contribution. For mixtures,
// `log_joint(i, g)` holds log pi_g(x_i) + log density of individual i under
// class g, the ingredients of both the objective and the posterior matrix.
struct ObjectiveValue {
    double minus_two_log_lik = 0.0;
    std::vector<double> per_individual;
    Eigen::MatrixXd log_joint;
};

// Reusable evaluation context: resolved individual data plus per-thread
// workspaces. Individuals are independent, so contributions are computed in
// parallel and then reduced with compensated summation in index order; the
// result does not depend on the thread count.
class FimlEvaluator {
public:
    FimlEvaluator(const ModelDesign& design, std::vector<IndividualData> individuals,
                  int threads = 0);

    const ModelDesign& design() const { return design_; }
    const std::vector<IndividualData>& individuals() const { return individuals_; }
    int n_individuals() const { return static_cast<int>(individuals_.size()); }

    // Returns nothing when some individual's implied covariance is not
    // positive definite (or a structural matrix is singular); the failing
    // individual/class is kept for diagnostics.
    std::optional<ObjectiveValue> try_evaluate(const Eigen::VectorXd& master_internal) const;
    // Throwing variant used by the public operations.
    ObjectiveValue evaluate(const Eigen::VectorXd& master_internal) const;

    const std::string& last_failure_id() const { return fail_id_; }
    double last_failure_pivot() const { return fail_pivot_; }
    int last_failure_class() const { return fail_class_; }

private:
    struct Workspace;
    bool contribution(const Eigen::VectorXd& class_internal, const IndividualData& ind,
                      Workspace& ws, double& out, double& min_pivot) const;

    const ModelDesign& design_;
    std::vector<IndividualData> individuals_;
    int threads_ = 1;
    mutable std::vector<std::shared_ptr<Workspace>> workspaces_;
    mutable std::string fail_id_;
    mutable double fail_pivot_ = 0.0;
    mutable int fail_class_ = -1;
};

// Single-group FIML function value (-2 ln L) with per-individual filtering of
// missing entries. Individuals with no observed entries contribute zero.
ObjectiveValue neg2ll_single(const ModelDesign& design, const Eigen::VectorXd& internal,
                             const LongitudinalDataset& data);

// Class-weighted mixture objective evaluated through log-sum-exp.
ObjectiveValue neg2ll_mixture(const ModelDesign& design, const Eigen::VectorXd& master_internal,
                              const LongitudinalDataset& data);

} // namespace nlgrowth
