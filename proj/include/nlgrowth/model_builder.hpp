#pragma once

#include "nlgrowth/dataset.hpp"
#include "nlgrowth/model_spec.hpp"
#include "nlgrowth/parameters.hpp"

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace nlgrowth {

// Per-individual structural matrices in path (RAM) form. Nodes are ordered
// observed-first; the observed filter F selects the first n_obs nodes.
// Model expectations follow from
//   mu    = F (I - A)^{-1} M + nu
//   Sigma = F (I - A)^{-1} S (I - A)^{-T} F^T
struct StructuralMatrices {
    int n_nodes = 0;
    int n_obs = 0;
    Eigen::MatrixXd paths;    // A: directed paths, column -> row
    Eigen::MatrixXd exo_cov;  // S: exogenous (co)variances
    Eigen::VectorXd node_mean;  // M
    Eigen::VectorXd obs_offset; // nu, over observed nodes
    std::vector<std::string> node_names;
    std::vector<int> factor_nodes; // latent growth-factor node indices
    std::vector<std::string> factor_labels;
};

struct ImpliedMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// mu / Sigma over the given observed-node subset (indices into [0, n_obs)).
ImpliedMoments implied_moments(const StructuralMatrices& sm, const std::vector<int>& present_nodes);

// One latent process (an outcome trajectory or a decomposed covariate).
struct ProcessDesign {
    std::string var;  // dataset variable
    std::string tag;  // name suffix; empty for single-process models
    FunctionalForm form;
    bool lcsm = false;           // accumulated-change loadings
    bool mediation_param = false; // bilinear (min, 1, max) parameterization
    int n_waves = 0;
    int K = 0; // base factor count
    std::vector<std::string> factor_labels; // K (+ "dev")

    std::vector<int> mean_idx; // class-layout indices, K entries
    int shape_idx = -1;
    std::vector<int> rel_rate_idx; // free slope quotients (intervals 2..J-1)

    int first_obs_node = 0;
    int first_factor_node = 0;
    int theta_block = -1;
    int theta_row = 0;
    bool requires_grid_cache = false; // interval loadings (or TVC state weights) need full times

    int n_factors() const { return K + (form.intrinsic ? 1 : 0); }
    bool needs_time_grid() const {
        return lcsm || form.kind == CurveKind::Nonparametric;
    }
};

// Everything the likelihood needs from one record, resolved against the
// design once so that objective evaluations touch no string lookups.
struct IndividualData {
    std::string id;
    struct ProcData {
        std::vector<int> obs_rows;  // observed wave positions (0-based, local)
        std::vector<double> times;  // full wave grid; NaN where missing
    };
    std::vector<ProcData> procs;
    std::vector<double> tvc_values; // type-0 covariate values per wave (NaN missing)
    Eigen::VectorXd class_tics;
    std::vector<int> present_nodes; // observed node indices with data, node order
    Eigen::VectorXd omega;          // values aligned with present_nodes
};

// Compiled form of a ModelSpec against a dataset's column roles: parameter
// layout, node numbering, and the index maps used to assemble per-individual
// structural matrices.
class ModelDesign {
public:
    ModelDesign(ModelSpec spec, const ColumnRoles& roles);

    const ModelSpec& spec() const { return spec_; }
    const ColumnRoles& roles() const { return roles_; }
    const ParameterLayout& layout() const { return master_layout_; }
    const ParameterLayout& class_layout() const { return class_layout_; }
    const std::vector<ProcessDesign>& procs() const { return procs_; }

    int n_classes() const { return n_classes_; }
    bool is_mixture() const { return n_classes_ > 1; }
    int n_obs_nodes() const { return n_obs_nodes_; }
    int n_nodes() const { return n_nodes_; }
    const std::vector<std::string>& node_names() const { return node_names_; }
    const std::vector<std::string>& deviation_labels() const { return dev_labels_; }

    // Master-vector slice holding class g's parameters (0-based class).
    Eigen::VectorXd class_slice(const Eigen::VectorXd& master_internal, int g) const;
    const std::vector<std::vector<int>>& class_param_map() const { return class_param_map_; }

    // Log class-membership probabilities (length G); uses the multinomial
    // logistic form with class 1 as reference when class TICs are declared,
    // otherwise the softmax of free logits with the class-1 logit fixed at 0.
    Eigen::VectorXd class_log_probs(const Eigen::VectorXd& master_internal,
                                    const IndividualData& ind) const;

    IndividualData prepare(const LongitudinalDataset& data, const IndividualRecord& rec) const;
    std::vector<IndividualData> prepare_all(const LongitudinalDataset& data) const;

    StructuralMatrices make_structural() const; // empty, sized shell
    void build_structural(const Eigen::VectorXd& class_internal, const IndividualData& ind,
                          StructuralMatrices& sm) const;

    // Index helpers used by start derivation and post-fit computations.
    int tic_count() const { return static_cast<int>(tic_names_.size()); }
    const std::vector<std::string>& tic_names() const { return tic_names_; }
    const std::vector<int>& tic_mean_idx() const { return tic_mean_idx_; }
    int tic_phi_block() const { return tic_phi_block_; }
    // B_TIC entry index for (factor f of the regressed process, tic m)
    int tic_path_idx(int factor, int tic) const { return tic_path_idx_[factor][tic]; }
    int regressed_proc() const { return regressed_proc_; }
    const std::vector<int>& psi_block_of_proc() const { return psi_block_of_proc_; }
    int kappa_idx() const { return kappa_idx_; }
    const std::vector<int>& tvc_trait_idx() const { return tvc_trait_idx_; }
    struct MedPath {
        int src_proc;      // -1 for the baseline predictor
        int src_factor;    // local factor index (0 when baseline)
        int dst_proc;
        int dst_factor;
        int param_idx;     // -1 when the path is disabled
        std::string name;
    };
    const std::vector<MedPath>& mediation_paths() const { return med_paths_; }
    int baseline_x_node() const { return baseline_x_node_; }
    int baseline_x_mean_idx() const { return baseline_x_mean_idx_; }
    int baseline_x_var_block() const { return baseline_x_var_block_; }
    const std::vector<std::pair<int, int>>& mgm_shared_rows() const { return mgm_shared_rows_; }
    const std::vector<int>& logit_intercept_idx() const { return logit_intercept_idx_; }
    const std::vector<std::vector<int>>& logit_coef_idx() const { return logit_coef_idx_; }

private:
    void build_processes();
    void build_class_layout();
    void build_master_layout();
    void build_nodes();
    void fill_loadings(const Eigen::VectorXd& internal, const IndividualData& ind,
                       StructuralMatrices& sm) const;

    ModelSpec spec_;
    ModelSpec class_spec_; // spec without the mixture wrapper
    ColumnRoles roles_;
    std::vector<ProcessDesign> procs_;
    ParameterLayout class_layout_;
    ParameterLayout master_layout_;
    int n_classes_ = 1;
    std::vector<std::vector<int>> class_param_map_;
    std::vector<int> logit_intercept_idx_;       // per class 2..G, master indices
    std::vector<std::vector<int>> logit_coef_idx_;

    int n_obs_nodes_ = 0;
    int n_nodes_ = 0;
    std::vector<std::string> node_names_;
    std::vector<std::string> dev_labels_;

    std::vector<int> psi_block_of_proc_;
    std::vector<std::string> tic_names_;
    std::vector<int> tic_nodes_;
    std::vector<int> tic_mean_idx_;
    int tic_phi_block_ = -1;
    std::vector<std::vector<int>> tic_path_idx_;
    int regressed_proc_ = 0;

    int kappa_idx_ = -1;
    std::vector<int> tvc_trait_idx_;

    std::vector<MedPath> med_paths_;
    int baseline_x_node_ = -1;
    int baseline_x_mean_idx_ = -1;
    int baseline_x_var_block_ = -1;

    std::vector<std::pair<int, int>> mgm_shared_rows_; // (local row in proc0, local row in proc1)
};

// ---- spec-level operations -------------------------------------------------

// Structural matrices for one individual at the given (class-level) internal
// parameter vector.
StructuralMatrices build_structural(const ModelDesign& design, const Eigen::VectorXd& internal,
                                    const LongitudinalDataset& data, const IndividualRecord& rec);

// Class-g submodel of a mixture: its spec plus the class parameter slice.
std::pair<ModelSpec, Eigen::VectorXd> class_submodel(const ModelDesign& design,
                                                     const Eigen::VectorXd& master_internal,
                                                     int g /* 1-based */);

// Membership probabilities from raw logit coefficients. `x` may be empty for
// the unconditional case; `intercepts` has G-1 entries (classes 2..G) and
// `coefs` one row per free class.
Eigen::VectorXd class_probabilities(const Eigen::VectorXd& intercepts, const Eigen::MatrixXd& coefs,
                                    const Eigen::VectorXd& x, int n_classes);

} // namespace nlgrowth
