#pragma once

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <vector>

namespace nlgrowth {

enum class ParamRole {
    FactorMean,
    ShapeMean, // b / c / knot location (population or mean value)
    RelRate,   // nonparametric slope quotients
    CholEntry, // one entry of a covariance block's Cholesky factor
    TicPath,
    TicMean,
    TvcTrait,
    TvcState,
    MedPath,
    Logit
};

// One covariance block. Internally the free values are the entries of a
// lower-triangular Cholesky factor (row-major over the lower triangle), so
// every assembled matrix is positive semidefinite by construction. The
// user-facing view reports the covariance entries themselves.
struct CovBlock {
    std::string name;
    std::vector<std::string> labels;     // one per dimension
    std::vector<std::string> user_names; // one per lower-triangle entry
    int offset = 0;                      // first entry index in the flat vector
    int dim = 0;

    int n_entries() const { return dim * (dim + 1) / 2; }
    // row-major lower-triangle position of (i, j), j <= i
    static int tri_index(int i, int j) { return i * (i + 1) / 2 + j; }
};

struct ParamEntry {
    std::string name; // internal name (Cholesky entries carry an L prefix)
    ParamRole role = ParamRole::FactorMean;
    int block = -1; // CovBlock index for CholEntry
    int row = 0;
    int col = 0;
};

// Names, roles and covariance-block structure of a model's free parameters.
// The layout is fixed once built; values travel separately as a flat vector
// in "internal" coordinates (Cholesky scale for covariance blocks).
class ParameterLayout {
public:
    int add_scalar(const std::string& name, ParamRole role);
    // Adds a covariance block with k(k+1)/2 Cholesky entries. When
    // `user_names` is empty the default "<name>_<li>_<lj>" pattern is used
    // (collapsed to just `name` for 1x1 blocks).
    int add_cov_block(const std::string& name, const std::vector<std::string>& labels,
                      std::vector<std::string> user_names = {});

    int size() const { return static_cast<int>(entries_.size()); }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    const std::vector<CovBlock>& blocks() const { return blocks_; }
    const CovBlock& block(int b) const { return blocks_[static_cast<std::size_t>(b)]; }

    bool has(const std::string& internal_name) const;
    int index_of(const std::string& internal_name) const; // throws on unknown name
    bool is_chol_diag(int i) const;

    // Internal <-> user-facing views. Both have the same length; covariance
    // blocks map L -> (L L^T) entries, everything else passes through.
    std::vector<std::string> user_names() const;
    Eigen::VectorXd to_user(const Eigen::VectorXd& internal) const;
    Eigen::MatrixXd to_user_jacobian(const Eigen::VectorXd& internal) const;

    // Assembled covariance matrix of a block.
    Eigen::MatrixXd cov_matrix(int b, const Eigen::VectorXd& internal) const;
    Eigen::MatrixXd chol_factor(int b, const Eigen::VectorXd& internal) const;
    // Writes the Cholesky factor of `cov` into `internal`; a diagonal floor
    // keeps degenerate sample covariances factorizable.
    void set_cov_matrix(int b, Eigen::MatrixXd cov, Eigen::VectorXd& internal) const;

    // Entries whose block row or column is one of the deviation-factor
    // labels; removing these (plus nothing else) turns an intrinsic layout
    // into the reduced one.
    bool is_deviation_entry(int i, const std::vector<std::string>& dev_labels) const;

private:
    std::vector<ParamEntry> entries_;
    std::vector<CovBlock> blocks_;
    std::unordered_map<std::string, int> index_;
};

} // namespace nlgrowth
