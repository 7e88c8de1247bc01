#include "nlgrowth/parameters.hpp"

#include "nlgrowth/errors.hpp"
#include "nlgrowth/stats.hpp"

#include <algorithm>
#include <cmath>

namespace nlgrowth {

int ParameterLayout::add_scalar(const std::string& name, ParamRole role) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    ParamEntry e;
    e.name = name;
    e.role = role;
    const int idx = size();
    index_[name] = idx;
    entries_.push_back(std::move(e));
    return idx;
}

int ParameterLayout::add_cov_block(const std::string& name, const std::vector<std::string>& labels,
                                   std::vector<std::string> user_names) {
    CovBlock b;
    b.name = name;
    b.labels = labels;
    b.dim = static_cast<int>(labels.size());
    b.offset = size();
    if (user_names.empty()) {
        for (int i = 0; i < b.dim; ++i)
            for (int j = 0; j <= i; ++j) {
                if (b.dim == 1)
                    user_names.push_back(name);
                else
                    user_names.push_back(name + "_" + labels[static_cast<std::size_t>(j)] + "_" +
                                         labels[static_cast<std::size_t>(i)]);
            }
    }
    if (static_cast<int>(user_names.size()) != b.n_entries())
        throw Error("cov block '" + name + "': user name count mismatch");
    b.user_names = std::move(user_names);

    const int block_id = static_cast<int>(blocks_.size());
    for (int i = 0; i < b.dim; ++i)
        for (int j = 0; j <= i; ++j) {
            ParamEntry e;
            e.name = "L." + name + "." + std::to_string(i) + "." + std::to_string(j);
            e.role = ParamRole::CholEntry;
            e.block = block_id;
            e.row = i;
            e.col = j;
            if (index_.count(e.name)) throw Error("duplicate parameter name: " + e.name);
            index_[e.name] = size();
            entries_.push_back(std::move(e));
        }
    blocks_.push_back(std::move(b));
    return block_id;
}

bool ParameterLayout::has(const std::string& name) const { return index_.count(name) > 0; }

int ParameterLayout::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

bool ParameterLayout::is_chol_diag(int i) const {
    const auto& e = entries_[static_cast<std::size_t>(i)];
    return e.role == ParamRole::CholEntry && e.row == e.col;
}

std::vector<std::string> ParameterLayout::user_names() const {
    std::vector<std::string> out(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (e.role == ParamRole::CholEntry) {
            const auto& b = blocks_[static_cast<std::size_t>(e.block)];
            out[i] = b.user_names[static_cast<std::size_t>(CovBlock::tri_index(e.row, e.col))];
        } else {
            out[i] = e.name;
        }
    }
    return out;
}

Eigen::MatrixXd ParameterLayout::chol_factor(int bi, const Eigen::VectorXd& internal) const {
    const auto& b = blocks_[static_cast<std::size_t>(bi)];
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(b.dim, b.dim);
    int k = b.offset;
    for (int i = 0; i < b.dim; ++i)
        for (int j = 0; j <= i; ++j) l(i, j) = internal[k++];
    return l;
}

Eigen::MatrixXd ParameterLayout::cov_matrix(int bi, const Eigen::VectorXd& internal) const {
    const Eigen::MatrixXd l = chol_factor(bi, internal);
    return l * l.transpose();
}

void ParameterLayout::set_cov_matrix(int bi, Eigen::MatrixXd cov, Eigen::VectorXd& internal) const {
    const auto& b = blocks_[static_cast<std::size_t>(bi)];
    if (cov.rows() != b.dim || cov.cols() != b.dim)
        throw Error("cov block '" + b.name + "': matrix dimension mismatch");
    const double floor = std::max(1e-8, 1e-8 * cov.diagonal().maxCoeff());
    Eigen::MatrixXd l;
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
        const double bump = attempt == 0 ? 0.0 : floor * std::pow(2.0, attempt - 1);
        ok = psd_cholesky(cov + Eigen::MatrixXd::Identity(b.dim, b.dim) * bump, l);
    }
    if (!ok) throw Error("cov block '" + b.name + "': not factorizable");
    int k = b.offset;
    for (int i = 0; i < b.dim; ++i)
        for (int j = 0; j <= i; ++j) internal[k++] = l(i, j);
}

Eigen::VectorXd ParameterLayout::to_user(const Eigen::VectorXd& internal) const {
    Eigen::VectorXd out = internal;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        const auto& b = blocks_[bi];
        const Eigen::MatrixXd cov = cov_matrix(static_cast<int>(bi), internal);
        int k = b.offset;
        for (int i = 0; i < b.dim; ++i)
            for (int j = 0; j <= i; ++j) out[k++] = cov(i, j);
    }
    return out;
}

Eigen::MatrixXd ParameterLayout::to_user_jacobian(const Eigen::VectorXd& internal) const {
    // The map is identity except cov blocks, whose Jacobian is analytic:
    // d(L L^T)_{ij} / dL_{rc} = delta_{ir} L_{jc} + delta_{jr} L_{ic}.
    const int n = size();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        const auto& b = blocks_[bi];
        const Eigen::MatrixXd l = chol_factor(static_cast<int>(bi), internal);
        for (int i = 0; i < b.dim; ++i)
            for (int j = 0; j <= i; ++j) {
                const int out_idx = b.offset + CovBlock::tri_index(i, j);
                for (int r = 0; r < b.dim; ++r)
                    for (int c = 0; c <= r; ++c) {
                        const int in_idx = b.offset + CovBlock::tri_index(r, c);
                        double d = 0.0;
                        if (i == r) d += l(j, c);
                        if (j == r) d += l(i, c);
                        jac(out_idx, in_idx) = d;
                    }
            }
    }
    return jac;
}

bool ParameterLayout::is_deviation_entry(int i, const std::vector<std::string>& dev_labels) const {
    const auto& e = entries_[static_cast<std::size_t>(i)];
    if (e.role != ParamRole::CholEntry) return false;
    const auto& b = blocks_[static_cast<std::size_t>(e.block)];
    const auto is_dev = [&](const std::string& l) {
        return std::find(dev_labels.begin(), dev_labels.end(), l) != dev_labels.end();
    };
    return is_dev(b.labels[static_cast<std::size_t>(e.row)]) ||
           is_dev(b.labels[static_cast<std::size_t>(e.col)]);
}

} // namespace nlgrowth
