#pragma once

#include "nlgrowth/dataset.hpp"
#include "nlgrowth/errors.hpp"
#include "nlgrowth/model_builder.hpp"
#include "nlgrowth/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace testutil {

using namespace nlgrowth;

inline LongitudinalVar var_with_waves(const std::string& name, const std::string& tprefix,
                                      const std::vector<int>& waves) {
    LongitudinalVar lv;
    lv.name = name;
    for (int w : waves) {
        lv.value_cols.push_back(name + std::to_string(w + 1));
        lv.time_cols.push_back(tprefix + std::to_string(w + 1));
        lv.waves.push_back(w);
    }
    return lv;
}

inline ColumnRoles single_roles(const std::string& var, int j) {
    ColumnRoles roles;
    std::vector<int> waves;
    for (int w = 0; w < j; ++w) waves.push_back(w);
    roles.longitudinal.push_back(var_with_waves(var, "T", waves));
    return roles;
}

// Builds a dataset from per-individual {column -> value} maps; absent columns
// are missing cells.
inline LongitudinalDataset make_data(const ColumnRoles& roles,
                                     const std::vector<std::map<std::string, double>>& rows) {
    std::vector<std::string> cols;
    for (const auto& v : roles.longitudinal) {
        for (const auto& c : v.value_cols) cols.push_back(c);
    }
    // shared time columns are de-duplicated
    for (const auto& v : roles.longitudinal)
        for (const auto& c : v.time_cols)
            if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    for (const auto& c : roles.tic_cols) cols.push_back(c);
    for (const auto& c : roles.class_tic_cols) cols.push_back(c);
    // any extra columns mentioned by the rows (baseline predictors)
    for (const auto& r : rows)
        for (const auto& [k, v] : r)
            if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);

    std::vector<IndividualRecord> recs;
    int i = 0;
    for (const auto& r : rows) {
        IndividualRecord rec;
        rec.id = std::to_string(++i);
        rec.values.assign(cols.size(), std::nullopt);
        for (const auto& [k, v] : r) {
            const auto it = std::find(cols.begin(), cols.end(), k);
            rec.values[static_cast<std::size_t>(it - cols.begin())] = v;
        }
        recs.push_back(std::move(rec));
    }
    return LongitudinalDataset(cols, roles, std::move(recs));
}

// One complete individual measured at the given times.
inline LongitudinalDataset one_individual(const ColumnRoles& roles,
                                          const std::vector<double>& times,
                                          double fill_value = 0.0) {
    std::map<std::string, double> row;
    for (const auto& v : roles.longitudinal)
        for (std::size_t j = 0; j < v.value_cols.size(); ++j) {
            row[v.value_cols[j]] = fill_value;
            row[v.time_cols[j]] = times[static_cast<std::size_t>(v.waves[j])];
        }
    for (const auto& c : roles.tic_cols) row[c] = 0.0;
    return make_data(roles, {row});
}

// Internal parameter vector assembled from named scalars and covariance
// blocks (by block name, on the covariance scale).
inline Eigen::VectorXd internal_params(const ParameterLayout& layout,
                                       const std::map<std::string, double>& scalars,
                                       const std::map<std::string, Eigen::MatrixXd>& blocks) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.size());
    for (const auto& [name, value] : scalars) v[layout.index_of(name)] = value;
    for (const auto& [name, cov] : blocks) {
        int found = -1;
        for (std::size_t b = 0; b < layout.blocks().size(); ++b)
            if (layout.blocks()[b].name == name) found = static_cast<int>(b);
        if (found < 0) throw Error("test helper: no covariance block named " + name);
        layout.set_cov_matrix(found, cov, v);
    }
    return v;
}

inline Eigen::MatrixXd cov2(double a, double ab, double b) {
    Eigen::MatrixXd m(2, 2);
    m << a, ab, ab, b;
    return m;
}

inline Eigen::MatrixXd cov1(double a) { return Eigen::MatrixXd::Constant(1, 1, a); }

// Welford-style moment accumulator for Monte Carlo oracles.
struct MomentAccumulator {
    Eigen::VectorXd sum;
    Eigen::MatrixXd sum2;
    long long n = 0;
    explicit MomentAccumulator(int dim)
        : sum(Eigen::VectorXd::Zero(dim)), sum2(Eigen::MatrixXd::Zero(dim, dim)) {}
    void add(const Eigen::VectorXd& x) {
        sum += x;
        sum2 += x * x.transpose();
        ++n;
    }
    Eigen::VectorXd mean() const { return sum / static_cast<double>(n); }
    Eigen::MatrixXd cov() const {
        const Eigen::VectorXd m = mean();
        return sum2 / static_cast<double>(n) - m * m.transpose();
    }
    // z-scores of every mean entry and lower-triangle covariance entry
    // against normal-theory Monte Carlo standard errors
    std::vector<double> z_scores(const Eigen::VectorXd& target_mean,
                                 const Eigen::MatrixXd& target_cov) const {
        std::vector<double> z;
        const Eigen::VectorXd m = mean();
        const Eigen::MatrixXd c = cov();
        for (int i = 0; i < sum.size(); ++i) {
            const double se = std::sqrt(target_cov(i, i) / static_cast<double>(n));
            z.push_back(std::fabs(m[i] - target_mean[i]) / (se + 1e-300));
        }
        for (int i = 0; i < sum.size(); ++i)
            for (int j = 0; j <= i; ++j) {
                const double se = std::sqrt((target_cov(i, i) * target_cov(j, j) +
                                             target_cov(i, j) * target_cov(i, j)) /
                                            static_cast<double>(n));
                z.push_back(std::fabs(c(i, j) - target_cov(i, j)) / (se + 1e-300));
            }
        return z;
    }
    // 3-sigma Monte Carlo tolerance checks against target moments
    bool mean_close(const Eigen::VectorXd& target, const Eigen::MatrixXd& target_cov,
                    double nsig = 3.0) const {
        for (int i = 0; i < sum.size(); ++i) {
            const double se = std::sqrt(target_cov(i, i) / static_cast<double>(n));
            if (std::fabs(mean()[i] - target[i]) > nsig * se + 1e-12) return false;
        }
        return true;
    }
    bool cov_close(const Eigen::MatrixXd& target, double nsig = 3.0) const {
        const Eigen::MatrixXd c = cov();
        for (int i = 0; i < sum.size(); ++i)
            for (int j = 0; j <= i; ++j) {
                const double se = std::sqrt(
                    (target(i, i) * target(j, j) + target(i, j) * target(i, j)) /
                    static_cast<double>(n));
                if (std::fabs(c(i, j) - target(i, j)) > nsig * se + 1e-12) return false;
            }
        return true;
    }
};

} // namespace testutil
