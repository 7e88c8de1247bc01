#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace nlgrowth {

// Kahan compensated summation over a fixed index order; the reduction is
// insensitive (beyond ~1e-16 relative) to how the terms were produced.
double kahan_sum(const std::vector<double>& terms);

// Upper-tail probability of the chi-square distribution with df degrees of
// freedom: P(X > x). df == 0 returns 0 for x > 0 and 1 at x == 0.
double chi_square_sf(double x, int df);

// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);

// In-place lower Cholesky of a symmetric matrix. Returns false when a pivot
// falls below `pivot_tol`; `min_pivot` reports the smallest pivot seen.
bool cholesky_lower(Eigen::MatrixXd& a, double pivot_tol, double& min_pivot);

// Lower-triangular factor of a positive semidefinite matrix; zero pivots get
// zero columns. Returns false when the matrix is indefinite (beyond a small
// tolerance) or couples a zero-variance row to other rows.
bool psd_cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& l);

// log(sum(exp(v))) without overflow.
double log_sum_exp(const Eigen::VectorXd& v);

// FNV-1a over raw bytes; used for start-vector hashes and data fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL);

} // namespace nlgrowth
