#include "nlgrowth/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nlgrowth {

double kahan_sum(const std::vector<double>& terms) {
    double sum = 0.0, c = 0.0;
    for (double t : terms) {
        const double y = t - c;
        const double s = sum + y;
        c = (s - sum) - y;
        sum = s;
    }
    return sum;
}

namespace {

// Series expansion of P(a, x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
    const double gln = std::lgamma(a);
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
}

// Continued fraction for Q(a, x), valid for x >= a + 1.
double gamma_q_contfrac(double a, double x) {
    const double gln = std::lgamma(a);
    const double tiny = std::numeric_limits<double>::min() / 1e-30;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

} // namespace

double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_contfrac(a, x);
}

double chi_square_sf(double x, int df) {
    if (df < 0) throw std::invalid_argument("chi_square_sf: negative df");
    if (df == 0) return x <= 0.0 ? 1.0 : 0.0;
    if (x <= 0.0) return 1.0;
    return gamma_q(0.5 * df, 0.5 * x);
}

bool cholesky_lower(Eigen::MatrixXd& a, double pivot_tol, double& min_pivot) {
    const Eigen::Index n = a.rows();
    min_pivot = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = a(j, j);
        for (Eigen::Index k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (d < min_pivot) min_pivot = d;
        if (!(d > pivot_tol)) return false;
        const double l = std::sqrt(d);
        a(j, j) = l;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / l;
        }
    }
    // zero the strict upper triangle so the factor can be used directly
    for (Eigen::Index j = 1; j < n; ++j)
        for (Eigen::Index i = 0; i < j; ++i) a(i, j) = 0.0;
    return true;
}

bool psd_cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& l) {
    const int n = static_cast<int>(a.rows());
    const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
    const double tol = 1e-12 * scale;
    l = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double d = a(j, j);
        for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (d < -tol) return false;
        l(j, j) = d > tol ? std::sqrt(d) : 0.0;
        for (int i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (l(j, j) > 0.0) {
                l(i, j) = s / l(j, j);
            } else if (std::fabs(s) > 1e-8 * scale) {
                return false; // nonzero coupling with a zero-variance row
            }
        }
    }
    return true;
}

double log_sum_exp(const Eigen::VectorXd& v) {
    if (v.size() == 0) return -std::numeric_limits<double>::infinity();
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace nlgrowth
