#include "nlgrowth/fiml.hpp"

#include "nlgrowth/errors.hpp"
#include "nlgrowth/stats.hpp"

#include <atomic>
#include <cmath>
#include <memory>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nlgrowth {

namespace {
constexpr double kLn2Pi = 1.8378770664093454836;
constexpr double kPivotTol = 1e-12;
} // namespace

struct FimlEvaluator::Workspace {
    StructuralMatrices sm;
    Eigen::MatrixXd ima, tmat, ts, sig_full;
    Eigen::VectorXd mu_full;
    Eigen::MatrixXd sig; // masked covariance scratch, max_obs x max_obs
    Eigen::VectorXd mu, z;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    bool failed = false;
    double pivot = 0.0;
    int fail_class = -1;
    int fail_index = -1;

    explicit Workspace(const ModelDesign& d) : lu(d.n_nodes()) {
        sm = d.make_structural();
        const int n = d.n_nodes();
        const int p = d.n_obs_nodes();
        ima.resize(n, n);
        tmat.resize(n, n);
        ts.resize(n, n);
        sig_full.resize(n, n);
        mu_full.resize(n);
        sig.resize(p, p);
        mu.resize(p);
        z.resize(p);
    }
};

FimlEvaluator::FimlEvaluator(const ModelDesign& design, std::vector<IndividualData> individuals,
                             int threads)
    : design_(design), individuals_(std::move(individuals)) {
#ifdef _OPENMP
    threads_ = threads > 0 ? threads : omp_get_max_threads();
#else
    threads_ = 1;
    (void)threads;
#endif
    workspaces_.reserve(static_cast<std::size_t>(threads_));
    for (int t = 0; t < threads_; ++t) workspaces_.push_back(std::make_shared<Workspace>(design_));
}

// One individual's -2 ln L contribution for a single class. Returns false on
// a non-positive-definite implied covariance or a singular (I - A).
bool FimlEvaluator::contribution(const Eigen::VectorXd& v, const IndividualData& ind,
                                 Workspace& ws, double& out, double& min_pivot) const {
    const int p = static_cast<int>(ind.present_nodes.size());
    out = 0.0;
    min_pivot = 0.0;
    if (p == 0) return true;

    design_.build_structural(v, ind, ws.sm);
    const int n = ws.sm.n_nodes;
    ws.ima = -ws.sm.paths;
    ws.ima.diagonal().array() += 1.0;
    ws.lu.compute(ws.ima);
    const auto udiag = ws.lu.matrixLU().diagonal().cwiseAbs();
    const double umax = udiag.maxCoeff();
    if (!(umax > 0.0) || !(udiag.minCoeff() / umax > 1e-12) || !udiag.allFinite()) {
        min_pivot = 0.0;
        return false;
    }
    ws.tmat.noalias() = ws.lu.inverse();
    ws.mu_full.noalias() = ws.tmat * ws.sm.node_mean;
    ws.ts.noalias() = ws.tmat * ws.sm.exo_cov;
    ws.sig_full.noalias() = ws.ts * ws.tmat.transpose();
    (void)n;

    for (int i = 0; i < p; ++i) {
        const int gi = ind.present_nodes[static_cast<std::size_t>(i)];
        ws.mu[i] = ws.mu_full[gi] + ws.sm.obs_offset[gi];
        for (int j = 0; j <= i; ++j)
            ws.sig(i, j) = ws.sig_full(gi, ind.present_nodes[static_cast<std::size_t>(j)]);
    }

    // in-place Cholesky of the leading p x p block (lower triangle filled)
    double logdet = 0.0;
    min_pivot = std::numeric_limits<double>::infinity();
    for (int j = 0; j < p; ++j) {
        double d = ws.sig(j, j);
        for (int k = 0; k < j; ++k) d -= ws.sig(j, k) * ws.sig(j, k);
        if (d < min_pivot) min_pivot = d;
        if (!(d > kPivotTol) || !std::isfinite(d)) return false;
        const double l = std::sqrt(d);
        logdet += std::log(l);
        ws.sig(j, j) = l;
        for (int i = j + 1; i < p; ++i) {
            double s = ws.sig(i, j);
            for (int k = 0; k < j; ++k) s -= ws.sig(i, k) * ws.sig(j, k);
            ws.sig(i, j) = s / l;
        }
    }
    // forward solve L z = omega - mu
    double quad = 0.0;
    for (int i = 0; i < p; ++i) {
        double s = ind.omega[i] - ws.mu[i];
        for (int k = 0; k < i; ++k) s -= ws.sig(i, k) * ws.z[k];
        ws.z[i] = s / ws.sig(i, i);
        quad += ws.z[i] * ws.z[i];
    }
    out = p * kLn2Pi + 2.0 * logdet + quad;
    return std::isfinite(out);
}

std::optional<ObjectiveValue> FimlEvaluator::try_evaluate(const Eigen::VectorXd& master) const {
    if (master.size() != design_.layout().size())
        throw IncompleteParameterSet("parameter vector length " + std::to_string(master.size()) +
                                     " does not match layout size " +
                                     std::to_string(design_.layout().size()));
    const int n = n_individuals();
    const int g_count = design_.n_classes();
    if (!master.allFinite()) {
        fail_id_ = "(non-finite parameter vector)";
        fail_pivot_ = 0.0;
        fail_class_ = -1;
        return std::nullopt;
    }
    ObjectiveValue obj;
    obj.per_individual.assign(static_cast<std::size_t>(n), 0.0);
    if (g_count > 1) obj.log_joint.resize(n, g_count);

    std::vector<Eigen::VectorXd> slices;
    slices.reserve(static_cast<std::size_t>(g_count));
    for (int g = 0; g < g_count; ++g) slices.push_back(design_.class_slice(master, g));
    for (auto& w : workspaces_) {
        w->failed = false;
        w->fail_index = -1;
    }

    std::atomic<bool> any_fail{false};

#pragma omp parallel for schedule(static) num_threads(threads_)
    for (int i = 0; i < n; ++i) {
#ifdef _OPENMP
        Workspace& ws = *workspaces_[static_cast<std::size_t>(omp_get_thread_num())];
#else
        Workspace& ws = *workspaces_[0];
#endif
        if (any_fail.load(std::memory_order_relaxed)) continue;
        const IndividualData& ind = individuals_[static_cast<std::size_t>(i)];
        if (g_count == 1) {
            double c = 0.0, pivot = 0.0;
            if (!contribution(slices[0], ind, ws, c, pivot)) {
                if (!ws.failed) {
                    ws.failed = true;
                    ws.pivot = pivot;
                    ws.fail_class = -1;
                    ws.fail_index = i;
                }
                any_fail.store(true, std::memory_order_relaxed);
                continue;
            }
            obj.per_individual[static_cast<std::size_t>(i)] = c;
        } else {
            const Eigen::VectorXd log_pi = design_.class_log_probs(master, ind);
            Eigen::VectorXd lj(g_count);
            bool ok = true;
            for (int g = 0; g < g_count && ok; ++g) {
                double c = 0.0, pivot = 0.0;
                if (!contribution(slices[static_cast<std::size_t>(g)], ind, ws, c, pivot)) {
                    if (!ws.failed) {
                        ws.failed = true;
                        ws.pivot = pivot;
                        ws.fail_class = g;
                        ws.fail_index = i;
                    }
                    any_fail.store(true, std::memory_order_relaxed);
                    ok = false;
                    break;
                }
                lj[g] = log_pi[g] - 0.5 * c;
            }
            if (!ok) continue;
            obj.log_joint.row(i) = lj;
            obj.per_individual[static_cast<std::size_t>(i)] = -2.0 * log_sum_exp(lj);
        }
    }

    if (any_fail.load()) {
        // deterministic diagnostics: report the lowest failing index
        int best = -1;
        for (const auto& w : workspaces_) {
            if (!w->failed) continue;
            if (best < 0 || w->fail_index < best) {
                best = w->fail_index;
                fail_id_ = individuals_[static_cast<std::size_t>(w->fail_index)].id;
                fail_pivot_ = w->pivot;
                fail_class_ = w->fail_class;
            }
        }
        return std::nullopt;
    }
    obj.minus_two_log_lik = kahan_sum(obj.per_individual);
    return obj;
}

ObjectiveValue FimlEvaluator::evaluate(const Eigen::VectorXd& master) const {
    auto r = try_evaluate(master);
    if (!r) {
        // sequential rescan so the reported individual does not depend on
        // thread scheduling
        Workspace& ws = *workspaces_[0];
        for (int i = 0; i < n_individuals(); ++i) {
            const IndividualData& ind = individuals_[static_cast<std::size_t>(i)];
            for (int g = 0; g < design_.n_classes(); ++g) {
                double c = 0.0, pivot = 0.0;
                if (!contribution(design_.class_slice(master, g), ind, ws, c, pivot))
                    throw NonPDImpliedCovariance(ind.id, pivot,
                                                 design_.n_classes() > 1 ? g : -1);
            }
        }
        throw NonPDImpliedCovariance(fail_id_, fail_pivot_, fail_class_);
    }
    return *r;
}

ObjectiveValue neg2ll_single(const ModelDesign& design, const Eigen::VectorXd& internal,
                             const LongitudinalDataset& data) {
    if (design.is_mixture()) throw Error("neg2ll_single called with a mixture design");
    FimlEvaluator ev(design, design.prepare_all(data));
    return ev.evaluate(internal);
}

ObjectiveValue neg2ll_mixture(const ModelDesign& design, const Eigen::VectorXd& master,
                              const LongitudinalDataset& data) {
    if (!design.is_mixture()) throw Error("neg2ll_mixture needs a mixture design");
    FimlEvaluator ev(design, design.prepare_all(data));
    return ev.evaluate(master);
}

} // namespace nlgrowth
