#pragma once

#include "nlgrowth/dataset.hpp"
#include "nlgrowth/model_spec.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nlgrowth {

// Generative configuration. True parameters are given by the fitted model's
// own parameter names on the user-facing scale (covariances, not Cholesky
// entries); missing path/effect entries default to zero.
//
// One deliberate exception: for bilinear-spline trajectory models the means
// and covariance entries are interpreted in the ORIGINAL coordinates
// (intercept, first slope, second slope) plus the knot, because the exact
// generative curves are defined there. "psi_*_dev" entries then describe the
// individual knot's (co)variances; "mu_gamma" its mean. The fitted model's
// reparameterized truth follows by the forward knot map.
//
// The simulator draws each individual's growth factors (and rate ratio /
// acceleration ratio / knot where intrinsic) jointly multivariate normal,
// evaluates the exact (non-linearized) trajectories at individually jittered
// occasions, and adds normal residuals. Draws violating admissibility
// (b <= 0, c >= 0, or a knot outside the individual's time range) are
// redrawn; the redraw share is reported.
struct SimConfig {
    ModelSpec spec;
    int n = 100;
    std::vector<double> waves;               // global wave times
    std::vector<std::vector<int>> wave_sets; // per-process wave subsets (default: all waves)
    double jitter_window = 0.0;              // occasion = wave + U(-w, w)
    std::vector<double> missing_rates;       // per wave (scalar broadcast); outcomes only
    std::uint64_t seed = 1;
    std::map<std::string, double> truth;
    std::string time_prefix = "T";
    std::string id_col = "id";

    double missing_rate_at(std::size_t wave) const {
        if (missing_rates.empty()) return 0.0;
        return missing_rates[std::min(wave, missing_rates.size() - 1)];
    }
};

struct SimResult {
    LongitudinalDataset data;
    double truncation_rate = 0.0;  // share of redrawn latent vectors
    std::vector<int> class_labels; // mixtures: generating class per individual (0-based)
};

SimResult simulate(const SimConfig& cfg);

} // namespace nlgrowth
