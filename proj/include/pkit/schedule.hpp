#pragma once

#include "pkit/autodiff.hpp"

#include <vector>

namespace pkit {

// Per-step constants of a discrete DDPM forward process. Index t runs over
// 0..T-1; alpha_bars[t] is the signal fraction after t + 1 noising steps.
struct NoiseSchedule {
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    int steps() const { return static_cast<int>(alphas.size()); }
    double beta(int t) const { return 1.0 - alphas[static_cast<size_t>(t)]; }
    double alpha_bar_prev(int t) const { return t == 0 ? 1.0 : alpha_bars[static_cast<size_t>(t - 1)]; }

    // Posterior q(x_{t-1} | x_t, x_0) = N(c0 x_0 + ct x_t, variance).
    double posterior_coef_x0(int t) const;
    double posterior_coef_xt(int t) const;
    double posterior_variance(int t) const;

    void validate() const;
};

// alpha_bar(t) = f(t) / f(0), f(t) = cos^2(((t/T + s) / (1 + s)) pi/2),
// s = 0.008, with each per-step alpha clipped to >= 0.001.
NoiseSchedule cosine_schedule(int steps);

// sqrt(alpha_bar_t) f0 + sqrt(1 - alpha_bar_t) eps.
ad::Matrix q_sample(const ad::Matrix& f0, int t, const ad::Matrix& eps, const NoiseSchedule& sched);

// Inverts q_sample for f0 given a noise estimate.
ad::Matrix x0_from_eps(const ad::Matrix& f_t, const ad::Matrix& eps_hat, int t, const NoiseSchedule& sched);

}  // namespace pkit
