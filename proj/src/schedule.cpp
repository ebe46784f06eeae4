#include "pkit/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pkit {

double NoiseSchedule::posterior_coef_x0(int t) const {
    return beta(t) * std::sqrt(alpha_bar_prev(t)) / (1.0 - alpha_bars[static_cast<size_t>(t)]);
}

double NoiseSchedule::posterior_coef_xt(int t) const {
    return (1.0 - alpha_bar_prev(t)) * std::sqrt(alphas[static_cast<size_t>(t)]) /
           (1.0 - alpha_bars[static_cast<size_t>(t)]);
}

double NoiseSchedule::posterior_variance(int t) const {
    return beta(t) * (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bars[static_cast<size_t>(t)]);
}

void NoiseSchedule::validate() const {
    if (alphas.empty() || alphas.size() != alpha_bars.size()) {
        throw std::invalid_argument("schedule: alphas and alpha_bars must be non-empty and equally long");
    }
    for (size_t t = 0; t < alphas.size(); ++t) {
        if (!(alphas[t] > 0.0 && alphas[t] < 1.0)) {
            throw std::invalid_argument("schedule: alpha[" + std::to_string(t) + "] outside (0, 1)");
        }
        if (t > 0 && !(alpha_bars[t] < alpha_bars[t - 1])) {
            throw std::invalid_argument("schedule: alpha_bars not strictly decreasing at " + std::to_string(t));
        }
    }
}

NoiseSchedule cosine_schedule(int steps) {
    if (steps < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
    constexpr double s = 0.008;
    constexpr double min_alpha = 0.001;
    const auto f = [&](int t) {
        const double c = std::cos((static_cast<double>(t) / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule sched;
    sched.alphas.resize(static_cast<size_t>(steps));
    sched.alpha_bars.resize(static_cast<size_t>(steps));
    double bar = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double alpha = std::max(f(t + 1) / f(t), min_alpha);
        bar *= alpha;
        sched.alphas[static_cast<size_t>(t)] = alpha;
        sched.alpha_bars[static_cast<size_t>(t)] = bar;
    }
    return sched;
}

ad::Matrix q_sample(const ad::Matrix& f0, int t, const ad::Matrix& eps, const NoiseSchedule& sched) {
    if (f0.rows() != eps.rows() || f0.cols() != eps.cols()) throw std::invalid_argument("q_sample: shape mismatch");
    if (t < 0 || t >= sched.steps()) throw std::out_of_range("q_sample: timestep out of range");
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    return std::sqrt(ab) * f0 + std::sqrt(1.0 - ab) * eps;
}

ad::Matrix x0_from_eps(const ad::Matrix& f_t, const ad::Matrix& eps_hat, int t, const NoiseSchedule& sched) {
    if (f_t.rows() != eps_hat.rows() || f_t.cols() != eps_hat.cols()) {
        throw std::invalid_argument("x0_from_eps: shape mismatch");
    }
    if (t < 0 || t >= sched.steps()) throw std::out_of_range("x0_from_eps: timestep out of range");
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    return (f_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

}  // namespace pkit
