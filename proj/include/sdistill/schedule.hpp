#pragma once

#include "sdistill/common.hpp"

#include <cstdint>
#include <vector>

namespace sdistill {

// Variance-preserving forward process z_t = sqrt(alpha_bar[t]) * x
// + sqrt(1 - alpha_bar[t]) * eps. alpha_bar has T+1 entries with
// alpha_bar[0] == 1 and strictly decreasing tail.
struct DiffusionSchedule {
    int num_steps = 0;              // T
    std::vector<double> alpha_bar;  // length T+1
    std::vector<double> sigma;      // sigma[t] = sqrt(1 - alpha_bar[t])

    int max_timestep() const { return num_steps; }

    double alpha_bar_at(int t) const {
        require(t >= 0 && t <= num_steps, "timestep out of range: " + std::to_string(t));
        return alpha_bar[static_cast<std::size_t>(t)];
    }

    double sigma_at(int t) const {
        require(t >= 0 && t <= num_steps, "timestep out of range: " + std::to_string(t));
        return sigma[static_cast<std::size_t>(t)];
    }

    void validate() const;
};

// Linear-beta VP schedule, beta spaced evenly from beta_min to beta_max over
// num_steps steps; alpha_bar[t] is the running product of (1 - beta_i).
DiffusionSchedule make_schedule(int num_steps, double beta_min, double beta_max);

ArrayXd add_noise(const ArrayXd& x, int t, const ArrayXd& eps, const DiffusionSchedule& sched);

enum class SamplerKind {
    uniform_random,
    non_increasing_linear,
};

struct TimestepSampler {
    SamplerKind kind = SamplerKind::non_increasing_linear;
    int t_min = 20;
    int t_max = 980;
    int total_iters = 1;
    std::uint64_t rng_seed = 0;

    void validate(int num_steps) const;
};

// uniform_random draws depend only on (rng_seed, iter); non_increasing_linear
// walks from t_max down to t_min, rounding halves up.
int sample_timestep(const TimestepSampler& sampler, int iter);

}  // namespace sdistill
