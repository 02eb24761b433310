#include "sdistill/schedule.hpp"

#include "sdistill/rng.hpp"

#include <cmath>

namespace sdistill {

void DiffusionSchedule::validate() const {
    require(num_steps >= 2, "schedule needs num_steps >= 2");
    require(alpha_bar.size() == static_cast<std::size_t>(num_steps) + 1,
            "alpha_bar length must be num_steps + 1");
    require(sigma.size() == alpha_bar.size(), "sigma length must match alpha_bar");
    require(alpha_bar[0] == 1.0, "alpha_bar[0] must be exactly 1");
    for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
        require(alpha_bar[t] > 0.0 && alpha_bar[t] < alpha_bar[t - 1],
                "alpha_bar must be strictly decreasing and positive");
        const double resid = sigma[t] * sigma[t] + alpha_bar[t] - 1.0;
        require(std::abs(resid) <= 1e-12, "sigma^2 + alpha_bar must equal 1");
    }
}

DiffusionSchedule make_schedule(int num_steps, double beta_min, double beta_max) {
    require(num_steps >= 2, "make_schedule: num_steps must be >= 2");
    require(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0,
            "make_schedule: need 0 < beta_min < beta_max < 1");

    DiffusionSchedule sched;
    sched.num_steps = num_steps;
    sched.alpha_bar.resize(static_cast<std::size_t>(num_steps) + 1);
    sched.sigma.resize(sched.alpha_bar.size());
    sched.alpha_bar[0] = 1.0;
    sched.sigma[0] = 0.0;

    double prod = 1.0;
    for (int i = 1; i <= num_steps; ++i) {
        const double frac = static_cast<double>(i - 1) / static_cast<double>(num_steps - 1);
        const double beta = beta_min + (beta_max - beta_min) * frac;
        prod *= 1.0 - beta;
        sched.alpha_bar[static_cast<std::size_t>(i)] = prod;
        sched.sigma[static_cast<std::size_t>(i)] = std::sqrt(1.0 - prod);
    }
    sched.validate();
    return sched;
}

ArrayXd add_noise(const ArrayXd& x, int t, const ArrayXd& eps, const DiffusionSchedule& sched) {
    require_same_shape(x, eps, "add_noise");
    require(t >= 1 && t <= sched.num_steps, "add_noise: timestep must be in [1, T]");
    const double ab = sched.alpha_bar_at(t);
    return std::sqrt(ab) * x + std::sqrt(1.0 - ab) * eps;
}

void TimestepSampler::validate(int num_steps) const {
    require(t_min >= 1, "sampler: t_min must be >= 1");
    require(t_max <= num_steps, "sampler: t_max must be <= num_steps");
    require(t_min <= t_max, "sampler: t_min must be <= t_max");
    require(total_iters >= 1, "sampler: total_iters must be positive");
}

int sample_timestep(const TimestepSampler& sampler, int iter) {
    require(iter >= 0 && iter < sampler.total_iters, "sample_timestep: iter out of range");
    switch (sampler.kind) {
        case SamplerKind::uniform_random: {
            Rng rng = Rng::from(sampler.rng_seed, /*stream=*/0x7131u, static_cast<std::uint64_t>(iter));
            return rng.next_int(sampler.t_min, sampler.t_max);
        }
        case SamplerKind::non_increasing_linear: {
            if (sampler.total_iters == 1) {
                return sampler.t_max;
            }
            const double span = static_cast<double>(sampler.t_max - sampler.t_min);
            const double frac = static_cast<double>(iter) / static_cast<double>(sampler.total_iters - 1);
            // round half up
            return static_cast<int>(std::floor(sampler.t_max - span * frac + 0.5));
        }
    }
    throw std::logic_error("sample_timestep: unknown sampler kind");
}

}  // namespace sdistill
