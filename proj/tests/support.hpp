#pragma once

// Shared helpers for the test suites: an independent log-density oracle for
// the analytic backend (deliberately written from alpha_bar, not through
// gmm_predict), random input builders, and filesystem scratch space.

#include "sdistill/denoiser.hpp"
#include "sdistill/distill.hpp"
#include "sdistill/rng.hpp"
#include "sdistill/schedule.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <unistd.h>

namespace testsupport {

using sdistill::ArrayXd;
using sdistill::DiffusionSchedule;
using sdistill::GmmComponent;
using sdistill::GmmCondition;
using sdistill::Rng;

// log p_t(z) of the noised mixture, straight from the definition.
inline double oracle_log_density(const ArrayXd& z, const GmmCondition& mix, int t,
                                 const DiffusionSchedule& sched) {
    const double ab = sched.alpha_bar_at(t);
    const double v = ab * mix.data_sigma * mix.data_sigma + (1.0 - ab);
    const double two_pi = 6.283185307179586476925286766559;
    const double log_norm = -0.5 * static_cast<double>(z.size()) * std::log(two_pi * v);

    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(mix.components.size());
    for (const auto& c : mix.components) {
        const ArrayXd m = std::sqrt(ab) * c.mean;
        const double term = std::log(c.weight) - 0.5 * (z - m).square().sum() / v;
        terms.push_back(term);
        max_term = std::max(max_term, term);
    }
    double acc = 0.0;
    for (double term : terms) {
        acc += std::exp(term - max_term);
    }
    return log_norm + max_term + std::log(acc);
}

// -sqrt(1 - alpha_bar) * central-difference gradient of oracle_log_density.
inline ArrayXd oracle_eps_hat(const ArrayXd& z, const GmmCondition& mix, int t,
                              const DiffusionSchedule& sched, double h = 1e-4) {
    const double ab = sched.alpha_bar_at(t);
    ArrayXd grad(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        ArrayXd zp = z;
        ArrayXd zm = z;
        zp[i] += h;
        zm[i] -= h;
        grad[i] =
            (oracle_log_density(zp, mix, t, sched) - oracle_log_density(zm, mix, t, sched)) /
            (2.0 * h);
    }
    return -std::sqrt(1.0 - ab) * grad;
}

inline ArrayXd vec(std::initializer_list<double> values) {
    ArrayXd out(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) {
        out[i++] = v;
    }
    return out;
}

inline GmmCondition point_mass(const ArrayXd& mean, double data_sigma = 0.0) {
    GmmCondition mix;
    mix.data_sigma = data_sigma;
    mix.components.push_back(GmmComponent{mean, 1.0});
    return mix;
}

inline GmmCondition random_mixture(Rng& rng, Eigen::Index dim, int max_components = 4) {
    GmmCondition mix;
    const int n = rng.next_int(1, max_components);
    mix.data_sigma = rng.next_unit() < 0.5 ? 0.0 : 0.25 + 0.5 * rng.next_unit();
    std::vector<double> raw(static_cast<std::size_t>(n));
    double total = 0.0;
    for (double& w : raw) {
        w = 0.2 + rng.next_unit();
        total += w;
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        GmmComponent c;
        c.mean = 2.0 * rng.gaussian_vector(dim);
        c.weight = raw[static_cast<std::size_t>(i)] / total;
        if (i + 1 == n) {
            c.weight = 1.0 - acc;
        } else {
            acc += c.weight;
        }
        mix.components.push_back(std::move(c));
    }
    return mix;
}

inline sdistill::EstimatorInputs random_inputs(Rng& rng, Eigen::Index dim) {
    sdistill::EstimatorInputs in;
    in.eps_tgt_y = rng.gaussian_vector(dim);
    in.eps_tgt_src_prompt = rng.gaussian_vector(dim);
    in.eps_tgt_null = rng.gaussian_vector(dim);
    in.eps_src_prompt = rng.gaussian_vector(dim);
    in.eps_src_null = rng.gaussian_vector(dim);
    in.true_noise = rng.gaussian_vector(dim);
    in.t = rng.next_int(1, 1000);
    return in;
}

// Unique scratch directory under the system temp dir; removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("sdistill_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testsupport
