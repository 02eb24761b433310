#include "sdistill/selftest.hpp"

#include "sdistill/demo.hpp"
#include "sdistill/denoiser.hpp"
#include "sdistill/distill.hpp"
#include "sdistill/edit.hpp"
#include "sdistill/rng.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <vector>

namespace sdistill {

namespace {

// Mixture log density written out directly from alpha_bar, independent of
// the gmm_predict code path it cross-checks.
double direct_log_density(const ArrayXd& z, const GmmCondition& mix, int t,
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

ArrayXd finite_difference_eps_hat(const ArrayXd& z, const GmmCondition& mix, int t,
                                  const DiffusionSchedule& sched, double h) {
    const double ab = sched.alpha_bar_at(t);
    ArrayXd grad(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        ArrayXd zp = z;
        ArrayXd zm = z;
        zp[i] += h;
        zm[i] -= h;
        grad[i] = (direct_log_density(zp, mix, t, sched) - direct_log_density(zm, mix, t, sched)) /
                  (2.0 * h);
    }
    return -std::sqrt(1.0 - ab) * grad;
}

GmmCondition random_mixture(Rng& rng, Eigen::Index dim) {
    GmmCondition mix;
    const int n_comp = rng.next_int(1, 4);
    mix.data_sigma = rng.next_unit() < 0.5 ? 0.0 : 0.3;
    double total = 0.0;
    std::vector<double> raw(static_cast<std::size_t>(n_comp));
    for (double& w : raw) {
        w = 0.2 + rng.next_unit();
        total += w;
    }
    for (int i = 0; i < n_comp; ++i) {
        GmmComponent c;
        c.mean = 2.0 * rng.gaussian_vector(dim);
        c.weight = raw[static_cast<std::size_t>(i)] / total;
        mix.components.push_back(std::move(c));
    }
    // Keep the weights summing to 1 exactly enough for validation.
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < mix.components.size(); ++i) {
        acc += mix.components[i].weight;
    }
    mix.components.back().weight = 1.0 - acc;
    return mix;
}

struct SuiteResult {
    bool pass = false;
    std::string line;
};

SuiteResult finite_difference_suite() {
    const DiffusionSchedule sched = make_schedule(1000, 1e-4, 0.02);
    Rng rng(0xFD0A11CE);
    const int cases = 200;
    double worst = 0.0;
    for (int k = 0; k < cases; ++k) {
        const Eigen::Index dim = 1 + (k % 4);
        const GmmCondition mix = random_mixture(rng, dim);
        const int t = rng.next_int(1, sched.max_timestep());
        // draw z from the marginal so cases are representative
        const int pick = rng.next_int(0, static_cast<int>(mix.components.size()) - 1);
        const double ab = sched.alpha_bar_at(t);
        const double v = ab * mix.data_sigma * mix.data_sigma + (1.0 - ab);
        const ArrayXd z = std::sqrt(ab) * mix.components[static_cast<std::size_t>(pick)].mean +
                          std::sqrt(v) * rng.gaussian_vector(dim);

        const ArrayXd pred = gmm_predict(z, mix, t, sched).eps_hat;
        const ArrayXd ref = finite_difference_eps_hat(z, mix, t, sched, 1e-4);
        const double rel = l2_norm(pred - ref) / std::max(1e-9, l2_norm(ref));
        worst = std::max(worst, rel);
    }
    SuiteResult r;
    r.pass = worst < 1e-4;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "finite-difference oracle   max rel err %.3e (tol 1e-04, %d cases)", worst, cases);
    r.line = buf;
    return r;
}

SuiteResult identity_suite() {
    Rng rng(0x1DEA5EED);
    const int draws = 1000;
    double worst = 0.0;
    for (int k = 0; k < draws; ++k) {
        const Eigen::Index dim = 1 + (k % 6);
        EstimatorInputs in;
        in.eps_tgt_y = rng.gaussian_vector(dim);
        in.eps_tgt_src_prompt = rng.gaussian_vector(dim);
        in.eps_src_null = rng.gaussian_vector(dim);
        const double s = -10.0 + 20.0 * rng.next_unit();
        const ArrayXd a = ssd_grad(in, s);
        const ArrayXd b = ssd_decomposed(in, s, 1.0);
        worst = std::max(worst, (a - b).abs().maxCoeff());
    }
    SuiteResult r;
    r.pass = worst < 1e-12;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "guidance/decomposed identity   max |dev| %.3e (tol 1e-12, %d draws)", worst,
                  draws);
    r.line = buf;
    return r;
}

SuiteResult convergence_suite() {
    const EditConfig cfg = demo::convergence_1d_config();
    const EditOutcome out = run_edit(cfg);
    const double theta = out.final_theta[0];
    SuiteResult r;
    r.pass = out.status == EditOutcome::Status::ok && std::abs(theta - 1.0) < 0.05;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "1-D convergence   |theta - 1| = %.3e after %d iters (tol 5e-02)",
                  std::abs(theta - 1.0), static_cast<int>(out.log.size()));
    r.line = buf;
    return r;
}

}  // namespace

int run_selftest(std::ostream& os) {
    const SuiteResult results[] = {
        finite_difference_suite(),
        identity_suite(),
        convergence_suite(),
    };
    bool all = true;
    for (const auto& r : results) {
        os << (r.pass ? "[PASS] " : "[FAIL] ") << r.line << "\n";
        all = all && r.pass;
    }
    os << (all ? "selftest: all suites passed\n" : "selftest: FAILURES\n");
    return all ? 0 : 1;
}

}  // namespace sdistill
