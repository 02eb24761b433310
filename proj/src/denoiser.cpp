#include "sdistill/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdistill {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

ArrayXd cfg_compose(const ArrayXd& eps_cond, const ArrayXd& eps_uncond, double scale) {
    require_same_shape(eps_cond, eps_uncond, "cfg_compose");
    return eps_uncond + scale * (eps_cond - eps_uncond);
}

ArrayXd cfg_compose(const NoisePrediction& eps_cond, const NoisePrediction& eps_uncond, double scale) {
    require(eps_cond.t == eps_uncond.t, "cfg_compose: timestep mismatch");
    return cfg_compose(eps_cond.eps_hat, eps_uncond.eps_hat, scale);
}

Eigen::Index GmmCondition::dim() const {
    require(!components.empty(), "mixture has no components");
    return components.front().mean.size();
}

ArrayXd GmmCondition::weighted_mean() const {
    ArrayXd acc = ArrayXd::Zero(dim());
    for (const auto& c : components) {
        acc += c.weight * c.mean;
    }
    return acc;
}

void GmmCondition::validate() const {
    require(!components.empty(), "mixture needs at least one component");
    require(data_sigma >= 0.0 && std::isfinite(data_sigma), "data_sigma must be finite and >= 0");
    const Eigen::Index d = components.front().mean.size();
    double total = 0.0;
    for (const auto& c : components) {
        require(c.mean.size() == d, "mixture components must share one dimension");
        require(c.weight > 0.0 && std::isfinite(c.weight), "component weights must be positive");
        require(c.mean.allFinite(), "component means must be finite");
        total += c.weight;
    }
    require(std::abs(total - 1.0) <= 1e-9, "component weights must sum to 1");
}

std::vector<MarginalComponent> gmm_marginal_params(const GmmCondition& cond, int t,
                                                   const DiffusionSchedule& sched) {
    cond.validate();
    const double ab = sched.alpha_bar_at(t);
    const double scale = std::sqrt(ab);
    const double variance = ab * cond.data_sigma * cond.data_sigma + (1.0 - ab);

    std::vector<MarginalComponent> out;
    out.reserve(cond.components.size());
    for (const auto& c : cond.components) {
        out.push_back(MarginalComponent{scale * c.mean, variance, c.weight});
    }
    return out;
}

namespace {

// log responsibilities over marginal components, shared isotropic variance
void log_responsibilities(const ArrayXd& z, const std::vector<MarginalComponent>& comps,
                          std::vector<double>& log_r) {
    const double v = comps.front().variance;
    log_r.resize(comps.size());
    double max_term = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const double sq = (z - comps[i].mean).square().sum();
        log_r[i] = std::log(comps[i].weight) - 0.5 * sq / v;
        max_term = std::max(max_term, log_r[i]);
    }
    double denom = 0.0;
    for (double& lr : log_r) {
        denom += std::exp(lr - max_term);
    }
    const double log_denom = max_term + std::log(denom);
    for (double& lr : log_r) {
        lr -= log_denom;
    }
}

}  // namespace

NoisePrediction gmm_predict(const ArrayXd& latent, const GmmCondition& cond, int t,
                            const DiffusionSchedule& sched, const Condition& tag) {
    require(latent.size() == cond.dim(), "gmm_predict: latent dimension mismatch");
    require(t >= 1, "gmm_predict: t = 0 has no noise to predict");

    const auto comps = gmm_marginal_params(cond, t, sched);
    const double v = comps.front().variance;

    std::vector<double> log_r;
    log_responsibilities(latent, comps, log_r);

    ArrayXd posterior_mean = ArrayXd::Zero(latent.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
        posterior_mean += std::exp(log_r[i]) * comps[i].mean;
    }

    // score = -(z - posterior_mean) / v; eps_hat = -sqrt(1 - ab) * score
    const double ab = sched.alpha_bar_at(t);
    ArrayXd eps_hat = std::sqrt(1.0 - ab) / v * (latent - posterior_mean);
    return NoisePrediction{std::move(eps_hat), t, tag};
}

double gmm_log_density(const ArrayXd& latent, const GmmCondition& cond, int t,
                       const DiffusionSchedule& sched) {
    require(latent.size() == cond.dim(), "gmm_log_density: latent dimension mismatch");
    const auto comps = gmm_marginal_params(cond, t, sched);
    const double v = comps.front().variance;
    require(v > 0.0, "gmm_log_density: zero marginal variance");
    const double d = static_cast<double>(latent.size());
    const double log_norm = -0.5 * d * std::log(kTwoPi * v);

    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const double sq = (latent - comps[i].mean).square().sum();
        terms[i] = std::log(comps[i].weight) - 0.5 * sq / v;
        max_term = std::max(max_term, terms[i]);
    }
    double acc = 0.0;
    for (double term : terms) {
        acc += std::exp(term - max_term);
    }
    return log_norm + max_term + std::log(acc);
}

NoisePrediction DenoiserBackend::predict2(const ArrayXd&, const std::optional<ArrayXd>&,
                                          const Condition&, int) const {
    throw std::logic_error("backend does not support dual-condition prediction");
}

GmmCondition restrict_near_image(const GmmCondition& mix, const ArrayXd& image, double radius) {
    mix.validate();
    require(image.size() == mix.dim(), "restrict_near_image: image dimension mismatch");
    require(radius >= 0.0, "restrict_near_image: radius must be >= 0");

    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_i = 0;
    for (std::size_t i = 0; i < mix.components.size(); ++i) {
        const double d = std::sqrt((mix.components[i].mean - image).square().sum());
        if (d < best) {
            best = d;
            best_i = static_cast<Eigen::Index>(i);
        }
    }
    const ArrayXd& anchor = mix.components[static_cast<std::size_t>(best_i)].mean;

    GmmCondition out;
    out.data_sigma = mix.data_sigma;
    double total = 0.0;
    for (const auto& c : mix.components) {
        const double d = std::sqrt((c.mean - anchor).square().sum());
        if (d <= radius) {
            out.components.push_back(c);
            total += c.weight;
        }
    }
    for (auto& c : out.components) {
        c.weight /= total;
    }
    return out;
}

GmmCondition merge_mixtures(const std::vector<std::pair<GmmCondition, double>>& weighted) {
    require(!weighted.empty(), "merge_mixtures: nothing to merge");
    double prior_total = 0.0;
    for (const auto& [mix, prior] : weighted) {
        mix.validate();
        require(prior > 0.0, "merge_mixtures: priors must be positive");
        prior_total += prior;
    }
    require(std::abs(prior_total - 1.0) <= 1e-9, "merge_mixtures: priors must sum to 1");

    GmmCondition out;
    out.data_sigma = weighted.front().first.data_sigma;
    for (const auto& [mix, prior] : weighted) {
        require(mix.data_sigma == out.data_sigma, "merge_mixtures: mixtures must share data_sigma");
        for (const auto& c : mix.components) {
            out.components.push_back(GmmComponent{c.mean, prior * c.weight});
        }
    }
    return out;
}

AnalyticGmmBackend::AnalyticGmmBackend(std::map<std::string, GmmCondition> prompt_table,
                                       GmmCondition null_cond, DiffusionSchedule sched,
                                       double image_cond_radius)
    : prompts_(std::move(prompt_table)),
      null_(std::move(null_cond)),
      sched_(std::move(sched)),
      image_cond_radius_(image_cond_radius) {
    sched_.validate();
    null_.validate();
    require(!prompts_.empty(), "analytic backend needs at least one prompt");
    for (const auto& [id, mix] : prompts_) {
        mix.validate();
        require(mix.dim() == null_.dim(), "prompt mixture dimension differs from null: " + id);
    }
    require(image_cond_radius_ >= 0.0, "image_cond_radius must be >= 0");
}

const GmmCondition& AnalyticGmmBackend::mixture_for(const Condition& condition) const {
    if (condition.is_null()) {
        return null_;
    }
    auto it = prompts_.find(condition.prompt_id);
    if (it == prompts_.end()) {
        throw std::invalid_argument("unknown prompt id: " + condition.prompt_id);
    }
    return it->second;
}

NoisePrediction AnalyticGmmBackend::predict(const ArrayXd& latent, const Condition& condition,
                                            int t) const {
    return gmm_predict(latent, mixture_for(condition), t, sched_, condition);
}

NoisePrediction AnalyticGmmBackend::predict2(const ArrayXd& latent,
                                             const std::optional<ArrayXd>& image_cond,
                                             const Condition& text_cond, int t) const {
    const GmmCondition& base = mixture_for(text_cond);
    if (!image_cond.has_value()) {
        return gmm_predict(latent, base, t, sched_, text_cond);
    }
    const GmmCondition restricted = restrict_near_image(base, *image_cond, image_cond_radius_);
    return gmm_predict(latent, restricted, t, sched_, text_cond);
}

}  // namespace sdistill
