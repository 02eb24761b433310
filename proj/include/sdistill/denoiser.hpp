#pragma once

#include "sdistill/common.hpp"
#include "sdistill/schedule.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sdistill {

enum class ConditionKind {
    prompt,
    null_text,
};

// A conditioning input for a denoiser: either a registered prompt id or the
// null (unconditional) text.
struct Condition {
    ConditionKind kind = ConditionKind::null_text;
    std::string prompt_id;

    static Condition text(std::string id) { return Condition{ConditionKind::prompt, std::move(id)}; }
    static Condition none() { return Condition{ConditionKind::null_text, {}}; }

    bool is_null() const { return kind == ConditionKind::null_text; }

    friend bool operator==(const Condition& a, const Condition& b) {
        return a.kind == b.kind && (a.is_null() || a.prompt_id == b.prompt_id);
    }
};

struct NoisePrediction {
    ArrayXd eps_hat;
    int t = 0;
    Condition condition;
};

// eps_uncond + scale * (eps_cond - eps_uncond)
ArrayXd cfg_compose(const ArrayXd& eps_cond, const ArrayXd& eps_uncond, double scale);
ArrayXd cfg_compose(const NoisePrediction& eps_cond, const NoisePrediction& eps_uncond, double scale);

struct GmmComponent {
    ArrayXd mean;
    double weight = 1.0;
};

// Isotropic Gaussian mixture over data space. data_sigma is the shared
// per-component std; 0 means point masses.
struct GmmCondition {
    std::vector<GmmComponent> components;
    double data_sigma = 0.0;

    Eigen::Index dim() const;
    ArrayXd weighted_mean() const;
    void validate() const;
};

struct MarginalComponent {
    ArrayXd mean;
    double variance = 0.0;
    double weight = 0.0;
};

// Closed-form VP marginal of the mixture at timestep t: component means scale
// by sqrt(alpha_bar), variance becomes alpha_bar*sigma0^2 + (1 - alpha_bar).
std::vector<MarginalComponent> gmm_marginal_params(const GmmCondition& cond, int t,
                                                   const DiffusionSchedule& sched);

// Exact mixture noise prediction: eps_hat = -sqrt(1 - alpha_bar) * grad log p_t(z).
// Responsibilities are evaluated with log-sum-exp. Rejects t = 0.
NoisePrediction gmm_predict(const ArrayXd& latent, const GmmCondition& cond, int t,
                            const DiffusionSchedule& sched, const Condition& tag = Condition::none());

// Log density of the mixture marginal at timestep t (used by the backend for
// posterior prompt responsibilities).
double gmm_log_density(const ArrayXd& latent, const GmmCondition& cond, int t,
                       const DiffusionSchedule& sched);

// Abstract denoiser. Implementations must be deterministic for fixed inputs
// and safe for concurrent read-only predict calls. Adapters wrapping real
// models must return raw conditional/unconditional predictions - CFG
// composition is this library's job.
struct DenoiserBackend {
    virtual ~DenoiserBackend() = default;

    virtual NoisePrediction predict(const ArrayXd& latent, const Condition& condition, int t) const = 0;

    virtual bool supports_dual_condition() const { return false; }

    // Dual-condition prediction for instruction-style backends: image
    // condition plus text condition, either of which may be absent.
    virtual NoisePrediction predict2(const ArrayXd& latent, const std::optional<ArrayXd>& image_cond,
                                     const Condition& text_cond, int t) const;
};

// Keeps the components of `mix` whose means lie within `radius` of the
// component mean nearest to `image`; weights are renormalized.
GmmCondition restrict_near_image(const GmmCondition& mix, const ArrayXd& image, double radius);

// Weighted union of mixtures; priors must sum to 1. Used to build the null
// (marginal) mixture from a prompt table.
GmmCondition merge_mixtures(const std::vector<std::pair<GmmCondition, double>>& weighted);

// Exact oracle backend over Gaussian mixtures. A prompt selects a
// sub-mixture of the data distribution; the null condition is the full
// marginal. predict2 models image conditioning as a radius restriction
// around the component nearest to the conditioning image.
class AnalyticGmmBackend final : public DenoiserBackend {
public:
    AnalyticGmmBackend(std::map<std::string, GmmCondition> prompt_table, GmmCondition null_cond,
                       DiffusionSchedule sched, double image_cond_radius = 1.0);

    NoisePrediction predict(const ArrayXd& latent, const Condition& condition, int t) const override;
    bool supports_dual_condition() const override { return true; }
    NoisePrediction predict2(const ArrayXd& latent, const std::optional<ArrayXd>& image_cond,
                             const Condition& text_cond, int t) const override;

    const GmmCondition& mixture_for(const Condition& condition) const;
    const DiffusionSchedule& schedule() const { return sched_; }
    const std::map<std::string, GmmCondition>& prompt_table() const { return prompts_; }

private:
    std::map<std::string, GmmCondition> prompts_;
    GmmCondition null_;
    DiffusionSchedule sched_;
    double image_cond_radius_;
};

}  // namespace sdistill
