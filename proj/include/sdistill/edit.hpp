#pragma once

#include "sdistill/common.hpp"
#include "sdistill/denoiser.hpp"
#include "sdistill/distill.hpp"
#include "sdistill/schedule.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sdistill {

// Differentiable parametric image generator g(theta). render must be
// deterministic in theta; apply_grad owns the chain rule from pixel
// gradients back to parameters.
struct Generator {
    virtual ~Generator() = default;
    virtual ArrayXd render(const ArrayXd& theta) const = 0;
    virtual ArrayXd apply_grad(const ArrayXd& theta, const ArrayXd& pixel_grad,
                               double step_size) const = 0;
};

// theta IS the pixel grid.
struct IdentityGenerator final : Generator {
    ArrayXd render(const ArrayXd& theta) const override { return theta; }
    ArrayXd apply_grad(const ArrayXd& theta, const ArrayXd& pixel_grad,
                       double step_size) const override {
        require_same_shape(theta, pixel_grad, "IdentityGenerator::apply_grad");
        return theta - step_size * pixel_grad;
    }
};

enum class Estimator {
    sds,
    dds,
    csd,
    ssd,
    ssd_full,   // decomposed form + enhancement + latent anchor
    ip2p_edit,  // dual-condition one-step editing direction
};

std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& name);

enum class NoisePolicy {
    shared,       // one eps per iteration for both latents
    independent,  // separate draws for current and source latents
};

struct EditState {
    ArrayXd theta;
    ArrayXd source_image;
    Condition source_prompt;
    Condition target_prompt;
    int iter = 0;
    GuidanceWeights weights;
    Estimator estimator = Estimator::ssd;
    ArrayXd velocity;  // momentum accumulator; empty until the first step

    void validate(const Generator& gen) const;
};

struct EditLogRecord {
    int iter = 0;
    int t = 0;
    Estimator estimator = Estimator::ssd;
    double grad_norm = 0.0;
    double mse_to_source = 0.0;
    // Per-term norms, filled for the estimators that have these terms.
    double cross_prompt_norm = 0.0;
    double cross_traj_norm = 0.0;
    double align_norm = 0.0;
    double id_norm = 0.0;
};

using EditLog = std::vector<EditLogRecord>;

struct NonFiniteGradientError : std::runtime_error {
    int iter;
    explicit NonFiniteGradientError(int iteration, const std::string& msg)
        : std::runtime_error(msg), iter(iteration) {}
};

struct StepEnv {
    const DenoiserBackend* backend = nullptr;
    const Generator* generator = nullptr;
    const DiffusionSchedule* sched = nullptr;
    const TimestepSampler* sampler = nullptr;
    std::uint64_t noise_seed = 0;
    double step_size = 0.01;
    NoisePolicy noise_policy = NoisePolicy::shared;
    double momentum = 0.0;  // 0 = plain gradient descent
};

// One optimization step: sample t, noise the latents, gather exactly the
// predictions the estimator needs, apply the pixel gradient through the
// generator. Throws NonFiniteGradientError instead of clamping.
std::pair<EditState, EditLogRecord> step(const EditState& state, const StepEnv& env);

// --- config-driven runner -------------------------------------------------

struct GmmPromptSpec {
    GmmCondition mixture;
    double prior = 0.0;
};

struct AnalyticBackendSpec {
    double data_sigma = 0.0;
    double image_cond_radius = 1.0;
    std::map<std::string, GmmPromptSpec> prompts;
    // Empty means "marginal": merge the prompt mixtures by prior.
    std::optional<GmmCondition> explicit_null;
};

struct EditConfig {
    std::string run_id = "run";
    Estimator estimator = Estimator::ssd;
    GuidanceWeights weights;

    int schedule_steps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    SamplerKind sampler_kind = SamplerKind::non_increasing_linear;
    int t_min = 20;
    int t_max = 980;

    int total_iters = 3000;
    double step_size = 0.01;
    double momentum = 0.0;
    NoisePolicy noise_policy = NoisePolicy::shared;
    std::uint64_t noise_seed = 0;
    std::uint64_t timestep_seed = 0;

    AnalyticBackendSpec backend;
    std::string source_prompt;
    std::string target_prompt;
    ArrayXd source_image;
    std::optional<ArrayXd> init_theta;  // defaults to source_image

    // Presentation / reporting extras.
    std::optional<std::pair<int, int>> image_shape;  // rows, cols
    std::map<std::string, std::vector<int>> regions;
    std::vector<std::string> metrics;  // subset of mse, region_mse, clip_sim, dir_sim
    double png_vmin = -2.0;
    double png_vmax = 2.0;

    void validate() const;
};

// JSON (de)serialization for the documented config schema. Parsing throws
// std::invalid_argument with a path-qualified message on any bad key.
EditConfig parse_edit_config(const std::string& json_text);
std::string edit_config_to_json(const EditConfig& config);

DiffusionSchedule build_schedule(const EditConfig& config);
TimestepSampler build_sampler(const EditConfig& config);
std::unique_ptr<AnalyticGmmBackend> build_backend(const EditConfig& config);

struct EditOutcome {
    enum class Status { ok, aborted };
    Status status = Status::ok;
    std::string abort_reason;
    ArrayXd final_image;
    ArrayXd final_theta;
    EditLog log;
};

// Runs the full loop. Deterministic for a fixed config. On a non-finite
// gradient the partial log is preserved and status is set to aborted.
EditOutcome run_edit(const EditConfig& config);

}  // namespace sdistill
