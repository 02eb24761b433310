#include "sdistill/demo.hpp"

namespace sdistill {
namespace demo {

namespace {

GmmCondition point_mass(std::initializer_list<double> mean) {
    GmmCondition mix;
    GmmComponent c;
    c.mean = ArrayXd(static_cast<Eigen::Index>(mean.size()));
    Eigen::Index i = 0;
    for (double v : mean) {
        c.mean[i++] = v;
    }
    c.weight = 1.0;
    mix.components.push_back(std::move(c));
    return mix;
}

ArrayXd vec(std::initializer_list<double> values) {
    ArrayXd out(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) {
        out[i++] = v;
    }
    return out;
}

}  // namespace

EditConfig convergence_1d_config() {
    EditConfig cfg;
    cfg.run_id = "convergence-1d";
    cfg.estimator = Estimator::ssd;
    cfg.weights.s = 1.0;
    cfg.weights.id_weight = IdWeightSchedule::constant_weight(0.0);

    cfg.total_iters = 300;
    cfg.step_size = 0.05;
    cfg.noise_policy = NoisePolicy::shared;
    cfg.noise_seed = 2024;
    cfg.timestep_seed = 7;

    cfg.backend.data_sigma = 0.0;
    cfg.backend.prompts.emplace("source-mode", GmmPromptSpec{point_mass({-1.0}), 0.5});
    cfg.backend.prompts.emplace("target-mode", GmmPromptSpec{point_mass({1.0}), 0.5});
    cfg.source_prompt = "source-mode";
    cfg.target_prompt = "target-mode";
    cfg.source_image = vec({-1.0});
    cfg.metrics = {"mse", "clip_sim", "dir_sim"};
    return cfg;
}

EditConfig preservation_toy_config(Estimator estimator) {
    EditConfig cfg;
    cfg.run_id = "preserve-" + to_string(estimator);
    cfg.estimator = estimator;
    cfg.weights.s = 1.0;
    cfg.weights.id_weight = IdWeightSchedule::constant_weight(0.0);

    cfg.total_iters = 300;
    cfg.step_size = 0.05;
    cfg.noise_policy = NoisePolicy::shared;
    cfg.noise_seed = 11;
    cfg.timestep_seed = 3;

    // Product mixture over (edited pixel, background pixel). The background
    // is +1 in the source image but the prior puts 3x more mass on -0.5, so
    // an estimator without a source anchor regresses it.
    cfg.backend.data_sigma = 0.0;

    GmmCondition target;
    target.components.push_back(GmmComponent{vec({1.0, 1.0}), 0.25});
    target.components.push_back(GmmComponent{vec({1.0, -0.5}), 0.75});

    cfg.backend.prompts.emplace("source-scene", GmmPromptSpec{point_mass({-1.0, 1.0}), 0.125});
    cfg.backend.prompts.emplace("target-scene", GmmPromptSpec{std::move(target), 0.5});
    cfg.backend.prompts.emplace("background-other", GmmPromptSpec{point_mass({-1.0, -0.5}), 0.375});

    cfg.source_prompt = "source-scene";
    cfg.target_prompt = "target-scene";
    cfg.source_image = vec({-1.0, 1.0});
    cfg.image_shape = std::make_pair(1, 2);
    cfg.regions.emplace("edit", std::vector<int>{0});
    cfg.regions.emplace("background", std::vector<int>{1});
    cfg.metrics = {"mse", "region_mse"};
    return cfg;
}

}  // namespace demo
}  // namespace sdistill
