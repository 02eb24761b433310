#include "sdistill/edit.hpp"

#include "sdistill/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace sdistill {

using ordered_json = nlohmann::ordered_json;

std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::sds: return "sds";
        case Estimator::dds: return "dds";
        case Estimator::csd: return "csd";
        case Estimator::ssd: return "ssd";
        case Estimator::ssd_full: return "ssd_full";
        case Estimator::ip2p_edit: return "ip2p_edit";
    }
    throw std::logic_error("unknown estimator");
}

Estimator parse_estimator(const std::string& name) {
    if (name == "sds") return Estimator::sds;
    if (name == "dds") return Estimator::dds;
    if (name == "csd") return Estimator::csd;
    if (name == "ssd") return Estimator::ssd;
    if (name == "ssd_full") return Estimator::ssd_full;
    if (name == "ip2p_edit") return Estimator::ip2p_edit;
    throw std::invalid_argument("unknown estimator: " + name);
}

void EditState::validate(const Generator& gen) const {
    require(iter >= 0, "edit state: iter must be non-negative");
    weights.validate();
    const ArrayXd rendered = gen.render(theta);
    require_same_shape(rendered, source_image, "edit state render vs source image");
}

namespace {

constexpr std::uint64_t kNoiseStreamCurrent = 1;
constexpr std::uint64_t kNoiseStreamSource = 2;

struct TermNorms {
    double cross_prompt = 0.0;
    double cross_traj = 0.0;
    double align = 0.0;
    double id = 0.0;
};

}  // namespace

std::pair<EditState, EditLogRecord> step(const EditState& state, const StepEnv& env) {
    require(env.backend && env.generator && env.sched && env.sampler, "step: incomplete environment");
    state.validate(*env.generator);

    const int t = sample_timestep(*env.sampler, state.iter);
    const std::uint64_t iter_index = static_cast<std::uint64_t>(state.iter);

    const ArrayXd x = env.generator->render(state.theta);
    const ArrayXd eps =
        Rng::from(env.noise_seed, kNoiseStreamCurrent, iter_index).gaussian_vector(x.size());
    const ArrayXd z = add_noise(x, t, eps, *env.sched);

    // The source latent shares eps with the current latent under the shared
    // policy; everything downstream of the cross-trajectory and anchor terms
    // relies on that coupling.
    auto source_latent = [&]() -> ArrayXd {
        if (env.noise_policy == NoisePolicy::shared) {
            return add_noise(state.source_image, t, eps, *env.sched);
        }
        const ArrayXd eps2 =
            Rng::from(env.noise_seed, kNoiseStreamSource, iter_index).gaussian_vector(x.size());
        return add_noise(state.source_image, t, eps2, *env.sched);
    };

    const GuidanceWeights& w = state.weights;
    EstimatorInputs in;
    in.t = t;
    ArrayXd grad;
    TermNorms norms;

    switch (state.estimator) {
        case Estimator::sds: {
            in.eps_tgt_y = env.backend->predict(z, state.target_prompt, t).eps_hat;
            in.eps_tgt_null = env.backend->predict(z, Condition::none(), t).eps_hat;
            in.true_noise = eps;
            grad = sds_grad(in, w.s, 1.0);
            break;
        }
        case Estimator::dds: {
            const ArrayXd z_hat = source_latent();
            in.eps_tgt_y = env.backend->predict(z, state.target_prompt, t).eps_hat;
            in.eps_tgt_null = env.backend->predict(z, Condition::none(), t).eps_hat;
            in.eps_src_prompt = env.backend->predict(z_hat, state.source_prompt, t).eps_hat;
            in.eps_src_null = env.backend->predict(z_hat, Condition::none(), t).eps_hat;
            grad = dds_grad(in, w.s);
            break;
        }
        case Estimator::csd: {
            in.eps_tgt_y = env.backend->predict(z, state.target_prompt, t).eps_hat;
            in.eps_tgt_src_prompt = env.backend->predict(z, state.source_prompt, t).eps_hat;
            in.eps_tgt_null = env.backend->predict(z, Condition::none(), t).eps_hat;
            grad = csd_grad(in, w.w_a, w.w_b);
            break;
        }
        case Estimator::ssd: {
            const ArrayXd z_hat = source_latent();
            in.eps_tgt_y = env.backend->predict(z, state.target_prompt, t).eps_hat;
            in.eps_tgt_src_prompt = env.backend->predict(z, state.source_prompt, t).eps_hat;
            in.eps_src_null = env.backend->predict(z_hat, Condition::none(), t).eps_hat;
            grad = ssd_grad(in, w.s);
            norms.cross_prompt = l2_norm(w.s * (in.eps_tgt_y - in.eps_tgt_src_prompt));
            norms.cross_traj = l2_norm(in.eps_tgt_src_prompt - in.eps_src_null);
            break;
        }
        case Estimator::ssd_full: {
            const ArrayXd z_hat = source_latent();
            in.eps_tgt_y = env.backend->predict(z, state.target_prompt, t).eps_hat;
            in.eps_tgt_src_prompt = env.backend->predict(z, state.source_prompt, t).eps_hat;
            in.eps_src_null = env.backend->predict(z_hat, Condition::none(), t).eps_hat;
            if (w.w_e != 0.0) {
                in.eps_tgt_null = env.backend->predict(z, Condition::none(), t).eps_hat;
            }
            grad = final_grad(in, z, z_hat, w, state.iter);
            norms.cross_prompt = l2_norm(w.w_p * (in.eps_tgt_y - in.eps_tgt_src_prompt));
            norms.cross_traj = l2_norm(w.w_t * (in.eps_tgt_src_prompt - in.eps_src_null));
            if (w.w_e != 0.0) {
                norms.align = l2_norm(w.w_e * (in.eps_tgt_y - in.eps_tgt_null));
            }
            norms.id = l2_norm(id_reg_grad(z, z_hat, w.id_weight.at(state.iter)));
            break;
        }
        case Estimator::ip2p_edit: {
            const ArrayXd eps_nn =
                env.backend->predict2(z, std::nullopt, Condition::none(), t).eps_hat;
            const ArrayXd eps_In =
                env.backend->predict2(z, state.source_image, Condition::none(), t).eps_hat;
            const ArrayXd eps_IT =
                env.backend->predict2(z, state.source_image, state.target_prompt, t).eps_hat;
            grad = ip2p_edit_grad(eps_nn, eps_In, eps_IT, w.s_I, w.s_T);
            norms.cross_traj = l2_norm(w.s_I * (eps_In - eps_nn));
            norms.cross_prompt = l2_norm(w.s_T * (eps_IT - eps_In));
            break;
        }
    }

    if (!grad.allFinite()) {
        throw NonFiniteGradientError(
            state.iter, "non-finite gradient at iter " + std::to_string(state.iter) + ", t=" +
                            std::to_string(t) + ", estimator=" + to_string(state.estimator));
    }

    ArrayXd update = grad;
    if (env.momentum != 0.0 && state.velocity.size() == grad.size()) {
        update += env.momentum * state.velocity;
    }

    EditState next = state;
    next.velocity = update;
    next.theta = env.generator->apply_grad(state.theta, update, env.step_size);
    next.iter = state.iter + 1;

    EditLogRecord rec;
    rec.iter = state.iter;
    rec.t = t;
    rec.estimator = state.estimator;
    rec.grad_norm = l2_norm(grad);
    rec.mse_to_source = (x - state.source_image).square().mean();
    rec.cross_prompt_norm = norms.cross_prompt;
    rec.cross_traj_norm = norms.cross_traj;
    rec.align_norm = norms.align;
    rec.id_norm = norms.id;
    return {std::move(next), rec};
}

// --- config ----------------------------------------------------------------

void EditConfig::validate() const {
    require(!run_id.empty(), "config: run_id must be non-empty");
    for (char c : run_id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '_' || c == '-';
        require(ok, "config: run_id may contain only [A-Za-z0-9_-]");
    }
    weights.validate();
    require(schedule_steps >= 2, "config: schedule.num_steps must be >= 2");
    require(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0,
            "config: need 0 < beta_min < beta_max < 1");
    require(total_iters >= 0, "config: total_iters must be >= 0");
    require(std::isfinite(step_size), "config: step_size must be finite");
    require(momentum >= 0.0 && momentum < 1.0, "config: momentum must be in [0, 1)");
    require(t_min >= 1 && t_min <= t_max && t_max <= schedule_steps,
            "config: need 1 <= t_min <= t_max <= num_steps");
    require(source_image.size() > 0, "config: source_image must be non-empty");
    require(source_image.allFinite(), "config: source_image must be finite");
    if (init_theta) {
        require(init_theta->size() == source_image.size(),
                "config: init_theta shape must match source_image");
    }
    require(!backend.prompts.empty(), "config: backend needs at least one prompt");
    require(backend.prompts.count(source_prompt) == 1, "config: unknown source_prompt");
    require(backend.prompts.count(target_prompt) == 1, "config: unknown target_prompt");
    double prior_total = 0.0;
    for (const auto& [id, spec] : backend.prompts) {
        spec.mixture.validate();
        require(spec.mixture.dim() == source_image.size(),
                "config: prompt '" + id + "' dimension differs from source_image");
        require(spec.prior > 0.0, "config: prompt priors must be positive");
        prior_total += spec.prior;
    }
    if (!backend.explicit_null) {
        require(std::abs(prior_total - 1.0) <= 1e-9,
                "config: prompt priors must sum to 1 when null is the marginal");
    }
    if (image_shape) {
        require(image_shape->first >= 1 && image_shape->second >= 1,
                "config: image_shape entries must be positive");
        require(static_cast<Eigen::Index>(image_shape->first) * image_shape->second ==
                    source_image.size(),
                "config: image_shape must match source_image size");
    }
    for (const auto& [name, idx] : regions) {
        require(!idx.empty(), "config: region '" + name + "' is empty");
        for (int i : idx) {
            require(i >= 0 && i < source_image.size(),
                    "config: region '" + name + "' index out of range");
        }
    }
    for (const auto& m : metrics) {
        require(m == "mse" || m == "region_mse" || m == "clip_sim" || m == "dir_sim",
                "config: unknown metric '" + m + "'");
    }
    require(png_vmin < png_vmax, "config: png value range must be non-empty");
}

namespace {

ArrayXd array_from_json(const ordered_json& j, const std::string& path) {
    require(j.is_array() && !j.empty(), path + " must be a non-empty array of numbers");
    ArrayXd out(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        require(j[i].is_number(), path + " must contain only numbers");
        out[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return out;
}

ordered_json array_to_json(const ArrayXd& a) {
    ordered_json j = ordered_json::array();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        j.push_back(a[i]);
    }
    return j;
}

GmmCondition mixture_from_json(const ordered_json& j, double data_sigma, const std::string& path) {
    require(j.is_object() && j.contains("components"), path + " needs a components array");
    GmmCondition mix;
    mix.data_sigma = data_sigma;
    for (std::size_t i = 0; i < j["components"].size(); ++i) {
        const auto& cj = j["components"][i];
        const std::string cpath = path + ".components[" + std::to_string(i) + "]";
        require(cj.contains("mean"), cpath + " needs a mean");
        GmmComponent c;
        c.mean = array_from_json(cj["mean"], cpath + ".mean");
        c.weight = cj.value("weight", 1.0);
        mix.components.push_back(std::move(c));
    }
    return mix;
}

ordered_json mixture_to_json(const GmmCondition& mix) {
    ordered_json j;
    j["components"] = ordered_json::array();
    for (const auto& c : mix.components) {
        ordered_json cj;
        cj["mean"] = array_to_json(c.mean);
        cj["weight"] = c.weight;
        j["components"].push_back(std::move(cj));
    }
    return j;
}

IdWeightSchedule id_weight_from_json(const ordered_json& j) {
    const std::string kind = j.value("kind", "constant");
    if (kind == "constant") {
        return IdWeightSchedule::constant_weight(j.value("value", 0.0));
    }
    if (kind == "linear_decay") {
        return IdWeightSchedule::linear(j.value("start", 1.0), j.value("end", 0.0),
                                        j.value("horizon", 1));
    }
    throw std::invalid_argument("weights.id_weight.kind must be constant or linear_decay");
}

ordered_json id_weight_to_json(const IdWeightSchedule& s) {
    ordered_json j;
    if (s.kind == IdWeightSchedule::Kind::constant) {
        j["kind"] = "constant";
        j["value"] = s.value;
    } else {
        j["kind"] = "linear_decay";
        j["start"] = s.start;
        j["end"] = s.end;
        j["horizon"] = s.horizon;
    }
    return j;
}

}  // namespace

EditConfig parse_edit_config(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    require(j.is_object(), "config must be a JSON object");

    EditConfig cfg;
    try {
        cfg.run_id = j.value("run_id", std::string("run"));
        cfg.estimator = parse_estimator(j.value("estimator", std::string("ssd")));

        if (j.contains("weights")) {
            const auto& wj = j["weights"];
            cfg.weights.s = wj.value("s", cfg.weights.s);
            cfg.weights.w_p = wj.value("w_p", cfg.weights.w_p);
            cfg.weights.w_t = wj.value("w_t", cfg.weights.w_t);
            cfg.weights.w_e = wj.value("w_e", cfg.weights.w_e);
            cfg.weights.w_a = wj.value("w_a", cfg.weights.w_a);
            cfg.weights.w_b = wj.value("w_b", cfg.weights.w_b);
            cfg.weights.s_I = wj.value("s_I", cfg.weights.s_I);
            cfg.weights.s_T = wj.value("s_T", cfg.weights.s_T);
            if (wj.contains("id_weight")) {
                cfg.weights.id_weight = id_weight_from_json(wj["id_weight"]);
            }
        }

        if (j.contains("schedule")) {
            const auto& sj = j["schedule"];
            cfg.schedule_steps = sj.value("num_steps", cfg.schedule_steps);
            cfg.beta_min = sj.value("beta_min", cfg.beta_min);
            cfg.beta_max = sj.value("beta_max", cfg.beta_max);
        }

        if (j.contains("sampler")) {
            const auto& sj = j["sampler"];
            const std::string kind = sj.value("kind", std::string("non_increasing_linear"));
            if (kind == "uniform_random") {
                cfg.sampler_kind = SamplerKind::uniform_random;
            } else if (kind == "non_increasing_linear") {
                cfg.sampler_kind = SamplerKind::non_increasing_linear;
            } else {
                throw std::invalid_argument("sampler.kind must be uniform_random or non_increasing_linear");
            }
            cfg.t_min = sj.value("t_min", cfg.t_min);
            cfg.t_max = sj.value("t_max", cfg.t_max);
        }

        cfg.total_iters = j.value("total_iters", cfg.total_iters);
        cfg.step_size = j.value("step_size", cfg.step_size);
        cfg.momentum = j.value("momentum", cfg.momentum);

        const std::string policy = j.value("noise_policy", std::string("shared"));
        if (policy == "shared") {
            cfg.noise_policy = NoisePolicy::shared;
        } else if (policy == "independent") {
            cfg.noise_policy = NoisePolicy::independent;
        } else {
            throw std::invalid_argument("noise_policy must be shared or independent");
        }

        if (j.contains("seeds")) {
            cfg.noise_seed = j["seeds"].value("noise", std::uint64_t{0});
            cfg.timestep_seed = j["seeds"].value("timestep", std::uint64_t{0});
        }

        require(j.contains("backend"), "config: backend section is required");
        const auto& bj = j["backend"];
        const std::string backend_kind = bj.value("kind", std::string("analytic"));
        require(backend_kind == "analytic", "config: only the analytic backend kind is built in");
        cfg.backend.data_sigma = bj.value("data_sigma", 0.0);
        cfg.backend.image_cond_radius = bj.value("image_cond_radius", 1.0);
        require(bj.contains("prompts") && bj["prompts"].is_object(),
                "config: backend.prompts must be an object");
        for (const auto& [id, pj] : bj["prompts"].items()) {
            GmmPromptSpec spec;
            spec.mixture = mixture_from_json(pj, cfg.backend.data_sigma, "backend.prompts." + id);
            spec.prior = pj.value("prior", 1.0 / static_cast<double>(bj["prompts"].size()));
            cfg.backend.prompts.emplace(id, std::move(spec));
        }
        if (bj.contains("null") && !bj["null"].is_string()) {
            cfg.backend.explicit_null =
                mixture_from_json(bj["null"], cfg.backend.data_sigma, "backend.null");
        } else if (bj.contains("null")) {
            require(bj["null"].get<std::string>() == "marginal",
                    "config: backend.null must be \"marginal\" or a mixture object");
        }

        require(j.contains("source_prompt") && j.contains("target_prompt"),
                "config: source_prompt and target_prompt are required");
        cfg.source_prompt = j["source_prompt"].get<std::string>();
        cfg.target_prompt = j["target_prompt"].get<std::string>();

        require(j.contains("source_image"), "config: source_image is required");
        cfg.source_image = array_from_json(j["source_image"], "source_image");
        if (j.contains("init_theta")) {
            cfg.init_theta = array_from_json(j["init_theta"], "init_theta");
        }

        if (j.contains("image_shape")) {
            const auto& sj = j["image_shape"];
            require(sj.is_array() && sj.size() == 2, "config: image_shape must be [rows, cols]");
            cfg.image_shape = std::make_pair(sj[0].get<int>(), sj[1].get<int>());
        }
        if (j.contains("regions")) {
            for (const auto& [name, rj] : j["regions"].items()) {
                std::vector<int> idx;
                for (const auto& v : rj) {
                    idx.push_back(v.get<int>());
                }
                cfg.regions.emplace(name, std::move(idx));
            }
        }
        if (j.contains("metrics")) {
            for (const auto& m : j["metrics"]) {
                cfg.metrics.push_back(m.get<std::string>());
            }
        } else {
            cfg.metrics = {"mse", "region_mse"};
        }
        if (j.contains("output")) {
            cfg.png_vmin = j["output"].value("vmin", cfg.png_vmin);
            cfg.png_vmax = j["output"].value("vmax", cfg.png_vmax);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }

    cfg.validate();
    return cfg;
}

std::string edit_config_to_json(const EditConfig& cfg) {
    ordered_json j;
    j["run_id"] = cfg.run_id;
    j["estimator"] = to_string(cfg.estimator);

    ordered_json wj;
    wj["s"] = cfg.weights.s;
    wj["w_p"] = cfg.weights.w_p;
    wj["w_t"] = cfg.weights.w_t;
    wj["w_e"] = cfg.weights.w_e;
    wj["w_a"] = cfg.weights.w_a;
    wj["w_b"] = cfg.weights.w_b;
    wj["s_I"] = cfg.weights.s_I;
    wj["s_T"] = cfg.weights.s_T;
    wj["id_weight"] = id_weight_to_json(cfg.weights.id_weight);
    j["weights"] = std::move(wj);

    j["schedule"] = {{"num_steps", cfg.schedule_steps},
                     {"beta_min", cfg.beta_min},
                     {"beta_max", cfg.beta_max}};
    j["sampler"] = {{"kind", cfg.sampler_kind == SamplerKind::uniform_random
                                 ? "uniform_random"
                                 : "non_increasing_linear"},
                    {"t_min", cfg.t_min},
                    {"t_max", cfg.t_max}};
    j["total_iters"] = cfg.total_iters;
    j["step_size"] = cfg.step_size;
    j["momentum"] = cfg.momentum;
    j["noise_policy"] = cfg.noise_policy == NoisePolicy::shared ? "shared" : "independent";
    j["seeds"] = {{"noise", cfg.noise_seed}, {"timestep", cfg.timestep_seed}};

    ordered_json bj;
    bj["kind"] = "analytic";
    bj["data_sigma"] = cfg.backend.data_sigma;
    bj["image_cond_radius"] = cfg.backend.image_cond_radius;
    ordered_json pj;
    for (const auto& [id, spec] : cfg.backend.prompts) {
        ordered_json one = mixture_to_json(spec.mixture);
        one["prior"] = spec.prior;
        pj[id] = std::move(one);
    }
    bj["prompts"] = std::move(pj);
    if (cfg.backend.explicit_null) {
        bj["null"] = mixture_to_json(*cfg.backend.explicit_null);
    } else {
        bj["null"] = "marginal";
    }
    j["backend"] = std::move(bj);

    j["source_prompt"] = cfg.source_prompt;
    j["target_prompt"] = cfg.target_prompt;
    j["source_image"] = array_to_json(cfg.source_image);
    if (cfg.init_theta) {
        j["init_theta"] = array_to_json(*cfg.init_theta);
    }
    if (cfg.image_shape) {
        j["image_shape"] = {cfg.image_shape->first, cfg.image_shape->second};
    }
    if (!cfg.regions.empty()) {
        ordered_json rj;
        for (const auto& [name, idx] : cfg.regions) {
            rj[name] = idx;
        }
        j["regions"] = std::move(rj);
    }
    j["metrics"] = cfg.metrics;
    j["output"] = {{"vmin", cfg.png_vmin}, {"vmax", cfg.png_vmax}};
    return j.dump(2);
}

DiffusionSchedule build_schedule(const EditConfig& cfg) {
    return make_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
}

TimestepSampler build_sampler(const EditConfig& cfg) {
    TimestepSampler sampler;
    sampler.kind = cfg.sampler_kind;
    sampler.t_min = cfg.t_min;
    sampler.t_max = cfg.t_max;
    sampler.total_iters = std::max(cfg.total_iters, 1);
    sampler.rng_seed = cfg.timestep_seed;
    return sampler;
}

std::unique_ptr<AnalyticGmmBackend> build_backend(const EditConfig& cfg) {
    std::map<std::string, GmmCondition> table;
    std::vector<std::pair<GmmCondition, double>> weighted;
    for (const auto& [id, spec] : cfg.backend.prompts) {
        table.emplace(id, spec.mixture);
        weighted.emplace_back(spec.mixture, spec.prior);
    }
    GmmCondition null_mix =
        cfg.backend.explicit_null ? *cfg.backend.explicit_null : merge_mixtures(weighted);
    return std::make_unique<AnalyticGmmBackend>(std::move(table), std::move(null_mix),
                                                build_schedule(cfg), cfg.backend.image_cond_radius);
}

EditOutcome run_edit(const EditConfig& cfg) {
    cfg.validate();

    const DiffusionSchedule sched = build_schedule(cfg);
    const TimestepSampler sampler = build_sampler(cfg);
    const auto backend = build_backend(cfg);
    const IdentityGenerator generator;

    EditState state;
    state.theta = cfg.init_theta ? *cfg.init_theta : cfg.source_image;
    state.source_image = cfg.source_image;
    state.source_prompt = Condition::text(cfg.source_prompt);
    state.target_prompt = Condition::text(cfg.target_prompt);
    state.weights = cfg.weights;
    state.estimator = cfg.estimator;

    StepEnv env;
    env.backend = backend.get();
    env.generator = &generator;
    env.sched = &sched;
    env.sampler = &sampler;
    env.noise_seed = cfg.noise_seed;
    env.step_size = cfg.step_size;
    env.noise_policy = cfg.noise_policy;
    env.momentum = cfg.momentum;

    EditOutcome out;
    out.log.reserve(static_cast<std::size_t>(cfg.total_iters));
    for (int i = 0; i < cfg.total_iters; ++i) {
        try {
            auto [next, rec] = step(state, env);
            state = std::move(next);
            out.log.push_back(rec);
        } catch (const NonFiniteGradientError& e) {
            out.status = EditOutcome::Status::aborted;
            out.abort_reason = e.what();
            break;
        }
    }
    out.final_theta = state.theta;
    out.final_image = generator.render(state.theta);
    return out;
}

}  // namespace sdistill
