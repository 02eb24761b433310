#include "sdistill/distill.hpp"

#include "sdistill/denoiser.hpp"

#include <cmath>

namespace sdistill {

double IdWeightSchedule::at(int iter) const {
    require(iter >= 0, "id weight: iteration must be non-negative");
    switch (kind) {
        case Kind::constant:
            return value;
        case Kind::linear_decay: {
            if (horizon <= 1) {
                return iter == 0 ? start : end;
            }
            const int k = std::min(iter, horizon - 1);
            const double frac = static_cast<double>(k) / static_cast<double>(horizon - 1);
            return start + (end - start) * frac;
        }
    }
    throw std::logic_error("id weight: unknown schedule kind");
}

void IdWeightSchedule::validate() const {
    switch (kind) {
        case Kind::constant:
            require(std::isfinite(value) && value >= 0.0, "id weight must be finite and >= 0");
            return;
        case Kind::linear_decay:
            require(std::isfinite(start) && std::isfinite(end), "id weight bounds must be finite");
            require(start >= end, "id weight must be non-increasing");
            require(end >= 0.0, "id weight must stay >= 0");
            require(horizon >= 1, "id weight horizon must be positive");
            return;
    }
    throw std::logic_error("id weight: unknown schedule kind");
}

void GuidanceWeights::validate() const {
    for (double w : {s, w_p, w_t, w_e, w_a, w_b, s_I, s_T}) {
        require(std::isfinite(w), "guidance weights must be finite");
    }
    id_weight.validate();
}

ArrayXd sds_grad(const EstimatorInputs& in, double scale, double wt) {
    require_same_shape(in.eps_tgt_y, in.eps_tgt_null, "sds_grad");
    require_same_shape(in.eps_tgt_y, in.true_noise, "sds_grad");
    return wt * (cfg_compose(in.eps_tgt_y, in.eps_tgt_null, scale) - in.true_noise);
}

ArrayXd dds_grad(const EstimatorInputs& in, double scale) {
    require_same_shape(in.eps_tgt_y, in.eps_tgt_null, "dds_grad");
    require_same_shape(in.eps_src_prompt, in.eps_src_null, "dds_grad");
    require_same_shape(in.eps_tgt_y, in.eps_src_prompt, "dds_grad");
    return cfg_compose(in.eps_tgt_y, in.eps_tgt_null, scale) -
           cfg_compose(in.eps_src_prompt, in.eps_src_null, scale);
}

ArrayXd csd_grad(const EstimatorInputs& in, double w_a, double w_b) {
    require_same_shape(in.eps_tgt_y, in.eps_tgt_null, "csd_grad");
    require_same_shape(in.eps_tgt_src_prompt, in.eps_tgt_null, "csd_grad");
    return w_a * (in.eps_tgt_y - in.eps_tgt_null) - w_b * (in.eps_tgt_src_prompt - in.eps_tgt_null);
}

ArrayXd ssd_grad(const EstimatorInputs& in, double s) {
    require_same_shape(in.eps_tgt_y, in.eps_tgt_src_prompt, "ssd_grad");
    require_same_shape(in.eps_tgt_src_prompt, in.eps_src_null, "ssd_grad");
    return in.eps_tgt_src_prompt + s * (in.eps_tgt_y - in.eps_tgt_src_prompt) - in.eps_src_null;
}

ArrayXd ssd_decomposed(const EstimatorInputs& in, double w_p, double w_t) {
    require_same_shape(in.eps_tgt_y, in.eps_tgt_src_prompt, "ssd_decomposed");
    require_same_shape(in.eps_tgt_src_prompt, in.eps_src_null, "ssd_decomposed");
    return w_p * (in.eps_tgt_y - in.eps_tgt_src_prompt) +
           w_t * (in.eps_tgt_src_prompt - in.eps_src_null);
}

ArrayXd prompt_align_grad(const EstimatorInputs& in, double w_e) {
    require_same_shape(in.eps_tgt_y, in.eps_tgt_null, "prompt_align_grad");
    return w_e * (in.eps_tgt_y - in.eps_tgt_null);
}

ArrayXd id_reg_grad(const ArrayXd& x_t, const ArrayXd& x_hat_t, double weight) {
    require_same_shape(x_t, x_hat_t, "id_reg_grad");
    require(std::isfinite(weight) && weight >= 0.0, "id_reg_grad: weight must be finite and >= 0");
    return weight * (x_t - x_hat_t);
}

ArrayXd ip2p_compose(const ArrayXd& eps_nn, const ArrayXd& eps_In, const ArrayXd& eps_IT,
                     double s_I, double s_T) {
    require_same_shape(eps_nn, eps_In, "ip2p_compose");
    require_same_shape(eps_In, eps_IT, "ip2p_compose");
    return (1.0 - s_I) * eps_nn + (s_I - s_T) * eps_In + s_T * eps_IT;
}

ArrayXd ip2p_edit_grad(const ArrayXd& eps_nn, const ArrayXd& eps_In, const ArrayXd& eps_IT,
                       double s_I, double s_T) {
    require_same_shape(eps_nn, eps_In, "ip2p_edit_grad");
    require_same_shape(eps_In, eps_IT, "ip2p_edit_grad");
    return s_I * (eps_In - eps_nn) + s_T * (eps_IT - eps_In);
}

ArrayXd final_grad(const EstimatorInputs& in, const ArrayXd& x_t, const ArrayXd& x_hat_t,
                   const GuidanceWeights& weights, int iter) {
    weights.validate();
    ArrayXd grad = ssd_decomposed(in, weights.w_p, weights.w_t);
    // The enhancement branch needs eps(z, null); with w_e = 0 that prediction
    // is never gathered, so the branch is skipped rather than zero-multiplied.
    if (weights.w_e != 0.0) {
        grad += prompt_align_grad(in, weights.w_e);
    }
    grad += id_reg_grad(x_t, x_hat_t, weights.id_weight.at(iter));
    return grad;
}

}  // namespace sdistill
