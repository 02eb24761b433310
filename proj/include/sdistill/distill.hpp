#pragma once

#include "sdistill/common.hpp"

namespace sdistill {

// Iteration-indexed weight for the latent anchor term. Kept as a small
// serializable schedule (rather than an arbitrary callback) so run manifests
// can reproduce it exactly. Must be non-increasing.
struct IdWeightSchedule {
    enum class Kind {
        constant,
        linear_decay,
    };

    Kind kind = Kind::constant;
    double value = 0.0;   // constant
    double start = 1.0;   // linear_decay
    double end = 0.0;     // linear_decay
    int horizon = 1;      // linear_decay: iterations over which start -> end

    static IdWeightSchedule constant_weight(double v) {
        IdWeightSchedule s;
        s.kind = Kind::constant;
        s.value = v;
        return s;
    }

    static IdWeightSchedule linear(double start, double end, int horizon) {
        IdWeightSchedule s;
        s.kind = Kind::linear_decay;
        s.start = start;
        s.end = end;
        s.horizon = horizon;
        return s;
    }

    double at(int iter) const;
    void validate() const;
};

// All scalar knobs shared by the estimators.
//   s          guidance / editing scale
//   w_p, w_t   cross-prompt and cross-trajectory strengths
//   w_e        prompt-enhancement scale
//   w_a, w_b   dual-classifier weights
//   s_I, s_T   image / instruction strengths for dual-condition backends
struct GuidanceWeights {
    double s = 7.5;
    double w_p = 7.5;
    double w_t = 1.0;
    double w_e = 0.0;
    double w_a = 7.5;
    double w_b = 7.5;
    double s_I = 1.5;
    double s_T = 7.5;
    IdWeightSchedule id_weight;

    void validate() const;
};

// One iteration's worth of noise predictions. z is the noised current
// render, z_hat the noised (frozen) source image. Fields an estimator does
// not use may be left empty.
struct EstimatorInputs {
    ArrayXd eps_tgt_y;           // eps(z, target prompt)
    ArrayXd eps_tgt_src_prompt;  // eps(z, source prompt)
    ArrayXd eps_tgt_null;        // eps(z, null)
    ArrayXd eps_src_prompt;      // eps(z_hat, source prompt)
    ArrayXd eps_src_null;        // eps(z_hat, null)
    ArrayXd true_noise;          // the eps injected when forming z
    int t = 0;
};

// wt * (cfg(eps_tgt_y, eps_tgt_null, scale) - true_noise)
ArrayXd sds_grad(const EstimatorInputs& in, double scale, double wt);

// cfg(target branch) - cfg(source branch), both at the same scale
ArrayXd dds_grad(const EstimatorInputs& in, double scale);

// w_a * (eps(z,y) - eps(z,null)) - w_b * (eps(z,y_src) - eps(z,null));
// both classifiers are evaluated on the current latent
ArrayXd csd_grad(const EstimatorInputs& in, double w_a, double w_b);

// eps(z,y_src) + s * (eps(z,y) - eps(z,y_src)) - eps(z_hat,null)
ArrayXd ssd_grad(const EstimatorInputs& in, double s);

// w_p * (eps(z,y) - eps(z,y_src)) + w_t * (eps(z,y_src) - eps(z_hat,null));
// equals ssd_grad when w_p = s and w_t = 1
ArrayXd ssd_decomposed(const EstimatorInputs& in, double w_p, double w_t);

// w_e * (eps(z,y) - eps(z,null))
ArrayXd prompt_align_grad(const EstimatorInputs& in, double w_e);

// weight * (x_t - x_hat_t); with both latents noised by the same eps this is
// weight * sqrt(alpha_bar) * (x0 - x0_hat)
ArrayXd id_reg_grad(const ArrayXd& x_t, const ArrayXd& x_hat_t, double weight);

// One-step dual-guidance composition:
// eps_nn + s_I*(eps_In - eps_nn) + s_T*(eps_IT - eps_In), evaluated in
// barycentric form so s_I = s_T = 1 returns eps_IT bit-exactly.
ArrayXd ip2p_compose(const ArrayXd& eps_nn, const ArrayXd& eps_In, const ArrayXd& eps_IT,
                     double s_I, double s_T);

// The editing direction of the composition: the fully-unconditional term is
// dropped, leaving an image-anchor addend and a text addend.
ArrayXd ip2p_edit_grad(const ArrayXd& eps_nn, const ArrayXd& eps_In, const ArrayXd& eps_IT,
                       double s_I, double s_T);

// ssd_decomposed + prompt_align_grad + id_reg_grad(weights.id_weight at iter)
ArrayXd final_grad(const EstimatorInputs& in, const ArrayXd& x_t, const ArrayXd& x_hat_t,
                   const GuidanceWeights& weights, int iter);

}  // namespace sdistill
