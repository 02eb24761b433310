#include "sdistill/distill.hpp"

#include "sdistill/schedule.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace sdistill;
using testsupport::random_inputs;
using testsupport::vec;

namespace {

// Inputs shared by several worked examples below:
// eps(z,y) = [1,0], eps(z,y_src) = [0,1], eps(z,null) = [0.5,0.5],
// eps(z_hat,null) = [0.2,0.2].
EstimatorInputs worked_example() {
    EstimatorInputs in;
    in.eps_tgt_y = vec({1.0, 0.0});
    in.eps_tgt_src_prompt = vec({0.0, 1.0});
    in.eps_tgt_null = vec({0.5, 0.5});
    in.eps_src_prompt = vec({0.0, 1.0});
    in.eps_src_null = vec({0.2, 0.2});
    in.true_noise = vec({0.0, 0.0});
    in.t = 100;
    return in;
}

}  // namespace

TEST_CASE("sds_grad") {
    EstimatorInputs in = worked_example();

    SUBCASE("perfect prediction gives zero gradient") {
        in.eps_tgt_null = in.eps_tgt_y;  // cfg collapses to the conditional
        in.true_noise = in.eps_tgt_y;
        CHECK(sds_grad(in, 7.5, 1.0).abs().maxCoeff() == 0.0);
    }
    SUBCASE("scale-1 case") {
        const ArrayXd g = sds_grad(in, 1.0, 1.0);
        CHECK(g[0] == 1.0);
        CHECK(g[1] == 0.0);
    }
    SUBCASE("zero weighting") {
        CHECK(sds_grad(in, 7.5, 0.0).abs().maxCoeff() == 0.0);
    }
    SUBCASE("shape mismatch") {
        in.true_noise = vec({0.0});
        CHECK_THROWS_AS(sds_grad(in, 1.0, 1.0), std::invalid_argument);
    }
}

TEST_CASE("dds_grad") {
    EstimatorInputs in = worked_example();

    SUBCASE("matched branches cancel") {
        in.eps_src_prompt = in.eps_tgt_y;
        in.eps_src_null = in.eps_tgt_null;
        CHECK(dds_grad(in, 7.5).abs().maxCoeff() == 0.0);
    }
    SUBCASE("composed difference") {
        // scale 1: branches reduce to the conditionals [1,0] and [0,1]
        const ArrayXd g = dds_grad(in, 1.0);
        CHECK(g[0] == 1.0);
        CHECK(g[1] == -1.0);
    }
    SUBCASE("scale 0 collapses to the unconditional difference") {
        const ArrayXd g = dds_grad(in, 0.0);
        CHECK(g[0] == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(g[1] == doctest::Approx(0.3).epsilon(1e-12));
    }
}

TEST_CASE("csd_grad") {
    EstimatorInputs in = worked_example();

    SUBCASE("identical classifiers cancel") {
        in.eps_tgt_src_prompt = in.eps_tgt_y;
        CHECK(csd_grad(in, 2.5, 2.5).abs().maxCoeff() == 0.0);
    }
    SUBCASE("unit weights subtract the classifiers") {
        const ArrayXd g = csd_grad(in, 1.0, 1.0);
        CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(-1.0).epsilon(1e-15));
    }
    SUBCASE("weights scale linearly") {
        const ArrayXd g = csd_grad(in, 7.5, 7.5);
        CHECK(g[0] == doctest::Approx(7.5).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(-7.5).epsilon(1e-15));
    }
}

TEST_CASE("ssd_grad") {
    EstimatorInputs in = worked_example();

    SUBCASE("worked value at s = 2") {
        const ArrayXd g = ssd_grad(in, 2.0);
        CHECK(g[0] == doctest::Approx(1.8).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(-1.2).epsilon(1e-15));
    }
    SUBCASE("matching prompts leave the trajectory difference") {
        in.eps_tgt_y = in.eps_tgt_src_prompt;
        const ArrayXd g = ssd_grad(in, 3.0);
        CHECK(g[0] == doctest::Approx(-0.2).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("scale 1 with matching target and anchor cancels everything") {
        in.eps_src_null = in.eps_tgt_y;  // null prompts and shared latents
        CHECK(ssd_grad(in, 1.0).abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("ssd_decomposed") {
    EstimatorInputs in = worked_example();

    SUBCASE("worked value matches the combined form") {
        const ArrayXd g = ssd_decomposed(in, 2.0, 1.0);
        CHECK(g[0] == doctest::Approx(1.8).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(-1.2).epsilon(1e-15));
    }
    SUBCASE("dropping the trajectory term leaves the prompt difference") {
        const ArrayXd g = ssd_decomposed(in, 4.0, 0.0);
        CHECK(g[0] == doctest::Approx(4.0).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(-4.0).epsilon(1e-15));
    }
    SUBCASE("all weights off") {
        CHECK(ssd_decomposed(in, 0.0, 0.0).abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("decomposition identity over random draws") {
    testsupport::Rng rng(31337);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const Eigen::Index dim = 1 + (rep % 6);
        EstimatorInputs in = random_inputs(rng, dim);
        const double s = -10.0 + 20.0 * rng.next_unit();
        worst = std::max(worst, (ssd_grad(in, s) - ssd_decomposed(in, s, 1.0)).abs().maxCoeff());
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("dual-classifier regime: zero trajectory weight matches csd_grad") {
    testsupport::Rng rng(90210);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const Eigen::Index dim = 1 + (rep % 5);
        EstimatorInputs in = random_inputs(rng, dim);
        const double w = -8.0 + 16.0 * rng.next_unit();
        worst = std::max(worst,
                         (ssd_decomposed(in, w, 0.0) - csd_grad(in, w, w)).abs().maxCoeff());
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("every estimator is homogeneous in its noise inputs") {
    testsupport::Rng rng(5150);
    for (int rep = 0; rep < 200; ++rep) {
        const Eigen::Index dim = 1 + (rep % 4);
        EstimatorInputs in = random_inputs(rng, dim);
        const double c = -3.0 + 6.0 * rng.next_unit();
        EstimatorInputs scaled = in;
        scaled.eps_tgt_y *= c;
        scaled.eps_tgt_src_prompt *= c;
        scaled.eps_tgt_null *= c;
        scaled.eps_src_prompt *= c;
        scaled.eps_src_null *= c;
        scaled.true_noise *= c;

        CHECK((sds_grad(scaled, 3.5, 0.7) - c * sds_grad(in, 3.5, 0.7)).abs().maxCoeff() <= 1e-12);
        CHECK((dds_grad(scaled, 3.5) - c * dds_grad(in, 3.5)).abs().maxCoeff() <= 1e-12);
        CHECK((csd_grad(scaled, 2.0, 1.5) - c * csd_grad(in, 2.0, 1.5)).abs().maxCoeff() <= 1e-12);
        CHECK((ssd_grad(scaled, 4.0) - c * ssd_grad(in, 4.0)).abs().maxCoeff() <= 1e-12);
        CHECK((ssd_decomposed(scaled, 2.0, 0.5) - c * ssd_decomposed(in, 2.0, 0.5))
                  .abs()
                  .maxCoeff() <= 1e-12);
        CHECK((prompt_align_grad(scaled, 1.5) - c * prompt_align_grad(in, 1.5)).abs().maxCoeff() <=
              1e-12);
    }
}

TEST_CASE("prompt_align_grad") {
    EstimatorInputs in = worked_example();

    SUBCASE("worked value") {
        const ArrayXd g = prompt_align_grad(in, 1.5);
        CHECK(g[0] == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(-0.75).epsilon(1e-15));
    }
    SUBCASE("zero scale") {
        CHECK(prompt_align_grad(in, 0.0).abs().maxCoeff() == 0.0);
    }
    SUBCASE("no classifier signal") {
        in.eps_tgt_null = in.eps_tgt_y;
        CHECK(prompt_align_grad(in, 1.5).abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("id_reg_grad closed form under shared noise") {
    const auto sched = make_schedule(2, 0.36, 0.44);  // alpha_bar[1] = 0.64

    SUBCASE("identical latents") {
        const ArrayXd x0 = vec({0.3, -0.4});
        const ArrayXd eps = vec({0.9, 0.1});
        const ArrayXd xt = add_noise(x0, 1, eps, sched);
        CHECK(id_reg_grad(xt, xt, 0.5).abs().maxCoeff() == 0.0);
    }
    SUBCASE("worked value") {
        const ArrayXd x0 = vec({1.5, 0.5});
        const ArrayXd x0_hat = vec({0.5, -0.5});  // difference [1, 1]
        const ArrayXd eps = vec({-0.3, 0.8});
        const ArrayXd g =
            id_reg_grad(add_noise(x0, 1, eps, sched), add_noise(x0_hat, 1, eps, sched), 0.5);
        CHECK(g[0] == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(g[1] == doctest::Approx(0.4).epsilon(1e-12));
    }
    SUBCASE("zero weight") {
        CHECK(id_reg_grad(vec({1.0}), vec({2.0}), 0.0).abs().maxCoeff() == 0.0);
    }
    SUBCASE("shared-noise identity over random draws") {
        const auto deep = make_schedule(1000, 1e-4, 0.02);
        testsupport::Rng rng(64);
        for (int rep = 0; rep < 200; ++rep) {
            const Eigen::Index dim = 1 + (rep % 4);
            const ArrayXd x0 = rng.gaussian_vector(dim);
            const ArrayXd x0_hat = rng.gaussian_vector(dim);
            const ArrayXd eps = rng.gaussian_vector(dim);
            const int t = rng.next_int(1, 1000);
            const double w = rng.next_unit();
            const ArrayXd g =
                id_reg_grad(add_noise(x0, t, eps, deep), add_noise(x0_hat, t, eps, deep), w);
            const ArrayXd expected = w * std::sqrt(deep.alpha_bar_at(t)) * (x0 - x0_hat);
            CHECK((g - expected).abs().maxCoeff() <= 1e-12);
        }
    }
    SUBCASE("negative weight rejected") {
        CHECK_THROWS_AS(id_reg_grad(vec({1.0}), vec({2.0}), -0.1), std::invalid_argument);
    }
}

TEST_CASE("ip2p_compose") {
    const ArrayXd nn = vec({0.0, 0.0});
    const ArrayXd In = vec({0.4, 0.0});
    const ArrayXd IT = vec({1.0, 0.2});

    SUBCASE("unit scales telescope to the full conditional, bit for bit") {
        const ArrayXd g = ip2p_compose(nn, In, IT, 1.0, 1.0);
        CHECK(g[0] == IT[0]);
        CHECK(g[1] == IT[1]);
    }
    SUBCASE("worked value") {
        const ArrayXd g = ip2p_compose(nn, In, IT, 1.5, 7.5);
        CHECK(g[0] == doctest::Approx(5.1).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(1.5).epsilon(1e-15));
    }
    SUBCASE("zero text scale reduces to image-only guidance") {
        const ArrayXd g = ip2p_compose(nn, In, IT, 1.5, 0.0);
        const ArrayXd cfg = nn + 1.5 * (In - nn);
        CHECK((g - cfg).abs().maxCoeff() <= 1e-15);
    }
}

TEST_CASE("ip2p_edit_grad") {
    const ArrayXd nn = vec({0.0, 0.0});
    const ArrayXd In = vec({0.4, 0.0});
    const ArrayXd IT = vec({1.0, 0.2});

    SUBCASE("unit scales leave conditional minus unconditional") {
        const ArrayXd g = ip2p_edit_grad(nn, In, IT, 1.0, 1.0);
        CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(0.2).epsilon(1e-15));
    }
    SUBCASE("matches the composition minus its constant term") {
        const ArrayXd g = ip2p_edit_grad(nn, In, IT, 1.5, 7.5);
        CHECK(g[0] == doctest::Approx(5.1).epsilon(1e-15));
        CHECK(g[1] == doctest::Approx(1.5).epsilon(1e-15));
    }
    SUBCASE("no conditioning signal") {
        CHECK(ip2p_edit_grad(nn, nn, nn, 1.5, 7.5).abs().maxCoeff() == 0.0);
    }
    SUBCASE("term-by-term split over random draws") {
        testsupport::Rng rng(17);
        for (int rep = 0; rep < 100; ++rep) {
            const Eigen::Index dim = 1 + (rep % 4);
            const ArrayXd a = rng.gaussian_vector(dim);
            const ArrayXd b = rng.gaussian_vector(dim);
            const ArrayXd c = rng.gaussian_vector(dim);
            const double sI = -4.0 + 8.0 * rng.next_unit();
            const double sT = -4.0 + 8.0 * rng.next_unit();
            const ArrayXd whole = ip2p_edit_grad(a, b, c, sI, sT);
            const ArrayXd anchor_term = sI * (b - a);
            const ArrayXd text_term = sT * (c - b);
            CHECK((whole - (anchor_term + text_term)).abs().maxCoeff() == 0.0);
            CHECK((ip2p_compose(a, b, c, sI, sT) - a - whole).abs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("final_grad sums its branches") {
    const auto sched = make_schedule(2, 0.36, 0.44);
    EstimatorInputs in = worked_example();

    GuidanceWeights w;
    w.w_p = 2.0;
    w.w_t = 1.0;
    w.w_e = 1.5;
    w.id_weight = IdWeightSchedule::constant_weight(0.5);

    const ArrayXd x0 = vec({1.5, 0.5});
    const ArrayXd x0_hat = vec({0.5, -0.5});
    const ArrayXd eps = vec({0.1, -0.2});
    const ArrayXd xt = add_noise(x0, 1, eps, sched);
    const ArrayXd xt_hat = add_noise(x0_hat, 1, eps, sched);

    SUBCASE("worked value: decomposed + enhancement + anchor") {
        const ArrayXd g = final_grad(in, xt, xt_hat, w, 0);
        CHECK(g[0] == doctest::Approx(2.95).epsilon(1e-12));
        CHECK(g[1] == doctest::Approx(-1.55).epsilon(1e-12));
    }
    SUBCASE("all branches off") {
        GuidanceWeights off;
        off.w_p = 0.0;
        off.w_t = 0.0;
        off.w_e = 0.0;
        off.id_weight = IdWeightSchedule::constant_weight(0.0);
        CHECK(final_grad(in, xt, xt_hat, off, 0).abs().maxCoeff() == 0.0);
    }
    SUBCASE("reduces to the decomposed form") {
        GuidanceWeights partial = w;
        partial.w_e = 0.0;
        partial.id_weight = IdWeightSchedule::constant_weight(0.0);
        const ArrayXd g = final_grad(in, xt, xt_hat, partial, 0);
        const ArrayXd d = ssd_decomposed(in, 2.0, 1.0);
        CHECK((g - d).abs().maxCoeff() == 0.0);
    }
    SUBCASE("enhancement branch ignores a missing unconditional when off") {
        EstimatorInputs sparse = in;
        sparse.eps_tgt_null = ArrayXd();
        GuidanceWeights no_align = w;
        no_align.w_e = 0.0;
        CHECK_NOTHROW(final_grad(sparse, xt, xt_hat, no_align, 0));
        CHECK_THROWS_AS(final_grad(sparse, xt, xt_hat, w, 0), std::invalid_argument);
    }
}

TEST_CASE("id weight schedules are non-increasing and validated") {
    const auto lin = IdWeightSchedule::linear(1.0, 0.0, 100);
    CHECK(lin.at(0) == 1.0);
    CHECK(lin.at(99) == 0.0);
    CHECK(lin.at(250) == 0.0);
    double prev = lin.at(0);
    for (int i = 1; i < 120; ++i) {
        CHECK(lin.at(i) <= prev);
        prev = lin.at(i);
    }

    auto rising = IdWeightSchedule::linear(0.0, 1.0, 100);
    CHECK_THROWS_AS(rising.validate(), std::invalid_argument);

    auto negative = IdWeightSchedule::constant_weight(-1.0);
    CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
}

TEST_CASE("guidance weights must be finite") {
    GuidanceWeights w;
    w.w_p = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}
