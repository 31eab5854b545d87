#include "sonate/flow.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "sonate/model.hpp"

using namespace sonate;
using namespace sonate::testing;

TEST_CASE("OT path endpoints are exact", "[flow]") {
    Rng rng(3);
    const Mat x0 = randn(4, 3, rng);
    const Mat x1 = randn(4, 3, rng);
    CHECK(ot_interpolate(x0, x1, 0.0) == x0);
    CHECK(ot_interpolate(x0, x1, 1.0) == x1);
    Mat a(1, 1), b(1, 1);
    a << 0.0;
    b << 2.0;
    CHECK(ot_interpolate(a, b, 0.5)(0, 0) == 1.0);
    CHECK_THROWS_AS(ot_interpolate(x0, Mat(randn(3, 3, rng)), 0.5), Error);
}

TEST_CASE("target velocity is x1 - x0 and independent of t", "[flow]") {
    Rng rng(5);
    const Mat x = randn(3, 2, rng);
    CHECK(target_velocity(x, x).isZero(0.0));
    Mat a(1, 1), b(1, 1);
    a << 1.0;
    b << 3.0;
    CHECK(target_velocity(a, b)(0, 0) == 2.0);
    const Mat y = randn(3, 2, rng);
    CHECK(target_velocity(x, y, 0.1) == target_velocity(x, y, 0.9));
}

TEST_CASE("target velocity matches d/dt of the interpolant by finite differences", "[flow]") {
    Rng rng(7);
    const Mat x0 = randn(5, 4, rng);
    const Mat x1 = randn(5, 4, rng);
    const double h = 1e-6;
    for (double t : {0.3, 0.5, 0.7}) {
        const Mat numeric = (ot_interpolate(x0, x1, t + h) - ot_interpolate(x0, x1, t - h)) / (2 * h);
        CHECK((numeric - target_velocity(x0, x1, t)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("cfm loss is zero for the oracle stub and 2.0 for the +1 offset stub", "[flow]") {
    Rng rng(11);
    FrozenItem<NoCond> item;
    item.audio = FlowSample::make(randn(6, 4, rng), randn(6, 4, rng), 0.4);
    item.video = FlowSample::make(randn(2, 3, rng), randn(2, 3, rng), 0.4);

    const ConstantStub oracle{item.audio.u, item.video.u};
    CHECK(cfm_loss_frozen(oracle, std::vector<FrozenItem<NoCond>>{item})->val(0, 0) == 0.0);

    const ConstantStub offset{Mat(item.audio.u.array() + 1.0), Mat(item.video.u.array() + 1.0)};
    CHECK(cfm_loss_frozen(offset, std::vector<FrozenItem<NoCond>>{item})->val(0, 0) ==
          Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("cfm loss is nonnegative for random stubs and batches", "[flow][property]") {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        FrozenItem<NoCond> item;
        item.audio = FlowSample::make(randn(3, 2, rng), randn(3, 2, rng), rng.uniform());
        item.video = FlowSample::make(randn(2, 2, rng), randn(2, 2, rng), rng.uniform());
        const ConstantStub stub{randn(3, 2, rng), randn(2, 2, rng)};
        CHECK(cfm_loss_frozen(stub, std::vector<FrozenItem<NoCond>>{item})->val(0, 0) >= 0.0);
    }
}

TEST_CASE("cfg_combine identities", "[flow]") {
    Rng rng(17);
    const Mat vc = randn(4, 4, rng);
    const Mat vu = randn(4, 4, rng);
    CHECK(cfg_combine(vc, vu, 1.0) == vc);  // bit-exact branch
    CHECK(cfg_combine(vc, vu, 0.0) == vu);
    Mat a(1, 1), b(1, 1);
    a << 2.0;
    b << 0.0;
    CHECK(cfg_combine(a, b, 3.0)(0, 0) == 6.0);
    // Affine identity: both branches equal leaves the field unchanged.
    for (double w : {0.0, 0.7, 1.0, 3.5}) {
        CHECK((cfg_combine(vc, vc, w) - vc).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("Euler matches the closed-form product on v = -x", "[flow]") {
    const DecayStub stub;
    SamplerConfig cfg;
    cfg.steps = 20;
    Mat one(1, 1);
    one << 1.0;
    const LatentClip out = euler_integrate(stub, NoCond{}, NoCond{}, cfg, {one, Mat(0, 0)});
    CHECK(out.audio(0, 0) == Catch::Approx(std::pow(0.95, 20)).margin(1e-12));
    CHECK(out.audio(0, 0) == Catch::Approx(0.358486).margin(1e-6));
}

TEST_CASE("Euler is exact for constant fields", "[flow]") {
    Rng rng(19);
    const Mat c = randn(3, 2, rng);
    const ConstantStub stub{c, Mat(0, 0)};
    SamplerConfig cfg;
    cfg.steps = 20;
    const Mat init = randn(3, 2, rng);
    const LatentClip out = euler_integrate(stub, NoCond{}, NoCond{}, cfg, {init, Mat(0, 0)});
    CHECK((out.audio - (init + c)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("w = 1 trajectory ignores the negative branch bit for bit", "[flow]") {
    Rng rng(23);
    const Mat cond_v = randn(2, 2, rng);
    SamplerConfig cfg;
    cfg.steps = 20;
    cfg.guidance_w = 1.0;
    const Mat init = randn(2, 2, rng);
    // Two arbitrary, different negative fields; at w = 1 both trajectories
    // must equal conditional-only integration exactly.
    const BranchProbeStub stub_a{cond_v, randn(2, 2, rng)};
    const BranchProbeStub stub_b{cond_v, randn(2, 2, rng)};
    const LatentClip ga = euler_integrate(stub_a, true, false, cfg, {init, Mat(0, 0)});
    const LatentClip gb = euler_integrate(stub_b, true, false, cfg, {init, Mat(0, 0)});
    const ConstantStub cond_only{cond_v, Mat(0, 0)};
    const LatentClip plain = euler_integrate(cond_only, NoCond{}, NoCond{}, cfg, {init, Mat(0, 0)});
    CHECK(ga.audio == plain.audio);
    CHECK(gb.audio == plain.audio);
}

TEST_CASE("Euler endpoint error halves as steps double", "[flow]") {
    const DecayStub stub;
    Mat one(1, 1);
    one << 1.0;
    const double truth = std::exp(-1.0);
    double prev_err = 0.0;
    std::vector<double> errors;
    for (int steps : {20, 40, 80}) {
        SamplerConfig cfg;
        cfg.steps = steps;
        const LatentClip out = euler_integrate(stub, NoCond{}, NoCond{}, cfg, {one, Mat(0, 0)});
        errors.push_back(std::abs(out.audio(0, 0) - truth));
    }
    for (std::size_t i = 1; i < errors.size(); ++i) {
        const double ratio = errors[i - 1] / errors[i];
        CHECK(ratio > 1.6);
        CHECK(ratio < 2.4);
    }
    (void)prev_err;
}

TEST_CASE("euler_sample is deterministic per seed", "[flow]") {
    Rng rng(29);
    const ConstantStub stub{Mat(Mat::Ones(3, 2)), Mat(Mat::Ones(2, 2))};
    SamplerConfig cfg;
    cfg.steps = 5;
    const LatentShape shape{3, 2, 2, 2};
    Rng a(99), b(99);
    const LatentClip ca = euler_sample(stub, NoCond{}, NoCond{}, cfg, shape, a);
    const LatentClip cb = euler_sample(stub, NoCond{}, NoCond{}, cfg, shape, b);
    CHECK(ca.audio == cb.audio);
    CHECK(ca.video == cb.video);
    (void)rng;
}

TEST_CASE("gradient check passes on a reduced joint model", "[flow][slow]") {
    const BackboneConfig cfg{.depth = 2, .width = 32, .heads = 2, .d_audio = 6, .d_video = 4};
    SonateModel model(cfg, 31);
    const auto specs = model_batch_specs(model, 2, 12, 2, 37);
    auto params = model.params();
    auto loss_fn = [&] { return model_batch_loss(model, specs); };
    Rng probe(41);
    const double rel = finite_diff_gradcheck(params, loss_fn, 60, 1e-4, probe);
    INFO("max relative error " << rel);
    CHECK(rel < 1e-4);
}
