#include "sonate/backbone.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "sonate/model.hpp"

using namespace sonate;

TEST_CASE("timestep embedding: sines zero and cosines one at t = 0", "[backbone]") {
    const Vec e = timestep_embed(0.0, 16);
    for (int k = 0; k < 8; ++k) {
        CHECK(e(k) == 0.0);
        CHECK(e(8 + k) == 1.0);
    }
}

TEST_CASE("timestep embedding is deterministic and injective on t", "[backbone]") {
    CHECK(timestep_embed(0.37, 32) == timestep_embed(0.37, 32));
    const Vec a = timestep_embed(0.3, 32);
    const Vec b = timestep_embed(0.7, 32);
    CHECK((a - b).cwiseAbs().maxCoeff() > 0.0);
    CHECK_THROWS_AS(timestep_embed(0.5, 7), Error);
    CHECK_THROWS_AS(timestep_embed(1.5, 8), Error);
}

TEST_CASE("rope at position 0 is the identity", "[backbone]") {
    Rng rng(1);
    const Mat x = randn(4, 8, rng);
    const std::vector<long> zeros(4, 0L);
    CHECK(rope_rotate(x, zeros) == x);
}

TEST_CASE("rope matches the closed-form 2-D rotation", "[backbone]") {
    // For a width-2 head, theta_0 = base^0 = 1, so the rotation angle at
    // position p is exactly p radians.
    Mat x(1, 2);
    x << 1.0, 0.0;
    for (long p : {1L, 2L, 3L, 10L}) {
        const Mat r = rope_rotate(x, {p}, 12345.0);
        const double angle = static_cast<double>(p);
        CHECK(r(0, 0) == Catch::Approx(std::cos(angle)).margin(1e-9));
        CHECK(r(0, 1) == Catch::Approx(std::sin(angle)).margin(1e-9));
    }
}

TEST_CASE("rope rejects odd head widths", "[backbone]") {
    Rng rng(2);
    CHECK_THROWS_MATCHES(rope_rotate(randn(2, 3, rng), {0L, 1L}), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::OddHeadWidth; }));
}

TEST_CASE("rope shift invariance of inner products", "[backbone][property]") {
    Rng rng(3);
    const double base = 10000.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Mat q = randn(1, 16, rng);
        const Mat k = randn(1, 16, rng);
        const long m = static_cast<long>(rng.uniform_index(50));
        const long n = static_cast<long>(rng.uniform_index(50));
        const long s = static_cast<long>(rng.uniform_index(30));
        const double base_dot =
            (rope_rotate(q, {m}, base).row(0)).dot(rope_rotate(k, {n}, base).row(0));
        const double shifted_dot =
            (rope_rotate(q, {m + s}, base).row(0)).dot(rope_rotate(k, {n + s}, base).row(0));
        CHECK(std::abs(base_dot - shifted_dot) < 1e-5);
    }
}

TEST_CASE("backbone config invariants", "[backbone]") {
    BackboneConfig bad;
    bad.width = 130;  // not divisible by 4 heads
    CHECK_THROWS_AS(bad.validate(), Error);
    BackboneConfig odd;
    odd.width = 12;
    odd.heads = 6;  // head width 2 is fine; heads=4 width=12 -> head width 3 is odd
    CHECK_NOTHROW(odd.validate());
    odd.heads = 4;
    CHECK_THROWS_AS(odd.validate(), Error);
}

namespace {

struct ForwardFixture {
    BackboneConfig cfg{.depth = 2, .width = 32, .heads = 2, .d_audio = 6, .d_video = 4};
    SonateModel model{cfg, 99};
    InstructionBundle bundle =
        parse_instruction("video: a mid bright face\naudio: a mid bright voice\ntext: abc");
    Eigen::Index t_audio = 15;
    Eigen::Index t_video = 2;

    PreparedConditions conditions(MaskFlags flags = MaskFlags::t2va()) const {
        return model.build_conditions(bundle, {}, std::nullopt, flags, t_audio);
    }
};

}  // namespace

TEST_CASE("dit_forward output shapes mirror the latent inputs", "[backbone]") {
    const ForwardFixture fx;
    Rng rng(5);
    const Mat xa = randn(fx.t_audio, fx.cfg.d_audio, rng);
    const Mat xv = randn(fx.t_video, fx.cfg.d_video, rng);
    const auto pc = fx.conditions();
    const VelocityPrediction out =
        dit_forward(fx.model.backbone(), xa, xv, 0.3, pc.cond, pc.phoneme_positions);
    CHECK(out.v_audio.rows() == fx.t_audio);
    CHECK(out.v_audio.cols() == fx.cfg.d_audio);
    CHECK(out.v_video.rows() == fx.t_video);
    CHECK(out.v_video.cols() == fx.cfg.d_video);
}

TEST_CASE("dit_forward is deterministic given weights and inputs", "[backbone]") {
    const ForwardFixture fx;
    Rng rng(6);
    const Mat xa = randn(fx.t_audio, fx.cfg.d_audio, rng);
    const Mat xv = randn(fx.t_video, fx.cfg.d_video, rng);
    const auto pc = fx.conditions();
    const auto a = dit_forward(fx.model.backbone(), xa, xv, 0.5, pc.cond, pc.phoneme_positions);
    const auto b = dit_forward(fx.model.backbone(), xa, xv, 0.5, pc.cond, pc.phoneme_positions);
    CHECK(a.v_audio == b.v_audio);
    CHECK(a.v_video == b.v_video);
}

TEST_CASE("changing one phoneme id changes the audio velocity at random init", "[backbone]") {
    const ForwardFixture fx;
    Rng rng(7);
    const Mat xa = randn(fx.t_audio, fx.cfg.d_audio, rng);
    const Mat xv = randn(fx.t_video, fx.cfg.d_video, rng);
    auto bundle_b = fx.bundle;
    bundle_b.segments[0].phonemes.ids[1] = (bundle_b.segments[0].phonemes.ids[1] + 1) % 26;
    const auto pa = fx.conditions();
    const auto pb = fx.model.build_conditions(bundle_b, {}, std::nullopt, MaskFlags::t2va(), fx.t_audio);
    const auto va = dit_forward(fx.model.backbone(), xa, xv, 0.4, pa.cond, pa.phoneme_positions);
    const auto vb = dit_forward(fx.model.backbone(), xa, xv, 0.4, pb.cond, pb.phoneme_positions);
    CHECK((va.v_audio - vb.v_audio).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("permuting audio token order changes the output (RoPE)", "[backbone]") {
    const ForwardFixture fx;
    Rng rng(8);
    const Mat xa = randn(fx.t_audio, fx.cfg.d_audio, rng);
    const Mat xv = randn(fx.t_video, fx.cfg.d_video, rng);
    Mat xa_perm = xa;
    xa_perm.row(0).swap(xa_perm.row(fx.t_audio - 1));
    const auto pc = fx.conditions();
    const auto va = dit_forward(fx.model.backbone(), xa, xv, 0.4, pc.cond, pc.phoneme_positions);
    const auto vb = dit_forward(fx.model.backbone(), xa_perm, xv, 0.4, pc.cond, pc.phoneme_positions);
    // Compare the un-permuted interior rows: a permutation-invariant model
    // would leave them untouched.
    CHECK((va.v_audio.middleRows(1, fx.t_audio - 2) - vb.v_audio.middleRows(1, fx.t_audio - 2))
              .cwiseAbs()
              .maxCoeff() > 0.0);
}

TEST_CASE("condition width mismatches are rejected", "[backbone]") {
    const ForwardFixture fx;
    Rng rng(9);
    const Mat xa = randn(fx.t_audio, fx.cfg.d_audio + 1, rng);
    const auto pc = fx.conditions();
    CHECK_THROWS_AS(
        dit_forward(fx.model.backbone(), xa, Mat(randn(2, 4, rng)), 0.3, pc.cond, pc.phoneme_positions),
        Error);
}
