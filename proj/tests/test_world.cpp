#include "sonate/world.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "sonate/dataset.hpp"
#include "sonate/metrics.hpp"

using namespace sonate;

TEST_CASE("build_world is deterministic per seed", "[world]") {
    const WorldSpec a = build_world(WorldConfig{}, 5);
    const WorldSpec b = build_world(WorldConfig{}, 5);
    CHECK(a.codebook == b.codebook);
    CHECK(a.timbre_bank == b.timbre_bank);
    const WorldSpec c = build_world(WorldConfig{}, 6);
    CHECK((a.codebook - c.codebook).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("world invariants: timbre cosines and codebook separation", "[world]") {
    WorldConfig cfg;
    cfg.n_speakers = 8;
    cfg.d_audio = 16;
    const WorldSpec w = build_world(cfg, 9);
    for (Eigen::Index i = 0; i < w.timbre_bank.rows(); ++i) {
        CHECK(std::abs(w.timbre_bank.row(i).norm() - 1.0) < 1e-12);
        for (Eigen::Index j = i + 1; j < w.timbre_bank.rows(); ++j)
            CHECK(w.timbre_bank.row(i).dot(w.timbre_bank.row(j)) < 0.8);
    }
    for (Eigen::Index i = 0; i < w.codebook.rows(); ++i)
        for (Eigen::Index j = i + 1; j < w.codebook.rows(); ++j)
            CHECK((w.codebook.row(i) - w.codebook.row(j)).norm() > 0.1);
    // Apertures span [0, 1] uniformly by id.
    CHECK(w.aperture.front() == 0.0);
    CHECK(w.aperture.back() == 1.0);
}

TEST_CASE("world construction guards", "[world]") {
    WorldConfig tiny;
    tiny.alphabet_size = 2;
    CHECK_THROWS_AS(build_world(tiny, 1), Error);
    WorldConfig solo;
    solo.n_speakers = 1;
    CHECK_THROWS_AS(build_world(solo, 1), Error);
}

TEST_CASE("a 3-second clip has 129 audio rows and 9 video rows", "[world]") {
    const WorldSpec w = build_world(WorldConfig{}, 13);
    Rng rng(1);
    SynthRequest req{{0}, {{SpeakerTag::S0, g2p("hello world again")}}, 3.0, 0.0};
    const Quadruplet q = synth_quadruplet(w, req, rng);
    CHECK(q.audio.rows() == 129);
    CHECK(q.audio.cols() == w.cfg.d_audio);
    CHECK(q.video.rows() == 9);
    CHECK(q.video.cols() == w.cfg.d_video);
}

TEST_CASE("synthesis is deterministic per seed and request", "[world]") {
    const WorldSpec w = build_world(WorldConfig{}, 13);
    SynthRequest req{{2}, {{SpeakerTag::S0, g2p("check twice")}}, 1.0, 0.1};
    Rng a(7), b(7);
    const Quadruplet qa = synth_quadruplet(w, req, a);
    const Quadruplet qb = synth_quadruplet(w, req, b);
    CHECK(qa.audio == qb.audio);
    CHECK(qa.video == qb.video);
}

TEST_CASE("too many phonemes for the duration is an error", "[world]") {
    const WorldSpec w = build_world(WorldConfig{}, 13);
    Rng rng(3);
    SynthRequest req{{0}, {{SpeakerTag::S0, g2p("a very long transcript that cannot possibly fit")}},
                     0.4, 0.0};
    CHECK_THROWS_MATCHES(synth_quadruplet(w, req, rng), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::DurationTooShort; }));
}

TEST_CASE("duration consistency holds for random requests", "[world][property]") {
    const WorldSpec w = build_world(WorldConfig{}, 17);
    DatasetOptions opts;
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        opts.duration = 0.5 + rng.uniform() * 2.5;
        const SynthRequest req = random_request(w, opts, rng);
        const Quadruplet q = synth_quadruplet(w, req, rng);
        const double audio_secs = static_cast<double>(q.audio.rows()) / w.cfg.audio_hz;
        const double video_secs = static_cast<double>(q.video.rows()) / w.cfg.video_hz;
        CHECK(std::abs(audio_secs - video_secs) <= 1.0 / w.cfg.video_hz);
    }
}

TEST_CASE("oracle invertibility: clean clips decode to their transcripts", "[world][property]") {
    const WorldSpec w = build_world(WorldConfig{}, 19);
    DatasetOptions opts;
    opts.noise_amplitude = 0.0;
    Rng rng(29);
    for (int trial = 0; trial < 200; ++trial) {
        const SynthRequest req = random_request(w, opts, rng);
        const Quadruplet q = synth_quadruplet(w, req, rng);
        PhonemeSequence truth;
        for (const auto& seg : q.segments)
            truth.ids.insert(truth.ids.end(), seg.phonemes.ids.begin(), seg.phonemes.ids.end());
        const PhonemeSequence decoded =
            decode_phonemes(q.audio, w, static_cast<Eigen::Index>(truth.size()));
        CHECK(token_error_rate(decoded, truth) == 0.0);
    }
}

TEST_CASE("timbre is recoverable from the time-averaged latent", "[world]") {
    const WorldSpec w = build_world(WorldConfig{}, 31);
    Rng rng(37);
    for (int speaker = 0; speaker < w.n_speakers(); ++speaker) {
        SynthRequest req{{speaker}, {{SpeakerTag::S0, g2p("some words here")}}, 1.5, 0.0};
        const Quadruplet q = synth_quadruplet(w, req, rng);
        // Phoneme-average implied by the known uniform stretching.
        const auto n_ph = static_cast<Eigen::Index>(req.segments[0].phonemes.size());
        Vec phoneme_avg = Vec::Zero(w.cfg.d_audio);
        for (Eigen::Index i = 0; i < q.audio.rows(); ++i) {
            const Eigen::Index slot = phoneme_slot_of_row(i, q.audio.rows(), n_ph);
            phoneme_avg += w.codebook.row(req.segments[0].phonemes.ids[slot]).transpose();
        }
        phoneme_avg /= static_cast<double>(q.audio.rows());
        const Vec residual = q.audio.colwise().mean().transpose() - phoneme_avg;
        const Vec expected = w.cfg.timbre_alpha * w.timbre_bank.row(speaker).transpose();
        CHECK(cosine_similarity(residual, expected) > 0.99);
    }
}

TEST_CASE("verification filter bounds, monotonicity and determinism", "[world][property]") {
    Rng rng(43);
    // Any deterministic unit embedding is enough to exercise the filter.
    auto embed = [](const Mat& grid) {
        Vec v = grid.colwise().mean().transpose();
        const double n = v.norm();
        return n > 0 ? Vec(v / n) : Vec(Vec::Unit(grid.cols(), 0));
    };
    std::vector<std::pair<Mat, Mat>> pairs;
    for (int i = 0; i < 30; ++i) pairs.emplace_back(randn(8, 6, rng), randn(8, 6, rng));

    const FilterReport all = verification_filter(pairs, embed, -1.0);
    CHECK(all.accept_rate == 1.0);
    const FilterReport none = verification_filter(pairs, embed, 1.0 + 1e-9);
    CHECK(none.accept_rate == 0.0);

    for (int trial = 0; trial < 20; ++trial) {
        double t1 = rng.uniform(-1.0, 1.0), t2 = rng.uniform(-1.0, 1.0);
        if (t1 > t2) std::swap(t1, t2);
        const FilterReport r1 = verification_filter(pairs, embed, t1);
        const FilterReport r2 = verification_filter(pairs, embed, t2);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            if (r2.rows[i].accepted) CHECK(r1.rows[i].accepted);  // accepted(t2) subset of accepted(t1)
            CHECK(r1.rows[i].score == r2.rows[i].score);          // deterministic scores
        }
    }
}

TEST_CASE("natural noise clips are deterministic and carry the configured scale", "[world]") {
    const WorldSpec w = build_world(WorldConfig{}, 47);
    Rng a(3), b(3);
    const Mat na = natural_noise_clip(w, 43, a);
    const Mat nb = natural_noise_clip(w, 43, b);
    CHECK(na == nb);
    CHECK(rms(na) > 0.0);
    // AR(1) coloring: lag-1 autocorrelation is clearly positive at rho = 0.9.
    double num = 0.0, den = 0.0;
    for (Eigen::Index c = 0; c < na.cols(); ++c) {
        for (Eigen::Index i = 1; i < na.rows(); ++i) {
            num += na(i, c) * na(i - 1, c);
            den += na(i, c) * na(i, c);
        }
    }
    CHECK(num / den > 0.5);
}
