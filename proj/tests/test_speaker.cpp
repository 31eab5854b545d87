#include "sonate/speaker.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <map>

#include "sonate/dataset.hpp"

using namespace sonate;

namespace {

struct EncoderFixture {
    WorldSpec world;
    std::vector<std::pair<Mat, int>> train_set;
    std::vector<std::pair<Mat, int>> heldout_set;
    SpeakerEncoder encoder;
    SpeakerTrainReport report;

    EncoderFixture(int speakers = 8, int train_clips = 50, int heldout_clips = 10) {
        WorldConfig wc;
        wc.n_speakers = speakers;
        world = build_world(wc, 11);
        DatasetOptions opts;
        opts.duration = 1.0;
        opts.dialogue_fraction = 0.0;
        auto make_clip = [&](int speaker, std::uint64_t stream) {
            Rng rng(derive_seed(3, stream));
            SynthRequest req = random_request(world, opts, rng);
            req.speakers = {speaker};
            return synth_quadruplet(world, req, rng).audio;
        };
        std::uint64_t stream = 0;
        for (int s = 0; s < speakers; ++s)
            for (int i = 0; i < train_clips; ++i) train_set.emplace_back(make_clip(s, stream++), s);
        for (int s = 0; s < speakers; ++s)
            for (int i = 0; i < heldout_clips; ++i) heldout_set.emplace_back(make_clip(s, stream++), s);

        SpeakerEncoderConfig cfg;
        cfg.d_audio = world.cfg.d_audio;
        cfg.embed_dim = 64;
        cfg.steps = 400;
        encoder = train_speaker_encoder(train_set, cfg, 21, &report);
    }
};

const EncoderFixture& fixture() {
    static const EncoderFixture fx;
    return fx;
}

}  // namespace

TEST_CASE("speaker encoder reaches high held-out accuracy", "[speaker][slow]") {
    const auto& fx = fixture();
    CHECK(fx.report.train_accuracy > 0.9);

    // Nearest-centroid classification of held-out clips in embedding space.
    std::map<int, Vec> centroids;
    std::map<int, int> counts;
    for (const auto& [grid, label] : fx.train_set) {
        const Vec e = fx.encoder.embed(grid).values;
        auto [it, fresh] = centroids.try_emplace(label, Vec(Vec::Zero(e.size())));
        it->second += e;
        counts[label]++;
    }
    for (auto& [label, c] : centroids) c /= counts[label];
    int correct = 0;
    for (const auto& [grid, label] : fx.heldout_set) {
        const Vec e = fx.encoder.embed(grid).values;
        int best = -1;
        double best_cos = -2.0;
        for (const auto& [cl, centroid] : centroids) {
            const double cs = cosine_similarity(e, centroid);
            if (cs > best_cos) {
                best_cos = cs;
                best = cl;
            }
        }
        correct += best == label ? 1 : 0;
    }
    const double heldout_acc = static_cast<double>(correct) / fx.heldout_set.size();
    INFO("held-out accuracy " << heldout_acc);
    CHECK(heldout_acc > 0.9);
}

TEST_CASE("same-speaker cosine exceeds cross-speaker cosine on held-out clips", "[speaker][slow]") {
    const auto& fx = fixture();
    double same = 0.0, cross = 0.0;
    int n_same = 0, n_cross = 0;
    for (std::size_t i = 0; i < fx.heldout_set.size(); ++i) {
        for (std::size_t j = i + 1; j < fx.heldout_set.size(); ++j) {
            const double cs = cosine_similarity(fx.encoder.embed(fx.heldout_set[i].first).values,
                                                fx.encoder.embed(fx.heldout_set[j].first).values);
            if (fx.heldout_set[i].second == fx.heldout_set[j].second) {
                same += cs;
                ++n_same;
            } else {
                cross += cs;
                ++n_cross;
            }
        }
    }
    CHECK(same / n_same > cross / n_cross + 0.2);
}

TEST_CASE("speaker embeddings are unit norm and deterministic", "[speaker]") {
    const auto& fx = fixture();
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const Mat grid = randn(20, fx.world.cfg.d_audio, rng);
        const SpeakerEmbedding a = fx.encoder.embed(grid);
        const SpeakerEmbedding b = fx.encoder.embed(grid);
        CHECK(std::abs(a.values.norm() - 1.0) < 1e-6);
        CHECK(a.values == b.values);
    }
    CHECK_THROWS_AS(fx.encoder.embed(Mat(0, fx.world.cfg.d_audio)), Error);
}

TEST_CASE("encoder training is deterministic per seed and data", "[speaker][slow]") {
    const auto& fx = fixture();
    SpeakerEncoderConfig cfg;
    cfg.d_audio = fx.world.cfg.d_audio;
    cfg.embed_dim = 32;
    cfg.steps = 50;
    SpeakerEncoder a = train_speaker_encoder(fx.train_set, cfg, 5);
    SpeakerEncoder b = train_speaker_encoder(fx.train_set, cfg, 5);
    auto pa = a.params();
    auto pb = b.params();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->val == pb[i]->val);
}

TEST_CASE("insufficient data is rejected", "[speaker]") {
    Rng rng(7);
    std::vector<std::pair<Mat, int>> single;
    for (int i = 0; i < 20; ++i) single.emplace_back(randn(10, 16, rng), 0);
    CHECK_THROWS_MATCHES(train_speaker_encoder(single, SpeakerEncoderConfig{}, 1), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::InsufficientData; }));
    std::vector<std::pair<Mat, int>> sparse = single;
    for (int i = 0; i < 5; ++i) sparse.emplace_back(randn(10, 16, rng), 1);
    CHECK_THROWS_AS(train_speaker_encoder(sparse, SpeakerEncoderConfig{}, 1), Error);
}

TEST_CASE("exactly eight distinct strategies with increasing gaussian RMS", "[speaker]") {
    const auto strategies = all_negative_strategies();
    REQUIRE(strategies.size() == 8);
    std::vector<std::string> names;
    for (const auto& s : strategies) names.push_back(s.name());
    std::sort(names.begin(), names.end());
    CHECK(std::unique(names.begin(), names.end()) == names.end());
    const auto& levels = gaussian_rms_levels();
    REQUIRE(levels.size() == 6);
    for (std::size_t i = 1; i < levels.size(); ++i) CHECK(levels[i] > levels[i - 1]);
    CHECK(strategies.front().kind == NegativeStrategy::Kind::Zero);
    CHECK(strategies.back().kind == NegativeStrategy::Kind::Natural);
    for (const auto& s : strategies) CHECK(parse_strategy(s.name()).name() == s.name());
    CHECK_THROWS_AS(parse_strategy("gauss9"), Error);
}

TEST_CASE("negative embeddings per strategy", "[speaker][slow]") {
    const auto& fx = fixture();
    Rng rng(41);

    SECTION("zero strategy is the exact zero sentinel") {
        const auto e = negative_embedding({NegativeStrategy::Kind::Zero, 0, 0.0}, fx.encoder, &fx.world, rng);
        CHECK(e.values.isZero(0.0));
        CHECK(e.is_zero_sentinel());
    }
    SECTION("gaussian noise grids hit their target RMS exactly") {
        for (const auto& s : all_negative_strategies()) {
            if (s.kind != NegativeStrategy::Kind::Gaussian) continue;
            const Mat grid = gaussian_noise_grid(43, 16, s.gaussian_rms, rng);
            CHECK(rms(grid) == Catch::Approx(s.gaussian_rms).epsilon(1e-2));
            const auto e = negative_embedding(s, fx.encoder, &fx.world, rng);
            CHECK(std::abs(e.values.norm() - 1.0) < 1e-6);
        }
    }
    SECTION("natural strategy yields a unit vector distinct from zero") {
        const auto e =
            negative_embedding({NegativeStrategy::Kind::Natural, 0, 0.0}, fx.encoder, &fx.world, rng);
        CHECK(std::abs(e.values.norm() - 1.0) < 1e-6);
        CHECK_FALSE(e.is_zero_sentinel());
    }
    SECTION("natural strategy is deterministic per seed") {
        Rng a(55), b(55);
        const auto ea = negative_embedding({NegativeStrategy::Kind::Natural, 0, 0.0}, fx.encoder,
                                           &fx.world, a);
        const auto eb = negative_embedding({NegativeStrategy::Kind::Natural, 0, 0.0}, fx.encoder,
                                           &fx.world, b);
        CHECK(ea.values == eb.values);
    }
    SECTION("missing noise source is reported") {
        CHECK_THROWS_MATCHES(
            negative_embedding({NegativeStrategy::Kind::Natural, 0, 0.0}, fx.encoder, nullptr, rng),
            Error, Catch::Matchers::Predicate<Error>(
                       [](const Error& e) { return e.code() == Errc::MissingNoiseSource; }));
        WorldSpec silent = fx.world;
        silent.cfg.noise_sigma = 0.0;
        CHECK_THROWS_AS(
            negative_embedding({NegativeStrategy::Kind::Natural, 0, 0.0}, fx.encoder, &silent, rng),
            Error);
        // A user-provided noise clip substitutes for the world process.
        const Mat clip = randn(43, 16, rng);
        CHECK_NOTHROW(negative_embedding({NegativeStrategy::Kind::Natural, 0, 0.0}, fx.encoder, nullptr,
                                         rng, clip));
    }
}

TEST_CASE("cosine similarity basics", "[speaker]") {
    Vec v(3);
    v << 1.0, 2.0, -0.5;
    CHECK(cosine_similarity(v, v) == Catch::Approx(1.0).margin(1e-12));
    CHECK(cosine_similarity(v, Vec(-v)) == Catch::Approx(-1.0).margin(1e-12));
    Vec e1(2), e2(2);
    e1 << 1.0, 0.0;
    e2 << 0.0, 1.0;
    CHECK(cosine_similarity(e1, e2) == 0.0);
    CHECK_THROWS_MATCHES(cosine_similarity(Vec(Vec::Zero(2)), e1), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::ZeroVector; }));
}
