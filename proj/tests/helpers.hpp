#pragma once

// Shared test apparatus: velocity-model stubs for the flow-matching oracles
// and a small unconditional 2-D MLP flow used by the toy-distribution
// experiment.

#include <filesystem>
#include <random>
#include <string>
#include <variant>

#include "sonate/backbone.hpp"
#include "sonate/flow.hpp"
#include "sonate/train.hpp"

namespace sonate::testing {

struct NoCond {};

// Returns fixed velocities regardless of state.
struct ConstantStub {
    Mat v_audio;
    Mat v_video;
    VelocityGraph predict(const Mat&, const Mat&, double, const NoCond&) const {
        return {ad::constant(v_audio), ad::constant(v_video)};
    }
};

// v = -x on both streams; the exact flow endpoint from x(0) is x(0) * e^-1.
struct DecayStub {
    VelocityGraph predict(const Mat& xa, const Mat& xv, double, const NoCond&) const {
        return {ad::constant(Mat(-xa)), ad::constant(Mat(-xv))};
    }
};

// Marks whether the conditional or unconditional branch was requested, so
// guidance-branch behavior is observable.
struct BranchProbeStub {
    Mat cond_value;
    Mat uncond_value;
    VelocityGraph predict(const Mat&, const Mat&, double, const bool& is_cond) const {
        Mat v = is_cond ? cond_value : uncond_value;
        return {ad::constant(v), ad::constant(Mat(0, 0))};
    }
};

// Unconditional 2-D velocity MLP: input [x, y, timestep features], two hidden
// layers, linear head. Drives the two-Gaussian toy-flow experiment.
class Mlp2D {
public:
    explicit Mlp2D(int hidden, std::uint64_t seed) {
        Rng rng(seed);
        const int in = 2 + kTimeFeatures;
        w1_ = ad::param(randn(in, hidden, rng, 1.0 / std::sqrt(static_cast<double>(in))));
        b1_ = ad::param(Mat::Zero(1, hidden));
        w2_ = ad::param(randn(hidden, hidden, rng, 1.0 / std::sqrt(static_cast<double>(hidden))));
        b2_ = ad::param(Mat::Zero(1, hidden));
        w3_ = ad::param(randn(hidden, 2, rng, 0.02));
        b3_ = ad::param(Mat::Zero(1, 2));
    }

    VelocityGraph predict(const Mat& xa, const Mat& xv, double t, const NoCond&) const {
        Mat features(xa.rows(), 2 + kTimeFeatures);
        const Vec temb = timestep_embed(t, kTimeFeatures);
        for (Eigen::Index i = 0; i < xa.rows(); ++i) {
            features(i, 0) = xa(i, 0);
            features(i, 1) = xa(i, 1);
            features.row(i).tail(kTimeFeatures) = temb.transpose();
        }
        auto h1 = ad::gelu(ad::add_row(ad::matmul(ad::constant(features), w1_), b1_));
        auto h2 = ad::gelu(ad::add_row(ad::matmul(h1, w2_), b2_));
        auto out = ad::add_row(ad::matmul(h2, w3_), b3_);
        (void)xv;
        return {out, ad::constant(Mat(xv.rows(), xv.cols()))};
    }

    std::vector<ad::Value> params() { return {w1_, b1_, w2_, b2_, w3_, b3_}; }

private:
    static constexpr int kTimeFeatures = 8;
    ad::Value w1_, b1_, w2_, b2_, w3_, b3_;
};

// Samples a balanced two-Gaussian mixture in 2-D.
inline Mat two_gaussian_mixture(int n, const Vec& mean0, const Vec& mean1, double stddev, Rng& rng) {
    Mat out(n, 2);
    for (int i = 0; i < n; ++i) {
        const Vec& mu = rng.bernoulli(0.5) ? mean1 : mean0;
        out(i, 0) = mu(0) + stddev * rng.normal();
        out(i, 1) = mu(1) + stddev * rng.normal();
    }
    return out;
}

// Trains the toy flow on the mixture points and returns the trained model.
inline Mlp2D train_toy_flow(const Mat& points, int hidden, int steps, int batch, double lr,
                            std::uint64_t seed) {
    Mlp2D model(hidden, derive_seed(seed, 1));
    auto params = model.params();
    Optimizer opt({OptimizerConfig::Kind::Adam, lr}, params);
    for (int step = 0; step < steps; ++step) {
        Rng rng(derive_seed(seed, 2, static_cast<std::uint64_t>(step)));
        std::vector<FrozenItem<NoCond>> frozen;
        frozen.reserve(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            const Eigen::Index i = static_cast<Eigen::Index>(rng.uniform_index(points.rows()));
            TrainItem<NoCond> item{Mat(points.row(i)), Mat(0, 0), NoCond{}};
            frozen.push_back(freeze_item(item, rng));
        }
        ad::zero_grad(params);
        auto loss = cfm_loss_frozen(model, frozen);
        ad::backward(loss);
        opt.step(params);
    }
    return model;
}

// Frozen CFM batch spec against the full model: the latent draws plus the
// conditioning ingredients. Conditions are rebuilt per loss evaluation so
// that perturbing embedding-table parameters reaches the loss (a stored
// condition graph would hold stale values).
struct ModelBatchSpec {
    InstructionBundle bundle;
    SpeakerEmbedding speaker;
    Vec ref_image;
    FlowSample audio;
    FlowSample video;
};

inline std::vector<ModelBatchSpec> model_batch_specs(const SonateModel& model, int n_items,
                                                     Eigen::Index t_audio, Eigen::Index t_video,
                                                     std::uint64_t seed) {
    std::vector<ModelBatchSpec> out;
    Rng rng(seed);
    const auto bundle =
        parse_instruction("video: a low calm face\naudio: a low calm voice\ntext: hi there");
    for (int i = 0; i < n_items; ++i) {
        ModelBatchSpec spec;
        spec.bundle = bundle;
        spec.speaker = SpeakerEmbedding{random_unit(model.config().width, rng)};
        spec.ref_image = randn_vec(model.config().d_video, rng);
        const double t = rng.uniform();
        spec.audio = FlowSample::draw(randn(t_audio, model.config().d_audio, rng), t, rng);
        spec.video = FlowSample::draw(randn(t_video, model.config().d_video, rng), t, rng);
        out.push_back(std::move(spec));
    }
    return out;
}

// Builds the deterministic loss for a frozen spec batch, reconstructing the
// conditioning graphs from the current parameter values.
inline ad::Value model_batch_loss(const SonateModel& model, const std::vector<ModelBatchSpec>& specs) {
    std::vector<FrozenItem<PreparedConditions>> batch;
    batch.reserve(specs.size());
    for (const auto& spec : specs) {
        FrozenItem<PreparedConditions> item{
            spec.audio, spec.video,
            model.build_conditions(spec.bundle, {spec.speaker}, spec.ref_image, MaskFlags::tia2va(),
                                   spec.audio.x1.rows())};
        batch.push_back(std::move(item));
    }
    return cfm_loss_frozen(model, batch);
}

// Unique scratch directory under the system temp root.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("sonate_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace sonate::testing
