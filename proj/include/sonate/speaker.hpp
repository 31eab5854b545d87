#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sonate/autodiff.hpp"
#include "sonate/errors.hpp"
#include "sonate/world.hpp"

namespace sonate {

// Global timbre vector. Unit norm always, except the all-zeros sentinel that
// signals "no cloning" (T2VA / TI2VA).
struct SpeakerEmbedding {
    Vec values;

    bool is_zero_sentinel() const { return values.size() == 0 || values.isZero(0.0); }

    static SpeakerEmbedding zero(Eigen::Index dim) { return {Vec::Zero(dim)}; }
};

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

struct SpeakerEncoderConfig {
    int d_audio = 16;
    int hidden = 64;
    int embed_dim = 128;   // must match the backbone width for timbre injection
    int steps = 600;
    int batch_size = 16;
    double lr = 1e-2;
};

// Mean-pool over time, two-layer MLP, unit-normalized embedding. The
// classification head used during pre-training is discarded afterwards.
class SpeakerEncoder {
public:
    SpeakerEncoder() = default;

    SpeakerEncoder(const SpeakerEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        const double std1 = 1.0 / std::sqrt(static_cast<double>(cfg.d_audio));
        const double std2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
        w1_ = ad::param(randn(cfg.d_audio, cfg.hidden, rng, std1));
        b1_ = ad::param(Mat::Zero(1, cfg.hidden));
        w2_ = ad::param(randn(cfg.hidden, cfg.embed_dim, rng, std2));
        b2_ = ad::param(Mat::Zero(1, cfg.embed_dim));
    }

    const SpeakerEncoderConfig& config() const { return cfg_; }

    ad::Value embed_graph(const Mat& grid) const {
        require(grid.rows() > 0, Errc::EmptyInput, "speaker encoder: empty latent grid");
        require(grid.cols() == cfg_.d_audio, Errc::ShapeMismatch, "speaker encoder: channel width");
        auto pooled = ad::mean_rows(ad::constant(grid));
        auto h = ad::gelu(ad::add(ad::matmul(pooled, w1_), b1_));
        auto e = ad::add(ad::matmul(h, w2_), b2_);
        return ad::l2_normalize_row(e);
    }

    // Unit-norm timbre embedding of an audio latent grid.
    SpeakerEmbedding embed(const Mat& grid) const {
        const ad::Value e = embed_graph(grid);
        return {Vec(e->val.row(0).transpose())};
    }

    std::vector<ad::Value> params() { return {w1_, b1_, w2_, b2_}; }
    std::vector<std::pair<std::string, ad::Value>> named_params() {
        return {{"speaker.w1", w1_}, {"speaker.b1", b1_}, {"speaker.w2", w2_}, {"speaker.b2", b2_}};
    }

private:
    SpeakerEncoderConfig cfg_;
    ad::Value w1_, b1_, w2_, b2_;
};

inline SpeakerEmbedding speaker_embed(const SpeakerEncoder& encoder, const Mat& grid) {
    return encoder.embed(grid);
}

// ---------------------------------------------------------------------------
// pre-training on speaker classification
// ---------------------------------------------------------------------------

struct SpeakerTrainReport {
    double final_loss = 0.0;
    double train_accuracy = 0.0;
};

// Cross-entropy training of encoder + linear head; the head stays local.
// Requires at least 2 speakers and 10 clips per speaker.
inline SpeakerEncoder train_speaker_encoder(const std::vector<std::pair<Mat, int>>& dataset,
                                            const SpeakerEncoderConfig& cfg, std::uint64_t seed,
                                            SpeakerTrainReport* report = nullptr) {
    std::map<int, int> counts;
    for (const auto& [grid, label] : dataset) counts[label]++;
    require(counts.size() >= 2, Errc::InsufficientData, "speaker pre-training needs >= 2 speakers");
    for (const auto& [label, n] : counts)
        require(n >= 10, Errc::InsufficientData,
                "speaker " + std::to_string(label) + " has fewer than 10 clips");
    const int n_classes = static_cast<int>(counts.size());
    std::map<int, int> class_index;
    for (const auto& [label, n] : counts) class_index.emplace(label, static_cast<int>(class_index.size()));

    Rng init_rng(derive_seed(seed, 11));
    SpeakerEncoder encoder(cfg, init_rng);
    auto head_w = ad::param(randn(cfg.embed_dim, n_classes, init_rng, 0.1));
    auto head_b = ad::param(Mat::Zero(1, n_classes));

    std::vector<ad::Value> params = encoder.params();
    params.push_back(head_w);
    params.push_back(head_b);

    // Adam state.
    std::vector<Mat> m(params.size()), v(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = Mat::Zero(params[i]->val.rows(), params[i]->val.cols());
        v[i] = Mat::Zero(params[i]->val.rows(), params[i]->val.cols());
    }

    double last_loss = 0.0;
    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng(derive_seed(seed, 17, static_cast<std::uint64_t>(step)));
        ad::zero_grad(params);
        std::vector<ad::Value> losses;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& [grid, label] = dataset[rng.uniform_index(dataset.size())];
            auto e = encoder.embed_graph(grid);
            auto logits = ad::add(ad::matmul(e, head_w), head_b);
            losses.push_back(ad::softmax_xent(logits, class_index.at(label)));
        }
        auto loss = ad::scale(ad::add_scalars(losses), 1.0 / cfg.batch_size);
        ad::backward(loss);
        last_loss = loss->val(0, 0);
        const double t = static_cast<double>(step + 1);
        const double bc1 = 1.0 - std::pow(0.9, t);
        const double bc2 = 1.0 - std::pow(0.999, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i]->grad.size() == 0) continue;
            m[i] = 0.9 * m[i] + 0.1 * params[i]->grad;
            v[i] = 0.999 * v[i] + 0.001 * params[i]->grad.cwiseProduct(params[i]->grad);
            params[i]->val -=
                cfg.lr * ((m[i] / bc1).array() / ((v[i] / bc2).array().sqrt() + 1e-8)).matrix();
        }
    }

    if (report) {
        report->final_loss = last_loss;
        int correct = 0;
        for (const auto& [grid, label] : dataset) {
            auto e = encoder.embed_graph(grid);
            Mat logits = e->val * head_w->val + head_b->val;
            Eigen::Index best;
            logits.row(0).maxCoeff(&best);
            correct += (static_cast<int>(best) == class_index.at(label)) ? 1 : 0;
        }
        report->train_accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    }
    return encoder;
}

// ---------------------------------------------------------------------------
// negative conditioning strategies
// ---------------------------------------------------------------------------

// The eight negative speaker-embedding strategies: the zero-vector baseline,
// Gaussian white noise at six increasing RMS levels, and noise drawn from the
// world's own background process ("natural").
struct NegativeStrategy {
    enum class Kind { Zero, Gaussian, Natural };
    Kind kind = Kind::Zero;
    int gaussian_level = 0;  // 1..6 when kind == Gaussian
    double gaussian_rms = 0.0;

    std::string name() const {
        switch (kind) {
            case Kind::Zero: return "zero";
            case Kind::Gaussian: return "gauss" + std::to_string(gaussian_level);
            case Kind::Natural: return "natural";
        }
        return "?";
    }
};

inline const std::vector<double>& gaussian_rms_levels() {
    static const std::vector<double> levels{0.01, 0.05, 0.1, 0.5, 1.0, 2.0};
    return levels;
}

inline std::vector<NegativeStrategy> all_negative_strategies() {
    std::vector<NegativeStrategy> out;
    out.push_back({NegativeStrategy::Kind::Zero, 0, 0.0});
    const auto& levels = gaussian_rms_levels();
    for (int k = 1; k <= static_cast<int>(levels.size()); ++k)
        out.push_back({NegativeStrategy::Kind::Gaussian, k, levels[static_cast<std::size_t>(k - 1)]});
    out.push_back({NegativeStrategy::Kind::Natural, 0, 0.0});
    return out;
}

inline NegativeStrategy parse_strategy(const std::string& name) {
    for (const auto& s : all_negative_strategies())
        if (s.name() == name) return s;
    raise(Errc::UsageError, "unknown negative strategy '" + name +
                                "' (expected zero, gauss1..gauss6 or natural)");
}

// White-noise latent grid scaled to an exact target RMS.
inline Mat gaussian_noise_grid(Eigen::Index rows, Eigen::Index cols, double target_rms, Rng& rng) {
    Mat g = randn(rows, cols, rng);
    const double r = rms(g);
    if (r > 0.0) g *= target_rms / r;
    return g;
}

// Builds S_neg for one strategy. `world` supplies the natural-noise process;
// a user-provided noise clip overrides it. Noise grids span `noise_rows`
// latent steps (about one second by default).
inline SpeakerEmbedding negative_embedding(const NegativeStrategy& strategy, const SpeakerEncoder& encoder,
                                           const WorldSpec* world, Rng& rng,
                                           const std::optional<Mat>& noise_clip = std::nullopt,
                                           Eigen::Index noise_rows = 43) {
    switch (strategy.kind) {
        case NegativeStrategy::Kind::Zero:
            return SpeakerEmbedding::zero(encoder.config().embed_dim);
        case NegativeStrategy::Kind::Gaussian: {
            const Mat grid =
                gaussian_noise_grid(noise_rows, encoder.config().d_audio, strategy.gaussian_rms, rng);
            return encoder.embed(grid);
        }
        case NegativeStrategy::Kind::Natural: {
            if (noise_clip.has_value()) return encoder.embed(*noise_clip);
            require(world != nullptr && world->cfg.noise_sigma > 0.0, Errc::MissingNoiseSource,
                    "natural strategy needs a world noise process or a noise clip file");
            return encoder.embed(natural_noise_clip(*world, noise_rows, rng));
        }
    }
    raise(Errc::UsageError, "invalid strategy kind");
}

}  // namespace sonate
