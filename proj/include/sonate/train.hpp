#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sonate/conditioning.hpp"
#include "sonate/errors.hpp"
#include "sonate/flow.hpp"
#include "sonate/model.hpp"
#include "sonate/world.hpp"

namespace sonate {

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Sgd;
    double lr = 1e-2;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

inline OptimizerConfig::Kind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerConfig::Kind::Sgd;
    if (name == "adam") return OptimizerConfig::Kind::Adam;
    raise(Errc::SchemaError, "unknown optimizer '" + name + "' (expected sgd or adam)");
}

inline const char* optimizer_name(OptimizerConfig::Kind k) {
    return k == OptimizerConfig::Kind::Sgd ? "sgd" : "adam";
}

// Plain SGD by default; Adam is the configurable adaptive variant. All state
// is exposed for bit-exact checkpointing.
class Optimizer {
public:
    Optimizer() = default;

    Optimizer(OptimizerConfig cfg, const std::vector<ad::Value>& params) : cfg_(cfg) {
        if (cfg_.kind == OptimizerConfig::Kind::Adam) {
            m_.reserve(params.size());
            v_.reserve(params.size());
            for (const auto& p : params) {
                m_.push_back(Mat::Zero(p->val.rows(), p->val.cols()));
                v_.push_back(Mat::Zero(p->val.rows(), p->val.cols()));
            }
        }
    }

    const OptimizerConfig& config() const { return cfg_; }
    long step_count() const { return step_count_; }

    void step(const std::vector<ad::Value>& params) {
        if (cfg_.grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& p : params)
                if (p->grad.size() > 0) sq += p->grad.squaredNorm();
            const double norm = std::sqrt(sq);
            if (norm > cfg_.grad_clip) {
                const double s = cfg_.grad_clip / norm;
                for (const auto& p : params)
                    if (p->grad.size() > 0) p->grad *= s;
            }
        }
        ++step_count_;
        if (cfg_.kind == OptimizerConfig::Kind::Sgd) {
            for (const auto& p : params)
                if (p->grad.size() > 0) p->val -= cfg_.lr * p->grad;
            return;
        }
        require(m_.size() == params.size(), Errc::ShapeMismatch, "optimizer state size mismatch");
        const double t = static_cast<double>(step_count_);
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t);
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (p->grad.size() == 0) continue;
            m_[i] = cfg_.adam_beta1 * m_[i] + (1.0 - cfg_.adam_beta1) * p->grad;
            v_[i] = cfg_.adam_beta2 * v_[i] + (1.0 - cfg_.adam_beta2) * p->grad.cwiseProduct(p->grad);
            p->val -= cfg_.lr *
                      ((m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + cfg_.adam_eps)).matrix();
        }
    }

    // Moment buffers + step counter, for checkpointing.
    std::vector<std::pair<std::string, Mat>> state(const std::vector<std::string>& param_names) const {
        std::vector<std::pair<std::string, Mat>> out;
        Mat step(1, 1);
        step(0, 0) = static_cast<double>(step_count_);
        out.emplace_back("opt.step_count", step);
        if (cfg_.kind == OptimizerConfig::Kind::Adam) {
            require(param_names.size() == m_.size(), Errc::ShapeMismatch, "optimizer state naming mismatch");
            for (std::size_t i = 0; i < m_.size(); ++i) {
                out.emplace_back("opt.m." + param_names[i], m_[i]);
                out.emplace_back("opt.v." + param_names[i], v_[i]);
            }
        }
        return out;
    }

    void load_state(const std::map<std::string, Mat>& blobs, const std::vector<std::string>& param_names) {
        auto it = blobs.find("opt.step_count");
        require(it != blobs.end(), Errc::CorruptCheckpoint, "optimizer step count missing");
        step_count_ = static_cast<long>(it->second(0, 0));
        if (cfg_.kind != OptimizerConfig::Kind::Adam) return;
        m_.clear();
        v_.clear();
        for (const auto& name : param_names) {
            auto mi = blobs.find("opt.m." + name);
            auto vi = blobs.find("opt.v." + name);
            require(mi != blobs.end() && vi != blobs.end(), Errc::CorruptCheckpoint,
                    "optimizer moments missing for " + name);
            m_.push_back(mi->second);
            v_.push_back(vi->second);
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<Mat> m_, v_;
    long step_count_ = 0;
};

// ---------------------------------------------------------------------------
// joint training loop
// ---------------------------------------------------------------------------

struct TrainStepInfo {
    int step = 0;
    double loss = 0.0;
};

struct JointTrainConfig {
    int batch_size = 8;
    int steps = 1200;
    std::uint64_t seed = 1234;
    ModalityMaskPolicy mask{};
};

// One quadruplet plus everything the conditioning pipeline derives from it.
struct TrainingSetView {
    const std::vector<Quadruplet>* clips = nullptr;
    std::vector<InstructionBundle> bundles;                 // parallel to clips
    std::map<int, std::vector<std::size_t>> by_speaker;     // single-speaker clip indices
};

inline InstructionBundle bundle_from_quadruplet(const Quadruplet& q,
                                                const Vocab& vocab = Vocab::standard()) {
    InstructionBundle b;
    b.video_caption = vocab.tokenize(q.video_caption_text);
    for (const auto& caption : q.audio_caption_texts) b.audio_captions.push_back(vocab.tokenize(caption));
    b.segments = q.segments;
    b.n_speakers = static_cast<int>(q.speaker_ids.size());
    validate_bundle(b);
    return b;
}

inline TrainingSetView make_training_view(const std::vector<Quadruplet>& clips,
                                          const Vocab& vocab = Vocab::standard()) {
    TrainingSetView view;
    view.clips = &clips;
    view.bundles.reserve(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        view.bundles.push_back(bundle_from_quadruplet(clips[i], vocab));
        if (clips[i].speaker_ids.size() == 1) view.by_speaker[clips[i].speaker_ids[0]].push_back(i);
    }
    return view;
}

// Reference clip for timbre extraction: another single-speaker clip of the
// same speaker, so the cloning pathway stays zero-shot rather than keying on
// the sample itself.
inline const Mat& pick_reference_audio(const TrainingSetView& view, int speaker, std::size_t self_index,
                                       Rng& rng) {
    auto it = view.by_speaker.find(speaker);
    require(it != view.by_speaker.end() && !it->second.empty(), Errc::InsufficientData,
            "no single-speaker clip available for speaker " + std::to_string(speaker));
    const auto& pool = it->second;
    for (int attempt = 0; attempt < 4; ++attempt) {
        const std::size_t idx = pool[rng.uniform_index(pool.size())];
        if (idx != self_index || pool.size() == 1) return (*view.clips)[idx].audio;
    }
    return (*view.clips)[pool[0]].audio;
}

// Runs [first_step, first_step + n_steps) of conditional flow-matching
// training. Every stochastic choice derives from (seed, step), so resuming
// from a checkpoint replays the identical trajectory.
inline double train_joint_steps(SonateModel& model, const SpeakerEncoder& encoder,
                                const TrainingSetView& view, const JointTrainConfig& cfg,
                                Optimizer& optimizer, int first_step, int n_steps,
                                const std::function<void(const TrainStepInfo&)>& on_step = {}) {
    require(view.clips && !view.clips->empty(), Errc::InsufficientData, "empty training set");
    auto params = model.params();
    double last_loss = 0.0;
    for (int step = first_step; step < first_step + n_steps; ++step) {
        Rng rng(derive_seed(cfg.seed, 0x7261, static_cast<std::uint64_t>(step)));
        std::vector<FrozenItem<PreparedConditions>> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::size_t idx = rng.uniform_index(view.clips->size());
            const Quadruplet& q = (*view.clips)[idx];
            const InstructionBundle& bundle = view.bundles[idx];
            const MaskFlags flags = sample_modality_mask(cfg.mask, rng);

            std::vector<SpeakerEmbedding> speakers;
            if (!flags.audio_masked)
                for (int s : q.speaker_ids)
                    speakers.push_back(encoder.embed(pick_reference_audio(view, s, idx, rng)));
            std::optional<Vec> ref_image;
            if (!flags.image_masked && q.video.rows() > 0) ref_image = Vec(q.video.row(0).transpose());

            TrainItem<PreparedConditions> item{
                q.audio, q.video,
                model.build_conditions(bundle, std::move(speakers), ref_image, flags, q.audio.rows())};
            batch.push_back(freeze_item(item, rng));
        }
        ad::zero_grad(params);
        auto loss = cfm_loss_frozen(model, batch);
        ad::backward(loss);
        optimizer.step(params);
        last_loss = loss->val(0, 0);
        if (on_step) on_step({step, last_loss});
    }
    return last_loss;
}

// Speaker-classification dataset straight out of a training view.
inline std::vector<std::pair<Mat, int>> speaker_dataset(const TrainingSetView& view) {
    std::vector<std::pair<Mat, int>> out;
    for (const auto& [speaker, indices] : view.by_speaker)
        for (std::size_t idx : indices) out.emplace_back((*view.clips)[idx].audio, speaker);
    return out;
}

}  // namespace sonate
