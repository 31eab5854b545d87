#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sonate/backbone.hpp"
#include "sonate/conditioning.hpp"
#include "sonate/flow.hpp"
#include "sonate/instruction.hpp"
#include "sonate/speaker.hpp"

namespace sonate {

// Conditioning prepared for one clip: the streams plus the phoneme tokens'
// positions on the audio clock.
struct PreparedConditions {
    ConditionSet cond;
    std::vector<long> phoneme_positions;
};

// The full generative model: embedding tables, placeholders, ID embeddings,
// the reference-image projection and the joint transformer.
class SonateModel {
public:
    SonateModel() = default;

    SonateModel(const BackboneConfig& cfg, std::uint64_t seed, const Vocab& vocab = Vocab::standard())
        : cfg_(cfg), vocab_(&vocab) {
        Rng rng(derive_seed(seed, 21));
        backbone_ = Backbone(cfg, rng);
        // Caption table covers words plus SEP / [S0] / [S1] stream tokens.
        caption_table_ = ad::param(randn(vocab.size() + 3, cfg.width, rng, 0.02));
        phoneme_table_ = ad::param(randn(kPhonemeAlphabetSize, cfg.width, rng, 0.02));
        ids_ = IdEmbedding::init(cfg.width, rng);
        placeholders_ = Placeholders::init(cfg.width, rng);
        image_proj_w_ = ad::param(randn(cfg.d_video, cfg.width, rng,
                                        1.0 / std::sqrt(static_cast<double>(cfg.d_video))));
        image_proj_b_ = ad::param(Mat::Zero(1, cfg.width));
    }

    const BackboneConfig& config() const { return cfg_; }
    const Vocab& vocab() const { return *vocab_; }
    Backbone& backbone() { return backbone_; }
    const Backbone& backbone() const { return backbone_; }
    const IdEmbedding& ids() const { return ids_; }
    const Placeholders& placeholders() const { return placeholders_; }

    // Builds the conditioning streams for a bundle.
    //   speakers   unit timbre embeddings per dialogue slot (S0 first); pass
    //              zero sentinels (or leave empty) for non-cloning tasks.
    //   ref_image  one reference video-latent row, if the task provides one.
    //   t_audio    audio length of the clip being trained on or generated,
    //              which fixes the phoneme positions.
    PreparedConditions build_conditions(const InstructionBundle& bundle,
                                        std::vector<SpeakerEmbedding> speakers,
                                        const std::optional<Vec>& ref_image, MaskFlags flags,
                                        Eigen::Index t_audio) const {
        validate_bundle(bundle);
        const Eigen::Index d = cfg_.width;

        // Caption stream: video ++ SEP ++ audio caption(s), as token ids into
        // the caption table.
        std::vector<int> caption_tokens = bundle.video_caption;
        caption_tokens.push_back(BundleTokens::sep(*vocab_));
        if (bundle.n_speakers == 1) {
            caption_tokens.insert(caption_tokens.end(), bundle.audio_captions[0].begin(),
                                  bundle.audio_captions[0].end());
        } else {
            caption_tokens.push_back(BundleTokens::tag_s0(*vocab_));
            caption_tokens.insert(caption_tokens.end(), bundle.audio_captions[0].begin(),
                                  bundle.audio_captions[0].end());
            caption_tokens.push_back(BundleTokens::tag_s1(*vocab_));
            caption_tokens.insert(caption_tokens.end(), bundle.audio_captions[1].begin(),
                                  bundle.audio_captions[1].end());
        }
        for (int t : caption_tokens)
            require(t >= 0 && t < caption_table_->val.rows(), Errc::VocabMiss,
                    "caption token outside embedding table");
        auto text_emb = ad::gather_rows(caption_table_, caption_tokens);

        // Phoneme stream with timbre + ID injection.
        while (speakers.size() < static_cast<std::size_t>(bundle.n_speakers))
            speakers.push_back(SpeakerEmbedding::zero(d));
        if (flags.audio_masked)
            for (auto& s : speakers) s = SpeakerEmbedding::zero(d);

        ad::Value phoneme_emb;
        Eigen::Index n_ph = 0;
        if (bundle.segments.empty()) {
            phoneme_emb = ad::constant(Mat::Zero(0, d));
        } else {
            std::vector<std::pair<SpeakerTag, ad::Value>> segs;
            for (const auto& seg : bundle.segments) {
                n_ph += static_cast<Eigen::Index>(seg.phonemes.size());
                segs.emplace_back(seg.tag, ad::gather_rows(phoneme_table_, seg.phonemes.ids));
            }
            phoneme_emb = assemble_dialogue(segs, speakers, ids_);
        }

        // Reference-image stream: one projected latent row.
        std::optional<ad::Value> image_emb;
        if (ref_image.has_value()) {
            require(ref_image->size() == cfg_.d_video, Errc::ShapeMismatch,
                    "reference image row width must equal d_video");
            Mat row(1, cfg_.d_video);
            row.row(0) = ref_image->transpose();
            image_emb = ad::add_row(ad::matmul(ad::constant(row), image_proj_w_), image_proj_b_);
        }

        // Reference-audio stream: the timbre embeddings as rows, S0 first.
        std::optional<ad::Value> refaudio_emb;
        if (!flags.audio_masked) {
            Mat rows(static_cast<Eigen::Index>(bundle.n_speakers), d);
            bool any = false;
            for (int s = 0; s < bundle.n_speakers; ++s) {
                const auto& emb = speakers[static_cast<std::size_t>(s)];
                rows.row(s).setZero();
                if (emb.values.size() > 0) rows.row(s) = emb.values.transpose();
                any |= !emb.is_zero_sentinel();
            }
            if (any) refaudio_emb = ad::constant(rows);
        }

        PreparedConditions out;
        out.cond = apply_conditions(text_emb, phoneme_emb, image_emb, refaudio_emb, flags, placeholders_);
        if (out.cond.mask.full_drop) {
            out.phoneme_positions.assign(static_cast<std::size_t>(out.cond.phoneme_emb->val.rows()), 0L);
        } else {
            out.phoneme_positions = TokenPositions::make(t_audio, 0, n_ph).phoneme;
        }
        return out;
    }

    // The negative branch for CFG: every stream is its placeholder except the
    // reference-audio slot, which carries the configured negative embedding.
    // The zero strategy feeds an explicit zero row (the "random voice" mode),
    // which is distinct from the trained unconditional placeholder.
    PreparedConditions build_negative_conditions(const SpeakerEmbedding& s_neg) const {
        PreparedConditions out;
        out.cond.mask = MaskFlags::unconditional();
        out.cond.text_emb = placeholders_.text;
        out.cond.phoneme_emb = placeholders_.phoneme;
        out.cond.image_emb = placeholders_.image;
        Mat row = Mat::Zero(1, cfg_.width);
        if (s_neg.values.size() > 0) {
            require(s_neg.values.size() == cfg_.width, Errc::ShapeMismatch,
                    "negative embedding width must equal backbone width");
            row.row(0) = s_neg.values.transpose();
        }
        out.cond.refaudio_emb = ad::constant(row);
        out.phoneme_positions.assign(1, 0L);
        return out;
    }

    // Velocity-model interface used by the flow ops.
    VelocityGraph predict(const Mat& audio_x, const Mat& video_x, double t,
                          const PreparedConditions& pc) const {
        return backbone_.forward_graph(audio_x, video_x, t, pc.cond, pc.phoneme_positions);
    }

    std::vector<std::pair<std::string, ad::Value>> named_params() {
        std::vector<std::pair<std::string, ad::Value>> out = {
            {"cond.caption_table", caption_table_},
            {"cond.phoneme_table", phoneme_table_},
            {"cond.id.i0", ids_.i0},
            {"cond.id.i1", ids_.i1},
            {"cond.placeholder.text", placeholders_.text},
            {"cond.placeholder.phoneme", placeholders_.phoneme},
            {"cond.placeholder.image", placeholders_.image},
            {"cond.placeholder.refaudio", placeholders_.refaudio},
            {"cond.image_proj.w", image_proj_w_},
            {"cond.image_proj.b", image_proj_b_},
        };
        for (auto& np : backbone_.named_params()) out.push_back(np);
        return out;
    }

    std::vector<ad::Value> params() {
        std::vector<ad::Value> out;
        for (auto& [name, p] : named_params()) out.push_back(p);
        return out;
    }

private:
    BackboneConfig cfg_;
    const Vocab* vocab_ = nullptr;
    Backbone backbone_;
    ad::Value caption_table_;
    ad::Value phoneme_table_;
    IdEmbedding ids_;
    Placeholders placeholders_;
    ad::Value image_proj_w_, image_proj_b_;
};

}  // namespace sonate
