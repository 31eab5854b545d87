#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sonate/autodiff.hpp"
#include "sonate/errors.hpp"
#include "sonate/instruction.hpp"
#include "sonate/speaker.hpp"

namespace sonate {

// ---------------------------------------------------------------------------
// masking
// ---------------------------------------------------------------------------

struct ModalityMaskPolicy {
    double p_image = 0.5;
    double p_refaudio = 0.5;
    double p_full_drop = 0.10;

    void validate() const {
        for (double p : {p_image, p_refaudio, p_full_drop})
            require(p >= 0.0 && p <= 1.0, Errc::SchemaError, "mask probability outside [0,1]");
    }
};

struct MaskFlags {
    bool image_masked = false;
    bool audio_masked = false;
    bool text_dropped = false;  // only ever set by full_drop
    bool full_drop = false;

    static MaskFlags none() { return {}; }
    static MaskFlags t2va() { return {true, true, false, false}; }
    static MaskFlags ti2va() { return {false, true, false, false}; }
    static MaskFlags ta2va() { return {true, false, false, false}; }
    static MaskFlags tia2va() { return {}; }
    static MaskFlags unconditional() { return {true, true, true, true}; }
};

// Image and reference-audio flags are independent Bernoulli draws; full_drop
// is a third independent draw that overrides everything (the CFG
// unconditional mode). Draw order is fixed: image, refaudio, full.
inline MaskFlags sample_modality_mask(const ModalityMaskPolicy& policy, Rng& rng) {
    policy.validate();
    MaskFlags flags;
    flags.image_masked = rng.bernoulli(policy.p_image);
    flags.audio_masked = rng.bernoulli(policy.p_refaudio);
    flags.full_drop = rng.bernoulli(policy.p_full_drop);
    if (flags.full_drop) {
        flags.image_masked = true;
        flags.audio_masked = true;
        flags.text_dropped = true;
    }
    return flags;
}

// ---------------------------------------------------------------------------
// condition set
// ---------------------------------------------------------------------------

// Conditioning streams handed to the backbone, all width D. Masked streams
// hold their learnable placeholder row (nominal length 1).
struct ConditionSet {
    ad::Value text_emb;      // captions: video ++ SEP ++ audio caption(s)
    ad::Value phoneme_emb;   // post timbre/ID injection
    ad::Value image_emb;
    ad::Value refaudio_emb;
    MaskFlags mask;

    Eigen::Index width() const { return text_emb->val.cols(); }
    Eigen::Index total_rows() const {
        return text_emb->val.rows() + phoneme_emb->val.rows() + image_emb->val.rows() +
               refaudio_emb->val.rows();
    }
};

// ---------------------------------------------------------------------------
// timbre and ID injection
// ---------------------------------------------------------------------------

// Adds the replicated speaker embedding S and ID embedding I to every row of
// the phoneme grid P. The zero sentinel leaves P untouched by construction.
inline ad::Value inject_timbre(const ad::Value& phonemes, const ad::Value& speaker, const ad::Value& id) {
    require(speaker->val.rows() == 1 && id->val.rows() == 1, Errc::ShapeMismatch,
            "inject_timbre: S and I must be 1 x D rows");
    require(speaker->val.cols() == phonemes->val.cols() && id->val.cols() == phonemes->val.cols(),
            Errc::ShapeMismatch, "inject_timbre: embedding widths disagree");
    return ad::add_row(ad::add_row(phonemes, speaker), id);
}

// Learnable per-dialogue-slot embeddings I_0, I_1.
struct IdEmbedding {
    ad::Value i0;
    ad::Value i1;

    static IdEmbedding init(Eigen::Index width, Rng& rng, double stddev = 0.02) {
        return {ad::param(randn(1, width, rng, stddev)), ad::param(randn(1, width, rng, stddev))};
    }

    const ad::Value& slot(SpeakerTag tag) const { return tag == SpeakerTag::S0 ? i0 : i1; }
};

// Per-segment injection followed by temporal concatenation, S0 segments
// first. ID embeddings apply even when the speaker embedding is the zero
// sentinel.
inline ad::Value assemble_dialogue(const std::vector<std::pair<SpeakerTag, ad::Value>>& segments,
                                   const std::vector<SpeakerEmbedding>& speakers,
                                   const IdEmbedding& ids) {
    require(!segments.empty(), Errc::EmptyInput, "assemble_dialogue: no segments");
    int max_slot = 0;
    for (const auto& [tag, grid] : segments) max_slot = std::max(max_slot, static_cast<int>(tag));
    require(max_slot <= 1, Errc::SegmentCountExceeded, "more than two dialogue speakers");
    require(speakers.size() >= static_cast<std::size_t>(max_slot) + 1, Errc::ShapeMismatch,
            "missing speaker embedding for a segment slot");

    const Eigen::Index width = segments.front().second->val.cols();
    std::vector<ad::Value> parts;
    for (const auto& [tag, grid] : segments) {
        const auto& s = speakers[static_cast<std::size_t>(tag)];
        Mat srow = Mat::Zero(1, width);
        if (s.values.size() > 0) {
            require(s.values.size() == width, Errc::ShapeMismatch,
                    "speaker embedding width differs from phoneme width");
            srow.row(0) = s.values.transpose();
        }
        parts.push_back(inject_timbre(grid, ad::constant(srow), ids.slot(tag)));
    }
    return ad::concat_rows(parts);
}

// ---------------------------------------------------------------------------
// placeholders and condition assembly
// ---------------------------------------------------------------------------

// Trainable placeholder rows, one per conditioning stream.
struct Placeholders {
    ad::Value text;
    ad::Value phoneme;
    ad::Value image;
    ad::Value refaudio;

    static Placeholders init(Eigen::Index width, Rng& rng, double stddev = 0.02) {
        return {ad::param(randn(1, width, rng, stddev)), ad::param(randn(1, width, rng, stddev)),
                ad::param(randn(1, width, rng, stddev)), ad::param(randn(1, width, rng, stddev))};
    }
};

// Substitutes placeholder rows for masked streams; unmasked streams pass
// through untouched. Masked placeholders broadcast to a single nominal row.
inline ConditionSet apply_conditions(const ad::Value& text_emb, const ad::Value& phoneme_emb,
                                     const std::optional<ad::Value>& image_emb,
                                     const std::optional<ad::Value>& refaudio_emb,
                                     const MaskFlags& flags, const Placeholders& ph) {
    ConditionSet cs;
    cs.mask = flags;
    cs.text_emb = flags.text_dropped ? ph.text : text_emb;
    cs.phoneme_emb = flags.full_drop ? ph.phoneme : phoneme_emb;
    cs.image_emb = (flags.image_masked || !image_emb.has_value()) ? ph.image : *image_emb;
    cs.refaudio_emb = (flags.audio_masked || !refaudio_emb.has_value()) ? ph.refaudio : *refaudio_emb;
    if (!flags.full_drop) {
        // Absent optional modalities behave like masked ones.
        cs.mask.image_masked = flags.image_masked || !image_emb.has_value();
        cs.mask.audio_masked = flags.audio_masked || !refaudio_emb.has_value();
    }
    return cs;
}

}  // namespace sonate
