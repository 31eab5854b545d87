#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sonate/errors.hpp"
#include "sonate/instruction.hpp"
#include "sonate/linalg.hpp"
#include "sonate/rng.hpp"

namespace sonate {

// ---------------------------------------------------------------------------
// world specification
// ---------------------------------------------------------------------------

struct WorldConfig {
    int alphabet_size = kPhonemeAlphabetSize;
    int n_speakers = 8;
    int d_audio = 16;
    int d_video = 12;
    int audio_hz = 43;
    int video_hz = 3;
    double timbre_alpha = 0.5;   // timbre mixing coefficient in audio rows
    double noise_sigma = 0.1;    // default background amplitude
    double noise_rho = 0.9;      // AR(1) coefficient; >0 makes noise colored
    std::uint64_t seed = 1;
};

// The synthetic audio-video world: a phoneme acoustic codebook, a speaker
// timbre bank, a lip-aperture scalar per phoneme, and an AR(1) background
// noise process. It plays the role of the frozen audio/video codecs: every
// latent it emits can be decoded back to ground truth.
struct WorldSpec {
    WorldConfig cfg;
    Mat codebook;           // A x d_audio, unit rows, pairwise distance > 0.1
    Mat timbre_bank;        // K x d_audio, unit rows, pairwise cosine < 0.8
    std::vector<double> aperture;  // per-phoneme lip aperture in [0, 1]
    Mat residual_projector; // projects onto the orthogonal complement of the timbre span
    Mat projected_codebook; // codebook after timbre projection, cached for decoding

    int alphabet_size() const { return cfg.alphabet_size; }
    int n_speakers() const { return cfg.n_speakers; }

    // Attribute words for captions. Several speakers share a bucket, so a
    // caption narrows the voice down without identifying it.
    const char* pitch_word(int speaker) const {
        static const char* kPitch[3] = {"low", "mid", "high"};
        return kPitch[speaker % 3];
    }
    const char* style_word(int speaker) const {
        static const char* kStyle[2] = {"calm", "bright"};
        return kStyle[(speaker / 3) % 2];
    }
    std::string audio_caption_for(int speaker) const {
        return std::string("a ") + pitch_word(speaker) + " " + style_word(speaker) + " voice";
    }
    std::string video_caption_for(const std::vector<int>& speakers) const {
        if (speakers.size() == 1)
            return std::string("a ") + pitch_word(speakers[0]) + " " + style_word(speakers[0]) + " face";
        return std::string("a ") + pitch_word(speakers[0]) + " face and a " + pitch_word(speakers[1]) +
               " face talking";
    }
};

namespace detail {

inline double min_pairwise_distance(const Mat& rows) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index j = i + 1; j < rows.rows(); ++j)
            best = std::min(best, (rows.row(i) - rows.row(j)).norm());
    return best;
}

inline double max_pairwise_cosine(const Mat& unit_rows) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < unit_rows.rows(); ++i)
        for (Eigen::Index j = i + 1; j < unit_rows.rows(); ++j)
            best = std::max(best, unit_rows.row(i).dot(unit_rows.row(j)));
    return best;
}

}  // namespace detail

// Draws the codebook and timbre bank, resampling until the separation
// invariants hold both raw and after timbre projection (the projection is
// what the decoding oracle sees). Deterministic per seed.
inline WorldSpec build_world(const WorldConfig& cfg, std::uint64_t seed) {
    require(cfg.alphabet_size >= 4, Errc::ConstructionFailure, "alphabet size must be >= 4");
    require(cfg.n_speakers >= 2, Errc::ConstructionFailure, "need at least 2 speakers");
    require(cfg.d_audio > cfg.n_speakers, Errc::ConstructionFailure,
            "d_audio must exceed n_speakers for timbre projection");
    require(cfg.audio_hz > 0 && cfg.video_hz > 0, Errc::ConstructionFailure, "rates must be positive");

    WorldSpec w;
    w.cfg = cfg;
    w.cfg.seed = seed;
    Rng gen(derive_seed(seed, 1));
    constexpr int kMaxAttempts = 200;

    // Timbre bank: unit rows with pairwise cosine < 0.8.
    for (int attempt = 0;; ++attempt) {
        require(attempt < kMaxAttempts, Errc::ConstructionFailure, "timbre bank resampling exhausted");
        Mat bank(cfg.n_speakers, cfg.d_audio);
        for (int s = 0; s < cfg.n_speakers; ++s) bank.row(s) = random_unit(cfg.d_audio, gen).transpose();
        if (detail::max_pairwise_cosine(bank) < 0.8) {
            w.timbre_bank = std::move(bank);
            break;
        }
    }

    // Projector onto the orthogonal complement of the timbre span.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w.timbre_bank.transpose(), Eigen::ComputeFullU);
    const Eigen::Index rank = svd.rank();
    const Eigen::MatrixXd basis = svd.matrixU().leftCols(rank);
    w.residual_projector =
        Mat(Eigen::MatrixXd::Identity(cfg.d_audio, cfg.d_audio) - basis * basis.transpose());

    // Codebook: unit rows, separated before and after projection so noisy
    // nearest-codeword decoding stays unambiguous.
    for (int attempt = 0;; ++attempt) {
        require(attempt < kMaxAttempts, Errc::ConstructionFailure, "codebook resampling exhausted");
        Mat book(cfg.alphabet_size, cfg.d_audio);
        for (int a = 0; a < cfg.alphabet_size; ++a) book.row(a) = random_unit(cfg.d_audio, gen).transpose();
        Mat projected = book * w.residual_projector.transpose();
        if (detail::min_pairwise_distance(book) > 0.1 && detail::min_pairwise_distance(projected) > 0.1) {
            w.codebook = std::move(book);
            w.projected_codebook = std::move(projected);
            break;
        }
    }

    w.aperture.resize(static_cast<std::size_t>(cfg.alphabet_size));
    for (int a = 0; a < cfg.alphabet_size; ++a)
        w.aperture[static_cast<std::size_t>(a)] =
            static_cast<double>(a) / static_cast<double>(cfg.alphabet_size - 1);
    return w;
}

// ---------------------------------------------------------------------------
// quadruplet synthesis
// ---------------------------------------------------------------------------

struct Quadruplet {
    Mat audio;   // T_a x d_audio
    Mat video;   // T_v x d_video
    std::vector<int> caption;               // encoded video-caption tokens (vocab ids)
    std::string video_caption_text;
    std::vector<std::string> audio_caption_texts;  // one per speaker
    std::vector<TranscriptSegment> segments;
    std::vector<int> speaker_ids;           // world speaker indices, S0 first
    double duration = 0.0;
};

struct SynthRequest {
    std::vector<int> speakers;              // 1 or 2 world speaker indices
    std::vector<TranscriptSegment> segments;
    double duration = 1.0;
    double noise_amplitude = 0.1;
};

// Uniform phoneme-to-time stretching: audio row i carries phoneme slot
// floor(i * n / T_a). Shared by synthesis and the decoding oracle.
inline Eigen::Index phoneme_slot_of_row(Eigen::Index row, Eigen::Index t_audio, Eigen::Index n_phonemes) {
    return (row * n_phonemes) / t_audio;
}

// Audio rows spanned by video frame j.
inline std::pair<Eigen::Index, Eigen::Index> frame_row_span(Eigen::Index frame, Eigen::Index t_audio,
                                                            Eigen::Index t_video) {
    const Eigen::Index lo = (frame * t_audio) / t_video;
    const Eigen::Index hi = ((frame + 1) * t_audio) / t_video;
    return {lo, std::max(hi, lo + 1)};
}

namespace detail {

// AR(1) background noise grid with stationary std = amplitude.
inline Mat ar1_noise(Eigen::Index rows, Eigen::Index cols, double amplitude, double rho, Rng& rng) {
    Mat n = Mat::Zero(rows, cols);
    if (amplitude <= 0.0 || rows == 0) return n;
    const double innovation = amplitude * std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (Eigen::Index j = 0; j < cols; ++j) {
        double prev = amplitude * rng.normal();
        n(0, j) = prev;
        for (Eigen::Index i = 1; i < rows; ++i) {
            prev = rho * prev + innovation * rng.normal();
            n(i, j) = prev;
        }
    }
    return n;
}

inline Mat round_through_float(Mat m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<double>(static_cast<float>(m(i, j)));
    return m;
}

}  // namespace detail

inline Quadruplet synth_quadruplet(const WorldSpec& world, const SynthRequest& request, Rng& rng) {
    require(!request.speakers.empty() && request.speakers.size() <= 2, Errc::SegmentCountExceeded,
            "1 or 2 speakers required");
    for (int s : request.speakers)
        require(s >= 0 && s < world.n_speakers(), Errc::ConstructionFailure, "speaker id out of range");

    const Eigen::Index t_audio = static_cast<Eigen::Index>(std::llround(request.duration * world.cfg.audio_hz));
    const Eigen::Index t_video = static_cast<Eigen::Index>(std::llround(request.duration * world.cfg.video_hz));
    require(t_audio >= 1 && t_video >= 1, Errc::DurationTooShort, "duration too short for one frame");

    // Flatten segments; per-slot speaker follows the segment's tag.
    std::vector<int> phonemes;
    std::vector<int> slot_speaker;
    for (const auto& seg : request.segments) {
        const std::size_t speaker_index = (seg.tag == SpeakerTag::S0) ? 0 : 1;
        require(speaker_index < request.speakers.size(), Errc::TagMismatch,
                "segment tag has no matching speaker");
        for (int id : seg.phonemes.ids) {
            require(id >= 0 && id < world.alphabet_size(), Errc::UnmappableCharacter,
                    "phoneme id outside world alphabet");
            phonemes.push_back(id);
            slot_speaker.push_back(request.speakers[speaker_index]);
        }
    }
    const Eigen::Index n_ph = static_cast<Eigen::Index>(phonemes.size());
    require(n_ph <= t_audio, Errc::DurationTooShort, "fewer audio steps than phonemes");

    Quadruplet q;
    q.duration = request.duration;
    q.speaker_ids = request.speakers;
    q.segments = request.segments;

    const Mat noise =
        detail::ar1_noise(t_audio, world.cfg.d_audio, request.noise_amplitude, world.cfg.noise_rho, rng);
    q.audio = Mat::Zero(t_audio, world.cfg.d_audio);
    for (Eigen::Index i = 0; i < t_audio; ++i) {
        if (n_ph > 0) {
            const Eigen::Index slot = phoneme_slot_of_row(i, t_audio, n_ph);
            q.audio.row(i) = world.codebook.row(phonemes[static_cast<std::size_t>(slot)]) +
                             world.cfg.timbre_alpha *
                                 world.timbre_bank.row(slot_speaker[static_cast<std::size_t>(slot)]);
        }
        q.audio.row(i) += noise.row(i);
    }

    q.video = Mat::Zero(t_video, world.cfg.d_video);
    for (Eigen::Index j = 0; j < t_video; ++j) {
        if (n_ph > 0) {
            // Channel 0 carries the aperture of the phoneme active at the
            // frame midpoint; the rest is low-amplitude texture.
            const auto [lo, hi] = frame_row_span(j, t_audio, t_video);
            const Eigen::Index mid = std::min(lo + (hi - lo) / 2, t_audio - 1);
            const Eigen::Index slot = phoneme_slot_of_row(mid, t_audio, n_ph);
            q.video(j, 0) = world.aperture[static_cast<std::size_t>(phonemes[static_cast<std::size_t>(slot)])];
        }
        for (Eigen::Index c = 1; c < world.cfg.d_video; ++c) q.video(j, c) = 0.05 * rng.normal();
    }

    // Latents round through f32 so file round trips are bit-exact.
    q.audio = detail::round_through_float(std::move(q.audio));
    q.video = detail::round_through_float(std::move(q.video));

    q.video_caption_text = world.video_caption_for(request.speakers);
    for (int s : request.speakers) q.audio_caption_texts.push_back(world.audio_caption_for(s));
    q.caption = Vocab::standard().tokenize(q.video_caption_text);
    return q;
}

// A clean reference clip for a speaker: fixed pangram-ish transcript, no
// background noise. Used as the enrollment side of verification pairs.
inline Quadruplet reference_clip(const WorldSpec& world, int speaker, double duration = 1.0) {
    SynthRequest req;
    req.speakers = {speaker};
    TranscriptSegment seg;
    seg.tag = SpeakerTag::S0;
    seg.phonemes = g2p("voice check");
    req.segments = {seg};
    req.duration = duration;
    req.noise_amplitude = 0.0;
    Rng rng(derive_seed(world.cfg.seed, 0xEEF, static_cast<std::uint64_t>(speaker)));
    return synth_quadruplet(world, req, rng);
}

// Draws a clip from the world's background-noise process (no phonemes). This
// is the "naturally collected noise" source for negative conditioning.
inline Mat natural_noise_clip(const WorldSpec& world, Eigen::Index rows, Rng& rng) {
    Mat m = detail::ar1_noise(rows, world.cfg.d_audio, world.cfg.noise_sigma, world.cfg.noise_rho, rng);
    return detail::round_through_float(std::move(m));
}

// ---------------------------------------------------------------------------
// verification filter
// ---------------------------------------------------------------------------

inline double cosine_similarity(const Vec& a, const Vec& b) {
    require(a.size() == b.size(), Errc::ShapeMismatch, "cosine: lengths differ");
    const double na = a.norm(), nb = b.norm();
    require(na > 0.0 && nb > 0.0, Errc::ZeroVector, "cosine of a zero vector");
    return a.dot(b) / (na * nb);
}

struct FilterRow {
    std::size_t index = 0;
    double score = 0.0;
    bool accepted = false;
};

struct FilterReport {
    std::vector<FilterRow> rows;
    double threshold = 0.0;
    double accept_rate = 0.0;
};

// Keeps (generated, reference) pairs whose speaker-embedding cosine reaches
// the threshold. `embed` maps an audio latent grid to a unit vector.
template <typename EmbedFn>
FilterReport verification_filter(const std::vector<std::pair<Mat, Mat>>& pairs, EmbedFn&& embed,
                                 double threshold) {
    FilterReport report;
    report.threshold = threshold;
    std::size_t accepted = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        FilterRow row;
        row.index = i;
        const Vec eg = embed(pairs[i].first);
        const Vec er = embed(pairs[i].second);
        row.score = cosine_similarity(eg, er);
        row.accepted = row.score >= threshold;
        accepted += row.accepted ? 1 : 0;
        report.rows.push_back(row);
    }
    report.accept_rate = pairs.empty() ? 0.0 : static_cast<double>(accepted) / static_cast<double>(pairs.size());
    return report;
}

}  // namespace sonate
