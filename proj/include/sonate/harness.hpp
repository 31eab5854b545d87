#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonate/flow.hpp"
#include "sonate/metrics.hpp"
#include "sonate/model.hpp"
#include "sonate/parallel.hpp"
#include "sonate/speaker.hpp"
#include "sonate/train.hpp"
#include "sonate/world.hpp"

namespace sonate {

// ---------------------------------------------------------------------------
// metric report
// ---------------------------------------------------------------------------

struct MetricReport {
    double ter = 0.0;
    double speaker_sim = 0.0;
    double sync_score = 0.0;
    double fd = 0.0;
    double kl = 0.0;
    int n_samples = 0;
    std::string strategy = "none";
    double gaussian_rms = 0.0;
    double guidance_w = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(n_samples >= 1, Errc::EmptyInput, "metric report needs at least one sample");
        for (double v : {ter, speaker_sim, sync_score, fd, kl})
            require(std::isfinite(v), Errc::DegenerateCovariance, "non-finite metric value");
    }

    nlohmann::json to_json() const {
        return {{"ter", ter},
                {"speaker_sim", speaker_sim},
                {"sync_score", sync_score},
                {"fd", fd},
                {"kl", kl},
                {"n_samples", n_samples},
                {"strategy", strategy},
                {"gaussian_rms", gaussian_rms},
                {"guidance_w", guidance_w},
                {"seed", seed}};
    }
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline constexpr const char* kAblationCsvHeader =
    "strategy,gaussian_rms,n_samples,ter,speaker_sim,sync_score,fd,kl,guidance_w,seed";

inline std::string csv_row(const MetricReport& r) {
    std::string out = r.strategy;
    for (double v : {r.gaussian_rms, static_cast<double>(r.n_samples), r.ter, r.speaker_sim,
                     r.sync_score, r.fd, r.kl, r.guidance_w})
        out += "," + format_double(v);
    out += "," + std::to_string(r.seed);
    return out;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

// One evaluation case: the instruction to realize and the reference clip
// providing the target timbre and the ground-truth transcript.
struct EvalItem {
    InstructionBundle bundle;
    Quadruplet reference;
};

inline std::vector<EvalItem> eval_items_from_clips(const std::vector<Quadruplet>& clips, int limit,
                                                   const Vocab& vocab = Vocab::standard()) {
    std::vector<EvalItem> items;
    for (const auto& q : clips) {
        if (static_cast<int>(items.size()) >= limit) break;
        if (q.speaker_ids.size() != 1) continue;  // cloning eval uses single-speaker clips
        items.push_back({bundle_from_quadruplet(q, vocab), q});
    }
    return items;
}

struct GenerationResult {
    LatentClip clip;
    SpeakerEmbedding reference_timbre;
};

// Generates one clip for an eval item. `base_seed`/`index` fix the initial
// noise draw; only the conditioning differs between strategies or task modes.
inline GenerationResult generate_for_item(const SonateModel& model, const SpeakerEncoder& encoder,
                                          const EvalItem& item, const MaskFlags& flags,
                                          const SpeakerEmbedding& s_neg, const SamplerConfig& cfg,
                                          std::uint64_t base_seed, std::size_t index) {
    const Eigen::Index t_audio = item.reference.audio.rows();
    const Eigen::Index t_video = item.reference.video.rows();

    GenerationResult out;
    out.reference_timbre = encoder.embed(item.reference.audio);
    std::vector<SpeakerEmbedding> speakers;
    if (!flags.audio_masked) speakers.push_back(out.reference_timbre);
    std::optional<Vec> ref_image;
    if (!flags.image_masked && item.reference.video.rows() > 0)
        ref_image = Vec(item.reference.video.row(0).transpose());

    const PreparedConditions cond =
        model.build_conditions(item.bundle, speakers, ref_image, flags, t_audio);
    const PreparedConditions neg = model.build_negative_conditions(s_neg);

    Rng noise_rng(derive_seed(base_seed, 0xBA5E, index));
    LatentShape shape{t_audio, model.config().d_audio, t_video, model.config().d_video};
    out.clip = euler_sample(model, cond, neg, cfg, shape, noise_rng);
    return out;
}

// ---------------------------------------------------------------------------
// metric evaluation over generated clips
// ---------------------------------------------------------------------------

inline PhonemeSequence bundle_phonemes(const InstructionBundle& bundle) {
    PhonemeSequence seq;
    for (const auto& seg : bundle.segments)
        seq.ids.insert(seq.ids.end(), seg.phonemes.ids.begin(), seg.phonemes.ids.end());
    return seq;
}

// TER, speaker similarity, sync, FD and KL of generated clips against the
// eval items' references.
inline MetricReport evaluate_generations(const std::vector<GenerationResult>& generations,
                                         const std::vector<EvalItem>& items, const SpeakerEncoder& encoder,
                                         const WorldSpec& world) {
    require(generations.size() == items.size(), Errc::ShapeMismatch, "generation/item count mismatch");
    require(!items.empty(), Errc::EmptyInput, "no eval items");
    MetricReport r;
    r.n_samples = static_cast<int>(items.size());
    Eigen::Index gen_rows = 0, ref_rows = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        gen_rows += generations[i].clip.audio.rows();
        ref_rows += items[i].reference.audio.rows();
    }
    Mat gen_features(gen_rows, world.cfg.d_audio);
    Mat ref_features(ref_rows, world.cfg.d_audio);
    Eigen::Index g = 0, f = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& gen = generations[i].clip;
        const PhonemeSequence truth = bundle_phonemes(items[i].bundle);
        const PhonemeSequence decoded =
            decode_phonemes(gen.audio, world, static_cast<Eigen::Index>(truth.size()));
        r.ter += token_error_rate(decoded, truth);
        const SpeakerEmbedding gen_emb = encoder.embed(gen.audio);
        r.speaker_sim += cosine_similarity(gen_emb.values, generations[i].reference_timbre.values);
        r.sync_score += sync_score(gen.audio, gen.video, world);
        gen_features.middleRows(g, gen.audio.rows()) = gen.audio;
        ref_features.middleRows(f, items[i].reference.audio.rows()) = items[i].reference.audio;
        g += gen.audio.rows();
        f += items[i].reference.audio.rows();
    }
    const double n = static_cast<double>(items.size());
    r.ter /= n;
    r.speaker_sim /= n;
    r.sync_score /= n;
    r.fd = frechet_distance(gen_features, ref_features);
    r.kl = kl_divergence(gen_features, ref_features);
    r.validate();
    return r;
}

// ---------------------------------------------------------------------------
// negative-conditioning ablation
// ---------------------------------------------------------------------------

struct AblationResult {
    std::vector<MetricReport> rows;               // one per strategy, enumeration order
    std::vector<std::vector<LatentClip>> clips;    // [strategy][item]
};

// Runs all eight negative strategies over the same eval items with shared
// base noise per sample index, so only the negative branch varies. TA2VA
// mode: reference audio present, no reference image.
inline AblationResult run_cfg_ablation(const SonateModel& model, const SpeakerEncoder& encoder,
                                       const WorldSpec& world, const std::vector<EvalItem>& items,
                                       SamplerConfig cfg, std::uint64_t seed) {
    require(!items.empty(), Errc::EmptyInput, "ablation needs eval items");
    const auto strategies = all_negative_strategies();
    AblationResult result;
    result.rows.resize(strategies.size());
    result.clips.resize(strategies.size());

    for (std::size_t s = 0; s < strategies.size(); ++s) {
        cfg.strategy = strategies[s];
        // One negative embedding per strategy per run, drawn independently of
        // the per-sample noise streams.
        Rng neg_rng(derive_seed(seed, 0x5E61, s));
        const SpeakerEmbedding s_neg =
            negative_embedding(strategies[s], encoder, &world, neg_rng, std::nullopt,
                               static_cast<Eigen::Index>(world.cfg.audio_hz));

        std::vector<GenerationResult> gens(items.size());
        const SamplerConfig cfg_local = cfg;
        parallel_for(items.size(), [&](std::size_t i) {
            gens[i] = generate_for_item(model, encoder, items[i], MaskFlags::ta2va(), s_neg, cfg_local,
                                        seed, i);
        });
        MetricReport row = evaluate_generations(gens, items, encoder, world);
        row.strategy = strategies[s].name();
        row.gaussian_rms = strategies[s].gaussian_rms;
        row.guidance_w = cfg.guidance_w;
        row.seed = seed;
        result.rows[s] = row;
        result.clips[s].reserve(items.size());
        for (auto& gen : gens) result.clips[s].push_back(std::move(gen.clip));
    }
    return result;
}

inline void write_ablation_csv(const std::filesystem::path& path, const std::vector<MetricReport>& rows) {
    std::ofstream os(path, std::ios::trunc);
    require(os.good(), Errc::IoError, "cannot write ablation csv " + path.string());
    os << kAblationCsvHeader << "\n";
    for (const auto& r : rows) os << csv_row(r) << "\n";
    require(os.good(), Errc::IoError, "ablation csv write failed");
}

}  // namespace sonate
