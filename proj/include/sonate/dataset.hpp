#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonate/errors.hpp"
#include "sonate/parallel.hpp"
#include "sonate/tensor_io.hpp"
#include "sonate/world.hpp"

namespace sonate {

// ---------------------------------------------------------------------------
// random clip requests
// ---------------------------------------------------------------------------

struct DatasetOptions {
    int n_clips = 5000;
    double duration = 1.0;
    double dialogue_fraction = 0.2;
    double noise_amplitude = 0.1;
    double phonemes_per_second = 6.0;
};

namespace detail {

inline std::string random_word(Rng& rng, int len) {
    std::string w;
    for (int i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.uniform_index(26)));
    return w;
}

// Words drawn until the phoneme budget is spent (spaces count as phonemes).
inline std::string random_transcript(Rng& rng, int phoneme_budget) {
    std::string text;
    int used = 0;
    while (used < phoneme_budget) {
        const int len = std::min<int>(2 + static_cast<int>(rng.uniform_index(3)), phoneme_budget - used);
        if (len < 2) break;
        if (!text.empty()) {
            text.push_back(' ');
            ++used;
        }
        text += random_word(rng, len);
        used += len;
    }
    if (text.empty()) text = random_word(rng, std::max(2, phoneme_budget));
    return text;
}

}  // namespace detail

inline SynthRequest random_request(const WorldSpec& world, const DatasetOptions& opts, Rng& rng) {
    SynthRequest req;
    req.duration = opts.duration;
    req.noise_amplitude = opts.noise_amplitude;
    const int budget =
        std::max(3, static_cast<int>(std::lround(opts.phonemes_per_second * opts.duration)));
    const bool dialogue = rng.bernoulli(opts.dialogue_fraction) && world.n_speakers() >= 2;
    if (dialogue) {
        const int s0 = static_cast<int>(rng.uniform_index(world.n_speakers()));
        int s1 = static_cast<int>(rng.uniform_index(world.n_speakers()));
        while (s1 == s0) s1 = static_cast<int>(rng.uniform_index(world.n_speakers()));
        req.speakers = {s0, s1};
        req.segments.push_back({SpeakerTag::S0, g2p(detail::random_transcript(rng, budget / 2))});
        req.segments.push_back({SpeakerTag::S1, g2p(detail::random_transcript(rng, budget / 2))});
    } else {
        req.speakers = {static_cast<int>(rng.uniform_index(world.n_speakers()))};
        req.segments.push_back({SpeakerTag::S0, g2p(detail::random_transcript(rng, budget))});
    }
    return req;
}

// Per-clip derived seeds make generation order-independent and parallel-safe.
inline std::vector<Quadruplet> generate_dataset(const WorldSpec& world, const DatasetOptions& opts,
                                                std::uint64_t seed) {
    std::vector<Quadruplet> clips(static_cast<std::size_t>(opts.n_clips));
    parallel_for(clips.size(), [&](std::size_t i) {
        Rng rng(derive_seed(seed, 0xDA7A, i));
        clips[i] = synth_quadruplet(world, random_request(world, opts, rng), rng);
    });
    return clips;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

struct ManifestClip {
    std::string path;  // tensor file, relative to the manifest directory
    std::vector<int> speakers;
    double duration = 0.0;
    std::string video_caption;
    std::vector<std::string> audio_captions;
    std::vector<std::pair<std::string, std::string>> segments;  // (tag, normalized text)
};

struct Manifest {
    WorldConfig world;
    std::uint64_t world_seed = 1;
    std::vector<ManifestClip> clips;
};

inline nlohmann::json world_config_to_json(const WorldConfig& w) {
    return nlohmann::json{{"alphabet_size", w.alphabet_size}, {"n_speakers", w.n_speakers},
                          {"d_audio", w.d_audio},             {"d_video", w.d_video},
                          {"audio_hz", w.audio_hz},           {"video_hz", w.video_hz},
                          {"timbre_alpha", w.timbre_alpha},   {"noise_sigma", w.noise_sigma},
                          {"noise_rho", w.noise_rho}};
}

inline WorldConfig world_config_from_json(const nlohmann::json& j) {
    WorldConfig w;
    w.alphabet_size = j.at("alphabet_size").get<int>();
    w.n_speakers = j.at("n_speakers").get<int>();
    w.d_audio = j.at("d_audio").get<int>();
    w.d_video = j.at("d_video").get<int>();
    w.audio_hz = j.at("audio_hz").get<int>();
    w.video_hz = j.at("video_hz").get<int>();
    w.timbre_alpha = j.at("timbre_alpha").get<double>();
    w.noise_sigma = j.at("noise_sigma").get<double>();
    w.noise_rho = j.at("noise_rho").get<double>();
    return w;
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    nlohmann::json j;
    j["format"] = "sonate-dataset";
    j["version"] = 1;
    j["world_seed"] = manifest.world_seed;
    j["world"] = world_config_to_json(manifest.world);
    j["clips"] = nlohmann::json::array();
    for (const auto& c : manifest.clips) {
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& [tag, text] : c.segments) segs.push_back({{"tag", tag}, {"text", text}});
        j["clips"].push_back({{"path", c.path},
                              {"speakers", c.speakers},
                              {"duration", c.duration},
                              {"video_caption", c.video_caption},
                              {"audio_captions", c.audio_captions},
                              {"segments", segs}});
    }
    std::ofstream os(path);
    require(os.good(), Errc::IoError, "cannot write manifest " + path.string());
    os << j.dump(2) << "\n";
    require(os.good(), Errc::IoError, "manifest write failed");
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.good(), Errc::IoError, "cannot read manifest " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::SchemaError, "manifest is not valid JSON: " + std::string(e.what()));
    }
    require(j.value("format", "") == "sonate-dataset", Errc::SchemaError, "not a dataset manifest");
    require(j.value("version", 0) == 1, Errc::VersionMismatch, "unsupported manifest version");
    Manifest m;
    m.world_seed = j.at("world_seed").get<std::uint64_t>();
    m.world = world_config_from_json(j.at("world"));
    for (const auto& cj : j.at("clips")) {
        ManifestClip c;
        c.path = cj.at("path").get<std::string>();
        c.speakers = cj.at("speakers").get<std::vector<int>>();
        c.duration = cj.at("duration").get<double>();
        c.video_caption = cj.at("video_caption").get<std::string>();
        c.audio_captions = cj.at("audio_captions").get<std::vector<std::string>>();
        for (const auto& sj : cj.at("segments"))
            c.segments.emplace_back(sj.at("tag").get<std::string>(), sj.at("text").get<std::string>());
        m.clips.push_back(std::move(c));
    }
    return m;
}

// ---------------------------------------------------------------------------
// dataset persistence
// ---------------------------------------------------------------------------

inline ManifestClip manifest_entry(const Quadruplet& q, const std::string& path) {
    ManifestClip c;
    c.path = path;
    c.speakers = q.speaker_ids;
    c.duration = q.duration;
    c.video_caption = q.video_caption_text;
    c.audio_captions = q.audio_caption_texts;
    for (const auto& seg : q.segments)
        c.segments.emplace_back(speaker_tag_name(seg.tag), phonemes_to_text(seg.phonemes));
    return c;
}

// Writes tensor files plus the manifest into `dir`; returns the manifest.
inline Manifest save_dataset(const std::filesystem::path& dir, const WorldSpec& world,
                             const std::vector<Quadruplet>& clips) {
    std::filesystem::create_directories(dir);
    Manifest m;
    m.world = world.cfg;
    m.world_seed = world.cfg.seed;
    m.clips.resize(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%06zu.snte", i);
        write_tensors(dir / name, {to_tensor("audio", clips[i].audio), to_tensor("video", clips[i].video)});
        m.clips[i] = manifest_entry(clips[i], name);
    });
    write_manifest(dir / "manifest.json", m);
    return m;
}

// Rebuilds quadruplets from a manifest: latents from tensor files, structure
// from the manifest text via g2p.
inline std::vector<Quadruplet> load_dataset(const std::filesystem::path& manifest_path,
                                            const Manifest& manifest) {
    const std::filesystem::path dir = manifest_path.parent_path();
    std::vector<Quadruplet> clips(manifest.clips.size());
    parallel_for(manifest.clips.size(), [&](std::size_t i) {
        const ManifestClip& c = manifest.clips[i];
        const auto tensors = read_tensors(dir / c.path);
        Quadruplet q;
        q.audio = to_mat(find_tensor(tensors, "audio"));
        q.video = to_mat(find_tensor(tensors, "video"));
        q.duration = c.duration;
        q.speaker_ids = c.speakers;
        q.video_caption_text = c.video_caption;
        q.audio_caption_texts = c.audio_captions;
        q.caption = Vocab::standard().tokenize(c.video_caption);
        for (const auto& [tag, text] : c.segments) {
            TranscriptSegment seg;
            require(tag == "S0" || tag == "S1", Errc::SchemaError, "bad segment tag in manifest");
            seg.tag = tag == "S0" ? SpeakerTag::S0 : SpeakerTag::S1;
            seg.phonemes = g2p(text);
            q.segments.push_back(std::move(seg));
        }
        clips[i] = std::move(q);
    });
    return clips;
}

}  // namespace sonate
