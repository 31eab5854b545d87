#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "sonate/backbone.hpp"
#include "sonate/conditioning.hpp"
#include "sonate/dataset.hpp"
#include "sonate/errors.hpp"
#include "sonate/flow.hpp"
#include "sonate/train.hpp"

namespace sonate {

// Run-wide configuration. JSON with a strict schema: unknown keys are errors,
// flags override file fields, and every field has a documented default (the
// seed included — nothing is ever wall-clock seeded).
struct RunConfig {
    std::uint64_t seed = 1234;

    WorldConfig world{};  // world.seed defaults to 1

    BackboneConfig backbone{};

    ModalityMaskPolicy mask{};

    struct Sampler {
        int steps = 20;
        double guidance_w = 2.0;
        std::string strategy = "natural";
        std::optional<double> w_audio;   // per-modality overrides
        std::optional<double> w_video;
    } sampler;

    struct Train {
        int batch_size = 8;
        int steps = 1200;
        double lr = 1e-3;
        std::string optimizer = "sgd";
        double grad_clip = 0.0;
        int checkpoint_every = 500;
        int speaker_steps = 600;
        int speaker_batch = 16;
        double speaker_lr = 1e-2;
        int speaker_hidden = 64;
    } train;

    DatasetOptions data{};

    struct Filter {
        double threshold = 0.7;
    } filter;

    struct Eval {
        int n_samples = 100;
        double duration = 1.0;
    } eval;

    struct Paths {
        std::string dataset_dir = "data";
        std::string checkpoint = "checkpoint.snck";
        std::string output_dir = "out";
    } paths;

    SamplerConfig sampler_config() const {
        SamplerConfig sc;
        sc.steps = sampler.steps;
        sc.guidance_w = sampler.guidance_w;
        sc.strategy = parse_strategy(sampler.strategy);
        if (sampler.w_audio.has_value() || sampler.w_video.has_value())
            sc.per_modality_w = {sampler.w_audio.value_or(sampler.guidance_w),
                                 sampler.w_video.value_or(sampler.guidance_w)};
        sc.validate();
        return sc;
    }

    OptimizerConfig optimizer_config() const {
        OptimizerConfig oc;
        oc.kind = parse_optimizer(train.optimizer);
        oc.lr = train.lr;
        oc.grad_clip = train.grad_clip;
        return oc;
    }

    SpeakerEncoderConfig speaker_config() const {
        SpeakerEncoderConfig sc;
        sc.d_audio = world.d_audio;
        sc.hidden = train.speaker_hidden;
        sc.embed_dim = backbone.width;
        sc.steps = train.speaker_steps;
        sc.batch_size = train.speaker_batch;
        sc.lr = train.speaker_lr;
        return sc;
    }

    void validate() const {
        backbone.validate();
        mask.validate();
        require(sampler.steps >= 1, Errc::SchemaError, "sampler.steps must be >= 1");
        require(train.batch_size >= 1, Errc::SchemaError, "train.batch_size must be >= 1");
        require(train.steps >= 0, Errc::SchemaError, "train.steps must be >= 0");
        require(data.n_clips >= 1, Errc::SchemaError, "data.n_clips must be >= 1");
        require(eval.n_samples >= 1, Errc::SchemaError, "eval.n_samples must be >= 1");
        require(world.d_audio == backbone.d_audio && world.d_video == backbone.d_video,
                Errc::SchemaError, "world and backbone latent widths must agree");
        parse_strategy(sampler.strategy);
        parse_optimizer(train.optimizer);
    }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["world"] = world_config_to_json(c.world);
    j["world"]["seed"] = c.world.seed;
    j["backbone"] = {{"depth", c.backbone.depth},     {"width", c.backbone.width},
                     {"heads", c.backbone.heads},     {"d_audio", c.backbone.d_audio},
                     {"d_video", c.backbone.d_video}, {"rope_base", c.backbone.rope_base}};
    j["mask"] = {{"p_image", c.mask.p_image},
                 {"p_refaudio", c.mask.p_refaudio},
                 {"p_full_drop", c.mask.p_full_drop}};
    j["sampler"] = {{"steps", c.sampler.steps},
                    {"guidance_w", c.sampler.guidance_w},
                    {"strategy", c.sampler.strategy},
                    {"w_audio", c.sampler.w_audio.has_value() ? nlohmann::json(*c.sampler.w_audio)
                                                              : nlohmann::json(nullptr)},
                    {"w_video", c.sampler.w_video.has_value() ? nlohmann::json(*c.sampler.w_video)
                                                              : nlohmann::json(nullptr)}};
    j["train"] = {{"batch_size", c.train.batch_size},
                  {"steps", c.train.steps},
                  {"lr", c.train.lr},
                  {"optimizer", c.train.optimizer},
                  {"grad_clip", c.train.grad_clip},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"speaker_steps", c.train.speaker_steps},
                  {"speaker_batch", c.train.speaker_batch},
                  {"speaker_lr", c.train.speaker_lr},
                  {"speaker_hidden", c.train.speaker_hidden}};
    j["data"] = {{"n_clips", c.data.n_clips},
                 {"duration", c.data.duration},
                 {"dialogue_fraction", c.data.dialogue_fraction},
                 {"noise_amplitude", c.data.noise_amplitude},
                 {"phonemes_per_second", c.data.phonemes_per_second}};
    j["filter"] = {{"threshold", c.filter.threshold}};
    j["eval"] = {{"n_samples", c.eval.n_samples}, {"duration", c.eval.duration}};
    j["paths"] = {{"dataset_dir", c.paths.dataset_dir},
                  {"checkpoint", c.paths.checkpoint},
                  {"output_dir", c.paths.output_dir}};
    return j;
}

namespace detail {

// Rejects any key that the defaults do not know, reporting its dotted path.
inline void check_schema(const nlohmann::json& input, const nlohmann::json& schema,
                         const std::string& prefix) {
    for (auto it = input.begin(); it != input.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        require(schema.contains(it.key()), Errc::SchemaError, "unknown config key '" + path + "'");
        const auto& sv = schema.at(it.key());
        if (sv.is_object()) {
            require(it.value().is_object(), Errc::SchemaError,
                    "config key '" + path + "' must be an object");
            check_schema(it.value(), sv, path);
        }
    }
}

inline void merge_into(nlohmann::json& base, const nlohmann::json& overlay) {
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()) && base.at(it.key()).is_object())
            merge_into(base.at(it.key()), it.value());
        else
            base[it.key()] = it.value();
    }
}

template <typename T>
T get_field(const nlohmann::json& j, const std::string& path, const char* type_name) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        raise(Errc::SchemaError, "config key '" + path + "' must be " + type_name);
    }
}

}  // namespace detail

inline RunConfig config_from_json(nlohmann::json j) {
    RunConfig c;
    const nlohmann::json defaults = to_json(c);
    detail::check_schema(j, defaults, "");
    nlohmann::json merged = defaults;
    detail::merge_into(merged, j);

    auto u64 = [&](const nlohmann::json& n, const std::string& p) {
        return detail::get_field<std::uint64_t>(n, p, "an unsigned integer");
    };
    auto i32 = [&](const nlohmann::json& n, const std::string& p) {
        return detail::get_field<int>(n, p, "an integer");
    };
    auto f64 = [&](const nlohmann::json& n, const std::string& p) {
        return detail::get_field<double>(n, p, "a number");
    };
    auto str = [&](const nlohmann::json& n, const std::string& p) {
        return detail::get_field<std::string>(n, p, "a string");
    };

    c.seed = u64(merged["seed"], "seed");
    const auto& w = merged["world"];
    c.world.alphabet_size = i32(w["alphabet_size"], "world.alphabet_size");
    c.world.n_speakers = i32(w["n_speakers"], "world.n_speakers");
    c.world.d_audio = i32(w["d_audio"], "world.d_audio");
    c.world.d_video = i32(w["d_video"], "world.d_video");
    c.world.audio_hz = i32(w["audio_hz"], "world.audio_hz");
    c.world.video_hz = i32(w["video_hz"], "world.video_hz");
    c.world.timbre_alpha = f64(w["timbre_alpha"], "world.timbre_alpha");
    c.world.noise_sigma = f64(w["noise_sigma"], "world.noise_sigma");
    c.world.noise_rho = f64(w["noise_rho"], "world.noise_rho");
    c.world.seed = u64(w["seed"], "world.seed");
    const auto& b = merged["backbone"];
    c.backbone.depth = i32(b["depth"], "backbone.depth");
    c.backbone.width = i32(b["width"], "backbone.width");
    c.backbone.heads = i32(b["heads"], "backbone.heads");
    c.backbone.d_audio = i32(b["d_audio"], "backbone.d_audio");
    c.backbone.d_video = i32(b["d_video"], "backbone.d_video");
    c.backbone.rope_base = f64(b["rope_base"], "backbone.rope_base");
    const auto& m = merged["mask"];
    c.mask.p_image = f64(m["p_image"], "mask.p_image");
    c.mask.p_refaudio = f64(m["p_refaudio"], "mask.p_refaudio");
    c.mask.p_full_drop = f64(m["p_full_drop"], "mask.p_full_drop");
    const auto& s = merged["sampler"];
    c.sampler.steps = i32(s["steps"], "sampler.steps");
    c.sampler.guidance_w = f64(s["guidance_w"], "sampler.guidance_w");
    c.sampler.strategy = str(s["strategy"], "sampler.strategy");
    if (!s["w_audio"].is_null()) c.sampler.w_audio = f64(s["w_audio"], "sampler.w_audio");
    if (!s["w_video"].is_null()) c.sampler.w_video = f64(s["w_video"], "sampler.w_video");
    const auto& t = merged["train"];
    c.train.batch_size = i32(t["batch_size"], "train.batch_size");
    c.train.steps = i32(t["steps"], "train.steps");
    c.train.lr = f64(t["lr"], "train.lr");
    c.train.optimizer = str(t["optimizer"], "train.optimizer");
    c.train.grad_clip = f64(t["grad_clip"], "train.grad_clip");
    c.train.checkpoint_every = i32(t["checkpoint_every"], "train.checkpoint_every");
    c.train.speaker_steps = i32(t["speaker_steps"], "train.speaker_steps");
    c.train.speaker_batch = i32(t["speaker_batch"], "train.speaker_batch");
    c.train.speaker_lr = f64(t["speaker_lr"], "train.speaker_lr");
    c.train.speaker_hidden = i32(t["speaker_hidden"], "train.speaker_hidden");
    const auto& d = merged["data"];
    c.data.n_clips = i32(d["n_clips"], "data.n_clips");
    c.data.duration = f64(d["duration"], "data.duration");
    c.data.dialogue_fraction = f64(d["dialogue_fraction"], "data.dialogue_fraction");
    c.data.noise_amplitude = f64(d["noise_amplitude"], "data.noise_amplitude");
    c.data.phonemes_per_second = f64(d["phonemes_per_second"], "data.phonemes_per_second");
    c.filter.threshold = f64(merged["filter"]["threshold"], "filter.threshold");
    c.eval.n_samples = i32(merged["eval"]["n_samples"], "eval.n_samples");
    c.eval.duration = f64(merged["eval"]["duration"], "eval.duration");
    const auto& p = merged["paths"];
    c.paths.dataset_dir = str(p["dataset_dir"], "paths.dataset_dir");
    c.paths.checkpoint = str(p["checkpoint"], "paths.checkpoint");
    c.paths.output_dir = str(p["output_dir"], "paths.output_dir");

    c.validate();
    return c;
}

// Dotted-path overrides from CLI flags, e.g. {"sampler.steps", "40"}.
// Flag > file > default.
inline RunConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::map<std::string, std::string>& overrides = {}) {
    nlohmann::json j = nlohmann::json::object();
    if (path.has_value()) {
        std::ifstream is(*path);
        require(is.good(), Errc::IoError, "cannot read config " + path->string());
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            raise(Errc::SchemaError, "config is not valid JSON: " + std::string(e.what()));
        }
        require(j.is_object(), Errc::SchemaError, "config root must be a JSON object");
    }
    const nlohmann::json defaults = to_json(RunConfig{});
    for (const auto& [dotted, value] : overrides) {
        // Walk to the schema leaf to learn the expected type.
        const nlohmann::json* leaf = &defaults;
        nlohmann::json* target = &j;
        std::size_t start = 0;
        while (true) {
            const std::size_t dot = dotted.find('.', start);
            const std::string key = dotted.substr(start, dot - start);
            require(leaf->is_object() && leaf->contains(key), Errc::SchemaError,
                    "unknown config key '" + dotted + "'");
            leaf = &leaf->at(key);
            if (dot == std::string::npos) {
                try {
                    if (leaf->is_string()) (*target)[key] = value;
                    else (*target)[key] = nlohmann::json::parse(value);
                } catch (const nlohmann::json::exception&) {
                    raise(Errc::SchemaError, "cannot parse override for '" + dotted + "'");
                }
                break;
            }
            if (!target->contains(key) || !(*target)[key].is_object())
                (*target)[key] = nlohmann::json::object();
            target = &(*target)[key];
            start = dot + 1;
        }
    }
    return config_from_json(std::move(j));
}

}  // namespace sonate
