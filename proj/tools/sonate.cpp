// sonate: desk-scale joint audio-video generation against a synthetic world.
//
// Subcommands: gen-data | filter | train | sample | eval | ablate-cfg.
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
// machine-readable "E_<Code>: message" line on stderr.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "sonate/runtime.hpp"

namespace fs = std::filesystem;
using namespace sonate;

namespace {

struct CommonFlags {
    std::optional<std::string> config_path;
    std::map<std::string, std::string> overrides;
    bool print_config = false;

    RunConfig load() const {
        std::optional<fs::path> p;
        if (config_path) p = fs::path(*config_path);
        return load_config(p, overrides);
    }
};

// Registers --config/--print-config plus dotted-path overrides for the flags
// a command accepts. Flag > file > default.
void add_common(CLI::App* cmd, CommonFlags& flags,
                const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_flag("--print-config", flags.print_config, "print the effective config and exit");
    auto bind = [cmd, &flags](const std::string& flag, const std::string& path) {
        cmd->add_option_function<std::string>(
            flag, [&flags, path](const std::string& v) { flags.overrides[path] = v; });
    };
    bind("--seed", "seed");
    bind("--data", "paths.dataset_dir");
    bind("--checkpoint", "paths.checkpoint");
    bind("--out", "paths.output_dir");
    for (const auto& [flag, path] : extra) bind(flag, path);
}

bool handle_print_config(const CommonFlags& flags, const RunConfig& cfg) {
    if (!flags.print_config) return false;
    std::cout << to_json(cfg).dump(2) << "\n";
    return true;
}

Manifest load_manifest_for(const RunConfig& cfg) {
    return read_manifest(fs::path(cfg.paths.dataset_dir) / "manifest.json");
}

std::vector<Quadruplet> load_clips_for(const RunConfig& cfg, const Manifest& manifest) {
    return load_dataset(fs::path(cfg.paths.dataset_dir) / "manifest.json", manifest);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonFlags& flags) {
    const RunConfig cfg = flags.load();
    if (handle_print_config(flags, cfg)) return 0;
    const WorldSpec world = build_world(cfg.world, cfg.world.seed);
    const auto clips = generate_dataset(world, cfg.data, cfg.seed);
    const fs::path dir = cfg.paths.dataset_dir;
    save_dataset(dir, world, clips);
    std::cout << "wrote " << clips.size() << " clips to " << (dir / "manifest.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

int cmd_filter(const CommonFlags& flags) {
    const RunConfig cfg = flags.load();
    if (handle_print_config(flags, cfg)) return 0;
    const Manifest manifest = load_manifest_for(cfg);
    const auto clips = load_clips_for(cfg, manifest);
    const WorldSpec world = build_world(manifest.world, manifest.world_seed);

    // Encoder from the checkpoint when one exists, otherwise pre-trained on
    // the dataset itself.
    SpeakerEncoder encoder;
    if (fs::exists(cfg.paths.checkpoint)) {
        Runtime rt = runtime_from_checkpoint(cfg.paths.checkpoint, cfg);
        encoder = rt.encoder;
    } else {
        const auto view = make_training_view(clips);
        encoder = train_speaker_encoder(speaker_dataset(view), cfg.speaker_config(),
                                        derive_seed(cfg.seed, 0x5BEA));
    }

    // Each clip is scored against its primary speaker's clean enrollment clip.
    std::vector<std::pair<Mat, Mat>> pairs;
    pairs.reserve(clips.size());
    for (const auto& q : clips)
        pairs.emplace_back(q.audio, reference_clip(world, q.speaker_ids[0]).audio);
    const FilterReport report =
        verification_filter(pairs, [&](const Mat& grid) { return encoder.embed(grid).values; },
                            cfg.filter.threshold);

    const fs::path out_dir = cfg.paths.output_dir;
    fs::create_directories(out_dir);
    Manifest accepted = manifest;
    accepted.clips.clear();
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : report.rows) {
        rows.push_back({{"index", row.index}, {"score", row.score}, {"accepted", row.accepted}});
        if (row.accepted) accepted.clips.push_back(manifest.clips[row.index]);
    }
    write_manifest(out_dir / "accepted_manifest.json", accepted);
    nlohmann::json rj = {{"threshold", report.threshold},
                         {"accept_rate", report.accept_rate},
                         {"n_pairs", report.rows.size()},
                         {"pairs", rows}};
    std::ofstream os(out_dir / "filter_report.json");
    require(os.good(), Errc::IoError, "cannot write filter report");
    os << rj.dump(2) << "\n";
    std::cout << "accepted " << accepted.clips.size() << "/" << manifest.clips.size() << " clips (threshold "
              << cfg.filter.threshold << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonFlags& flags, bool resume) {
    const RunConfig cfg = flags.load();
    if (handle_print_config(flags, cfg)) return 0;
    const Manifest manifest = load_manifest_for(cfg);
    const auto clips = load_clips_for(cfg, manifest);
    const auto view = make_training_view(clips);

    Runtime rt;
    if (resume) {
        require(fs::exists(cfg.paths.checkpoint), Errc::IoError,
                "no checkpoint to resume at " + cfg.paths.checkpoint);
        rt = runtime_from_checkpoint(cfg.paths.checkpoint, cfg);
        std::cout << "resumed at step " << rt.global_step << "\n";
    } else {
        rt = make_runtime(cfg);
        const SpeakerTrainReport sr = pretrain_encoder(rt, view);
        std::cout << "speaker encoder: accuracy " << sr.train_accuracy << " loss " << sr.final_loss << "\n";
    }

    const double last_loss = run_training(rt, view, cfg.paths.checkpoint, [](const TrainStepInfo& info) {
        if ((info.step + 1) % 100 == 0)
            std::cout << "step " << (info.step + 1) << " loss " << info.loss << "\n" << std::flush;
    });
    std::cout << "trained to step " << rt.global_step << ", final loss " << last_loss << ", checkpoint "
              << cfg.paths.checkpoint << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleFlags {
    std::optional<std::string> instruction_path;
    std::optional<std::string> instruction_text;
    std::vector<std::string> ref_audio;
    std::optional<std::string> ref_image;
    std::optional<std::string> noise_clip;
    std::optional<double> duration;
};

int cmd_sample(const CommonFlags& flags, const SampleFlags& sf) {
    const RunConfig cli_cfg = flags.load();
    if (handle_print_config(flags, cli_cfg)) return 0;
    require(sf.instruction_path.has_value() || sf.instruction_text.has_value(), Errc::UsageError,
            "sample needs --instruction FILE or --text STRING");
    Runtime rt = runtime_from_checkpoint(cli_cfg.paths.checkpoint, cli_cfg);
    const RunConfig& cfg = rt.cfg;

    std::string text;
    if (sf.instruction_path) {
        std::ifstream is(*sf.instruction_path);
        require(is.good(), Errc::IoError, "cannot read instruction " + *sf.instruction_path);
        std::ostringstream ss;
        ss << is.rdbuf();
        text = ss.str();
    } else {
        text = *sf.instruction_text;
    }
    const InstructionBundle bundle = parse_instruction(text);

    MaskFlags mode;
    mode.audio_masked = sf.ref_audio.empty();
    mode.image_masked = !sf.ref_image.has_value();

    std::vector<SpeakerEmbedding> speakers;
    for (const auto& path : sf.ref_audio) {
        const auto tensors = read_tensors(path);
        speakers.push_back(rt.encoder.embed(to_mat(find_tensor(tensors, "audio"))));
    }
    std::optional<Vec> ref_image_row;
    if (sf.ref_image) {
        const auto tensors = read_tensors(*sf.ref_image);
        const Mat video = to_mat(find_tensor(tensors, "video"));
        require(video.rows() > 0, Errc::EmptyInput, "reference image tensor is empty");
        ref_image_row = Vec(video.row(0).transpose());
    }

    const double duration = sf.duration.value_or(cfg.eval.duration);
    const auto t_audio = static_cast<Eigen::Index>(std::llround(duration * cfg.world.audio_hz));
    const auto t_video = static_cast<Eigen::Index>(std::llround(duration * cfg.world.video_hz));
    require(t_audio >= 1 && t_video >= 1, Errc::DurationTooShort, "duration too short");
    const PhonemeSequence truth = [&] {
        PhonemeSequence seq;
        for (const auto& seg : bundle.segments)
            seq.ids.insert(seq.ids.end(), seg.phonemes.ids.begin(), seg.phonemes.ids.end());
        return seq;
    }();
    require(static_cast<Eigen::Index>(truth.size()) <= t_audio, Errc::DurationTooShort,
            "transcript has more phonemes than audio steps");

    const SamplerConfig sampler = cfg.sampler_config();
    std::optional<Mat> noise_clip;
    if (sf.noise_clip) noise_clip = to_mat(find_tensor(read_tensors(*sf.noise_clip), "audio"));
    Rng neg_rng(derive_seed(cfg.seed, 0x5E61));
    const SpeakerEmbedding s_neg =
        negative_embedding(sampler.strategy, rt.encoder, &rt.world, neg_rng, noise_clip,
                           static_cast<Eigen::Index>(cfg.world.audio_hz));

    const PreparedConditions cond = rt.model.build_conditions(bundle, speakers, ref_image_row, mode, t_audio);
    const PreparedConditions neg = rt.model.build_negative_conditions(s_neg);
    Rng noise_rng(derive_seed(cfg.seed, 0xBA5E, 0));
    const LatentShape shape{t_audio, cfg.backbone.d_audio, t_video, cfg.backbone.d_video};
    const LatentClip clip = euler_sample(rt.model, cond, neg, sampler, shape, noise_rng);

    const fs::path out_dir = cfg.paths.output_dir;
    fs::create_directories(out_dir);
    write_tensors(out_dir / "sample.snte", {to_tensor("audio", clip.audio), to_tensor("video", clip.video)});

    const PhonemeSequence decoded =
        decode_phonemes(clip.audio, rt.world,
                        truth.size() > 0 ? std::optional<Eigen::Index>(truth.size()) : std::nullopt);
    nlohmann::json report = {{"decoded_transcript", phonemes_to_text(decoded)},
                             {"ter", token_error_rate(decoded, truth)},
                             {"sync_score", sync_score(clip.audio, clip.video, rt.world)},
                             {"strategy", sampler.strategy.name()},
                             {"guidance_w", sampler.guidance_w},
                             {"steps", sampler.steps},
                             {"duration", duration},
                             {"seed", cfg.seed}};
    std::ofstream os(out_dir / "sample.json");
    require(os.good(), Errc::IoError, "cannot write sample report");
    os << report.dump(2) << "\n";
    std::cout << "wrote " << (out_dir / "sample.snte").string() << " and sample.json (ter "
              << report["ter"].get<double>() << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const CommonFlags& flags) {
    const RunConfig cli_cfg = flags.load();
    if (handle_print_config(flags, cli_cfg)) return 0;
    Runtime rt = runtime_from_checkpoint(cli_cfg.paths.checkpoint, cli_cfg);
    const Manifest manifest = load_manifest_for(rt.cfg);
    const auto clips = load_clips_for(rt.cfg, manifest);
    const auto items = eval_items_from_clips(clips, rt.cfg.eval.n_samples);
    require(!items.empty(), Errc::InsufficientData, "no single-speaker clips to evaluate on");

    const SamplerConfig sampler = rt.cfg.sampler_config();
    Rng neg_rng(derive_seed(rt.cfg.seed, 0x5E61));
    const SpeakerEmbedding s_neg =
        negative_embedding(sampler.strategy, rt.encoder, &rt.world, neg_rng, std::nullopt,
                           static_cast<Eigen::Index>(rt.cfg.world.audio_hz));
    std::vector<GenerationResult> gens(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        gens[i] = generate_for_item(rt.model, rt.encoder, items[i], MaskFlags::ta2va(), s_neg, sampler,
                                    rt.cfg.seed, i);
    });
    MetricReport report = evaluate_generations(gens, items, rt.encoder, rt.world);
    report.strategy = sampler.strategy.name();
    report.gaussian_rms = sampler.strategy.gaussian_rms;
    report.guidance_w = sampler.guidance_w;
    report.seed = rt.cfg.seed;

    const fs::path out_dir = rt.cfg.paths.output_dir;
    fs::create_directories(out_dir);
    std::ofstream os(out_dir / "metrics.json");
    require(os.good(), Errc::IoError, "cannot write metrics report");
    os << report.to_json().dump(2) << "\n";
    std::cout << report.to_json().dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate-cfg
// ---------------------------------------------------------------------------

int cmd_ablate(const CommonFlags& flags) {
    const RunConfig cli_cfg = flags.load();
    if (handle_print_config(flags, cli_cfg)) return 0;
    Runtime rt = runtime_from_checkpoint(cli_cfg.paths.checkpoint, cli_cfg);
    const Manifest manifest = load_manifest_for(rt.cfg);
    const auto clips = load_clips_for(rt.cfg, manifest);
    const auto items = eval_items_from_clips(clips, rt.cfg.eval.n_samples);
    require(!items.empty(), Errc::InsufficientData, "no single-speaker clips to evaluate on");

    const AblationResult result =
        run_cfg_ablation(rt.model, rt.encoder, rt.world, items, rt.cfg.sampler_config(), rt.cfg.seed);
    const fs::path out_dir = rt.cfg.paths.output_dir;
    fs::create_directories(out_dir);
    write_ablation_csv(out_dir / "ablation.csv", result.rows);
    std::cout << "wrote " << (out_dir / "ablation.csv").string() << " (" << result.rows.size()
              << " strategies x " << items.size() << " samples)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sonate: joint audio-video flow matching against a synthetic world"};
    app.require_subcommand(1);

    CommonFlags gen_flags, filter_flags, train_flags, sample_flags_common, eval_flags, ablate_flags;
    SampleFlags sample_flags;
    bool resume = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic quadruplet dataset");
    add_common(gen, gen_flags,
               {{"--n", "data.n_clips"}, {"--duration", "data.duration"}, {"--noise", "data.noise_amplitude"}});

    auto* filt = app.add_subcommand("filter", "speaker-verification filter over a dataset");
    add_common(filt, filter_flags, {{"--threshold", "filter.threshold"}});

    auto* train = app.add_subcommand("train", "train the joint flow-matching model");
    add_common(train, train_flags,
               {{"--steps", "train.steps"},
                {"--batch", "train.batch_size"},
                {"--lr", "train.lr"},
                {"--optimizer", "train.optimizer"}});
    train->add_flag("--resume", resume, "continue from the existing checkpoint");

    auto* sample = app.add_subcommand("sample", "generate one clip from an instruction");
    add_common(sample, sample_flags_common,
               {{"--steps", "sampler.steps"}, {"--w", "sampler.guidance_w"}, {"--strategy", "sampler.strategy"}});
    sample->add_option("--instruction", sample_flags.instruction_path, "instruction text file");
    sample->add_option("--text", sample_flags.instruction_text, "inline instruction text");
    sample->add_option("--ref-audio", sample_flags.ref_audio, "reference audio tensor file(s)")
        ->expected(0, 2);
    sample->add_option("--ref-image", sample_flags.ref_image, "reference image tensor file");
    sample->add_option("--noise-clip", sample_flags.noise_clip, "noise clip for the natural strategy");
    sample->add_option("--duration", sample_flags.duration, "clip duration in seconds");

    auto* evalc = app.add_subcommand("eval", "generate and score clips against a manifest");
    add_common(evalc, eval_flags,
               {{"--n", "eval.n_samples"},
                {"--steps", "sampler.steps"},
                {"--w", "sampler.guidance_w"},
                {"--strategy", "sampler.strategy"}});

    auto* ablate = app.add_subcommand("ablate-cfg", "negative-conditioning ablation sweep");
    add_common(ablate, ablate_flags,
               {{"--n", "eval.n_samples"}, {"--steps", "sampler.steps"}, {"--w", "sampler.guidance_w"}});

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "E_UsageError: " << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_flags);
        if (filt->parsed()) return cmd_filter(filter_flags);
        if (train->parsed()) return cmd_train(train_flags, resume);
        if (sample->parsed()) return cmd_sample(sample_flags_common, sample_flags);
        if (evalc->parsed()) return cmd_eval(eval_flags);
        if (ablate->parsed()) return cmd_ablate(ablate_flags);
    } catch (const Error& e) {
        std::cerr << "E_" << e.what() << "\n";
        return e.code() == Errc::UsageError ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "E_Internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
