#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "sonate/checkpoint.hpp"
#include "sonate/config.hpp"
#include "sonate/dataset.hpp"
#include "sonate/harness.hpp"
#include "sonate/model.hpp"
#include "sonate/speaker.hpp"
#include "sonate/train.hpp"
#include "sonate/world.hpp"

namespace sonate {

// Everything a command needs at run time: the world, the generative model,
// the frozen speaker encoder and the optimizer. One process owns one
// checkpoint path.
struct Runtime {
    RunConfig cfg;
    WorldSpec world;
    SonateModel model;
    SpeakerEncoder encoder;
    Optimizer optimizer;
    std::uint64_t global_step = 0;
    bool encoder_ready = false;
};

inline Runtime make_runtime(const RunConfig& cfg) {
    cfg.validate();
    Runtime rt;
    rt.cfg = cfg;
    rt.world = build_world(cfg.world, cfg.world.seed);
    rt.model = SonateModel(cfg.backbone, derive_seed(cfg.seed, 0x0DE1));
    Rng enc_rng(derive_seed(cfg.seed, 0x5BEA));
    rt.encoder = SpeakerEncoder(cfg.speaker_config(), enc_rng);
    rt.optimizer = Optimizer(cfg.optimizer_config(), rt.model.params());
    return rt;
}

// Pre-trains the speaker encoder on the dataset's single-speaker clips and
// freezes it.
inline SpeakerTrainReport pretrain_encoder(Runtime& rt, const TrainingSetView& view) {
    SpeakerTrainReport report;
    rt.encoder = train_speaker_encoder(speaker_dataset(view), rt.cfg.speaker_config(),
                                       derive_seed(rt.cfg.seed, 0x5BEA), &report);
    rt.encoder_ready = true;
    return report;
}

inline Checkpoint snapshot(Runtime& rt) {
    require(rt.encoder_ready, Errc::InsufficientData, "cannot checkpoint before the encoder exists");
    Checkpoint ckpt;
    ckpt.global_step = rt.global_step;
    ckpt.config_json = to_json(rt.cfg).dump();
    for (auto& [name, p] : rt.model.named_params()) ckpt.tensors.emplace(name, p->val);
    for (auto& [name, p] : rt.encoder.named_params()) ckpt.tensors.emplace(name, p->val);
    std::vector<std::string> param_names;
    for (auto& [name, p] : rt.model.named_params()) param_names.push_back(name);
    for (auto& [name, m] : rt.optimizer.state(param_names)) ckpt.tensors.emplace(name, m);
    return ckpt;
}

// Rebuilds a runtime from a checkpoint. The snapshot's world/backbone/seed
// configuration is authoritative (the weights depend on it); sampler, eval,
// filter and path settings may be taken from `overlay` so inference flags
// can differ from training ones.
inline Runtime runtime_from_checkpoint(const std::filesystem::path& path,
                                       const std::optional<RunConfig>& overlay = std::nullopt) {
    const Checkpoint ckpt = load_checkpoint(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ckpt.config_json);
    } catch (const nlohmann::json::exception&) {
        raise(Errc::CorruptCheckpoint, "config snapshot is not valid JSON");
    }
    RunConfig cfg = config_from_json(std::move(j));
    if (overlay.has_value()) {
        cfg.sampler = overlay->sampler;
        cfg.eval = overlay->eval;
        cfg.filter = overlay->filter;
        cfg.paths = overlay->paths;
        cfg.data = overlay->data;
        cfg.seed = overlay->seed;
        cfg.train = overlay->train;
    }
    Runtime rt = make_runtime(cfg);
    restore_params(ckpt.tensors, rt.model.named_params());
    restore_params(ckpt.tensors, rt.encoder.named_params());
    std::vector<std::string> param_names;
    for (auto& [name, p] : rt.model.named_params()) param_names.push_back(name);
    rt.optimizer.load_state(ckpt.tensors, param_names);
    rt.global_step = ckpt.global_step;
    rt.encoder_ready = true;
    return rt;
}

// Joint-training entry point used by the train command: runs until
// cfg.train.steps, checkpointing on the configured cadence.
inline double run_training(Runtime& rt, const TrainingSetView& view,
                           const std::filesystem::path& checkpoint_path,
                           const std::function<void(const TrainStepInfo&)>& on_step = {}) {
    JointTrainConfig jcfg;
    jcfg.batch_size = rt.cfg.train.batch_size;
    jcfg.steps = rt.cfg.train.steps;
    jcfg.seed = rt.cfg.seed;
    jcfg.mask = rt.cfg.mask;

    double last_loss = 0.0;
    const int target = rt.cfg.train.steps;
    while (rt.global_step < static_cast<std::uint64_t>(target)) {
        const int first = static_cast<int>(rt.global_step);
        const int chunk = std::min(target - first,
                                   rt.cfg.train.checkpoint_every > 0 ? rt.cfg.train.checkpoint_every
                                                                     : target - first);
        last_loss = train_joint_steps(rt.model, rt.encoder, view, jcfg, rt.optimizer, first, chunk, on_step);
        rt.global_step += static_cast<std::uint64_t>(chunk);
        save_checkpoint(checkpoint_path, snapshot(rt));
    }
    return last_loss;
}

}  // namespace sonate
