#pragma once

#include <optional>
#include <vector>

#include "sonate/backbone.hpp"
#include "sonate/errors.hpp"
#include "sonate/speaker.hpp"

namespace sonate {

// ---------------------------------------------------------------------------
// OT path
// ---------------------------------------------------------------------------

// Straight-line interpolant x_t = t*x1 + (1-t)*x0.
inline Mat ot_interpolate(const Mat& x0, const Mat& x1, double t) {
    require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), Errc::ShapeMismatch,
            "ot_interpolate: endpoint shapes differ");
    require(t >= 0.0 && t <= 1.0, Errc::ShapeMismatch, "ot_interpolate: t outside [0,1]");
    return t * x1 + (1.0 - t) * x0;
}

// Target velocity along the OT path: the time derivative of the interpolant,
// u = x1 - x0, constant in t.
inline Mat target_velocity(const Mat& x0, const Mat& x1, double /*t*/ = 0.0) {
    require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), Errc::ShapeMismatch,
            "target_velocity: endpoint shapes differ");
    return x1 - x0;
}

// One training draw for one latent stream.
struct FlowSample {
    Mat x0;   // noise
    Mat x1;   // data latent
    Mat xt;   // interpolant
    Mat u;    // target velocity
    double t = 0.0;

    static FlowSample make(Mat x0, Mat x1, double t) {
        FlowSample s;
        s.xt = ot_interpolate(x0, x1, t);
        s.u = target_velocity(x0, x1, t);
        s.x0 = std::move(x0);
        s.x1 = std::move(x1);
        s.t = t;
        return s;
    }

    static FlowSample draw(const Mat& x1, double t, Rng& rng) {
        return make(randn(x1.rows(), x1.cols(), rng), x1, t);
    }
};

// ---------------------------------------------------------------------------
// classifier-free guidance
// ---------------------------------------------------------------------------

// v = v_uncond + w * (v_cond - v_uncond). w = 0 and w = 1 return the
// respective branch bit-exactly rather than through the arithmetic.
inline Mat cfg_combine(const Mat& v_cond, const Mat& v_uncond, double w) {
    require(v_cond.rows() == v_uncond.rows() && v_cond.cols() == v_uncond.cols(), Errc::ShapeMismatch,
            "cfg_combine: branch shapes differ");
    require(std::isfinite(w), Errc::SchemaError, "cfg_combine: non-finite guidance scale");
    if (w == 1.0) return v_cond;
    if (w == 0.0) return v_uncond;
    return v_uncond + w * (v_cond - v_uncond);
}

struct SamplerConfig {
    int steps = 20;                 // dt = 1/steps = 0.05 by default
    double guidance_w = 1.0;
    NegativeStrategy strategy{};    // negative speaker-embedding strategy
    std::optional<std::pair<double, double>> per_modality_w;  // (audio, video) overrides

    double dt() const { return 1.0 / static_cast<double>(steps); }
    double w_audio() const { return per_modality_w ? per_modality_w->first : guidance_w; }
    double w_video() const { return per_modality_w ? per_modality_w->second : guidance_w; }

    void validate() const {
        require(steps >= 1, Errc::SchemaError, "sampler steps must be >= 1");
        require(std::isfinite(guidance_w) && guidance_w >= 0.0, Errc::SchemaError,
                "guidance scale must be finite and >= 0");
    }
};

struct LatentClip {
    Mat audio;  // T_a x d_audio
    Mat video;  // T_v x d_video
};

struct LatentShape {
    Eigen::Index t_audio = 0;
    Eigen::Index d_audio = 0;
    Eigen::Index t_video = 0;
    Eigen::Index d_video = 0;
};

// ---------------------------------------------------------------------------
// Euler sampler
// ---------------------------------------------------------------------------

// Deterministic integration core: from a given state at t=0 to t=1 in fixed
// steps, x <- x + dt * cfg_combine(v_cond, v_uncond, w). The unconditional
// branch is skipped entirely when both guidance scales are exactly 1 so the
// trajectory matches conditional-only integration bit for bit.
template <typename Model, typename Cond>
LatentClip euler_integrate(const Model& model, const Cond& cond, const Cond& neg_cond,
                           const SamplerConfig& cfg, LatentClip state) {
    cfg.validate();
    const double dt = cfg.dt();
    const bool need_negative = !(cfg.w_audio() == 1.0 && cfg.w_video() == 1.0);
    for (int k = 0; k < cfg.steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        const VelocityGraph vc = model.predict(state.audio, state.video, t, cond);
        if (need_negative) {
            const VelocityGraph vu = model.predict(state.audio, state.video, t, neg_cond);
            state.audio += dt * cfg_combine(vc.v_audio->val, vu.v_audio->val, cfg.w_audio());
            state.video += dt * cfg_combine(vc.v_video->val, vu.v_video->val, cfg.w_video());
        } else {
            state.audio += dt * vc.v_audio->val;
            state.video += dt * vc.v_video->val;
        }
    }
    return state;
}

// Standard-normal initial state, then euler_integrate. Deterministic per rng
// state; audio noise is drawn before video noise.
template <typename Model, typename Cond>
LatentClip euler_sample(const Model& model, const Cond& cond, const Cond& neg_cond,
                        const SamplerConfig& cfg, const LatentShape& shape, Rng& rng) {
    LatentClip init{randn(shape.t_audio, shape.d_audio, rng), randn(shape.t_video, shape.d_video, rng)};
    return euler_integrate(model, cond, neg_cond, cfg, std::move(init));
}

// ---------------------------------------------------------------------------
// CFM objective
// ---------------------------------------------------------------------------

template <typename Cond>
struct TrainItem {
    Mat audio_x1;
    Mat video_x1;
    Cond cond;
};

// Frozen draws for one item, so a loss can be re-evaluated deterministically
// (gradient checking, resume tests).
template <typename Cond>
struct FrozenItem {
    FlowSample audio;
    FlowSample video;
    Cond cond;
};

template <typename Cond>
FrozenItem<Cond> freeze_item(const TrainItem<Cond>& item, Rng& rng) {
    // Draw order is pinned: t, audio noise, video noise.
    const double t = rng.uniform();
    FrozenItem<Cond> out{FlowSample::draw(item.audio_x1, t, rng), FlowSample::draw(item.video_x1, t, rng),
                         item.cond};
    return out;
}

// Sum of per-stream MSEs, each averaged over its own elements, then averaged
// over the batch. Empty streams contribute nothing.
template <typename Model, typename Cond>
ad::Value cfm_loss_frozen(const Model& model, const std::vector<FrozenItem<Cond>>& batch) {
    require(!batch.empty(), Errc::EmptyInput, "cfm_loss: empty batch");
    std::vector<ad::Value> terms;
    for (const auto& item : batch) {
        const VelocityGraph v = model.predict(item.audio.xt, item.video.xt, item.audio.t, item.cond);
        if (item.audio.u.size() > 0) terms.push_back(ad::mse_against(v.v_audio, item.audio.u));
        if (item.video.u.size() > 0) terms.push_back(ad::mse_against(v.v_video, item.video.u));
    }
    if (terms.empty()) return ad::constant(Mat::Zero(1, 1));
    return ad::scale(ad::add_scalars(terms), 1.0 / static_cast<double>(batch.size()));
}

template <typename Model, typename Cond>
ad::Value cfm_loss(const Model& model, const std::vector<TrainItem<Cond>>& batch, Rng& rng) {
    std::vector<FrozenItem<Cond>> frozen;
    frozen.reserve(batch.size());
    for (const auto& item : batch) frozen.push_back(freeze_item(item, rng));
    return cfm_loss_frozen(model, frozen);
}

// ---------------------------------------------------------------------------
// gradient verification
// ---------------------------------------------------------------------------

// Compares analytic gradients against central differences on `n_probes`
// randomly chosen scalar parameters. `loss_fn` must be a deterministic
// function of the current parameter values. Returns the maximum relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
template <typename LossFn>
double finite_diff_gradcheck(const std::vector<ad::Value>& params, LossFn&& loss_fn, int n_probes,
                             double eps, Rng& rng) {
    require(eps > 0.0, Errc::SchemaError, "gradcheck: eps must be positive");
    require(n_probes >= 1, Errc::SchemaError, "gradcheck: need at least one probe");

    ad::zero_grad(params);
    ad::backward(loss_fn());
    std::vector<Mat> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params)
        analytic.push_back(p->grad.size() > 0 ? p->grad : Mat(Mat::Zero(p->val.rows(), p->val.cols())));

    double max_rel = 0.0;
    for (int probe = 0; probe < n_probes; ++probe) {
        const std::size_t pi = rng.uniform_index(params.size());
        auto& p = params[pi];
        const Eigen::Index flat = static_cast<Eigen::Index>(rng.uniform_index(
            static_cast<std::uint64_t>(p->val.size())));
        const Eigen::Index r = flat / p->val.cols();
        const Eigen::Index c = flat % p->val.cols();
        const double saved = p->val(r, c);
        p->val(r, c) = saved + eps;
        const double up = loss_fn()->val(0, 0);
        p->val(r, c) = saved - eps;
        const double down = loss_fn()->val(0, 0);
        p->val(r, c) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[pi](r, c);
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    ad::zero_grad(params);
    return max_rel;
}

}  // namespace sonate
