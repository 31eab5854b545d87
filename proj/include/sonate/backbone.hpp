#pragma once

#include <string>
#include <vector>

#include "sonate/autodiff.hpp"
#include "sonate/conditioning.hpp"
#include "sonate/errors.hpp"

namespace sonate {

struct BackboneConfig {
    int depth = 4;
    int width = 128;   // shared embedding width D
    int heads = 4;
    int d_audio = 16;
    int d_video = 12;
    double rope_base = 10000.0;

    int head_width() const { return width / heads; }

    void validate() const {
        require(depth >= 1, Errc::SchemaError, "backbone depth must be >= 1");
        require(heads >= 1 && width % heads == 0, Errc::SchemaError,
                "backbone width must be divisible by heads");
        require(head_width() % 2 == 0, Errc::OddHeadWidth, "RoPE needs an even head width");
        require(rope_base > 0.0, Errc::SchemaError, "rope_base must be positive");
    }
};

struct VelocityPrediction {
    Mat v_audio;  // T_a x d_audio
    Mat v_video;  // T_v x d_video
};

struct VelocityGraph {
    ad::Value v_audio;
    ad::Value v_video;
};

// ---------------------------------------------------------------------------
// timestep embedding
// ---------------------------------------------------------------------------

// Sinusoidal features of t in [0,1]: sin(t*w_k) then cos(t*w_k) over
// geometrically spaced frequencies from 1000 down to 1. The slowest frequency
// is injective on [0,1].
inline Vec timestep_embed(double t, int width) {
    require(width > 0 && width % 2 == 0, Errc::ShapeMismatch, "timestep width must be even");
    require(t >= 0.0 && t <= 1.0, Errc::ShapeMismatch, "timestep outside [0,1]");
    const int half = width / 2;
    Vec out(width);
    for (int k = 0; k < half; ++k) {
        const double exponent = (half == 1) ? 0.0 : 1.0 - static_cast<double>(k) / (half - 1);
        const double omega = std::pow(1000.0, exponent);
        out(k) = std::sin(t * omega);
        out(half + k) = std::cos(t * omega);
    }
    return out;
}

// Plain-matrix RoPE, the public face of ad::rope.
inline Mat rope_rotate(const Mat& x, const std::vector<long>& positions, double base = 10000.0) {
    return ad::rope_rotate_mat(x, positions, base);
}

// ---------------------------------------------------------------------------
// token positions
// ---------------------------------------------------------------------------

// All rotated tokens share one clock measured in audio latent steps; caption,
// image and reference-audio tokens are left unrotated (position 0). Video
// frames sit at the midpoint of their audio-row span, phoneme slots at the
// midpoint of theirs, which makes the world's uniform stretching directly
// addressable by relative position.
struct TokenPositions {
    std::vector<long> audio;
    std::vector<long> video;
    std::vector<long> phoneme;

    static TokenPositions make(Eigen::Index t_audio, Eigen::Index t_video, Eigen::Index n_phonemes) {
        TokenPositions p;
        p.audio.resize(static_cast<std::size_t>(t_audio));
        for (Eigen::Index i = 0; i < t_audio; ++i) p.audio[static_cast<std::size_t>(i)] = i;
        p.video.resize(static_cast<std::size_t>(t_video));
        for (Eigen::Index j = 0; j < t_video; ++j)
            p.video[static_cast<std::size_t>(j)] =
                t_video > 0 ? static_cast<long>((2 * j + 1) * t_audio / (2 * t_video)) : 0;
        p.phoneme.resize(static_cast<std::size_t>(n_phonemes));
        for (Eigen::Index k = 0; k < n_phonemes; ++k)
            p.phoneme[static_cast<std::size_t>(k)] =
                n_phonemes > 0 ? static_cast<long>((2 * k + 1) * t_audio / (2 * n_phonemes)) : 0;
        return p;
    }
};

// ---------------------------------------------------------------------------
// backbone
// ---------------------------------------------------------------------------

// Joint diffusion transformer: per-modality input projections into a shared
// width-D stream, `depth` pre-norm self-attention blocks over the
// concatenation of audio, video and condition tokens, per-modality output
// heads predicting velocities.
class Backbone {
public:
    Backbone() = default;

    Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        const int d = cfg.width;
        auto linear = [&](int rows, int cols, double stddev) { return ad::param(randn(rows, cols, rng, stddev)); };
        auto zeros_row = [&](int cols) { return ad::param(Mat::Zero(1, cols)); };
        auto ones_row = [&](int cols) { return ad::param(Mat::Ones(1, cols)); };
        const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
        const double resid_std = in_std / std::sqrt(2.0 * cfg.depth);

        audio_in_w_ = linear(cfg.d_audio, d, 1.0 / std::sqrt(static_cast<double>(cfg.d_audio)));
        audio_in_b_ = zeros_row(d);
        video_in_w_ = linear(cfg.d_video, d, 1.0 / std::sqrt(static_cast<double>(cfg.d_video)));
        video_in_b_ = zeros_row(d);
        cond_in_w_ = linear(d, d, in_std);
        cond_in_b_ = zeros_row(d);
        time_w_ = linear(d, d, in_std);
        time_b_ = zeros_row(d);

        blocks_.resize(static_cast<std::size_t>(cfg.depth));
        for (auto& blk : blocks_) {
            blk.ln1_g = ones_row(d);
            blk.ln1_b = zeros_row(d);
            blk.wq = linear(d, d, in_std);
            blk.bq = zeros_row(d);
            blk.wk = linear(d, d, in_std);
            blk.bk = zeros_row(d);
            blk.wv = linear(d, d, in_std);
            blk.bv = zeros_row(d);
            blk.wo = linear(d, d, resid_std);
            blk.bo = zeros_row(d);
            blk.ln2_g = ones_row(d);
            blk.ln2_b = zeros_row(d);
            blk.w_mlp1 = linear(d, 4 * d, in_std);
            blk.b_mlp1 = zeros_row(4 * d);
            blk.w_mlp2 = linear(4 * d, d, resid_std / 2.0);
            blk.b_mlp2 = zeros_row(d);
        }
        ln_f_g_ = ones_row(d);
        ln_f_b_ = zeros_row(d);
        audio_out_w_ = linear(d, cfg.d_audio, 0.02);
        audio_out_b_ = zeros_row(cfg.d_audio);
        video_out_w_ = linear(d, cfg.d_video, 0.02);
        video_out_b_ = zeros_row(cfg.d_video);
    }

    const BackboneConfig& config() const { return cfg_; }

    // Full differentiable forward pass. Phoneme token positions come from the
    // caller, which knows the clip's audio length and phoneme count.
    VelocityGraph forward_graph(const Mat& audio_x, const Mat& video_x, double t,
                                const ConditionSet& cond, const std::vector<long>& phoneme_positions) const {
        require(audio_x.cols() == cfg_.d_audio || audio_x.rows() == 0, Errc::ShapeMismatch,
                "audio latent width mismatch");
        require(video_x.cols() == cfg_.d_video || video_x.rows() == 0, Errc::ShapeMismatch,
                "video latent width mismatch");
        require(t >= 0.0 && t <= 1.0, Errc::ShapeMismatch, "t outside [0,1]");
        require(cond.width() == cfg_.width, Errc::ShapeMismatch, "condition width mismatch");
        require(static_cast<Eigen::Index>(phoneme_positions.size()) == cond.phoneme_emb->val.rows(),
                Errc::ShapeMismatch, "phoneme position count mismatch");

        const Eigen::Index t_audio = audio_x.rows();
        const Eigen::Index t_video = video_x.rows();

        auto a_tok = ad::add_row(ad::matmul(ad::constant(audio_x), audio_in_w_), audio_in_b_);
        auto v_tok = ad::add_row(ad::matmul(ad::constant(video_x), video_in_w_), video_in_b_);
        auto c_raw = ad::concat_rows({cond.text_emb, cond.phoneme_emb, cond.image_emb, cond.refaudio_emb});
        auto c_tok = ad::add_row(ad::matmul(c_raw, cond_in_w_), cond_in_b_);

        Mat temb(1, cfg_.width);
        temb.row(0) = timestep_embed(t, cfg_.width).transpose();
        auto time_row = ad::add_row(ad::matmul(ad::constant(temb), time_w_), time_b_);

        auto x = ad::add_row(ad::concat_rows({a_tok, v_tok, c_tok}), time_row);

        // One shared position clock in audio steps; unrotated streams are 0.
        const TokenPositions base = TokenPositions::make(t_audio, t_video, 0);
        std::vector<long> positions;
        positions.reserve(static_cast<std::size_t>(x->val.rows()));
        positions.insert(positions.end(), base.audio.begin(), base.audio.end());
        positions.insert(positions.end(), base.video.begin(), base.video.end());
        positions.insert(positions.end(), static_cast<std::size_t>(cond.text_emb->val.rows()), 0L);
        positions.insert(positions.end(), phoneme_positions.begin(), phoneme_positions.end());
        positions.insert(positions.end(),
                         static_cast<std::size_t>(cond.image_emb->val.rows() + cond.refaudio_emb->val.rows()),
                         0L);

        for (const auto& blk : blocks_) {
            auto h = ad::layer_norm(x, blk.ln1_g, blk.ln1_b);
            auto q = ad::add_row(ad::matmul(h, blk.wq), blk.bq);
            auto k = ad::add_row(ad::matmul(h, blk.wk), blk.bk);
            auto v = ad::add_row(ad::matmul(h, blk.wv), blk.bv);
            const int dh = cfg_.head_width();
            std::vector<ad::Value> head_outs;
            head_outs.reserve(static_cast<std::size_t>(cfg_.heads));
            for (int hd = 0; hd < cfg_.heads; ++hd) {
                auto qh = ad::rope(ad::slice_cols(q, hd * dh, dh), positions, cfg_.rope_base);
                auto kh = ad::rope(ad::slice_cols(k, hd * dh, dh), positions, cfg_.rope_base);
                auto vh = ad::slice_cols(v, hd * dh, dh);
                auto scores = ad::scale(ad::matmul(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
                head_outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
            }
            auto attn = ad::add_row(ad::matmul(ad::concat_cols(head_outs), blk.wo), blk.bo);
            x = ad::add(x, attn);
            auto h2 = ad::layer_norm(x, blk.ln2_g, blk.ln2_b);
            auto m = ad::add_row(ad::matmul(ad::gelu(ad::add_row(ad::matmul(h2, blk.w_mlp1), blk.b_mlp1)),
                                            blk.w_mlp2),
                                 blk.b_mlp2);
            x = ad::add(x, m);
        }
        x = ad::layer_norm(x, ln_f_g_, ln_f_b_);

        VelocityGraph out;
        out.v_audio = ad::add_row(ad::matmul(ad::slice_rows(x, 0, t_audio), audio_out_w_), audio_out_b_);
        out.v_video = ad::add_row(ad::matmul(ad::slice_rows(x, t_audio, t_video), video_out_w_), video_out_b_);
        return out;
    }

    std::vector<ad::Value> params() {
        std::vector<ad::Value> out;
        for (auto& [name, p] : named_params()) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, ad::Value>> named_params() {
        std::vector<std::pair<std::string, ad::Value>> out = {
            {"backbone.audio_in.w", audio_in_w_}, {"backbone.audio_in.b", audio_in_b_},
            {"backbone.video_in.w", video_in_w_}, {"backbone.video_in.b", video_in_b_},
            {"backbone.cond_in.w", cond_in_w_},   {"backbone.cond_in.b", cond_in_b_},
            {"backbone.time.w", time_w_},         {"backbone.time.b", time_b_},
        };
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const std::string p = "backbone.block" + std::to_string(i) + ".";
            auto& b = blocks_[i];
            out.insert(out.end(),
                       {{p + "ln1.g", b.ln1_g}, {p + "ln1.b", b.ln1_b}, {p + "wq", b.wq}, {p + "bq", b.bq},
                        {p + "wk", b.wk},       {p + "bk", b.bk},       {p + "wv", b.wv}, {p + "bv", b.bv},
                        {p + "wo", b.wo},       {p + "bo", b.bo},       {p + "ln2.g", b.ln2_g},
                        {p + "ln2.b", b.ln2_b}, {p + "mlp1.w", b.w_mlp1}, {p + "mlp1.b", b.b_mlp1},
                        {p + "mlp2.w", b.w_mlp2}, {p + "mlp2.b", b.b_mlp2}});
        }
        out.insert(out.end(), {{"backbone.ln_f.g", ln_f_g_},
                               {"backbone.ln_f.b", ln_f_b_},
                               {"backbone.audio_out.w", audio_out_w_},
                               {"backbone.audio_out.b", audio_out_b_},
                               {"backbone.video_out.w", video_out_w_},
                               {"backbone.video_out.b", video_out_b_}});
        return out;
    }

private:
    struct Block {
        ad::Value ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Value ln2_g, ln2_b, w_mlp1, b_mlp1, w_mlp2, b_mlp2;
    };

    BackboneConfig cfg_;
    ad::Value audio_in_w_, audio_in_b_, video_in_w_, video_in_b_;
    ad::Value cond_in_w_, cond_in_b_, time_w_, time_b_;
    std::vector<Block> blocks_;
    ad::Value ln_f_g_, ln_f_b_;
    ad::Value audio_out_w_, audio_out_b_, video_out_w_, video_out_b_;
};

// Inference-only forward pass.
inline VelocityPrediction dit_forward(const Backbone& backbone, const Mat& audio_x, const Mat& video_x,
                                      double t, const ConditionSet& cond,
                                      const std::vector<long>& phoneme_positions) {
    const VelocityGraph g = backbone.forward_graph(audio_x, video_x, t, cond, phoneme_positions);
    return {g.v_audio->val, g.v_video->val};
}

}  // namespace sonate
