#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "sonate/errors.hpp"
#include "sonate/instruction.hpp"
#include "sonate/world.hpp"

namespace sonate {

// ---------------------------------------------------------------------------
// phoneme decoding oracle
// ---------------------------------------------------------------------------

namespace detail {

// Nearest codeword after projecting out the timbre subspace; ties go to the
// lowest phoneme id.
inline int decode_window(const Vec& mean_row, const WorldSpec& world) {
    const Vec projected = world.residual_projector * mean_row;
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < world.alphabet_size(); ++a) {
        const double d = (projected.transpose() - world.projected_codebook.row(a)).squaredNorm();
        if (d < best_dist - 1e-12) {
            best_dist = d;
            best = a;
        }
    }
    return best;
}

}  // namespace detail

// Decodes an audio latent grid back to phonemes. With a reference length the
// grid splits into the same windows the synthesis stretch used; without one,
// rows decode individually and consecutive repeats merge.
inline PhonemeSequence decode_phonemes(const Mat& audio, const WorldSpec& world,
                                       std::optional<Eigen::Index> reference_length = std::nullopt) {
    require(audio.rows() > 0, Errc::EmptyInput, "decode_phonemes: empty latent grid");
    PhonemeSequence out;
    if (reference_length.has_value()) {
        const Eigen::Index n = *reference_length;
        if (n == 0) return out;
        require(n <= audio.rows(), Errc::DurationTooShort, "reference longer than the latent grid");
        Eigen::Index row = 0;
        for (Eigen::Index slot = 0; slot < n; ++slot) {
            Vec acc = Vec::Zero(audio.cols());
            Eigen::Index count = 0;
            while (row < audio.rows() && phoneme_slot_of_row(row, audio.rows(), n) == slot) {
                acc += audio.row(row).transpose();
                ++row;
                ++count;
            }
            out.ids.push_back(detail::decode_window(acc / std::max<Eigen::Index>(count, 1), world));
        }
    } else {
        int prev = -1;
        for (Eigen::Index i = 0; i < audio.rows(); ++i) {
            const int id = detail::decode_window(audio.row(i).transpose(), world);
            if (id != prev) out.ids.push_back(id);
            prev = id;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// token error rate
// ---------------------------------------------------------------------------

inline std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Levenshtein distance normalized by max(1, |reference|).
inline double token_error_rate(const PhonemeSequence& hypothesis, const PhonemeSequence& reference) {
    const std::size_t d = edit_distance(hypothesis.ids, reference.ids);
    return static_cast<double>(d) / static_cast<double>(std::max<std::size_t>(1, reference.ids.size()));
}

// ---------------------------------------------------------------------------
// articulation sync score
// ---------------------------------------------------------------------------

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;  // a constant track carries no sync signal
    return sxy / std::sqrt(sxx * syy);
}

// Per video frame, the aperture implied by the decoded phonemes of the
// frame's audio span.
inline std::vector<double> audio_articulation_track(const Mat& audio, Eigen::Index t_video,
                                                    const WorldSpec& world) {
    std::vector<double> track;
    track.reserve(static_cast<std::size_t>(t_video));
    for (Eigen::Index j = 0; j < t_video; ++j) {
        const auto [lo, hi] = frame_row_span(j, audio.rows(), t_video);
        double acc = 0.0;
        Eigen::Index count = 0;
        for (Eigen::Index i = lo; i < hi && i < audio.rows(); ++i) {
            const int id = detail::decode_window(audio.row(i).transpose(), world);
            acc += world.aperture[static_cast<std::size_t>(id)];
            ++count;
        }
        track.push_back(count > 0 ? acc / static_cast<double>(count) : 0.0);
    }
    return track;
}

// Pearson correlation between the audio-implied articulation track and the
// video aperture channel. 0.0 when either track is constant.
inline double sync_score(const Mat& audio, const Mat& video, const WorldSpec& world) {
    require(audio.rows() > 0 && video.rows() > 0, Errc::EmptyInput, "sync_score: empty grid");
    const std::vector<double> audio_track = audio_articulation_track(audio, video.rows(), world);
    std::vector<double> video_track(static_cast<std::size_t>(video.rows()));
    for (Eigen::Index j = 0; j < video.rows(); ++j) video_track[static_cast<std::size_t>(j)] = video(j, 0);
    return pearson(audio_track, video_track);
}

// ---------------------------------------------------------------------------
// distributional metrics
// ---------------------------------------------------------------------------

namespace detail {

inline void gaussian_fit(const Mat& features, Vec& mean, Eigen::MatrixXd& cov) {
    const Eigen::Index n = features.rows();
    mean = features.colwise().mean().transpose();
    Eigen::MatrixXd centered = features;
    centered.rowwise() -= mean.transpose();
    cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    require(es.info() == Eigen::Success, Errc::DegenerateCovariance,
            std::string("eigendecomposition failed for ") + what);
    Vec ev = es.eigenvalues();
    require(ev.minCoeff() > -1e-6 * std::max(1.0, std::abs(ev.maxCoeff())), Errc::DegenerateCovariance,
            std::string("matrix is not positive semidefinite: ") + what);
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(ev(i), 0.0));
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Squared 2-Wasserstein distance between Gaussian fits:
// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
inline double frechet_distance(const Mat& features_a, const Mat& features_b) {
    require(features_a.rows() > 0 && features_b.rows() > 0, Errc::EmptyInput, "frechet: empty feature set");
    require(features_a.cols() == features_b.cols(), Errc::ShapeMismatch, "frechet: feature widths differ");
    require(features_a.allFinite() && features_b.allFinite(), Errc::DegenerateCovariance,
            "frechet: non-finite features");
    const Eigen::Index d = features_a.cols();
    Vec mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    detail::gaussian_fit(features_a, mu_a, cov_a);
    detail::gaussian_fit(features_b, mu_b, cov_b);
    cov_a += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    cov_b += 1e-6 * Eigen::MatrixXd::Identity(d, d);

    const Eigen::MatrixXd sqrt_a = detail::psd_sqrt(cov_a, "covariance A");
    const Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
    const Eigen::MatrixXd cross = detail::psd_sqrt(inner, "cross term");
    const double fd =
        (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    return std::max(fd, 0.0);
}

// Mean over dimensions of KL(a || b) between per-dimension histograms with
// shared bin edges and additive smoothing.
inline double kl_divergence(const Mat& features_a, const Mat& features_b, int n_bins = 64,
                            double smoothing = 1e-6) {
    require(features_a.rows() > 0 && features_b.rows() > 0, Errc::EmptyInput, "kl: empty feature set");
    require(features_a.cols() == features_b.cols(), Errc::ShapeMismatch, "kl: feature widths differ");
    const Eigen::Index d = features_a.cols();
    double total = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double lo = std::min(features_a.col(j).minCoeff(), features_b.col(j).minCoeff());
        const double hi = std::max(features_a.col(j).maxCoeff(), features_b.col(j).maxCoeff());
        const double span = hi - lo;
        std::vector<double> pa(static_cast<std::size_t>(n_bins), 0.0);
        std::vector<double> pb(static_cast<std::size_t>(n_bins), 0.0);
        auto bin_of = [&](double v) {
            if (span <= 0.0) return 0;
            const int b = static_cast<int>((v - lo) / span * n_bins);
            return std::clamp(b, 0, n_bins - 1);
        };
        for (Eigen::Index i = 0; i < features_a.rows(); ++i)
            pa[static_cast<std::size_t>(bin_of(features_a(i, j)))] += 1.0;
        for (Eigen::Index i = 0; i < features_b.rows(); ++i)
            pb[static_cast<std::size_t>(bin_of(features_b(i, j)))] += 1.0;
        const double na = static_cast<double>(features_a.rows()) + n_bins * smoothing;
        const double nb = static_cast<double>(features_b.rows()) + n_bins * smoothing;
        double kl = 0.0;
        for (int b = 0; b < n_bins; ++b) {
            const double p = (pa[static_cast<std::size_t>(b)] + smoothing) / na;
            const double q = (pb[static_cast<std::size_t>(b)] + smoothing) / nb;
            kl += p * std::log(p / q);
        }
        total += std::max(kl, 0.0);
    }
    return total / static_cast<double>(d);
}

}  // namespace sonate
