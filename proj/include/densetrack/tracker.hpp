// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// The iterative refinement engine: trajectory tokens, a compact global-local
// transformer refiner, the coarse-to-fine scheduler with its sampling
// strategies, and upsampling of grid tracks to full resolution.
//
// Grid mapping: the engine tracks an (H/r) x (W/r) grid; grid cell (gr, gc)
// owns the full-resolution pixel (gc*r + r/2, gr*r + r/2). The engine's
// uniform sampling uses trailing-aligned subgrids (offset s-1), which are
// nested across any nonincreasing power-of-two schedule, so the tracked set
// only ever grows and refined state is never overwritten by interpolation.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "json.hpp"

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"
#include "densetrack/correlation.hpp"
#include "densetrack/features.hpp"
#include "densetrack/interpolator.hpp"
#include "densetrack/profiler.hpp"
#include "densetrack/synthbench.hpp"

namespace densetrack {

using VecD = Eigen::VectorXd;

// ------------------------------------------------------------------
// Sinusoidal positional embedding: for each component c and octave
// frequency 2^m, emit sin(2^m * x_c), cos(2^m * x_c). Component-major.
// ------------------------------------------------------------------
inline std::vector<double> positional_embed(std::span<const double> x, int n_freq) {
    if (n_freq < 1) throw ConfigError("positional_embed: n_freq must be >= 1");
    std::vector<double> out;
    out.reserve(2 * n_freq * x.size());
    for (double xc : x) {
        double omega = 1.0;
        for (int m = 0; m < n_freq; ++m) {
            out.push_back(std::sin(omega * xc));
            out.push_back(std::cos(omega * xc));
            omega *= 2.0;
        }
    }
    return out;
}

inline std::vector<double> time_embed(double t, int n_freq) {
    const double x[1] = {t};
    return positional_embed(std::span<const double>(x, 1), n_freq);
}

// ------------------------------------------------------------------
// Token layout. A token is the concatenation
//   [ appearance C | multiscale corr | pooled projected 4D corr |
//     depth corr | visibility | embedded displacement gamma(x_t - x_1) ]
// plus additive projections of gamma(x_t) and gamma(t). The projected 4D
// correlation block is the mean over the query-patch cells of project_corr,
// giving projected_channels values per token.
// ------------------------------------------------------------------
struct TokenLayout {
    int feat = 0, feat_len = 0;
    int mscorr = 0, mscorr_len = 0;
    int corr4d = 0, corr4d_len = 0;
    int dcorr = 0, dcorr_len = 0;
    int vis = 0, vis_len = 1;
    int disp = 0, disp_len = 0;
    int total = 0;

    static TokenLayout make(int C, const CorrConfig& corr, int n_freq) {
        TokenLayout l;
        l.feat = 0;
        l.feat_len = C;
        l.mscorr = l.feat + l.feat_len;
        l.mscorr_len = static_cast<int>(corr.scales.size()) * corr.window_area();
        l.corr4d = l.mscorr + l.mscorr_len;
        l.corr4d_len = corr.projected_channels;
        l.dcorr = l.corr4d + l.corr4d_len;
        l.dcorr_len = corr.window_area();
        l.vis = l.dcorr + l.dcorr_len;
        l.disp = l.vis + 1;
        l.disp_len = 2 * n_freq * 3;
        l.total = l.disp + l.disp_len;
        return l;
    }
};

// ------------------------------------------------------------------
// Engine configuration.
// ------------------------------------------------------------------
enum class InterpKind { nearest, bilinear, learnable };
enum class SamplingKind { uniform, random, keypoint };
enum class RefinerKind { transformer, oracle };

inline const char* interp_name(InterpKind k) {
    switch (k) {
        case InterpKind::nearest: return "nearest";
        case InterpKind::bilinear: return "bilinear";
        case InterpKind::learnable: return "learnable";
    }
    return "?";
}
inline const char* sampling_name(SamplingKind k) {
    switch (k) {
        case SamplingKind::uniform: return "uniform";
        case SamplingKind::random: return "random";
        case SamplingKind::keypoint: return "keypoint";
    }
    return "?";
}

struct PhiConfig {
    int n_layers = 3;
    int heads = 3;
    int anchor_stride = 4;  // on the tracked subgrid
    int window_half = 3;    // 7x7 local window on the tracked subgrid
    int ffn_mult = 2;
};

struct InterpModuleConfig {
    int L = 1;
    int heads = 4;
    int d_head = 8;
    int d_score = 16;
};

struct EngineConfig {
    int r = 4;
    int feat_channels = 32;
    int n_levels = 3;
    CorrConfig corr;
    int n_freq = 4;
    int d_tok = 285;
    PhiConfig phi;
    InterpModuleConfig interp;
    InterpKind interp_kind = InterpKind::learnable;
    SamplingKind sampling = SamplingKind::uniform;
    RefinerKind refiner = RefinerKind::transformer;
    double oracle_step = 1.0;
    Schedule schedule{{8, 4, 2, 1}};
    uint64_t seed = 1;

    TokenLayout layout() const { return TokenLayout::make(feat_channels, corr, n_freq); }

    void validate() const {
        corr.validate();
        schedule.validate();
        if (r < 1 || !is_power_of_two(r)) throw ConfigError("EngineConfig: r must be a power of two");
        if (feat_channels < 1 || n_levels < 1) throw ConfigError("EngineConfig: bad feature dims");
        for (int level : corr.scales)
            if (level < 0 || level >= n_levels)
                throw ConfigError("EngineConfig: correlation scale outside the pyramid");
        const TokenLayout l = layout();
        if (d_tok != l.total)
            throw ConfigError("EngineConfig: token dimension budget mismatch: configured d_tok=" +
                              std::to_string(d_tok) + " but the layout needs " +
                              std::to_string(l.total));
        if (d_tok % phi.heads != 0)
            throw ConfigError("EngineConfig: d_tok must be divisible by phi.heads");
        if (phi.n_layers < 0 || phi.anchor_stride < 1 || phi.window_half < 0)
            throw ConfigError("EngineConfig: bad phi config");
        if (!(oracle_step > 0.0) || oracle_step > 1.0)
            throw ConfigError("EngineConfig: oracle_step must be in (0,1]");
        if (interp_kind == InterpKind::bilinear && sampling != SamplingKind::uniform)
            throw ConfigError(
                "EngineConfig: bilinear interpolation requires uniform sampling (regular "
                "subgrid)");
    }
};

// ------------------------------------------------------------------
// Transformer weights.
// ------------------------------------------------------------------
struct PhiLayerWeights {
    RowMat t_wq, t_wk, t_wv, t_wo;  // D x D
    VecD t_ln_g, t_ln_b;
    RowMat s_wq, s_wk, s_wv, s_wo;
    VecD s_ln_g, s_ln_b;
    RowMat f_w1;  // F x D
    RowMat f_w2;  // D x F
    VecD f_b1, f_b2, f_ln_g, f_ln_b;
};

struct PhiWeights {
    int d = 0;
    int ffn = 0;
    std::vector<PhiLayerWeights> layers;
    RowMat head_w;  // 4 x D
    VecD head_b;    // 4

    static PhiWeights seeded(int d, const PhiConfig& cfg, uint64_t seed) {
        PhiWeights w;
        w.d = d;
        w.ffn = d * cfg.ffn_mult;
        Rng rng(derive_seed(seed, 4));
        const double a = 1.0 / std::sqrt(static_cast<double>(d));
        auto fill = [&rng](RowMat& m, int rows, int cols, double scale) {
            m.resize(rows, cols);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
        };
        w.layers.resize(cfg.n_layers);
        for (auto& l : w.layers) {
            fill(l.t_wq, d, d, a);
            fill(l.t_wk, d, d, a);
            fill(l.t_wv, d, d, a);
            fill(l.t_wo, d, d, a);
            l.t_ln_g = VecD::Ones(d);
            l.t_ln_b = VecD::Zero(d);
            fill(l.s_wq, d, d, a);
            fill(l.s_wk, d, d, a);
            fill(l.s_wv, d, d, a);
            fill(l.s_wo, d, d, a);
            l.s_ln_g = VecD::Ones(d);
            l.s_ln_b = VecD::Zero(d);
            fill(l.f_w1, w.ffn, d, a);
            fill(l.f_w2, d, w.ffn, 1.0 / std::sqrt(static_cast<double>(w.ffn)));
            l.f_b1 = VecD::Zero(w.ffn);
            l.f_b2 = VecD::Zero(d);
            l.f_ln_g = VecD::Ones(d);
            l.f_ln_b = VecD::Zero(d);
        }
        fill(w.head_w, 4, d, 0.1 * a);
        w.head_b = VecD::Zero(4);
        return w;
    }
};

// Anchor list plus CSR local-neighbor lists over one frame's tokens.
struct SpatialStructure {
    std::vector<int> anchors;        // token indices within a frame
    std::vector<int> local_offsets;  // size N+1
    std::vector<int> local_ids;      // flattened neighbor lists
};

namespace detail {

inline void layer_norm_rows(RowMat& x, const VecD& gain, const VecD& offset) {
    const int d = static_cast<int>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double* row = x.data() + r * d;
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += row[c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (int c = 0; c < d; ++c) row[c] = (row[c] - mean) * inv * gain[c] + offset[c];
    }
}

}  // namespace detail

// ------------------------------------------------------------------
// The refinement transformer: per layer, temporal attention within each
// trajectory, then spatial attention over a sparse anchor set plus a local
// window, then a feedforward block; residual + layer norm after each
// sublayer; a pointwise head maps tokens to (du, dv, dd, do-logit).
// Tokens are frame-major: row t*N + i.
// ------------------------------------------------------------------
inline RowMat phi_forward(const RowMat& tokens, int T, int N, const SpatialStructure& spatial,
                          const PhiConfig& cfg, const PhiWeights& w) {
    if (tokens.rows() != static_cast<Eigen::Index>(T) * N || tokens.cols() != w.d)
        throw ShapeError("phi_forward: token matrix shape mismatch");
    if (static_cast<int>(w.layers.size()) != cfg.n_layers)
        throw ShapeError("phi_forward: layer count mismatch");
    const int D = w.d;
    const int heads = cfg.heads;
    const int dh = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int A = static_cast<int>(spatial.anchors.size());

    RowMat x = tokens;
    RowMat q(T * N, D), k(T * N, D), v(T * N, D), attn(T * N, D);

    for (const PhiLayerWeights& lw : w.layers) {
        // ---- temporal attention within each trajectory ----
        q.noalias() = x * lw.t_wq.transpose();
        k.noalias() = x * lw.t_wk.transpose();
        v.noalias() = x * lw.t_wv.transpose();
        std::vector<double> logits(T);
        for (int i = 0; i < N; ++i) {
            for (int h = 0; h < heads; ++h) {
                const int c0 = h * dh;
                for (int tq = 0; tq < T; ++tq) {
                    const double* qr = q.data() + (static_cast<size_t>(tq) * N + i) * D + c0;
                    for (int tk = 0; tk < T; ++tk) {
                        const double* kr = k.data() + (static_cast<size_t>(tk) * N + i) * D + c0;
                        double acc = 0.0;
                        for (int e = 0; e < dh; ++e) acc += qr[e] * kr[e];
                        logits[tk] = acc * scale;
                    }
                    softmax_inplace(logits);
                    double* out = attn.data() + (static_cast<size_t>(tq) * N + i) * D + c0;
                    for (int e = 0; e < dh; ++e) out[e] = 0.0;
                    for (int tk = 0; tk < T; ++tk) {
                        const double* vr = v.data() + (static_cast<size_t>(tk) * N + i) * D + c0;
                        const double a = logits[tk];
                        for (int e = 0; e < dh; ++e) out[e] += a * vr[e];
                    }
                }
            }
        }
        x.noalias() += attn * lw.t_wo.transpose();
        detail::layer_norm_rows(x, lw.t_ln_g, lw.t_ln_b);

        // ---- spatial attention: anchors globally + local window ----
        q.noalias() = x * lw.s_wq.transpose();
        k.noalias() = x * lw.s_wk.transpose();
        v.noalias() = x * lw.s_wv.transpose();
        std::vector<uint8_t> is_anchor(N, 0);
        for (int aid : spatial.anchors) is_anchor[aid] = 1;
        RowMat k_anchor(A, D), v_anchor(A, D), la(N, A);
        std::vector<double> lg;
        for (int t = 0; t < T; ++t) {
            const int base = t * N;
            for (int a = 0; a < A; ++a) {
                k_anchor.row(a) = k.row(base + spatial.anchors[a]);
                v_anchor.row(a) = v.row(base + spatial.anchors[a]);
            }
            for (int h = 0; h < heads; ++h) {
                const int c0 = h * dh;
                // Anchor logits for the whole frame in one product.
                la.noalias() = q.block(base, c0, N, dh) *
                               k_anchor.block(0, c0, A, dh).transpose();
                for (int i = 0; i < N; ++i) {
                    const int lo = spatial.local_offsets[i];
                    const int hi = spatial.local_offsets[i + 1];
                    int n_local = 0;
                    lg.resize(A + (hi - lo));
                    for (int a = 0; a < A; ++a) lg[a] = la(i, a) * scale;
                    const double* qr = q.data() + (static_cast<size_t>(base) + i) * D + c0;
                    for (int z = lo; z < hi; ++z) {
                        const int j = spatial.local_ids[z];
                        if (is_anchor[j]) continue;  // already attended globally
                        const double* kr =
                            k.data() + (static_cast<size_t>(base) + j) * D + c0;
                        double acc = 0.0;
                        for (int e = 0; e < dh; ++e) acc += qr[e] * kr[e];
                        lg[A + n_local] = acc * scale;
                        ++n_local;
                    }
                    std::span<double> logits_span(lg.data(), A + n_local);
                    softmax_inplace(logits_span);
                    double* out = attn.data() + (static_cast<size_t>(base) + i) * D + c0;
                    for (int e = 0; e < dh; ++e) out[e] = 0.0;
                    for (int a = 0; a < A; ++a) {
                        const double alpha = logits_span[a];
                        const double* vr = v_anchor.data() + static_cast<size_t>(a) * D + c0;
                        for (int e = 0; e < dh; ++e) out[e] += alpha * vr[e];
                    }
                    n_local = 0;
                    for (int z = lo; z < hi; ++z) {
                        const int j = spatial.local_ids[z];
                        if (is_anchor[j]) continue;
                        const double alpha = logits_span[A + n_local];
                        const double* vr =
                            v.data() + (static_cast<size_t>(base) + j) * D + c0;
                        for (int e = 0; e < dh; ++e) out[e] += alpha * vr[e];
                        ++n_local;
                    }
                }
            }
        }
        x.noalias() += attn * lw.s_wo.transpose();
        detail::layer_norm_rows(x, lw.s_ln_g, lw.s_ln_b);

        // ---- feedforward ----
        RowMat hbuf = (x * lw.f_w1.transpose()).rowwise() + lw.f_b1.transpose();
        hbuf = hbuf.cwiseMax(0.0);
        x.noalias() += hbuf * lw.f_w2.transpose();
        x.rowwise() += lw.f_b2.transpose();
        detail::layer_norm_rows(x, lw.f_ln_g, lw.f_ln_b);
    }

    RowMat updates = (x * w.head_w.transpose()).rowwise() + w.head_b.transpose();
    return updates;
}

// ------------------------------------------------------------------
// Point sampling. The uniform strategy is the centered stride subgrid by
// default (offset floor(s/2)); GridAnchor::nested uses offset s-1 so the
// subgrids of a halving schedule contain each other. Random draws the same
// count without replacement (optionally forced to include must_include);
// keypoint takes the top-count cells by image-gradient mass, which is
// nested for free under a fixed ranking.
// ------------------------------------------------------------------
enum class GridAnchor { centered, nested };

namespace detail {

inline std::vector<std::array<int, 4>> neighbors_4nn(std::span<const int> tracked_ids,
                                                     std::span<const int> query_ids, int cols) {
    if (tracked_ids.size() < 4 && !query_ids.empty())
        throw ValidationError("sample_points: fewer than 4 tracked cells for neighbor search");
    std::vector<std::array<int, 4>> out(query_ids.size());
    for (size_t qi = 0; qi < query_ids.size(); ++qi) {
        const int q = query_ids[qi];
        const double qy = q / cols, qx = q % cols;
        // running best-4 ordered by (distance^2, id)
        std::array<double, 4> bd;
        std::array<int, 4> bid;
        bd.fill(std::numeric_limits<double>::infinity());
        bid.fill(-1);
        for (int id : tracked_ids) {
            const double dy = id / cols - qy;
            const double dx = id % cols - qx;
            const double d2 = dx * dx + dy * dy;
            int pos = 4;
            while (pos > 0 &&
                   (d2 < bd[pos - 1] || (d2 == bd[pos - 1] && id < bid[pos - 1])))
                --pos;
            if (pos < 4) {
                for (int m = 3; m > pos; --m) {
                    bd[m] = bd[m - 1];
                    bid[m] = bid[m - 1];
                }
                bd[pos] = d2;
                bid[pos] = id;
            }
        }
        out[qi] = bid;
    }
    return out;
}

inline std::vector<double> keypoint_scores(const RgbdVideo& video, int r, int rows, int cols) {
    std::vector<double> score(static_cast<size_t>(rows) * cols, 0.0);
    for (int y = 0; y < video.H; ++y) {
        for (int x = 0; x < video.W; ++x) {
            const auto lum = [&](int yy, int xx) {
                yy = clamp(yy, 0, video.H - 1);
                xx = clamp(xx, 0, video.W - 1);
                return (video.rgb_at(0, yy, xx, 0) + video.rgb_at(0, yy, xx, 1) +
                        video.rgb_at(0, yy, xx, 2)) /
                       3.0;
            };
            const double gx = 0.5 * (lum(y, x + 1) - lum(y, x - 1));
            const double gy = 0.5 * (lum(y + 1, x) - lum(y - 1, x));
            const int gr = std::min(y / r, rows - 1);
            const int gc = std::min(x / r, cols - 1);
            score[static_cast<size_t>(gr) * cols + gc] += std::sqrt(gx * gx + gy * gy);
        }
    }
    return score;
}

}  // namespace detail

inline SampleSet sample_points(int rows, int cols, int s, SamplingKind strategy, uint64_t seed,
                               GridAnchor anchor = GridAnchor::centered,
                               const RgbdVideo* video = nullptr, int r = 4,
                               std::span<const int> must_include = {}) {
    if (s < 1) throw ValidationError("sample_points: factor must be positive");
    const int cells = rows * cols;
    SampleSet set;
    std::vector<uint8_t> tracked_mask(cells, 0);

    if (strategy == SamplingKind::uniform) {
        if (rows % s != 0 || cols % s != 0)
            throw ValidationError("sample_points: uniform sampling needs s to divide grid dims");
        const int off = anchor == GridAnchor::centered ? s / 2 : s - 1;
        for (int gr = off; gr < rows; gr += s)
            for (int gc = off; gc < cols; gc += s) tracked_mask[gr * cols + gc] = 1;
    } else {
        const long long target = static_cast<long long>((rows + s - 1) / s) *
                                 ((cols + s - 1) / s);
        if (target > cells)
            throw ValidationError("sample_points: target count exceeds grid size");
        if (strategy == SamplingKind::random) {
            long long have = 0;
            for (int id : must_include) {
                if (!tracked_mask[id]) {
                    tracked_mask[id] = 1;
                    ++have;
                }
            }
            Rng rng(seed);
            while (have < target) {
                const int id = static_cast<int>(rng.uniform_int(cells));
                if (!tracked_mask[id]) {
                    tracked_mask[id] = 1;
                    ++have;
                }
            }
        } else {  // keypoint
            if (!video)
                throw ValidationError("sample_points: keypoint strategy needs the video");
            std::vector<double> score = detail::keypoint_scores(*video, r, rows, cols);
            std::vector<int> rank(cells);
            std::iota(rank.begin(), rank.end(), 0);
            std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) {
                if (score[a] != score[b]) return score[a] > score[b];
                return a < b;
            });
            for (long long i = 0; i < target; ++i) tracked_mask[rank[i]] = 1;
            for (int id : must_include)
                if (!tracked_mask[id])
                    throw ValidationError(
                        "sample_points: keypoint ranking does not contain a required cell");
        }
    }

    for (int id = 0; id < cells; ++id)
        (tracked_mask[id] ? set.tracked_ids : set.query_ids).push_back(id);
    set.neighbor_map = detail::neighbors_4nn(set.tracked_ids, set.query_ids, cols);
    return set;
}

// ------------------------------------------------------------------
// Engine weights bundle and its file format:
//   magic "DTWT", u32 version=1, u32 json_len, JSON manifest
//   {config, blobs:[{name,count,checksum}]}, then raw f32 blobs in order.
// ------------------------------------------------------------------
struct TokenEmbedWeights {
    RowMat w_pos;   // d_tok x 6*n_freq
    RowMat w_time;  // d_tok x 2*n_freq
};

struct EngineWeights {
    ExtractorWeights extractor;
    ProjWeights proj;
    DualConvKernels dual;
    AttnInterpParams interp;
    PhiWeights phi;
    TokenEmbedWeights embed;

    static EngineWeights seeded(const EngineConfig& cfg, uint64_t seed) {
        cfg.validate();
        EngineWeights w;
        w.extractor = ExtractorWeights::seeded(cfg.feat_channels, cfg.r, cfg.n_levels, seed);
        w.proj = ProjWeights::seeded(cfg.corr.patch_cells(), cfg.corr.projected_channels,
                                     seed);
        w.dual = DualConvKernels::seeded(cfg.corr.neighborhood, cfg.corr.projected_channels,
                                         seed);
        w.interp = AttnInterpParams::seeded(cfg.feat_channels, cfg.interp.L, cfg.interp.heads,
                                            cfg.interp.d_head, cfg.interp.d_score, seed);
        w.phi = PhiWeights::seeded(cfg.d_tok, cfg.phi, seed);
        Rng rng(derive_seed(seed, 5));
        const double a = 1.0 / std::sqrt(static_cast<double>(cfg.d_tok));
        w.embed.w_pos.resize(cfg.d_tok, 6 * cfg.n_freq);
        w.embed.w_time.resize(cfg.d_tok, 2 * cfg.n_freq);
        for (auto* m : {&w.embed.w_pos, &w.embed.w_time})
            for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-a, a);
        return w;
    }
};

nlohmann::json engine_config_to_json(const EngineConfig& cfg);
EngineConfig engine_config_from_json(const nlohmann::json& j);

inline nlohmann::json engine_config_to_json(const EngineConfig& cfg) {
    return nlohmann::json{
        {"r", cfg.r},
        {"feat_channels", cfg.feat_channels},
        {"n_levels", cfg.n_levels},
        {"corr",
         {{"radius", cfg.corr.radius},
          {"neighborhood", cfg.corr.neighborhood},
          {"projected_channels", cfg.corr.projected_channels},
          {"scales", cfg.corr.scales}}},
        {"n_freq", cfg.n_freq},
        {"d_tok", cfg.d_tok},
        {"phi",
         {{"n_layers", cfg.phi.n_layers},
          {"heads", cfg.phi.heads},
          {"anchor_stride", cfg.phi.anchor_stride},
          {"window_half", cfg.phi.window_half},
          {"ffn_mult", cfg.phi.ffn_mult}}},
        {"interp",
         {{"L", cfg.interp.L},
          {"heads", cfg.interp.heads},
          {"d_head", cfg.interp.d_head},
          {"d_score", cfg.interp.d_score}}},
    };
}

inline EngineConfig engine_config_from_json(const nlohmann::json& j) {
    EngineConfig cfg;
    cfg.r = j.at("r").get<int>();
    cfg.feat_channels = j.at("feat_channels").get<int>();
    cfg.n_levels = j.at("n_levels").get<int>();
    cfg.corr.radius = j.at("corr").at("radius").get<int>();
    cfg.corr.neighborhood = j.at("corr").at("neighborhood").get<int>();
    cfg.corr.projected_channels = j.at("corr").at("projected_channels").get<int>();
    cfg.corr.scales = j.at("corr").at("scales").get<std::vector<int>>();
    cfg.n_freq = j.at("n_freq").get<int>();
    cfg.d_tok = j.at("d_tok").get<int>();
    cfg.phi.n_layers = j.at("phi").at("n_layers").get<int>();
    cfg.phi.heads = j.at("phi").at("heads").get<int>();
    cfg.phi.anchor_stride = j.at("phi").at("anchor_stride").get<int>();
    cfg.phi.window_half = j.at("phi").at("window_half").get<int>();
    cfg.phi.ffn_mult = j.at("phi").at("ffn_mult").get<int>();
    cfg.interp.L = j.at("interp").at("L").get<int>();
    cfg.interp.heads = j.at("interp").at("heads").get<int>();
    cfg.interp.d_head = j.at("interp").at("d_head").get<int>();
    cfg.interp.d_score = j.at("interp").at("d_score").get<int>();
    return cfg;
}

namespace detail {

struct BlobWriter {
    nlohmann::json dir = nlohmann::json::array();
    std::string payload;

    void add(const std::string& name, std::span<const double> data) {
        std::vector<float> f(data.size());
        for (size_t i = 0; i < data.size(); ++i) f[i] = static_cast<float>(data[i]);
        dir.push_back({{"name", name},
                       {"count", f.size()},
                       {"checksum", hash_hex(hash_floats(f))}});
        payload.append(reinterpret_cast<const char*>(f.data()), f.size() * sizeof(float));
    }
    void add_mat(const std::string& name, const RowMat& m) {
        add(name, std::span<const double>(m.data(), m.size()));
    }
    void add_vec(const std::string& name, const VecD& v) {
        add(name, std::span<const double>(v.data(), v.size()));
    }
};

struct BlobReader {
    nlohmann::json dir;
    std::string payload;
    size_t cursor = 0;
    size_t index = 0;

    std::vector<double> take(const std::string& name) {
        if (index >= dir.size()) throw IoError("weights file: missing blob " + name);
        const auto& entry = dir[index++];
        if (entry.at("name").get<std::string>() != name)
            throw IoError("weights file: expected blob " + name + " but found " +
                          entry.at("name").get<std::string>());
        const size_t count = entry.at("count").get<size_t>();
        if (cursor + count * sizeof(float) > payload.size())
            throw IoError("weights file: truncated blob " + name);
        std::vector<float> f(count);
        std::memcpy(f.data(), payload.data() + cursor, count * sizeof(float));
        cursor += count * sizeof(float);
        if (hash_hex(hash_floats(f)) != entry.at("checksum").get<std::string>())
            throw IoError("weights file: checksum mismatch for blob " + name);
        return std::vector<double>(f.begin(), f.end());
    }
    RowMat take_mat(const std::string& name, int rows, int cols) {
        std::vector<double> d = take(name);
        if (d.size() != static_cast<size_t>(rows) * cols)
            throw IoError("weights file: blob " + name + " has wrong size");
        RowMat m(rows, cols);
        std::copy(d.begin(), d.end(), m.data());
        return m;
    }
    VecD take_vec(const std::string& name, int n) {
        std::vector<double> d = take(name);
        if (d.size() != static_cast<size_t>(n))
            throw IoError("weights file: blob " + name + " has wrong size");
        return Eigen::Map<const VecD>(d.data(), n);
    }
};

}  // namespace detail

inline void save_engine_weights(const std::string& path, const EngineConfig& cfg,
                                const EngineWeights& w) {
    detail::BlobWriter bw;
    bw.add("extractor.patch_proj", w.extractor.patch_proj);
    for (size_t l = 0; l < w.extractor.smooth.size(); ++l)
        bw.add("extractor.smooth" + std::to_string(l),
               std::span<const double>(w.extractor.smooth[l].data(), 9));
    bw.add("proj.w", w.proj.w);
    bw.add("proj.b", w.proj.b);
    bw.add("proj.gain", w.proj.gain);
    bw.add("proj.offset", w.proj.offset);
    bw.add("dual.k1", w.dual.k1);
    bw.add("dual.k2", w.dual.k2);
    for (size_t b = 0; b < w.interp.blocks.size(); ++b) {
        const auto& blk = w.interp.blocks[b];
        const std::string p = "interp.b" + std::to_string(b) + ".";
        bw.add(p + "wq", blk.wq);
        bw.add(p + "wk", blk.wk);
        bw.add(p + "wv", blk.wv);
        bw.add(p + "wo", blk.wo);
        bw.add(p + "ln_gain", blk.ln_gain);
        bw.add(p + "ln_offset", blk.ln_offset);
    }
    bw.add("interp.q_proj", w.interp.q_proj);
    bw.add("interp.k_proj", w.interp.k_proj);
    bw.add("interp.slopes", w.interp.slopes);
    for (size_t l = 0; l < w.phi.layers.size(); ++l) {
        const auto& lw = w.phi.layers[l];
        const std::string p = "phi.l" + std::to_string(l) + ".";
        bw.add_mat(p + "t_wq", lw.t_wq);
        bw.add_mat(p + "t_wk", lw.t_wk);
        bw.add_mat(p + "t_wv", lw.t_wv);
        bw.add_mat(p + "t_wo", lw.t_wo);
        bw.add_vec(p + "t_ln_g", lw.t_ln_g);
        bw.add_vec(p + "t_ln_b", lw.t_ln_b);
        bw.add_mat(p + "s_wq", lw.s_wq);
        bw.add_mat(p + "s_wk", lw.s_wk);
        bw.add_mat(p + "s_wv", lw.s_wv);
        bw.add_mat(p + "s_wo", lw.s_wo);
        bw.add_vec(p + "s_ln_g", lw.s_ln_g);
        bw.add_vec(p + "s_ln_b", lw.s_ln_b);
        bw.add_mat(p + "f_w1", lw.f_w1);
        bw.add_mat(p + "f_w2", lw.f_w2);
        bw.add_vec(p + "f_b1", lw.f_b1);
        bw.add_vec(p + "f_b2", lw.f_b2);
        bw.add_vec(p + "f_ln_g", lw.f_ln_g);
        bw.add_vec(p + "f_ln_b", lw.f_ln_b);
    }
    bw.add_mat("phi.head_w", w.phi.head_w);
    bw.add_vec("phi.head_b", w.phi.head_b);
    bw.add_mat("embed.w_pos", w.embed.w_pos);
    bw.add_mat("embed.w_time", w.embed.w_time);

    nlohmann::json manifest = {{"config", engine_config_to_json(cfg)}, {"blobs", bw.dir},
                               {"extractor_seed", w.extractor.seed}};
    const std::string js = manifest.dump();
    std::string out = "DTWT";
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<uint32_t>(js.size()));
    out += js;
    out += bw.payload;
    detail::write_file_bytes(path, out);
}

inline std::pair<EngineConfig, EngineWeights> load_engine_weights(const std::string& path) {
    const std::string data = detail::read_file_bytes(path);
    if (data.size() < 12 || data.compare(0, 4, "DTWT") != 0)
        throw IoError("not an engine weights file: " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    if (detail::get_u32(p + 4) != 1) throw IoError("unsupported weights version: " + path);
    const uint32_t jlen = detail::get_u32(p + 8);
    if (12 + jlen > data.size()) throw IoError("weights file truncated: " + path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(data.substr(12, jlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("weights manifest parse error: " + std::string(e.what()));
    }
    EngineConfig cfg = engine_config_from_json(manifest.at("config"));
    cfg.validate();

    detail::BlobReader br;
    br.dir = manifest.at("blobs");
    br.payload = data.substr(12 + jlen);

    EngineWeights w;
    w.extractor.C = cfg.feat_channels;
    w.extractor.r = cfg.r;
    w.extractor.n_levels = cfg.n_levels;
    w.extractor.seed = manifest.value("extractor_seed", 0ull);
    w.extractor.patch_proj = br.take("extractor.patch_proj");
    w.extractor.smooth.resize(cfg.n_levels > 1 ? cfg.n_levels - 1 : 0);
    for (size_t l = 0; l < w.extractor.smooth.size(); ++l) {
        std::vector<double> kv = br.take("extractor.smooth" + std::to_string(l));
        if (kv.size() != 9) throw IoError("weights file: bad smoothing kernel size");
        std::copy(kv.begin(), kv.end(), w.extractor.smooth[l].begin());
    }
    w.proj.in_dim = cfg.corr.patch_cells();
    w.proj.out_dim = cfg.corr.projected_channels;
    w.proj.w = br.take("proj.w");
    w.proj.b = br.take("proj.b");
    w.proj.gain = br.take("proj.gain");
    w.proj.offset = br.take("proj.offset");
    w.dual.n = cfg.corr.neighborhood;
    w.dual.out_channels = cfg.corr.projected_channels;
    w.dual.k1 = br.take("dual.k1");
    w.dual.k2 = br.take("dual.k2");
    w.interp.C_F = cfg.feat_channels;
    w.interp.L = cfg.interp.L;
    w.interp.heads = cfg.interp.heads;
    w.interp.d_head = cfg.interp.d_head;
    w.interp.d_score = cfg.interp.d_score;
    w.interp.blocks.resize(cfg.interp.L);
    for (int b = 0; b < cfg.interp.L; ++b) {
        auto& blk = w.interp.blocks[b];
        const std::string pfx = "interp.b" + std::to_string(b) + ".";
        blk.wq = br.take(pfx + "wq");
        blk.wk = br.take(pfx + "wk");
        blk.wv = br.take(pfx + "wv");
        blk.wo = br.take(pfx + "wo");
        blk.ln_gain = br.take(pfx + "ln_gain");
        blk.ln_offset = br.take(pfx + "ln_offset");
    }
    w.interp.q_proj = br.take("interp.q_proj");
    w.interp.k_proj = br.take("interp.k_proj");
    w.interp.slopes = br.take("interp.slopes");
    w.phi.d = cfg.d_tok;
    w.phi.ffn = cfg.d_tok * cfg.phi.ffn_mult;
    w.phi.layers.resize(cfg.phi.n_layers);
    const int D = cfg.d_tok, F = w.phi.ffn;
    for (int l = 0; l < cfg.phi.n_layers; ++l) {
        auto& lw = w.phi.layers[l];
        const std::string pfx = "phi.l" + std::to_string(l) + ".";
        lw.t_wq = br.take_mat(pfx + "t_wq", D, D);
        lw.t_wk = br.take_mat(pfx + "t_wk", D, D);
        lw.t_wv = br.take_mat(pfx + "t_wv", D, D);
        lw.t_wo = br.take_mat(pfx + "t_wo", D, D);
        lw.t_ln_g = br.take_vec(pfx + "t_ln_g", D);
        lw.t_ln_b = br.take_vec(pfx + "t_ln_b", D);
        lw.s_wq = br.take_mat(pfx + "s_wq", D, D);
        lw.s_wk = br.take_mat(pfx + "s_wk", D, D);
        lw.s_wv = br.take_mat(pfx + "s_wv", D, D);
        lw.s_wo = br.take_mat(pfx + "s_wo", D, D);
        lw.s_ln_g = br.take_vec(pfx + "s_ln_g", D);
        lw.s_ln_b = br.take_vec(pfx + "s_ln_b", D);
        lw.f_w1 = br.take_mat(pfx + "f_w1", F, D);
        lw.f_w2 = br.take_mat(pfx + "f_w2", D, F);
        lw.f_b1 = br.take_vec(pfx + "f_b1", F);
        lw.f_b2 = br.take_vec(pfx + "f_b2", D);
        lw.f_ln_g = br.take_vec(pfx + "f_ln_g", D);
        lw.f_ln_b = br.take_vec(pfx + "f_ln_b", D);
    }
    w.phi.head_w = br.take_mat("phi.head_w", 4, D);
    w.phi.head_b = br.take_vec("phi.head_b", 4);
    w.embed.w_pos = br.take_mat("embed.w_pos", D, 6 * cfg.n_freq);
    w.embed.w_time = br.take_mat("embed.w_time", D, 2 * cfg.n_freq);
    return {cfg, std::move(w)};
}

// ------------------------------------------------------------------
// Token assembly for the tracked subset. Tokens are frame-major rows
// (t * N_k + index-in-tracked-list). The trajectory's appearance anchor is
// its renormalized frame-0 feature at the origin.
// ------------------------------------------------------------------
inline RowMat assemble_tokens(const TrackState& state, std::span<const int> tracked_ids,
                              const FeaturePyramid& pyr, const RgbdVideo& video,
                              const EngineConfig& cfg, const EngineWeights& w,
                              Profiler* prof = nullptr, int iter = 0) {
    const TokenLayout lay = cfg.layout();
    const int T = state.num_frames;
    const int Nk = static_cast<int>(tracked_ids.size());
    const int n = cfg.corr.neighborhood;
    const int n2 = n * n;
    RowMat tokens(static_cast<Eigen::Index>(T) * Nk, lay.total);

    double t_assembly = 0.0, t_ms = 0.0, t_c4d = 0.0, t_proj = 0.0;
    const auto tick = [] { return Profiler::now_ms(); };

    std::vector<double> qfeat(pyr.C);
    RowMat qpatch, tpatch;
    Corr4D c4d;
    c4d.n = n;
    c4d.m.resize(static_cast<size_t>(n2) * n2);
    std::vector<double> ms, dc, disp_embed, pos_embed, t_embed_v;

    for (int ik = 0; ik < Nk; ++ik) {
        const int id = tracked_ids[ik];
        const TrackPoint origin = state.points[id];

        double t0 = tick();
        sample_feature_into(pyr, 0, 0, origin.u, origin.v, qfeat.data());
        double norm = 0.0;
        for (double x : qfeat) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (double& x : qfeat) x /= norm;
        else
            qfeat[0] = 1.0;
        t_assembly += tick() - t0;

        t0 = tick();
        gather_patch(pyr, 0, origin.u, origin.v, n, qpatch);
        t_c4d += tick() - t0;

        for (int t = 0; t < T; ++t) {
            const TrackPoint cur = state.at(t, id);
            double* row = tokens.data() +
                          (static_cast<size_t>(t) * Nk + ik) * lay.total;

            t0 = tick();
            sample_feature_into(pyr, t, 0, cur.u, cur.v, row + lay.feat);
            t_assembly += tick() - t0;

            t0 = tick();
            ms = multiscale_corr(pyr, t, qfeat, cur.u, cur.v, cfg.corr);
            std::copy(ms.begin(), ms.end(), row + lay.mscorr);
            t_ms += tick() - t0;

            t0 = tick();
            gather_patch(pyr, t, cur.u, cur.v, n, tpatch);
            Eigen::Map<RowMat>(c4d.m.data(), n2, n2).noalias() = qpatch * tpatch.transpose();
            t_c4d += tick() - t0;

            t0 = tick();
            const std::vector<double> projected = project_corr(c4d, w.proj);
            // mean over the query-patch cells
            for (int c = 0; c < lay.corr4d_len; ++c) {
                double acc = 0.0;
                for (int a = 0; a < n2; ++a)
                    acc += projected[static_cast<size_t>(a) * lay.corr4d_len + c];
                row[lay.corr4d + c] = acc / n2;
            }
            t_proj += tick() - t0;

            t0 = tick();
            dc = depth_corr(video, t, cur.d, cur.u, cur.v, cfg.corr);
            std::copy(dc.begin(), dc.end(), row + lay.dcorr);
            row[lay.vis] = cur.o;
            const double dxyz[3] = {cur.u - origin.u, cur.v - origin.v, cur.d - origin.d};
            disp_embed = positional_embed(std::span<const double>(dxyz, 3), cfg.n_freq);
            std::copy(disp_embed.begin(), disp_embed.end(), row + lay.disp);

            const double axyz[3] = {cur.u, cur.v, cur.d};
            pos_embed = positional_embed(std::span<const double>(axyz, 3), cfg.n_freq);
            t_embed_v = time_embed(static_cast<double>(t), cfg.n_freq);
            Eigen::Map<VecD> row_vec(row, lay.total);
            row_vec.noalias() +=
                w.embed.w_pos * Eigen::Map<const VecD>(pos_embed.data(), pos_embed.size());
            row_vec.noalias() +=
                w.embed.w_time * Eigen::Map<const VecD>(t_embed_v.data(), t_embed_v.size());
            t_assembly += tick() - t0;
        }
    }
    if (prof) {
        const long long tok = static_cast<long long>(T) * Nk;
        prof->add(Stage::corr_multiscale, iter, tok, t_ms);
        prof->add(Stage::corr_4d, iter, tok, t_c4d);
        prof->add(Stage::corr_project, iter, tok, t_proj);
        prof->add(Stage::token_assembly, iter, tok, t_assembly);
    }
    return tokens;
}

// ------------------------------------------------------------------
// The coarse-to-fine loop.
// ------------------------------------------------------------------
struct IterationRow {
    int iter = 0;
    long long tokens = 0;
    double wall_ms = 0.0;
    std::optional<double> epe_tracked;
    std::optional<double> epe_interp;
};

struct RunResult {
    TrackState full;                      // H x W
    TrackState grid;                      // final grid-resolution state
    std::vector<TrackState> iter_states;  // grid state after each iteration
    std::vector<IterationRow> iter_rows;
    long long total_tokens = 0;
};

namespace detail {

// Builds anchors and local-window neighbor lists for one iteration's tracked
// set. Uniform subgrids get the exact stride-a anchor subgrid and a
// (2*window_half+1)^2 window in subgrid units; irregular sets fall back to
// every (a^2)-th point and a scaled pixel window.
inline SpatialStructure build_spatial(std::span<const int> tracked_ids, int rows, int cols,
                                      int stride, int offset, bool regular,
                                      const PhiConfig& cfg) {
    SpatialStructure sp;
    const int N = static_cast<int>(tracked_ids.size());
    sp.local_offsets.assign(N + 1, 0);
    if (regular) {
        const int sub_rows = (rows - 1 - offset) / stride + 1;
        const int sub_cols = (cols - 1 - offset) / stride + 1;
        // tracked_ids are sorted row-major, so index = sr*sub_cols + sc
        for (int sr = 0; sr < sub_rows; sr += cfg.anchor_stride)
            for (int sc = 0; sc < sub_cols; sc += cfg.anchor_stride)
                sp.anchors.push_back(sr * sub_cols + sc);
        std::vector<int> flat;
        for (int i = 0; i < N; ++i) {
            const int sr = i / sub_cols, sc = i % sub_cols;
            for (int dr = -cfg.window_half; dr <= cfg.window_half; ++dr) {
                const int nr = sr + dr;
                if (nr < 0 || nr >= sub_rows) continue;
                for (int dc = -cfg.window_half; dc <= cfg.window_half; ++dc) {
                    const int nc = sc + dc;
                    if (nc < 0 || nc >= sub_cols) continue;
                    flat.push_back(nr * sub_cols + nc);
                }
            }
            sp.local_offsets[i + 1] = static_cast<int>(flat.size());
        }
        sp.local_ids = std::move(flat);
    } else {
        for (int i = 0; i < N; i += cfg.anchor_stride * cfg.anchor_stride)
            sp.anchors.push_back(i);
        // Effective spacing of the irregular set, for a comparable window.
        const int cells = rows * cols;
        const int s_eff = std::max(
            1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells) / N))));
        const int radius = cfg.window_half * s_eff;
        std::vector<int> cell_to_slot(cells, -1);
        for (int i = 0; i < N; ++i) cell_to_slot[tracked_ids[i]] = i;
        std::vector<int> flat;
        for (int i = 0; i < N; ++i) {
            const int r0 = tracked_ids[i] / cols, c0 = tracked_ids[i] % cols;
            for (int rr = std::max(0, r0 - radius); rr <= std::min(rows - 1, r0 + radius); ++rr)
                for (int cc = std::max(0, c0 - radius); cc <= std::min(cols - 1, c0 + radius);
                     ++cc) {
                    const int slot = cell_to_slot[rr * cols + cc];
                    if (slot >= 0) flat.push_back(slot);
                }
            sp.local_offsets[i + 1] = static_cast<int>(flat.size());
        }
        sp.local_ids = std::move(flat);
    }
    if (sp.anchors.empty()) sp.anchors.push_back(0);
    return sp;
}

inline void check_finite_state(const TrackState& s, std::span<const int> ids, int iter) {
    for (int id : ids) {
        for (int t = 0; t < s.num_frames; ++t) {
            const TrackPoint& p = s.at(t, id);
            if (!std::isfinite(p.u) || !std::isfinite(p.v) || !std::isfinite(p.d) ||
                !std::isfinite(p.o))
                throw ValidationError("run_tracking: non-finite state at iteration " +
                                      std::to_string(iter));
        }
    }
}

inline double mean_epe_vs_gt(const TrackState& s, std::span<const int> ids,
                             const GroundTruth& gt) {
    double acc = 0.0;
    long long n = 0;
    for (int id : ids) {
        const long gu = std::lround(s.points[id].u);
        const long gv = std::lround(s.points[id].v);
        const int gidx = static_cast<int>(gv) * gt.W + static_cast<int>(gu);
        for (int t = 1; t < s.num_frames; ++t) {
            const TrackPoint& p = s.at(t, id);
            const TrackPoint& g = gt.tracks.at(t, gidx);
            acc += std::hypot(p.u - g.u, p.v - g.v);
            ++n;
        }
    }
    return n ? acc / n : 0.0;
}

}  // namespace detail

inline TrackState upsample_full(const TrackState& grid_state, const RgbdVideo& video,
                                const FeaturePyramid* pyr, InterpKind kind, int r,
                                const EngineWeights* w, Profiler* prof = nullptr, int iter = 0);

inline RunResult run_tracking(const RgbdVideo& video, const EngineConfig& cfg,
                              const EngineWeights& weights, const GroundTruth* gt = nullptr,
                              Profiler* prof = nullptr) {
    video.validate();
    cfg.validate();
    if (cfg.refiner == RefinerKind::oracle && !gt)
        throw ConfigError("run_tracking: oracle refiner needs ground truth");

    const int r = cfg.r;
    const int gh = video.H / r;
    const int gw = video.W / r;
    if (cfg.sampling == SamplingKind::uniform) {
        for (int s : cfg.schedule.factors)
            if (gh % s != 0 || gw % s != 0)
                throw ConfigError("run_tracking: schedule factor " + std::to_string(s) +
                                  " does not divide the track grid");
    }

    FeaturePyramid pyr;
    {
        StageTimer timer(prof, Stage::feature_extraction, 0, video.T);
        pyr = extract_features(video, weights.extractor, cfg.n_levels);
    }

    // Identity initialization: every grid trajectory starts at its origin.
    TrackState state = TrackState::make(video.T, gh, gw);
    const int off_px = r / 2;
    for (int gr = 0; gr < gh; ++gr) {
        for (int gc = 0; gc < gw; ++gc) {
            const int id = gr * gw + gc;
            const double u = gc * r + off_px;
            const double v = gr * r + off_px;
            const double d0 = video.depth_at(0, gr * r + off_px, gc * r + off_px);
            for (int t = 0; t < video.T; ++t)
                state.at(t, id) = TrackPoint{u, v, d0, 1.0};
        }
    }

    RunResult result;
    std::vector<uint8_t> ever_tracked(static_cast<size_t>(gh) * gw, 0);
    std::vector<int> prev_tracked;
    const int K = cfg.schedule.iterations();

    for (int k = 1; k <= K; ++k) {
        const double iter_start = Profiler::now_ms();
        const int s = cfg.schedule.factors[k - 1];
        const uint64_t iter_seed = derive_seed(cfg.seed, static_cast<uint64_t>(k));
        SampleSet set = sample_points(gh, gw, s, cfg.sampling, iter_seed, GridAnchor::nested,
                                      &video, r, prev_tracked);
        // Strict growth: the tracked set must contain everything tracked so far.
        {
            std::vector<uint8_t> now(static_cast<size_t>(gh) * gw, 0);
            for (int id : set.tracked_ids) now[id] = 1;
            for (int id : prev_tracked)
                if (!now[id])
                    throw ValidationError("run_tracking: tracked set shrank at iteration " +
                                          std::to_string(k));
        }
        for (int id : set.tracked_ids) ever_tracked[id] = 1;

        const long long iter_tokens =
            static_cast<long long>(video.T) * static_cast<long long>(set.tracked_ids.size());
        result.total_tokens += iter_tokens;

        if (cfg.refiner == RefinerKind::transformer) {
            RowMat tokens = assemble_tokens(state, set.tracked_ids, pyr, video, cfg, weights,
                                            prof, k);
            RowMat updates;
            {
                StageTimer timer(prof, Stage::phi_forward, k, iter_tokens);
                SpatialStructure sp = detail::build_spatial(
                    set.tracked_ids, gh, gw, s, cfg.sampling == SamplingKind::uniform ? s - 1 : 0,
                    cfg.sampling == SamplingKind::uniform, cfg.phi);
                updates = phi_forward(tokens, video.T, static_cast<int>(set.tracked_ids.size()),
                                      sp, cfg.phi, weights.phi);
            }
            const int Nk = static_cast<int>(set.tracked_ids.size());
            for (int t = 1; t < video.T; ++t) {
                for (int ik = 0; ik < Nk; ++ik) {
                    const double* u = updates.data() +
                                      (static_cast<size_t>(t) * Nk + ik) * 4;
                    TrackPoint& p = state.at(t, set.tracked_ids[ik]);
                    p.u += u[0];
                    p.v += u[1];
                    p.d = std::max(p.d + u[2], kDepthFloor);
                    p.o = sigmoid(logit(p.o) + u[3]);
                }
            }
        } else {
            oracle_refiner(state, *gt, cfg.oracle_step, set.tracked_ids);
        }
        detail::check_finite_state(state, set.tracked_ids, k);

        // Interpolate every untracked grid point from the tracked set.
        if (!set.query_ids.empty()) {
            StageTimer timer(prof, Stage::interpolation, k,
                             static_cast<long long>(video.T) *
                                 static_cast<long long>(set.query_ids.size()));
            const int Nk = static_cast<int>(set.tracked_ids.size());
            std::vector<MotionSample> tracked_motion(static_cast<size_t>(Nk) * video.T);
            for (int ik = 0; ik < Nk; ++ik) {
                const int id = set.tracked_ids[ik];
                const TrackPoint& o = state.points[id];
                for (int t = 0; t < video.T; ++t) {
                    const TrackPoint& p = state.at(t, id);
                    tracked_motion[static_cast<size_t>(ik) * video.T + t] =
                        MotionSample{p.u - o.u, p.v - o.v, p.d - o.d, p.o};
                }
            }
            std::vector<MotionSample> blended;
            if (cfg.interp_kind == InterpKind::learnable) {
                FeatureGridView view{pyr.feat(0, 0, 0, 0), gh, gw, pyr.C};
                auto [motions, wout] =
                    interp_learnable(view, set, video.T, tracked_motion, weights.interp);
                blended = std::move(motions);
            } else if (cfg.interp_kind == InterpKind::nearest) {
                // per-frame nearest copy via the shared neighbor map
                std::vector<GridPos> tpos(Nk), qpos(set.query_ids.size());
                for (int ik = 0; ik < Nk; ++ik)
                    tpos[ik] = GridPos{static_cast<double>(set.tracked_ids[ik] % gw),
                                       static_cast<double>(set.tracked_ids[ik] / gw)};
                for (size_t qi = 0; qi < set.query_ids.size(); ++qi)
                    qpos[qi] = GridPos{static_cast<double>(set.query_ids[qi] % gw),
                                       static_cast<double>(set.query_ids[qi] / gw)};
                // interp_nearest indexes motions by tracked id; build per-frame
                std::vector<int> slot(static_cast<size_t>(gh) * gw, -1);
                for (int ik = 0; ik < Nk; ++ik) slot[set.tracked_ids[ik]] = ik;
                blended.resize(set.query_ids.size() * static_cast<size_t>(video.T));
                std::vector<MotionSample> frame_motion(Nk);
                for (int t = 0; t < video.T; ++t) {
                    for (int ik = 0; ik < Nk; ++ik)
                        frame_motion[ik] =
                            tracked_motion[static_cast<size_t>(ik) * video.T + t];
                    // neighbor ids are grid ids; remap to slots
                    std::vector<std::array<int, 4>> nb(set.neighbor_map.size());
                    for (size_t qi = 0; qi < nb.size(); ++qi)
                        for (int j = 0; j < 4; ++j)
                            nb[qi][j] = slot[set.neighbor_map[qi][j]];
                    std::vector<MotionSample> one =
                        interp_nearest(tpos, frame_motion, qpos, nb);
                    for (size_t qi = 0; qi < one.size(); ++qi)
                        blended[qi * video.T + t] = one[qi];
                }
            } else {  // bilinear over the uniform subgrid
                RegularSubgrid sub = RegularSubgrid::make(gh, gw, s, s - 1, s - 1);
                std::vector<GridPos> qpos(set.query_ids.size());
                for (size_t qi = 0; qi < set.query_ids.size(); ++qi)
                    qpos[qi] = GridPos{static_cast<double>(set.query_ids[qi] % gw),
                                       static_cast<double>(set.query_ids[qi] / gw)};
                blended.resize(set.query_ids.size() * static_cast<size_t>(video.T));
                std::vector<MotionSample> sub_motion(static_cast<size_t>(sub.sub_rows) *
                                                     sub.sub_cols);
                std::vector<int> slot(static_cast<size_t>(gh) * gw, -1);
                for (int ik = 0; ik < Nk; ++ik) slot[set.tracked_ids[ik]] = ik;
                for (int t = 0; t < video.T; ++t) {
                    for (int sr = 0; sr < sub.sub_rows; ++sr)
                        for (int sc = 0; sc < sub.sub_cols; ++sc)
                            sub_motion[sub.sub_id(sr, sc)] = tracked_motion
                                [static_cast<size_t>(slot[sub.grid_id(sr, sc)]) * video.T + t];
                    std::vector<MotionSample> one = interp_bilinear(sub, sub_motion, qpos);
                    for (size_t qi = 0; qi < one.size(); ++qi)
                        blended[qi * video.T + t] = one[qi];
                }
            }
            // Write interpolated states; frame 0 stays at the origin.
            for (size_t qi = 0; qi < set.query_ids.size(); ++qi) {
                const int id = set.query_ids[qi];
                const TrackPoint& o = state.points[id];
                for (int t = 1; t < video.T; ++t) {
                    const MotionSample& m = blended[qi * static_cast<size_t>(video.T) + t];
                    TrackPoint& p = state.at(t, id);
                    p.u = o.u + m.du;
                    p.v = o.v + m.dv;
                    p.d = std::max(o.d + m.dd, kDepthFloor);
                    p.o = clamp(m.o, 0.0, 1.0);
                }
            }
        }

        IterationRow row;
        row.iter = k;
        row.tokens = iter_tokens;
        row.wall_ms = Profiler::now_ms() - iter_start;
        if (gt) {
            row.epe_tracked = detail::mean_epe_vs_gt(state, set.tracked_ids, *gt);
            if (!set.query_ids.empty())
                row.epe_interp = detail::mean_epe_vs_gt(state, set.query_ids, *gt);
        }
        result.iter_rows.push_back(row);
        result.iter_states.push_back(state);
        prev_tracked = set.tracked_ids;
    }

    result.grid = state;
    result.full = upsample_full(state, video, &pyr, cfg.interp_kind, r,
                                &weights, prof, K);
    return result;
}

// ------------------------------------------------------------------
// Upsample the grid-resolution state to full resolution with the configured
// interpolator. Each pixel blends the motions of its 4 surrounding grid
// trajectories and applies them to its own origin (own frame-0 depth).
// Grid-owned pixels reproduce their grid trajectory exactly under nearest
// and bilinear. r == 1 is the identity.
// ------------------------------------------------------------------
inline TrackState upsample_full(const TrackState& grid_state, const RgbdVideo& video,
                                const FeaturePyramid* pyr, InterpKind kind, int r,
                                const EngineWeights* w, Profiler* prof, int iter) {
    const int gh = grid_state.rows, gw = grid_state.cols;
    const int T = grid_state.num_frames;
    StageTimer timer(prof, Stage::upsample, iter,
                     static_cast<long long>(T) * video.H * video.W);
    if (r == 1) return grid_state;
    if (kind == InterpKind::learnable && (!pyr || !w))
        throw ConfigError("upsample_full: learnable upsampling needs features and weights");

    TrackState full = TrackState::make(T, video.H, video.W);
    const int off = r / 2;
    std::vector<MotionSample> motion(static_cast<size_t>(gh) * gw * T);
    for (int id = 0; id < grid_state.size(); ++id) {
        const TrackPoint& o = grid_state.points[id];
        for (int t = 0; t < T; ++t) {
            const TrackPoint& p = grid_state.at(t, id);
            motion[static_cast<size_t>(id) * T + t] =
                MotionSample{p.u - o.u, p.v - o.v, p.d - o.d, p.o};
        }
    }

    std::vector<double> qf(pyr ? pyr->C : 0);
    std::vector<std::vector<double>> support(4);
    std::array<GridPos, 4> spos;
    std::array<const MotionSample*, 4> rows;
    std::vector<MotionSample> blend_rows(T);
    for (int y = 0; y < video.H; ++y) {
        for (int x = 0; x < video.W; ++x) {
            // enclosing grid cells in grid coordinates
            const double gx = (x - off) / static_cast<double>(r);
            const double gy = (y - off) / static_cast<double>(r);
            const int c0 = clamp(static_cast<int>(std::floor(gx)), 0, gw - 2);
            const int r0 = clamp(static_cast<int>(std::floor(gy)), 0, gh - 2);
            const std::array<int, 4> corner = {r0 * gw + c0, r0 * gw + c0 + 1,
                                               (r0 + 1) * gw + c0, (r0 + 1) * gw + c0 + 1};
            const TrackPoint origin{static_cast<double>(x), static_cast<double>(y),
                                    static_cast<double>(video.depth_at(0, y, x)), 1.0};
            std::array<double, 4> wgt{};
            if (kind == InterpKind::nearest) {
                int best = -1;
                double best_d2 = 0.0;
                for (int j = 0; j < 4; ++j) {
                    const double dx = (corner[j] % gw) - gx;
                    const double dy = (corner[j] / gw) - gy;
                    const double d2 = dx * dx + dy * dy;
                    if (best < 0 || d2 < best_d2 ||
                        (d2 == best_d2 && corner[j] < corner[best])) {
                        best = j;
                        best_d2 = d2;
                    }
                }
                wgt.fill(0.0);
                wgt[best] = 1.0;
            } else if (kind == InterpKind::bilinear) {
                const double fx = clamp(gx - c0, 0.0, 1.0);
                const double fy = clamp(gy - r0, 0.0, 1.0);
                wgt = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
            } else {
                for (int j = 0; j < 4; ++j) {
                    spos[j] = GridPos{static_cast<double>(corner[j] % gw),
                                      static_cast<double>(corner[j] / gw)};
                    const double* f = pyr->feat(0, 0, corner[j] / gw, corner[j] % gw);
                    support[j].assign(f, f + pyr->C);
                }
                sample_feature_into(*pyr, 0, 0, x, y, qf.data());
                wgt = interp_weights(qf, support, GridPos{gx, gy},
                                     std::span<const GridPos>(spos.data(), 4), w->interp);
            }
            for (int j = 0; j < 4; ++j) rows[j] = motion.data() +
                                                  static_cast<size_t>(corner[j]) * T;
            blend_motions(wgt, rows, T, blend_rows.data());
            const int pid = y * video.W + x;
            full.at(0, pid) = origin;
            for (int t = 1; t < T; ++t) {
                const MotionSample& m = blend_rows[t];
                full.at(t, pid) = TrackPoint{origin.u + m.du, origin.v + m.dv,
                                             std::max(origin.d + m.dd, kDepthFloor),
                                             clamp(m.o, 0.0, 1.0)};
            }
        }
    }
    return full;
}

// Double-run protocol: a warm-up run is discarded, then the measured run's
// stage rows are returned. Counters are deterministic; timings best effort.
inline std::vector<StageTiming> profile_run(const RgbdVideo& video, const EngineConfig& cfg,
                                            const EngineWeights& weights,
                                            const GroundTruth* gt = nullptr) {
    {
        Profiler warmup;
        run_tracking(video, cfg, weights, gt, &warmup);
    }
    Profiler prof;
    run_tracking(video, cfg, weights, gt, &prof);
    return prof.rows();
}

}  // namespace densetrack
