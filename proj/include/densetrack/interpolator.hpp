// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense-motion interpolation from tracked to untracked pixels: nearest,
// bilinear, and a learnable cross-attention interpolator that predicts
// 4-neighbor simplex weights, with analytic gradients for end-to-end
// training setups.
#pragma once

#include <array>
#include <span>
#include <vector>

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"

namespace densetrack {

// Per-frame motion of one trajectory: displacement from its origin plus
// visibility. Interpolators blend these channelwise.
struct MotionSample {
    double du = 0.0, dv = 0.0, dd = 0.0, o = 1.0;
};

struct GridPos {
    double x = 0.0;  // column
    double y = 0.0;  // row
};

inline double l1_dist(const GridPos& a, const GridPos& b) {
    return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

// ------------------------------------------------------------------
// Fixed interpolators.
// ------------------------------------------------------------------

// Copy the motion of the spatially nearest of the 4 mapped neighbors.
// Ties break toward the smallest tracked index.
inline std::vector<MotionSample> interp_nearest(std::span<const GridPos> tracked_pos,
                                                std::span<const MotionSample> tracked_motion,
                                                std::span<const GridPos> queries,
                                                std::span<const std::array<int, 4>> neighbor_map) {
    if (tracked_pos.size() != tracked_motion.size())
        throw ShapeError("interp_nearest: positions/motions size mismatch");
    if (queries.size() != neighbor_map.size())
        throw ShapeError("interp_nearest: queries/neighbor_map size mismatch");
    std::vector<MotionSample> out(queries.size());
    for (size_t q = 0; q < queries.size(); ++q) {
        int best = -1;
        double best_d2 = 0.0;
        for (int j = 0; j < 4; ++j) {
            const int id = neighbor_map[q][j];
            const double dx = tracked_pos[id].x - queries[q].x;
            const double dy = tracked_pos[id].y - queries[q].y;
            const double d2 = dx * dx + dy * dy;
            if (best < 0 || d2 < best_d2 || (d2 == best_d2 && id < best)) {
                best = id;
                best_d2 = d2;
            }
        }
        out[q] = tracked_motion[best];
    }
    return out;
}

// A regular subgrid of a rows x cols grid: cells (offset_r + i*stride,
// offset_c + j*stride). Used by bilinear interpolation and the engine's
// uniform sampling.
struct RegularSubgrid {
    int rows = 0, cols = 0;
    int stride = 1;
    int offset_r = 0, offset_c = 0;
    int sub_rows = 0, sub_cols = 0;

    static RegularSubgrid make(int rows, int cols, int stride, int offset_r, int offset_c) {
        RegularSubgrid g;
        g.rows = rows;
        g.cols = cols;
        g.stride = stride;
        g.offset_r = offset_r;
        g.offset_c = offset_c;
        g.sub_rows = (rows - 1 - offset_r) / stride + 1;
        g.sub_cols = (cols - 1 - offset_c) / stride + 1;
        return g;
    }

    int grid_id(int sr, int sc) const {
        return (offset_r + sr * stride) * cols + (offset_c + sc * stride);
    }
    int sub_id(int sr, int sc) const { return sr * sub_cols + sc; }
};

// Separable bilinear blend of the 4 enclosing subgrid cells, channelwise.
// Exact at subgrid nodes; queries outside the hull clamp to border cells.
inline std::vector<MotionSample> interp_bilinear(const RegularSubgrid& grid,
                                                 std::span<const MotionSample> sub_motion,
                                                 std::span<const GridPos> queries) {
    if (sub_motion.size() != static_cast<size_t>(grid.sub_rows) * grid.sub_cols)
        throw ShapeError("interp_bilinear: motion buffer does not match subgrid");
    std::vector<MotionSample> out(queries.size());
    for (size_t q = 0; q < queries.size(); ++q) {
        double fr = (queries[q].y - grid.offset_r) / grid.stride;
        double fc = (queries[q].x - grid.offset_c) / grid.stride;
        fr = clamp(fr, 0.0, static_cast<double>(grid.sub_rows - 1));
        fc = clamp(fc, 0.0, static_cast<double>(grid.sub_cols - 1));
        const int r0 = static_cast<int>(fr);
        const int c0 = static_cast<int>(fc);
        const int r1 = std::min(r0 + 1, grid.sub_rows - 1);
        const int c1 = std::min(c0 + 1, grid.sub_cols - 1);
        const double ar = fr - r0;
        const double ac = fc - c0;
        const MotionSample& m00 = sub_motion[grid.sub_id(r0, c0)];
        const MotionSample& m01 = sub_motion[grid.sub_id(r0, c1)];
        const MotionSample& m10 = sub_motion[grid.sub_id(r1, c0)];
        const MotionSample& m11 = sub_motion[grid.sub_id(r1, c1)];
        const double w00 = (1 - ar) * (1 - ac), w01 = (1 - ar) * ac;
        const double w10 = ar * (1 - ac), w11 = ar * ac;
        out[q].du = w00 * m00.du + w01 * m01.du + w10 * m10.du + w11 * m11.du;
        out[q].dv = w00 * m00.dv + w01 * m01.dv + w10 * m10.dv + w11 * m11.dv;
        out[q].dd = w00 * m00.dd + w01 * m01.dd + w10 * m10.dd + w11 * m11.dd;
        out[q].o = w00 * m00.o + w01 * m01.o + w10 * m10.o + w11 * m11.o;
    }
    return out;
}

// ------------------------------------------------------------------
// Learnable interpolator parameters. L cross-attention blocks refine the
// query feature over its 4 supports; final linear projections score each
// support and a softmax yields the blend weights. Attention logits carry a
// distance penalty: slope_h times the L1 distance between query and support.
// All projections are bias-free; slopes are shared across blocks.
// ------------------------------------------------------------------
struct AttnBlockParams {
    std::vector<double> wq, wk, wv;  // (heads*d_head) x C, row-major
    std::vector<double> wo;          // C x (heads*d_head), row-major
    std::vector<double> ln_gain, ln_offset;  // C
};

struct AttnInterpParams {
    int C_F = 32;
    int L = 1;
    int heads = 4;
    int d_head = 8;
    int d_score = 16;
    std::vector<AttnBlockParams> blocks;
    std::vector<double> q_proj, k_proj;  // d_score x C, row-major
    std::vector<double> slopes;          // heads

    static AttnInterpParams seeded(int C_F, int L, int heads, int d_head, int d_score,
                                   uint64_t seed) {
        AttnInterpParams p;
        p.C_F = C_F;
        p.L = L;
        p.heads = heads;
        p.d_head = d_head;
        p.d_score = d_score;
        Rng rng(derive_seed(seed, 3));
        const double a = 1.0 / std::sqrt(static_cast<double>(C_F));
        p.blocks.resize(L);
        for (auto& blk : p.blocks) {
            blk.wq.resize(static_cast<size_t>(heads) * d_head * C_F);
            blk.wk.resize(blk.wq.size());
            blk.wv.resize(blk.wq.size());
            blk.wo.resize(static_cast<size_t>(C_F) * heads * d_head);
            for (auto* w : {&blk.wq, &blk.wk, &blk.wv, &blk.wo})
                for (double& x : *w) x = rng.uniform(-a, a);
            blk.ln_gain.assign(C_F, 1.0);
            blk.ln_offset.assign(C_F, 0.0);
        }
        p.q_proj.resize(static_cast<size_t>(d_score) * C_F);
        p.k_proj.resize(p.q_proj.size());
        for (auto* w : {&p.q_proj, &p.k_proj})
            for (double& x : *w) x = rng.uniform(-a, a);
        p.slopes.resize(heads);
        for (int h = 0; h < heads; ++h) p.slopes[h] = std::pow(2.0, -h);
        return p;
    }

    void validate() const {
        if (C_F < 1 || L < 0 || heads < 1 || d_head < 1 || d_score < 1)
            throw ConfigError("AttnInterpParams: bad dimensions");
        if (static_cast<int>(blocks.size()) != L)
            throw ConfigError("AttnInterpParams: block count != L");
        for (double s : slopes)
            if (!(s > 0.0)) throw ConfigError("AttnInterpParams: slopes must be positive");
        if (static_cast<int>(slopes.size()) != heads)
            throw ConfigError("AttnInterpParams: slope count != heads");
    }
};

// Per-query blend weights (simplex: nonnegative, sum 1).
struct InterpWeightsOut {
    std::vector<std::array<double, 4>> weights;
};

inline constexpr double kLayerNormEpsInterp = 1e-5;

namespace detail {

inline void matvec_raw(const double* w, int rows, int cols, const double* x, double* out) {
    for (int i = 0; i < rows; ++i) {
        const double* row = w + static_cast<size_t>(i) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
}

inline void matvec(const std::vector<double>& w, int rows, int cols, const double* x,
                   double* out) {
    matvec_raw(w.data(), rows, cols, x, out);
}

// out[j] += a[i] * b[j] accumulated as the outer product a b^T into a
// rows x cols row-major buffer.
inline void outer_acc(std::vector<double>& w, int rows, int cols, const double* a,
                      const double* b) {
    for (int i = 0; i < rows; ++i) {
        double* row = w.data() + static_cast<size_t>(i) * cols;
        const double ai = a[i];
        for (int j = 0; j < cols; ++j) row[j] += ai * b[j];
    }
}

inline void matvec_T_acc(const std::vector<double>& w, int rows, int cols, const double* x,
                         double* out) {
    // out (cols) += W^T x, with W rows x cols row-major.
    for (int i = 0; i < rows; ++i) {
        const double* row = w.data() + static_cast<size_t>(i) * cols;
        const double xi = x[i];
        for (int j = 0; j < cols; ++j) out[j] += xi * row[j];
    }
}

}  // namespace detail

// Everything the backward pass needs from one query's forward pass.
struct AttnForwardCache {
    struct Block {
        std::vector<double> x_in;                      // C
        std::vector<std::array<double, 4>> alpha;      // per head
        std::vector<std::vector<double>> q;            // per head, d
        std::vector<std::array<std::vector<double>, 4>> k, v;  // per head per support, d
        std::vector<double> concat;                    // heads*d
        std::vector<double> yhat;                      // C, normalized pre-affine
        double inv_std = 0.0;
    };
    std::vector<Block> blocks;
    std::vector<double> refined;            // C
    std::vector<double> qs;                 // d_score
    std::array<std::vector<double>, 4> ks;  // d_score each
    std::array<double, 4> weights{};
};

// L residual cross-attention blocks over the 4 supports; returns the refined
// query feature. A cache pointer, when given, records intermediates for the
// analytic backward pass.
inline std::vector<double> attn_refine(std::span<const double> query_feat,
                                       std::span<const std::vector<double>> support_feats,
                                       const GridPos& query_pos,
                                       std::span<const GridPos> support_pos,
                                       const AttnInterpParams& p,
                                       AttnForwardCache* cache = nullptr) {
    p.validate();
    if (support_feats.size() != 4 || support_pos.size() != 4)
        throw ShapeError("attn_refine: exactly 4 supports required");
    const int C = p.C_F;
    const int d = p.d_head;
    std::vector<double> x(query_feat.begin(), query_feat.end());
    if (cache) cache->blocks.resize(p.L);

    std::array<double, 4> dist;
    for (int j = 0; j < 4; ++j) dist[j] = l1_dist(query_pos, support_pos[j]);

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> q(d), attn(C), concat(static_cast<size_t>(p.heads) * d);

    for (int b = 0; b < p.L; ++b) {
        const AttnBlockParams& blk = p.blocks[b];
        AttnForwardCache::Block* cb = cache ? &cache->blocks[b] : nullptr;
        if (cb) {
            cb->x_in = x;
            cb->alpha.resize(p.heads);
            cb->q.resize(p.heads);
            cb->k.resize(p.heads);
            cb->v.resize(p.heads);
        }
        std::fill(concat.begin(), concat.end(), 0.0);
        for (int h = 0; h < p.heads; ++h) {
            const size_t off = static_cast<size_t>(h) * d * C;
            detail::matvec_raw(blk.wq.data() + off, d, C, x.data(), q.data());
            std::array<std::vector<double>, 4> k, v;
            std::array<double, 4> logits;
            for (int j = 0; j < 4; ++j) {
                k[j].resize(d);
                v[j].resize(d);
                detail::matvec_raw(blk.wk.data() + off, d, C, support_feats[j].data(),
                                   k[j].data());
                detail::matvec_raw(blk.wv.data() + off, d, C, support_feats[j].data(),
                                   v[j].data());
                double dot = 0.0;
                for (int e = 0; e < d; ++e) dot += q[e] * k[j][e];
                logits[j] = dot * scale - p.slopes[h] * dist[j];
            }
            softmax_inplace(logits);
            double* head_out = concat.data() + static_cast<size_t>(h) * d;
            for (int j = 0; j < 4; ++j)
                for (int e = 0; e < d; ++e) head_out[e] += logits[j] * v[j][e];
            if (cb) {
                cb->alpha[h] = logits;
                cb->q[h] = q;
                cb->k[h] = k;
                cb->v[h] = v;
            }
        }
        detail::matvec(blk.wo, C, p.heads * d, concat.data(), attn.data());
        // Residual add, then layer normalization with gain/offset.
        double mean = 0.0;
        for (int c = 0; c < C; ++c) {
            attn[c] += x[c];
            mean += attn[c];
        }
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) var += (attn[c] - mean) * (attn[c] - mean);
        var /= C;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEpsInterp);
        if (cb) {
            cb->concat = concat;
            cb->inv_std = inv;
            cb->yhat.resize(C);
        }
        for (int c = 0; c < C; ++c) {
            const double yh = (attn[c] - mean) * inv;
            if (cb) cb->yhat[c] = yh;
            x[c] = blk.ln_gain[c] * yh + blk.ln_offset[c];
        }
    }
    if (cache) cache->refined = x;
    return x;
}

// Simplex weights for one query: refine, score each support with the final
// q/k projections, softmax over the 4 scores.
inline std::array<double, 4> interp_weights(std::span<const double> query_feat,
                                            std::span<const std::vector<double>> support_feats,
                                            const GridPos& query_pos,
                                            std::span<const GridPos> support_pos,
                                            const AttnInterpParams& p,
                                            AttnForwardCache* cache = nullptr) {
    std::vector<double> refined = attn_refine(query_feat, support_feats, query_pos, support_pos,
                                              p, cache);
    std::vector<double> qs(p.d_score);
    detail::matvec(p.q_proj, p.d_score, p.C_F, refined.data(), qs.data());
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.d_score));
    std::array<double, 4> scores;
    std::array<std::vector<double>, 4> ks;
    for (int j = 0; j < 4; ++j) {
        ks[j].resize(p.d_score);
        detail::matvec(p.k_proj, p.d_score, p.C_F, support_feats[j].data(), ks[j].data());
        double dot = 0.0;
        for (int e = 0; e < p.d_score; ++e) dot += qs[e] * ks[j][e];
        scores[j] = dot * scale;
    }
    softmax_inplace(scores);
    if (cache) {
        cache->qs = qs;
        cache->ks = ks;
        cache->weights = scores;
    }
    return scores;
}

// Blend per-frame support motions with fixed per-query weights: a convex
// combination per channel, visibility included.
inline void blend_motions(const std::array<double, 4>& w,
                          const std::array<const MotionSample*, 4>& support_motion_rows,
                          int num_frames, MotionSample* out_rows) {
    for (int t = 0; t < num_frames; ++t) {
        MotionSample m;
        m.du = m.dv = m.dd = m.o = 0.0;
        for (int j = 0; j < 4; ++j) {
            const MotionSample& s = support_motion_rows[j][t];
            m.du += w[j] * s.du;
            m.dv += w[j] * s.dv;
            m.dd += w[j] * s.dd;
            m.o += w[j] * s.o;
        }
        out_rows[t] = m;
    }
}

// Immutable view of a feature map laid out h x w x c.
struct FeatureGridView {
    const double* data = nullptr;
    int h = 0, w = 0, c = 0;
    const double* at(int row, int col) const {
        return data + (static_cast<size_t>(row) * w + col) * c;
    }
};

// Learnable interpolation over a whole sample set. Tracked motions are
// point-major: motions[i * num_frames + t] belongs to tracked point i.
// Weights are predicted once per query from the query-frame feature map and
// reused for every frame's blend.
inline std::pair<std::vector<MotionSample>, InterpWeightsOut> interp_learnable(
    const FeatureGridView& fmap, const SampleSet& set, int num_frames,
    std::span<const MotionSample> tracked_motion, const AttnInterpParams& p) {
    p.validate();
    if (fmap.c != p.C_F) throw ShapeError("interp_learnable: feature channels != C_F");
    if (tracked_motion.size() != set.tracked_ids.size() * static_cast<size_t>(num_frames))
        throw ShapeError("interp_learnable: tracked motion buffer size mismatch");
    // Map grid ids to their position in the tracked list.
    std::vector<int> tracked_slot(static_cast<size_t>(fmap.h) * fmap.w, -1);
    for (size_t s = 0; s < set.tracked_ids.size(); ++s) tracked_slot[set.tracked_ids[s]] = s;

    std::vector<MotionSample> out(set.query_ids.size() * static_cast<size_t>(num_frames));
    InterpWeightsOut wout;
    wout.weights.resize(set.query_ids.size());

    std::vector<std::vector<double>> support(4);
    std::array<GridPos, 4> spos;
    for (size_t q = 0; q < set.query_ids.size(); ++q) {
        const int qid = set.query_ids[q];
        const GridPos qpos{static_cast<double>(qid % fmap.w), static_cast<double>(qid / fmap.w)};
        std::array<const MotionSample*, 4> rows;
        for (int j = 0; j < 4; ++j) {
            const int nid = set.neighbor_map[q][j];
            spos[j] = GridPos{static_cast<double>(nid % fmap.w),
                              static_cast<double>(nid / fmap.w)};
            const double* f = fmap.at(nid / fmap.w, nid % fmap.w);
            support[j].assign(f, f + fmap.c);
            rows[j] = tracked_motion.data() +
                      static_cast<size_t>(tracked_slot[nid]) * num_frames;
        }
        const double* qf = fmap.at(qid / fmap.w, qid % fmap.w);
        const auto w = interp_weights(std::span<const double>(qf, fmap.c), support, qpos,
                                      std::span<const GridPos>(spos.data(), 4), p);
        wout.weights[q] = w;
        blend_motions(w, rows, num_frames, out.data() + q * static_cast<size_t>(num_frames));
    }
    return {std::move(out), std::move(wout)};
}

// ------------------------------------------------------------------
// Analytic gradients.
// ------------------------------------------------------------------
struct AttnInterpGrads {
    std::vector<AttnBlockParams> blocks;  // same shapes as the params
    std::vector<double> q_proj, k_proj;
    std::vector<double> slopes;

    static AttnInterpGrads zeros_like(const AttnInterpParams& p) {
        AttnInterpGrads g;
        g.blocks.resize(p.L);
        for (auto& blk : g.blocks) {
            blk.wq.assign(static_cast<size_t>(p.heads) * p.d_head * p.C_F, 0.0);
            blk.wk.assign(blk.wq.size(), 0.0);
            blk.wv.assign(blk.wq.size(), 0.0);
            blk.wo.assign(static_cast<size_t>(p.C_F) * p.heads * p.d_head, 0.0);
            blk.ln_gain.assign(p.C_F, 0.0);
            blk.ln_offset.assign(p.C_F, 0.0);
        }
        g.q_proj.assign(static_cast<size_t>(p.d_score) * p.C_F, 0.0);
        g.k_proj.assign(g.q_proj.size(), 0.0);
        g.slopes.assign(p.heads, 0.0);
        return g;
    }
};

// Backward pass for one query given d(loss)/d(weights). Accumulates into
// grads; support-feature gradients are not needed by any caller and are
// dropped. The query feature itself is recovered from the cache.
inline void interp_weights_backward(std::span<const std::vector<double>> support_feats,
                                    const GridPos& query_pos,
                                    std::span<const GridPos> support_pos,
                                    const AttnInterpParams& p, const AttnForwardCache& cache,
                                    const std::array<double, 4>& dweights,
                                    AttnInterpGrads& grads) {
    const int C = p.C_F;
    const int d = p.d_head;
    const int ds = p.d_score;
    const double score_scale = 1.0 / std::sqrt(static_cast<double>(ds));
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));

    // Softmax over final scores.
    std::array<double, 4> dscore;
    double dot = 0.0;
    for (int j = 0; j < 4; ++j) dot += cache.weights[j] * dweights[j];
    for (int j = 0; j < 4; ++j) dscore[j] = cache.weights[j] * (dweights[j] - dot);

    std::vector<double> dqs(ds, 0.0);
    for (int j = 0; j < 4; ++j) {
        const double g = dscore[j] * score_scale;
        for (int e = 0; e < ds; ++e) dqs[e] += g * cache.ks[j][e];
        // k_proj gradient: (g * qs) outer S_j
        for (int e = 0; e < ds; ++e) {
            double* row = grads.k_proj.data() + static_cast<size_t>(e) * C;
            const double ge = g * cache.qs[e];
            for (int c = 0; c < C; ++c) row[c] += ge * support_feats[j][c];
        }
    }
    detail::outer_acc(grads.q_proj, ds, C, dqs.data(), cache.refined.data());
    std::vector<double> dx(C, 0.0);
    detail::matvec_T_acc(p.q_proj, ds, C, dqs.data(), dx.data());

    std::array<double, 4> dist;
    for (int j = 0; j < 4; ++j) dist[j] = l1_dist(query_pos, support_pos[j]);

    // Blocks in reverse.
    for (int b = p.L - 1; b >= 0; --b) {
        const AttnBlockParams& blk = p.blocks[b];
        const AttnForwardCache::Block& cb = cache.blocks[b];
        AttnBlockParams& gblk = grads.blocks[b];

        // LayerNorm affine.
        std::vector<double> dyhat(C);
        for (int c = 0; c < C; ++c) {
            gblk.ln_gain[c] += dx[c] * cb.yhat[c];
            gblk.ln_offset[c] += dx[c];
            dyhat[c] = dx[c] * blk.ln_gain[c];
        }
        // LayerNorm stats.
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < C; ++c) {
            m1 += dyhat[c];
            m2 += dyhat[c] * cb.yhat[c];
        }
        m1 /= C;
        m2 /= C;
        std::vector<double> dy(C);
        for (int c = 0; c < C; ++c) dy[c] = cb.inv_std * (dyhat[c] - m1 - cb.yhat[c] * m2);

        // y = x_in + Wo u: residual plus attention output.
        std::vector<double> dx_in = dy;
        std::vector<double> du(static_cast<size_t>(p.heads) * d, 0.0);
        detail::outer_acc(gblk.wo, C, p.heads * d, dy.data(), cb.concat.data());
        detail::matvec_T_acc(blk.wo, C, p.heads * d, dy.data(), du.data());

        for (int h = 0; h < p.heads; ++h) {
            const double* dhead = du.data() + static_cast<size_t>(h) * d;
            const size_t off = static_cast<size_t>(h) * d * C;
            std::array<double, 4> dalpha;
            for (int j = 0; j < 4; ++j) {
                double acc = 0.0;
                for (int e = 0; e < d; ++e) acc += dhead[e] * cb.v[h][j][e];
                dalpha[j] = acc;
            }
            // head = sum_j alpha_j v_j
            for (int j = 0; j < 4; ++j) {
                const double aj = cb.alpha[h][j];
                for (int e = 0; e < d; ++e) {
                    const double dvje = aj * dhead[e];
                    double* row = gblk.wv.data() + off + static_cast<size_t>(e) * C;
                    for (int c = 0; c < C; ++c) row[c] += dvje * support_feats[j][c];
                }
            }
            // Softmax over attention logits.
            double adot = 0.0;
            for (int j = 0; j < 4; ++j) adot += cb.alpha[h][j] * dalpha[j];
            std::array<double, 4> dlogit;
            for (int j = 0; j < 4; ++j) dlogit[j] = cb.alpha[h][j] * (dalpha[j] - adot);
            for (int j = 0; j < 4; ++j) grads.slopes[h] -= dlogit[j] * dist[j];

            std::vector<double> dq(d, 0.0);
            for (int j = 0; j < 4; ++j) {
                const double g = dlogit[j] * attn_scale;
                for (int e = 0; e < d; ++e) {
                    dq[e] += g * cb.k[h][j][e];
                    // dk_j[e] = g * q[e]
                    double* row = gblk.wk.data() + off + static_cast<size_t>(e) * C;
                    const double dk = g * cb.q[h][e];
                    for (int c = 0; c < C; ++c) row[c] += dk * support_feats[j][c];
                }
            }
            for (int e = 0; e < d; ++e) {
                double* row = gblk.wq.data() + off + static_cast<size_t>(e) * C;
                for (int c = 0; c < C; ++c) row[c] += dq[e] * cb.x_in[c];
            }
            // dx through Wq.
            for (int e = 0; e < d; ++e) {
                const double* row = blk.wq.data() + off + static_cast<size_t>(e) * C;
                for (int c = 0; c < C; ++c) dx_in[c] += dq[e] * row[c];
            }
        }
        dx = std::move(dx_in);
    }
}

// Gradients of <upstream, output> for the whole interp_learnable op:
// parameter gradients plus gradients on the tracked (support) motions.
inline std::pair<AttnInterpGrads, std::vector<MotionSample>> interp_learnable_grad(
    const FeatureGridView& fmap, const SampleSet& set, int num_frames,
    std::span<const MotionSample> tracked_motion, const AttnInterpParams& p,
    std::span<const MotionSample> upstream) {
    p.validate();
    if (upstream.size() != set.query_ids.size() * static_cast<size_t>(num_frames))
        throw ShapeError("interp_learnable_grad: upstream size mismatch");
    std::vector<int> tracked_slot(static_cast<size_t>(fmap.h) * fmap.w, -1);
    for (size_t s = 0; s < set.tracked_ids.size(); ++s) tracked_slot[set.tracked_ids[s]] = s;

    AttnInterpGrads grads = AttnInterpGrads::zeros_like(p);
    std::vector<MotionSample> dmotion(tracked_motion.size());
    for (auto& m : dmotion) m = MotionSample{0, 0, 0, 0};

    std::vector<std::vector<double>> support(4);
    std::array<GridPos, 4> spos;
    for (size_t q = 0; q < set.query_ids.size(); ++q) {
        const int qid = set.query_ids[q];
        const GridPos qpos{static_cast<double>(qid % fmap.w), static_cast<double>(qid / fmap.w)};
        std::array<int, 4> slot;
        for (int j = 0; j < 4; ++j) {
            const int nid = set.neighbor_map[q][j];
            spos[j] = GridPos{static_cast<double>(nid % fmap.w),
                              static_cast<double>(nid / fmap.w)};
            const double* f = fmap.at(nid / fmap.w, nid % fmap.w);
            support[j].assign(f, f + fmap.c);
            slot[j] = tracked_slot[nid];
        }
        const double* qf = fmap.at(qid / fmap.w, qid % fmap.w);
        AttnForwardCache cache;
        const auto w = interp_weights(std::span<const double>(qf, fmap.c), support, qpos,
                                      std::span<const GridPos>(spos.data(), 4), p, &cache);

        // d loss / d w_j = sum_t <upstream_qt, motion_jt>; and the blend is
        // linear in motions with weight w_j.
        std::array<double, 4> dweights{};
        const MotionSample* up = upstream.data() + q * static_cast<size_t>(num_frames);
        for (int j = 0; j < 4; ++j) {
            const MotionSample* mj =
                tracked_motion.data() + static_cast<size_t>(slot[j]) * num_frames;
            MotionSample* dm = dmotion.data() + static_cast<size_t>(slot[j]) * num_frames;
            double acc = 0.0;
            for (int t = 0; t < num_frames; ++t) {
                acc += up[t].du * mj[t].du + up[t].dv * mj[t].dv + up[t].dd * mj[t].dd +
                       up[t].o * mj[t].o;
                dm[t].du += w[j] * up[t].du;
                dm[t].dv += w[j] * up[t].dv;
                dm[t].dd += w[j] * up[t].dd;
                dm[t].o += w[j] * up[t].o;
            }
            dweights[j] = acc;
        }
        interp_weights_backward(support, qpos, std::span<const GridPos>(spos.data(), 4), p,
                                cache, dweights, grads);
    }
    return {std::move(grads), std::move(dmotion)};
}

}  // namespace densetrack
