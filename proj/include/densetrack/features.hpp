// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic multi-scale feature pyramids: a seeded strided patch
// embedding followed by smoothed average-pool levels. Every position is
// L2-normalized so correlation values live in [-1, 1].
#pragma once

#include <span>
#include <vector>

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"

namespace densetrack {

struct ExtractorWeights {
    int C = 32;        // feature channels
    int r = 4;         // base stride: level 0 is (H/r) x (W/r)
    int n_levels = 3;
    uint64_t seed = 0;
    std::vector<double> patch_proj;             // C x (3*r*r), row-major
    std::vector<std::array<double, 9>> smooth;  // one 3x3 kernel per level >= 1

    static ExtractorWeights seeded(int C, int r, int n_levels, uint64_t seed) {
        if (C < 1 || r < 1 || n_levels < 1)
            throw ConfigError("ExtractorWeights: C, r, n_levels must be positive");
        ExtractorWeights w;
        w.C = C;
        w.r = r;
        w.n_levels = n_levels;
        w.seed = seed;
        Rng rng(derive_seed(seed, 0));
        const int patch_dim = 3 * r * r;
        const double a = 1.0 / std::sqrt(static_cast<double>(patch_dim));
        w.patch_proj.resize(static_cast<size_t>(C) * patch_dim);
        for (double& x : w.patch_proj) x = rng.uniform(-a, a);
        w.smooth.resize(n_levels > 1 ? n_levels - 1 : 0);
        for (auto& k : w.smooth) {
            double sum = 0.0;
            for (double& x : k) {
                x = rng.uniform(0.2, 1.0);
                sum += x;
            }
            for (double& x : k) x /= sum;  // unit-sum smoothing kernel
        }
        return w;
    }

    void validate() const {
        if (patch_proj.size() != static_cast<size_t>(C) * 3 * r * r)
            throw ConfigError("ExtractorWeights: patch projection shape mismatch");
        if (static_cast<int>(smooth.size()) != (n_levels > 1 ? n_levels - 1 : 0))
            throw ConfigError("ExtractorWeights: smoothing kernel count mismatch");
        if (!all_finite(patch_proj)) throw ConfigError("ExtractorWeights: non-finite entries");
    }
};

// Per-frame multi-scale feature maps. Level l is T x (H/(r*2^l)) x (W/(r*2^l)) x C.
struct FeaturePyramid {
    int T = 0, C = 0, r = 4, n_levels = 0;
    int base_h = 0, base_w = 0;  // level-0 grid
    std::vector<std::vector<double>> levels;

    int level_h(int l) const { return base_h >> l; }
    int level_w(int l) const { return base_w >> l; }
    int level_stride(int l) const { return r << l; }

    const double* feat(int l, int t, int y, int x) const {
        const int h = level_h(l), w = level_w(l);
        return levels[l].data() +
               ((static_cast<size_t>(t) * h + y) * w + x) * C;
    }
    double* feat(int l, int t, int y, int x) {
        const int h = level_h(l), w = level_w(l);
        return levels[l].data() +
               ((static_cast<size_t>(t) * h + y) * w + x) * C;
    }
};

namespace detail {

inline void l2_normalize(double* v, int c) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += v[k] * v[k];
    if (s < 1e-24) {
        // Degenerate all-zero activation (e.g. black input); pin to a fixed
        // unit vector so the unit-norm invariant holds everywhere.
        v[0] = 1.0;
        for (int k = 1; k < c; ++k) v[k] = 0.0;
        return;
    }
    const double inv = 1.0 / std::sqrt(s);
    for (int k = 0; k < c; ++k) v[k] *= inv;
}

}  // namespace detail

inline FeaturePyramid extract_features(const RgbdVideo& video, const ExtractorWeights& weights,
                                       int n_levels) {
    weights.validate();
    if (n_levels < 1 || n_levels > weights.n_levels)
        throw ConfigError("extract_features: n_levels out of range");
    const int r = weights.r;
    const int C = weights.C;
    const int div = r << (n_levels - 1);
    if (video.H % div != 0)
        throw ShapeError("extract_features: H=" + std::to_string(video.H) +
                         " not divisible by r*2^(n_levels-1)=" + std::to_string(div));
    if (video.W % div != 0)
        throw ShapeError("extract_features: W=" + std::to_string(video.W) +
                         " not divisible by r*2^(n_levels-1)=" + std::to_string(div));

    FeaturePyramid pyr;
    pyr.T = video.T;
    pyr.C = C;
    pyr.r = r;
    pyr.n_levels = n_levels;
    pyr.base_h = video.H / r;
    pyr.base_w = video.W / r;
    pyr.levels.resize(n_levels);

    // Level 0: non-overlapping r x r patch embedding + ReLU + L2 norm.
    const int patch_dim = 3 * r * r;
    pyr.levels[0].assign(static_cast<size_t>(video.T) * pyr.base_h * pyr.base_w * C, 0.0);
    std::vector<double> patch(patch_dim);
    for (int t = 0; t < video.T; ++t) {
        for (int gy = 0; gy < pyr.base_h; ++gy) {
            for (int gx = 0; gx < pyr.base_w; ++gx) {
                int k = 0;
                for (int py = 0; py < r; ++py)
                    for (int px = 0; px < r; ++px)
                        for (int c = 0; c < 3; ++c)
                            patch[k++] = video.rgb_at(t, gy * r + py, gx * r + px, c);
                double* out = pyr.feat(0, t, gy, gx);
                for (int c = 0; c < C; ++c) {
                    const double* wrow = weights.patch_proj.data() +
                                         static_cast<size_t>(c) * patch_dim;
                    double acc = 0.0;
                    for (int j = 0; j < patch_dim; ++j) acc += wrow[j] * patch[j];
                    out[c] = acc > 0.0 ? acc : 0.0;
                }
                detail::l2_normalize(out, C);
            }
        }
    }

    // Level l+1: 2x average pool, 3x3 smoothing with replicate padding,
    // then renormalize.
    for (int l = 1; l < n_levels; ++l) {
        const int h = pyr.level_h(l), w = pyr.level_w(l);
        const int ph = pyr.level_h(l - 1), pw = pyr.level_w(l - 1);
        pyr.levels[l].assign(static_cast<size_t>(video.T) * h * w * C, 0.0);
        std::vector<double> pooled(static_cast<size_t>(h) * w * C);
        const auto& kern = weights.smooth[l - 1];
        for (int t = 0; t < video.T; ++t) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double* dst = pooled.data() + (static_cast<size_t>(y) * w + x) * C;
                    const double* s00 = pyr.feat(l - 1, t, 2 * y, 2 * x);
                    const double* s01 = pyr.feat(l - 1, t, 2 * y, std::min(2 * x + 1, pw - 1));
                    const double* s10 = pyr.feat(l - 1, t, std::min(2 * y + 1, ph - 1), 2 * x);
                    const double* s11 = pyr.feat(l - 1, t, std::min(2 * y + 1, ph - 1),
                                                 std::min(2 * x + 1, pw - 1));
                    for (int c = 0; c < C; ++c)
                        dst[c] = 0.25 * (s00[c] + s01[c] + s10[c] + s11[c]);
                }
            }
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double* out = pyr.feat(l, t, y, x);
                    for (int c = 0; c < C; ++c) out[c] = 0.0;
                    for (int ky = -1; ky <= 1; ++ky) {
                        for (int kx = -1; kx <= 1; ++kx) {
                            const int sy = clamp(y + ky, 0, h - 1);
                            const int sx = clamp(x + kx, 0, w - 1);
                            const double kw = kern[(ky + 1) * 3 + (kx + 1)];
                            const double* src =
                                pooled.data() + (static_cast<size_t>(sy) * w + sx) * C;
                            for (int c = 0; c < C; ++c) out[c] += kw * src[c];
                        }
                    }
                    detail::l2_normalize(out, C);
                }
            }
        }
    }
    return pyr;
}

// Bilinear feature lookup at a full-resolution position. Positions outside
// the map clamp to the border. The blend of unit vectors is returned as-is
// (norm <= 1); consumers renormalize if they need unit vectors.
inline void sample_feature_into(const FeaturePyramid& pyr, int t, int level, double u, double v,
                                double* out) {
    if (level < 0 || level >= pyr.n_levels)
        throw ShapeError("sample_feature: level out of range");
    if (t < 0 || t >= pyr.T) throw ShapeError("sample_feature: frame out of range");
    const int h = pyr.level_h(level), w = pyr.level_w(level);
    const double stride = static_cast<double>(pyr.level_stride(level));
    double x = clamp(u / stride, 0.0, static_cast<double>(w - 1));
    double y = clamp(v / stride, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double* f00 = pyr.feat(level, t, y0, x0);
    const double* f01 = pyr.feat(level, t, y0, x1);
    const double* f10 = pyr.feat(level, t, y1, x0);
    const double* f11 = pyr.feat(level, t, y1, x1);
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
    const double w10 = (1 - fx) * fy, w11 = fx * fy;
    for (int c = 0; c < pyr.C; ++c)
        out[c] = w00 * f00[c] + w01 * f01[c] + w10 * f10[c] + w11 * f11[c];
}

inline std::vector<double> sample_feature(const FeaturePyramid& pyr, int t, int level, double u,
                                          double v) {
    std::vector<double> out(pyr.C);
    sample_feature_into(pyr, t, level, u, v, out.data());
    return out;
}

}  // namespace densetrack
