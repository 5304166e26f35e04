// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Correlation features feeding the refinement tokens: multi-scale windowed
// point correlation, 4D patch-pair correlation with a channel projection
// (the fast path), the dual-convolution baseline it replaces, and
// log-ratio depth correlation.
#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"
#include "densetrack/features.hpp"

namespace densetrack {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct CorrConfig {
    int radius = 3;               // window half-width, cells
    int neighborhood = 7;         // 4D correlation patch side (odd)
    int projected_channels = 32;  // output channels of the projection
    std::vector<int> scales = {0, 1, 2};

    int window() const { return 2 * radius + 1; }
    int window_area() const { return window() * window(); }
    int patch_cells() const { return neighborhood * neighborhood; }

    void validate() const {
        if (radius < 0) throw ConfigError("CorrConfig: radius must be >= 0");
        if (neighborhood < 1 || neighborhood % 2 == 0)
            throw ConfigError("CorrConfig: neighborhood must be odd and positive");
        if (projected_channels < 8 || projected_channels % 8 != 0)
            throw ConfigError("CorrConfig: projected_channels must be a positive multiple of 8");
        if (scales.empty()) throw ConfigError("CorrConfig: need at least one scale");
    }
};

// n^2 x n^2 similarities between the query-frame patch and the patch around
// the current estimate. Row index = query-patch cell, column = target cell,
// both row-major over the n x n offset grid.
struct Corr4D {
    int n = 0;
    std::vector<double> m;  // (n*n) x (n*n), row-major

    double at(int a, int b) const { return m[static_cast<size_t>(a) * n * n + b]; }
};

// ------------------------------------------------------------------
// Multi-scale windowed correlation: for each configured pyramid level l and
// integer offset (dy, dx) in the (2*radius+1)^2 window, the dot product of
// the query feature with the feature sampled at pos + (r*2^l)*(dx, dy).
// Output is scale-major, then row-major in the offset.
// ------------------------------------------------------------------
inline std::vector<double> multiscale_corr(const FeaturePyramid& pyr, int t,
                                           std::span<const double> query_feat, double u, double v,
                                           const CorrConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(query_feat.size()) != pyr.C)
        throw ShapeError("multiscale_corr: query feature channel mismatch");
    std::vector<double> out(cfg.scales.size() * cfg.window_area());
    std::vector<double> f(pyr.C);
    size_t k = 0;
    for (int level : cfg.scales) {
        const double step = static_cast<double>(pyr.level_stride(level));
        for (int dy = -cfg.radius; dy <= cfg.radius; ++dy) {
            for (int dx = -cfg.radius; dx <= cfg.radius; ++dx) {
                sample_feature_into(pyr, t, level, u + step * dx, v + step * dy, f.data());
                double acc = 0.0;
                for (int c = 0; c < pyr.C; ++c) acc += query_feat[c] * f[c];
                out[k++] = acc;
            }
        }
    }
    return out;
}

// ------------------------------------------------------------------
// 4D correlation. Patch offsets are in level-0 grid cells, so a unit offset
// moves r full-resolution pixels. The query patch is sampled in frame 0
// around query_pos, the target patch in frame t around cur_pos.
// ------------------------------------------------------------------
inline void gather_patch(const FeaturePyramid& pyr, int t, double u, double v, int n,
                         RowMat& out) {
    const int half = n / 2;
    const double step = static_cast<double>(pyr.level_stride(0));
    out.resize(n * n, pyr.C);
    int row = 0;
    for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx)
            sample_feature_into(pyr, t, 0, u + step * dx, v + step * dy, out.row(row++).data());
}

inline Corr4D corr4d(const FeaturePyramid& pyr, int t, double query_u, double query_v,
                     double cur_u, double cur_v, const CorrConfig& cfg) {
    cfg.validate();
    const int n = cfg.neighborhood;
    RowMat q, tgt;
    gather_patch(pyr, 0, query_u, query_v, n, q);
    gather_patch(pyr, t, cur_u, cur_v, n, tgt);
    Corr4D c;
    c.n = n;
    c.m.resize(static_cast<size_t>(n) * n * n * n);
    Eigen::Map<RowMat>(c.m.data(), n * n, n * n).noalias() = q * tgt.transpose();
    return c;
}

// ------------------------------------------------------------------
// Channel projection of the 4D correlation (the fast path). Each query-patch
// cell's n^2 target similarities are projected to projected_channels, then
// per-row mean/variance normalized with gain/offset, then clamped at zero.
// ------------------------------------------------------------------
struct ProjWeights {
    int in_dim = 49;
    int out_dim = 32;
    std::vector<double> w;  // out_dim x in_dim, row-major
    std::vector<double> b;  // out_dim
    std::vector<double> gain;
    std::vector<double> offset;

    static ProjWeights seeded(int in_dim, int out_dim, uint64_t seed) {
        ProjWeights p;
        p.in_dim = in_dim;
        p.out_dim = out_dim;
        Rng rng(derive_seed(seed, 1));
        const double a = 1.0 / std::sqrt(static_cast<double>(in_dim));
        p.w.resize(static_cast<size_t>(out_dim) * in_dim);
        for (double& x : p.w) x = rng.uniform(-a, a);
        p.b.assign(out_dim, 0.0);
        p.gain.assign(out_dim, 1.0);
        p.offset.assign(out_dim, 0.0);
        return p;
    }

    void validate() const {
        if (w.size() != static_cast<size_t>(out_dim) * in_dim ||
            b.size() != static_cast<size_t>(out_dim) ||
            gain.size() != static_cast<size_t>(out_dim) ||
            offset.size() != static_cast<size_t>(out_dim))
            throw ConfigError("ProjWeights: shape mismatch");
        if (!all_finite(w) || !all_finite(b) || !all_finite(gain) || !all_finite(offset))
            throw ConfigError("ProjWeights: non-finite entries");
    }
};

constexpr double kLayerNormEps = 1e-5;

// Returns n^2 x out_dim, row-major.
inline std::vector<double> project_corr(const Corr4D& c, const ProjWeights& w) {
    w.validate();
    const int n2 = c.n * c.n;
    if (w.in_dim != n2) throw ShapeError("project_corr: weight in_dim != n^2");
    std::vector<double> out(static_cast<size_t>(n2) * w.out_dim);
    std::vector<double> y(w.out_dim);
    for (int a = 0; a < n2; ++a) {
        const double* row = c.m.data() + static_cast<size_t>(a) * n2;
        for (int o = 0; o < w.out_dim; ++o) {
            const double* wrow = w.w.data() + static_cast<size_t>(o) * n2;
            double acc = w.b[o];
            for (int j = 0; j < n2; ++j) acc += wrow[j] * row[j];
            y[o] = acc;
        }
        double mean = 0.0;
        for (double v : y) mean += v;
        mean /= w.out_dim;
        double var = 0.0;
        for (double v : y) var += (v - mean) * (v - mean);
        var /= w.out_dim;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double* dst = out.data() + static_cast<size_t>(a) * w.out_dim;
        for (int o = 0; o < w.out_dim; ++o) {
            const double z = (y[o] - mean) * inv * w.gain[o] + w.offset[o];
            dst[o] = z > 0.0 ? z : 0.0;
        }
    }
    return out;
}

// ------------------------------------------------------------------
// Dual-convolution baseline over the 4D tensor, kept for the ablation and
// runtime comparison. Two stacked 2D convolutions with zero padding:
//   1) spatial over the query-offset axes, target cells as channels
//      (n^2 in -> n^2 out, so the target structure survives);
//   2) spatial over the target-offset axes, query cells as channels
//      (n^2 in -> out_channels).
// Output is flattened [out_channel][target_row][target_col].
// ------------------------------------------------------------------
struct DualConvKernels {
    int n = 7;             // patch side the kernels were built for
    int ksize = 3;         // square kernel side (odd)
    int out_channels = 32;
    std::vector<double> k1;  // n^2 x n^2 x ksize^2
    std::vector<double> k2;  // out_channels x n^2 x ksize^2

    static DualConvKernels seeded(int n, int out_channels, uint64_t seed, int ksize = 3) {
        DualConvKernels k;
        k.n = n;
        k.ksize = ksize;
        k.out_channels = out_channels;
        Rng rng(derive_seed(seed, 2));
        const int n2 = n * n;
        const double a1 = 1.0 / std::sqrt(static_cast<double>(n2 * ksize * ksize));
        k.k1.resize(static_cast<size_t>(n2) * n2 * ksize * ksize);
        for (double& x : k.k1) x = rng.uniform(-a1, a1);
        k.k2.resize(static_cast<size_t>(out_channels) * n2 * ksize * ksize);
        for (double& x : k.k2) x = rng.uniform(-a1, a1);
        return k;
    }

    void validate() const {
        if (ksize < 1 || ksize % 2 == 0)
            throw ShapeError("DualConvKernels: kernel side must be odd");
        const size_t n2 = static_cast<size_t>(n) * n;
        if (k1.size() != n2 * n2 * ksize * ksize ||
            k2.size() != static_cast<size_t>(out_channels) * n2 * ksize * ksize)
            throw ShapeError("DualConvKernels: kernel shapes do not match n/ksize");
    }
};

inline std::vector<double> dual_conv_corr(const Corr4D& c, const DualConvKernels& k) {
    k.validate();
    if (k.n != c.n) throw ShapeError("dual_conv_corr: kernel patch side != corr patch side");
    const int n = c.n;
    const int n2 = n * n;
    const int half = k.ksize / 2;
    const int ks = k.ksize;

    // Stage 1: conv over query axes (ay, ax); channels = target cells.
    // mid[m][ay][ax], m indexes target cells.
    std::vector<double> mid(static_cast<size_t>(n2) * n2, 0.0);
    for (int m = 0; m < n2; ++m) {
        const double* kern = k.k1.data() + static_cast<size_t>(m) * n2 * ks * ks;
        for (int ay = 0; ay < n; ++ay) {
            for (int ax = 0; ax < n; ++ax) {
                double acc = 0.0;
                for (int b = 0; b < n2; ++b) {
                    const double* kb = kern + static_cast<size_t>(b) * ks * ks;
                    for (int ky = -half; ky <= half; ++ky) {
                        const int sy = ay + ky;
                        if (sy < 0 || sy >= n) continue;
                        for (int kx = -half; kx <= half; ++kx) {
                            const int sx = ax + kx;
                            if (sx < 0 || sx >= n) continue;
                            acc += kb[(ky + half) * ks + (kx + half)] *
                                   c.m[static_cast<size_t>(sy * n + sx) * n2 + b];
                        }
                    }
                }
                mid[static_cast<size_t>(m) * n2 + ay * n + ax] = acc;
            }
        }
    }

    // Stage 2: conv over target axes (by, bx); channels = query cells.
    // mid viewed as [query cell a][by][bx] via transposition of roles.
    std::vector<double> out(static_cast<size_t>(k.out_channels) * n2, 0.0);
    for (int oc = 0; oc < k.out_channels; ++oc) {
        const double* kern = k.k2.data() + static_cast<size_t>(oc) * n2 * ks * ks;
        for (int by = 0; by < n; ++by) {
            for (int bx = 0; bx < n; ++bx) {
                double acc = 0.0;
                for (int a = 0; a < n2; ++a) {
                    const double* ka = kern + static_cast<size_t>(a) * ks * ks;
                    for (int ky = -half; ky <= half; ++ky) {
                        const int sy = by + ky;
                        if (sy < 0 || sy >= n) continue;
                        for (int kx = -half; kx <= half; ++kx) {
                            const int sx = bx + kx;
                            if (sx < 0 || sx >= n) continue;
                            // mid[target=(sy,sx)][query=a]
                            acc += ka[(ky + half) * ks + (kx + half)] *
                                   mid[static_cast<size_t>(sy * n + sx) * n2 + a];
                        }
                    }
                }
                out[static_cast<size_t>(oc) * n2 + by * n + bx] = acc;
            }
        }
    }
    return out;
}

// ------------------------------------------------------------------
// Depth correlation: log-ratio of the trajectory's current depth against the
// depth map sampled around the current position. Offsets are raw pixels.
// ------------------------------------------------------------------
inline double sample_depth(const RgbdVideo& video, int t, double u, double v) {
    double x = clamp(u, 0.0, static_cast<double>(video.W - 1));
    double y = clamp(v, 0.0, static_cast<double>(video.H - 1));
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, video.W - 1);
    const int y1 = std::min(y0 + 1, video.H - 1);
    const double fx = x - x0, fy = y - y0;
    const double z = (1 - fx) * (1 - fy) * video.depth_at(t, y0, x0) +
                     fx * (1 - fy) * video.depth_at(t, y0, x1) +
                     (1 - fx) * fy * video.depth_at(t, y1, x0) +
                     fx * fy * video.depth_at(t, y1, x1);
    return std::max(z, kDepthFloor);
}

inline std::vector<double> depth_corr(const RgbdVideo& video, int t, double query_d, double cur_u,
                                      double cur_v, const CorrConfig& cfg) {
    if (!(query_d > 0.0)) throw std::domain_error("depth_corr: query depth must be positive");
    std::vector<double> out(cfg.window_area());
    const double log_q = std::log(query_d);
    size_t k = 0;
    for (int dy = -cfg.radius; dy <= cfg.radius; ++dy)
        for (int dx = -cfg.radius; dx <= cfg.radius; ++dx)
            out[k++] = log_q - std::log(sample_depth(video, t, cur_u + dx, cur_v + dy));
    return out;
}

}  // namespace densetrack
