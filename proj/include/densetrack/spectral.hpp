// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Block-DCT spectral profile of flow fields: orthonormal type-II 2D DCT per
// non-overlapping B x B block, JPEG zigzag flattening, coefficient magnitudes
// averaged over blocks and both flow components.
#pragma once

#include <span>
#include <utility>
#include <vector>

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"

namespace densetrack {

struct FlowField {
    int h = 0, w = 0;
    std::vector<double> du, dv;  // h*w each, row-major

    void validate() const {
        if (du.size() != static_cast<size_t>(h) * w || dv.size() != du.size())
            throw ValidationError("FlowField: buffer sizes do not match dimensions");
        if (!all_finite(du) || !all_finite(dv))
            throw ValidationError("FlowField: non-finite entries");
    }
};

// JPEG diagonal scan: antidiagonals in increasing row+col, alternating
// direction, starting (0,0) then (0,1).
inline std::vector<std::pair<int, int>> zigzag_order(int B) {
    if (B < 1) throw ValidationError("zigzag_order: B must be >= 1");
    std::vector<std::pair<int, int>> order;
    order.reserve(static_cast<size_t>(B) * B);
    for (int d = 0; d <= 2 * (B - 1); ++d) {
        if (d % 2 == 0) {
            // even antidiagonal: row decreasing
            for (int r = std::min(d, B - 1); r >= std::max(0, d - B + 1); --r)
                order.emplace_back(r, d - r);
        } else {
            for (int r = std::max(0, d - B + 1); r <= std::min(d, B - 1); ++r)
                order.emplace_back(r, d - r);
        }
    }
    return order;
}

namespace detail {

// Orthonormal DCT-II basis matrix, rows = frequency, cols = sample.
inline std::vector<double> dct_matrix(int B) {
    std::vector<double> m(static_cast<size_t>(B) * B);
    const double pi = 3.14159265358979323846;
    for (int p = 0; p < B; ++p) {
        const double a = p == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
        for (int n = 0; n < B; ++n)
            m[static_cast<size_t>(p) * B + n] = a * std::cos(pi * (2 * n + 1) * p / (2.0 * B));
    }
    return m;
}

}  // namespace detail

// Separable orthonormal type-II 2D DCT of a B x B block (row-major in/out).
inline std::vector<double> dct2_block(std::span<const double> block, int B) {
    if (B < 1) throw ValidationError("dct2_block: B must be >= 1");
    if (block.size() != static_cast<size_t>(B) * B)
        throw ShapeError("dct2_block: block size != B*B");
    const std::vector<double> M = detail::dct_matrix(B);
    std::vector<double> tmp(static_cast<size_t>(B) * B, 0.0);
    // rows
    for (int r = 0; r < B; ++r)
        for (int q = 0; q < B; ++q) {
            double acc = 0.0;
            for (int n = 0; n < B; ++n)
                acc += M[static_cast<size_t>(q) * B + n] * block[static_cast<size_t>(r) * B + n];
            tmp[static_cast<size_t>(r) * B + q] = acc;
        }
    // columns
    std::vector<double> out(static_cast<size_t>(B) * B, 0.0);
    for (int p = 0; p < B; ++p)
        for (int q = 0; q < B; ++q) {
            double acc = 0.0;
            for (int m = 0; m < B; ++m)
                acc += M[static_cast<size_t>(p) * B + m] * tmp[static_cast<size_t>(m) * B + q];
            out[static_cast<size_t>(p) * B + q] = acc;
        }
    return out;
}

// Inverse (type-III) of dct2_block; the transform is orthonormal so this is
// the transpose applied separably.
inline std::vector<double> idct2_block(std::span<const double> coeff, int B) {
    if (coeff.size() != static_cast<size_t>(B) * B)
        throw ShapeError("idct2_block: block size != B*B");
    const std::vector<double> M = detail::dct_matrix(B);
    std::vector<double> tmp(static_cast<size_t>(B) * B, 0.0);
    for (int p = 0; p < B; ++p)
        for (int n = 0; n < B; ++n) {
            double acc = 0.0;
            for (int q = 0; q < B; ++q)
                acc += M[static_cast<size_t>(q) * B + n] * coeff[static_cast<size_t>(p) * B + q];
            tmp[static_cast<size_t>(p) * B + n] = acc;
        }
    std::vector<double> out(static_cast<size_t>(B) * B, 0.0);
    for (int m = 0; m < B; ++m)
        for (int n = 0; n < B; ++n) {
            double acc = 0.0;
            for (int p = 0; p < B; ++p)
                acc += M[static_cast<size_t>(p) * B + m] * tmp[static_cast<size_t>(p) * B + n];
            out[static_cast<size_t>(m) * B + n] = acc;
        }
    return out;
}

// Zigzag-ordered mean absolute DCT coefficients over all blocks of both flow
// components. Fields not divisible by B are cropped to the largest multiple
// (never padded; padding would inject spectral artifacts).
inline std::vector<double> flow_spectrum(const FlowField& flow, int B) {
    flow.validate();
    if (B < 1) throw ValidationError("flow_spectrum: B must be >= 1");
    if (flow.h < B || flow.w < B)
        throw ValidationError("flow_spectrum: flow field smaller than one block");
    const int bh = flow.h / B;
    const int bw = flow.w / B;
    const auto order = zigzag_order(B);
    std::vector<double> profile(static_cast<size_t>(B) * B, 0.0);
    std::vector<double> block(static_cast<size_t>(B) * B);
    long long count = 0;
    for (const std::vector<double>* comp : {&flow.du, &flow.dv}) {
        for (int by = 0; by < bh; ++by) {
            for (int bx = 0; bx < bw; ++bx) {
                for (int r = 0; r < B; ++r)
                    for (int c = 0; c < B; ++c)
                        block[static_cast<size_t>(r) * B + c] =
                            (*comp)[static_cast<size_t>(by * B + r) * flow.w + bx * B + c];
                const std::vector<double> coeff = dct2_block(block, B);
                for (size_t k = 0; k < order.size(); ++k)
                    profile[k] +=
                        std::abs(coeff[static_cast<size_t>(order[k].first) * B +
                                       order[k].second]);
                ++count;
            }
        }
    }
    for (double& x : profile) x /= static_cast<double>(count);
    return profile;
}

// Displacement field of one frame of a grid-resolution track state.
inline FlowField flow_from_state(const TrackState& state, int t) {
    if (t < 0 || t >= state.num_frames) throw ShapeError("flow_from_state: frame out of range");
    FlowField f;
    f.h = state.rows;
    f.w = state.cols;
    f.du.resize(static_cast<size_t>(f.h) * f.w);
    f.dv.resize(f.du.size());
    for (int i = 0; i < state.size(); ++i) {
        f.du[i] = state.at(t, i).u - state.at(0, i).u;
        f.dv[i] = state.at(t, i).v - state.at(0, i).v;
    }
    return f;
}

}  // namespace densetrack
