// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cost-reduction strategy harness: one refinement iteration under spatial
// downsampling, temporal subsampling, or trajectory subsampling, each
// followed by recovery to a dense full-resolution prediction. The refiner is
// the oracle (contraction toward ground truth), which isolates what each
// strategy loses structurally:
//   - spatial: blocks track their majority surface, so minority pixels in
//     mixed blocks inherit the wrong motion;
//   - temporal: skipped frames are linearly interpolated in UVD, which is
//     wrong for projected 3D motion with nonzero depth velocity;
//   - trajectory: untracked pixels are interpolated from exact tracked
//     trajectories at the same spatial density.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"
#include "densetrack/interpolator.hpp"
#include "densetrack/metrics.hpp"
#include "densetrack/profiler.hpp"
#include "densetrack/synthbench.hpp"

namespace densetrack {

struct StrategyRow {
    std::string strategy;  // baseline | spatial | temporal | trajectory
    int factor = 1;        // spatial/temporal: linear factor; trajectory: count factor
    std::string interp;    // bilinear | nearest | linear | -
    std::optional<double> epe_all;
    std::optional<double> apd;
    double wall_ms = 0.0;
    long long units = 0;  // tracked point-frames
    std::string note;     // skip reason when the factor is incompatible
};

struct StrategyOptions {
    std::vector<int> spatial_factors = {2, 4, 8};
    std::vector<int> temporal_factors = {2, 4, 8};
    std::vector<int> trajectory_strides = {2, 4, 8};  // linear stride; factor = stride^2
    double step = 1.0;
    bool include_baseline = true;
};

namespace detail {

inline TrackState identity_init(const RgbdVideo& video) {
    TrackState s = TrackState::make(video.T, video.H, video.W);
    for (int y = 0; y < video.H; ++y)
        for (int x = 0; x < video.W; ++x) {
            const int id = y * video.W + x;
            const double d0 = video.depth_at(0, y, x);
            for (int t = 0; t < video.T; ++t)
                s.at(t, id) = TrackPoint{static_cast<double>(x), static_cast<double>(y), d0, 1.0};
        }
    return s;
}

inline void eval_row(StrategyRow& row, const TrackState& pred, const GroundTruth& gt) {
    row.epe_all = epe(pred, gt.tracks).all;
    row.apd = apd3d(pred, gt.tracks, gt.intr).all;
}

// One oracle step toward an arbitrary target trajectory.
inline TrackPoint contract(const TrackPoint& cur, const TrackPoint& target, double step) {
    return TrackPoint{cur.u + step * (target.u - cur.u), cur.v + step * (target.v - cur.v),
                      cur.d + step * (target.d - cur.d), target.o};
}

}  // namespace detail

inline std::vector<StrategyRow> strategy_compare(const RgbdVideo& video, const GroundTruth& gt,
                                                 const StrategyOptions& opt = {}) {
    video.validate();
    if (gt.H != video.H || gt.W != video.W || gt.T != video.T)
        throw ShapeError("strategy_compare: ground truth does not match the video");
    const int H = video.H, W = video.W, T = video.T;
    std::vector<StrategyRow> rows;

    if (opt.include_baseline) {
        StrategyRow row{"baseline", 1, "-"};
        const double t0 = Profiler::now_ms();
        TrackState pred = detail::identity_init(video);
        oracle_refiner(pred, gt, opt.step);
        row.wall_ms = Profiler::now_ms() - t0;
        row.units = static_cast<long long>(H) * W * T;
        detail::eval_row(row, pred, gt);
        rows.push_back(std::move(row));
    }

    // ---- spatial downsampling: track block-majority trajectories at block
    // centers, then interpolate the motion field back to every pixel ----
    for (int m : opt.spatial_factors) {
        for (const char* interp : {"bilinear", "nearest"}) {
            StrategyRow row{"spatial", m, interp};
            if (H % m != 0 || W % m != 0) {
                row.note = "skipped: factor does not divide frame dims";
                rows.push_back(std::move(row));
                continue;
            }
            const double t0 = Profiler::now_ms();
            const int bh = H / m, bw = W / m;
            // Majority surface per block, tracked at the block center.
            std::vector<MotionSample> block_motion(static_cast<size_t>(bh) * bw * T);
            for (int by = 0; by < bh; ++by) {
                for (int bx = 0; bx < bw; ++bx) {
                    std::map<int, int> votes;
                    for (int py = 0; py < m; ++py)
                        for (int px = 0; px < m; ++px)
                            ++votes[gt.surface_of_pixel[(by * m + py) * W + bx * m + px]];
                    int winner = -1, best = -1;
                    for (const auto& [sid, cnt] : votes)
                        if (cnt > best) {
                            winner = sid;
                            best = cnt;
                        }
                    const double cu = bx * m + 0.5 * (m - 1);
                    const double cv = by * m + 0.5 * (m - 1);
                    const TrackPoint start = gt_trajectory(gt.surfaces[winner], cu, cv, 0,
                                                           gt.intr);
                    for (int t = 0; t < T; ++t) {
                        const TrackPoint target =
                            gt_trajectory(gt.surfaces[winner], cu, cv, t, gt.intr);
                        const TrackPoint cur{cu, cv, start.d, 1.0};  // identity init
                        const TrackPoint stepped = detail::contract(cur, target, opt.step);
                        block_motion[(static_cast<size_t>(by) * bw + bx) * T + t] =
                            MotionSample{stepped.u - cu, stepped.v - cv, stepped.d - start.d,
                                         t == 0 ? 1.0 : (target.o >= 0.5 ? 1.0 : 0.0)};
                    }
                }
            }
            TrackState pred = detail::identity_init(video);
            // Recover the dense field from the block grid.
            std::vector<MotionSample> frame(static_cast<size_t>(bh) * bw);
            for (int t = 1; t < T; ++t) {
                for (int b = 0; b < bh * bw; ++b)
                    frame[b] = block_motion[static_cast<size_t>(b) * T + t];
                for (int y = 0; y < H; ++y) {
                    for (int x = 0; x < W; ++x) {
                        // position in block-grid coordinates (block centers at integers)
                        const double gx = (x - 0.5 * (m - 1)) / m;
                        const double gy = (y - 0.5 * (m - 1)) / m;
                        MotionSample mo;
                        if (std::string_view(interp) == "nearest") {
                            const int bx = clamp(static_cast<int>(std::lround(gx)), 0, bw - 1);
                            const int by = clamp(static_cast<int>(std::lround(gy)), 0, bh - 1);
                            mo = frame[static_cast<size_t>(by) * bw + bx];
                        } else {
                            const double fx = clamp(gx, 0.0, static_cast<double>(bw - 1));
                            const double fy = clamp(gy, 0.0, static_cast<double>(bh - 1));
                            const int x0 = std::min(static_cast<int>(fx), bw - 2 >= 0 ? bw - 2 : 0);
                            const int y0 = std::min(static_cast<int>(fy), bh - 2 >= 0 ? bh - 2 : 0);
                            const int x1 = std::min(x0 + 1, bw - 1);
                            const int y1 = std::min(y0 + 1, bh - 1);
                            const double ax = fx - x0, ay = fy - y0;
                            const MotionSample& m00 = frame[static_cast<size_t>(y0) * bw + x0];
                            const MotionSample& m01 = frame[static_cast<size_t>(y0) * bw + x1];
                            const MotionSample& m10 = frame[static_cast<size_t>(y1) * bw + x0];
                            const MotionSample& m11 = frame[static_cast<size_t>(y1) * bw + x1];
                            const double w00 = (1 - ay) * (1 - ax), w01 = (1 - ay) * ax;
                            const double w10 = ay * (1 - ax), w11 = ay * ax;
                            mo.du = w00 * m00.du + w01 * m01.du + w10 * m10.du + w11 * m11.du;
                            mo.dv = w00 * m00.dv + w01 * m01.dv + w10 * m10.dv + w11 * m11.dv;
                            mo.dd = w00 * m00.dd + w01 * m01.dd + w10 * m10.dd + w11 * m11.dd;
                            mo.o = w00 * m00.o + w01 * m01.o + w10 * m10.o + w11 * m11.o;
                        }
                        TrackPoint& p = pred.at(t, y * W + x);
                        p.u = x + mo.du;
                        p.v = y + mo.dv;
                        p.d = std::max(pred.points[y * W + x].d + mo.dd, kDepthFloor);
                        p.o = clamp(mo.o, 0.0, 1.0);
                    }
                }
            }
            row.wall_ms = Profiler::now_ms() - t0;
            row.units = static_cast<long long>(bh) * bw * T;
            detail::eval_row(row, pred, gt);
            rows.push_back(std::move(row));
        }
    }

    // ---- temporal subsampling: track every pixel on kept frames, linearly
    // interpolate (u, v, d) on skipped frames ----
    for (int m : opt.temporal_factors) {
        StrategyRow row{"temporal", m, "linear"};
        if (m >= T && m != 1) {
            row.note = "skipped: factor >= frame count";
            rows.push_back(std::move(row));
            continue;
        }
        const double t0 = Profiler::now_ms();
        std::vector<int> kept;
        for (int t = 0; t < T; t += m) kept.push_back(t);
        TrackState pred = detail::identity_init(video);
        for (int t : kept) {
            for (int id = 0; id < H * W; ++id) {
                pred.at(t, id) = detail::contract(pred.at(t, id), gt.tracks.at(t, id), opt.step);
            }
        }
        // Linear interpolation between kept frames; extrapolation past the
        // last kept frame; visibility copied from the nearest kept frame.
        for (int t = 1; t < T; ++t) {
            if (t % m == 0) continue;
            const int k0 = (t / m) * m;
            int k1 = k0 + m;
            double alpha;
            int lo = k0, hi = k1;
            if (k1 >= T) {  // extrapolate from the last kept segment
                hi = k0;
                lo = k0 - m;
                if (lo < 0) {  // single kept frame; hold
                    lo = hi;
                }
            }
            alpha = (hi == lo) ? 0.0 : static_cast<double>(t - lo) / (hi - lo);
            // Nearest kept frame for visibility, earlier on ties.
            const int near_kept = (k1 < T && (k1 - t) < (t - k0)) ? k1 : k0;
            for (int id = 0; id < H * W; ++id) {
                const TrackPoint& a = pred.at(lo, id);
                const TrackPoint& b = pred.at(hi, id);
                TrackPoint& p = pred.at(t, id);
                p.u = a.u + alpha * (b.u - a.u);
                p.v = a.v + alpha * (b.v - a.v);
                p.d = std::max(a.d + alpha * (b.d - a.d), kDepthFloor);
                p.o = pred.at(near_kept, id).o;
            }
        }
        row.wall_ms = Profiler::now_ms() - t0;
        row.units = static_cast<long long>(H) * W * static_cast<long long>(kept.size());
        detail::eval_row(row, pred, gt);
        rows.push_back(std::move(row));
    }

    // ---- trajectory subsampling: track a centered pixel subgrid, recover
    // the rest by interpolation over the tracked motions ----
    for (int q : opt.trajectory_strides) {
        for (const char* interp : {"bilinear", "nearest"}) {
            StrategyRow row{"trajectory", q * q, interp};
            if (H % q != 0 || W % q != 0) {
                row.note = "skipped: stride does not divide frame dims";
                rows.push_back(std::move(row));
                continue;
            }
            const double t0 = Profiler::now_ms();
            const int off = q / 2;
            RegularSubgrid sub = RegularSubgrid::make(H, W, q, off, off);
            TrackState pred = detail::identity_init(video);
            std::vector<int> tracked;
            tracked.reserve(static_cast<size_t>(sub.sub_rows) * sub.sub_cols);
            for (int sr = 0; sr < sub.sub_rows; ++sr)
                for (int sc = 0; sc < sub.sub_cols; ++sc) tracked.push_back(sub.grid_id(sr, sc));
            oracle_refiner(pred, gt, opt.step, tracked);
            std::vector<MotionSample> frame(tracked.size());
            for (int t = 1; t < T; ++t) {
                for (size_t k = 0; k < tracked.size(); ++k) {
                    const TrackPoint& o = pred.points[tracked[k]];
                    const TrackPoint& p = pred.at(t, tracked[k]);
                    frame[k] = MotionSample{p.u - o.u, p.v - o.v, p.d - o.d, p.o};
                }
                for (int y = 0; y < H; ++y) {
                    for (int x = 0; x < W; ++x) {
                        const int id = y * W + x;
                        if ((y - off) % q == 0 && (x - off) % q == 0 && y >= off && x >= off)
                            continue;  // tracked pixel keeps its refined state
                        double fr = clamp((y - off) / static_cast<double>(q), 0.0,
                                          static_cast<double>(sub.sub_rows - 1));
                        double fc = clamp((x - off) / static_cast<double>(q), 0.0,
                                          static_cast<double>(sub.sub_cols - 1));
                        MotionSample mo;
                        if (std::string_view(interp) == "nearest") {
                            const int sr = clamp(static_cast<int>(std::lround(fr)), 0,
                                                 sub.sub_rows - 1);
                            const int sc = clamp(static_cast<int>(std::lround(fc)), 0,
                                                 sub.sub_cols - 1);
                            mo = frame[sub.sub_id(sr, sc)];
                        } else {
                            const int r0 = std::min(static_cast<int>(fr),
                                                    std::max(sub.sub_rows - 2, 0));
                            const int c0 = std::min(static_cast<int>(fc),
                                                    std::max(sub.sub_cols - 2, 0));
                            const int r1 = std::min(r0 + 1, sub.sub_rows - 1);
                            const int c1 = std::min(c0 + 1, sub.sub_cols - 1);
                            const double ar = fr - r0, ac = fc - c0;
                            const MotionSample& m00 = frame[sub.sub_id(r0, c0)];
                            const MotionSample& m01 = frame[sub.sub_id(r0, c1)];
                            const MotionSample& m10 = frame[sub.sub_id(r1, c0)];
                            const MotionSample& m11 = frame[sub.sub_id(r1, c1)];
                            const double w00 = (1 - ar) * (1 - ac), w01 = (1 - ar) * ac;
                            const double w10 = ar * (1 - ac), w11 = ar * ac;
                            mo.du = w00 * m00.du + w01 * m01.du + w10 * m10.du + w11 * m11.du;
                            mo.dv = w00 * m00.dv + w01 * m01.dv + w10 * m10.dv + w11 * m11.dv;
                            mo.dd = w00 * m00.dd + w01 * m01.dd + w10 * m10.dd + w11 * m11.dd;
                            mo.o = w00 * m00.o + w01 * m01.o + w10 * m10.o + w11 * m11.o;
                        }
                        TrackPoint& p = pred.at(t, id);
                        p.u = x + mo.du;
                        p.v = y + mo.dv;
                        p.d = std::max(pred.points[id].d + mo.dd, kDepthFloor);
                        p.o = clamp(mo.o, 0.0, 1.0);
                    }
                }
            }
            row.wall_ms = Profiler::now_ms() - t0;
            row.units = static_cast<long long>(sub.sub_rows) * sub.sub_cols * T;
            detail::eval_row(row, pred, gt);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace densetrack
