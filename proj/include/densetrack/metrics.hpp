// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics over dense tracks: endpoint error, occlusion-mask IoU,
// 3D accuracy within relative-depth thresholds, average Jaccard, and
// occlusion accuracy. All TrackState-level metrics skip frame 0 (the query
// frame, correct by construction) and binarize visibility at 0.5.
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"

namespace densetrack {

inline const std::vector<double>& default_apd_thresholds() {
    static const std::vector<double> t = {0.01, 0.02, 0.04, 0.08, 0.16};
    return t;
}

struct EpeResult {
    double all = 0.0;
    std::optional<double> vis;
    std::optional<double> occ;
};

namespace detail {

inline void check_same_shape(const TrackState& a, const TrackState& b, const char* what) {
    if (a.num_frames != b.num_frames || a.size() != b.size())
        throw ShapeError(std::string(what) + ": prediction/ground-truth shape mismatch");
}

}  // namespace detail

// Mean 2D endpoint error over all / ground-truth-visible / occluded
// point-frames, frame 0 excluded. An empty subset reports as absent.
inline EpeResult epe(const TrackState& pred, const TrackState& gt) {
    detail::check_same_shape(pred, gt, "epe");
    double sum_all = 0.0, sum_vis = 0.0, sum_occ = 0.0;
    long long n_all = 0, n_vis = 0, n_occ = 0;
    for (int t = 1; t < gt.num_frames; ++t) {
        for (int i = 0; i < gt.size(); ++i) {
            const TrackPoint& p = pred.at(t, i);
            const TrackPoint& g = gt.at(t, i);
            const double e = std::hypot(p.u - g.u, p.v - g.v);
            sum_all += e;
            ++n_all;
            if (g.o >= 0.5) {
                sum_vis += e;
                ++n_vis;
            } else {
                sum_occ += e;
                ++n_occ;
            }
        }
    }
    EpeResult r;
    r.all = n_all ? sum_all / n_all : 0.0;
    if (n_vis) r.vis = sum_vis / n_vis;
    if (n_occ) r.occ = sum_occ / n_occ;
    return r;
}

// IoU of the *occlusion* masks (predictions thresholded at 0.5 and negated).
// An empty union counts as a perfect 1.
inline double visibility_iou(std::span<const double> pred_vis, std::span<const double> gt_vis) {
    if (pred_vis.size() != gt_vis.size())
        throw ShapeError("visibility_iou: mask size mismatch");
    long long inter = 0, uni = 0;
    for (size_t k = 0; k < pred_vis.size(); ++k) {
        const bool po = pred_vis[k] < 0.5;  // predicted occluded
        const bool go = gt_vis[k] < 0.5;
        inter += po && go;
        uni += po || go;
    }
    return uni ? static_cast<double>(inter) / uni : 1.0;
}

inline double visibility_iou(const TrackState& pred, const TrackState& gt) {
    detail::check_same_shape(pred, gt, "visibility_iou");
    std::vector<double> pv, gv;
    pv.reserve(static_cast<size_t>(gt.num_frames - 1) * gt.size());
    gv.reserve(pv.capacity());
    for (int t = 1; t < gt.num_frames; ++t) {
        for (int i = 0; i < gt.size(); ++i) {
            pv.push_back(pred.at(t, i).o);
            gv.push_back(gt.at(t, i).o);
        }
    }
    return visibility_iou(pv, gv);
}

struct AllVis {
    double all = 0.0;
    double vis = 0.0;
};

// Fraction of point-frames whose 3D error stays under delta * gt_depth,
// averaged over the thresholds; reported over all and gt-visible subsets.
inline AllVis apd3d(const TrackState& pred, const TrackState& gt, const Intrinsics& intr,
                    std::span<const double> thresholds = {}) {
    detail::check_same_shape(pred, gt, "apd3d");
    if (thresholds.empty()) thresholds = default_apd_thresholds();
    double acc_all = 0.0, acc_vis = 0.0;
    for (double delta : thresholds) {
        long long hit_all = 0, n_all = 0, hit_vis = 0, n_vis = 0;
        for (int t = 1; t < gt.num_frames; ++t) {
            for (int i = 0; i < gt.size(); ++i) {
                const Point3 a = uvd_to_xyz(pred.at(t, i), intr);
                const Point3 b = uvd_to_xyz(gt.at(t, i), intr);
                const double err = std::sqrt((a.x - b.x) * (a.x - b.x) +
                                             (a.y - b.y) * (a.y - b.y) +
                                             (a.z - b.z) * (a.z - b.z));
                const bool within = err < delta * gt.at(t, i).d;
                ++n_all;
                hit_all += within;
                if (gt.at(t, i).o >= 0.5) {
                    ++n_vis;
                    hit_vis += within;
                }
            }
        }
        acc_all += n_all ? static_cast<double>(hit_all) / n_all : 1.0;
        acc_vis += n_vis ? static_cast<double>(hit_vis) / n_vis : 1.0;
    }
    return AllVis{acc_all / thresholds.size(), acc_vis / thresholds.size()};
}

// Average Jaccard: per threshold, TP = gt-visible & pred-visible & within;
// FP = pred-visible & (gt-occluded | outside); FN = gt-visible &
// (pred-occluded | outside); an empty denominator contributes 1.
inline AllVis average_jaccard(const TrackState& pred, const TrackState& gt,
                              const Intrinsics& intr, std::span<const double> thresholds = {}) {
    detail::check_same_shape(pred, gt, "average_jaccard");
    if (thresholds.empty()) thresholds = default_apd_thresholds();
    double acc_all = 0.0, acc_vis = 0.0;
    for (double delta : thresholds) {
        long long tp = 0, fp = 0, fn = 0;
        long long tp_v = 0, fp_v = 0, fn_v = 0;
        for (int t = 1; t < gt.num_frames; ++t) {
            for (int i = 0; i < gt.size(); ++i) {
                const Point3 a = uvd_to_xyz(pred.at(t, i), intr);
                const Point3 b = uvd_to_xyz(gt.at(t, i), intr);
                const double err = std::sqrt((a.x - b.x) * (a.x - b.x) +
                                             (a.y - b.y) * (a.y - b.y) +
                                             (a.z - b.z) * (a.z - b.z));
                const bool within = err < delta * gt.at(t, i).d;
                const bool gv = gt.at(t, i).o >= 0.5;
                const bool pv = pred.at(t, i).o >= 0.5;
                const bool is_tp = gv && pv && within;
                const bool is_fp = pv && (!gv || !within);
                const bool is_fn = gv && (!pv || !within);
                tp += is_tp;
                fp += is_fp;
                fn += is_fn;
                if (gv) {
                    tp_v += is_tp;
                    fp_v += is_fp;
                    fn_v += is_fn;
                }
            }
        }
        acc_all += (tp + fp + fn) ? static_cast<double>(tp) / (tp + fp + fn) : 1.0;
        acc_vis += (tp_v + fp_v + fn_v) ? static_cast<double>(tp_v) / (tp_v + fp_v + fn_v) : 1.0;
    }
    return AllVis{acc_all / thresholds.size(), acc_vis / thresholds.size()};
}

// Fraction of point-frames whose thresholded visibility matches ground truth.
inline double occlusion_accuracy(std::span<const double> pred_vis,
                                 std::span<const double> gt_vis) {
    if (pred_vis.size() != gt_vis.size())
        throw ShapeError("occlusion_accuracy: mask size mismatch");
    if (pred_vis.empty()) return 1.0;
    long long hit = 0;
    for (size_t k = 0; k < pred_vis.size(); ++k)
        hit += (pred_vis[k] >= 0.5) == (gt_vis[k] >= 0.5);
    return static_cast<double>(hit) / pred_vis.size();
}

inline double occlusion_accuracy(const TrackState& pred, const TrackState& gt) {
    detail::check_same_shape(pred, gt, "occlusion_accuracy");
    long long hit = 0, n = 0;
    for (int t = 1; t < gt.num_frames; ++t) {
        for (int i = 0; i < gt.size(); ++i) {
            hit += (pred.at(t, i).o >= 0.5) == (gt.at(t, i).o >= 0.5);
            ++n;
        }
    }
    return n ? static_cast<double>(hit) / n : 1.0;
}

}  // namespace densetrack
