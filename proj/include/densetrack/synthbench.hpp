// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic RGB-D scenes with closed-form dense ground truth.
//
// Scenes are a static textured background plane plus fronto-parallel textured
// quads, each moving with a constant 3D velocity. Every ground-truth
// trajectory is the pinhole projection of that rigid motion, and occlusion is
// an analytic z-buffer test, so all expected values are exact.
#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "densetrack/common.hpp"
#include "densetrack/core_types.hpp"

namespace densetrack {

struct SceneConfig {
    uint64_t seed = 1;
    int T = 8, H = 64, W = 64;
    int n_objects = 2;
    double vel_max_xy = 0.05;  // units/frame, per axis
    double vel_max_z = 0.02;   // units/frame
    double z_min = 2.0;
    double z_max = 6.0;
    uint64_t background_seed = 7;
    double focal = 64.0;  // pixels; principal point defaults to the image center
    // Optional global motion: the background plane moves with this velocity,
    // and with objects_follow_background the object velocities are sampled
    // around it instead of around zero (a camera-dolly-like scene).
    double bg_vx = 0.0, bg_vy = 0.0, bg_vz = 0.0;
    bool objects_follow_background = false;

    void validate() const {
        if (T < 2) throw ValidationError("SceneConfig: T must be >= 2");
        if (H < 8 || W < 8) throw ValidationError("SceneConfig: H and W must be >= 8");
        if (n_objects < 0) throw ValidationError("SceneConfig: n_objects must be >= 0");
        if (!(z_min > 0.0) || !(z_max >= z_min))
            throw ValidationError("SceneConfig: need 0 < z_min <= z_max");
        if (!(focal > 0.0)) throw ValidationError("SceneConfig: focal must be positive");
        if (vel_max_xy < 0.0 || vel_max_z < 0.0)
            throw ValidationError("SceneConfig: velocity bounds must be nonnegative");
        // No surface may cross depth zero within T frames.
        const double worst_vz = vel_max_z + std::abs(bg_vz);
        if (worst_vz * (T - 1) >= 0.9 * z_min)
            throw ValidationError("SceneConfig: depth velocity too large, depth could cross zero");
    }

    Intrinsics intrinsics() const {
        return Intrinsics{focal, 0.5 * (W - 1), 0.5 * (H - 1)};
    }
};

// Fronto-parallel rectangle moving with constant 3D velocity. The background
// is represented as surface 0 with infinite extent.
struct SceneSurface {
    int id = 0;
    bool infinite = false;
    double x0 = 0.0, y0 = 0.0;    // world min corner at t = 0
    double wx = 0.0, wy = 0.0;    // extent
    double z0 = 1.0;              // depth at t = 0
    double vx = 0.0, vy = 0.0, vz = 0.0;
    double tex_cell = 0.25;       // checker period, world units
    double tex_noise_cell = 0.1;  // noise lattice pitch, world units
    uint64_t tex_seed = 0;
    double base_gray = 0.5;

    double z_at(int t) const { return z0 + t * vz; }
};

struct GroundTruth {
    TrackState tracks;             // full H x W grid of frame-0 pixels
    std::vector<uint8_t> visible;  // T*H*W
    std::vector<int> surface_of_pixel;  // H*W, frame-0 z-buffer winner
    std::vector<SceneSurface> surfaces;
    Intrinsics intr;
    int T = 0, H = 0, W = 0;

    bool visible_at(int t, int idx) const {
        return visible[static_cast<size_t>(t) * H * W + idx] != 0;
    }
};

namespace detail {

// Does the ray through pixel (u,v) hit the surface at frame t, and at what
// depth? Fronto-parallel planes make this a box test at the plane depth.
inline std::optional<double> surface_hit(const SceneSurface& s, double u, double v, int t,
                                         const Intrinsics& intr) {
    const double z = s.z_at(t);
    if (!(z > 0.0)) return std::nullopt;
    if (s.infinite) return z;
    const double x = (u - intr.cu) * z / intr.f;
    const double y = (v - intr.cv) * z / intr.f;
    const double sx = s.x0 + t * s.vx;
    const double sy = s.y0 + t * s.vy;
    if (x < sx || x > sx + s.wx || y < sy || y > sy + s.wy) return std::nullopt;
    return z;
}

// Nearest surface along the pixel ray; ties keep the lowest id.
inline std::pair<int, double> zbuffer_winner(const std::vector<SceneSurface>& surfaces, double u,
                                             double v, int t, const Intrinsics& intr) {
    int best = -1;
    double best_z = 0.0;
    for (const SceneSurface& s : surfaces) {
        auto z = surface_hit(s, u, v, t, intr);
        if (z && (best < 0 || *z < best_z)) {
            best = s.id;
            best_z = *z;
        }
    }
    return {best, best_z};
}

inline double tex_hash01(uint64_t seed, int64_t ix, int64_t iy, int channel) {
    uint64_t h = seed;
    h = fnv1a64(&ix, sizeof(ix), h);
    h = fnv1a64(&iy, sizeof(iy), h);
    h = fnv1a64(&channel, sizeof(channel), h);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Procedural checkerboard + value noise in surface-local coordinates, so the
// texture moves rigidly with the surface.
inline void surface_color(const SceneSurface& s, double world_x, double world_y, int t,
                          float rgb_out[3]) {
    const double lx = world_x - s.x0 - t * s.vx;
    const double ly = world_y - s.y0 - t * s.vy;
    const auto cell = [](double a, double pitch) {
        return static_cast<int64_t>(std::floor(a / pitch));
    };
    const int checker =
        static_cast<int>((cell(lx, s.tex_cell) + cell(ly, s.tex_cell)) & 1);
    const double base = s.base_gray + (checker ? 0.22 : -0.22);
    const int64_t nx = cell(lx, s.tex_noise_cell);
    const int64_t ny = cell(ly, s.tex_noise_cell);
    for (int c = 0; c < 3; ++c) {
        const double n = tex_hash01(s.tex_seed, nx, ny, c) - 0.5;
        rgb_out[c] = static_cast<float>(clamp(base + 0.35 * n, 0.0, 1.0));
    }
}

}  // namespace detail

// Analytic trajectory of the surface point seen at frame-0 pixel (u0, v0).
inline TrackPoint gt_trajectory(const SceneSurface& s, double u0, double v0, int t,
                                const Intrinsics& intr) {
    const double z_start = s.z_at(0);
    const Point3 start{(u0 - intr.cu) * z_start / intr.f, (v0 - intr.cv) * z_start / intr.f,
                       z_start};
    const Point3 now{start.x + t * s.vx, start.y + t * s.vy, start.z + t * s.vz};
    return xyz_to_uvd(now, intr);
}

// Occlusion threshold: another surface must win the z-buffer by more than
// this margin before a point counts as occluded.
constexpr double kOcclusionEps = 1e-6;

// Builds the video and ground truth for an explicit surface list. Surface
// ids must equal their index, with surface 0 the (infinite) background.
inline std::pair<RgbdVideo, GroundTruth> generate_scene_from_surfaces(
    std::vector<SceneSurface> surfaces, int T, int H, int W, const Intrinsics& intr);

inline std::pair<RgbdVideo, GroundTruth> generate_scene(const SceneConfig& cfg) {
    cfg.validate();
    const Intrinsics intr = cfg.intrinsics();
    Rng rng(cfg.seed);

    std::vector<SceneSurface> surfaces;
    {
        SceneSurface bg;
        bg.id = 0;
        bg.infinite = true;
        bg.z0 = cfg.z_max;
        bg.vx = cfg.bg_vx;
        bg.vy = cfg.bg_vy;
        bg.vz = cfg.bg_vz;
        bg.tex_seed = cfg.background_seed;
        bg.tex_cell = 6.0 * cfg.z_max / cfg.focal;
        bg.tex_noise_cell = 2.5 * cfg.z_max / cfg.focal;
        bg.base_gray = 0.45;
        surfaces.push_back(bg);
    }
    for (int i = 0; i < cfg.n_objects; ++i) {
        SceneSurface q;
        q.id = i + 1;
        // Depth strictly in front of the background.
        q.z0 = rng.uniform(cfg.z_min, cfg.z_min + 0.8 * (cfg.z_max - cfg.z_min));
        const double px_to_world = q.z0 / cfg.focal;
        const double size_px_x = rng.uniform(cfg.W * 0.25, cfg.W * 0.5);
        const double size_px_y = rng.uniform(cfg.H * 0.25, cfg.H * 0.5);
        q.wx = size_px_x * px_to_world;
        q.wy = size_px_y * px_to_world;
        const double cx_px = rng.uniform(cfg.W * 0.2, cfg.W * 0.8);
        const double cy_px = rng.uniform(cfg.H * 0.2, cfg.H * 0.8);
        q.x0 = (cx_px - intr.cu) * px_to_world - 0.5 * q.wx;
        q.y0 = (cy_px - intr.cv) * px_to_world - 0.5 * q.wy;
        const double bx = cfg.objects_follow_background ? cfg.bg_vx : 0.0;
        const double by = cfg.objects_follow_background ? cfg.bg_vy : 0.0;
        const double bz = cfg.objects_follow_background ? cfg.bg_vz : 0.0;
        q.vx = bx + rng.uniform(-cfg.vel_max_xy, cfg.vel_max_xy);
        q.vy = by + rng.uniform(-cfg.vel_max_xy, cfg.vel_max_xy);
        q.vz = bz + rng.uniform(-cfg.vel_max_z, cfg.vel_max_z);
        q.tex_cell = 6.0 * q.z0 / cfg.focal;
        q.tex_noise_cell = 2.5 * q.z0 / cfg.focal;
        q.tex_seed = derive_seed(cfg.seed, 100 + i);
        q.base_gray = rng.uniform(0.35, 0.65);
        surfaces.push_back(q);
    }
    return generate_scene_from_surfaces(std::move(surfaces), cfg.T, cfg.H, cfg.W, intr);
}

inline std::pair<RgbdVideo, GroundTruth> generate_scene_from_surfaces(
    std::vector<SceneSurface> surfaces, int T, int H, int W, const Intrinsics& intr) {
    if (surfaces.empty() || !surfaces[0].infinite)
        throw ValidationError("generate_scene_from_surfaces: surface 0 must be the background");
    for (size_t i = 0; i < surfaces.size(); ++i) {
        if (surfaces[i].id != static_cast<int>(i))
            throw ValidationError("generate_scene_from_surfaces: surface ids must be indices");
        for (int t = 0; t < T; ++t)
            if (!(surfaces[i].z_at(t) > 0.0))
                throw ValidationError(
                    "generate_scene_from_surfaces: surface depth crosses zero");
    }

    struct CfgShim {
        int T, H, W;
    } cfg{T, H, W};
    RgbdVideo video = RgbdVideo::make(cfg.T, cfg.H, cfg.W, intr);
    for (int t = 0; t < cfg.T; ++t) {
        for (int y = 0; y < cfg.H; ++y) {
            for (int x = 0; x < cfg.W; ++x) {
                auto [sid, z] = detail::zbuffer_winner(surfaces, x, y, t, intr);
                const SceneSurface& s = surfaces[sid];
                const double wx = (x - intr.cu) * z / intr.f;
                const double wy = (y - intr.cv) * z / intr.f;
                float rgb[3];
                detail::surface_color(s, wx, wy, t, rgb);
                for (int c = 0; c < 3; ++c) video.rgb_at(t, y, x, c) = rgb[c];
                video.depth_at(t, y, x) = static_cast<float>(z);
            }
        }
    }

    GroundTruth gt;
    gt.T = cfg.T;
    gt.H = cfg.H;
    gt.W = cfg.W;
    gt.intr = intr;
    gt.surfaces = surfaces;
    gt.tracks = TrackState::make(cfg.T, cfg.H, cfg.W);
    gt.visible.assign(static_cast<size_t>(cfg.T) * cfg.H * cfg.W, 0);
    gt.surface_of_pixel.resize(static_cast<size_t>(cfg.H) * cfg.W);

    for (int y = 0; y < cfg.H; ++y) {
        for (int x = 0; x < cfg.W; ++x) {
            const int idx = y * cfg.W + x;
            auto [sid, z0] = detail::zbuffer_winner(surfaces, x, y, 0, intr);
            gt.surface_of_pixel[idx] = sid;
            const SceneSurface& s = surfaces[sid];
            for (int t = 0; t < cfg.T; ++t) {
                TrackPoint p = gt_trajectory(s, x, y, t, intr);
                bool vis = p.u >= 0.0 && p.u <= cfg.W - 1 && p.v >= 0.0 && p.v <= cfg.H - 1;
                if (vis) {
                    auto [wid, wz] = detail::zbuffer_winner(surfaces, p.u, p.v, t, intr);
                    if (wid != sid && wz < p.d - kOcclusionEps) vis = false;
                }
                p.o = vis ? 1.0 : 0.0;
                if (t == 0) p.o = 1.0;
                gt.tracks.at(t, idx) = p;
                gt.visible[static_cast<size_t>(t) * cfg.H * cfg.W + idx] = p.o >= 0.5 ? 1 : 0;
            }
        }
    }
    return {std::move(video), std::move(gt)};
}

// ------------------------------------------------------------------
// Oracle refiner: a drop-in stand-in for a trained refinement network.
// Each selected trajectory moves step_fraction of the way from its current
// (u, v, d) toward ground truth; visibility snaps to ground truth. Points
// not selected are left untouched. Frame 0 is fixed by construction
// (ground truth equals the origin there).
// ------------------------------------------------------------------
inline void oracle_refiner(TrackState& state, const GroundTruth& gt, double step_fraction,
                           std::span<const int> selected = {}) {
    if (!(step_fraction > 0.0) || step_fraction > 1.0)
        throw ValidationError("oracle_refiner: step_fraction must be in (0,1]");
    std::vector<int> all;
    if (selected.empty()) {
        all.resize(state.size());
        for (int i = 0; i < state.size(); ++i) all[i] = i;
        selected = all;
    }
    for (int i : selected) {
        const double u1 = state.origin_u(i);
        const double v1 = state.origin_v(i);
        const long ui = std::lround(u1);
        const long vi = std::lround(v1);
        if (std::abs(u1 - ui) > 1e-9 || std::abs(v1 - vi) > 1e-9 || ui < 0 || ui >= gt.W ||
            vi < 0 || vi >= gt.H)
            throw LookupError("oracle_refiner: trajectory origin (" + std::to_string(u1) + "," +
                              std::to_string(v1) + ") is not on the ground-truth grid");
        const int gidx = static_cast<int>(vi) * gt.W + static_cast<int>(ui);
        for (int t = 0; t < state.num_frames; ++t) {
            TrackPoint& p = state.at(t, i);
            const TrackPoint& g = gt.tracks.at(t, gidx);
            p.u += step_fraction * (g.u - p.u);
            p.v += step_fraction * (g.v - p.v);
            p.d += step_fraction * (g.d - p.d);
            p.o = g.o;
        }
    }
}

}  // namespace densetrack
