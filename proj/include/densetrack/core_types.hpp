// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared geometric types, the coordinate convention, and on-disk formats.
//
// Coordinate convention used by every module: u is the column (width) axis,
// v is the row (height) axis, origin at the top-left pixel center. Depth d
// is raw scene depth (not inverse depth). Visibility o is a probability in
// [0,1]; binarize at 0.5 for metrics.
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "densetrack/common.hpp"

namespace densetrack {

struct Intrinsics {
    double f = 1.0;   // focal length, pixels
    double cu = 0.0;  // principal point, column
    double cv = 0.0;  // principal point, row
};

struct Point3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

// One trajectory sample: position (u,v), depth d, visibility o.
struct TrackPoint {
    double u = 0.0;
    double v = 0.0;
    double d = 1.0;
    double o = 1.0;
};

// Pinhole back-projection: pixel + depth -> camera-frame 3D point.
inline Point3 uvd_to_xyz(const TrackPoint& p, const Intrinsics& intr) {
    if (!(p.d > 0.0) || !std::isfinite(p.d))
        throw std::domain_error("uvd_to_xyz: depth must be positive and finite");
    if (!(intr.f > 0.0)) throw std::domain_error("uvd_to_xyz: focal length must be positive");
    return Point3{(p.u - intr.cu) * p.d / intr.f, (p.v - intr.cv) * p.d / intr.f, p.d};
}

// Forward projection, the inverse of uvd_to_xyz.
inline TrackPoint xyz_to_uvd(const Point3& q, const Intrinsics& intr, double o = 1.0) {
    if (!(q.z > 0.0)) throw std::domain_error("xyz_to_uvd: z must be positive");
    return TrackPoint{q.x * intr.f / q.z + intr.cu, q.y * intr.f / q.z + intr.cv, q.z, o};
}

// ------------------------------------------------------------------
// TrackState: T x N trajectory samples, frame-major. When the
// trajectories lie on a regular grid, rows*cols == N; a flat set uses
// rows=1, cols=N. Frame 0 holds the query pixels (o == 1 there).
// ------------------------------------------------------------------
struct TrackState {
    int num_frames = 0;
    int rows = 0;
    int cols = 0;
    std::vector<TrackPoint> points;  // size num_frames * rows * cols, frame-major

    int size() const { return rows * cols; }

    TrackPoint& at(int t, int i) { return points[static_cast<size_t>(t) * size() + i]; }
    const TrackPoint& at(int t, int i) const {
        return points[static_cast<size_t>(t) * size() + i];
    }

    double origin_u(int i) const { return points[i].u; }
    double origin_v(int i) const { return points[i].v; }

    static TrackState make(int num_frames, int rows, int cols) {
        TrackState s;
        s.num_frames = num_frames;
        s.rows = rows;
        s.cols = cols;
        s.points.assign(static_cast<size_t>(num_frames) * rows * cols, TrackPoint{});
        return s;
    }

    void validate() const {
        if (num_frames < 0 || rows < 0 || cols < 0)
            throw ValidationError("TrackState: negative dimensions");
        if (points.size() != static_cast<size_t>(num_frames) * size())
            throw ValidationError("TrackState: point buffer does not match dimensions");
        for (size_t k = 0; k < points.size(); ++k) {
            const TrackPoint& p = points[k];
            if (!std::isfinite(p.u) || !std::isfinite(p.v) || !std::isfinite(p.d) ||
                !std::isfinite(p.o))
                throw ValidationError("TrackState: non-finite entry");
            if (!(p.d > 0.0)) throw ValidationError("TrackState: depth must be positive");
        }
        if (num_frames > 0) {
            for (int i = 0; i < size(); ++i) {
                if (points[i].o != 1.0)
                    throw ValidationError("TrackState: frame-0 visibility must be 1");
            }
        }
    }
};

// ------------------------------------------------------------------
// Schedule: per-iteration subsampling factors (s_1, ..., s_K).
// Nonincreasing, powers of two, final factor 1.
// ------------------------------------------------------------------
struct Schedule {
    std::vector<int> factors;

    int iterations() const { return static_cast<int>(factors.size()); }

    void validate() const {
        if (factors.empty()) throw ValidationError("Schedule: empty");
        for (size_t k = 0; k < factors.size(); ++k) {
            if (!is_power_of_two(factors[k]))
                throw ValidationError("Schedule: factor " + std::to_string(factors[k]) +
                                      " is not a positive power of two");
            if (k > 0 && factors[k] > factors[k - 1])
                throw ValidationError("Schedule: factors must be nonincreasing");
        }
        if (factors.back() != 1) throw ValidationError("Schedule: final factor must be 1");
    }

    std::string str() const {
        std::string s;
        for (size_t k = 0; k < factors.size(); ++k) {
            if (k) s += ',';
            s += std::to_string(factors[k]);
        }
        return s;
    }
};

inline Schedule parse_schedule(const std::string& text) {
    Schedule sch;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        sch.factors.push_back(std::stoi(text.substr(pos, next - pos)));
        pos = next + 1;
    }
    sch.validate();
    return sch;
}

// ------------------------------------------------------------------
// SampleSet: which grid cells are tracked this iteration, which are
// interpolation queries, and each query's 4 tracked neighbors.
// ------------------------------------------------------------------
struct SampleSet {
    std::vector<int> tracked_ids;
    std::vector<int> query_ids;
    std::vector<std::array<int, 4>> neighbor_map;  // parallel to query_ids

    void validate(int grid_cells) const {
        if (tracked_ids.size() + query_ids.size() != static_cast<size_t>(grid_cells))
            throw ValidationError("SampleSet: tracked+query must cover the grid");
        std::vector<uint8_t> seen(grid_cells, 0);
        for (int id : tracked_ids) {
            if (id < 0 || id >= grid_cells || seen[id])
                throw ValidationError("SampleSet: bad or duplicate tracked id");
            seen[id] = 1;
        }
        for (int id : query_ids) {
            if (id < 0 || id >= grid_cells || seen[id])
                throw ValidationError("SampleSet: query overlaps tracked or duplicates");
            seen[id] = 2;
        }
        if (neighbor_map.size() != query_ids.size())
            throw ValidationError("SampleSet: neighbor_map size mismatch");
        for (const auto& nb : neighbor_map) {
            for (int j = 0; j < 4; ++j) {
                if (nb[j] < 0 || nb[j] >= grid_cells || seen[nb[j]] != 1)
                    throw ValidationError("SampleSet: neighbor is not a tracked cell");
                for (int l = j + 1; l < 4; ++l)
                    if (nb[j] == nb[l])
                        throw ValidationError("SampleSet: neighbors must be distinct");
            }
        }
    }
};

// ------------------------------------------------------------------
// RgbdVideo: T frames of RGB in [0,1] plus positive depth, with pinhole
// intrinsics. Stored as f32 to match the on-disk format.
// ------------------------------------------------------------------
struct RgbdVideo {
    int T = 0, H = 0, W = 0;
    std::vector<float> rgb;    // T*H*W*3
    std::vector<float> depth;  // T*H*W
    Intrinsics intr;

    float rgb_at(int t, int y, int x, int c) const {
        return rgb[((static_cast<size_t>(t) * H + y) * W + x) * 3 + c];
    }
    float& rgb_at(int t, int y, int x, int c) {
        return rgb[((static_cast<size_t>(t) * H + y) * W + x) * 3 + c];
    }
    float depth_at(int t, int y, int x) const {
        return depth[(static_cast<size_t>(t) * H + y) * W + x];
    }
    float& depth_at(int t, int y, int x) {
        return depth[(static_cast<size_t>(t) * H + y) * W + x];
    }

    static RgbdVideo make(int T, int H, int W, Intrinsics intr) {
        RgbdVideo v;
        v.T = T;
        v.H = H;
        v.W = W;
        v.intr = intr;
        v.rgb.assign(static_cast<size_t>(T) * H * W * 3, 0.0f);
        v.depth.assign(static_cast<size_t>(T) * H * W, 1.0f);
        return v;
    }

    void validate() const {
        if (T < 2) throw ValidationError("RgbdVideo: need at least 2 frames");
        if (H < 8 || W < 8) throw ValidationError("RgbdVideo: frames must be at least 8x8");
        if (rgb.size() != static_cast<size_t>(T) * H * W * 3 ||
            depth.size() != static_cast<size_t>(T) * H * W)
            throw ValidationError("RgbdVideo: buffer sizes do not match dimensions");
        for (float x : rgb)
            if (!std::isfinite(x) || x < 0.0f || x > 1.0f)
                throw ValidationError("RgbdVideo: RGB values must be finite and in [0,1]");
        for (float z : depth)
            if (!std::isfinite(z) || !(z > 0.0f))
                throw ValidationError("RgbdVideo: depth values must be positive and finite");
    }
};

// ------------------------------------------------------------------
// Binary track file, little-endian:
//   magic "DTRK", u32 version=1, u32 T, u32 N, u32 rows, u32 cols,
//   then T*N records of 4 x f64 (u, v, d, o), frame-major.
// ------------------------------------------------------------------
namespace detail {

inline void put_u32(std::string& out, uint32_t x) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((x >> (8 * k)) & 0xFF));
}

inline uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_f64(std::string& out, double x) {
    uint64_t bits;
    std::memcpy(&bits, &x, 8);
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

inline double get_f64(const unsigned char* p) {
    uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<uint64_t>(p[k]) << (8 * k);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

inline void write_file_bytes(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

constexpr size_t kTrackHeaderBytes = 4 + 4 * 5;  // magic + 5 u32 fields
constexpr size_t kTrackRecordBytes = 4 * 8;      // 4 f64 per point

inline void save_tracks(const TrackState& state, const std::string& path) {
    state.validate();
    std::string out;
    out.reserve(kTrackHeaderBytes + state.points.size() * kTrackRecordBytes);
    out += "DTRK";
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<uint32_t>(state.num_frames));
    detail::put_u32(out, static_cast<uint32_t>(state.size()));
    detail::put_u32(out, static_cast<uint32_t>(state.rows));
    detail::put_u32(out, static_cast<uint32_t>(state.cols));
    for (const TrackPoint& p : state.points) {
        detail::put_f64(out, p.u);
        detail::put_f64(out, p.v);
        detail::put_f64(out, p.d);
        detail::put_f64(out, p.o);
    }
    detail::write_file_bytes(path, out);
}

inline TrackState load_tracks(const std::string& path) {
    std::string data = detail::read_file_bytes(path);
    if (data.size() < kTrackHeaderBytes || data.compare(0, 4, "DTRK") != 0)
        throw IoError("not a track file: " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    uint32_t version = detail::get_u32(p + 4);
    if (version != 1) throw IoError("unsupported track file version in " + path);
    TrackState s;
    s.num_frames = static_cast<int>(detail::get_u32(p + 8));
    uint32_t n = detail::get_u32(p + 12);
    s.rows = static_cast<int>(detail::get_u32(p + 16));
    s.cols = static_cast<int>(detail::get_u32(p + 20));
    if (static_cast<uint32_t>(s.rows) * s.cols != n)
        throw IoError("track file rows*cols != N: " + path);
    size_t expect = kTrackHeaderBytes + static_cast<size_t>(s.num_frames) * n * kTrackRecordBytes;
    if (data.size() != expect) throw IoError("track file truncated or oversized: " + path);
    s.points.resize(static_cast<size_t>(s.num_frames) * n);
    const unsigned char* rec = p + kTrackHeaderBytes;
    for (auto& pt : s.points) {
        pt.u = detail::get_f64(rec);
        pt.v = detail::get_f64(rec + 8);
        pt.d = detail::get_f64(rec + 16);
        pt.o = detail::get_f64(rec + 24);
        rec += kTrackRecordBytes;
    }
    return s;
}

// ------------------------------------------------------------------
// Video directory: manifest.json {T, H, W, f, cu, cv} plus per-frame
// raw f32 tensors rgb_%04d.f32 (HxWx3) and depth_%04d.f32 (HxW).
// ------------------------------------------------------------------
inline void save_video(const RgbdVideo& video, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {{"T", video.T},         {"H", video.H},
                               {"W", video.W},         {"f", video.intr.f},
                               {"cu", video.intr.cu},  {"cv", video.intr.cv}};
    detail::write_file_bytes(dir + "/manifest.json", manifest.dump(2) + "\n");
    const size_t rgb_frame = static_cast<size_t>(video.H) * video.W * 3;
    const size_t depth_frame = static_cast<size_t>(video.H) * video.W;
    char name[32];
    for (int t = 0; t < video.T; ++t) {
        std::snprintf(name, sizeof(name), "/rgb_%04d.f32", t);
        std::string blob(reinterpret_cast<const char*>(video.rgb.data() + t * rgb_frame),
                         rgb_frame * sizeof(float));
        detail::write_file_bytes(dir + name, blob);
        std::snprintf(name, sizeof(name), "/depth_%04d.f32", t);
        std::string dblob(reinterpret_cast<const char*>(video.depth.data() + t * depth_frame),
                          depth_frame * sizeof(float));
        detail::write_file_bytes(dir + name, dblob);
    }
}

inline RgbdVideo load_video(const std::string& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(detail::read_file_bytes(dir + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest in " + dir + ": " + e.what());
    }
    RgbdVideo v = RgbdVideo::make(manifest.at("T").get<int>(), manifest.at("H").get<int>(),
                                  manifest.at("W").get<int>(),
                                  Intrinsics{manifest.at("f").get<double>(),
                                             manifest.at("cu").get<double>(),
                                             manifest.at("cv").get<double>()});
    const size_t rgb_frame = static_cast<size_t>(v.H) * v.W * 3;
    const size_t depth_frame = static_cast<size_t>(v.H) * v.W;
    char name[32];
    for (int t = 0; t < v.T; ++t) {
        std::snprintf(name, sizeof(name), "/rgb_%04d.f32", t);
        std::string blob = detail::read_file_bytes(dir + name);
        if (blob.size() != rgb_frame * sizeof(float))
            throw IoError("rgb frame size mismatch: " + dir + name);
        std::memcpy(v.rgb.data() + t * rgb_frame, blob.data(), blob.size());
        std::snprintf(name, sizeof(name), "/depth_%04d.f32", t);
        std::string dblob = detail::read_file_bytes(dir + name);
        if (dblob.size() != depth_frame * sizeof(float))
            throw IoError("depth frame size mismatch: " + dir + name);
        std::memcpy(v.depth.data() + t * depth_frame, dblob.data(), dblob.size());
    }
    v.validate();
    return v;
}

}  // namespace densetrack
