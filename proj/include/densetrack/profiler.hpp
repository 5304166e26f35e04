// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stage-level wall-clock and unit counters. Counters are deterministic;
// wall times are best effort. Stages are disjoint: the token_assembly row
// covers assembly work excluding the correlation sub-stages, so stage sums
// stay below the total run time.
#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "densetrack/common.hpp"

namespace densetrack {

enum class Stage {
    feature_extraction,
    corr_multiscale,
    corr_4d,
    corr_project,
    token_assembly,
    phi_forward,
    interpolation,
    upsample,
};

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::feature_extraction: return "feature_extraction";
        case Stage::corr_multiscale: return "corr_multiscale";
        case Stage::corr_4d: return "corr_4d";
        case Stage::corr_project: return "corr_project";
        case Stage::token_assembly: return "token_assembly";
        case Stage::phi_forward: return "phi_forward";
        case Stage::interpolation: return "interpolation";
        case Stage::upsample: return "upsample";
    }
    return "?";
}

struct StageTiming {
    Stage stage;
    int iter = 0;          // 0 = outside the iteration loop
    long long units = 0;   // tokens or points processed
    double wall_ms = 0.0;
};

class Profiler {
  public:
    using Clock = std::chrono::steady_clock;

    static double now_ms() {
        return std::chrono::duration<double, std::milli>(Clock::now().time_since_epoch())
            .count();
    }

    void add(Stage stage, int iter, long long units, double wall_ms) {
        for (auto& row : rows_) {
            if (row.stage == stage && row.iter == iter) {
                row.units += units;
                row.wall_ms += wall_ms;
                return;
            }
        }
        rows_.push_back(StageTiming{stage, iter, units, wall_ms});
    }

    const std::vector<StageTiming>& rows() const { return rows_; }

    long long total_units(Stage stage) const {
        long long acc = 0;
        for (const auto& row : rows_)
            if (row.stage == stage) acc += row.units;
        return acc;
    }

    double total_ms(Stage stage) const {
        double acc = 0.0;
        for (const auto& row : rows_)
            if (row.stage == stage) acc += row.wall_ms;
        return acc;
    }

    double total_ms() const {
        double acc = 0.0;
        for (const auto& row : rows_) acc += row.wall_ms;
        return acc;
    }

    void clear() { rows_.clear(); }

  private:
    std::vector<StageTiming> rows_;
};

// Accumulates elapsed time into a profiler row on destruction.
class StageTimer {
  public:
    StageTimer(Profiler* prof, Stage stage, int iter, long long units = 0)
        : prof_(prof), stage_(stage), iter_(iter), units_(units),
          start_(Profiler::Clock::now()) {}

    void set_units(long long units) { units_ = units; }

    ~StageTimer() {
        if (!prof_) return;
        const double ms =
            std::chrono::duration<double, std::milli>(Profiler::Clock::now() - start_).count();
        prof_->add(stage_, iter_, units_, ms);
    }

    StageTimer(const StageTimer&) = delete;
    StageTimer& operator=(const StageTimer&) = delete;

  private:
    Profiler* prof_;
    Stage stage_;
    int iter_;
    long long units_;
    Profiler::Clock::time_point start_;
};

}  // namespace densetrack
