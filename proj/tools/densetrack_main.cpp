// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: scene generation, tracking, schedule benchmarks,
// strategy comparison, flow spectra, stage profiling, and track evaluation.
// Exit codes: 0 success, 2 usage error, 1 runtime failure.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "densetrack/metrics.hpp"
#include "densetrack/spectral.hpp"
#include "densetrack/strategy.hpp"
#include "densetrack/tracker.hpp"

using namespace densetrack;

namespace {

struct CommonTrackArgs {
    std::string video_dir;
    std::string weights_path;
    std::string gt_path;
    std::string schedule = "8,4,2,1";
    std::string sampling = "uniform";
    std::string interp = "learnable";
    std::string refiner = "transformer";
    std::string preset = "default";
    int stride = 0;  // 0 = keep the preset / weights-file value
    uint64_t seed = 1;
    uint64_t weights_seed = 1234;
};

EngineConfig preset_config(const std::string& preset) {
    if (preset == "default") return EngineConfig{};
    if (preset == "compact") {
        EngineConfig cfg;
        cfg.feat_channels = 16;
        cfg.n_levels = 2;
        cfg.corr.radius = 2;
        cfg.corr.scales = {0, 1};
        cfg.n_freq = 2;
        cfg.d_tok = 136;
        cfg.phi.heads = 4;
        cfg.interp.d_head = 8;
        return cfg;
    }
    throw ConfigError("unknown preset: " + preset);
}

InterpKind parse_interp(const std::string& s) {
    if (s == "nearest") return InterpKind::nearest;
    if (s == "bilinear") return InterpKind::bilinear;
    if (s == "learnable") return InterpKind::learnable;
    throw ConfigError("unknown interpolator: " + s);
}

SamplingKind parse_sampling(const std::string& s) {
    if (s == "uniform") return SamplingKind::uniform;
    if (s == "random") return SamplingKind::random;
    if (s == "keypoint") return SamplingKind::keypoint;
    throw ConfigError("unknown sampling strategy: " + s);
}

void parse_refiner(const std::string& s, EngineConfig& cfg) {
    if (s == "transformer") {
        cfg.refiner = RefinerKind::transformer;
        return;
    }
    if (s.rfind("oracle", 0) == 0) {
        cfg.refiner = RefinerKind::oracle;
        cfg.oracle_step = 1.0;
        const size_t colon = s.find(':');
        if (colon != std::string::npos) cfg.oracle_step = std::stod(s.substr(colon + 1));
        return;
    }
    throw ConfigError("unknown refiner: " + s + " (expected transformer or oracle:<step>)");
}

// Resolves config + weights from the common arguments. A weights file wins
// over the preset; CLI flags then override the run-level choices.
std::pair<EngineConfig, EngineWeights> resolve_engine(const CommonTrackArgs& args) {
    EngineConfig cfg;
    std::optional<EngineWeights> weights;
    if (!args.weights_path.empty()) {
        auto [fcfg, fweights] = load_engine_weights(args.weights_path);
        cfg = fcfg;
        weights = std::move(fweights);
    } else {
        cfg = preset_config(args.preset);
    }
    cfg.schedule = parse_schedule(args.schedule);
    cfg.sampling = parse_sampling(args.sampling);
    cfg.interp_kind = parse_interp(args.interp);
    parse_refiner(args.refiner, cfg);
    cfg.seed = args.seed;
    if (args.stride > 0) {
        if (weights) throw ConfigError("--stride cannot override a loaded weights file");
        cfg.r = args.stride;
    }
    cfg.validate();
    if (!weights) weights = EngineWeights::seeded(cfg, args.weights_seed);
    return {cfg, std::move(*weights)};
}

std::optional<GroundTruth> load_gt_tracks(const std::string& explicit_path,
                                          const std::string& video_dir,
                                          const RgbdVideo& video) {
    std::string path = explicit_path;
    if (path.empty()) {
        const std::string candidate = video_dir + "/gt.dtrk";
        if (std::ifstream(candidate).good()) path = candidate;
    }
    if (path.empty()) return std::nullopt;
    GroundTruth gt;
    gt.tracks = load_tracks(path);
    gt.T = gt.tracks.num_frames;
    gt.H = gt.tracks.rows;
    gt.W = gt.tracks.cols;
    gt.intr = video.intr;
    gt.visible.resize(static_cast<size_t>(gt.T) * gt.H * gt.W);
    for (int t = 0; t < gt.T; ++t)
        for (int i = 0; i < gt.tracks.size(); ++i)
            gt.visible[static_cast<size_t>(t) * gt.H * gt.W + i] =
                gt.tracks.at(t, i).o >= 0.5 ? 1 : 0;
    return gt;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows, const std::string& meta) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << header << "\n";
    for (const std::string& row : rows) out << row << "\n";
    out << "# " << meta << "\n";
    if (!out) throw IoError("write failed: " + path);
}

std::string fmt(double x) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

std::string dash_join(const Schedule& s) {
    std::string out;
    for (size_t k = 0; k < s.factors.size(); ++k) {
        if (k) out += '-';
        out += std::to_string(s.factors[k]);
    }
    return out;
}

// ---------------------------------------------------------------
// Subcommand bodies.
// ---------------------------------------------------------------

int cmd_gen_data(const SceneConfig& scene, const std::string& out_dir) {
    auto [video, gt] = generate_scene(scene);
    save_video(video, out_dir);
    save_tracks(gt.tracks, out_dir + "/gt.dtrk");
    std::cout << "wrote " << out_dir << " (" << video.T << " frames, " << video.H << "x"
              << video.W << ")\n";
    return 0;
}

int cmd_track(const CommonTrackArgs& args, const std::string& out_path,
              const std::string& csv_path, const std::string& save_weights) {
    RgbdVideo video = load_video(args.video_dir);
    auto [cfg, weights] = resolve_engine(args);
    if (!save_weights.empty()) save_engine_weights(save_weights, cfg, weights);
    std::optional<GroundTruth> gt = load_gt_tracks(args.gt_path, args.video_dir, video);
    if (cfg.refiner == RefinerKind::oracle && !gt)
        throw ConfigError("oracle refiner needs ground truth (--gt or <video>/gt.dtrk)");
    Profiler prof;
    RunResult res = run_tracking(video, cfg, weights, gt ? &*gt : nullptr, &prof);
    save_tracks(res.full, out_path);
    if (!csv_path.empty()) {
        std::vector<std::string> rows;
        for (const auto& r : res.iter_rows) {
            std::string row = std::to_string(r.iter) + "," + std::to_string(r.tokens) + "," +
                              fmt(r.wall_ms) + ",";
            row += r.epe_tracked ? fmt(*r.epe_tracked) : std::string();
            row += ",";
            row += r.epe_interp ? fmt(*r.epe_interp) : std::string();
            rows.push_back(row);
        }
        write_csv(csv_path, "iter,tokens,wall_ms,epe_tracked,epe_interp", rows,
                  "seed=" + std::to_string(cfg.seed) + ", schedule=" + cfg.schedule.str());
    }
    std::cout << "tracked " << res.full.size() << " pixels over " << res.full.num_frames
              << " frames; total tokens " << res.total_tokens << "\n";
    return 0;
}

int cmd_bench_schedules(const CommonTrackArgs& args, const std::string& schedules_arg,
                        const std::string& out_path) {
    RgbdVideo video = load_video(args.video_dir);
    std::optional<GroundTruth> gt = load_gt_tracks(args.gt_path, args.video_dir, video);
    std::vector<std::string> rows;
    size_t pos = 0;
    while (pos < schedules_arg.size()) {
        size_t next = schedules_arg.find(';', pos);
        if (next == std::string::npos) next = schedules_arg.size();
        CommonTrackArgs one = args;
        one.schedule = schedules_arg.substr(pos, next - pos);
        pos = next + 1;
        auto [cfg, weights] = resolve_engine(one);
        if (cfg.refiner == RefinerKind::oracle && !gt)
            throw ConfigError("oracle refiner needs ground truth");
        const double t0 = Profiler::now_ms();
        RunResult res = run_tracking(video, cfg, weights, gt ? &*gt : nullptr);
        const double wall = Profiler::now_ms() - t0;
        std::string row = dash_join(cfg.schedule) + "," + std::to_string(res.total_tokens) +
                          "," + fmt(wall) + ",";
        if (gt) {
            EpeResult e = epe(res.full, gt->tracks);
            row += fmt(e.all);
            row += ",";
            row += e.vis ? fmt(*e.vis) : std::string();
            row += ",";
            row += e.occ ? fmt(*e.occ) : std::string();
        } else {
            row += ",,";
        }
        rows.push_back(row);
    }
    write_csv(out_path, "schedule,tokens,wall_ms,epe_all,epe_vis,epe_occ", rows,
              "seed=" + std::to_string(args.seed) + ", schedules=" + schedules_arg);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

// The strategy harness needs analytic surface identities (for the spatial
// strategy's majority vote), so it regenerates the scene from its seed
// rather than consuming a video directory.
int cmd_strategy_compare_seeded(const SceneConfig& scene, double step,
                                const std::string& out_path) {
    auto [video, gt] = generate_scene(scene);
    StrategyOptions opt;
    opt.step = step;
    std::vector<StrategyRow> table = strategy_compare(video, gt, opt);
    std::vector<std::string> rows;
    for (const auto& r : table) {
        std::string row = r.strategy + "," + std::to_string(r.factor) + "," + r.interp + ",";
        row += r.epe_all ? fmt(*r.epe_all) : std::string();
        row += ",";
        row += r.apd ? fmt(*r.apd) : std::string();
        row += "," + fmt(r.wall_ms) + "," + std::to_string(r.units) + "," + r.note;
        rows.push_back(row);
    }
    write_csv(out_path, "strategy,factor,interp,epe_all,apd3d,wall_ms,units,note", rows,
              "seed=" + std::to_string(scene.seed) + ", step=" + fmt(step));
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_spectrum(const CommonTrackArgs& args, int block, int frame,
                 const std::string& out_prefix) {
    RgbdVideo video = load_video(args.video_dir);
    auto [cfg, weights] = resolve_engine(args);
    std::optional<GroundTruth> gt = load_gt_tracks(args.gt_path, args.video_dir, video);
    if (cfg.refiner == RefinerKind::oracle && !gt)
        throw ConfigError("oracle refiner needs ground truth");
    RunResult res = run_tracking(video, cfg, weights, gt ? &*gt : nullptr);
    const int t = frame < 0 ? video.T - 1 : frame;
    const auto write_profile = [&](const TrackState& s, const std::string& tag) {
        FlowField flow = flow_from_state(s, t);
        std::vector<double> prof = flow_spectrum(flow, block);
        std::vector<std::string> rows;
        for (size_t k = 0; k < prof.size(); ++k)
            rows.push_back(std::to_string(k) + "," + fmt(prof[k]));
        write_csv(out_prefix + "_" + tag + ".csv", "freq_index,mean_abs_coeff", rows,
                  "seed=" + std::to_string(cfg.seed) + ", schedule=" + cfg.schedule.str() +
                      ", frame=" + std::to_string(t) + ", block=" + std::to_string(block));
    };
    for (size_t k = 0; k < res.iter_states.size(); ++k)
        write_profile(res.iter_states[k], "iter" + std::to_string(k + 1));
    if (gt) {
        // grid-resolution ground-truth flow for reference
        TrackState gt_grid = TrackState::make(video.T, res.grid.rows, res.grid.cols);
        const int r = cfg.r, off = cfg.r / 2;
        for (int gr = 0; gr < res.grid.rows; ++gr)
            for (int gc = 0; gc < res.grid.cols; ++gc)
                for (int tt = 0; tt < video.T; ++tt)
                    gt_grid.at(tt, gr * res.grid.cols + gc) =
                        gt->tracks.at(tt, (gr * r + off) * gt->W + gc * r + off);
        write_profile(gt_grid, "gt");
    }
    std::cout << "wrote " << out_prefix << "_iter*.csv\n";
    return 0;
}

int cmd_profile(const CommonTrackArgs& args, const std::string& out_path) {
    RgbdVideo video = load_video(args.video_dir);
    auto [cfg, weights] = resolve_engine(args);
    std::optional<GroundTruth> gt = load_gt_tracks(args.gt_path, args.video_dir, video);
    if (cfg.refiner == RefinerKind::oracle && !gt)
        throw ConfigError("oracle refiner needs ground truth");
    std::vector<StageTiming> rows = profile_run(video, cfg, weights, gt ? &*gt : nullptr);
    std::vector<std::string> lines;
    for (const auto& r : rows)
        lines.push_back(std::string(stage_name(r.stage)) + "," + std::to_string(r.iter) + "," +
                        std::to_string(r.units) + "," + fmt(r.wall_ms));
    write_csv(out_path, "stage,iter,units,wall_ms", lines,
              "seed=" + std::to_string(cfg.seed) + ", schedule=" + cfg.schedule.str());
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& video_dir, const std::string& out_path) {
    TrackState pred = load_tracks(pred_path);
    TrackState gt = load_tracks(gt_path);
    Intrinsics intr{1.0, 0.0, 0.0};
    if (!video_dir.empty()) intr = load_video(video_dir).intr;
    std::vector<std::string> rows;
    EpeResult e = epe(pred, gt);
    rows.push_back("epe,all," + fmt(e.all));
    if (e.vis) rows.push_back("epe,vis," + fmt(*e.vis));
    if (e.occ) rows.push_back("epe,occ," + fmt(*e.occ));
    rows.push_back("iou,-," + fmt(visibility_iou(pred, gt)));
    AllVis a = apd3d(pred, gt, intr);
    rows.push_back("apd3d,all," + fmt(a.all));
    rows.push_back("apd3d,vis," + fmt(a.vis));
    AllVis aj = average_jaccard(pred, gt, intr);
    rows.push_back("aj,all," + fmt(aj.all));
    rows.push_back("aj,vis," + fmt(aj.vis));
    rows.push_back("oa,-," + fmt(occlusion_accuracy(pred, gt)));
    write_csv(out_path, "metric,split,value", rows, "pred=" + pred_path + ", gt=" + gt_path);
    for (const std::string& r : rows) std::cout << r << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"densetrack: coarse-to-fine dense RGB-D point tracking"};
    app.require_subcommand(1);

    // ---- gen-data ----
    SceneConfig scene;
    std::string out_dir;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic RGB-D scene");
    gen->add_option("--seed", scene.seed);
    gen->add_option("--frames", scene.T);
    gen->add_option("--height", scene.H);
    gen->add_option("--width", scene.W);
    gen->add_option("--objects", scene.n_objects);
    gen->add_option("--zmin", scene.z_min);
    gen->add_option("--zmax", scene.z_max);
    gen->add_option("--focal", scene.focal);
    gen->add_option("--vel-xy", scene.vel_max_xy);
    gen->add_option("--vel-z", scene.vel_max_z);
    gen->add_option("--bg-vz", scene.bg_vz);
    gen->add_flag("--follow-bg", scene.objects_follow_background);
    gen->add_option("--out", out_dir)->required();

    // ---- track ----
    CommonTrackArgs targs;
    std::string track_out, track_csv, save_weights;
    auto* track = app.add_subcommand("track", "run the tracking engine");
    track->add_option("--video", targs.video_dir)->required();
    track->add_option("--weights", targs.weights_path);
    track->add_option("--gt", targs.gt_path);
    track->add_option("--schedule", targs.schedule);
    track->add_option("--sampling", targs.sampling);
    track->add_option("--interp", targs.interp);
    track->add_option("--refiner", targs.refiner);
    track->add_option("--preset", targs.preset);
    track->add_option("--stride", targs.stride);
    track->add_option("--seed", targs.seed);
    track->add_option("--weights-seed", targs.weights_seed);
    track->add_option("--out", track_out)->required();
    track->add_option("--csv", track_csv);
    track->add_option("--save-weights", save_weights);

    // ---- bench-schedules ----
    CommonTrackArgs bargs;
    std::string schedules = "8,4,2,1;1,1,1,1";
    std::string bench_out;
    auto* bench = app.add_subcommand("bench-schedules", "compare subsampling schedules");
    bench->add_option("--video", bargs.video_dir)->required();
    bench->add_option("--weights", bargs.weights_path);
    bench->add_option("--gt", bargs.gt_path);
    bench->add_option("--schedules", schedules);
    bench->add_option("--sampling", bargs.sampling);
    bench->add_option("--interp", bargs.interp);
    bench->add_option("--refiner", bargs.refiner);
    bench->add_option("--preset", bargs.preset);
    bench->add_option("--stride", bargs.stride);
    bench->add_option("--seed", bargs.seed);
    bench->add_option("--weights-seed", bargs.weights_seed);
    bench->add_option("--out", bench_out)->required();

    // ---- strategy-compare ----
    SceneConfig sscene;
    double sstep = 1.0;
    std::string strat_out;
    auto* strat = app.add_subcommand("strategy-compare",
                                     "compare cost-reduction strategies on a seeded scene");
    strat->add_option("--scene-seed", sscene.seed);
    strat->add_option("--frames", sscene.T);
    strat->add_option("--height", sscene.H);
    strat->add_option("--width", sscene.W);
    strat->add_option("--objects", sscene.n_objects);
    strat->add_option("--zmin", sscene.z_min);
    strat->add_option("--zmax", sscene.z_max);
    strat->add_option("--vel-xy", sscene.vel_max_xy);
    strat->add_option("--vel-z", sscene.vel_max_z);
    strat->add_option("--bg-vz", sscene.bg_vz);
    strat->add_flag("--follow-bg", sscene.objects_follow_background);
    strat->add_option("--step", sstep);
    strat->add_option("--out", strat_out)->required();

    // ---- spectrum ----
    CommonTrackArgs pargs;
    int block = 8, frame = -1;
    std::string spec_prefix;
    auto* spec = app.add_subcommand("spectrum", "block-DCT spectra of per-iteration flows");
    spec->add_option("--video", pargs.video_dir)->required();
    spec->add_option("--weights", pargs.weights_path);
    spec->add_option("--gt", pargs.gt_path);
    spec->add_option("--schedule", pargs.schedule);
    spec->add_option("--sampling", pargs.sampling);
    spec->add_option("--interp", pargs.interp);
    spec->add_option("--refiner", pargs.refiner);
    spec->add_option("--preset", pargs.preset);
    spec->add_option("--stride", pargs.stride);
    spec->add_option("--seed", pargs.seed);
    spec->add_option("--weights-seed", pargs.weights_seed);
    spec->add_option("--block", block);
    spec->add_option("--frame", frame);
    spec->add_option("--out-prefix", spec_prefix)->required();

    // ---- profile ----
    CommonTrackArgs prof_args;
    std::string prof_out;
    auto* prof = app.add_subcommand("profile", "stage-level timings and unit counters");
    prof->add_option("--video", prof_args.video_dir)->required();
    prof->add_option("--weights", prof_args.weights_path);
    prof->add_option("--gt", prof_args.gt_path);
    prof->add_option("--schedule", prof_args.schedule);
    prof->add_option("--sampling", prof_args.sampling);
    prof->add_option("--interp", prof_args.interp);
    prof->add_option("--refiner", prof_args.refiner);
    prof->add_option("--preset", prof_args.preset);
    prof->add_option("--stride", prof_args.stride);
    prof->add_option("--seed", prof_args.seed);
    prof->add_option("--weights-seed", prof_args.weights_seed);
    prof->add_option("--out", prof_out)->required();

    // ---- eval ----
    std::string eval_pred, eval_gt, eval_video, eval_out;
    auto* ev = app.add_subcommand("eval", "metrics between two track files");
    ev->add_option("--pred", eval_pred)->required();
    ev->add_option("--gt", eval_gt)->required();
    ev->add_option("--video", eval_video);
    ev->add_option("--out", eval_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(scene, out_dir);
        if (track->parsed()) return cmd_track(targs, track_out, track_csv, save_weights);
        if (bench->parsed()) return cmd_bench_schedules(bargs, schedules, bench_out);
        if (strat->parsed()) return cmd_strategy_compare_seeded(sscene, sstep, strat_out);
        if (spec->parsed()) return cmd_spectrum(pargs, block, frame, spec_prefix);
        if (prof->parsed()) return cmd_profile(prof_args, prof_out);
        if (ev->parsed()) return cmd_eval(eval_pred, eval_gt, eval_video, eval_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
