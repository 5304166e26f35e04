// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "densetrack/interpolator.hpp"
#include "oracles.hpp"

using namespace densetrack;

namespace {

// A small grid scenario: rows x cols feature map with a uniform tracked
// subgrid, for exercising the sample-set-level ops.
struct GridScenario {
    int rows, cols, C, T;
    std::vector<double> fmap;
    SampleSet set;
    std::vector<MotionSample> tracked_motion;  // point-major

    FeatureGridView view() const { return FeatureGridView{fmap.data(), rows, cols, C}; }
};

GridScenario make_scenario(int rows, int cols, int stride, int C, int T, uint64_t seed) {
    GridScenario g{rows, cols, C, T, {}, {}, {}};
    Rng rng(seed);
    g.fmap.resize(static_cast<size_t>(rows) * cols * C);
    for (double& x : g.fmap) x = rng.uniform(-1.0, 1.0);
    const int off = stride / 2;
    std::vector<uint8_t> tracked(static_cast<size_t>(rows) * cols, 0);
    for (int r = off; r < rows; r += stride)
        for (int c = off; c < cols; c += stride) tracked[r * cols + c] = 1;
    for (int id = 0; id < rows * cols; ++id)
        (tracked[id] ? g.set.tracked_ids : g.set.query_ids).push_back(id);
    // exact 4-NN per query (brute force)
    for (int q : g.set.query_ids) {
        const double qy = q / cols, qx = q % cols;
        std::array<double, 4> bd;
        std::array<int, 4> bid;
        bd.fill(1e18);
        bid.fill(-1);
        for (int id : g.set.tracked_ids) {
            const double dy = id / cols - qy, dx = id % cols - qx;
            const double d2 = dx * dx + dy * dy;
            int pos = 4;
            while (pos > 0 && (d2 < bd[pos - 1] || (d2 == bd[pos - 1] && id < bid[pos - 1])))
                --pos;
            if (pos < 4) {
                for (int m = 3; m > pos; --m) {
                    bd[m] = bd[m - 1];
                    bid[m] = bid[m - 1];
                }
                bd[pos] = d2;
                bid[pos] = id;
            }
        }
        g.set.neighbor_map.push_back(bid);
    }
    g.tracked_motion.resize(g.set.tracked_ids.size() * static_cast<size_t>(T));
    for (auto& m : g.tracked_motion)
        m = MotionSample{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-0.5, 0.5),
                         rng.uniform(0.0, 1.0)};
    for (size_t i = 0; i < g.set.tracked_ids.size(); ++i)
        g.tracked_motion[i * T] = MotionSample{0, 0, 0, 1.0};  // frame 0 is the origin
    return g;
}

AttnInterpParams small_params(int C, uint64_t seed, int L = 1) {
    return AttnInterpParams::seeded(C, L, 2, 3, 4, seed);
}

TEST(InterpNearest, ZeroDistanceCopiesExactly) {
    std::vector<GridPos> tpos = {{0, 0}, {4, 0}, {0, 4}, {4, 4}};
    std::vector<MotionSample> tm = {{1, 0, 0, 1}, {2, 0, 0, 1}, {3, 0, 0, 1}, {4, 0, 0, 1}};
    std::vector<GridPos> q = {{4, 0}};
    std::vector<std::array<int, 4>> nb = {{0, 1, 2, 3}};
    auto out = interp_nearest(tpos, tm, q, nb);
    EXPECT_DOUBLE_EQ(out[0].du, 2.0);
}

TEST(InterpNearest, ConstantFieldIsCopied) {
    std::vector<GridPos> tpos = {{0, 0}, {4, 0}, {0, 4}, {4, 4}};
    std::vector<MotionSample> tm(4, MotionSample{1.5, -2.0, 0.25, 0.8});
    std::vector<GridPos> q = {{1, 2}, {3, 3}};
    std::vector<std::array<int, 4>> nb = {{0, 1, 2, 3}, {0, 1, 2, 3}};
    auto out = interp_nearest(tpos, tm, q, nb);
    for (const auto& m : out) {
        EXPECT_DOUBLE_EQ(m.du, 1.5);
        EXPECT_DOUBLE_EQ(m.dv, -2.0);
        EXPECT_DOUBLE_EQ(m.dd, 0.25);
        EXPECT_DOUBLE_EQ(m.o, 0.8);
    }
}

TEST(InterpNearest, HandComputedDistanceComparison) {
    // query (5,5); neighbors at (4,4),(4,8),(8,4),(8,8) -> nearest is (4,4)
    std::vector<GridPos> tpos = {{4, 4}, {8, 4}, {4, 8}, {8, 8}};
    std::vector<MotionSample> tm = {{10, 0, 0, 1}, {20, 0, 0, 1}, {30, 0, 0, 1}, {40, 0, 0, 1}};
    std::vector<GridPos> q = {{5, 5}};
    std::vector<std::array<int, 4>> nb = {{0, 1, 2, 3}};
    auto out = interp_nearest(tpos, tm, q, nb);
    EXPECT_DOUBLE_EQ(out[0].du, 10.0);
}

TEST(InterpNearest, TieBreaksTowardSmallestIndex) {
    std::vector<GridPos> tpos = {{0, 0}, {2, 0}, {0, 2}, {2, 2}};
    std::vector<MotionSample> tm = {{1, 0, 0, 1}, {2, 0, 0, 1}, {3, 0, 0, 1}, {4, 0, 0, 1}};
    std::vector<GridPos> q = {{1, 1}};  // equidistant from all four
    std::vector<std::array<int, 4>> nb = {{0, 1, 2, 3}};
    auto out = interp_nearest(tpos, tm, q, nb);
    EXPECT_DOUBLE_EQ(out[0].du, 1.0);
}

TEST(InterpBilinear, NodeExactness) {
    RegularSubgrid g = RegularSubgrid::make(8, 8, 4, 2, 2);
    std::vector<MotionSample> m(static_cast<size_t>(g.sub_rows) * g.sub_cols);
    Rng rng(4);
    for (auto& x : m) x = MotionSample{rng.uniform(-2, 2), rng.uniform(-2, 2), 0, 1};
    std::vector<GridPos> q = {{2, 2}, {6, 6}};
    auto out = interp_bilinear(g, m, q);
    EXPECT_DOUBLE_EQ(out[0].du, m[g.sub_id(0, 0)].du);
    EXPECT_DOUBLE_EQ(out[1].du, m[g.sub_id(1, 1)].du);
}

TEST(InterpBilinear, CellCenterAveragesFourCorners) {
    RegularSubgrid g = RegularSubgrid::make(8, 8, 4, 2, 2);
    std::vector<MotionSample> m = {{1, 0, 0, 1}, {2, 0, 0, 1}, {3, 0, 0, 1}, {4, 0, 0, 1}};
    std::vector<GridPos> q = {{4, 4}};  // center of the (2,2)-(6,6) cell
    auto out = interp_bilinear(g, m, q);
    EXPECT_DOUBLE_EQ(out[0].du, 2.5);
}

TEST(InterpBilinear, OutsideHullClampsToBorderCells) {
    RegularSubgrid g = RegularSubgrid::make(8, 8, 4, 2, 2);
    std::vector<MotionSample> m = {{1, 0, 0, 1}, {2, 0, 0, 1}, {3, 0, 0, 1}, {4, 0, 0, 1}};
    // above-left of the first node and below-right of the last node
    auto out = interp_bilinear(g, m, {{GridPos{0, 0}, GridPos{7.9, 7.9}}});
    EXPECT_DOUBLE_EQ(out[0].du, m[g.sub_id(0, 0)].du);
    EXPECT_DOUBLE_EQ(out[1].du, m[g.sub_id(1, 1)].du);
}

TEST(InterpBilinear, ReproducesLinearFieldsExactly) {
    // m(u,v) = 2u + 3v sampled on the subgrid is reproduced at any
    // interior query.
    RegularSubgrid g = RegularSubgrid::make(16, 16, 4, 2, 2);
    std::vector<MotionSample> m(static_cast<size_t>(g.sub_rows) * g.sub_cols);
    for (int sr = 0; sr < g.sub_rows; ++sr)
        for (int sc = 0; sc < g.sub_cols; ++sc) {
            const int id = g.grid_id(sr, sc);
            const double u = id % 16, v = id / 16;
            m[g.sub_id(sr, sc)] = MotionSample{2 * u + 3 * v, u - v, 0, 1};
        }
    Rng rng(6);
    for (int k = 0; k < 50; ++k) {
        const double u = rng.uniform(2.0, 14.0), v = rng.uniform(2.0, 14.0);
        auto out = interp_bilinear(g, m, {{GridPos{u, v}}});
        EXPECT_NEAR(out[0].du, 2 * u + 3 * v, 1e-9);
        EXPECT_NEAR(out[0].dv, u - v, 1e-9);
    }
}

TEST(AttnRefine, ZeroBlocksIsIdentity) {
    const int C = 6;
    AttnInterpParams p = small_params(C, 3, 0);
    Rng rng(2);
    std::vector<double> q(C);
    for (double& x : q) x = rng.uniform(-1, 1);
    std::vector<std::vector<double>> s(4, std::vector<double>(C, 0.1));
    std::array<GridPos, 4> sp = {GridPos{0, 0}, GridPos{1, 0}, GridPos{0, 1}, GridPos{1, 1}};
    auto out = attn_refine(q, s, GridPos{0.5, 0.5}, sp, p);
    for (int c = 0; c < C; ++c) EXPECT_DOUBLE_EQ(out[c], q[c]);
}

TEST(AttnRefine, ZeroValueProjectionGivesLayerNormOfQuery) {
    const int C = 6;
    AttnInterpParams p = small_params(C, 3, 1);
    for (auto& blk : p.blocks) std::fill(blk.wv.begin(), blk.wv.end(), 0.0);
    Rng rng(2);
    std::vector<double> q(C);
    for (double& x : q) x = rng.uniform(-1, 1);
    std::vector<std::vector<double>> s(4, std::vector<double>(C, 0.1));
    std::array<GridPos, 4> sp = {GridPos{0, 0}, GridPos{1, 0}, GridPos{0, 1}, GridPos{1, 1}};
    auto out = attn_refine(q, s, GridPos{0.5, 0.5}, sp, p);
    // expected: plain layer norm of q (gain 1, offset 0)
    double mean = 0, var = 0;
    for (double x : q) mean += x;
    mean /= C;
    for (double x : q) var += (x - mean) * (x - mean);
    var /= C;
    for (int c = 0; c < C; ++c)
        EXPECT_NEAR(out[c], (q[c] - mean) / std::sqrt(var + 1e-5), 1e-12);
}

TEST(AttnRefine, MatchesScalarOracleSingleBlock) {
    // L=1, 1 head, d_head=2, hand-set projections, supports at L1 distances
    // {1,2,3,4} with slope 0.5.
    const int C = 2;
    AttnInterpParams p;
    p.C_F = C;
    p.L = 1;
    p.heads = 1;
    p.d_head = 2;
    p.d_score = 2;
    p.blocks.resize(1);
    auto& blk = p.blocks[0];
    blk.wq = {0.3, -0.2, 0.5, 0.1};
    blk.wk = {0.2, 0.4, -0.3, 0.6};
    blk.wv = {1.0, 0.0, 0.0, 1.0};
    blk.wo = {0.7, -0.1, 0.2, 0.9};
    blk.ln_gain = {1.0, 1.0};
    blk.ln_offset = {0.0, 0.0};
    p.q_proj = {1.0, 0.0, 0.0, 1.0};
    p.k_proj = {1.0, 0.0, 0.0, 1.0};
    p.slopes = {0.5};
    std::vector<double> q = {0.8, -0.4};
    std::vector<std::vector<double>> s = {{0.1, 0.2}, {-0.3, 0.5}, {0.7, 0.7}, {0.0, -0.6}};
    std::array<GridPos, 4> sp = {GridPos{1, 0}, GridPos{0, 2}, GridPos{3, 0}, GridPos{2, 2}};
    const GridPos qp{0, 0};
    auto got = interp_weights(q, s, qp, sp, p);
    auto want = oracles::interp_weights_ref(q, s, qp, sp, p);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(got[j], want[j], 1e-9);
}

TEST(InterpLearnable, SymmetricConfigurationGivesQuarterWeights) {
    const int C = 6;
    AttnInterpParams p = small_params(C, 5, 1);
    std::vector<double> q(C, 0.3);
    std::vector<std::vector<double>> s(4, std::vector<double>(C, -0.2));
    std::array<GridPos, 4> sp = {GridPos{1, 0}, GridPos{-1, 0}, GridPos{0, 1}, GridPos{0, -1}};
    auto w = interp_weights(q, s, GridPos{0, 0}, sp, p);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(w[j], 0.25, 1e-6);
}

TEST(InterpLearnable, SaturatedScoreSelectsOneSupport) {
    const int C = 4;
    AttnInterpParams p = small_params(C, 8, 0);  // L = 0: weights from raw features
    // identity-ish score projections
    p.q_proj.assign(static_cast<size_t>(p.d_score) * C, 0.0);
    p.k_proj.assign(static_cast<size_t>(p.d_score) * C, 0.0);
    for (int e = 0; e < std::min(p.d_score, C); ++e) {
        p.q_proj[e * C + e] = 1.0;
        p.k_proj[e * C + e] = 1.0;
    }
    std::vector<double> q(C, 1.0);
    std::vector<std::vector<double>> s(4, std::vector<double>(C, 0.0));
    s[2].assign(C, 50.0);  // driven to saturation
    std::array<GridPos, 4> sp = {GridPos{1, 0}, GridPos{0, 1}, GridPos{1, 1}, GridPos{2, 0}};
    auto w = interp_weights(q, s, GridPos{0, 0}, sp, p);
    EXPECT_NEAR(w[2], 1.0, 1e-9);
    std::array<const MotionSample*, 4> rows;
    std::vector<MotionSample> motions = {{1, 1, 0, 1}, {2, 2, 0, 1}, {3, -3, 0.5, 0.2},
                                         {4, 4, 0, 1}};
    for (int j = 0; j < 4; ++j) rows[j] = &motions[j];
    MotionSample out;
    blend_motions(w, rows, 1, &out);
    EXPECT_NEAR(out.du, 3.0, 1e-8);
    EXPECT_NEAR(out.o, 0.2, 1e-8);
}

TEST(InterpLearnable, MatchesComposedScalarOracle) {
    GridScenario g = make_scenario(6, 6, 2, 5, 3, 44);
    AttnInterpParams p = small_params(5, 7, 2);
    auto [motions, wout] = interp_learnable(g.view(), g.set, g.T, g.tracked_motion, p);
    ASSERT_EQ(wout.weights.size(), g.set.query_ids.size());
    std::vector<int> slot(36, -1);
    for (size_t i = 0; i < g.set.tracked_ids.size(); ++i) slot[g.set.tracked_ids[i]] = i;
    for (size_t qi = 0; qi < g.set.query_ids.size(); ++qi) {
        const int qid = g.set.query_ids[qi];
        const GridPos qp{static_cast<double>(qid % 6), static_cast<double>(qid / 6)};
        std::vector<std::vector<double>> sup(4);
        std::array<GridPos, 4> sp;
        for (int j = 0; j < 4; ++j) {
            const int nid = g.set.neighbor_map[qi][j];
            sp[j] = GridPos{static_cast<double>(nid % 6), static_cast<double>(nid / 6)};
            const double* f = g.view().at(nid / 6, nid % 6);
            sup[j].assign(f, f + 5);
        }
        const double* qf = g.view().at(qid / 6, qid % 6);
        auto want = oracles::interp_weights_ref(std::span<const double>(qf, 5), sup, qp, sp, p);
        for (int j = 0; j < 4; ++j) EXPECT_NEAR(wout.weights[qi][j], want[j], 1e-9);
        // blended motion matches the convex combination
        for (int t = 0; t < g.T; ++t) {
            double du = 0;
            for (int j = 0; j < 4; ++j)
                du += want[j] *
                      g.tracked_motion[slot[g.set.neighbor_map[qi][j]] * g.T + t].du;
            EXPECT_NEAR(motions[qi * g.T + t].du, du, 1e-9);
        }
    }
}

TEST(InterpLearnable, WeightsFormSimplexOnRandomizedQueries) {
    // 10^4 randomized queries across seeds: weights nonnegative, sum 1.
    long long checked = 0;
    for (uint64_t seed = 1; checked < 10000; ++seed) {
        GridScenario g = make_scenario(10, 10, 2, 4, 2, seed);
        AttnInterpParams p = small_params(4, seed * 3 + 1, 1);
        auto [motions, wout] = interp_learnable(g.view(), g.set, g.T, g.tracked_motion, p);
        for (const auto& w : wout.weights) {
            double sum = 0.0;
            for (int j = 0; j < 4; ++j) {
                EXPECT_GE(w[j], 0.0);
                EXPECT_LE(w[j], 1.0 + 1e-12);
                sum += w[j];
            }
            EXPECT_NEAR(sum, 1.0, 1e-6);
            ++checked;
        }
    }
    EXPECT_GE(checked, 10000);
}

TEST(InterpLearnable, ConvexHullAndShiftInvariance) {
    GridScenario g = make_scenario(8, 8, 2, 4, 3, 15);
    AttnInterpParams p = small_params(4, 2, 1);
    auto [motions, wout] = interp_learnable(g.view(), g.set, g.T, g.tracked_motion, p);
    std::vector<int> slot(64, -1);
    for (size_t i = 0; i < g.set.tracked_ids.size(); ++i) slot[g.set.tracked_ids[i]] = i;
    for (size_t qi = 0; qi < g.set.query_ids.size(); ++qi) {
        for (int t = 0; t < g.T; ++t) {
            double lo = 1e18, hi = -1e18;
            for (int j = 0; j < 4; ++j) {
                const double du =
                    g.tracked_motion[slot[g.set.neighbor_map[qi][j]] * g.T + t].du;
                lo = std::min(lo, du);
                hi = std::max(hi, du);
            }
            EXPECT_GE(motions[qi * g.T + t].du, lo - 1e-9);
            EXPECT_LE(motions[qi * g.T + t].du, hi + 1e-9);
        }
    }
    // Adding a constant to every support motion adds it to every output.
    std::vector<MotionSample> shifted = g.tracked_motion;
    for (auto& m : shifted) m.du += 2.5;
    auto [motions2, wout2] = interp_learnable(g.view(), g.set, g.T, shifted, p);
    for (size_t k = 0; k < motions.size(); ++k)
        EXPECT_NEAR(motions2[k].du, motions[k].du + 2.5, 1e-9);
}

TEST(InterpLearnable, SupportPermutationLeavesBlendUnchanged) {
    const int C = 5;
    AttnInterpParams p = small_params(C, 21, 1);
    Rng rng(3);
    std::vector<double> q(C);
    for (double& x : q) x = rng.uniform(-1, 1);
    std::vector<std::vector<double>> s(4, std::vector<double>(C));
    for (auto& f : s)
        for (double& x : f) x = rng.uniform(-1, 1);
    std::array<GridPos, 4> sp = {GridPos{2, 0}, GridPos{0, 3}, GridPos{4, 1}, GridPos{1, 4}};
    std::vector<MotionSample> motions = {{1, 2, 0, 1}, {3, -1, 0, 1}, {-2, 0.5, 0, 1},
                                         {0.5, 4, 0, 1}};
    auto w = interp_weights(q, s, GridPos{1, 1}, sp, p);
    // permute supports (reversal) and recompute
    std::vector<std::vector<double>> s2 = {s[3], s[2], s[1], s[0]};
    std::array<GridPos, 4> sp2 = {sp[3], sp[2], sp[1], sp[0]};
    auto w2 = interp_weights(q, s2, GridPos{1, 1}, sp2, p);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(w2[j], w[3 - j], 1e-12);
    double blend1 = 0, blend2 = 0;
    for (int j = 0; j < 4; ++j) {
        blend1 += w[j] * motions[j].du;
        blend2 += w2[j] * motions[3 - j].du;
    }
    EXPECT_NEAR(blend1, blend2, 1e-12);
}

TEST(InterpLearnableGrad, ZeroUpstreamGivesZeroGradients) {
    GridScenario g = make_scenario(6, 6, 2, 4, 2, 9);
    AttnInterpParams p = small_params(4, 6, 1);
    std::vector<MotionSample> upstream(g.set.query_ids.size() * g.T, MotionSample{0, 0, 0, 0});
    auto [grads, dmotion] = interp_learnable_grad(g.view(), g.set, g.T, g.tracked_motion, p,
                                                  upstream);
    for (const auto& blk : grads.blocks)
        for (double x : blk.wq) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : grads.q_proj) EXPECT_DOUBLE_EQ(x, 0.0);
    for (const auto& m : dmotion) {
        EXPECT_DOUBLE_EQ(m.du, 0.0);
        EXPECT_DOUBLE_EQ(m.o, 0.0);
    }
}

TEST(InterpLearnableGrad, SupportMotionGradientIsWeightTimesUpstream) {
    GridScenario g = make_scenario(6, 6, 2, 4, 2, 19);
    AttnInterpParams p = small_params(4, 16, 1);
    auto [motions, wout] = interp_learnable(g.view(), g.set, g.T, g.tracked_motion, p);
    std::vector<MotionSample> upstream(g.set.query_ids.size() * g.T);
    Rng rng(5);
    for (auto& m : upstream)
        m = MotionSample{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                         rng.uniform(-1, 1)};
    auto [grads, dmotion] = interp_learnable_grad(g.view(), g.set, g.T, g.tracked_motion, p,
                                                  upstream);
    std::vector<int> slot(36, -1);
    for (size_t i = 0; i < g.set.tracked_ids.size(); ++i) slot[g.set.tracked_ids[i]] = i;
    std::vector<MotionSample> expected(dmotion.size(), MotionSample{0, 0, 0, 0});
    for (size_t qi = 0; qi < g.set.query_ids.size(); ++qi)
        for (int j = 0; j < 4; ++j) {
            const int s = slot[g.set.neighbor_map[qi][j]];
            for (int t = 0; t < g.T; ++t) {
                expected[s * g.T + t].du += wout.weights[qi][j] * upstream[qi * g.T + t].du;
                expected[s * g.T + t].dv += wout.weights[qi][j] * upstream[qi * g.T + t].dv;
                expected[s * g.T + t].dd += wout.weights[qi][j] * upstream[qi * g.T + t].dd;
                expected[s * g.T + t].o += wout.weights[qi][j] * upstream[qi * g.T + t].o;
            }
        }
    for (size_t k = 0; k < dmotion.size(); ++k) {
        EXPECT_NEAR(dmotion[k].du, expected[k].du, 1e-12);
        EXPECT_NEAR(dmotion[k].o, expected[k].o, 1e-12);
    }
}

// Central finite differences over every parameter of the module.
TEST(InterpLearnableGrad, MatchesFiniteDifferences) {
    const double h = 1e-5;
    for (uint64_t seed = 1; seed <= 6; ++seed) {
        GridScenario g = make_scenario(4, 4, 2, 4, 2, seed * 31);
        AttnInterpParams p = small_params(4, seed, 2);
        std::vector<MotionSample> upstream(g.set.query_ids.size() * g.T);
        Rng rng(seed + 100);
        for (auto& m : upstream)
            m = MotionSample{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                             rng.uniform(-1, 1)};

        const auto loss = [&](const AttnInterpParams& params) {
            auto [motions, wout] =
                interp_learnable(g.view(), g.set, g.T, g.tracked_motion, params);
            double acc = 0.0;
            for (size_t k = 0; k < motions.size(); ++k)
                acc += upstream[k].du * motions[k].du + upstream[k].dv * motions[k].dv +
                       upstream[k].dd * motions[k].dd + upstream[k].o * motions[k].o;
            return acc;
        };

        auto [grads, dmotion] =
            interp_learnable_grad(g.view(), g.set, g.T, g.tracked_motion, p, upstream);

        const auto check = [&](double* param, double analytic) {
            const double orig = *param;
            *param = orig + h;
            const double up = loss(p);
            *param = orig - h;
            const double dn = loss(p);
            *param = orig;
            const double numeric = (up - dn) / (2 * h);
            const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            EXPECT_NEAR(analytic, numeric, 1e-4 * scale)
                << "seed " << seed << " param offset mismatch";
        };

        for (int b = 0; b < p.L; ++b) {
            for (size_t i = 0; i < p.blocks[b].wq.size(); i += 5)
                check(&p.blocks[b].wq[i], grads.blocks[b].wq[i]);
            for (size_t i = 0; i < p.blocks[b].wk.size(); i += 5)
                check(&p.blocks[b].wk[i], grads.blocks[b].wk[i]);
            for (size_t i = 0; i < p.blocks[b].wv.size(); i += 5)
                check(&p.blocks[b].wv[i], grads.blocks[b].wv[i]);
            for (size_t i = 0; i < p.blocks[b].wo.size(); i += 5)
                check(&p.blocks[b].wo[i], grads.blocks[b].wo[i]);
            for (size_t i = 0; i < p.blocks[b].ln_gain.size(); ++i)
                check(&p.blocks[b].ln_gain[i], grads.blocks[b].ln_gain[i]);
            for (size_t i = 0; i < p.blocks[b].ln_offset.size(); ++i)
                check(&p.blocks[b].ln_offset[i], grads.blocks[b].ln_offset[i]);
        }
        for (size_t i = 0; i < p.q_proj.size(); i += 3) check(&p.q_proj[i], grads.q_proj[i]);
        for (size_t i = 0; i < p.k_proj.size(); i += 3) check(&p.k_proj[i], grads.k_proj[i]);
        for (size_t i = 0; i < p.slopes.size(); ++i) check(&p.slopes[i], grads.slopes[i]);
    }
}

}  // namespace
