// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "densetrack/correlation.hpp"
#include "oracles.hpp"

using namespace densetrack;

namespace {

RgbdVideo noise_video(int T, int H, int W, uint64_t seed) {
    RgbdVideo v = RgbdVideo::make(T, H, W, Intrinsics{32.0, 0.5 * (W - 1), 0.5 * (H - 1)});
    Rng rng(seed);
    for (auto& x : v.rgb) x = static_cast<float>(rng.uniform());
    for (auto& z : v.depth) z = static_cast<float>(rng.uniform(1.0, 4.0));
    return v;
}

FeaturePyramid noise_pyramid(int C, int levels, uint64_t seed, int H = 32, int W = 32) {
    RgbdVideo v = noise_video(2, H, W, seed);
    ExtractorWeights w = ExtractorWeights::seeded(C, 4, levels, seed + 1);
    return extract_features(v, w, levels);
}

Corr4D seeded_corr4d(int n, uint64_t seed) {
    Corr4D c;
    c.n = n;
    c.m.resize(static_cast<size_t>(n) * n * n * n);
    Rng rng(seed);
    for (double& x : c.m) x = rng.uniform(-1.0, 1.0);
    return c;
}

TEST(MultiscaleCorr, SelfSimilarityOnConstantMap) {
    // Constant-color video: all features identical unit vectors; querying
    // with that vector gives 1 everywhere in the window.
    RgbdVideo v = RgbdVideo::make(2, 32, 32, Intrinsics{32.0, 15.5, 15.5});
    for (auto& x : v.rgb) x = 0.7f;
    ExtractorWeights w = ExtractorWeights::seeded(8, 4, 2, 3);
    FeaturePyramid pyr = extract_features(v, w, 2);
    std::vector<double> qf(pyr.feat(0, 0, 0, 0), pyr.feat(0, 0, 0, 0) + 8);
    CorrConfig cfg;
    cfg.radius = 2;
    cfg.scales = {0, 1};
    std::vector<double> out = multiscale_corr(pyr, 1, qf, 16.0, 16.0, cfg);
    ASSERT_EQ(out.size(), 2u * 25u);
    for (double x : out) EXPECT_NEAR(x, 1.0, 1e-9);
}

TEST(MultiscaleCorr, OrthogonalQueryGivesZeros) {
    RgbdVideo v = RgbdVideo::make(2, 32, 32, Intrinsics{32.0, 15.5, 15.5});
    for (auto& x : v.rgb) x = 0.7f;
    ExtractorWeights w = ExtractorWeights::seeded(8, 4, 1, 3);
    FeaturePyramid pyr = extract_features(v, w, 1);
    // Construct a vector orthogonal to the constant feature.
    const double* f = pyr.feat(0, 0, 0, 0);
    std::vector<double> qf(8, 0.0);
    int i = 0, j = 1;
    while (j < 8 && f[j] == 0.0 && f[i] == 0.0) ++i, ++j;
    qf[i] = f[j];
    qf[j] = -f[i];
    double n = std::hypot(qf[i], qf[j]);
    if (n > 0) {
        qf[i] /= n;
        qf[j] /= n;
    }
    CorrConfig cfg;
    cfg.radius = 1;
    cfg.scales = {0};
    std::vector<double> out = multiscale_corr(pyr, 0, qf, 16.0, 16.0, cfg);
    for (double x : out) EXPECT_NEAR(x, 0.0, 1e-9);
}

TEST(MultiscaleCorr, MatchesBruteForceOracle) {
    FeaturePyramid pyr = noise_pyramid(8, 2, 42);
    CorrConfig cfg;
    cfg.radius = 1;
    cfg.scales = {0, 1};
    Rng rng(7);
    for (int k = 0; k < 20; ++k) {
        std::vector<double> qf = sample_feature(pyr, 0, 0, rng.uniform(0.0, 31.0),
                                                rng.uniform(0.0, 31.0));
        double n = 0.0;
        for (double x : qf) n += x * x;
        n = std::sqrt(std::max(n, 1e-12));
        for (double& x : qf) x /= n;
        const double u = rng.uniform(-4.0, 35.0), vv = rng.uniform(-4.0, 35.0);
        std::vector<double> got = multiscale_corr(pyr, 1, qf, u, vv, cfg);
        std::vector<double> want = oracles::multiscale_corr_ref(pyr, 1, qf, u, vv, cfg);
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9);
    }
}

TEST(Corr4D, SelfGramHasUnitDiagonal) {
    FeaturePyramid pyr = noise_pyramid(8, 1, 11);
    CorrConfig cfg;
    cfg.neighborhood = 5;
    // query position on exact level-0 nodes so samples are unit vectors
    Corr4D c = corr4d(pyr, 0, 16.0, 16.0, 16.0, 16.0, cfg);
    const int n2 = 25;
    for (int a = 0; a < n2; ++a) {
        EXPECT_NEAR(c.at(a, a), 1.0, 1e-9);
        for (int b = 0; b < n2; ++b) EXPECT_NEAR(c.at(a, b), c.at(b, a), 1e-12);
    }
}

TEST(Corr4D, ConstantFieldGivesAllOnes) {
    RgbdVideo v = RgbdVideo::make(2, 32, 32, Intrinsics{32.0, 15.5, 15.5});
    for (auto& x : v.rgb) x = 0.4f;
    ExtractorWeights w = ExtractorWeights::seeded(8, 4, 1, 3);
    FeaturePyramid pyr = extract_features(v, w, 1);
    CorrConfig cfg;
    cfg.neighborhood = 3;
    Corr4D c = corr4d(pyr, 1, 12.0, 12.0, 20.0, 8.0, cfg);
    for (double x : c.m) EXPECT_NEAR(x, 1.0, 1e-9);
}

TEST(Corr4D, MatchesQuadrupleLoopOracle) {
    FeaturePyramid pyr = noise_pyramid(8, 1, 23);
    CorrConfig cfg;
    cfg.neighborhood = 7;
    Rng rng(5);
    for (int k = 0; k < 10; ++k) {
        const double qu = rng.uniform(2.0, 29.0), qv = rng.uniform(2.0, 29.0);
        const double cu = rng.uniform(-2.0, 33.0), cv = rng.uniform(-2.0, 33.0);
        Corr4D got = corr4d(pyr, 1, qu, qv, cu, cv, cfg);
        std::vector<double> want = oracles::corr4d_ref(pyr, 1, qu, qv, cu, cv, 7);
        for (size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.m[i], want[i], 1e-6);
    }
}

TEST(Corr4D, EntriesBoundedForUnitFeatures) {
    FeaturePyramid pyr = noise_pyramid(16, 1, 31);
    CorrConfig cfg;
    cfg.neighborhood = 5;
    Rng rng(3);
    for (int k = 0; k < 25; ++k) {
        Corr4D c = corr4d(pyr, 1, rng.uniform(-5.0, 36.0), rng.uniform(-5.0, 36.0),
                          rng.uniform(-5.0, 36.0), rng.uniform(-5.0, 36.0), cfg);
        for (double x : c.m) {
            EXPECT_LE(x, 1.0 + 1e-9);
            EXPECT_GE(x, -1.0 - 1e-9);
        }
    }
}

TEST(ProjectCorr, IdentityWeightsOnOneHotRow) {
    const int n = 3, n2 = 9;
    Corr4D c;
    c.n = n;
    c.m.assign(static_cast<size_t>(n2) * n2, 0.0);
    c.m[0 * n2 + 4] = 1.0;  // one-hot first row
    ProjWeights w;
    w.in_dim = n2;
    w.out_dim = 8;
    w.w.assign(static_cast<size_t>(8) * n2, 0.0);
    for (int i = 0; i < 8; ++i) w.w[i * n2 + i] = 1.0;  // identity columns
    w.b.assign(8, 0.0);
    w.gain.assign(8, 1.0);
    w.offset.assign(8, 0.0);
    std::vector<double> out = project_corr(c, w);
    // Row 0 projected y = (0,0,0,0,1,0,0,0): normalized one-hot, clamped at 0.
    for (int o = 0; o < 8; ++o) {
        EXPECT_GE(out[o], 0.0);
        if (o == 4) EXPECT_GT(out[o], 1.0);  // the positive spike stays positive
    }
    EXPECT_DOUBLE_EQ(out[0], 0.0);
}

TEST(ProjectCorr, AllEqualRowYieldsZeros) {
    const int n = 3, n2 = 9;
    Corr4D c;
    c.n = n;
    c.m.assign(static_cast<size_t>(n2) * n2, 0.37);
    ProjWeights w = ProjWeights::seeded(n2, 8, 5);
    w.gain.assign(8, 1.0);
    w.offset.assign(8, 0.0);
    // Identical weight rows map an all-equal input row to a zero-variance
    // projection, exercising the variance+eps path.
    for (int o = 0; o < 8; ++o)
        for (int j = 0; j < n2; ++j) w.w[o * n2 + j] = 0.11;
    w.b.assign(8, 0.0);
    std::vector<double> out = project_corr(c, w);
    for (double x : out) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(ProjectCorr, MatchesScalarOracleOnSeededInstances) {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Corr4D c = seeded_corr4d(7, seed);
        ProjWeights w = ProjWeights::seeded(49, 32, seed * 13);
        Rng rng(seed);
        for (auto& g : w.gain) g = rng.uniform(0.5, 1.5);
        for (auto& o : w.offset) o = rng.uniform(-0.2, 0.2);
        for (auto& b : w.b) b = rng.uniform(-0.1, 0.1);
        std::vector<double> got = project_corr(c, w);
        std::vector<double> want = oracles::project_corr_ref(c, w);
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
    }
}

TEST(ProjectCorr, OutputChannelCountIsProjectedChannels) {
    CorrConfig cfg;
    cfg.validate();
    EXPECT_EQ(cfg.projected_channels % 8, 0);
    Corr4D c = seeded_corr4d(7, 3);
    ProjWeights w = ProjWeights::seeded(49, cfg.projected_channels, 4);
    std::vector<double> out = project_corr(c, w);
    EXPECT_EQ(out.size(), 49u * cfg.projected_channels);
}

TEST(DualConv, DegenerateOnePixelKernel) {
    Corr4D c;
    c.n = 1;
    c.m = {0.73};
    DualConvKernels k;
    k.n = 1;
    k.ksize = 1;
    k.out_channels = 1;
    k.k1 = {1.0};
    k.k2 = {1.0};
    std::vector<double> out = dual_conv_corr(c, k);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_DOUBLE_EQ(out[0], 0.73);
}

TEST(DualConv, ZeroInputGivesZeroOutput) {
    Corr4D c;
    c.n = 5;
    c.m.assign(25 * 25, 0.0);
    DualConvKernels k = DualConvKernels::seeded(5, 8, 3);
    std::vector<double> out = dual_conv_corr(c, k);
    for (double x : out) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(DualConv, MatchesDirectSummationOracle) {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Corr4D c = seeded_corr4d(7, seed + 100);
        DualConvKernels k = DualConvKernels::seeded(7, 16, seed);
        std::vector<double> got = dual_conv_corr(c, k);
        std::vector<double> want = oracles::dual_conv_ref(c, k);
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
    }
}

TEST(DualConv, ShapeMismatchIsError) {
    Corr4D c = seeded_corr4d(5, 1);
    DualConvKernels k = DualConvKernels::seeded(7, 8, 1);
    EXPECT_THROW(dual_conv_corr(c, k), ShapeError);
}

TEST(DepthCorr, ConstantDepthEqualToQueryGivesZeros) {
    RgbdVideo v = noise_video(2, 16, 16, 3);
    for (auto& z : v.depth) z = 2.5f;
    CorrConfig cfg;
    cfg.radius = 2;
    std::vector<double> out = depth_corr(v, 1, 2.5, 8.0, 8.0, cfg);
    for (double x : out) EXPECT_NEAR(x, 0.0, 1e-7);
}

TEST(DepthCorr, ConstantRatioGivesLogTwo) {
    RgbdVideo v = noise_video(2, 16, 16, 3);
    for (auto& z : v.depth) z = 1.5f;
    CorrConfig cfg;
    cfg.radius = 1;
    std::vector<double> out = depth_corr(v, 0, 3.0, 8.0, 8.0, cfg);
    for (double x : out) EXPECT_NEAR(x, std::log(2.0), 1e-6);
}

TEST(DepthCorr, MatchesScalarOracle) {
    RgbdVideo v = noise_video(2, 16, 16, 17);
    CorrConfig cfg;
    cfg.radius = 3;
    Rng rng(9);
    for (int k = 0; k < 30; ++k) {
        const double qd = rng.uniform(0.2, 5.0);
        const double cu = rng.uniform(-3.0, 19.0), cv = rng.uniform(-3.0, 19.0);
        std::vector<double> got = depth_corr(v, 1, qd, cu, cv, cfg);
        std::vector<double> want = oracles::depth_corr_ref(v, 1, qd, cu, cv, cfg);
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9);
    }
}

TEST(CorrConfig, ValidationRules) {
    CorrConfig cfg;
    cfg.neighborhood = 4;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = CorrConfig{};
    cfg.projected_channels = 12;  // not a multiple of 8
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = CorrConfig{};
    EXPECT_EQ(cfg.neighborhood * cfg.neighborhood, 49);
}

}  // namespace
