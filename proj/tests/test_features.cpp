#include "elbclm/errors.hpp"
#include "elbclm/features.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace elbclm {
namespace {

GrayImage ramp_x(int w, int h) {
    GrayImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(x, y) = x;
    return img;
}

GrayImage noise_image(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> u(0.0, 255.0);
    GrayImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(x, y) = u(rng);
    return img;
}

GrayImage map_pixels(const GrayImage& img, double scale, double shift) {
    GrayImage out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) out.at(x, y) = scale * img.at(x, y) + shift;
    return out;
}

TEST(GrayImageTest, ValidatesDimensions) {
    EXPECT_THROW(GrayImage(0, 5), InvalidArgument);
    EXPECT_THROW(GrayImage(2, 2, std::vector<double>(3)), DimensionMismatch);
}

TEST(GrayImageTest, SamplingClampsToEdges) {
    const GrayImage img = ramp_x(10, 4);
    EXPECT_EQ(img.sample_nearest(-5.0, 2.0), 0.0);
    EXPECT_EQ(img.sample_nearest(50.0, -3.0), 9.0);
    EXPECT_DOUBLE_EQ(img.sample_bilinear(3.25, 1.5), 3.25);
    EXPECT_DOUBLE_EQ(img.sample_bilinear(12.0, 1.0), 9.0);
}

TEST(HogConfigTest, Validation) {
    HogConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.length(), 144);
    cfg.cell_size = 7;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = HogConfig{};
    cfg.orientation_bins = 1;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = HogConfig{};
    cfg.patch_size = 31;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(HogTest, ConstantImageGivesZeroVector) {
    const GrayImage img(64, 64, 100.0);
    const Eigen::VectorXd f = extract_hog_patch(img, {32.0, 32.0}, 1.0, HogConfig{});
    ASSERT_EQ(f.size(), 144);
    EXPECT_TRUE(f.isZero(0.0));
}

TEST(HogTest, VerticalStepEdgeVotesHorizontalGradientBin) {
    GrayImage img(64, 64, 20.0);
    for (int y = 0; y < 64; ++y)
        for (int x = 32; x < 64; ++x) img.at(x, y) = 220.0;
    const HogConfig cfg;
    const Eigen::VectorXd f = extract_hog_patch(img, {31.5, 32.0}, 1.0, cfg);
    EXPECT_NEAR(f.norm(), 1.0, 1e-12);
    double bin0 = 0.0, total = 0.0;
    for (Eigen::Index k = 0; k < f.size(); ++k) {
        total += f[k];
        if (k % cfg.orientation_bins == 0) bin0 += f[k];
    }
    // The gradient of a vertical edge points along +x: orientation 0.
    EXPECT_NEAR(bin0 / total, 1.0, 1e-12);
}

TEST(HogTest, OrientationVotesSplitBetweenNeighbours) {
    // A ramp at 10 degrees sits between the 0- and 20-degree bin centers.
    const double angle = 10.0 * std::numbers::pi / 180.0;
    GrayImage img(80, 80);
    for (int y = 0; y < 80; ++y)
        for (int x = 0; x < 80; ++x) img.at(x, y) = std::cos(angle) * x + std::sin(angle) * y;
    const HogConfig cfg;
    const Eigen::VectorXd f = extract_hog_patch(img, {40.0, 40.0}, 1.0, cfg);
    for (int cell = 0; cell < 16; ++cell) {
        EXPECT_NEAR(f[cell * 9 + 0], f[cell * 9 + 1], 1e-9) << "cell " << cell;
        for (int b = 2; b < 9; ++b) EXPECT_NEAR(f[cell * 9 + b], 0.0, 1e-12);
    }
}

TEST(HogTest, InvariantToAffineIntensityChange) {
    std::mt19937_64 rng(1);
    const GrayImage img = noise_image(rng, 64, 64);
    const HogConfig cfg;
    const Eigen::VectorXd base = extract_hog_patch(img, {30.3, 33.7}, 1.3, cfg, 0.2);
    const Eigen::VectorXd shifted = extract_hog_patch(map_pixels(img, 1.0, 37.0), {30.3, 33.7}, 1.3, cfg, 0.2);
    const Eigen::VectorXd scaled = extract_hog_patch(map_pixels(img, 2.5, 0.0), {30.3, 33.7}, 1.3, cfg, 0.2);
    EXPECT_LT((base - shifted).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((base - scaled).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(HogTest, CentersOutsideTheImageAreLegal) {
    std::mt19937_64 rng(2);
    const GrayImage img = noise_image(rng, 32, 32);
    const Eigen::VectorXd f = extract_hog_patch(img, {-100.0, 500.0}, 1.0, HogConfig{});
    EXPECT_EQ(f.size(), 144);
    EXPECT_TRUE(f.allFinite());
}

PixelDiffConfig single_landmark_config(std::vector<OffsetPair> pairs, double radius = 0.15) {
    PixelDiffConfig cfg;
    cfg.pairs_per_landmark = static_cast<int>(pairs.size());
    cfg.radius = radius;
    cfg.offsets = {std::move(pairs), {}, {}};
    return cfg;
}

Shape three_points(double x, double y) {
    Eigen::VectorXd c(6);
    c << x, y, x + 10.0, y, x, y + 10.0;
    return Shape(c);
}

TEST(PixelDiffTest, ConstantImageGivesZeros) {
    std::mt19937_64 rng(3);
    const PixelDiffConfig cfg = PixelDiffConfig::sample(3, 40, 0.15, rng);
    const Eigen::VectorXd f = extract_pixel_diff(GrayImage(50, 50, 77.0), three_points(20, 20), 1, 40.0, cfg);
    ASSERT_EQ(f.size(), 40);
    EXPECT_TRUE(f.isZero(0.0));
}

TEST(PixelDiffTest, LinearRampOracle) {
    // Offsets chosen so that landmark + face_scale * offset lands on pixel centers.
    const PixelDiffConfig cfg = single_landmark_config({
        {{0.10, 0.02}, {-0.06, 0.04}},
        {{0.00, -0.12}, {0.14, 0.00}},
        {{-0.08, 0.08}, {0.02, -0.10}},
    });
    const double face_scale = 50.0;
    const Eigen::VectorXd f = extract_pixel_diff(ramp_x(200, 200), three_points(100, 100), 0, face_scale, cfg);
    for (std::size_t k = 0; k < 3; ++k) {
        const double oracle = face_scale * (cfg.offsets[0][k].u.x() - cfg.offsets[0][k].v.x()) / 255.0;
        EXPECT_NEAR(f[static_cast<Eigen::Index>(k)], oracle, 1e-15) << "pair " << k;
    }
}

TEST(PixelDiffTest, SelfDifferenceIsZero) {
    std::mt19937_64 rng(4);
    const PixelDiffConfig cfg = single_landmark_config({{{0.05, 0.07}, {0.05, 0.07}}, {{-0.1, 0.0}, {-0.1, 0.0}}});
    const Eigen::VectorXd f = extract_pixel_diff(noise_image(rng, 64, 64), three_points(30, 30), 0, 80.0, cfg, 0.4);
    EXPECT_EQ(f[0], 0.0);
    EXPECT_EQ(f[1], 0.0);
}

TEST(PixelDiffTest, ShiftInvariantAndScaleEquivariant) {
    std::mt19937_64 rng(5);
    const PixelDiffConfig cfg = PixelDiffConfig::sample(3, 40, 0.15, rng);
    const GrayImage img = noise_image(rng, 64, 64);
    const Shape shape = three_points(25, 28);
    const Eigen::VectorXd base = extract_pixel_diff(img, shape, 2, 60.0, cfg, -0.3);
    const Eigen::VectorXd shifted = extract_pixel_diff(map_pixels(img, 1.0, 40.0), shape, 2, 60.0, cfg, -0.3);
    const Eigen::VectorXd scaled = extract_pixel_diff(map_pixels(img, 0.5, 0.0), shape, 2, 60.0, cfg, -0.3);
    EXPECT_LT((base - shifted).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((0.5 * base - scaled).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PixelDiffConfigTest, SampledOffsetsStayInsideRadius) {
    std::mt19937_64 rng(6);
    const PixelDiffConfig cfg = PixelDiffConfig::sample(68, 40, 0.15, rng);
    ASSERT_EQ(cfg.offsets.size(), 68u);
    for (const auto& pairs : cfg.offsets) {
        ASSERT_EQ(pairs.size(), 40u);
        for (const auto& p : pairs) {
            EXPECT_LE(p.u.norm(), 0.15);
            EXPECT_LE(p.v.norm(), 0.15);
        }
    }
    EXPECT_NO_THROW(cfg.validate(68));
    EXPECT_THROW(cfg.validate(67), DimensionMismatch);
    PixelDiffConfig bad = cfg;
    bad.offsets[3][0].u = {0.2, 0.0};
    EXPECT_THROW(bad.validate(68), InvalidArgument);
}

TEST(PixelDiffConfigTest, SamplingIsSeeded) {
    std::mt19937_64 a(7), b(7);
    const PixelDiffConfig x = PixelDiffConfig::sample(5, 10, 0.2, a);
    const PixelDiffConfig y = PixelDiffConfig::sample(5, 10, 0.2, b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t k = 0; k < 10; ++k) {
            EXPECT_EQ(x.offsets[i][k].u, y.offsets[i][k].u);
            EXPECT_EQ(x.offsets[i][k].v, y.offsets[i][k].v);
        }
}

StageFeatureSpec hog_spec() {
    StageFeatureSpec spec;
    spec.kind = FeatureKind::Hog;
    return spec;
}

TEST(AssembleTest, HogLengthArithmetic) {
    const FeatureLayout layout{68, 144, 32};
    EXPECT_EQ(layout.total(), 9825u);

    const SyntheticCorpus corpus = testing::face_corpus(1, 8);
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(32, 0.01);
    const Eigen::VectorXd f = assemble_stage_features(corpus.samples[0].image, corpus.samples[0].gt_shape,
                                                      Eigen::VectorXd::Zero(32), lambda, {80.0, 0.0},
                                                      hog_spec());
    EXPECT_EQ(f.size(), 9825);
}

TEST(AssembleTest, ZeroQGivesZeroBlockAndBias) {
    std::mt19937_64 rng(9);
    StageFeatureSpec spec;
    spec.pixel = PixelDiffConfig::sample(3, 12, 0.15, rng);
    const Eigen::VectorXd lambda = (Eigen::VectorXd(4) << 0.04, 0.02, 0.01, 0.005).finished();
    const Eigen::VectorXd f = assemble_stage_features(noise_image(rng, 60, 60), three_points(20, 20),
                                                      Eigen::VectorXd::Zero(4), lambda, {40.0, 0.0}, spec);
    ASSERT_EQ(f.size(), 3 * 12 + 4 + 1);
    EXPECT_TRUE(f.segment(36, 4).isZero(0.0));
    EXPECT_EQ(f[40], 1.0);
}

TEST(AssembleTest, QBlockIsWhitened) {
    std::mt19937_64 rng(10);
    StageFeatureSpec spec;
    spec.pixel = PixelDiffConfig::sample(3, 5, 0.15, rng);
    const Eigen::VectorXd lambda = (Eigen::VectorXd(2) << 0.04, 0.01).finished();
    const Eigen::VectorXd q = (Eigen::VectorXd(2) << 0.1, -0.3).finished();
    const Eigen::VectorXd f = assemble_stage_features(GrayImage(40, 40, 9.0), three_points(10, 10), q,
                                                      lambda, {30.0, 0.0}, spec);
    EXPECT_DOUBLE_EQ(f[15], 0.1 / 0.2);
    EXPECT_DOUBLE_EQ(f[16], -0.3 / 0.1);
}

TEST(AssembleTest, LandmarkBlocksInLandmarkOrder) {
    std::mt19937_64 rng(11);
    StageFeatureSpec spec;
    spec.pixel = PixelDiffConfig::sample(3, 6, 0.15, rng);
    const GrayImage img = noise_image(rng, 64, 64);
    const Shape shape = three_points(22, 19);
    const Eigen::VectorXd f =
        assemble_stage_features(img, shape, Eigen::VectorXd(), Eigen::VectorXd(), {50.0, 0.1}, spec);
    ASSERT_EQ(f.size(), 19);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(Eigen::VectorXd(f.segment(static_cast<Eigen::Index>(6 * i), 6)),
                  extract_pixel_diff(img, shape, i, 50.0, spec.pixel, 0.1));
}

TEST(AssembleTest, DeterministicAndContentIndependentLength) {
    std::mt19937_64 rng(12);
    const StageFeatureSpec spec = hog_spec();
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(3, 0.01);
    const Eigen::VectorXd q = Eigen::VectorXd::Constant(3, 0.02);
    const GrayImage a = noise_image(rng, 64, 64);
    const GrayImage b(64, 64, 5.0);
    const Shape shape = three_points(30, 30);
    const Eigen::VectorXd fa1 = assemble_stage_features(a, shape, q, lambda, {64.0, 0.0}, spec);
    const Eigen::VectorXd fa2 = assemble_stage_features(a, shape, q, lambda, {64.0, 0.0}, spec);
    const Eigen::VectorXd fb = assemble_stage_features(b, shape, q, lambda, {64.0, 0.0}, spec);
    EXPECT_EQ(fa1, fa2);
    EXPECT_EQ(fa1.size(), fb.size());
}

TEST(AssembleTest, RejectsWrongQLength) {
    std::mt19937_64 rng(13);
    StageFeatureSpec spec;
    spec.pixel = PixelDiffConfig::sample(3, 4, 0.15, rng);
    EXPECT_THROW(assemble_stage_features(GrayImage(20, 20), three_points(5, 5), Eigen::VectorXd::Zero(2),
                                         Eigen::VectorXd::Ones(3), {10.0, 0.0}, spec),
                 DimensionMismatch);
}

}  // namespace
}  // namespace elbclm
