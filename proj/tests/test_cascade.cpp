#include "elbclm/cascade.hpp"
#include "elbclm/errors.hpp"
#include "elbclm/evaluation.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace elbclm {
namespace {

StageConfig small_pixel_stage() {
    StageConfig cfg = StageSchedule::default_pixel_stage();
    cfg.features.pixel.pairs_per_landmark = 8;
    cfg.forest.trees_per_landmark = 2;
    cfg.forest.max_depth = 3;
    cfg.forest.candidate_splits = 15;
    return cfg;
}

StageConfig small_hog_stage() {
    StageConfig cfg = StageSchedule::default_hog_stage();
    cfg.features.hog.patch_size = 16;
    cfg.features.hog.cell_size = 8;
    return cfg;
}

StageSchedule small_schedule(std::string_view preset = "hybrid4") {
    return StageSchedule::preset(preset, small_pixel_stage(), small_hog_stage());
}

CascadeOptions small_options() {
    CascadeOptions options;
    options.aug_count = 2;
    return options;
}

const SyntheticCorpus& train_corpus() {
    static const SyntheticCorpus corpus = testing::face_corpus(40, 11);
    return corpus;
}

const SyntheticCorpus& test_corpus() {
    static const SyntheticCorpus corpus = testing::face_corpus(10, 12);
    return corpus;
}

struct Trained {
    CascadeModel model;
    TrainReport report;
};

const Trained& trained_model() {
    static const Trained trained = [] {
        Trained t;
        t.model = train_cascade(train_corpus().samples, small_schedule(), small_options(), 7, &t.report);
        return t;
    }();
    return trained;
}

TEST(InitPoseTest, MeanShapeFillsBoxWidthAndCenter) {
    const PdmModel pdm = face_template_pdm();
    for (const BBox box : {BBox{10, 20, 100, 80}, BBox{-5, 3, 7.5, 30}}) {
        const PoseParams pose = init_pose_from_bbox(pdm, box);
        EXPECT_EQ(pose.theta, 0.0);
        EXPECT_TRUE(pose.q.isZero(0.0));
        const BBox placed = bounding_box(synthesize(pdm, pose));
        EXPECT_NEAR(placed.width, box.width, 1e-9);
        EXPECT_NEAR(placed.center().x(), box.center().x(), 1e-9);
        EXPECT_NEAR(placed.center().y(), box.center().y(), 1e-9);
    }
}

TEST(InitPoseTest, RejectsDegenerateBoxes) {
    const PdmModel pdm = face_template_pdm();
    EXPECT_THROW(init_pose_from_bbox(pdm, BBox{0, 0, 0, 10}), InvalidBBox);
    EXPECT_THROW(init_pose_from_bbox(pdm, BBox{0, 0, 10, -1}), InvalidBBox);
    EXPECT_THROW(init_pose_from_bbox(pdm, BBox{std::nan(""), 0, 10, 10}), InvalidBBox);
}

TEST(ScheduleTest, Presets) {
    const StageSchedule h7 = StageSchedule::preset("hybrid7");
    ASSERT_EQ(h7.size(), 7u);
    for (std::size_t t = 0; t < 7; ++t)
        EXPECT_EQ(h7.stages[t].features.kind, t < 4 ? FeatureKind::PixelDiff : FeatureKind::Hog);
    for (std::size_t t = 1; t < 4; ++t)
        EXPECT_NEAR(h7.stages[t].features.pixel.radius, 0.8 * h7.stages[t - 1].features.pixel.radius,
                    1e-15);
    EXPECT_EQ(StageSchedule::preset("pixel7").size(), 7u);
    EXPECT_EQ(StageSchedule::preset("hog3").stages[2].features.kind, FeatureKind::Hog);
    const StageSchedule h5 = StageSchedule::preset("hybrid5");
    EXPECT_EQ(h5.stages[2].features.kind, FeatureKind::PixelDiff);
    EXPECT_EQ(h5.stages[3].features.kind, FeatureKind::Hog);
    EXPECT_THROW(StageSchedule::preset("hybrid"), InvalidArgument);
    EXPECT_THROW(StageSchedule::preset("sift7"), InvalidArgument);
    EXPECT_THROW(StageSchedule::preset("hybrid0"), InvalidArgument);
}

TEST(CascadeTest, ZeroRegressorsLeaveInitialShape) {
    CascadeModel model;
    model.pdm = face_template_pdm();
    model.schedule = StageSchedule::preset("hog2", small_pixel_stage(), small_hog_stage());
    for (std::size_t t = 0; t < 2; ++t)
        model.stages.emplace_back(
            LinearRegressor{Eigen::MatrixXd::Zero(136, static_cast<Eigen::Index>(model.stage_feature_length(t))), 0.0});
    const Sample& s = test_corpus().samples[0];
    const FitResult r = fit(model, s.image, s.bbox, {.trace = true});
    const Shape start = synthesize(model.pdm, init_pose_from_bbox(model.pdm, s.bbox));
    ASSERT_EQ(r.per_stage_shapes.size(), 3u);
    for (const Shape& shape : r.per_stage_shapes)
        EXPECT_LT((shape.coords() - start.coords()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((r.shape.coords() - start.coords()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CascadeTest, StageFeatureLengthMatchesLayout) {
    const CascadeModel& m = trained_model().model;
    const std::size_t q = m.pdm.modes();
    EXPECT_EQ(m.stage_feature_length(0), 68u * 8u + q + 1u);
    EXPECT_EQ(m.stage_feature_length(3), 68u * 36u + q + 1u);
}

TEST(CascadeTest, TrainingErrorIsMonotone) {
    const TrainReport& report = trained_model().report;
    ASSERT_EQ(report.stage_errors.size(), 5u);
    for (std::size_t t = 1; t < report.stage_errors.size(); ++t)
        EXPECT_LE(report.stage_errors[t], report.stage_errors[t - 1] + 1e-6) << "stage " << t;
    EXPECT_LT(report.stage_errors.back(), report.stage_errors.front());
}

TEST(CascadeTest, EveryStageStaysOnTheModel) {
    const CascadeModel& m = trained_model().model;
    for (const Sample& s : test_corpus().samples) {
        const FitResult r = fit(m, s.image, s.bbox, {.trace = true});
        ASSERT_EQ(r.per_stage_shapes.size(), m.stages.size() + 1);
        ASSERT_EQ(r.per_stage_poses.size(), m.stages.size() + 1);
        for (std::size_t t = 0; t < r.per_stage_shapes.size(); ++t) {
            const Shape expected = synthesize(m.pdm, r.per_stage_poses[t]);
            EXPECT_LT((r.per_stage_shapes[t].coords() - expected.coords()).cwiseAbs().maxCoeff(), 1e-9);
        }
        EXPECT_EQ(r.shape.coords(), r.per_stage_shapes.back().coords());
    }
}

TEST(CascadeTest, TraceDoesNotChangeResult) {
    const CascadeModel& m = trained_model().model;
    const Sample& s = test_corpus().samples[1];
    EXPECT_EQ(fit(m, s.image, s.bbox).shape.coords(), fit(m, s.image, s.bbox, {.trace = true}).shape.coords());
    EXPECT_TRUE(fit(m, s.image, s.bbox).per_stage_shapes.empty());
}

TEST(CascadeTest, UnconstrainedFitLeavesTheModel) {
    const CascadeModel& m = trained_model().model;
    const Sample& s = test_corpus().samples[2];
    const FitResult free = fit(m, s.image, s.bbox, {.trace = true, .disable_constraint = true});
    ASSERT_EQ(free.per_stage_shapes.size(), m.stages.size() + 1);
    const Shape projected = synthesize(m.pdm, free.pose);
    EXPECT_GT((free.shape.coords() - projected.coords()).norm(), 1e-6);
}

TEST(CascadeTest, TrainingIsDeterministic) {
    const auto& samples = train_corpus().samples;
    const std::string a = serialize_model(trained_model().model);
    CascadeOptions threaded = small_options();
    threaded.threads = 3;
    EXPECT_EQ(serialize_model(train_cascade(samples, small_schedule(), threaded, 7)), a);
    EXPECT_NE(serialize_model(train_cascade(samples, small_schedule(), small_options(), 8)), a);
}

TEST(CascadeTest, PlantedTargetsAreMemorized) {
    const std::vector<Sample> samples(train_corpus().samples.begin(), train_corpus().samples.begin() + 6);
    StageConfig hog = small_hog_stage();
    hog.ridge_lambda = 1e-9;
    CascadeOptions options = small_options();
    options.aug_count = 1;
    options.pdm_variance = 1.0;
    options.flags.constrained = false;
    TrainReport report;
    train_cascade(samples, StageSchedule::hybrid(0, 1, small_pixel_stage(), hog), options, 3, &report);
    ASSERT_EQ(report.stage_errors.size(), 2u);
    EXPECT_GT(report.stage_errors[0], 0.01);
    EXPECT_LT(report.stage_errors[1], 1e-3);
}

TEST(CascadeTest, TrainingValidatesInput) {
    const auto& samples = train_corpus().samples;
    EXPECT_THROW(train_cascade(std::span(samples).first(1), small_schedule(), small_options(), 1),
                 InsufficientData);
    EXPECT_THROW(train_cascade(samples, StageSchedule{}, small_options(), 1), InvalidArgument);
    std::vector<Sample> mixed(samples.begin(), samples.begin() + 3);
    mixed[1].gt_shape = Shape(mixed[1].gt_shape.coords().head(20));
    EXPECT_THROW(train_cascade(mixed, small_schedule(), small_options(), 1), DimensionMismatch);
    CascadeOptions bad = small_options();
    bad.aug_count = 0;
    EXPECT_THROW(train_cascade(samples, small_schedule(), bad, 1), InvalidArgument);
}

TEST(ModelIoTest, RoundTripGivesIdenticalPredictions) {
    const CascadeModel& m = trained_model().model;
    const std::string bytes = serialize_model(m);
    const CascadeModel loaded = deserialize_model(bytes);
    EXPECT_EQ(serialize_model(loaded), bytes);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> jitter(-6.0, 6.0);
    for (int k = 0; k < 10; ++k) {
        const Sample& s = test_corpus().samples[static_cast<std::size_t>(k)];
        const BBox box{s.bbox.x + jitter(rng), s.bbox.y + jitter(rng), s.bbox.width, s.bbox.height};
        EXPECT_EQ(fit(loaded, s.image, box).shape.coords(), fit(m, s.image, box).shape.coords());
    }
}

TEST(ModelIoTest, FileRoundTrip) {
    const CascadeModel& m = trained_model().model;
    const auto path = std::filesystem::temp_directory_path() / "elbclm_test_model.bin";
    save_model_file(m, path.string());
    EXPECT_EQ(serialize_model(load_model_file(path.string())), serialize_model(m));
    std::filesystem::remove(path);
    EXPECT_THROW(load_model_file(path.string()), IoError);
}

TEST(ModelIoTest, CorruptFilesAreRejected) {
    const std::string bytes = serialize_model(trained_model().model);
    for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{4}, std::size_t{8}, std::size_t{17},
                            bytes.size() / 2, bytes.size() - 1})
        EXPECT_THROW(deserialize_model(std::string_view(bytes).substr(0, len)), FormatError) << len;

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(deserialize_model(bad_magic), FormatError);

    std::string future = bytes;
    future[4] = 2;
    try {
        deserialize_model(future);
        FAIL() << "version 2 accepted";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
    }

    EXPECT_THROW(deserialize_model(bytes + "x"), FormatError);
}

TEST(EvaluateTest, MatchesPerSampleFits) {
    const CascadeModel& m = trained_model().model;
    const auto& samples = test_corpus().samples;
    EvalOptions options;
    const EvalReport report = evaluate(m, samples, options);
    ASSERT_EQ(report.per_sample_errors.size(), samples.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(report.ids[i], samples[i].id);
        const Shape pred = fit(m, samples[i].image, samples[i].bbox).shape;
        EXPECT_NEAR(report.per_sample_errors[i], normalized_error(pred, samples[i].gt_shape, 36, 45), 1e-12);
        sum += report.per_sample_errors[i];
    }
    EXPECT_NEAR(report.mean_error, sum / static_cast<double>(samples.size()), 1e-12);
    ASSERT_EQ(report.per_stage_mean_errors.size(), m.stages.size() + 1);
    EXPECT_NEAR(report.per_stage_mean_errors.back(), report.mean_error, 1e-12);

    options.threads = 3;
    EXPECT_EQ(evaluate(m, samples, options).per_sample_errors, report.per_sample_errors);
}

TEST(EvaluateTest, PerfectPredictionsScoreZero) {
    const CascadeModel& m = trained_model().model;
    std::vector<Sample> samples = test_corpus().samples;
    for (Sample& s : samples) s.gt_shape = fit(m, s.image, s.bbox).shape;
    const EvalReport report = evaluate(m, samples, EvalOptions{});
    EXPECT_EQ(report.mean_error, 0.0);
    EXPECT_EQ(report.ced.front().second, 1.0);
}

TEST(BenchmarkTest, OneRecordPerFit) {
    const CascadeModel& m = trained_model().model;
    const auto& samples = test_corpus().samples;
    const TimingSummary t = benchmark_fit(m, std::span(samples).first(4), 1, 2);
    ASSERT_EQ(t.fit_seconds.size(), 8u);
    EXPECT_GT(t.median_seconds, 0.0);
    EXPECT_NEAR(t.fps, 1.0 / t.median_seconds, 1e-9 * t.fps);
    EXPECT_THROW(benchmark_fit(m, std::span<const Sample>{}, 0, 1), EmptyDataset);
    EXPECT_THROW(benchmark_fit(m, samples, 0, 0), InvalidArgument);
}

}  // namespace
}  // namespace elbclm
