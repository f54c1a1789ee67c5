#include "elbclm/cascade.hpp"

#include "elbclm/errors.hpp"
#include "elbclm/evaluation.hpp"
#include "elbclm/parallel.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace elbclm {

namespace {

using Eigen::Index;
using Eigen::VectorXd;

// Sub-seed domains.
constexpr std::uint64_t kAugmentTag = 0xa0;
constexpr std::uint64_t kOffsetTag = 0xb0;
constexpr std::uint64_t kForestTag = 0xc0;

struct WorkingState {
    Shape shape;
    PoseParams pose;
};

FaceFrame frame_of(const PdmModel& pdm, const PoseParams& pose) {
    return {pose.s * pdm.reference_width(), pose.theta};
}

VectorXd stage_features(const CascadeModel& model, const StageConfig& cfg, const GrayImage& image,
                        const WorkingState& state) {
    static const VectorXd kNoQ;
    return assemble_stage_features(image, state.shape, state.pose.q,
                                   model.flags.q_features ? model.pdm.eigenvalues() : kNoQ,
                                   frame_of(model.pdm, state.pose), cfg.features);
}

/// Rotates and scales a 2n shift by the inverse (forward) rigid part of `pose`,
/// so regressors see shifts in reference-frame units.
VectorXd rotate_shift(const VectorXd& dx, double scale, double theta) {
    const double c = std::cos(theta) * scale, sn = std::sin(theta) * scale;
    VectorXd out(dx.size());
    for (Index i = 0; i < dx.size() / 2; ++i) {
        out[2 * i] = c * dx[2 * i] - sn * dx[2 * i + 1];
        out[2 * i + 1] = sn * dx[2 * i] + c * dx[2 * i + 1];
    }
    return out;
}

VectorXd to_reference(const VectorXd& dx, const PoseParams& pose) {
    return rotate_shift(dx, 1.0 / pose.s, -pose.theta);
}

VectorXd to_image(const VectorXd& dx, const PoseParams& pose) {
    return rotate_shift(dx, pose.s, pose.theta);
}

VectorXd predict_stage(const StageRegressor& regressor, const VectorXd& features) {
    return std::visit(
        [&](const auto& r) -> VectorXd {
            if constexpr (std::is_same_v<std::decay_t<decltype(r)>, ForestStage>)
                return predict_forest_stage(r, features);
            else
                return predict_ridge(r, features);
        },
        regressor);
}

/// Applies one regressed image-space shift: Gauss-Newton projection onto the
/// model when constrained, otherwise a free update followed by a model fit
/// that only supplies q and the sampling frame for the next stage.
WorkingState advance(const PdmModel& pdm, const CascadeFlags& flags, const StageConfig& cfg,
                     const WorkingState& state, const VectorXd& dx, bool constrained) {
    const std::optional<double> clamp =
        flags.clamp_factor > 0.0 ? std::optional<double>(flags.clamp_factor) : std::nullopt;
    if (constrained) {
        const Regularizer reg = cfg.prior_center == PriorCenter::Recursive
                                    ? Regularizer::recursive(pdm, cfg.gn_strength, state.pose.q)
                                    : Regularizer::from_pdm(pdm, cfg.gn_strength);
        const VectorXd delta =
            state.shape.coords() + dx - synthesize(pdm, state.pose).coords();
        PoseParams pose =
            gauss_newton_update(pdm, state.pose, delta, reg, cfg.gn_weights, cfg.gn_iterations);
        if (clamp) pose.q = clamp_q(pdm, pose.q, *clamp);
        Shape shape = synthesize(pdm, pose);
        return {std::move(shape), std::move(pose)};
    }
    Shape shape(state.shape.coords() + dx);
    PoseParams pose = fit_pose(pdm, shape, clamp);
    return {std::move(shape), std::move(pose)};
}

double training_error(const Shape& pred, const Shape& gt, const CascadeOptions& options) {
    const auto n = static_cast<int>(gt.size());
    if (options.left_eye >= 0 && options.right_eye >= 0 && options.left_eye < n &&
        options.right_eye < n && options.left_eye != options.right_eye)
        return normalized_error(pred, gt, static_cast<std::size_t>(options.left_eye),
                                static_cast<std::size_t>(options.right_eye));
    const BBox box = bounding_box(gt);
    const double size = std::sqrt(std::max(box.width * box.height, 1e-12));
    return (pred.coords() - gt.coords()).reshaped(2, gt.size()).colwise().norm().mean() / size;
}

/// Coarse grid over [0, max_step] then a finer grid around the best point.
/// Ties keep the candidate closest to 1.
template <typename ErrorFn>
double search_step(ErrorFn&& error, double max_step) {
    double best = 1.0;
    double best_error = std::numeric_limits<double>::infinity();
    const auto consider = [&](double eta) {
        const double e = error(eta);
        if (e < best_error || (e == best_error && std::abs(eta - 1.0) < std::abs(best - 1.0))) {
            best = eta;
            best_error = e;
        }
    };
    constexpr int kCoarse = 20;
    const double h = max_step / kCoarse;
    for (int k = 0; k <= kCoarse; ++k) consider(h * k);
    const double center = best;
    for (int k = -4; k <= 4; ++k) {
        const double eta = center + 0.2 * h * k;
        if (k != 0 && eta >= 0.0 && eta <= max_step) consider(eta);
    }
    return best;
}

BBox perturb_bbox(const BBox& box, const CascadeOptions& options, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double dx = unit(rng) * options.aug_translation * box.width;
    const double dy = unit(rng) * options.aug_translation * box.height;
    const double scale = 1.0 + unit(rng) * options.aug_scale;
    const Eigen::Vector2d c = box.center() + Eigen::Vector2d(dx, dy);
    const double w = box.width * scale, h = box.height * scale;
    return {c.x() - 0.5 * w, c.y() - 0.5 * h, w, h};
}

}  // namespace

StageConfig StageSchedule::default_pixel_stage() {
    StageConfig cfg;
    cfg.features.kind = FeatureKind::PixelDiff;
    cfg.ridge_scale = 30.0;
    return cfg;
}

StageConfig StageSchedule::default_hog_stage() {
    StageConfig cfg;
    cfg.features.kind = FeatureKind::Hog;
    cfg.ridge_scale = 1.0;
    return cfg;
}

StageSchedule StageSchedule::hybrid(int pixel_stages, int hog_stages,
                                    const StageConfig& pixel_template,
                                    const StageConfig& hog_template, double shrink) {
    if (pixel_stages < 0 || hog_stages < 0 || pixel_stages + hog_stages < 1)
        throw InvalidArgument("a schedule needs at least one stage");
    StageSchedule schedule;
    double radius = pixel_template.features.pixel.radius;
    for (int t = 0; t < pixel_stages; ++t) {
        StageConfig cfg = pixel_template;
        cfg.features.kind = FeatureKind::PixelDiff;
        cfg.features.pixel.radius = radius;
        cfg.features.pixel.offsets.clear();
        schedule.stages.push_back(std::move(cfg));
        radius *= shrink;
    }
    for (int t = 0; t < hog_stages; ++t) {
        StageConfig cfg = hog_template;
        cfg.features.kind = FeatureKind::Hog;
        schedule.stages.push_back(std::move(cfg));
    }
    return schedule;
}

StageSchedule StageSchedule::preset(std::string_view name, const StageConfig& pixel_template,
                                    const StageConfig& hog_template, double shrink) {
    const auto parse = [&](std::string_view prefix) -> int {
        if (name.substr(0, prefix.size()) != prefix) return -1;
        const std::string digits(name.substr(prefix.size()));
        if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) return -1;
        return std::stoi(digits);
    };
    if (const int T = parse("hybrid"); T >= 1) {
        const int pixel = (4 * T + 6) / 7;
        return hybrid(pixel, T - pixel, pixel_template, hog_template, shrink);
    }
    if (const int T = parse("pixel"); T >= 1) return hybrid(T, 0, pixel_template, hog_template, shrink);
    if (const int T = parse("hog"); T >= 1) return hybrid(0, T, pixel_template, hog_template, shrink);
    throw InvalidArgument("unknown stage preset '" + std::string(name) +
                          "' (expected hybridT, pixelT or hogT)");
}

StageSchedule StageSchedule::preset(std::string_view name) {
    return preset(name, default_pixel_stage(), default_hog_stage());
}

std::size_t CascadeModel::stage_feature_length(std::size_t stage) const {
    const StageConfig& cfg = schedule.stages.at(stage);
    const FeatureLayout layout{pdm.landmarks(), static_cast<std::size_t>(cfg.features.per_landmark()),
                               flags.q_features ? pdm.modes() : 0};
    return layout.total();
}

PoseParams init_pose_from_bbox(const PdmModel& pdm, const BBox& bbox) {
    if (!(bbox.width > 0.0) || !(bbox.height > 0.0) || !std::isfinite(bbox.x) ||
        !std::isfinite(bbox.y) || !std::isfinite(bbox.width) || !std::isfinite(bbox.height))
        throw InvalidBBox("bounding box needs finite position and positive extent");
    const BBox ref = bounding_box(Shape(pdm.mean_shape()));
    const double s = bbox.width / ref.width;
    const Eigen::Vector2d t = bbox.center() - s * ref.center();
    return {s, 0.0, t.x(), t.y(), VectorXd::Zero(static_cast<Index>(pdm.modes()))};
}

CascadeModel train_cascade(std::span<const Sample> dataset, const StageSchedule& schedule,
                           const CascadeOptions& options, std::uint64_t seed, TrainReport* report) {
    const auto start = std::chrono::steady_clock::now();
    if (dataset.size() < 2) throw InsufficientData("cascade training needs >= 2 samples");
    if (schedule.stages.empty()) throw InvalidArgument("stage schedule is empty");
    if (options.aug_count < 1) throw InvalidArgument("aug_count must be >= 1");
    const std::size_t n = dataset.front().gt_shape.size();
    for (const Sample& s : dataset)
        if (s.gt_shape.size() != n)
            throw DimensionMismatch("sample '" + s.id + "' has " + std::to_string(s.gt_shape.size()) +
                                    " landmarks, expected " + std::to_string(n));

    CascadeModel model;
    model.seed = seed;
    model.flags = options.flags;
    model.schedule = schedule;
    {
        std::vector<Shape> shapes;
        shapes.reserve(dataset.size());
        for (const Sample& s : dataset) shapes.push_back(s.gt_shape);
        const ProcrustesResult gpa = generalized_procrustes(shapes);
        model.pdm = train_pdm(gpa.aligned, options.pdm_variance);
    }
    const PdmModel& pdm = model.pdm;

    const auto aug = static_cast<std::size_t>(options.aug_count);
    const std::size_t N = dataset.size() * aug;
    std::vector<WorkingState> states(N);
    for (std::size_t i = 0; i < N; ++i) {
        std::mt19937_64 rng(derive_seed(seed, kAugmentTag, i));
        const BBox box = perturb_bbox(dataset[i / aug].bbox, options, rng);
        PoseParams pose = init_pose_from_bbox(pdm, box);
        states[i] = {synthesize(pdm, pose), std::move(pose)};
    }

    TrainReport local_report;
    const auto mean_error = [&] {
        std::vector<double> errors(N);
        parallel_for(N, options.threads, [&](std::size_t i) {
            errors[i] = training_error(states[i].shape, dataset[i / aug].gt_shape, options);
        });
        double sum = 0.0;
        for (double e : errors) sum += e;
        return sum / static_cast<double>(N);
    };
    local_report.stage_errors.push_back(mean_error());
    if (options.step_search && !(options.max_step > 0.0))
        throw InvalidArgument("max_step must be positive");

    for (std::size_t t = 0; t < model.schedule.stages.size(); ++t) {
        StageConfig& cfg = model.schedule.stages[t];
        if (cfg.features.kind == FeatureKind::PixelDiff) {
            std::mt19937_64 rng(derive_seed(seed, kOffsetTag, t));
            cfg.features.pixel = PixelDiffConfig::sample(n, cfg.features.pixel.pairs_per_landmark,
                                                         cfg.features.pixel.radius, rng);
        } else {
            cfg.features.hog.validate();
        }
        if (cfg.gn_weights.size() != 0 && static_cast<std::size_t>(cfg.gn_weights.size()) != n)
            throw DimensionMismatch("stage weights must have one entry per landmark");

        const FeatureLayout layout{n, static_cast<std::size_t>(cfg.features.per_landmark()),
                                   model.flags.q_features ? pdm.modes() : 0};
        Eigen::MatrixXd F(static_cast<Index>(N), static_cast<Index>(layout.total()));
        Eigen::MatrixXd Y(static_cast<Index>(N), static_cast<Index>(2 * n));
        parallel_for(N, options.threads, [&](std::size_t i) {
            const Sample& sample = dataset[i / aug];
            F.row(static_cast<Index>(i)) = stage_features(model, cfg, sample.image, states[i]).transpose();
            Y.row(static_cast<Index>(i)) =
                to_reference(sample.gt_shape.coords() - states[i].shape.coords(), states[i].pose)
                    .transpose();
        });

        if (cfg.features.kind == FeatureKind::PixelDiff)
            model.stages.emplace_back(train_forest_stage(F, Y, layout, cfg.forest, cfg.ridge_lambda,
                                                         derive_seed(seed, kForestTag, t),
                                                         cfg.ridge_scale, options.threads));
        else
            model.stages.emplace_back(train_ridge(F, Y, cfg.ridge_lambda, cfg.ridge_scale));

        const StageRegressor& regressor = model.stages.back();
        std::vector<VectorXd> shifts(N);
        parallel_for(N, options.threads, [&](std::size_t i) {
            shifts[i] =
                to_image(predict_stage(regressor, F.row(static_cast<Index>(i)).transpose()), states[i].pose);
        });
        std::vector<WorkingState> next(N);
        const auto step_error = [&](double eta) {
            std::vector<double> errors(N);
            parallel_for(N, options.threads, [&](std::size_t i) {
                next[i] = advance(pdm, model.flags, cfg, states[i], eta * shifts[i], model.flags.constrained);
                errors[i] = training_error(next[i].shape, dataset[i / aug].gt_shape, options);
            });
            double sum = 0.0;
            for (double e : errors) sum += e;
            return sum / static_cast<double>(N);
        };
        if (options.step_search) cfg.step_scale = search_step(step_error, options.max_step);
        local_report.stage_errors.push_back(step_error(cfg.step_scale));
        states.swap(next);
    }

    local_report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (report) *report = std::move(local_report);
    return model;
}

FitResult fit(const CascadeModel& model, const GrayImage& image, const BBox& bbox,
              const FitOptions& options) {
    if (model.stages.size() != model.schedule.stages.size())
        throw InvalidArgument("model stages and schedule disagree");
    const bool constrained = model.flags.constrained && !options.disable_constraint;
    PoseParams pose = init_pose_from_bbox(model.pdm, bbox);
    WorkingState state{synthesize(model.pdm, pose), std::move(pose)};

    FitResult result;
    if (options.trace) {
        result.per_stage_shapes.push_back(state.shape);
        result.per_stage_poses.push_back(state.pose);
    }
    for (std::size_t t = 0; t < model.stages.size(); ++t) {
        const StageConfig& cfg = model.schedule.stages[t];
        const VectorXd f = stage_features(model, cfg, image, state);
        const VectorXd dx = cfg.step_scale * to_image(predict_stage(model.stages[t], f), state.pose);
        state = advance(model.pdm, model.flags, cfg, state, dx, constrained);
        if (options.trace) {
            result.per_stage_shapes.push_back(state.shape);
            result.per_stage_poses.push_back(state.pose);
        }
    }
    result.shape = std::move(state.shape);
    result.pose = std::move(state.pose);
    return result;
}

}  // namespace elbclm
