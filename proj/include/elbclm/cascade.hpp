#pragma once

#include "elbclm/features.hpp"
#include "elbclm/pdm.hpp"
#include "elbclm/regressors.hpp"
#include "elbclm/sample.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace elbclm {

/// Center of the Gaussian prior on q inside the Gauss-Newton projection:
/// zero, or the q reached by the previous stage. With the recursive center a
/// zero shift leaves the pose unchanged.
enum class PriorCenter : std::uint32_t { Zero = 0, Recursive = 1 };

struct StageConfig {
    StageFeatureSpec features;
    ForestConfig forest;
    double ridge_lambda = kAutoRidge;
    double ridge_scale = 0.1;  // default_*_stage() set per-kind values
    double gn_strength = 1.0;
    int gn_iterations = 1;
    Eigen::VectorXd gn_weights;  // empty: unit weights
    PriorCenter prior_center = PriorCenter::Recursive;
    /// Multiplier on the regressed shift. Set by training when step search is
    /// on, otherwise kept as configured.
    double step_scale = 1.0;
};

struct StageSchedule {
    std::vector<StageConfig> stages;

    std::size_t size() const { return stages.size(); }

    /// `pixel_stages` forest stages on pixel differences followed by
    /// `hog_stages` ridge stages on HOG. The pixel-difference radius starts at
    /// `radius` and shrinks by `shrink` per stage.
    static StageSchedule hybrid(int pixel_stages, int hog_stages, const StageConfig& pixel_template,
                                const StageConfig& hog_template, double shrink = 0.8);

    /// "hybrid7" (4 pixel + 3 HOG), "pixel7", "hog7", or "<kind><T>" for
    /// kind in {hybrid, pixel, hog}. Hybrid splits as ceil(4T/7) pixel stages.
    static StageSchedule preset(std::string_view name, const StageConfig& pixel_template,
                                const StageConfig& hog_template, double shrink = 0.8);
    static StageSchedule preset(std::string_view name);

    static StageConfig default_pixel_stage();
    static StageConfig default_hog_stage();
};

/// Whether the PDM projection and the q-feature block are active.
struct CascadeFlags {
    bool constrained = true;
    bool q_features = true;
    double clamp_factor = 3.0;  // <= 0 disables clamping

    friend bool operator==(const CascadeFlags&, const CascadeFlags&) = default;
};

struct CascadeOptions {
    CascadeFlags flags;
    double pdm_variance = 0.99;
    int aug_count = 10;
    double aug_translation = 0.05;  // fraction of box size
    double aug_scale = 0.10;
    int left_eye = 36;
    int right_eye = 45;
    int threads = 1;
    /// Picks each stage's step_scale in [0, max_step] by minimizing the mean
    /// training error after the update.
    bool step_search = true;
    double max_step = 2.0;
};

using StageRegressor = std::variant<ForestStage, LinearRegressor>;

struct CascadeModel {
    static constexpr std::uint32_t kFormatVersion = 1;

    PdmModel pdm;
    StageSchedule schedule;  // pixel offsets are filled in at training
    std::vector<StageRegressor> stages;
    std::uint64_t seed = 0;
    CascadeFlags flags;
    std::uint32_t format_version = kFormatVersion;

    /// Feature-vector width the stage's regressor consumes.
    std::size_t stage_feature_length(std::size_t stage) const;
};

struct TrainReport {
    /// Mean normalized training error before stage 1 and after every stage.
    std::vector<double> stage_errors;
    double seconds = 0.0;
};

/// Mean shape of `pdm` placed in `bbox`: width matched, centers aligned,
/// theta = 0 and q = 0.
PoseParams init_pose_from_bbox(const PdmModel& pdm, const BBox& bbox);

CascadeModel train_cascade(std::span<const Sample> dataset, const StageSchedule& schedule,
                           const CascadeOptions& options, std::uint64_t seed,
                           TrainReport* report = nullptr);

struct FitOptions {
    bool trace = false;
    /// Runs without the PDM projection even if the model was trained with it.
    bool disable_constraint = false;
};

struct FitResult {
    Shape shape;
    PoseParams pose;
    /// With FitOptions::trace: the initial shape and one shape per stage.
    std::vector<Shape> per_stage_shapes;
    std::vector<PoseParams> per_stage_poses;
};

FitResult fit(const CascadeModel& model, const GrayImage& image, const BBox& bbox,
              const FitOptions& options = {});

void save_model(const CascadeModel& model, std::ostream& sink);
CascadeModel load_model(std::istream& source);
void save_model_file(const CascadeModel& model, const std::string& path);
CascadeModel load_model_file(const std::string& path);
std::string serialize_model(const CascadeModel& model);
CascadeModel deserialize_model(std::string_view bytes);

}  // namespace elbclm
