#pragma once

#include "elbclm/features.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace elbclm {

/// Dense linear map W (outputs x d). The last input column is the bias.
struct LinearRegressor {
    Eigen::MatrixXd weights;
    double ridge_lambda = 0.0;
};

/// ridge_lambda < 0 selects the automatic value; see resolve_ridge_lambda().
inline constexpr double kAutoRidge = -1.0;

/// Automatic ridge strength: `scale` times the mean diagonal of the centered
/// Gram matrix, i.e. scale * sum_j N var(f_j) / d.
double resolve_ridge_lambda(double ridge_lambda, double scale, double gram_trace,
                            std::size_t feature_count);

/// Minimizes sum_i ||W f_i - y_i||^2 + lambda ||W without its last column||^2.
/// `features` is N x d with the bias in its last column; `targets` is N x k.
/// Solved through the primal normal equations when d <= N (or lambda == 0),
/// otherwise through the equivalent N x N dual system on centered data.
/// Throws SingularSystem when lambda == 0 and the Gram matrix is rank deficient.
/// A negative `ridge_lambda` (kAutoRidge) resolves to the automatic value.
LinearRegressor train_ridge(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                            double ridge_lambda, double ridge_scale = 0.1);

Eigen::VectorXd predict_ridge(const LinearRegressor& model, const Eigen::VectorXd& f);

struct ForestConfig {
    int trees_per_landmark = 5;
    int max_depth = 5;
    int candidate_splits = 50;
    double bootstrap_fraction = 1.0;

    void validate() const;
    int leaves_per_tree() const { return 1 << max_depth; }
};

/// Complete binary tree in heap order. Internal node k sends a sample right
/// when feature[k] > threshold[k]; nodes that could not be split carry an
/// infinite threshold and route everything left.
struct RegressionTree {
    std::vector<std::int32_t> feature;
    std::vector<double> threshold;

    int leaf(const double* landmark_features, int depth) const;
};

/// One random-forest cascade stage: per-landmark trees over that landmark's
/// pixel-difference block, a binary leaf encoding, and a global linear map
/// from [leaf indicators | whitened q] to the full 2n shift.
struct ForestStage {
    ForestConfig config;
    FeatureLayout layout;
    std::vector<RegressionTree> trees;  // landmark-major: landmark i, tree k at i*T + k
    Eigen::MatrixXd global_linear;      // outputs x (leaf_count + q_length)
    Eigen::VectorXd offset;             // outputs
    double ridge_lambda = 0.0;

    std::size_t leaf_count() const {
        return trees.size() * static_cast<std::size_t>(config.leaves_per_tree());
    }
    /// Global index of the leaf reached in each tree, ascending by tree.
    std::vector<std::int32_t> encode(const Eigen::VectorXd& features) const;
};

/// Grows the forests on per-landmark local shifts (columns 2i, 2i+1 of
/// `targets`) by variance reduction, then fits the global map with the ridge
/// objective. `features` rows are assembled stage vectors laid out by
/// `layout`. Randomness derives from `seed` only.
ForestStage train_forest_stage(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                               const FeatureLayout& layout, const ForestConfig& config,
                               double ridge_lambda, std::uint64_t seed, double ridge_scale = 0.1,
                               int threads = 1);

/// Sparse accumulation of the active leaf columns plus the q block.
Eigen::VectorXd predict_forest_stage(const ForestStage& model, const Eigen::VectorXd& features);

/// Pixel-difference features of every landmark (no q block) routed through
/// the stage.
Eigen::VectorXd predict_forest_stage(const ForestStage& model, const GrayImage& image,
                                     const Shape& shape, double face_scale,
                                     const PixelDiffConfig& pixel);

/// The dense B + q_length input the global map sees, for testing the sparse path.
Eigen::VectorXd densify_forest_input(const ForestStage& model, const Eigen::VectorXd& features);

}  // namespace elbclm
