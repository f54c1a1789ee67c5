#pragma once

#include "elbclm/image.hpp"
#include "elbclm/shape.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <vector>

namespace elbclm {

struct HogConfig {
    int patch_size = 32;
    int cell_size = 8;
    int orientation_bins = 9;
    bool signed_orientation = false;

    void validate() const;
    int length() const {
        const int cells = patch_size / cell_size;
        return cells * cells * orientation_bins;
    }
};

/// Two sample points around a landmark, in units of face width.
struct OffsetPair {
    Eigen::Vector2d u;
    Eigen::Vector2d v;
};

/// Pixel-difference feature layout. `offsets[i]` holds the pairs for
/// landmark i; they are drawn once at training and stored with the model.
struct PixelDiffConfig {
    int pairs_per_landmark = 40;
    double radius = 0.15;
    std::vector<std::vector<OffsetPair>> offsets;

    /// Draws offsets uniformly in the disc of the configured radius.
    static PixelDiffConfig sample(std::size_t landmarks, int pairs_per_landmark, double radius,
                                  std::mt19937_64& rng);
    void validate(std::size_t landmarks) const;
};

/// Local sampling frame of a face: pixels per unit of face width and the
/// in-plane rotation of the current pose.
struct FaceFrame {
    double face_scale = 1.0;
    double rotation = 0.0;
};

/// HOG descriptor of a patch_size^2 window centered at `center`; one patch
/// pixel spans `local_scale` image pixels. Orientation votes are split
/// linearly between the two nearest bin centers (bin k centered at k*pi/bins,
/// or k*2pi/bins when signed). The result is L2-normalized, or all zero for
/// a flat patch.
Eigen::VectorXd extract_hog_patch(const GrayImage& img, const Eigen::Vector2d& center,
                                  double local_scale, const HogConfig& cfg,
                                  double rotation = 0.0);

/// (I(a) - I(b)) / 255 for each offset pair of `landmark_index`, where
/// a = landmark + face_scale * R(rotation) u (nearest pixel, edge clamped).
Eigen::VectorXd extract_pixel_diff(const GrayImage& img, const Shape& shape,
                                   std::size_t landmark_index, double face_scale,
                                   const PixelDiffConfig& cfg, double rotation = 0.0);

enum class FeatureKind : std::uint32_t { PixelDiff = 0, Hog = 1 };

/// What a cascade stage extracts per landmark.
struct StageFeatureSpec {
    FeatureKind kind = FeatureKind::PixelDiff;
    PixelDiffConfig pixel;
    HogConfig hog;
    /// Face width (pixels) at which one HOG patch pixel equals one image pixel.
    double hog_face_px = 128.0;

    int per_landmark() const {
        return kind == FeatureKind::Hog ? hog.length() : pixel.pairs_per_landmark;
    }
};

/// Offsets of the three blocks inside an assembled stage feature vector:
/// [landmark features | whitened q | 1].
struct FeatureLayout {
    std::size_t landmarks = 0;
    std::size_t per_landmark = 0;
    std::size_t q_length = 0;

    std::size_t landmark_block() const { return landmarks * per_landmark; }
    std::size_t total() const { return landmark_block() + q_length + 1; }
};

/// Landmark features in landmark order, then q_prev / sqrt(lambda) when
/// `eigenvalues` is non-empty, then a constant 1.
Eigen::VectorXd assemble_stage_features(const GrayImage& img, const Shape& shape,
                                        const Eigen::VectorXd& q_prev,
                                        const Eigen::VectorXd& eigenvalues, const FaceFrame& frame,
                                        const StageFeatureSpec& spec);

}  // namespace elbclm
