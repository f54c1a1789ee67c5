#pragma once

#include "elbclm/shape.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>

namespace elbclm {

/// Linear shape model: X = s R (mean + basis q) + t.
class PdmModel {
public:
    PdmModel() = default;
    /// Validates orthonormal columns, positive non-increasing eigenvalues and
    /// a centered unit-norm mean.
    PdmModel(Eigen::VectorXd mean_shape, Eigen::MatrixXd basis, Eigen::VectorXd eigenvalues,
             double variance_fraction);

    std::size_t landmarks() const { return static_cast<std::size_t>(mean_.size() / 2); }
    std::size_t modes() const { return static_cast<std::size_t>(basis_.cols()); }

    const Eigen::VectorXd& mean_shape() const { return mean_; }
    const Eigen::MatrixXd& basis() const { return basis_; }
    const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
    double variance_fraction() const { return variance_fraction_; }

    /// Width of the mean shape's bounding box in reference units. Multiplying
    /// by a pose scale gives the face width in pixels.
    double reference_width() const;

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd basis_;
    Eigen::VectorXd eigenvalues_;
    double variance_fraction_ = 1.0;
};

/// p = {s, theta, tx, ty, q}
struct PoseParams {
    double s = 1.0;
    double theta = 0.0;
    double tx = 0.0;
    double ty = 0.0;
    Eigen::VectorXd q;

    static constexpr Eigen::Index kRigid = 4;

    SimilarityTransform rigid() const { return {s, theta, tx, ty}; }
    /// Flat (s, theta, tx, ty, q1..qm).
    Eigen::VectorXd to_vector() const;
    static PoseParams from_vector(const Eigen::VectorXd& v);

    friend bool operator==(const PoseParams& a, const PoseParams& b) {
        return a.s == b.s && a.theta == b.theta && a.tx == b.tx && a.ty == b.ty && a.q == b.q;
    }
};

/// Diagonal Gaussian penalty on the flat pose vector. The four rigid slots are
/// always zero; the non-rigid slots hold 1/lambda_j. `center` is the prior
/// mean (zero, or the previous stage's q for the recursive prior).
struct Regularizer {
    Eigen::VectorXd diag_inv;
    Eigen::VectorXd center;
    double strength = 1.0;

    static Regularizer from_pdm(const PdmModel& pdm, double strength);
    /// Prior centered at `q_center` instead of zero.
    static Regularizer recursive(const PdmModel& pdm, double strength,
                                 const Eigen::VectorXd& q_center);
};

/// PCA of Procrustes-aligned shapes about their sample mean. The stored mean
/// is that sample mean centered and scaled to unit norm.
PdmModel train_pdm(std::span<const Shape> aligned_shapes, double variance_fraction);

Shape synthesize(const PdmModel& pdm, const PoseParams& pose);

/// Clamp each q_j to +-factor * sqrt(lambda_j).
Eigen::VectorXd clamp_q(const PdmModel& pdm, const Eigen::VectorXd& q, double factor);

/// Projects a shape onto the model by alternating a similarity fit and a
/// basis projection.
PoseParams fit_pose(const PdmModel& pdm, const Shape& shape,
                    std::optional<double> clamp_factor = std::nullopt);

/// || T^-1(shape) - (mean + basis q) || in the reference frame.
double model_residual(const PdmModel& pdm, const Shape& shape, const PoseParams& pose);

/// 2n x (4 + m) analytic derivative of synthesize() at `pose`.
Eigen::MatrixXd jacobian(const PdmModel& pdm, const PoseParams& pose);

/// Regularized Gauss-Newton projection of a raw shape shift onto the model.
///
/// The target is synthesize(pose) + delta_x and stays fixed across
/// iterations. Each iteration solves
///   (strength * diag_inv + J^T W J) dp = J^T W r - strength * diag_inv .* (p - center)
/// with r the current residual to the target, then applies p += dp.
/// Empty `weights` means unit weights. Throws SingularHessian when the
/// equilibrated Hessian's condition number exceeds 1e12.
PoseParams gauss_newton_update(const PdmModel& pdm, const PoseParams& pose,
                               const Eigen::VectorXd& delta_x, const Regularizer& reg,
                               const Eigen::VectorXd& weights, int iterations);

/// -1/2 sum_j q_j^2 / lambda_j
double prior_log_density(const PdmModel& pdm, const Eigen::VectorXd& q);

}  // namespace elbclm
