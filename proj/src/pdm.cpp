#include "elbclm/pdm.hpp"

#include "elbclm/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elbclm {

namespace {

using Eigen::Index;

void check_q(const PdmModel& pdm, const Eigen::VectorXd& q) {
    if (static_cast<std::size_t>(q.size()) != pdm.modes())
        throw DimensionMismatch("q has length " + std::to_string(q.size()) + ", model has " +
                                std::to_string(pdm.modes()) + " modes");
}

Eigen::VectorXd local_shape(const PdmModel& pdm, const Eigen::VectorXd& q) {
    return pdm.mean_shape() + pdm.basis() * q;
}

}  // namespace

PdmModel::PdmModel(Eigen::VectorXd mean_shape, Eigen::MatrixXd basis,
                   Eigen::VectorXd eigenvalues, double variance_fraction)
    : mean_(std::move(mean_shape)),
      basis_(std::move(basis)),
      eigenvalues_(std::move(eigenvalues)),
      variance_fraction_(variance_fraction) {
    if (mean_.size() < 6 || mean_.size() % 2 != 0)
        throw DimensionMismatch("mean shape must hold >= 3 landmarks");
    if (basis_.rows() != mean_.size() || basis_.cols() != eigenvalues_.size())
        throw DimensionMismatch("basis / eigenvalue dimensions disagree with mean shape");
    if (!mean_.allFinite() || !basis_.allFinite() || !eigenvalues_.allFinite())
        throw InvalidArgument("PDM contains non-finite values");
    const Index m = basis_.cols();
    if (m > 0) {
        const double ortho = (basis_.transpose() * basis_ - Eigen::MatrixXd::Identity(m, m))
                                 .cwiseAbs()
                                 .maxCoeff();
        if (ortho > 1e-8) throw InvalidArgument("PDM basis is not orthonormal");
    }
    for (Index j = 0; j < m; ++j) {
        if (!(eigenvalues_[j] > 0.0)) throw InvalidArgument("PDM eigenvalues must be positive");
        if (j > 0 && eigenvalues_[j] > eigenvalues_[j - 1])
            throw InvalidArgument("PDM eigenvalues must be non-increasing");
    }
    const Shape mean_as_shape(mean_);
    if (mean_as_shape.centroid().norm() > 1e-8 || std::abs(mean_as_shape.centered_norm() - 1.0) > 1e-8)
        throw InvalidArgument("PDM mean shape must be centered with unit norm");
}

double PdmModel::reference_width() const { return bounding_box(Shape(mean_)).width; }

Eigen::VectorXd PoseParams::to_vector() const {
    Eigen::VectorXd v(kRigid + q.size());
    v << s, theta, tx, ty, q;
    return v;
}

PoseParams PoseParams::from_vector(const Eigen::VectorXd& v) {
    if (v.size() < kRigid) throw DimensionMismatch("pose vector shorter than 4");
    return {v[0], v[1], v[2], v[3], v.tail(v.size() - kRigid)};
}

Regularizer Regularizer::from_pdm(const PdmModel& pdm, double strength) {
    return recursive(pdm, strength, Eigen::VectorXd::Zero(static_cast<Index>(pdm.modes())));
}

Regularizer Regularizer::recursive(const PdmModel& pdm, double strength,
                                   const Eigen::VectorXd& q_center) {
    check_q(pdm, q_center);
    if (!(strength >= 0.0)) throw InvalidArgument("regularization strength must be >= 0");
    const Index m = static_cast<Index>(pdm.modes());
    Regularizer reg;
    reg.strength = strength;
    reg.diag_inv = Eigen::VectorXd::Zero(PoseParams::kRigid + m);
    reg.diag_inv.tail(m) = pdm.eigenvalues().cwiseInverse();
    reg.center = Eigen::VectorXd::Zero(PoseParams::kRigid + m);
    reg.center.tail(m) = q_center;
    return reg;
}

PdmModel train_pdm(std::span<const Shape> aligned_shapes, double variance_fraction) {
    if (!(variance_fraction > 0.0 && variance_fraction <= 1.0))
        throw InvalidArgument("variance_fraction must lie in (0, 1]");
    if (aligned_shapes.size() < 2) throw InsufficientData("PDM training needs >= 2 shapes");
    const std::size_t n = aligned_shapes.front().size();
    for (const Shape& s : aligned_shapes)
        if (s.size() != n) throw DimensionMismatch("PDM training: landmark counts differ");

    const Index dim = static_cast<Index>(2 * n);
    const auto count = static_cast<double>(aligned_shapes.size());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
    for (const Shape& s : aligned_shapes) sum += s.coords();
    const Shape average(sum / count);
    if (average.centered_norm() <= 1e-12) throw RankDeficient("aligned shapes average to a point");
    const Shape mean = normalize_shape(average);

    Eigen::MatrixXd deviations(dim, static_cast<Index>(aligned_shapes.size()));
    for (std::size_t k = 0; k < aligned_shapes.size(); ++k)
        deviations.col(static_cast<Index>(k)) = aligned_shapes[k].coords() - average.coords();

    const Eigen::MatrixXd cov =
        deviations * deviations.transpose() / std::max(1.0, count - 1.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw RankDeficient("covariance eigen-decomposition failed");

    // Eigen returns ascending order.
    const Eigen::VectorXd values = eig.eigenvalues().reverse();
    const Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
    const double cutoff = 1e-12 * std::max(values[0], 0.0);
    Index positive = 0;
    while (positive < values.size() && values[positive] > cutoff && values[positive] > 0.0) ++positive;
    if (positive == 0) throw RankDeficient("training shapes have zero variance");

    const double total = values.head(positive).sum();
    Index m = 0;
    double cumulative = 0.0;
    while (m < positive) {
        cumulative += values[m];
        ++m;
        if (cumulative >= variance_fraction * total) break;
    }

    Eigen::MatrixXd basis = vectors.leftCols(m);
    for (Index j = 0; j < m; ++j) {
        Index arg = 0;
        basis.col(j).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, j) < 0.0) basis.col(j) = -basis.col(j);
    }
    return PdmModel(mean.coords(), std::move(basis), values.head(m), variance_fraction);
}

Shape synthesize(const PdmModel& pdm, const PoseParams& pose) {
    check_q(pdm, pose.q);
    return apply_transform(pose.rigid(), Shape(local_shape(pdm, pose.q)));
}

Eigen::VectorXd clamp_q(const PdmModel& pdm, const Eigen::VectorXd& q, double factor) {
    check_q(pdm, q);
    const Eigen::VectorXd bound = factor * pdm.eigenvalues().cwiseSqrt();
    return q.cwiseMax(-bound).cwiseMin(bound);
}

PoseParams fit_pose(const PdmModel& pdm, const Shape& shape, std::optional<double> clamp_factor) {
    if (shape.size() != pdm.landmarks())
        throw DimensionMismatch("fit_pose: shape has " + std::to_string(shape.size()) +
                                " landmarks, model has " + std::to_string(pdm.landmarks()));
    Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Index>(pdm.modes()));
    for (int iter = 0; iter < 50; ++iter) {
        const SimilarityTransform to_image = procrustes_align_pair(Shape(local_shape(pdm, q)), shape);
        const Shape local = apply_transform(to_image.inverse(), shape);
        Eigen::VectorXd next = pdm.basis().transpose() * (local.coords() - pdm.mean_shape());
        if (clamp_factor) next = clamp_q(pdm, next, *clamp_factor);
        const double change = q.size() ? (next - q).cwiseAbs().maxCoeff() : 0.0;
        q = std::move(next);
        if (change < 1e-10) break;
    }
    const SimilarityTransform t = procrustes_align_pair(Shape(local_shape(pdm, q)), shape);
    return {t.scale(), t.theta(), t.tx(), t.ty(), std::move(q)};
}

double model_residual(const PdmModel& pdm, const Shape& shape, const PoseParams& pose) {
    check_q(pdm, pose.q);
    const Shape local = apply_transform(pose.rigid().inverse(), shape);
    return (local.coords() - local_shape(pdm, pose.q)).norm();
}

Eigen::MatrixXd jacobian(const PdmModel& pdm, const PoseParams& pose) {
    check_q(pdm, pose.q);
    const Index n = static_cast<Index>(pdm.landmarks());
    const Index m = static_cast<Index>(pdm.modes());
    const Eigen::VectorXd local = local_shape(pdm, pose.q);
    const double c = std::cos(pose.theta), sn = std::sin(pose.theta);

    Eigen::MatrixXd J(2 * n, PoseParams::kRigid + m);
    for (Index i = 0; i < n; ++i) {
        const double x = local[2 * i], y = local[2 * i + 1];
        // d/ds: R * local
        J(2 * i, 0) = c * x - sn * y;
        J(2 * i + 1, 0) = sn * x + c * y;
        // d/dtheta: s * R'(theta) * local
        J(2 * i, 1) = pose.s * (-sn * x - c * y);
        J(2 * i + 1, 1) = pose.s * (c * x - sn * y);
        J(2 * i, 2) = 1.0;
        J(2 * i + 1, 2) = 0.0;
        J(2 * i, 3) = 0.0;
        J(2 * i + 1, 3) = 1.0;
        for (Index j = 0; j < m; ++j) {
            const double bx = pdm.basis()(2 * i, j), by = pdm.basis()(2 * i + 1, j);
            J(2 * i, PoseParams::kRigid + j) = pose.s * (c * bx - sn * by);
            J(2 * i + 1, PoseParams::kRigid + j) = pose.s * (sn * bx + c * by);
        }
    }
    return J;
}

PoseParams gauss_newton_update(const PdmModel& pdm, const PoseParams& pose,
                               const Eigen::VectorXd& delta_x, const Regularizer& reg,
                               const Eigen::VectorXd& weights, int iterations) {
    check_q(pdm, pose.q);
    const Index n = static_cast<Index>(pdm.landmarks());
    const Index dim = PoseParams::kRigid + static_cast<Index>(pdm.modes());
    if (delta_x.size() != 2 * n) throw DimensionMismatch("delta_x must have length 2n");
    if (reg.diag_inv.size() != dim || reg.center.size() != dim)
        throw DimensionMismatch("regularizer does not match the model");
    if (weights.size() != 0 && weights.size() != n)
        throw DimensionMismatch("weights must have one entry per landmark");
    if (weights.size() != 0 && !(weights.array() > 0.0).all())
        throw InvalidArgument("landmark weights must be positive");
    if (iterations < 0) throw InvalidArgument("iterations must be >= 0");

    Eigen::VectorXd w2(2 * n);
    for (Index i = 0; i < n; ++i) w2[2 * i] = w2[2 * i + 1] = weights.size() ? weights[i] : 1.0;

    const Eigen::VectorXd target = synthesize(pdm, pose).coords() + delta_x;
    const Eigen::VectorXd penalty = reg.strength * reg.diag_inv;
    Eigen::VectorXd p = pose.to_vector();

    for (int iter = 0; iter < iterations; ++iter) {
        const PoseParams current = PoseParams::from_vector(p);
        const Eigen::MatrixXd J = jacobian(pdm, current);
        const Eigen::VectorXd r = target - synthesize(pdm, current).coords();

        Eigen::MatrixXd H = J.transpose() * w2.asDiagonal() * J;
        H.diagonal() += penalty;
        const Eigen::VectorXd g =
            J.transpose() * (w2.cwiseProduct(r)) - penalty.cwiseProduct(p - reg.center);

        // Equilibrate before judging conditioning so that a stiff prior on q
        // does not masquerade as singularity.
        const Eigen::VectorXd d = H.diagonal().cwiseMax(0.0).cwiseSqrt();
        if ((d.array() <= 0.0).any()) throw SingularHessian("Hessian has a zero diagonal entry");
        const Eigen::VectorXd dinv = d.cwiseInverse();
        const Eigen::MatrixXd Hs = dinv.asDiagonal() * H * dinv.asDiagonal();
        const Eigen::LLT<Eigen::MatrixXd> llt(Hs);
        if (llt.info() != Eigen::Success || !(llt.rcond() >= 1e-12))
            throw SingularHessian("Gauss-Newton Hessian is not invertible (condition > 1e12)");
        const Eigen::VectorXd dp = dinv.cwiseProduct(llt.solve(dinv.cwiseProduct(g)));
        p += dp;
        if (!p.allFinite() || !(p[0] > 0.0))
            throw SingularHessian("Gauss-Newton step produced an invalid pose");
    }
    return PoseParams::from_vector(p);
}

double prior_log_density(const PdmModel& pdm, const Eigen::VectorXd& q) {
    check_q(pdm, q);
    return -0.5 * q.cwiseAbs2().cwiseQuotient(pdm.eigenvalues()).sum();
}

}  // namespace elbclm
