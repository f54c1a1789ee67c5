#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace elbclm {

/// Ordered set of n >= 3 landmarks stored flat as (x1, y1, ..., xn, yn).
class Shape {
public:
    Shape() = default;
    explicit Shape(Eigen::VectorXd coords);

    static Shape from_points(std::span<const Eigen::Vector2d> points);

    std::size_t size() const { return static_cast<std::size_t>(coords_.size() / 2); }
    bool empty() const { return coords_.size() == 0; }

    double x(std::size_t i) const { return coords_[static_cast<Eigen::Index>(2 * i)]; }
    double y(std::size_t i) const { return coords_[static_cast<Eigen::Index>(2 * i + 1)]; }
    Eigen::Vector2d point(std::size_t i) const { return {x(i), y(i)}; }

    const Eigen::VectorXd& coords() const { return coords_; }

    Eigen::Vector2d centroid() const;
    /// Frobenius norm of the centroid-subtracted coordinates.
    double centered_norm() const;

    friend bool operator==(const Shape& a, const Shape& b) { return a.coords_ == b.coords_; }

private:
    Eigen::VectorXd coords_;
};

/// Axis-aligned rectangle in pixels.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double width = 0.0;
    double height = 0.0;

    Eigen::Vector2d center() const { return {x + 0.5 * width, y + 0.5 * height}; }
    friend bool operator==(const BBox&, const BBox&) = default;
};

BBox bounding_box(const Shape& shape);

/// x -> s * R(theta) * x + t
class SimilarityTransform {
public:
    SimilarityTransform() = default;
    SimilarityTransform(double s, double theta, double tx, double ty);

    double scale() const { return s_; }
    double theta() const { return theta_; }
    double tx() const { return tx_; }
    double ty() const { return ty_; }

    Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
    SimilarityTransform inverse() const;
    /// (*this) after `first`: x -> this(first(x)).
    SimilarityTransform compose(const SimilarityTransform& first) const;

private:
    double s_ = 1.0;
    double theta_ = 0.0;
    double tx_ = 0.0;
    double ty_ = 0.0;
};

Shape apply_transform(const SimilarityTransform& transform, const Shape& shape);

/// Closed-form least-squares similarity taking `src` onto `dst`.
/// Throws DegenerateShape when either shape has all points coincident.
SimilarityTransform procrustes_align_pair(const Shape& src, const Shape& dst);

/// Sum of squared point distances between two equally sized shapes.
double squared_distance(const Shape& a, const Shape& b);

/// Center at the origin and scale to unit centered norm.
Shape normalize_shape(const Shape& shape);

struct ProcrustesResult {
    std::vector<Shape> aligned;
    Shape mean;
    int iterations = 0;
};

/// Generalized Procrustes analysis. The returned mean is centered, has unit
/// centered norm, and its rotation is fixed so that the circular mean of the
/// rotations carrying it onto the input shapes is zero; upright input
/// corpora therefore yield an upright mean. Aligned shapes are projected
/// into the tangent space of the mean (aligned . mean = 1).
ProcrustesResult generalized_procrustes(std::span<const Shape> shapes, double tol = 1e-8,
                                        int max_iter = 100);

}  // namespace elbclm
