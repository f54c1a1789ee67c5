#include "elbclm/shape.hpp"

#include "elbclm/errors.hpp"

#include <cmath>
#include <complex>
#include <limits>

namespace elbclm {

namespace {

bool is_degenerate(const Shape& shape) {
    const double scale = 1.0 + shape.coords().cwiseAbs().maxCoeff();
    return shape.centered_norm() <= 1e-12 * scale;
}

Shape rotate_about_origin(const Shape& shape, double theta) {
    return apply_transform(SimilarityTransform(1.0, theta, 0.0, 0.0), shape);
}

// Rescales an aligned shape onto the plane tangent to the unit-norm mean.
Shape to_tangent(const Shape& aligned, const Shape& mean) {
    return Shape(aligned.coords() / aligned.coords().dot(mean.coords()));
}

}  // namespace

Shape::Shape(Eigen::VectorXd coords) : coords_(std::move(coords)) {
    if (coords_.size() % 2 != 0)
        throw DimensionMismatch("shape coordinate vector must have even length");
    if (coords_.size() < 6)
        throw InvalidArgument("a shape needs at least 3 landmarks");
    if (!coords_.allFinite())
        throw InvalidArgument("shape coordinates must be finite");
}

Shape Shape::from_points(std::span<const Eigen::Vector2d> points) {
    Eigen::VectorXd coords(static_cast<Eigen::Index>(2 * points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        coords[static_cast<Eigen::Index>(2 * i)] = points[i].x();
        coords[static_cast<Eigen::Index>(2 * i + 1)] = points[i].y();
    }
    return Shape(std::move(coords));
}

Eigen::Vector2d Shape::centroid() const {
    const auto pts = coords_.reshaped(2, coords_.size() / 2);
    return pts.rowwise().mean();
}

double Shape::centered_norm() const {
    const auto pts = coords_.reshaped(2, coords_.size() / 2);
    return (pts.colwise() - centroid()).norm();
}

BBox bounding_box(const Shape& shape) {
    const auto pts = shape.coords().reshaped(2, shape.coords().size() / 2);
    const Eigen::Vector2d lo = pts.rowwise().minCoeff();
    const Eigen::Vector2d hi = pts.rowwise().maxCoeff();
    return {lo.x(), lo.y(), hi.x() - lo.x(), hi.y() - lo.y()};
}

SimilarityTransform::SimilarityTransform(double s, double theta, double tx, double ty)
    : s_(s), theta_(theta), tx_(tx), ty_(ty) {
    if (!(s > 0.0) || !std::isfinite(s) || !std::isfinite(theta) || !std::isfinite(tx) ||
        !std::isfinite(ty))
        throw InvalidArgument("similarity transform needs finite fields and s > 0");
}

Eigen::Vector2d SimilarityTransform::apply(const Eigen::Vector2d& p) const {
    const double c = std::cos(theta_), sn = std::sin(theta_);
    return {s_ * (c * p.x() - sn * p.y()) + tx_, s_ * (sn * p.x() + c * p.y()) + ty_};
}

SimilarityTransform SimilarityTransform::inverse() const {
    const double c = std::cos(theta_), sn = std::sin(theta_);
    const double inv_s = 1.0 / s_;
    // -(1/s) R(-theta) t
    const double ix = -inv_s * (c * tx_ + sn * ty_);
    const double iy = -inv_s * (-sn * tx_ + c * ty_);
    return {inv_s, -theta_, ix, iy};
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& first) const {
    const Eigen::Vector2d t = apply({first.tx_, first.ty_});
    return {s_ * first.s_, theta_ + first.theta_, t.x(), t.y()};
}

Shape apply_transform(const SimilarityTransform& transform, const Shape& shape) {
    if (shape.empty()) throw InvalidArgument("apply_transform on an empty shape");
    const double c = std::cos(transform.theta()), sn = std::sin(transform.theta());
    const double s = transform.scale();
    Eigen::VectorXd out(shape.coords().size());
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const double x = shape.x(i), y = shape.y(i);
        out[static_cast<Eigen::Index>(2 * i)] = s * (c * x - sn * y) + transform.tx();
        out[static_cast<Eigen::Index>(2 * i + 1)] = s * (sn * x + c * y) + transform.ty();
    }
    return Shape(std::move(out));
}

SimilarityTransform procrustes_align_pair(const Shape& src, const Shape& dst) {
    if (src.size() != dst.size())
        throw DimensionMismatch("procrustes: landmark counts differ");
    if (is_degenerate(src)) throw DegenerateShape("source shape has zero variance");
    if (is_degenerate(dst)) throw DegenerateShape("target shape has zero variance");

    const Eigen::Vector2d cs = src.centroid(), cd = dst.centroid();
    double dot = 0.0, cross = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Eigen::Vector2d a = src.point(i) - cs;
        const Eigen::Vector2d b = dst.point(i) - cd;
        dot += a.x() * b.x() + a.y() * b.y();
        cross += a.x() * b.y() - a.y() * b.x();
        norm2 += a.squaredNorm();
    }
    const double ka = dot / norm2, kb = cross / norm2;
    const double s = std::hypot(ka, kb);
    const double theta = std::atan2(kb, ka);
    // t = cd - s R cs
    const Eigen::Vector2d rc{ka * cs.x() - kb * cs.y(), kb * cs.x() + ka * cs.y()};
    return {s, theta, cd.x() - rc.x(), cd.y() - rc.y()};
}

double squared_distance(const Shape& a, const Shape& b) {
    if (a.size() != b.size()) throw DimensionMismatch("squared_distance: landmark counts differ");
    return (a.coords() - b.coords()).squaredNorm();
}

Shape normalize_shape(const Shape& shape) {
    if (is_degenerate(shape)) throw DegenerateShape("cannot normalize a zero-variance shape");
    const Eigen::Vector2d c = shape.centroid();
    const double inv = 1.0 / shape.centered_norm();
    Eigen::VectorXd out(shape.coords().size());
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out[static_cast<Eigen::Index>(2 * i)] = (shape.x(i) - c.x()) * inv;
        out[static_cast<Eigen::Index>(2 * i + 1)] = (shape.y(i) - c.y()) * inv;
    }
    return Shape(std::move(out));
}

ProcrustesResult generalized_procrustes(std::span<const Shape> shapes, double tol, int max_iter) {
    if (shapes.size() < 2) throw InsufficientData("generalized procrustes needs >= 2 shapes");
    const std::size_t n = shapes.front().size();
    for (const Shape& s : shapes)
        if (s.size() != n) throw DimensionMismatch("generalized procrustes: landmark counts differ");

    // Rotation gauge: rotate the mean so that the transforms carrying it onto
    // the raw inputs average (as complex numbers s*e^{i theta}) to angle 0.
    const auto fix_gauge = [&](const Shape& mean) {
        std::complex<double> acc{0.0, 0.0};
        for (const Shape& s : shapes) {
            const SimilarityTransform t = procrustes_align_pair(mean, s);
            acc += std::polar(t.scale() / s.centered_norm(), t.theta());
        }
        if (std::abs(acc) <= 1e-12 * static_cast<double>(shapes.size())) return mean;
        return rotate_about_origin(mean, std::arg(acc));
    };

    ProcrustesResult result;
    Shape mean = fix_gauge(normalize_shape(shapes.front()));
    result.aligned.assign(shapes.begin(), shapes.end());

    for (int iter = 1; iter <= max_iter; ++iter) {
        result.iterations = iter;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n));
        for (std::size_t k = 0; k < shapes.size(); ++k) {
            result.aligned[k] =
                to_tangent(apply_transform(procrustes_align_pair(shapes[k], mean), shapes[k]), mean);
            sum += result.aligned[k].coords();
        }
        Shape next = fix_gauge(normalize_shape(Shape(sum / static_cast<double>(shapes.size()))));
        const double change = (next.coords() - mean.coords()).norm();
        mean = std::move(next);
        if (change < tol) break;
    }

    for (std::size_t k = 0; k < shapes.size(); ++k)
        result.aligned[k] =
            to_tangent(apply_transform(procrustes_align_pair(shapes[k], mean), shapes[k]), mean);
    result.mean = std::move(mean);
    return result;
}

}  // namespace elbclm
