#include "elbclm/features.hpp"

#include "elbclm/errors.hpp"

#include <cmath>
#include <numbers>

namespace elbclm {

GrayImage::GrayImage(int width, int height, double fill)
    : width_(width), height_(height),
      data_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill) {
    if (width <= 0 || height <= 0) throw InvalidArgument("image dimensions must be positive");
}

GrayImage::GrayImage(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width <= 0 || height <= 0) throw InvalidArgument("image dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(width) * height)
        throw DimensionMismatch("image data length must equal width * height");
}

GrayImage GrayImage::from_bytes(int width, int height, std::span<const std::uint8_t> bytes) {
    return GrayImage(width, height, std::vector<double>(bytes.begin(), bytes.end()));
}

std::vector<std::uint8_t> GrayImage::to_bytes() const {
    std::vector<std::uint8_t> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](double v) {
        return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    });
    return out;
}

void HogConfig::validate() const {
    if (patch_size <= 0 || patch_size % 2 != 0) throw InvalidArgument("HOG patch_size must be positive and even");
    if (cell_size <= 0 || patch_size % cell_size != 0)
        throw InvalidArgument("HOG patch_size must be divisible by cell_size");
    if (orientation_bins < 2) throw InvalidArgument("HOG needs at least 2 orientation bins");
}

PixelDiffConfig PixelDiffConfig::sample(std::size_t landmarks, int pairs_per_landmark,
                                        double radius, std::mt19937_64& rng) {
    if (pairs_per_landmark < 1) throw InvalidArgument("pairs_per_landmark must be >= 1");
    if (!(radius > 0.0)) throw InvalidArgument("pixel-difference radius must be positive");
    PixelDiffConfig cfg;
    cfg.pairs_per_landmark = pairs_per_landmark;
    cfg.radius = radius;
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto draw = [&] {
        for (;;) {
            const Eigen::Vector2d p{unit(rng), unit(rng)};
            if (p.squaredNorm() <= 1.0) return Eigen::Vector2d(radius * p);
        }
    };
    cfg.offsets.resize(landmarks);
    for (auto& pairs : cfg.offsets) {
        pairs.reserve(static_cast<std::size_t>(pairs_per_landmark));
        for (int k = 0; k < pairs_per_landmark; ++k) {
            const Eigen::Vector2d u = draw();
            const Eigen::Vector2d v = draw();
            pairs.push_back({u, v});
        }
    }
    return cfg;
}

void PixelDiffConfig::validate(std::size_t landmarks) const {
    if (offsets.size() != landmarks)
        throw DimensionMismatch("pixel-difference offsets cover " + std::to_string(offsets.size()) +
                                " landmarks, expected " + std::to_string(landmarks));
    for (const auto& pairs : offsets) {
        if (pairs.size() != static_cast<std::size_t>(pairs_per_landmark))
            throw DimensionMismatch("pixel-difference offset count disagrees with pairs_per_landmark");
        for (const OffsetPair& p : pairs)
            if (p.u.norm() > radius * (1.0 + 1e-12) || p.v.norm() > radius * (1.0 + 1e-12))
                throw InvalidArgument("pixel-difference offset outside the configured radius");
    }
}

Eigen::VectorXd extract_hog_patch(const GrayImage& img, const Eigen::Vector2d& center,
                                  double local_scale, const HogConfig& cfg, double rotation) {
    cfg.validate();
    const int P = cfg.patch_size;
    const int G = P + 2;  // one-pixel border for central differences
    const double c = std::cos(rotation), sn = std::sin(rotation);

    std::vector<double> grid(static_cast<std::size_t>(G) * G);
    for (int gy = 0; gy < G; ++gy) {
        const double oy = (gy - 1 - 0.5 * P + 0.5) * local_scale;
        for (int gx = 0; gx < G; ++gx) {
            const double ox = (gx - 1 - 0.5 * P + 0.5) * local_scale;
            grid[static_cast<std::size_t>(gy) * G + gx] =
                img.sample_bilinear(center.x() + c * ox - sn * oy, center.y() + sn * ox + c * oy);
        }
    }

    const int cells = P / cfg.cell_size;
    const int bins = cfg.orientation_bins;
    const double range = cfg.signed_orientation ? 2.0 * std::numbers::pi : std::numbers::pi;
    const double bin_width = range / bins;
    Eigen::VectorXd hist = Eigen::VectorXd::Zero(cfg.length());

    for (int y = 0; y < P; ++y) {
        for (int x = 0; x < P; ++x) {
            const auto g = [&](int xx, int yy) { return grid[static_cast<std::size_t>(yy + 1) * G + xx + 1]; };
            const double dx = 0.5 * (g(x + 1, y) - g(x - 1, y));
            const double dy = 0.5 * (g(x, y + 1) - g(x, y - 1));
            const double mag = std::hypot(dx, dy);
            if (mag == 0.0) continue;
            double angle = std::atan2(dy, dx);
            if (angle < 0.0) angle += 2.0 * std::numbers::pi;
            if (!cfg.signed_orientation && angle >= std::numbers::pi) angle -= std::numbers::pi;
            const double pos = angle / bin_width;
            const double lower = std::floor(pos);
            const double frac = pos - lower;
            const int b0 = static_cast<int>(lower) % bins;
            const int b1 = (b0 + 1) % bins;
            const int cell = (y / cfg.cell_size) * cells + x / cfg.cell_size;
            hist[cell * bins + b0] += (1.0 - frac) * mag;
            hist[cell * bins + b1] += frac * mag;
        }
    }

    const double norm = hist.norm();
    if (norm <= 1e-12) return Eigen::VectorXd::Zero(hist.size());
    return hist / norm;
}

Eigen::VectorXd extract_pixel_diff(const GrayImage& img, const Shape& shape,
                                   std::size_t landmark_index, double face_scale,
                                   const PixelDiffConfig& cfg, double rotation) {
    if (landmark_index >= shape.size()) throw InvalidArgument("landmark index out of range");
    if (landmark_index >= cfg.offsets.size())
        throw DimensionMismatch("no pixel-difference offsets for this landmark");
    const auto& pairs = cfg.offsets[landmark_index];
    const Eigen::Vector2d base = shape.point(landmark_index);
    const double c = std::cos(rotation) * face_scale, sn = std::sin(rotation) * face_scale;
    const auto place = [&](const Eigen::Vector2d& o) {
        return Eigen::Vector2d(base.x() + c * o.x() - sn * o.y(), base.y() + sn * o.x() + c * o.y());
    };
    Eigen::VectorXd out(static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const Eigen::Vector2d a = place(pairs[k].u);
        const Eigen::Vector2d b = place(pairs[k].v);
        out[static_cast<Eigen::Index>(k)] =
            (img.sample_nearest(a.x(), a.y()) - img.sample_nearest(b.x(), b.y())) / 255.0;
    }
    return out;
}

Eigen::VectorXd assemble_stage_features(const GrayImage& img, const Shape& shape,
                                        const Eigen::VectorXd& q_prev,
                                        const Eigen::VectorXd& eigenvalues, const FaceFrame& frame,
                                        const StageFeatureSpec& spec) {
    if (eigenvalues.size() != 0 && q_prev.size() != eigenvalues.size())
        throw DimensionMismatch("q_prev has length " + std::to_string(q_prev.size()) + ", expected " +
                                std::to_string(eigenvalues.size()));
    const FeatureLayout layout{shape.size(), static_cast<std::size_t>(spec.per_landmark()),
                               static_cast<std::size_t>(eigenvalues.size())};
    Eigen::VectorXd out(static_cast<Eigen::Index>(layout.total()));
    const auto per = static_cast<Eigen::Index>(layout.per_landmark);

    if (spec.kind == FeatureKind::Hog) {
        const double local_scale = frame.face_scale / spec.hog_face_px;
        for (std::size_t i = 0; i < shape.size(); ++i)
            out.segment(static_cast<Eigen::Index>(i) * per, per) =
                extract_hog_patch(img, shape.point(i), local_scale, spec.hog, frame.rotation);
    } else {
        spec.pixel.validate(shape.size());
        for (std::size_t i = 0; i < shape.size(); ++i)
            out.segment(static_cast<Eigen::Index>(i) * per, per) =
                extract_pixel_diff(img, shape, i, frame.face_scale, spec.pixel, frame.rotation);
    }

    const auto qpos = static_cast<Eigen::Index>(layout.landmark_block());
    if (layout.q_length > 0)
        out.segment(qpos, eigenvalues.size()) = q_prev.cwiseQuotient(eigenvalues.cwiseSqrt());
    out[out.size() - 1] = 1.0;
    return out;
}

}  // namespace elbclm
