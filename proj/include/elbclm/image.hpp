#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace elbclm {

/// Single-channel image, row-major, intensities on the 8-bit [0, 255] scale
/// held in double precision.
class GrayImage {
public:
    GrayImage() = default;
    GrayImage(int width, int height, double fill = 0.0);
    GrayImage(int width, int height, std::vector<double> data);

    static GrayImage from_bytes(int width, int height, std::span<const std::uint8_t> bytes);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }
    const std::vector<double>& data() const { return data_; }

    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    double clamped(int x, int y) const {
        return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
    }

    /// Nearest pixel, coordinates clamped to the image.
    double sample_nearest(double x, double y) const {
        return clamped(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
    }

    /// Bilinear interpolation with edge clamping.
    double sample_bilinear(double x, double y) const {
        const double fx = std::floor(x), fy = std::floor(y);
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const double ax = x - fx, ay = y - fy;
        const double top = (1.0 - ax) * clamped(x0, y0) + ax * clamped(x0 + 1, y0);
        const double bottom = (1.0 - ax) * clamped(x0, y0 + 1) + ax * clamped(x0 + 1, y0 + 1);
        return (1.0 - ay) * top + ay * bottom;
    }

    /// Rounded and saturated to 8 bits.
    std::vector<std::uint8_t> to_bytes() const;

    friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

}  // namespace elbclm
