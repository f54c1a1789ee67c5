#pragma once

#include "elbclm/pdm.hpp"
#include "elbclm/sample.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace elbclm {

/// Parses 300-W style annotation text:
///
///   version: 1
///   n_points: 68
///   {
///   x y            (n_points lines)
///   }
///
/// Trailing whitespace and CRLF line endings are accepted. Throws ParseError
/// carrying the 1-based line number; no partial shape is ever returned.
Shape parse_pts(std::string_view text);

/// Inverse of parse_pts; coordinates use the shortest exact decimal form.
std::string format_pts(const Shape& shape);

Shape read_pts_file(const std::filesystem::path& path);
void write_pts_file(const std::filesystem::path& path, const Shape& shape);

/// 0.299 R + 0.587 G + 0.114 B over interleaved 8-bit RGB.
GrayImage luma_from_rgb(int width, int height, std::span<const std::uint8_t> rgb);

/// Reads 8-bit grayscale or 24/32-bit color rasters (PNG, BMP, PGM/PPM, JPEG, TIFF).
GrayImage load_gray_image(const std::filesystem::path& path);
void save_gray_image(const std::filesystem::path& path, const GrayImage& image);
/// Writes a color copy with a filled 3-pixel disc at every landmark.
void save_annotated_image(const std::filesystem::path& path, const GrayImage& image,
                          const Shape& shape);

/// Grows a box by `margin` of its size on every side.
BBox expand_bbox(const BBox& box, double margin);

struct LoadOptions {
    /// Wildcard ('*', '?') applied to image file names.
    std::string pattern = "*";
    double margin = 0.05;
};

struct LoadedDataset {
    std::vector<Sample> samples;
    std::vector<std::string> warnings;  // unpaired or unreadable files
};

/// Pairs every image with its same-stem .pts file, sorted by file name. A
/// same-stem .bbox file ("x y width height") overrides the box derived from
/// the annotation. Throws EmptyDataset when nothing pairs up.
LoadedDataset load_dataset(const std::filesystem::path& directory, const LoadOptions& options = {});

/// Writes <id>.png and <id>.pts for every sample.
void write_dataset(const std::filesystem::path& directory, std::span<const Sample> samples);

/// A 68-point face template in the Multi-PIE ordering (outer eye corners at
/// 36 and 45) with eight hand-built deformation modes, used as ground truth
/// for synthetic corpora.
PdmModel face_template_pdm();

/// Rendering law for synthetic faces: one Gaussian intensity blob per
/// landmark over a flat background, so image content determines the shape.
struct ImageLaw {
    int width = 128;
    int height = 128;
    double face_width_min = 70.0;
    double face_width_max = 90.0;
    double max_rotation = 0.15;    // radians
    double center_jitter = 0.05;   // fraction of face width
    double background = 40.0;
    double amplitude = 160.0;
    double blob_sigma = 0.03;      // fraction of face width
    double pixel_noise = 0.0;      // Gaussian sigma in gray levels
};

struct SyntheticCorpus {
    std::vector<Sample> samples;
    std::vector<PoseParams> poses;  // generating pose of each sample
};

/// q ~ N(0, diag(lambda)) and a random similarity per sample; ground truth
/// receives i.i.d. coordinate noise of `noise_sigma` pixels while the image
/// is rendered from the noise-free shape. Fully determined by `seed`.
SyntheticCorpus generate_synthetic_corpus(const PdmModel& pdm_truth, std::size_t count,
                                          double noise_sigma, const ImageLaw& law,
                                          std::uint64_t seed);

GrayImage render_blob_image(const Shape& shape, double face_width, const ImageLaw& law,
                            std::uint64_t noise_seed);

}  // namespace elbclm
