#include "elbclm/dataset.hpp"

#include "elbclm/errors.hpp"
#include "elbclm/parallel.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace elbclm {
namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    const auto issp = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; };
    while (!s.empty() && issp(s.front())) s.remove_prefix(1);
    while (!s.empty() && issp(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

bool parse_double(std::string_view token, double& out) {
    if (!token.empty() && token.front() == '+') token.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
    return ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(out);
}

std::vector<std::string_view> tokens(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

// Value after "key:" on a header line, or nullopt when the key is absent.
std::optional<std::string_view> header_value(std::string_view line, std::string_view key) {
    if (line.substr(0, key.size()) != key) return std::nullopt;
    line.remove_prefix(key.size());
    line = trim(line);
    if (line.empty() || line.front() != ':') return std::nullopt;
    line.remove_prefix(1);
    return trim(line);
}

bool wildcard_match(std::string_view pattern, std::string_view name) {
    std::size_t p = 0, n = 0, star = std::string_view::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++p;
            ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

bool is_image_extension(std::string ext) {
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    static const char* const known[] = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".pnm", ".tif", ".tiff"};
    return std::find(std::begin(known), std::end(known), ext) != std::end(known);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

BBox read_bbox_file(const fs::path& path) {
    std::istringstream in(read_text(path));
    BBox box;
    if (!(in >> box.x >> box.y >> box.width >> box.height) || !(box.width > 0.0) ||
        !(box.height > 0.0))
        throw InvalidBBox("malformed box file " + path.string());
    return box;
}

cv::Mat to_mat(const GrayImage& image) {
    const auto bytes = image.to_bytes();
    cv::Mat mat(image.height(), image.width(), CV_8UC1);
    std::copy(bytes.begin(), bytes.end(), mat.data);
    return mat;
}

void write_mat(const fs::path& path, const cv::Mat& mat) {
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), mat);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

Shape parse_pts(std::string_view text) {
    const auto lines = split_lines(text);
    std::size_t idx = 0;
    const auto line_no = [&] { return idx + 1; };
    const auto next_nonblank = [&]() -> std::optional<std::string_view> {
        while (idx < lines.size() && trim(lines[idx]).empty()) ++idx;
        if (idx >= lines.size()) return std::nullopt;
        return trim(lines[idx]);
    };

    auto line = next_nonblank();
    if (!line || !header_value(*line, "version"))
        throw ParseError(line_no(), "expected 'version:' header");
    ++idx;

    line = next_nonblank();
    const auto count_text = line ? header_value(*line, "n_points") : std::nullopt;
    if (!count_text) throw ParseError(line_no(), "expected 'n_points:' header");
    std::size_t count = 0;
    {
        const auto [ptr, ec] = std::from_chars(count_text->data(),
                                               count_text->data() + count_text->size(), count);
        if (ec != std::errc() || ptr != count_text->data() + count_text->size())
            throw ParseError(line_no(), "n_points is not a non-negative integer");
    }
    if (count < 3) throw ParseError(line_no(), "a shape needs at least 3 points");
    ++idx;

    line = next_nonblank();
    if (!line || *line != "{") throw ParseError(line_no(), "expected '{'");
    ++idx;

    Eigen::VectorXd coords(static_cast<Eigen::Index>(2 * count));
    std::size_t found = 0;
    while (true) {
        if (idx >= lines.size())
            throw ParseError(line_no(), "missing '}': header declares " + std::to_string(count) +
                                            " points, found " + std::to_string(found));
        const std::string_view current = trim(lines[idx]);
        if (current == "}") {
            if (found != count)
                throw ParseError(line_no(), "point count mismatch: header declares " +
                                                std::to_string(count) + ", found " +
                                                std::to_string(found));
            ++idx;
            break;
        }
        const auto parts = tokens(current);
        if (parts.size() != 2)
            throw ParseError(line_no(), "expected two coordinates per line");
        if (found == count)
            throw ParseError(line_no(), "point count mismatch: header declares " +
                                            std::to_string(count) + ", found more");
        double x = 0.0, y = 0.0;
        if (!parse_double(parts[0], x) || !parse_double(parts[1], y))
            throw ParseError(line_no(), "coordinate is not a finite number");
        coords[static_cast<Eigen::Index>(2 * found)] = x;
        coords[static_cast<Eigen::Index>(2 * found + 1)] = y;
        ++found;
        ++idx;
    }
    if (next_nonblank()) throw ParseError(line_no(), "unexpected content after '}'");
    return Shape(std::move(coords));
}

std::string format_pts(const Shape& shape) {
    std::string out = "version: 1\nn_points: " + std::to_string(shape.size()) + "\n{\n";
    char buf[64];
    for (std::size_t i = 0; i < shape.size(); ++i) {
        auto r = std::to_chars(buf, buf + sizeof buf, shape.x(i));
        *r.ptr++ = ' ';
        r = std::to_chars(r.ptr, buf + sizeof buf, shape.y(i));
        out.append(buf, r.ptr);
        out.push_back('\n');
    }
    out += "}\n";
    return out;
}

Shape read_pts_file(const fs::path& path) {
    return parse_pts(read_text(path));
}

void write_pts_file(const fs::path& path, const Shape& shape) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_pts(shape);
    if (!out) throw IoError("cannot write " + path.string());
}

GrayImage luma_from_rgb(int width, int height, std::span<const std::uint8_t> rgb) {
    if (width <= 0 || height <= 0 ||
        rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
        throw DimensionMismatch("RGB buffer does not match width * height * 3");
    std::vector<double> data(static_cast<std::size_t>(width) * height);
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = 0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2];
    return GrayImage(width, height, std::move(data));
}

GrayImage load_gray_image(const fs::path& path) {
    cv::Mat mat;
    try {
        mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    } catch (const cv::Exception& e) {
        throw IoError("cannot decode " + path.string() + ": " + e.what());
    }
    if (mat.empty()) throw IoError("cannot decode " + path.string());
    if (mat.depth() == CV_16U) mat.convertTo(mat, CV_8U, 1.0 / 257.0);
    if (mat.depth() != CV_8U) throw IoError("unsupported pixel depth in " + path.string());

    const int w = mat.cols, h = mat.rows;
    switch (mat.channels()) {
        case 1: {
            std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
            for (int y = 0; y < h; ++y)
                std::copy_n(mat.ptr<std::uint8_t>(y), w, bytes.begin() + static_cast<std::ptrdiff_t>(y) * w);
            return GrayImage::from_bytes(w, h, bytes);
        }
        case 3:
        case 4: {
            const int c = mat.channels();
            std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
            for (int y = 0; y < h; ++y) {
                const std::uint8_t* row = mat.ptr<std::uint8_t>(y);
                for (int x = 0; x < w; ++x) {
                    const std::size_t o = (static_cast<std::size_t>(y) * w + x) * 3;
                    rgb[o] = row[x * c + 2];  // OpenCV stores BGR(A)
                    rgb[o + 1] = row[x * c + 1];
                    rgb[o + 2] = row[x * c];
                }
            }
            return luma_from_rgb(w, h, rgb);
        }
        default:
            throw IoError("unsupported channel count in " + path.string());
    }
}

void save_gray_image(const fs::path& path, const GrayImage& image) {
    write_mat(path, to_mat(image));
}

void save_annotated_image(const fs::path& path, const GrayImage& image, const Shape& shape) {
    cv::Mat color;
    cv::cvtColor(to_mat(image), color, cv::COLOR_GRAY2BGR);
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const cv::Point center(static_cast<int>(std::lround(shape.x(i))),
                               static_cast<int>(std::lround(shape.y(i))));
        cv::circle(color, center, 1, cv::Scalar(0, 255, 0), cv::FILLED, cv::LINE_8);
    }
    write_mat(path, color);
}

BBox expand_bbox(const BBox& box, double margin) {
    return {box.x - margin * box.width, box.y - margin * box.height,
            box.width * (1.0 + 2.0 * margin), box.height * (1.0 + 2.0 * margin)};
}

LoadedDataset load_dataset(const fs::path& directory, const LoadOptions& options) {
    if (!fs::is_directory(directory)) throw IoError("not a directory: " + directory.string());

    std::map<std::string, fs::path> images, annotations;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (!entry.is_regular_file()) continue;
        const fs::path& p = entry.path();
        const std::string ext = p.extension().string();
        if (ext == ".pts") {
            annotations[p.stem().string()] = p;
        } else if (is_image_extension(ext) && wildcard_match(options.pattern, p.filename().string())) {
            if (images.contains(p.stem().string()))
                throw IoError("two images share the stem " + p.stem().string());
            images[p.stem().string()] = p;
        }
    }

    LoadedDataset result;
    for (const auto& [stem, image_path] : images) {
        const auto ann = annotations.find(stem);
        if (ann == annotations.end()) {
            result.warnings.push_back("no annotation for " + image_path.filename().string());
            continue;
        }
        Sample sample;
        sample.id = stem;
        try {
            sample.image = load_gray_image(image_path);
            sample.gt_shape = read_pts_file(ann->second);
        } catch (const Error& e) {
            result.warnings.push_back("skipped " + stem + ": " + e.what());
            continue;
        }
        const fs::path box_path = directory / (stem + ".bbox");
        sample.bbox = fs::exists(box_path) ? read_bbox_file(box_path)
                                           : expand_bbox(bounding_box(sample.gt_shape), options.margin);
        if (!result.samples.empty() && sample.gt_shape.size() != result.samples.front().gt_shape.size()) {
            result.warnings.push_back("skipped " + stem + ": landmark count differs from " +
                                      result.samples.front().id);
            continue;
        }
        result.samples.push_back(std::move(sample));
    }
    for (const auto& [stem, ann_path] : annotations)
        if (!images.contains(stem))
            result.warnings.push_back("no image for " + ann_path.filename().string());

    if (result.samples.empty())
        throw EmptyDataset("no image/annotation pairs in " + directory.string());
    return result;
}

void write_dataset(const fs::path& directory, std::span<const Sample> samples) {
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) throw IoError("cannot create " + directory.string());
    for (const Sample& s : samples) {
        if (s.id.empty()) throw InvalidArgument("sample without id");
        save_gray_image(directory / (s.id + ".png"), s.image);
        write_pts_file(directory / (s.id + ".pts"), s.gt_shape);
    }
}

namespace {

// Template landmarks in a face frame with x to the right, y down, eyes
// around y = -0.22 and the chin at y = 1.05.
Eigen::MatrixX2d face_template_points() {
    Eigen::MatrixX2d pts(68, 2);
    const double pi = std::numbers::pi;
    for (int k = 0; k <= 16; ++k) {  // jaw, left ear to right ear via the chin
        const double phi = pi * k / 16.0;
        pts.row(k) << -0.95 * std::cos(phi), 0.10 + 0.95 * std::sin(phi);
    }
    for (int k = 0; k < 5; ++k) {  // brows
        const double u = k / 4.0;
        const double lift = 0.08 * std::sin(pi * u);
        pts.row(17 + k) << -0.78 + 0.62 * u, -0.45 - lift;
        pts.row(26 - k) << 0.78 - 0.62 * u, -0.45 - lift;
    }
    for (int k = 0; k < 4; ++k) pts.row(27 + k) << 0.0, -0.28 + 0.16 * k;  // nose bridge
    for (int k = 0; k < 5; ++k) pts.row(31 + k) << -0.20 + 0.10 * k, 0.28 + 0.04 * (k == 2);
    const auto eye = [&](int first, double cx) {
        // Left corner, two upper lid points, right corner, two lower lid points.
        const double angles[6] = {pi, 2.0 * pi / 3.0, pi / 3.0, 0.0, -pi / 3.0, -2.0 * pi / 3.0};
        for (int k = 0; k < 6; ++k)
            pts.row(first + k) << cx + 0.17 * std::cos(angles[k]), -0.22 - 0.07 * std::sin(angles[k]);
    };
    eye(36, -0.42);
    eye(42, 0.42);
    for (int k = 0; k < 12; ++k) {  // outer lip, left corner clockwise over the top
        const double a = pi - 2.0 * pi * k / 12.0;
        pts.row(48 + k) << 0.38 * std::cos(a), 0.62 - 0.16 * std::sin(a);
    }
    for (int k = 0; k < 8; ++k) {  // inner lip
        const double a = pi - 2.0 * pi * k / 8.0;
        pts.row(60 + k) << 0.25 * std::cos(a), 0.62 - 0.06 * std::sin(a);
    }
    return pts;
}

Eigen::VectorXd flatten(const Eigen::MatrixX2d& pts) {
    Eigen::VectorXd v(2 * pts.rows());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        v[2 * i] = pts(i, 0);
        v[2 * i + 1] = pts(i, 1);
    }
    return v;
}

bool in_range(int i, int lo, int hi) { return i >= lo && i <= hi; }

}  // namespace

PdmModel face_template_pdm() {
    const Eigen::MatrixX2d pts = face_template_points();
    const Eigen::Index n = pts.rows();

    std::vector<Eigen::MatrixX2d> modes(8, Eigen::MatrixX2d::Zero(n, 2));
    for (int i = 0; i < n; ++i) {
        const double x = pts(i, 0), y = pts(i, 1);
        if (in_range(i, 56, 59) || in_range(i, 65, 67) || in_range(i, 5, 11))
            modes[0](i, 1) = 1.0;  // mouth opening drags the lower lip and chin
        if (in_range(i, 0, 16)) modes[1](i, 0) = x;  // jaw width
        if (i == 48 || i == 54 || i == 60 || i == 64) {
            modes[2](i, 0) = x > 0 ? 0.5 : -0.5;  // smile
            modes[2](i, 1) = -1.0;
        }
        if (in_range(i, 17, 26)) modes[3](i, 1) = -1.0;  // brow raise
        if (in_range(i, 36, 47)) {
            const double cy = -0.22;
            modes[4](i, 1) = y < cy - 1e-9 ? -1.0 : (y > cy + 1e-9 ? 1.0 : 0.0);  // eye opening
        }
        if (in_range(i, 27, 35)) modes[5](i, 1) = y + 0.3;  // nose length
        if (in_range(i, 17, 67)) modes[6](i, 0) = 1.0;      // inner features shift sideways
        else modes[6](i, 0) = -0.3 * (1.0 - std::abs(x));
        if (in_range(i, 17, 67)) modes[7](i, 1) = 1.0;  // inner features shift vertically
    }

    Eigen::VectorXd mean = flatten(pts);
    for (Eigen::Index i = 0; i < n; ++i) {
        mean[2 * i] -= pts.col(0).mean();
        mean[2 * i + 1] -= pts.col(1).mean();
    }
    mean /= mean.norm();

    Eigen::MatrixXd rigid(2 * n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        rigid.row(2 * i) << mean[2 * i], -mean[2 * i + 1], 1.0, 0.0;
        rigid.row(2 * i + 1) << mean[2 * i + 1], mean[2 * i], 0.0, 1.0;
    }
    Eigen::MatrixXd all(2 * n, 4 + 8);
    all.leftCols(4) = rigid;
    for (int j = 0; j < 8; ++j) all.col(4 + j) = flatten(modes[j]);
    // Gram-Schmidt, rigid directions first so the modes end up in the tangent space.
    for (Eigen::Index j = 0; j < all.cols(); ++j) {
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index k = 0; k < j; ++k) all.col(j) -= all.col(k).dot(all.col(j)) * all.col(k);
        all.col(j).normalize();
    }
    Eigen::MatrixXd basis = all.rightCols(8);
    for (Eigen::Index j = 0; j < basis.cols(); ++j) {
        Eigen::Index arg = 0;
        basis.col(j).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, j) < 0.0) basis.col(j) *= -1.0;
    }
    Eigen::VectorXd sigma(8);
    sigma << 0.08, 0.06, 0.05, 0.04, 0.03, 0.025, 0.02, 0.015;
    return PdmModel(mean, basis, sigma.array().square().matrix(), 1.0);
}

GrayImage render_blob_image(const Shape& shape, double face_width, const ImageLaw& law,
                            std::uint64_t noise_seed) {
    if (law.width <= 0 || law.height <= 0) throw InvalidArgument("image size must be positive");
    const double sigma = std::max(law.blob_sigma * face_width, 0.5);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const int reach = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> field(static_cast<std::size_t>(law.width) * law.height, law.background);
    for (std::size_t i = 0; i < shape.size(); ++i) {
        // Distinct per-landmark amplitudes keep neighbouring blobs tellable apart.
        const double amp = law.amplitude * (0.5 + 0.05 * static_cast<double>((i * 37) % 11));
        const double cx = shape.x(i), cy = shape.y(i);
        const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - reach);
        const int x1 = std::min(law.width - 1, static_cast<int>(std::ceil(cx)) + reach);
        const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - reach);
        const int y1 = std::min(law.height - 1, static_cast<int>(std::ceil(cy)) + reach);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - cx, dy = y - cy;
                field[static_cast<std::size_t>(y) * law.width + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
            }
    }
    if (law.pixel_noise > 0.0) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> noise(0.0, law.pixel_noise);
        for (double& v : field) v += noise(rng);
    }
    for (double& v : field) v = std::clamp(std::round(v), 0.0, 255.0);
    return GrayImage(law.width, law.height, std::move(field));
}

SyntheticCorpus generate_synthetic_corpus(const PdmModel& pdm_truth, std::size_t count,
                                          double noise_sigma, const ImageLaw& law,
                                          std::uint64_t seed) {
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
    if (!(law.face_width_min > 0.0) || law.face_width_max < law.face_width_min)
        throw InvalidArgument("face width range is invalid");
    const std::size_t m = pdm_truth.modes();
    const double ref_width = pdm_truth.reference_width();

    SyntheticCorpus corpus;
    corpus.samples.resize(count);
    corpus.poses.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::mt19937_64 rng(derive_seed(seed, 0x5a, i));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        PoseParams pose;
        pose.q.resize(static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < m; ++j)
            pose.q[static_cast<Eigen::Index>(j)] =
                std::sqrt(pdm_truth.eigenvalues()[static_cast<Eigen::Index>(j)]) * gauss(rng);
        const double face_width = law.face_width_min + (law.face_width_max - law.face_width_min) * unit(rng);
        pose.s = face_width / ref_width;
        pose.theta = law.max_rotation * (2.0 * unit(rng) - 1.0);
        pose.tx = 0.5 * law.width + law.center_jitter * face_width * (2.0 * unit(rng) - 1.0);
        pose.ty = 0.5 * law.height + law.center_jitter * face_width * (2.0 * unit(rng) - 1.0);

        const Shape clean = synthesize(pdm_truth, pose);
        Eigen::VectorXd noisy = clean.coords();
        if (noise_sigma > 0.0)
            for (Eigen::Index k = 0; k < noisy.size(); ++k) noisy[k] += noise_sigma * gauss(rng);

        Sample& sample = corpus.samples[i];
        char id[32];
        std::snprintf(id, sizeof id, "synth_%05zu", i);
        sample.id = id;
        sample.image = render_blob_image(clean, face_width, law, rng());
        sample.gt_shape = Shape(std::move(noisy));
        sample.bbox = expand_bbox(bounding_box(sample.gt_shape), 0.05);
        corpus.poses[i] = std::move(pose);
    }
    return corpus;
}

}  // namespace elbclm
