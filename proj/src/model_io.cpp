// Binary model format, all integers and doubles little-endian:
//
//   "ELBC" | u32 format_version | u64 seed
//   u32 length | pdm section
//   u32 length | schedule section (flags + per-stage configuration)
//   u32 length | stages section (trained regressors)
#include "elbclm/cascade.hpp"

#include "elbclm/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

namespace elbclm {

namespace {

using Eigen::Index;

constexpr char kMagic[4] = {'E', 'L', 'B', 'C'};
constexpr std::uint32_t kForestKind = 0;
constexpr std::uint32_t kLinearKind = 1;

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        v = to_little(v);
        char raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        buf_.append(raw, sizeof(T));
    }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void i32(std::int32_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

    void count(std::size_t n) {
        if (n > std::numeric_limits<std::uint32_t>::max())
            throw InvalidArgument("model component too large for the file format");
        u32(static_cast<std::uint32_t>(n));
    }
    void vec(const Eigen::VectorXd& v) {
        count(static_cast<std::size_t>(v.size()));
        for (Index i = 0; i < v.size(); ++i) f64(v[i]);
    }
    void mat(const Eigen::MatrixXd& m) {
        count(static_cast<std::size_t>(m.rows()));
        count(static_cast<std::size_t>(m.cols()));
        for (Index j = 0; j < m.cols(); ++j)
            for (Index i = 0; i < m.rows(); ++i) f64(m(i, j));
    }
    void section(const ByteWriter& payload) {
        count(payload.buf_.size());
        buf_ += payload.buf_;
    }
    void raw(const char* data, std::size_t n) { buf_.append(data, n); }

    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::size_t base) : data_(data), base_(base) {}

    std::size_t offset() const { return base_ + pos_; }
    bool done() const { return pos_ == data_.size(); }

    void need(std::size_t n, const char* what) const {
        if (data_.size() - pos_ < n)
            throw FormatError(offset(), std::string("truncated while reading ") + what);
    }

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }
    std::uint32_t u32(const char* what) { return get<std::uint32_t>(what); }
    std::uint64_t u64(const char* what) { return get<std::uint64_t>(what); }
    std::int32_t i32(const char* what) { return get<std::int32_t>(what); }
    double f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }

    std::size_t count(const char* what, std::size_t element_bytes) {
        const std::uint32_t n = u32(what);
        if (element_bytes > 0) need(static_cast<std::size_t>(n) * element_bytes, what);
        return n;
    }
    Eigen::VectorXd vec(const char* what) {
        const std::size_t n = count(what, 8);
        Eigen::VectorXd v(static_cast<Index>(n));
        for (std::size_t i = 0; i < n; ++i) v[static_cast<Index>(i)] = f64(what);
        return v;
    }
    Eigen::MatrixXd mat(const char* what) {
        const std::size_t rows = count(what, 0);
        const std::size_t cols = count(what, 0);
        need(rows * cols * 8, what);
        Eigen::MatrixXd m(static_cast<Index>(rows), static_cast<Index>(cols));
        for (std::size_t j = 0; j < cols; ++j)
            for (std::size_t i = 0; i < rows; ++i) m(static_cast<Index>(i), static_cast<Index>(j)) = f64(what);
        return m;
    }
    ByteReader section(const char* what) {
        const std::size_t n = count(what, 1);
        ByteReader sub(data_.substr(pos_, n), offset());
        pos_ += n;
        return sub;
    }
    void expect_done(const char* what) const {
        if (!done()) throw FormatError(offset(), std::string("unexpected trailing bytes in ") + what);
    }

private:
    std::string_view data_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

void write_pdm(ByteWriter& w, const PdmModel& pdm) {
    w.f64(pdm.variance_fraction());
    w.vec(pdm.mean_shape());
    w.mat(pdm.basis());
    w.vec(pdm.eigenvalues());
}

PdmModel read_pdm(ByteReader& r) {
    const std::size_t at = r.offset();
    const double fraction = r.f64("pdm variance fraction");
    Eigen::VectorXd mean = r.vec("pdm mean shape");
    Eigen::MatrixXd basis = r.mat("pdm basis");
    Eigen::VectorXd eigenvalues = r.vec("pdm eigenvalues");
    r.expect_done("pdm section");
    try {
        return PdmModel(std::move(mean), std::move(basis), std::move(eigenvalues), fraction);
    } catch (const Error& e) {
        throw FormatError(at, std::string("invalid point distribution model: ") + e.what());
    }
}

void write_stage_config(ByteWriter& w, const StageConfig& cfg) {
    const StageFeatureSpec& f = cfg.features;
    w.u32(static_cast<std::uint32_t>(f.kind));
    w.i32(f.pixel.pairs_per_landmark);
    w.f64(f.pixel.radius);
    w.count(f.pixel.offsets.size());
    for (const auto& pairs : f.pixel.offsets) {
        w.count(pairs.size());
        for (const OffsetPair& p : pairs) {
            w.f64(p.u.x());
            w.f64(p.u.y());
            w.f64(p.v.x());
            w.f64(p.v.y());
        }
    }
    w.i32(f.hog.patch_size);
    w.i32(f.hog.cell_size);
    w.i32(f.hog.orientation_bins);
    w.u32(f.hog.signed_orientation ? 1 : 0);
    w.f64(f.hog_face_px);
    w.i32(cfg.forest.trees_per_landmark);
    w.i32(cfg.forest.max_depth);
    w.i32(cfg.forest.candidate_splits);
    w.f64(cfg.forest.bootstrap_fraction);
    w.f64(cfg.ridge_lambda);
    w.f64(cfg.ridge_scale);
    w.f64(cfg.gn_strength);
    w.i32(cfg.gn_iterations);
    w.vec(cfg.gn_weights);
    w.u32(static_cast<std::uint32_t>(cfg.prior_center));
    w.f64(cfg.step_scale);
}

StageConfig read_stage_config(ByteReader& r) {
    StageConfig cfg;
    StageFeatureSpec& f = cfg.features;
    const std::size_t kind_at = r.offset();
    const std::uint32_t kind = r.u32("feature kind");
    if (kind > 1) throw FormatError(kind_at, "unknown feature kind " + std::to_string(kind));
    f.kind = static_cast<FeatureKind>(kind);
    f.pixel.pairs_per_landmark = r.i32("pairs per landmark");
    f.pixel.radius = r.f64("pixel radius");
    f.pixel.offsets.resize(r.count("offset landmarks", 4));
    for (auto& pairs : f.pixel.offsets) {
        pairs.resize(r.count("offset pairs", 32));
        for (OffsetPair& p : pairs) {
            p.u.x() = r.f64("offset");
            p.u.y() = r.f64("offset");
            p.v.x() = r.f64("offset");
            p.v.y() = r.f64("offset");
        }
    }
    f.hog.patch_size = r.i32("hog patch size");
    f.hog.cell_size = r.i32("hog cell size");
    f.hog.orientation_bins = r.i32("hog bins");
    f.hog.signed_orientation = r.u32("hog signed") != 0;
    f.hog_face_px = r.f64("hog face px");
    cfg.forest.trees_per_landmark = r.i32("trees per landmark");
    cfg.forest.max_depth = r.i32("tree depth");
    cfg.forest.candidate_splits = r.i32("candidate splits");
    cfg.forest.bootstrap_fraction = r.f64("bootstrap fraction");
    cfg.ridge_lambda = r.f64("ridge lambda");
    cfg.ridge_scale = r.f64("ridge scale");
    cfg.gn_strength = r.f64("gauss-newton strength");
    cfg.gn_iterations = r.i32("gauss-newton iterations");
    cfg.gn_weights = r.vec("landmark weights");
    const std::size_t prior_at = r.offset();
    const std::uint32_t prior = r.u32("prior center");
    if (prior > 1) throw FormatError(prior_at, "unknown prior center mode " + std::to_string(prior));
    cfg.prior_center = static_cast<PriorCenter>(prior);
    cfg.step_scale = r.f64("step scale");
    return cfg;
}

void write_regressor(ByteWriter& w, const StageRegressor& regressor) {
    if (const auto* forest = std::get_if<ForestStage>(&regressor)) {
        w.u32(kForestKind);
        w.i32(forest->config.trees_per_landmark);
        w.i32(forest->config.max_depth);
        w.i32(forest->config.candidate_splits);
        w.f64(forest->config.bootstrap_fraction);
        w.count(forest->layout.landmarks);
        w.count(forest->layout.per_landmark);
        w.count(forest->layout.q_length);
        w.count(forest->trees.size());
        for (const RegressionTree& tree : forest->trees) {
            w.count(tree.feature.size());
            for (std::size_t k = 0; k < tree.feature.size(); ++k) {
                w.i32(tree.feature[k]);
                w.f64(tree.threshold[k]);
            }
        }
        w.mat(forest->global_linear);
        w.vec(forest->offset);
        w.f64(forest->ridge_lambda);
    } else {
        const auto& linear = std::get<LinearRegressor>(regressor);
        w.u32(kLinearKind);
        w.mat(linear.weights);
        w.f64(linear.ridge_lambda);
    }
}

StageRegressor read_regressor(ByteReader& r) {
    const std::size_t at = r.offset();
    const std::uint32_t kind = r.u32("regressor kind");
    if (kind == kLinearKind) {
        LinearRegressor linear;
        linear.weights = r.mat("linear weights");
        linear.ridge_lambda = r.f64("ridge lambda");
        return linear;
    }
    if (kind != kForestKind) throw FormatError(at, "unknown regressor kind " + std::to_string(kind));
    ForestStage forest;
    forest.config.trees_per_landmark = r.i32("trees per landmark");
    forest.config.max_depth = r.i32("tree depth");
    forest.config.candidate_splits = r.i32("candidate splits");
    forest.config.bootstrap_fraction = r.f64("bootstrap fraction");
    try {
        forest.config.validate();
    } catch (const Error& e) {
        throw FormatError(at, std::string("invalid forest configuration: ") + e.what());
    }
    forest.layout.landmarks = r.count("forest landmarks", 0);
    forest.layout.per_landmark = r.count("forest features per landmark", 0);
    forest.layout.q_length = r.count("forest q length", 0);
    forest.trees.resize(r.count("tree count", 4));
    const std::size_t internal = (std::size_t{1} << forest.config.max_depth) - 1;
    for (RegressionTree& tree : forest.trees) {
        const std::size_t nodes_at = r.offset();
        const std::size_t nodes = r.count("tree nodes", 12);
        if (nodes != internal) throw FormatError(nodes_at, "tree node count disagrees with depth");
        tree.feature.resize(nodes);
        tree.threshold.resize(nodes);
        for (std::size_t k = 0; k < nodes; ++k) {
            const std::size_t feature_at = r.offset();
            tree.feature[k] = r.i32("split feature");
            if (tree.feature[k] < 0 ||
                static_cast<std::size_t>(tree.feature[k]) >= std::max<std::size_t>(forest.layout.per_landmark, 1))
                throw FormatError(feature_at, "split feature index out of range");
            tree.threshold[k] = r.f64("split threshold");
        }
    }
    if (forest.trees.size() != forest.layout.landmarks * static_cast<std::size_t>(forest.config.trees_per_landmark))
        throw FormatError(at, "tree count disagrees with landmarks x trees_per_landmark");
    forest.global_linear = r.mat("forest global map");
    forest.offset = r.vec("forest offset");
    forest.ridge_lambda = r.f64("ridge lambda");
    if (static_cast<std::size_t>(forest.global_linear.cols()) != forest.leaf_count() + forest.layout.q_length ||
        forest.offset.size() != forest.global_linear.rows())
        throw FormatError(at, "forest global map dimensions are inconsistent");
    return forest;
}

}  // namespace

std::string serialize_model(const CascadeModel& model) {
    ByteWriter out;
    out.raw(kMagic, sizeof kMagic);
    out.u32(model.format_version);
    out.u64(model.seed);

    ByteWriter pdm;
    write_pdm(pdm, model.pdm);
    out.section(pdm);

    ByteWriter schedule;
    schedule.u32(model.flags.constrained ? 1 : 0);
    schedule.u32(model.flags.q_features ? 1 : 0);
    schedule.f64(model.flags.clamp_factor);
    schedule.count(model.schedule.stages.size());
    for (const StageConfig& cfg : model.schedule.stages) write_stage_config(schedule, cfg);
    out.section(schedule);

    ByteWriter stages;
    stages.count(model.stages.size());
    for (const StageRegressor& r : model.stages) write_regressor(stages, r);
    out.section(stages);
    return out.take();
}

CascadeModel deserialize_model(std::string_view bytes) {
    ByteReader r(bytes, 0);
    r.need(sizeof kMagic, "magic bytes");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw FormatError(0, "bad magic bytes (expected \"ELBC\")");
    r.get<std::uint32_t>("magic bytes");

    CascadeModel model;
    const std::size_t version_at = r.offset();
    model.format_version = r.u32("format version");
    if (model.format_version != CascadeModel::kFormatVersion)
        throw FormatError(version_at, "unsupported format version " +
                                          std::to_string(model.format_version) + " (supported: " +
                                          std::to_string(CascadeModel::kFormatVersion) + ")");
    model.seed = r.u64("seed");

    ByteReader pdm = r.section("pdm section");
    model.pdm = read_pdm(pdm);

    ByteReader schedule = r.section("schedule section");
    model.flags.constrained = schedule.u32("constrained flag") != 0;
    model.flags.q_features = schedule.u32("q-feature flag") != 0;
    model.flags.clamp_factor = schedule.f64("clamp factor");
    model.schedule.stages.resize(schedule.count("stage count", 4));
    for (StageConfig& cfg : model.schedule.stages) cfg = read_stage_config(schedule);
    schedule.expect_done("schedule section");

    ByteReader stages = r.section("stages section");
    const std::size_t count_at = stages.offset();
    const std::size_t stage_count = stages.count("stage count", 4);
    for (std::size_t t = 0; t < stage_count; ++t) model.stages.push_back(read_regressor(stages));
    stages.expect_done("stages section");
    r.expect_done("model file");

    if (model.stages.size() != model.schedule.stages.size())
        throw FormatError(count_at, "stage count disagrees with the schedule");
    for (std::size_t t = 0; t < model.stages.size(); ++t) {
        const std::size_t expected = model.stage_feature_length(t);
        const std::size_t width = std::visit(
            [](const auto& reg) -> std::size_t {
                if constexpr (std::is_same_v<std::decay_t<decltype(reg)>, ForestStage>)
                    return reg.layout.total();
                else
                    return static_cast<std::size_t>(reg.weights.cols());
            },
            model.stages[t]);
        if (width != expected)
            throw FormatError(count_at, "stage " + std::to_string(t + 1) + " expects " +
                                            std::to_string(width) + " features, schedule implies " +
                                            std::to_string(expected));
        const StageConfig& cfg = model.schedule.stages[t];
        try {
            if (cfg.features.kind == FeatureKind::PixelDiff)
                cfg.features.pixel.validate(model.pdm.landmarks());
            else
                cfg.features.hog.validate();
        } catch (const Error& e) {
            throw FormatError(count_at, "stage " + std::to_string(t + 1) + ": " + e.what());
        }
    }
    return model;
}

void save_model(const CascadeModel& model, std::ostream& sink) {
    const std::string bytes = serialize_model(model);
    sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!sink) throw IoError("failed to write model");
}

CascadeModel load_model(std::istream& source) {
    const std::string bytes{std::istreambuf_iterator<char>(source), std::istreambuf_iterator<char>()};
    return deserialize_model(bytes);
}

void save_model_file(const CascadeModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    save_model(model, out);
}

CascadeModel load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file '" + path + "'");
    return load_model(in);
}

}  // namespace elbclm
