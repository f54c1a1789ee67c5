#include "elbclm/cascade.hpp"
#include "elbclm/dataset.hpp"
#include "elbclm/errors.hpp"
#include "elbclm/evaluation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace elbclm;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

Shape to_shape(const Points& p) {
    Eigen::VectorXd v(2 * p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        v[2 * i] = p(i, 0);
        v[2 * i + 1] = p(i, 1);
    }
    return Shape(std::move(v));
}

Points to_points(const Shape& s) {
    Points p(static_cast<Eigen::Index>(s.size()), 2);
    for (std::size_t i = 0; i < s.size(); ++i) {
        p(static_cast<Eigen::Index>(i), 0) = s.x(i);
        p(static_cast<Eigen::Index>(i), 1) = s.y(i);
    }
    return p;
}

std::vector<Shape> to_shapes(const std::vector<Points>& list) {
    std::vector<Shape> out;
    out.reserve(list.size());
    for (const Points& p : list) out.push_back(to_shape(p));
    return out;
}

GrayImage to_image(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw InvalidArgument("image must be a 2-D array");
    const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    return GrayImage(w, h, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const GrayImage& img) {
    py::array_t<double> out({img.height(), img.width()});
    std::copy(img.data().begin(), img.data().end(), out.mutable_data());
    return out;
}

BBox to_bbox(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

py::dict pose_dict(const PoseParams& p) {
    py::dict d;
    d["s"] = p.s;
    d["theta"] = p.theta;
    d["tx"] = p.tx;
    d["ty"] = p.ty;
    d["q"] = p.q;
    return d;
}

PoseParams pose_from(double s, double theta, double tx, double ty, const Eigen::VectorXd& q) {
    return {s, theta, tx, ty, q};
}

std::vector<Sample> to_samples(const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& images,
                               const std::vector<Points>& shapes,
                               const std::vector<std::array<double, 4>>& bboxes) {
    if (images.size() != shapes.size() || images.size() != bboxes.size())
        throw DimensionMismatch("images, shapes and bboxes must have equal lengths");
    std::vector<Sample> samples(images.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i] = {to_image(images[i]), to_shape(shapes[i]), to_bbox(bboxes[i]), "sample_" + std::to_string(i)};
    return samples;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cascaded face alignment constrained by a point distribution model";

    // Translators run newest first, so the subclasses are registered last.
    const auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", error.ptr());
    py::register_exception<FormatError>(m, "FormatError", error.ptr());

    m.def("parse_pts", [](const std::string& text) { return to_points(parse_pts(text)); }, py::arg("text"));
    m.def("format_pts", [](const Points& p) { return format_pts(to_shape(p)); }, py::arg("points"));

    m.def(
        "procrustes_align_pair",
        [](const Points& src, const Points& dst) {
            const SimilarityTransform t = procrustes_align_pair(to_shape(src), to_shape(dst));
            return py::make_tuple(t.scale(), t.theta(), t.tx(), t.ty());
        },
        py::arg("src"), py::arg("dst"), "Least-squares (s, theta, tx, ty) taking src onto dst.");
    m.def(
        "generalized_procrustes",
        [](const std::vector<Points>& shapes) {
            const ProcrustesResult r = generalized_procrustes(to_shapes(shapes));
            std::vector<Points> aligned;
            for (const Shape& s : r.aligned) aligned.push_back(to_points(s));
            return py::make_tuple(aligned, to_points(r.mean));
        },
        py::arg("shapes"));

    py::class_<PdmModel>(m, "PdmModel")
        .def_property_readonly("landmarks", &PdmModel::landmarks)
        .def_property_readonly("modes", &PdmModel::modes)
        .def_property_readonly("mean_shape", [](const PdmModel& p) { return to_points(Shape(p.mean_shape())); })
        .def_property_readonly("basis", &PdmModel::basis)
        .def_property_readonly("eigenvalues", &PdmModel::eigenvalues)
        .def_property_readonly("variance_fraction", &PdmModel::variance_fraction)
        .def(
            "synthesize",
            [](const PdmModel& p, double s, double theta, double tx, double ty, const Eigen::VectorXd& q) {
                return to_points(synthesize(p, pose_from(s, theta, tx, ty, q)));
            },
            py::arg("s"), py::arg("theta"), py::arg("tx"), py::arg("ty"), py::arg("q"))
        .def(
            "jacobian",
            [](const PdmModel& p, const Eigen::VectorXd& pose) {
                return jacobian(p, PoseParams::from_vector(pose));
            },
            py::arg("pose"), "Jacobian of the 2n coordinates w.r.t. (s, theta, tx, ty, q).")
        .def(
            "fit_pose", [](const PdmModel& p, const Points& shape) { return pose_dict(fit_pose(p, to_shape(shape))); },
            py::arg("shape"));

    m.def(
        "train_pdm", [](const std::vector<Points>& aligned, double variance) {
            return train_pdm(to_shapes(aligned), variance);
        },
        py::arg("aligned_shapes"), py::arg("variance_fraction") = 0.99);
    m.def("face_template_pdm", &face_template_pdm);

    m.def(
        "synthetic_corpus",
        [](std::size_t count, double noise, std::uint64_t seed) {
            const SyntheticCorpus c = generate_synthetic_corpus(face_template_pdm(), count, noise, ImageLaw{}, seed);
            py::list images, shapes, boxes;
            for (const Sample& s : c.samples) {
                images.append(to_array(s.image));
                shapes.append(to_points(s.gt_shape));
                boxes.append(py::make_tuple(s.bbox.x, s.bbox.y, s.bbox.width, s.bbox.height));
            }
            return py::make_tuple(images, shapes, boxes);
        },
        py::arg("count"), py::arg("noise") = 0.0, py::arg("seed") = 1,
        "Blob-face images, ground-truth shapes and boxes.");

    py::class_<CascadeModel>(m, "Model")
        .def_static("load", &load_model_file, py::arg("path"))
        .def_static("from_bytes", [](const py::bytes& b) { return deserialize_model(std::string(b)); })
        .def("save", [](const CascadeModel& c, const std::string& path) { save_model_file(c, path); })
        .def("to_bytes", [](const CascadeModel& c) { return py::bytes(serialize_model(c)); })
        .def_property_readonly("pdm", [](const CascadeModel& c) { return c.pdm; })
        .def_property_readonly("stages", [](const CascadeModel& c) { return c.stages.size(); })
        .def_property_readonly("constrained", [](const CascadeModel& c) { return c.flags.constrained; })
        .def_property_readonly("q_features", [](const CascadeModel& c) { return c.flags.q_features; })
        .def(
            "fit",
            [](const CascadeModel& c, const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
               const std::array<double, 4>& bbox, bool trace, bool disable_constraint) {
                const FitResult r = fit(c, to_image(image), to_bbox(bbox), FitOptions{trace, disable_constraint});
                py::dict d;
                d["shape"] = to_points(r.shape);
                d["pose"] = pose_dict(r.pose);
                std::vector<Points> stages;
                for (const Shape& s : r.per_stage_shapes) stages.push_back(to_points(s));
                d["stages"] = stages;
                return d;
            },
            py::arg("image"), py::arg("bbox"), py::arg("trace") = false, py::arg("disable_constraint") = false);

    m.def(
        "train_cascade",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& images,
           const std::vector<Points>& shapes, const std::vector<std::array<double, 4>>& bboxes,
           const std::string& stages, int aug_count, std::uint64_t seed, bool constrained, bool q_features,
           int threads) {
            const std::vector<Sample> samples = to_samples(images, shapes, bboxes);
            CascadeOptions options;
            options.aug_count = aug_count;
            options.flags.constrained = constrained;
            options.flags.q_features = q_features;
            options.threads = threads;
            TrainReport report;
            CascadeModel model;
            {
                py::gil_scoped_release release;
                model = train_cascade(samples, StageSchedule::preset(stages), options, seed, &report);
            }
            return py::make_tuple(model, report.stage_errors);
        },
        py::arg("images"), py::arg("shapes"), py::arg("bboxes"), py::arg("stages") = "hybrid7",
        py::arg("aug_count") = 10, py::arg("seed") = 1, py::arg("constrained") = true,
        py::arg("q_features") = true, py::arg("threads") = 1,
        "Returns (model, per-stage mean training errors).");

    m.def(
        "normalized_error",
        [](const Points& pred, const Points& gt, std::size_t left, std::size_t right) {
            return normalized_error(to_shape(pred), to_shape(gt), left, right);
        },
        py::arg("pred"), py::arg("gt"), py::arg("left_eye") = 36, py::arg("right_eye") = 45);
    m.def(
        "ced_curve",
        [](const std::vector<double>& errors, const std::vector<double>& thresholds) {
            return ced_curve(errors, thresholds);
        },
        py::arg("errors"), py::arg("thresholds"));
}
