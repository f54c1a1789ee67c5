#include "elbclm/evaluation.hpp"

#include "elbclm/errors.hpp"
#include "elbclm/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace elbclm {

double normalized_error(const Shape& pred, const Shape& gt, std::size_t left_eye,
                        std::size_t right_eye) {
    if (pred.size() != gt.size()) throw DimensionMismatch("prediction and ground truth differ in size");
    if (left_eye >= gt.size() || right_eye >= gt.size() || left_eye == right_eye)
        throw InvalidArgument("eye indices must be distinct and in range");
    const double iod = (gt.point(left_eye) - gt.point(right_eye)).norm();
    if (!(iod > 0.0)) throw ZeroIOD("the two eye landmarks coincide");
    double sum = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) sum += (pred.point(i) - gt.point(i)).norm();
    return sum / static_cast<double>(gt.size()) / iod;
}

std::vector<std::pair<double, double>> ced_curve(std::span<const double> errors,
                                                 std::span<const double> thresholds) {
    if (errors.empty()) throw EmptyErrors("no errors to summarize");
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw InvalidArgument("CED thresholds must be ascending");
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::pair<double, double>> curve;
    curve.reserve(thresholds.size());
    for (double tau : thresholds) {
        const auto count = std::upper_bound(sorted.begin(), sorted.end(), tau) - sorted.begin();
        curve.emplace_back(tau, static_cast<double>(count) / static_cast<double>(sorted.size()));
    }
    return curve;
}

std::vector<double> ced_thresholds(double max, double step) {
    if (!(step > 0.0) || !(max >= 0.0)) throw InvalidArgument("CED range needs step > 0 and max >= 0");
    std::vector<double> out;
    const auto count = static_cast<long>(std::floor(max / step + 1e-9));
    for (long k = 0; k <= count; ++k) out.push_back(static_cast<double>(k) * step);
    return out;
}

EvalReport evaluate(const CascadeModel& model, std::span<const Sample> samples,
                    const EvalOptions& options) {
    if (samples.empty()) throw EmptyDataset("no samples to evaluate");
    FitOptions fit_options = options.fit;
    fit_options.trace = true;

    const std::size_t T = model.stages.size();
    std::vector<std::vector<double>> stage_errors(samples.size());
    EvalReport report;
    report.per_sample_errors.resize(samples.size());
    parallel_for(samples.size(), options.threads, [&](std::size_t i) {
        const Sample& s = samples[i];
        const FitResult result = fit(model, s.image, s.bbox, fit_options);
        report.per_sample_errors[i] =
            normalized_error(result.shape, s.gt_shape, options.left_eye, options.right_eye);
        for (const Shape& traced : result.per_stage_shapes)
            stage_errors[i].push_back(
                normalized_error(traced, s.gt_shape, options.left_eye, options.right_eye));
    });

    for (const Sample& s : samples) report.ids.push_back(s.id);
    report.mean_error = std::accumulate(report.per_sample_errors.begin(),
                                        report.per_sample_errors.end(), 0.0) /
                        static_cast<double>(samples.size());
    report.ced = ced_curve(report.per_sample_errors, options.ced_thresholds);
    report.per_stage_mean_errors.assign(T + 1, 0.0);
    for (const auto& errs : stage_errors)
        for (std::size_t t = 0; t <= T; ++t) report.per_stage_mean_errors[t] += errs[t];
    for (double& e : report.per_stage_mean_errors) e /= static_cast<double>(samples.size());
    return report;
}

TimingSummary benchmark_fit(const CascadeModel& model, std::span<const Sample> samples, int warmup,
                            int reps, const FitOptions& options) {
    if (reps < 1) throw InvalidArgument("benchmark needs reps >= 1");
    if (samples.empty()) throw EmptyDataset("no samples to benchmark");
    for (int w = 0; w < warmup; ++w)
        for (const Sample& s : samples) (void)fit(model, s.image, s.bbox, options);

    TimingSummary timing;
    for (int r = 0; r < reps; ++r) {
        for (const Sample& s : samples) {
            const auto t0 = std::chrono::steady_clock::now();
            const FitResult result = fit(model, s.image, s.bbox, options);
            const auto t1 = std::chrono::steady_clock::now();
            (void)result;
            timing.fit_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
    }
    std::vector<double> sorted = timing.fit_seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t k = sorted.size();
    timing.median_seconds = k % 2 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
    timing.mean_seconds = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(k);
    timing.fps = timing.median_seconds > 0.0 ? 1.0 / timing.median_seconds
                                             : std::numeric_limits<double>::infinity();
    return timing;
}

void write_accuracy_report(std::ostream& out, const EvalReport& report, std::string_view label) {
    const auto old_flags = out.flags();
    const auto old_precision = out.precision();
    out << std::fixed << std::setprecision(6);
    out << "# per-sample errors (" << label << ")\n";
    out << "id\terror\n";
    for (std::size_t i = 0; i < report.per_sample_errors.size(); ++i)
        out << (i < report.ids.size() ? report.ids[i] : std::to_string(i)) << '\t'
            << report.per_sample_errors[i] << '\n';
    out << "# ced\nthreshold\tfraction\n";
    for (const auto& [tau, fraction] : report.ced) out << tau << '\t' << fraction << '\n';
    if (!report.per_stage_mean_errors.empty()) {
        out << "# per-stage mean error\nstage\tmean_error\n";
        for (std::size_t t = 0; t < report.per_stage_mean_errors.size(); ++t)
            out << t << '\t' << report.per_stage_mean_errors[t] << '\n';
    }
    out << "# summary\nlabel\tmean_error\tmean_error_x100\tsamples\n";
    out << label << '\t' << report.mean_error << '\t' << 100.0 * report.mean_error << '\t'
        << report.per_sample_errors.size() << '\n';
    out.flags(old_flags);
    out.precision(old_precision);
}

void write_timing_report(std::ostream& out, const TimingSummary& timing) {
    const auto old_flags = out.flags();
    const auto old_precision = out.precision();
    out << std::fixed << std::setprecision(4);
    out << "# timing\n";
    out << "fits\t" << timing.fit_seconds.size() << '\n';
    out << "median_ms\t" << 1e3 * timing.median_seconds << '\n';
    out << "mean_ms\t" << 1e3 * timing.mean_seconds << '\n';
    out << "fps\t" << std::setprecision(1) << timing.fps << '\n';
    out.flags(old_flags);
    out.precision(old_precision);
}

}  // namespace elbclm
