#pragma once

#include "elbclm/cascade.hpp"
#include "elbclm/sample.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace elbclm {

/// Mean point-to-point distance divided by the ground-truth distance between
/// the two eye landmarks. Multiply by 100 for the customary percentage.
double normalized_error(const Shape& pred, const Shape& gt, std::size_t left_eye,
                        std::size_t right_eye);

/// Fraction of errors <= each threshold. Thresholds must be ascending.
std::vector<std::pair<double, double>> ced_curve(std::span<const double> errors,
                                                 std::span<const double> thresholds);

/// Evenly spaced thresholds 0, step, ..., max.
std::vector<double> ced_thresholds(double max, double step);

struct TimingSummary {
    std::vector<double> fit_seconds;  // one entry per timed fit call
    double median_seconds = 0.0;
    double mean_seconds = 0.0;
    double fps = 0.0;  // 1 / median
};

struct EvalReport {
    std::vector<std::string> ids;
    std::vector<double> per_sample_errors;
    double mean_error = 0.0;
    std::vector<std::pair<double, double>> ced;
    std::vector<double> per_stage_mean_errors;  // T + 1 entries
    std::optional<TimingSummary> timing;
};

struct EvalOptions {
    std::size_t left_eye = 36;
    std::size_t right_eye = 45;
    FitOptions fit;
    std::vector<double> ced_thresholds = elbclm::ced_thresholds(0.30, 0.01);
    int threads = 1;
};

/// Fits every sample and scores it. Output order follows input order.
EvalReport evaluate(const CascadeModel& model, std::span<const Sample> samples,
                    const EvalOptions& options);

/// Times complete fit calls (features, regression, projection) on a steady
/// clock after `warmup` untimed passes; `reps` timed fits per sample.
TimingSummary benchmark_fit(const CascadeModel& model, std::span<const Sample> samples,
                            int warmup, int reps, const FitOptions& options = {});

/// Per-sample error table, CED table and mean error, in that order.
void write_accuracy_report(std::ostream& out, const EvalReport& report, std::string_view label);
void write_timing_report(std::ostream& out, const TimingSummary& timing);

}  // namespace elbclm
