#include "elbclm/cascade.hpp"
#include "elbclm/dataset.hpp"
#include "elbclm/errors.hpp"
#include "elbclm/evaluation.hpp"
#include "elbclm/parallel.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace elbclm;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Shared {
    std::uint64_t seed = 1;
    int threads = 1;
    std::string config;
};

struct TrainArgs {
    std::string data;
    std::string out;
    std::string pattern = "*";
    double margin = 0.05;
    std::string stages = "hybrid7";
    int aug = 10;
    double aug_translation = 0.05;
    double aug_scale = 0.10;
    double pdm_variance = 0.99;
    bool no_constraint = false;
    bool no_q_features = false;
    double clamp = 3.0;
    double strength = 1.0;
    int gn_iterations = 1;
    std::string prior = "recursive";
    bool no_step_search = false;
    double max_step = 2.0;
    int pairs = 40;
    double radius = 0.15;
    double shrink = 0.8;
    int trees = 5;
    int depth = 5;
    int splits = 50;
    double forest_ridge_scale = 30.0;
    int hog_patch = 32;
    int hog_cell = 8;
    int hog_bins = 9;
    double hog_ridge_scale = 1.0;
    int left_eye = 36;
    int right_eye = 45;
};

struct FitArgs {
    std::string model;
    std::string image;
    std::vector<double> bbox;
    std::string data;
    std::string pattern = "*";
    std::string out = ".";
    bool annotate = false;
    bool trace = false;
    bool no_constraint = false;
};

struct EvalArgs {
    std::string model;
    std::string data;
    std::string pattern = "*";
    double margin = 0.05;
    bool no_constraint = false;
    bool no_q_features = false;
    std::string label;
    int left_eye = 36;
    int right_eye = 45;
    double ced_max = 0.30;
    double ced_step = 0.01;
};

struct BenchArgs {
    std::string model;
    std::string data;
    std::string pattern = "*";
    int warmup = 2;
    int reps = 5;
    std::size_t limit = 0;
    bool no_constraint = false;
};

struct SynthArgs {
    std::string out;
    std::size_t count = 100;
    double noise = 0.0;
};

void add_shared(CLI::App* cmd, Shared& shared) {
    cmd->add_option("--config", shared.config,
                    "Flat key=value file, keys are long flag names; explicit flags win [none]");
    cmd->add_option("--seed", shared.seed, "Random seed")->capture_default_str();
    cmd->add_option("--threads", shared.threads, "Worker threads")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
}

void report_warnings(const LoadedDataset& loaded) {
    for (const std::string& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
}

LoadedDataset load(const std::string& dir, const std::string& pattern, double margin) {
    LoadedDataset loaded = load_dataset(dir, LoadOptions{pattern, margin});
    report_warnings(loaded);
    return loaded;
}

/// Thrown for flag combinations the library cannot detect itself.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void apply_config(CLI::App* cmd, const std::string& path) {
    if (path.empty()) return;
    if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path);
    for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_file(path)) {
        if (!item.parents.empty()) throw UsageError("config keys must be flat, got section for '" + item.name + "'");
        CLI::Option* opt = cmd->get_option_no_throw("--" + item.name);
        if (!opt || item.name == "config")
            throw UsageError("unknown config key '" + item.name + "' for " + cmd->get_name());
        if (opt->count() > 0) continue;
        for (const std::string& value : item.inputs) opt->add_result(value);
        opt->run_callback();
    }
}

void need(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

int run_train(const TrainArgs& a, const Shared& shared) {
    need(a.data, "--data");
    need(a.out, "--out");
    const LoadedDataset loaded = load(a.data, a.pattern, a.margin);

    StageConfig pixel = StageSchedule::default_pixel_stage();
    StageConfig hog = StageSchedule::default_hog_stage();
    for (StageConfig* cfg : {&pixel, &hog}) {
        cfg->gn_strength = a.strength;
        cfg->gn_iterations = a.gn_iterations;
        cfg->prior_center = a.prior == "zero" ? PriorCenter::Zero : PriorCenter::Recursive;
    }
    pixel.features.pixel.pairs_per_landmark = a.pairs;
    pixel.features.pixel.radius = a.radius;
    pixel.forest.trees_per_landmark = a.trees;
    pixel.forest.max_depth = a.depth;
    pixel.forest.candidate_splits = a.splits;
    pixel.ridge_scale = a.forest_ridge_scale;
    hog.features.hog.patch_size = a.hog_patch;
    hog.features.hog.cell_size = a.hog_cell;
    hog.features.hog.orientation_bins = a.hog_bins;
    hog.ridge_scale = a.hog_ridge_scale;
    const StageSchedule schedule = StageSchedule::preset(a.stages, pixel, hog, a.shrink);

    CascadeOptions options;
    options.flags.constrained = !a.no_constraint;
    options.flags.q_features = !a.no_q_features;
    options.flags.clamp_factor = a.clamp;
    options.pdm_variance = a.pdm_variance;
    options.aug_count = a.aug;
    options.aug_translation = a.aug_translation;
    options.aug_scale = a.aug_scale;
    options.left_eye = a.left_eye;
    options.right_eye = a.right_eye;
    options.threads = shared.threads;
    options.step_search = !a.no_step_search;
    options.max_step = a.max_step;

    TrainReport report;
    const CascadeModel model = train_cascade(loaded.samples, schedule, options, shared.seed, &report);
    save_model_file(model, a.out);

    std::cout << "# training\nsamples\t" << loaded.samples.size() << "\nmodes\t" << model.pdm.modes()
              << "\n# per-stage mean training error\nstage\tkind\tstep_scale\tmean_error\n";
    std::cout << std::fixed << std::setprecision(6);
    std::cout << "0\tinit\t-\t" << report.stage_errors[0] << '\n';
    for (std::size_t t = 0; t < model.schedule.size(); ++t) {
        const StageConfig& cfg = model.schedule.stages[t];
        std::cout << t + 1 << '\t' << (cfg.features.kind == FeatureKind::Hog ? "hog" : "pixel") << '\t'
                  << cfg.step_scale << '\t' << report.stage_errors[t + 1] << '\n';
    }
    std::cout << "# timing\nwall_time_s\t" << std::setprecision(2) << report.seconds << '\n';
    return kOk;
}

void write_fit_outputs(const FitArgs& a, const std::string& stem, const GrayImage& image,
                       const FitResult& result) {
    const fs::path dir(a.out);
    write_pts_file(dir / (stem + ".pts"), result.shape);
    if (a.annotate) save_annotated_image(dir / (stem + "_annotated.png"), image, result.shape);
    if (a.trace)
        for (std::size_t t = 0; t < result.per_stage_shapes.size(); ++t)
            write_pts_file(dir / (stem + "_stage" + std::to_string(t) + ".pts"), result.per_stage_shapes[t]);
}

int run_fit(const FitArgs& a, const Shared& shared) {
    need(a.model, "--model");
    if (a.image.empty() == a.data.empty()) throw UsageError("fit needs exactly one of --image or --data");
    if (!a.image.empty() && a.bbox.size() != 4) throw UsageError("--image needs --bbox x,y,width,height");
    const CascadeModel model = load_model_file(a.model);
    fs::create_directories(a.out);
    const FitOptions options{a.trace, a.no_constraint};

    if (!a.image.empty()) {
        const GrayImage image = load_gray_image(a.image);
        const FitResult result = fit(model, image, BBox{a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]}, options);
        write_fit_outputs(a, fs::path(a.image).stem().string(), image, result);
        std::cout << fs::path(a.image).stem().string() << '\n';
        return kOk;
    }
    const LoadedDataset loaded = load(a.data, a.pattern, 0.05);
    std::vector<FitResult> results(loaded.samples.size());
    parallel_for(loaded.samples.size(), shared.threads, [&](std::size_t i) {
        const Sample& s = loaded.samples[i];
        results[i] = fit(model, s.image, s.bbox, options);
    });
    for (std::size_t i = 0; i < results.size(); ++i) {
        write_fit_outputs(a, loaded.samples[i].id, loaded.samples[i].image, results[i]);
        std::cout << loaded.samples[i].id << '\n';
    }
    return kOk;
}

void check_q_flag(const CascadeModel& model, bool no_q_features) {
    if (no_q_features && model.flags.q_features)
        throw UsageError(
            "--no-q-features needs a model trained without q features (train --no-q-features); "
            "this model's feature width includes the q block");
}

int run_eval(const EvalArgs& a, const Shared& shared) {
    need(a.model, "--model");
    need(a.data, "--data");
    const CascadeModel model = load_model_file(a.model);
    check_q_flag(model, a.no_q_features);
    const LoadedDataset loaded = load(a.data, a.pattern, a.margin);

    EvalOptions options;
    options.left_eye = static_cast<std::size_t>(a.left_eye);
    options.right_eye = static_cast<std::size_t>(a.right_eye);
    options.fit.disable_constraint = a.no_constraint;
    options.ced_thresholds = ced_thresholds(a.ced_max, a.ced_step);
    options.threads = shared.threads;
    const EvalReport report = evaluate(model, loaded.samples, options);

    std::string label = a.label;
    if (label.empty()) {
        const bool constrained = model.flags.constrained && !a.no_constraint;
        label = !constrained ? "unconstrained" : model.flags.q_features ? "eLBCLM" : "eLBCLM-";
    }
    write_accuracy_report(std::cout, report, label);
    return kOk;
}

int run_bench(const BenchArgs& a, const Shared&) {
    need(a.model, "--model");
    need(a.data, "--data");
    const CascadeModel model = load_model_file(a.model);
    const LoadedDataset loaded = load(a.data, a.pattern, 0.05);
    std::span<const Sample> samples(loaded.samples);
    if (a.limit > 0 && a.limit < samples.size()) samples = samples.first(a.limit);
    FitOptions options;
    options.disable_constraint = a.no_constraint;
    const TimingSummary timing = benchmark_fit(model, samples, a.warmup, a.reps, options);
    write_timing_report(std::cout, timing);
    return kOk;
}

int run_synth(const SynthArgs& a, const Shared& shared) {
    need(a.out, "--out");
    const SyntheticCorpus corpus =
        generate_synthetic_corpus(face_template_pdm(), a.count, a.noise, ImageLaw{}, shared.seed);
    write_dataset(a.out, corpus.samples);
    std::cout << corpus.samples.size() << " samples written to " << a.out << '\n';
    return kOk;
}

int exit_code(const Error& e) {
    switch (e.category()) {
        case Error::Category::Usage: return kUsage;
        case Error::Category::Data: return kData;
        case Error::Category::Numeric: return kNumeric;
    }
    return kData;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded face alignment with a point distribution model constraint"};
    app.require_subcommand(1);
    app.get_formatter()->column_width(36);

    Shared shared;
    TrainArgs train;
    FitArgs fit_args;
    EvalArgs eval;
    BenchArgs bench;
    SynthArgs synth;

    CLI::App* t = app.add_subcommand("train", "Train a cascade on an annotated image directory");
    add_shared(t, shared);
    t->add_option("--data", train.data, "Directory of images with same-stem .pts files (required)");
    t->add_option("--out", train.out, "Model file to write (required)");
    t->add_option("--pattern", train.pattern, "Image file name wildcard")->capture_default_str();
    t->add_option("--margin", train.margin, "Box margin around the annotation, fraction of its size")
        ->capture_default_str();
    t->add_option("--stages", train.stages, "Stage schedule: hybridT, pixelT or hogT")->capture_default_str();
    t->add_option("--aug", train.aug, "Perturbed initializations per training image")->capture_default_str();
    t->add_option("--aug-translation", train.aug_translation, "Box translation jitter, fraction of size")
        ->capture_default_str();
    t->add_option("--aug-scale", train.aug_scale, "Box scale jitter, fraction")->capture_default_str();
    t->add_option("--pdm-variance", train.pdm_variance, "Retained shape variance")->capture_default_str();
    t->add_flag("--no-constraint", train.no_constraint, "Train without the shape-model projection")->capture_default_str();
    t->add_flag("--no-q-features", train.no_q_features, "Leave the shape parameters out of the features")->capture_default_str();
    t->add_option("--clamp", train.clamp, "Clamp q to this many standard deviations, <= 0 disables")
        ->capture_default_str();
    t->add_option("--strength", train.strength, "Weight of the shape prior in the projection")
        ->capture_default_str();
    t->add_option("--gn-iterations", train.gn_iterations, "Gauss-Newton iterations per stage")
        ->capture_default_str();
    t->add_option("--prior", train.prior, "Prior center: recursive or zero")
        ->capture_default_str()
        ->check(CLI::IsMember({"recursive", "zero"}));
    t->add_flag("--no-step-search", train.no_step_search, "Apply regressed shifts unscaled")->capture_default_str();
    t->add_option("--max-step", train.max_step, "Upper bound of the per-stage step search")
        ->capture_default_str();
    t->add_option("--pairs", train.pairs, "Pixel pairs per landmark")->capture_default_str();
    t->add_option("--radius", train.radius, "First pixel-stage sampling radius, face widths")
        ->capture_default_str();
    t->add_option("--shrink", train.shrink, "Radius factor between pixel stages")->capture_default_str();
    t->add_option("--trees", train.trees, "Trees per landmark")->capture_default_str();
    t->add_option("--depth", train.depth, "Tree depth")->capture_default_str();
    t->add_option("--splits", train.splits, "Candidate splits per node")->capture_default_str();
    t->add_option("--forest-ridge-scale", train.forest_ridge_scale, "Ridge strength of the forest output map")
        ->capture_default_str();
    t->add_option("--hog-patch", train.hog_patch, "HOG patch side, pixels")->capture_default_str();
    t->add_option("--hog-cell", train.hog_cell, "HOG cell side, pixels")->capture_default_str();
    t->add_option("--hog-bins", train.hog_bins, "HOG orientation bins")->capture_default_str();
    t->add_option("--hog-ridge-scale", train.hog_ridge_scale, "Ridge strength of the HOG stages")
        ->capture_default_str();
    t->add_option("--left-eye", train.left_eye, "Landmark index of one eye corner")->capture_default_str();
    t->add_option("--right-eye", train.right_eye, "Landmark index of the other eye corner")
        ->capture_default_str();

    CLI::App* f = app.add_subcommand("fit", "Predict landmarks with a trained model");
    add_shared(f, shared);
    f->add_option("--model", fit_args.model, "Model file (required)");
    f->add_option("--image", fit_args.image, "Single image to fit");
    f->add_option("--bbox", fit_args.bbox, "Face box x,y,width,height for --image")->delimiter(',')->expected(4);
    f->add_option("--data", fit_args.data, "Annotated directory; boxes come from the annotations");
    f->add_option("--pattern", fit_args.pattern, "Image file name wildcard for --data")->capture_default_str();
    f->add_option("--out", fit_args.out, "Output directory")->capture_default_str();
    f->add_flag("--annotate", fit_args.annotate, "Also write <stem>_annotated.png")->capture_default_str();
    f->add_flag("--trace", fit_args.trace, "Also write <stem>_stage<k>.pts for k = 0..T")->capture_default_str();
    f->add_flag("--no-constraint", fit_args.no_constraint, "Skip the shape-model projection")->capture_default_str();

    CLI::App* e = app.add_subcommand("eval", "Score a model on an annotated directory");
    add_shared(e, shared);
    e->add_option("--model", eval.model, "Model file (required)");
    e->add_option("--data", eval.data, "Directory of images with same-stem .pts files (required)");
    e->add_option("--pattern", eval.pattern, "Image file name wildcard")->capture_default_str();
    e->add_option("--margin", eval.margin, "Box margin around the annotation")->capture_default_str();
    e->add_flag("--no-constraint", eval.no_constraint, "Skip the shape-model projection")->capture_default_str();
    e->add_flag("--no-q-features", eval.no_q_features, "Require a model trained without q features")->capture_default_str();
    e->add_option("--label", eval.label, "Row label; derived from the model flags when empty");
    e->add_option("--left-eye", eval.left_eye, "Landmark index of one eye corner")->capture_default_str();
    e->add_option("--right-eye", eval.right_eye, "Landmark index of the other eye corner")
        ->capture_default_str();
    e->add_option("--ced-max", eval.ced_max, "Largest CED threshold")->capture_default_str();
    e->add_option("--ced-step", eval.ced_step, "CED threshold spacing")->capture_default_str();

    CLI::App* b = app.add_subcommand("bench", "Time single-threaded fit calls");
    add_shared(b, shared);
    b->add_option("--model", bench.model, "Model file (required)");
    b->add_option("--data", bench.data, "Directory of images with same-stem .pts files (required)");
    b->add_option("--pattern", bench.pattern, "Image file name wildcard")->capture_default_str();
    b->add_option("--warmup", bench.warmup, "Untimed passes over the samples")->capture_default_str();
    b->add_option("--reps", bench.reps, "Timed fits per sample")->capture_default_str();
    b->add_option("--limit", bench.limit, "Use at most this many samples, 0 for all")->capture_default_str();
    b->add_flag("--no-constraint", bench.no_constraint, "Skip the shape-model projection")->capture_default_str();

    CLI::App* s = app.add_subcommand("synth", "Write a synthetic blob-face corpus");
    add_shared(s, shared);
    s->add_option("--out", synth.out, "Output directory (required)");
    s->add_option("--count", synth.count, "Number of samples")->capture_default_str();
    s->add_option("--noise", synth.noise, "Annotation noise, pixels")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kUsage;
    }

    try {
        for (CLI::App* cmd : {t, f, e, b, s})
            if (cmd->parsed()) apply_config(cmd, shared.config);
        if (t->parsed()) return run_train(train, shared);
        if (f->parsed()) return run_fit(fit_args, shared);
        if (e->parsed()) return run_eval(eval, shared);
        if (b->parsed()) return run_bench(bench, shared);
        if (s->parsed()) return run_synth(synth, shared);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const CLI::Error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return exit_code(err);
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kData;
    }
    return kUsage;
}
