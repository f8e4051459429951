// Command-line front end: gen, measure, train, predict, eval, cv.
//
// Exit codes: 0 success, 1 validation/usage error (single diagnostic line on
// stderr), 2 I/O error. Every run writes a manifest echoing the effective
// configuration including defaults and seeds, so a run can be reproduced
// byte-for-byte from its manifest. Seeds default to a fixed constant, never
// the clock. --threads only changes how work is scheduled, never the output,
// and is deliberately excluded from manifests.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "strokeuq/aggregate.hpp"
#include "strokeuq/cohort_io.hpp"
#include "strokeuq/cv.hpp"
#include "strokeuq/measures.hpp"
#include "strokeuq/metrics.hpp"
#include "strokeuq/model_io.hpp"
#include "strokeuq/parallel.hpp"
#include "strokeuq/report_io.hpp"
#include "strokeuq/synth.hpp"
#include "strokeuq/text.hpp"

namespace {

using namespace strokeuq;

constexpr uint64_t kDefaultSeed = 42;

void write_manifest(const std::string& path, nlohmann::json manifest) {
    atomic_write_file(path, manifest.dump(2) + "\n");
}

std::vector<std::vector<measures::UncertaintySummary>> summarize_cohort(const CohortDataset& ds,
                                                                        int threads) {
    std::vector<std::vector<measures::UncertaintySummary>> out(ds.patients.size());
    parallel_for(static_cast<int>(ds.patients.size()), threads, [&](int i) {
        const auto& p = ds.patients[static_cast<size_t>(i)];
        auto& dst = out[static_cast<size_t>(i)];
        dst.reserve(p.images.size());
        for (const auto& img : p.images) dst.push_back(measures::summarize(img.samples));
    });
    return out;
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
    synth::GeneratorConfig config;
    std::string out;
    std::string manifest_out;
    int threads = 1;
};

int run_gen(const GenArgs& args) {
    synth::validate(args.config);
    const auto [ds, manifest] = synth::generate(args.config, args.threads);
    serialize_samples_file(ds, args.out);
    nlohmann::json j = synth::manifest_to_json(manifest);
    j["subcommand"] = "gen";
    j["out"] = args.out;
    const std::string manifest_path =
        args.manifest_out.empty() ? args.out + ".manifest.json" : args.manifest_out;
    write_manifest(manifest_path, std::move(j));
    return 0;
}

// ---- measure ---------------------------------------------------------------

struct MeasureArgs {
    std::string data;
    std::string out;
    std::string hist_out;
    int threads = 1;
};

int run_measure(const MeasureArgs& args) {
    const auto ds = parse_samples_file(args.data);
    const auto summaries = summarize_cohort(ds, args.threads);
    atomic_write_file(args.out, measures_csv(ds, summaries));
    if (!args.hist_out.empty()) {
        atomic_write_file(args.hist_out, histogram_csv(ds, summaries));
    }
    nlohmann::json j{{"subcommand", "measure"},
                     {"data", args.data},
                     {"out", args.out},
                     {"hist_out", args.hist_out}};
    write_manifest(args.out + ".manifest.json", std::move(j));
    return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::string variant = "fcnn_p";
    std::string train_path;
    std::string valid_path;
    std::string model_out;
    agg::TrainConfig config;
    int threads = 1;
};

agg::LabeledFeatures cohort_features(const CohortDataset& ds, agg::Variant variant, int threads) {
    const auto summaries = summarize_cohort(ds, threads);
    agg::LabeledFeatures out;
    out.reserve(ds.patients.size());
    for (size_t i = 0; i < ds.patients.size(); ++i) {
        out.emplace_back(agg::build_features(ds.patients[i], summaries[i], variant),
                         ds.patients[i].patient_label == PatientLabel::stroke ? 1 : 0);
    }
    return out;
}

int run_train(const TrainArgs& args) {
    const agg::Variant variant = agg::variant_from_string(args.variant);
    if (variant == agg::Variant::max) {
        throw ValidationError("train: the Maximum method has no trainable parameters");
    }
    if (args.config.epochs < 0) throw ValidationError("train: --epochs must be >= 0");
    if (args.config.batch_size < 1) throw ValidationError("train: --batch-size must be >= 1");
    if (!(args.config.lr > 0.0)) throw ValidationError("train: --lr must be > 0");
    const auto train_ds = parse_samples_file(args.train_path);
    const auto valid_ds = parse_samples_file(args.valid_path);
    const auto net = agg::build_model(variant);
    const auto train_set = cohort_features(train_ds, variant, args.threads);
    const auto valid_set = cohort_features(valid_ds, variant, args.threads);
    const auto result = agg::train_aggregator(net, train_set, valid_set, args.config);

    nn::ModelFile model;
    model.variant = args.variant;
    model.graph = net;
    model.params = result.params;
    model.adam.lr = args.config.lr;
    model.seed = args.config.seed;
    nn::save_model(model, args.model_out);

    atomic_write_file(args.model_out + ".log.csv", train_log_csv(result.log));

    nlohmann::json j{{"subcommand", "train"},
                     {"variant", args.variant},
                     {"train", args.train_path},
                     {"valid", args.valid_path},
                     {"model_out", args.model_out},
                     {"epochs", args.config.epochs},
                     {"batch_size", args.config.batch_size},
                     {"lr", args.config.lr},
                     {"seed", args.config.seed},
                     {"best_epoch", result.best_epoch}};
    write_manifest(args.model_out + ".manifest.json", std::move(j));
    return 0;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
    std::string model_path;
    std::string data;
    std::string out;
    int mc_runs = agg::kDefaultPatientMcRuns;
    uint64_t seed = kDefaultSeed;
    int threads = 1;
};

int run_predict(const PredictArgs& args) {
    if (args.mc_runs < 1) throw ValidationError("predict: --mc-runs must be >= 1");
    const auto model = nn::load_model(args.model_path);
    const agg::Variant variant = agg::variant_from_string(model.variant);
    const auto ds = parse_samples_file(args.data);
    const auto summaries = summarize_cohort(ds, args.threads);

    std::vector<PredictionRow> rows(ds.patients.size());
    parallel_for(static_cast<int>(ds.patients.size()), args.threads, [&](int i) {
        const auto& patient = ds.patients[static_cast<size_t>(i)];
        agg::PatientPrediction pred;
        if (variant == agg::Variant::max) {
            pred = agg::maximum_method(patient, summaries[static_cast<size_t>(i)]);
        } else {
            const auto features =
                agg::build_features(patient, summaries[static_cast<size_t>(i)], variant);
            pred = agg::predict_patient(model.graph, model.params, features, args.mc_runs,
                                        mix_seed(args.seed, fnv1a64(patient.patient_id)));
        }
        PredictionRow row;
        row.patient_id = patient.patient_id;
        row.p_stroke = pred.mean_prob.stroke;
        row.summary = pred.summary;
        row.predicted = pred.predicted_label;
        row.truth = patient.patient_label;
        rows[static_cast<size_t>(i)] = std::move(row);
    });
    atomic_write_file(args.out, predictions_csv(rows));

    nlohmann::json j{{"subcommand", "predict"}, {"model", args.model_path},
                     {"data", args.data},       {"out", args.out},
                     {"mc_runs", args.mc_runs}, {"seed", args.seed},
                     {"variant", model.variant}};
    write_manifest(args.out + ".manifest.json", std::move(j));
    return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string pred;
    std::string out_dir;
    double z = metrics::kDefaultZ;
    std::string removal_grid;  // comma-separated fractions; empty = default
};

std::vector<double> parse_grid(const std::string& text) {
    if (text.empty()) return metrics::default_removal_grid();
    std::vector<double> grid;
    for (const auto& field : split_fields(text)) {
        double f = 0.0;
        if (!parse_double(field, f) || !(f >= 0.0 && f <= 1.0)) {
            throw ValidationError("eval: bad removal grid fraction: " + std::string(field));
        }
        grid.push_back(f);
    }
    if (grid.empty() || grid.front() != 0.0) {
        throw ValidationError("eval: removal grid must start at 0");
    }
    return grid;
}

int run_eval(const EvalArgs& args) {
    if (!(args.z > 0.0)) throw ValidationError("eval: --z must be > 0");
    const auto grid = parse_grid(args.removal_grid);
    const auto rows = parse_predictions_csv(read_file(args.pred), args.pred);
    if (rows.empty()) throw ValidationError("eval: no predictions in " + args.pred);

    std::error_code ec;
    std::filesystem::create_directories(args.out_dir, ec);
    if (ec) throw IoError("cannot create directory: " + args.out_dir);

    long correct = 0;
    std::vector<double> probs;
    std::vector<int> truth;
    std::vector<int> correct_flags;
    size_t with_uncertainty = 0;
    for (const auto& row : rows) {
        const bool ok = row.predicted == row.truth;
        correct += ok ? 1 : 0;
        probs.push_back(row.p_stroke);
        truth.push_back(row.truth == PatientLabel::stroke ? 1 : 0);
        correct_flags.push_back(ok ? 1 : 0);
        with_uncertainty += row.summary.has_value() ? 1 : 0;
    }
    if (with_uncertainty != 0 && with_uncertainty != rows.size()) {
        throw ValidationError("eval: mixed rows with and without uncertainty columns");
    }

    const auto wilson =
        metrics::accuracy_with_wilson(correct, static_cast<long>(rows.size()), args.z);
    const auto table = metrics::calibration(probs, truth);
    const double sanders = metrics::sanders_score(table);
    atomic_write_file(args.out_dir + "/calibration.csv", calibration_csv(table));

    nlohmann::json j;
    j["accuracy"] = {{"value", wilson.accuracy},
                     {"ci_lower", wilson.lower},
                     {"ci_upper", wilson.upper},
                     {"correct", correct},
                     {"total", rows.size()},
                     {"z", args.z}};
    j["sanders"] = sanders;

    if (with_uncertainty == rows.size()) {
        nlohmann::json aucs;
        for (const auto measure : measures::kMeasureNames) {
            std::vector<double> scores;
            std::vector<int> is_error;
            for (size_t i = 0; i < rows.size(); ++i) {
                scores.push_back(measures::measure_value(*rows[i].summary, measure));
                is_error.push_back(correct_flags[i] == 0 ? 1 : 0);
            }
            const std::string mname(measure);
            const auto roc = metrics::roc_auc(scores, is_error);  // degenerate input -> exit 1
            aucs[mname] = roc.auc;
            atomic_write_file(args.out_dir + "/roc_" + mname + ".csv", roc_csv(roc));
            atomic_write_file(
                args.out_dir + "/removal_" + mname + ".csv",
                removal_csv(metrics::removal_curve(scores, correct_flags, grid)));
        }
        j["error_detection_auc"] = std::move(aucs);
    }
    atomic_write_file(args.out_dir + "/metrics.json", j.dump(2) + "\n");

    nlohmann::json manifest{{"subcommand", "eval"},
                            {"pred", args.pred},
                            {"out_dir", args.out_dir},
                            {"z", args.z},
                            {"removal_grid", grid}};
    write_manifest(args.out_dir + "/manifest.json", std::move(manifest));
    return 0;
}

// ---- cv --------------------------------------------------------------------

struct CvArgs {
    std::string data;
    std::string out_dir;
    std::string variants = "all";
    cv::ExperimentConfig config;
};

std::vector<agg::Variant> parse_variants(const std::string& text) {
    std::vector<agg::Variant> out;
    if (text == "all") {
        out.assign(agg::kAllVariants.begin(), agg::kAllVariants.end());
        return out;
    }
    for (const auto& field : split_fields(text)) {
        out.push_back(agg::variant_from_string(field));
    }
    return out;
}

int run_cv(const CvArgs& args) {
    auto config = args.config;
    config.variants = parse_variants(args.variants);
    if (config.epochs < 0) throw ValidationError("cv: --epochs must be >= 0");
    if (config.batch_size < 1) throw ValidationError("cv: --batch-size must be >= 1");
    if (!(config.lr > 0.0)) throw ValidationError("cv: --lr must be > 0");
    if (config.mc_runs < 1) throw ValidationError("cv: --mc-runs must be >= 1");
    const auto ds = parse_samples_file(args.data);
    const auto result = cv::run_experiment(ds, config);
    cv::write_experiment_artifacts(result, args.out_dir);

    nlohmann::json variant_names = nlohmann::json::array();
    for (const auto v : config.variants) variant_names.push_back(std::string(agg::to_string(v)));
    nlohmann::json manifest{{"subcommand", "cv"},
                            {"data", args.data},
                            {"out_dir", args.out_dir},
                            {"variants", std::move(variant_names)},
                            {"seed", config.seed},
                            {"epochs", config.epochs},
                            {"batch_size", config.batch_size},
                            {"lr", config.lr},
                            {"mc_runs", config.mc_runs}};
    write_manifest(args.out_dir + "/manifest.json", std::move(manifest));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MC-dropout uncertainty measures and patient-level aggregation"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic cohort CSV");
    gen_cmd->add_option("--seed", gen.config.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "Output cohort CSV")->required();
    gen_cmd->add_option("--manifest-out", gen.manifest_out,
                        "Manifest path (default: <out>.manifest.json)");
    gen_cmd->add_option("--stroke-patients", gen.config.n_stroke_patients)->capture_default_str();
    gen_cmd->add_option("--tia-patients", gen.config.n_tia_patients)->capture_default_str();
    gen_cmd->add_option("--images-min", gen.config.images_min)->capture_default_str();
    gen_cmd->add_option("--images-max", gen.config.images_max)->capture_default_str();
    gen_cmd->add_option("--images-mean", gen.config.images_mean)->capture_default_str();
    gen_cmd->add_option("--stroke-images-mean", gen.config.stroke_images_mean)
        ->capture_default_str();
    gen_cmd->add_option("--mc-runs", gen.config.mc_runs)->capture_default_str();
    gen_cmd->add_option("--concentration", gen.config.concentration)->capture_default_str();
    gen_cmd->add_option("--difficulty-mix", gen.config.difficulty_mix)->capture_default_str();
    gen_cmd->add_option("--label-noise", gen.config.label_noise)->capture_default_str();
    gen_cmd->add_option("--threads", gen.threads, "Worker threads")->capture_default_str();

    MeasureArgs measure;
    auto* measure_cmd = app.add_subcommand("measure", "Per-image uncertainty summaries");
    measure_cmd->add_option("--data", measure.data, "Cohort CSV")->required();
    measure_cmd->add_option("--out", measure.out, "Per-image measures CSV")->required();
    measure_cmd->add_option("--hist-out", measure.hist_out,
                            "Optional wide histogram CSV (stroke class)");
    measure_cmd->add_option("--threads", measure.threads)->capture_default_str();

    TrainArgs train;
    train.config.seed = kDefaultSeed;
    auto* train_cmd = app.add_subcommand("train", "Train an aggregation model");
    train_cmd->add_option("--variant", train.variant, "Aggregation variant")->required();
    train_cmd->add_option("--train", train.train_path, "Training cohort CSV")->required();
    train_cmd->add_option("--valid", train.valid_path, "Validation cohort CSV")->required();
    train_cmd->add_option("--model-out", train.model_out, "Model JSON path")->required();
    train_cmd->add_option("--epochs", train.config.epochs)->capture_default_str();
    train_cmd->add_option("--batch-size", train.config.batch_size)->capture_default_str();
    train_cmd->add_option("--lr", train.config.lr)->capture_default_str();
    train_cmd->add_option("--seed", train.config.seed)->capture_default_str();
    train_cmd->add_option("--threads", train.threads)->capture_default_str();

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Patient-level predictions with MC dropout");
    predict_cmd->add_option("--model", predict.model_path, "Model JSON")->required();
    predict_cmd->add_option("--data", predict.data, "Cohort CSV")->required();
    predict_cmd->add_option("--out", predict.out, "Predictions CSV")->required();
    predict_cmd->add_option("--mc-runs", predict.mc_runs)->capture_default_str();
    predict_cmd->add_option("--seed", predict.seed)->capture_default_str();
    predict_cmd->add_option("--threads", predict.threads)->capture_default_str();

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a predictions CSV");
    eval_cmd->add_option("--pred", eval.pred, "Predictions CSV")->required();
    eval_cmd->add_option("--out-dir", eval.out_dir, "Output directory")->required();
    eval_cmd->add_option("--z", eval.z, "Wilson z value")->capture_default_str();
    eval_cmd->add_option("--removal-grid", eval.removal_grid,
                         "Comma-separated removal fractions (default 0,0.05,...,0.5)");

    CvArgs cv_args;
    cv_args.config.seed = kDefaultSeed;
    auto* cv_cmd = app.add_subcommand("cv", "Five-fold cross-validation experiment");
    cv_cmd->add_option("--data", cv_args.data, "Cohort CSV")->required();
    cv_cmd->add_option("--variants", cv_args.variants, "Comma-separated variants or 'all'")
        ->capture_default_str();
    cv_cmd->add_option("--out-dir", cv_args.out_dir, "Output directory")->required();
    cv_cmd->add_option("--seed", cv_args.config.seed)->capture_default_str();
    cv_cmd->add_option("--epochs", cv_args.config.epochs)->capture_default_str();
    cv_cmd->add_option("--batch-size", cv_args.config.batch_size)->capture_default_str();
    cv_cmd->add_option("--lr", cv_args.config.lr)->capture_default_str();
    cv_cmd->add_option("--mc-runs", cv_args.config.mc_runs)->capture_default_str();
    cv_cmd->add_option("--threads", cv_args.config.threads)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen);
        if (measure_cmd->parsed()) return run_measure(measure);
        if (train_cmd->parsed()) return run_train(train);
        if (predict_cmd->parsed()) return run_predict(predict);
        if (eval_cmd->parsed()) return run_eval(eval);
        if (cv_cmd->parsed()) return run_cv(cv_args);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
