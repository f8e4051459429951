#pragma once

// Five-fold cross-validation. make_folds splits patients into five disjoint,
// exhaustive test partitions stratified by patient label, and splits each
// fold's remaining patients 70/15/15 into Train-1 / Valid-1 / Valid-2.
// run_experiment then, per fold: computes per-image summaries once (shared
// by every variant), trains each network variant on Train-1 u Valid-1 with
// Valid-2 driving early stopping, predicts the fold's test patients under MC
// dropout, and pools the per-fold outcomes into accuracy, calibration and
// per-measure error-detection reports. Pooled accuracy is total correct over
// total predictions, not the mean of fold accuracies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "strokeuq/aggregate.hpp"
#include "strokeuq/cohort.hpp"
#include "strokeuq/errors.hpp"
#include "strokeuq/measures.hpp"
#include "strokeuq/metrics.hpp"
#include "strokeuq/model_io.hpp"
#include "strokeuq/parallel.hpp"
#include "strokeuq/report_io.hpp"
#include "strokeuq/rng.hpp"
#include "strokeuq/text.hpp"

namespace strokeuq::cv {

inline constexpr int kFolds = 5;
inline constexpr double kTrainFraction = 0.70;
inline constexpr double kValid1Fraction = 0.15;
inline constexpr double kStratifyTolerance = 0.05;  // ±5 percentage points

struct SplitIds {
    std::vector<std::string> test;
    std::vector<std::string> train1;
    std::vector<std::string> valid1;
    std::vector<std::string> valid2;
};

struct SplitStrata {
    double test = -1.0;  // stroke fraction; -1 marks an empty split
    double train1 = -1.0;
    double valid1 = -1.0;
    double valid2 = -1.0;
};

struct FoldPlan {
    uint64_t seed = 0;
    double cohort_stroke_fraction = 0.0;
    std::vector<SplitIds> folds;       // kFolds entries
    std::vector<SplitStrata> strata;   // stratification report, per fold
};

namespace detail {

inline double stroke_fraction(const std::vector<std::string>& ids,
                              const std::unordered_map<std::string, PatientLabel>& labels) {
    if (ids.empty()) return -1.0;
    long stroke = 0;
    for (const auto& id : ids) {
        if (labels.at(id) == PatientLabel::stroke) ++stroke;
    }
    return static_cast<double>(stroke) / static_cast<double>(ids.size());
}

inline void check_stratum(double fraction, double cohort, const std::string& where) {
    if (fraction < 0.0) return;  // empty split
    if (std::abs(fraction - cohort) > kStratifyTolerance + 1e-12) {
        throw ValidationError("make_folds: too few patients of either class to stratify (" +
                              where + " stroke fraction deviates more than 5pp)");
    }
}

}  // namespace detail

inline FoldPlan make_folds(const CohortDataset& ds, uint64_t seed) {
    if (ds.patients.size() < 10) throw ValidationError("make_folds: need at least 10 patients");
    std::vector<std::string> stroke_ids;
    std::vector<std::string> tia_ids;
    std::unordered_map<std::string, PatientLabel> labels;
    for (const auto& p : ds.patients) {
        labels.emplace(p.patient_id, p.patient_label);
        (p.patient_label == PatientLabel::stroke ? stroke_ids : tia_ids).push_back(p.patient_id);
    }
    if (stroke_ids.size() < kFolds || tia_ids.size() < kFolds) {
        throw ValidationError(
            "make_folds: too few patients of either class to stratify five folds");
    }

    Rng rng(seed);
    rng.shuffle(stroke_ids);
    rng.shuffle(tia_ids);

    // Near-equal test partitions: per class, floor-sized chunks; the
    // remainders are handed out round-robin starting from the last fold, so
    // total test sizes differ by at most one (511 -> 102,102,102,102,103).
    std::array<std::vector<std::string>, kFolds> test_parts;
    int extras_assigned = 0;
    const auto partition_class = [&](const std::vector<std::string>& ids) {
        const size_t base = ids.size() / kFolds;
        const int rem = static_cast<int>(ids.size() % kFolds);
        std::array<size_t, kFolds> want{};
        for (auto& w : want) w = base;
        for (int r = 0; r < rem; ++r) {
            want[static_cast<size_t>(kFolds - 1 - (extras_assigned % kFolds))] += 1;
            ++extras_assigned;
        }
        size_t at = 0;
        for (int f = 0; f < kFolds; ++f) {
            for (size_t k = 0; k < want[static_cast<size_t>(f)]; ++k) {
                test_parts[static_cast<size_t>(f)].push_back(ids[at++]);
            }
        }
    };
    partition_class(stroke_ids);
    partition_class(tia_ids);

    FoldPlan plan;
    plan.seed = seed;
    plan.cohort_stroke_fraction =
        static_cast<double>(stroke_ids.size()) / static_cast<double>(ds.patients.size());

    for (int f = 0; f < kFolds; ++f) {
        SplitIds split;
        split.test = test_parts[static_cast<size_t>(f)];

        Rng fold_rng(mix_seed(seed, static_cast<uint64_t>(f) + 1));
        for (const auto* class_ids : {&stroke_ids, &tia_ids}) {
            std::vector<std::string> rest;
            for (const auto& id : *class_ids) {
                if (std::find(split.test.begin(), split.test.end(), id) == split.test.end()) {
                    rest.push_back(id);
                }
            }
            fold_rng.shuffle(rest);
            // Nearest-rounded 70/15/15 per class. Valid-2 is sized directly
            // (it drives early stopping); Valid-1 absorbs the remainder and
            // may come out empty on tiny cohorts, which is harmless since
            // aggregators train on Train-1 u Valid-1.
            const size_t n = rest.size();
            const size_t n_train = static_cast<size_t>(
                std::lround(kTrainFraction * static_cast<double>(n)));
            const size_t n_v2 = static_cast<size_t>(
                std::lround(kValid1Fraction * static_cast<double>(n)));
            const size_t n_v1 = n - n_train - n_v2;
            for (size_t i = 0; i < n; ++i) {
                if (i < n_train) split.train1.push_back(rest[i]);
                else if (i < n_train + n_v1) split.valid1.push_back(rest[i]);
                else split.valid2.push_back(rest[i]);
            }
        }

        SplitStrata st;
        st.test = detail::stroke_fraction(split.test, labels);
        st.train1 = detail::stroke_fraction(split.train1, labels);
        st.valid1 = detail::stroke_fraction(split.valid1, labels);
        st.valid2 = detail::stroke_fraction(split.valid2, labels);
        const std::string fold_name = "fold " + std::to_string(f + 1);
        detail::check_stratum(st.test, plan.cohort_stroke_fraction, fold_name + " test");
        detail::check_stratum(st.train1, plan.cohort_stroke_fraction, fold_name + " train1");
        detail::check_stratum(st.valid1, plan.cohort_stroke_fraction, fold_name + " valid1");
        detail::check_stratum(st.valid2, plan.cohort_stroke_fraction, fold_name + " valid2");

        plan.folds.push_back(std::move(split));
        plan.strata.push_back(st);
    }
    return plan;
}

struct ExperimentConfig {
    std::vector<agg::Variant> variants;
    uint64_t seed = 42;
    int epochs = 200;
    int batch_size = 2;
    double lr = 0.001;
    int mc_runs = agg::kDefaultPatientMcRuns;
    int threads = 1;
};

struct PatientOutcome {
    std::string patient_id;
    int fold = 0;  // 1-based
    PatientLabel truth = PatientLabel::tia;
    agg::PatientPrediction prediction;
};

struct CellResult {  // one (fold, variant) unit of work
    int fold = 0;    // 1-based
    agg::Variant variant = agg::Variant::max;
    bool ok = true;
    std::string error;
    std::vector<agg::EpochLog> train_log;
    int best_epoch = 0;
    nn::ModelFile model;
    std::vector<PatientOutcome> outcomes;
};

struct MeasureEval {
    std::string measure;
    std::optional<metrics::RocCurve> roc;  // absent when error detection is degenerate
    metrics::RemovalCurve removal;
};

struct VariantReport {
    agg::Variant variant = agg::Variant::max;
    bool ok = true;
    std::string error;  // first failed cell's message
    long correct = 0;
    long total = 0;
    metrics::WilsonInterval wilson;
    metrics::CalibrationTable calibration;
    double sanders = 0.0;
    std::vector<MeasureEval> measure_evals;  // empty for the Maximum method
};

struct ExperimentResult {
    FoldPlan plan;
    ExperimentConfig config;
    std::vector<CellResult> cells;      // fold-major, variant order as configured
    std::vector<VariantReport> pooled;  // variant order as configured
    long summaries_computed = 0;        // summarize() call count, for reuse checks
};

namespace detail {

using SummaryMap = std::unordered_map<std::string, std::vector<measures::UncertaintySummary>>;

inline agg::LabeledFeatures features_for(const std::vector<std::string>& ids,
                                         const std::unordered_map<std::string, const PatientRecord*>& by_id,
                                         const SummaryMap& summaries, agg::Variant variant) {
    agg::LabeledFeatures out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const PatientRecord* p = by_id.at(id);
        out.emplace_back(agg::build_features(*p, summaries.at(id), variant),
                         p->patient_label == PatientLabel::stroke ? 1 : 0);
    }
    return out;
}

}  // namespace detail

inline ExperimentResult run_experiment(const CohortDataset& ds, const ExperimentConfig& config) {
    if (config.variants.empty()) throw ValidationError("run_experiment: no variants selected");
    if (config.mc_runs < 1) throw ValidationError("run_experiment: mc_runs must be >= 1");

    ExperimentResult result;
    result.plan = make_folds(ds, config.seed);
    result.config = config;

    std::unordered_map<std::string, const PatientRecord*> by_id;
    for (const auto& p : ds.patients) by_id.emplace(p.patient_id, &p);

    // Phase 1: per-image summaries, once per fold, shared by all variants.
    std::vector<detail::SummaryMap> fold_summaries(kFolds);
    std::vector<long> fold_counts(kFolds, 0);
    parallel_for(kFolds, config.threads, [&](int f) {
        detail::SummaryMap map;
        long count = 0;
        map.reserve(ds.patients.size());
        for (const auto& p : ds.patients) {
            std::vector<measures::UncertaintySummary> per_image;
            per_image.reserve(p.images.size());
            for (const auto& img : p.images) {
                per_image.push_back(measures::summarize(img.samples));
                ++count;
            }
            map.emplace(p.patient_id, std::move(per_image));
        }
        fold_summaries[static_cast<size_t>(f)] = std::move(map);
        fold_counts[static_cast<size_t>(f)] = count;
    });
    result.summaries_computed = std::accumulate(fold_counts.begin(), fold_counts.end(), 0L);

    // Phase 2: independent (fold, variant) cells.
    const int n_variants = static_cast<int>(config.variants.size());
    result.cells.assign(static_cast<size_t>(kFolds * n_variants), {});
    parallel_for(kFolds * n_variants, config.threads, [&](int c) {
        const int f = c / n_variants;
        const int v = c % n_variants;
        const agg::Variant variant = config.variants[static_cast<size_t>(v)];
        const auto& split = result.plan.folds[static_cast<size_t>(f)];
        const auto& summaries = fold_summaries[static_cast<size_t>(f)];
        CellResult cell;
        cell.fold = f + 1;
        cell.variant = variant;
        const uint64_t cell_seed =
            mix_seed(config.seed, static_cast<uint64_t>(f) + 101, static_cast<uint64_t>(v) + 1);
        try {
            if (variant == agg::Variant::max) {
                cell.model.variant = std::string(agg::to_string(variant));
                cell.model.has_network = false;
                cell.model.seed = cell_seed;
                for (const auto& id : split.test) {
                    const PatientRecord* p = by_id.at(id);
                    PatientOutcome o;
                    o.patient_id = id;
                    o.fold = f + 1;
                    o.truth = p->patient_label;
                    o.prediction = agg::maximum_method(*p, summaries.at(id));
                    cell.outcomes.push_back(std::move(o));
                }
            } else {
                const auto net = agg::build_model(variant);
                auto train = detail::features_for(split.train1, by_id, summaries, variant);
                {
                    auto more = detail::features_for(split.valid1, by_id, summaries, variant);
                    for (auto& item : more) train.push_back(std::move(item));
                }
                const auto valid = detail::features_for(split.valid2, by_id, summaries, variant);
                agg::TrainConfig tc;
                tc.epochs = config.epochs;
                tc.batch_size = config.batch_size;
                tc.lr = config.lr;
                tc.seed = cell_seed;
                auto trained = agg::train_aggregator(net, train, valid, tc);
                cell.train_log = std::move(trained.log);
                cell.best_epoch = trained.best_epoch;
                cell.model.variant = std::string(agg::to_string(variant));
                cell.model.graph = net;
                cell.model.params = trained.params;
                cell.model.adam.lr = config.lr;
                cell.model.seed = cell_seed;
                for (const auto& id : split.test) {
                    const PatientRecord* p = by_id.at(id);
                    PatientOutcome o;
                    o.patient_id = id;
                    o.fold = f + 1;
                    o.truth = p->patient_label;
                    const auto features = agg::build_features(*p, summaries.at(id), variant);
                    o.prediction = agg::predict_patient(net, trained.params, features,
                                                        config.mc_runs,
                                                        mix_seed(cell_seed, fnv1a64(id)));
                    cell.outcomes.push_back(std::move(o));
                }
            }
        } catch (const ValidationError& e) {
            cell.ok = false;
            cell.error = e.what();
            cell.outcomes.clear();
        }
        result.cells[static_cast<size_t>(c)] = std::move(cell);
    });

    // Phase 3: pool per variant over folds.
    for (int v = 0; v < n_variants; ++v) {
        const agg::Variant variant = config.variants[static_cast<size_t>(v)];
        VariantReport report;
        report.variant = variant;
        std::vector<PatientOutcome> outcomes;
        for (int f = 0; f < kFolds; ++f) {
            const auto& cell = result.cells[static_cast<size_t>(f * n_variants + v)];
            if (!cell.ok) {
                report.ok = false;
                if (report.error.empty()) report.error = cell.error;
                continue;
            }
            outcomes.insert(outcomes.end(), cell.outcomes.begin(), cell.outcomes.end());
        }
        report.total = static_cast<long>(outcomes.size());
        if (!outcomes.empty()) {
            std::vector<double> probs;
            std::vector<int> truth;
            std::vector<int> correct_flags;
            for (const auto& o : outcomes) {
                const bool correct = o.prediction.predicted_label == o.truth;
                report.correct += correct ? 1 : 0;
                probs.push_back(o.prediction.mean_prob.stroke);
                truth.push_back(o.truth == PatientLabel::stroke ? 1 : 0);
                correct_flags.push_back(correct ? 1 : 0);
            }
            report.wilson = metrics::accuracy_with_wilson(report.correct, report.total);
            report.calibration = metrics::calibration(probs, truth);
            report.sanders = metrics::sanders_score(report.calibration);
            if (variant != agg::Variant::max) {
                for (const auto measure : measures::kMeasureNames) {
                    MeasureEval ev;
                    ev.measure = std::string(measure);
                    std::vector<double> scores;
                    std::vector<int> is_error;
                    scores.reserve(outcomes.size());
                    for (size_t i = 0; i < outcomes.size(); ++i) {
                        scores.push_back(
                            measures::measure_value(*outcomes[i].prediction.summary, measure));
                        is_error.push_back(correct_flags[i] == 0 ? 1 : 0);
                    }
                    try {
                        ev.roc = metrics::roc_auc(scores, is_error);
                    } catch (const ValidationError&) {
                        ev.roc.reset();  // all correct or all wrong: AUC undefined
                    }
                    ev.removal = metrics::removal_curve(scores, correct_flags);
                    report.measure_evals.push_back(std::move(ev));
                }
            }
        }
        result.pooled.push_back(std::move(report));
    }
    return result;
}

// --- artifact writing ------------------------------------------------------

namespace detail {

inline std::string sanitize_csv_cell(std::string s) {
    for (auto& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

inline std::vector<PredictionRow> to_rows(const std::vector<PatientOutcome>& outcomes) {
    std::vector<PredictionRow> rows;
    rows.reserve(outcomes.size());
    for (const auto& o : outcomes) {
        PredictionRow r;
        r.patient_id = o.patient_id;
        r.p_stroke = o.prediction.mean_prob.stroke;
        r.summary = o.prediction.summary;
        r.predicted = o.prediction.predicted_label;
        r.truth = o.truth;
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace detail

inline std::string table2_csv(const ExperimentResult& result) {
    std::string out = "variant,accuracy,ci_lower,ci_upper,correct,total,status\n";
    for (const auto& rep : result.pooled) {
        out += std::string(agg::to_string(rep.variant));
        out += ',';
        if (rep.total > 0) {
            out += format_double(rep.wilson.accuracy);
            out += ',';
            out += format_double(rep.wilson.lower);
            out += ',';
            out += format_double(rep.wilson.upper);
            out += ',';
            out += std::to_string(rep.correct);
            out += ',';
            out += std::to_string(rep.total);
        } else {
            out += ",,,,";
        }
        out += ',';
        out += rep.ok ? "ok" : "failed: " + detail::sanitize_csv_cell(rep.error);
        out += '\n';
    }
    return out;
}

// Writes table2.csv, per-fold artifacts (models, predictions, training logs,
// plot CSVs) and pooled plot data + metrics.json under out_dir. The caller
// adds manifest.json.
inline void write_experiment_artifacts(const ExperimentResult& result, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory: " + out_dir);
    fs::create_directories(out_dir + "/pooled", ec);
    if (ec) throw IoError("cannot create directory: " + out_dir + "/pooled");
    for (int f = 1; f <= kFolds; ++f) {
        fs::create_directories(out_dir + "/fold_" + std::to_string(f), ec);
        if (ec) throw IoError("cannot create fold directory under: " + out_dir);
    }

    atomic_write_file(out_dir + "/table2.csv", table2_csv(result));

    for (const auto& cell : result.cells) {
        const std::string dir = out_dir + "/fold_" + std::to_string(cell.fold);
        const std::string vname(agg::to_string(cell.variant));
        if (!cell.ok) {
            atomic_write_file(dir + "/error_" + vname + ".txt", cell.error + "\n");
            continue;
        }
        nn::save_model(cell.model, dir + "/model_" + vname + ".json");
        atomic_write_file(dir + "/predictions_" + vname + ".csv",
                          predictions_csv(detail::to_rows(cell.outcomes)));
        if (!cell.train_log.empty()) {
            atomic_write_file(dir + "/train_log_" + vname + ".csv",
                              train_log_csv(cell.train_log));
        }
        // Fold-level plot data.
        std::vector<double> probs;
        std::vector<int> truth;
        std::vector<int> correct_flags;
        for (const auto& o : cell.outcomes) {
            probs.push_back(o.prediction.mean_prob.stroke);
            truth.push_back(o.truth == PatientLabel::stroke ? 1 : 0);
            correct_flags.push_back(o.prediction.predicted_label == o.truth ? 1 : 0);
        }
        if (!probs.empty()) {
            atomic_write_file(dir + "/calibration_" + vname + ".csv",
                              calibration_csv(metrics::calibration(probs, truth)));
        }
        if (cell.variant != agg::Variant::max && !cell.outcomes.empty()) {
            for (const auto measure : measures::kMeasureNames) {
                std::vector<double> scores;
                std::vector<int> is_error;
                for (size_t i = 0; i < cell.outcomes.size(); ++i) {
                    scores.push_back(measures::measure_value(
                        *cell.outcomes[i].prediction.summary, measure));
                    is_error.push_back(correct_flags[i] == 0 ? 1 : 0);
                }
                const std::string mname(measure);
                atomic_write_file(dir + "/removal_" + vname + "_" + mname + ".csv",
                                  removal_csv(metrics::removal_curve(scores, correct_flags)));
                try {
                    const auto roc = metrics::roc_auc(scores, is_error);
                    atomic_write_file(dir + "/roc_" + vname + "_" + mname + ".csv",
                                      roc_csv(roc));
                } catch (const ValidationError&) {
                    // degenerate at fold level (all correct): no ROC file
                }
            }
        }
    }

    nlohmann::json metrics_json;
    metrics_json["folds"] = kFolds;
    metrics_json["seed"] = result.config.seed;
    metrics_json["summaries_computed"] = result.summaries_computed;
    nlohmann::json variants_json = nlohmann::json::array();
    for (const auto& rep : result.pooled) {
        const std::string vname(agg::to_string(rep.variant));
        nlohmann::json vj;
        vj["variant"] = vname;
        vj["ok"] = rep.ok;
        if (!rep.ok) vj["error"] = rep.error;
        if (rep.total > 0) {
            vj["correct"] = rep.correct;
            vj["total"] = rep.total;
            vj["accuracy"] = rep.wilson.accuracy;
            vj["ci_lower"] = rep.wilson.lower;
            vj["ci_upper"] = rep.wilson.upper;
            vj["sanders"] = rep.sanders;
            atomic_write_file(out_dir + "/pooled/calibration_" + vname + ".csv",
                              calibration_csv(rep.calibration));
            nlohmann::json aucs;
            for (const auto& ev : rep.measure_evals) {
                if (ev.roc.has_value()) {
                    aucs[ev.measure] = ev.roc->auc;
                    atomic_write_file(out_dir + "/pooled/roc_" + vname + "_" + ev.measure + ".csv",
                                      roc_csv(*ev.roc));
                } else {
                    aucs[ev.measure] = nullptr;
                }
                atomic_write_file(out_dir + "/pooled/removal_" + vname + "_" + ev.measure + ".csv",
                                  removal_csv(ev.removal));
            }
            if (rep.variant != agg::Variant::max) vj["error_detection_auc"] = std::move(aucs);
        }
        variants_json.push_back(std::move(vj));
    }
    metrics_json["variants"] = std::move(variants_json);
    atomic_write_file(out_dir + "/metrics.json", metrics_json.dump(2) + "\n");
}

}  // namespace strokeuq::cv
