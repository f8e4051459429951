#pragma once

// Row formats shared by the predict/eval/cv surfaces.
//
// Predictions CSV (one row per patient):
//   patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label
// The uncertainty columns are empty for the Maximum method, which has no
// patient-level uncertainty.
//
// Per-image measures CSV:
//   patient_id,image_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_class
// plus an optional wide histogram CSV with the stroke-class bin values.

#include <optional>
#include <string>
#include <vector>

#include "strokeuq/aggregate.hpp"
#include "strokeuq/cohort.hpp"
#include "strokeuq/errors.hpp"
#include "strokeuq/measures.hpp"
#include "strokeuq/metrics.hpp"
#include "strokeuq/text.hpp"

namespace strokeuq {

inline constexpr std::string_view kPredictionsCsvHeader =
    "patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label";

inline constexpr std::string_view kMeasuresCsvHeader =
    "patient_id,image_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_class";

struct PredictionRow {
    std::string patient_id;
    double p_stroke = 0.0;
    std::optional<measures::UncertaintySummary> summary;  // histograms unused here
    PatientLabel predicted = PatientLabel::tia;
    PatientLabel truth = PatientLabel::tia;
};

inline void append_prediction_row(std::string& out, const PredictionRow& row) {
    out += row.patient_id;
    out += ',';
    out += format_double(row.p_stroke);
    if (row.summary.has_value()) {
        const auto& u = *row.summary;
        for (double v : {u.var, u.vr, u.pe, u.mi, u.epi, u.alea}) {
            out += ',';
            out += format_double(v);
        }
    } else {
        out += ",,,,,,";
    }
    out += ',';
    out += to_string(row.predicted);
    out += ',';
    out += to_string(row.truth);
    out += '\n';
}

inline std::string predictions_csv(const std::vector<PredictionRow>& rows) {
    std::string out(kPredictionsCsvHeader);
    out += '\n';
    for (const auto& row : rows) append_prediction_row(out, row);
    return out;
}

inline std::vector<PredictionRow> parse_predictions_csv(std::string_view text,
                                                        const std::string& path = "<memory>") {
    std::vector<PredictionRow> rows;
    size_t pos = 0;
    size_t line_no = 0;
    bool saw_header = false;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        const size_t next = eol + 1;
        ++line_no;
        if (!saw_header) {
            if (line != kPredictionsCsvHeader) {
                throw ValidationError(path + ":1: bad header, expected: " +
                                      std::string(kPredictionsCsvHeader));
            }
            saw_header = true;
            pos = next;
            continue;
        }
        if (line.empty()) {
            if (eol != text.size()) {
                throw ValidationError(path + ":" + std::to_string(line_no) + ": blank line");
            }
            break;
        }
        const auto f = split_fields(line);
        if (f.size() != 10) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": expected 10 fields");
        }
        PredictionRow row;
        row.patient_id = std::string(f[0]);
        if (!parse_double(f[1], row.p_stroke)) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": bad p_bar_stroke");
        }
        const bool any_unc = !f[2].empty() || !f[3].empty() || !f[4].empty() || !f[5].empty() ||
                             !f[6].empty() || !f[7].empty();
        if (any_unc) {
            measures::UncertaintySummary u;
            double* slots[6] = {&u.var, &u.vr, &u.pe, &u.mi, &u.epi, &u.alea};
            for (int k = 0; k < 6; ++k) {
                if (!parse_double(f[static_cast<size_t>(2 + k)], *slots[k])) {
                    throw ValidationError(path + ":" + std::to_string(line_no) +
                                          ": bad uncertainty value");
                }
            }
            u.mean_prob = {1.0 - row.p_stroke, row.p_stroke};
            row.summary = u;
        }
        if (!parse_patient_label(f[8], row.predicted)) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": bad predicted_label");
        }
        if (!parse_patient_label(f[9], row.truth)) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": bad true_label");
        }
        rows.push_back(std::move(row));
        pos = next;
    }
    if (!saw_header) throw ValidationError(path + ":1: empty file, missing header");
    return rows;
}

inline std::string measures_csv(const CohortDataset& ds,
                                const std::vector<std::vector<measures::UncertaintySummary>>& summaries) {
    std::string out(kMeasuresCsvHeader);
    out += '\n';
    for (size_t p = 0; p < ds.patients.size(); ++p) {
        const auto& patient = ds.patients[p];
        for (size_t i = 0; i < patient.images.size(); ++i) {
            const auto& u = summaries[p][i];
            out += patient.patient_id;
            out += ',';
            out += patient.images[i].image_id;
            for (double v : {u.mean_prob.stroke, u.var, u.vr, u.pe, u.mi, u.epi, u.alea}) {
                out += ',';
                out += format_double(v);
            }
            out += ',';
            out += to_string(u.predicted_class);
            out += '\n';
        }
    }
    return out;
}

inline std::string calibration_csv(const metrics::CalibrationTable& table) {
    std::string out = "interval,representative,count,event_fraction\n";
    for (const auto& row : table.rows) {
        out += std::to_string(row.interval);
        out += ',';
        out += format_double(row.representative);
        out += ',';
        out += std::to_string(row.count);
        out += ',';
        if (row.event_fraction.has_value()) out += format_double(*row.event_fraction);
        out += '\n';
    }
    return out;
}

inline std::string roc_csv(const metrics::RocCurve& roc) {
    std::string out = "fpr,tpr\n";
    for (const auto& [fpr, tpr] : roc.points) {
        out += format_double(fpr);
        out += ',';
        out += format_double(tpr);
        out += '\n';
    }
    return out;
}

inline std::string removal_csv(const metrics::RemovalCurve& curve) {
    std::string out = "fraction_removed,accuracy_on_retained\n";
    for (const auto& [f, acc] : curve.points) {
        out += format_double(f);
        out += ',';
        out += format_double(acc);
        out += '\n';
    }
    return out;
}

inline std::string train_log_csv(const std::vector<agg::EpochLog>& log) {
    std::string out = "epoch,train_loss,train_accuracy,valid_loss,valid_accuracy\n";
    for (const auto& e : log) {
        out += std::to_string(e.epoch);
        out += ',';
        out += format_double(e.train_loss);
        out += ',';
        out += format_double(e.train_accuracy);
        out += ',';
        out += format_double(e.valid_loss);
        out += ',';
        out += format_double(e.valid_accuracy);
        out += '\n';
    }
    return out;
}

inline std::string histogram_csv(const CohortDataset& ds,
                                 const std::vector<std::vector<measures::UncertaintySummary>>& summaries) {
    std::string out = "patient_id,image_id";
    for (int b = 1; b <= measures::kHistogramBins; ++b) {
        out += ",hist_bin_" + std::to_string(b);
    }
    out += '\n';
    for (size_t p = 0; p < ds.patients.size(); ++p) {
        const auto& patient = ds.patients[p];
        for (size_t i = 0; i < patient.images.size(); ++i) {
            out += patient.patient_id;
            out += ',';
            out += patient.images[i].image_id;
            for (double v : summaries[p][i].hist.stroke) {
                out += ',';
                out += format_double(v);
            }
            out += '\n';
        }
    }
    return out;
}

}  // namespace strokeuq
