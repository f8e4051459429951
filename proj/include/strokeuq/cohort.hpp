#pragma once

// Data model for per-image Monte Carlo predictive samples and the cohort
// structure around them. The task is binary: class 0 = no-stroke, class 1 =
// stroke. Only the stroke-class probability is stored per run; the no-stroke
// probability is its complement, so every row of the conceptual T x 2 sample
// matrix is normalized by construction.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "strokeuq/errors.hpp"

namespace strokeuq {

enum class ImageLabel : uint8_t { no_stroke = 0, stroke = 1 };
enum class PatientLabel : uint8_t { tia = 0, stroke = 1 };

inline std::string_view to_string(ImageLabel l) {
    return l == ImageLabel::stroke ? "stroke" : "no_stroke";
}

inline std::string_view to_string(PatientLabel l) {
    return l == PatientLabel::stroke ? "stroke" : "tia";
}

inline bool parse_image_label(std::string_view s, ImageLabel& out) {
    if (s == "stroke") { out = ImageLabel::stroke; return true; }
    if (s == "no_stroke") { out = ImageLabel::no_stroke; return true; }
    return false;
}

inline bool parse_patient_label(std::string_view s, PatientLabel& out) {
    if (s == "stroke") { out = PatientLabel::stroke; return true; }
    if (s == "tia") { out = PatientLabel::tia; return true; }
    return false;
}

// T softmax outputs for one image, one row per MC dropout run.
class PredictiveSamples {
public:
    PredictiveSamples() = default;

    explicit PredictiveSamples(std::vector<double> stroke_probs)
        : stroke_(std::move(stroke_probs)) {
        if (stroke_.empty()) throw ValidationError("PredictiveSamples: need at least one run");
        for (double p : stroke_) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw ValidationError("PredictiveSamples: probability out of range");
            }
        }
    }

    int runs() const { return static_cast<int>(stroke_.size()); }
    double stroke(int t) const { return stroke_[static_cast<size_t>(t)]; }
    double no_stroke(int t) const { return 1.0 - stroke_[static_cast<size_t>(t)]; }
    const std::vector<double>& stroke_column() const { return stroke_; }

    bool operator==(const PredictiveSamples&) const = default;

private:
    std::vector<double> stroke_;
};

struct ImageRecord {
    std::string image_id;
    int slice_index = 0;  // anatomical position; unique within a patient
    ImageLabel true_label = ImageLabel::no_stroke;
    PredictiveSamples samples;

    bool operator==(const ImageRecord&) const = default;
};

struct PatientRecord {
    std::string patient_id;
    PatientLabel patient_label = PatientLabel::tia;
    std::vector<ImageRecord> images;  // ordered by slice_index

    bool operator==(const PatientRecord&) const = default;
};

struct CohortDataset {
    std::vector<PatientRecord> patients;

    size_t total_images() const {
        size_t n = 0;
        for (const auto& p : patients) n += p.images.size();
        return n;
    }

    bool operator==(const CohortDataset&) const = default;
};

namespace detail {
inline bool csv_safe_id(std::string_view id) {
    if (id.empty()) return false;
    for (char c : id) {
        if (c == ',' || c == '\n' || c == '\r') return false;
    }
    return true;
}
}  // namespace detail

// Full invariant check; parse_samples_file guarantees these, the generator
// and tests call it on datasets built in memory.
inline void validate(const CohortDataset& ds) {
    for (size_t i = 0; i < ds.patients.size(); ++i) {
        const auto& p = ds.patients[i];
        if (!detail::csv_safe_id(p.patient_id)) {
            throw ValidationError("patient_id empty or contains CSV separators");
        }
        for (size_t j = i + 1; j < ds.patients.size(); ++j) {
            if (ds.patients[j].patient_id == p.patient_id) {
                throw ValidationError("duplicate patient_id: " + p.patient_id);
            }
        }
        if (p.images.empty()) {
            throw ValidationError("patient " + p.patient_id + " has no images");
        }
        int prev_slice = -1;
        for (const auto& img : p.images) {
            if (!detail::csv_safe_id(img.image_id)) {
                throw ValidationError("image_id empty or contains CSV separators");
            }
            if (img.slice_index < 0) {
                throw ValidationError("negative slice_index in patient " + p.patient_id);
            }
            if (img.slice_index <= prev_slice) {
                throw ValidationError("images of patient " + p.patient_id +
                                      " not strictly ordered by slice_index");
            }
            prev_slice = img.slice_index;
            if (p.patient_label == PatientLabel::tia && img.true_label == ImageLabel::stroke) {
                throw ValidationError("tia patient " + p.patient_id +
                                      " has a stroke-labeled image: " + img.image_id);
            }
            if (img.samples.runs() < 1) {
                throw ValidationError("image " + img.image_id + " has no runs");
            }
        }
    }
}

}  // namespace strokeuq
