#pragma once

// Long-format cohort CSV. One row per (patient, image, run):
//
//   patient_id,patient_label,image_id,slice_index,image_label,run,p_stroke
//
// patient_label in {stroke,tia}, image_label in {stroke,no_stroke}, run is
// 0-based. Rows need not be sorted: the parser groups them, orders images by
// slice_index and runs by run index. Patients keep first-appearance order so
// parse(serialize(d)) == d for any valid dataset. Probabilities are written
// in shortest round-trip form, so the identity is field-exact.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "strokeuq/cohort.hpp"
#include "strokeuq/errors.hpp"
#include "strokeuq/text.hpp"

namespace strokeuq {

inline constexpr std::string_view kCohortCsvHeader =
    "patient_id,patient_label,image_id,slice_index,image_label,run,p_stroke";

namespace detail {

[[noreturn]] inline void csv_error(const std::string& path, size_t line, const std::string& msg) {
    throw ValidationError(path + ":" + std::to_string(line) + ": " + msg);
}

struct ImageBuilder {
    int slice_index = 0;
    ImageLabel label = ImageLabel::no_stroke;
    size_t first_line = 0;
    std::map<int64_t, double> runs;  // run index -> p_stroke
};

struct PatientBuilder {
    PatientLabel label = PatientLabel::tia;
    std::vector<std::string> image_order;
    std::map<std::string, ImageBuilder> images;
};

}  // namespace detail

inline CohortDataset parse_samples_csv(std::string_view text, const std::string& path = "<memory>") {
    std::vector<std::string> patient_order;
    std::map<std::string, detail::PatientBuilder> patients;

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
            if (line != kCohortCsvHeader) {
                detail::csv_error(path, line_no, "bad header, expected: " + std::string(kCohortCsvHeader));
            }
            saw_header = true;
            pos = next;
            continue;
        }
        if (line.empty()) {  // trailing newline / blank line at EOF only
            if (eol != text.size()) detail::csv_error(path, line_no, "blank line");
            break;
        }

        const auto f = split_fields(line);
        if (f.size() != 7) {
            detail::csv_error(path, line_no, "malformed row: expected 7 fields, got " +
                                                 std::to_string(f.size()));
        }
        const std::string pid(f[0]);
        if (pid.empty()) detail::csv_error(path, line_no, "empty patient_id");
        PatientLabel plabel;
        if (!parse_patient_label(f[1], plabel)) {
            detail::csv_error(path, line_no, "bad patient_label: " + std::string(f[1]));
        }
        const std::string iid(f[2]);
        if (iid.empty()) detail::csv_error(path, line_no, "empty image_id");
        int64_t slice = 0;
        if (!parse_int64(f[3], slice) || slice < 0) {
            detail::csv_error(path, line_no, "bad slice_index: " + std::string(f[3]));
        }
        ImageLabel ilabel;
        if (!parse_image_label(f[4], ilabel)) {
            detail::csv_error(path, line_no, "bad image_label: " + std::string(f[4]));
        }
        int64_t run = 0;
        if (!parse_int64(f[5], run) || run < 0) {
            detail::csv_error(path, line_no, "bad run index: " + std::string(f[5]));
        }
        double p = 0.0;
        if (!parse_double(f[6], p)) {
            detail::csv_error(path, line_no, "bad p_stroke: " + std::string(f[6]));
        }
        if (!(p >= 0.0 && p <= 1.0)) {
            detail::csv_error(path, line_no, "probability out of range: " + std::string(f[6]));
        }
        if (plabel == PatientLabel::tia && ilabel == ImageLabel::stroke) {
            detail::csv_error(path, line_no, "tia patient " + pid + " has stroke-labeled image " + iid);
        }

        auto [pit, pnew] = patients.try_emplace(pid);
        auto& pb = pit->second;
        if (pnew) {
            pb.label = plabel;
            patient_order.push_back(pid);
        } else if (pb.label != plabel) {
            detail::csv_error(path, line_no, "conflicting patient_label for " + pid);
        }
        auto [iit, inew] = pb.images.try_emplace(iid);
        auto& ib = iit->second;
        if (inew) {
            ib.slice_index = static_cast<int>(slice);
            ib.label = ilabel;
            ib.first_line = line_no;
            pb.image_order.push_back(iid);
        } else {
            if (ib.slice_index != slice) {
                detail::csv_error(path, line_no, "conflicting slice_index for image " + iid);
            }
            if (ib.label != ilabel) {
                detail::csv_error(path, line_no, "conflicting image_label for image " + iid);
            }
        }
        if (!ib.runs.emplace(run, p).second) {
            detail::csv_error(path, line_no, "duplicate (patient_id,image_id,run): " + pid + "," +
                                                 iid + "," + std::to_string(run));
        }
        pos = next;
    }
    if (!saw_header) detail::csv_error(path, 1, "empty file, missing header");

    CohortDataset ds;
    ds.patients.reserve(patient_order.size());
    for (const auto& pid : patient_order) {
        auto& pb = patients.at(pid);
        PatientRecord rec;
        rec.patient_id = pid;
        rec.patient_label = pb.label;
        for (const auto& iid : pb.image_order) {
            auto& ib = pb.images.at(iid);
            std::vector<double> col;
            col.reserve(ib.runs.size());
            for (const auto& [run, p] : ib.runs) col.push_back(p);
            rec.images.push_back(ImageRecord{iid, ib.slice_index, ib.label,
                                             PredictiveSamples(std::move(col))});
        }
        std::sort(rec.images.begin(), rec.images.end(),
                  [](const ImageRecord& a, const ImageRecord& b) {
                      return a.slice_index < b.slice_index;
                  });
        for (size_t i = 1; i < rec.images.size(); ++i) {
            if (rec.images[i].slice_index == rec.images[i - 1].slice_index) {
                detail::csv_error(path, pb.images.at(rec.images[i].image_id).first_line,
                                  "duplicate slice_index " + std::to_string(rec.images[i].slice_index) +
                                      " in patient " + pid);
            }
        }
        ds.patients.push_back(std::move(rec));
    }
    validate(ds);
    return ds;
}

inline CohortDataset parse_samples_file(const std::string& path) {
    return parse_samples_csv(read_file(path), path);
}

inline std::string serialize_samples_csv(const CohortDataset& ds) {
    validate(ds);
    std::string out;
    out.reserve(64 * (ds.total_images() + 1));
    out += kCohortCsvHeader;
    out += '\n';
    for (const auto& p : ds.patients) {
        for (const auto& img : p.images) {
            const int t_count = img.samples.runs();
            for (int t = 0; t < t_count; ++t) {
                out += p.patient_id;
                out += ',';
                out += to_string(p.patient_label);
                out += ',';
                out += img.image_id;
                out += ',';
                out += std::to_string(img.slice_index);
                out += ',';
                out += to_string(img.true_label);
                out += ',';
                out += std::to_string(t);
                out += ',';
                out += format_double(img.samples.stroke(t));
                out += '\n';
            }
        }
    }
    return out;
}

inline void serialize_samples_file(const CohortDataset& ds, const std::string& path) {
    atomic_write_file(path, serialize_samples_csv(ds));
}

}  // namespace strokeuq
