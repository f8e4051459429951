#pragma once

// Seeded synthetic cohorts with MC-dropout-like predictive samples. The
// cohort shape follows the target statistics (355 stroke / 156 TIA patients,
// 21-46 images each with mean ~30, ~12.5 stroke images per stroke patient in
// one contiguous slice run). Per image, a latent mean is drawn near the
// correct class for "easy" images and near 0.5 for "hard" ones, then the T
// per-run probabilities come from a Beta distribution with that mean; hard
// images get a much lower concentration, so their samples spread and the
// uncertainty measures correlate with errors. difficulty_mix tunes how many
// images are hard, label_noise flips the targeted class (confident errors).
//
// Per-patient substreams make generation order-independent: patients can be
// generated concurrently with results identical to sequential generation.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "strokeuq/cohort.hpp"
#include "strokeuq/errors.hpp"
#include "strokeuq/parallel.hpp"
#include "strokeuq/rng.hpp"

namespace strokeuq::synth {

struct GeneratorConfig {
    int n_stroke_patients = 355;
    int n_tia_patients = 156;
    int images_min = 21;
    int images_max = 46;
    double images_mean = 30.0;
    double stroke_images_mean = 12.5;
    int mc_runs = 500;
    double concentration = 50.0;  // Beta sharpness for easy images
    double difficulty_mix = 0.1;  // fraction of hard images
    double label_noise = 0.0;     // fraction of images targeting the wrong class
    uint64_t seed = 42;
};

struct GenerationManifest {
    GeneratorConfig config;
    int patients_stroke = 0;
    int patients_tia = 0;
    long images_total = 0;
    long images_stroke = 0;
    std::vector<std::pair<std::string, uint64_t>> patient_seeds;
};

inline void validate(const GeneratorConfig& c) {
    if (c.n_stroke_patients < 1 || c.n_tia_patients < 1) {
        throw ValidationError("generator: patient counts must be positive");
    }
    if (c.images_min < 1 || c.images_max < c.images_min) {
        throw ValidationError("generator: bad images_per_patient range");
    }
    if (!(c.images_mean >= c.images_min && c.images_mean <= c.images_max)) {
        throw ValidationError("generator: images_mean outside [images_min, images_max]");
    }
    if (!(c.stroke_images_mean > 0.0) || c.stroke_images_mean > c.images_min) {
        throw ValidationError("generator: expected stroke images must be in (0, images_min]");
    }
    if (c.mc_runs < 1) throw ValidationError("generator: mc_runs must be >= 1");
    if (!(c.concentration > 0.0)) throw ValidationError("generator: concentration must be > 0");
    if (!(c.difficulty_mix >= 0.0 && c.difficulty_mix < 1.0)) {
        throw ValidationError("generator: difficulty_mix must be in [0, 1)");
    }
    if (!(c.label_noise >= 0.0 && c.label_noise < 0.5)) {
        throw ValidationError("generator: label_noise must be in [0, 0.5)");
    }
}

namespace detail {

inline constexpr double kHardConcentrationScale = 0.12;
inline constexpr double kEasyMeanLo = 0.80;
inline constexpr double kEasyMeanHi = 0.98;
inline constexpr double kHardMeanLo = 0.35;
inline constexpr double kHardMeanHi = 0.65;

inline int draw_image_count(const GeneratorConfig& c, Rng& rng) {
    if (c.images_min == c.images_max) return c.images_min;
    const double sigma = (c.images_max - c.images_min) / 6.0;
    for (;;) {
        const int n = static_cast<int>(std::lround(rng.normal(c.images_mean, sigma)));
        if (n >= c.images_min && n <= c.images_max) return n;
    }
}

inline PatientRecord generate_patient(const GeneratorConfig& c, const std::string& patient_id,
                                      PatientLabel label, uint64_t patient_seed) {
    Rng rng(patient_seed);
    PatientRecord rec;
    rec.patient_id = patient_id;
    rec.patient_label = label;

    const int n_images = draw_image_count(c, rng);
    int lesion_start = -1;
    int lesion_len = 0;
    if (label == PatientLabel::stroke) {
        lesion_len = std::clamp(rng.poisson(c.stroke_images_mean), 1, n_images);
        lesion_start = static_cast<int>(rng.uniform_int(0, n_images - lesion_len));
    }

    rec.images.reserve(static_cast<size_t>(n_images));
    for (int i = 0; i < n_images; ++i) {
        const bool is_lesion =
            lesion_start >= 0 && i >= lesion_start && i < lesion_start + lesion_len;
        const ImageLabel truth = is_lesion ? ImageLabel::stroke : ImageLabel::no_stroke;

        bool target_stroke = truth == ImageLabel::stroke;
        if (rng.bernoulli(c.label_noise)) target_stroke = !target_stroke;
        const bool hard = rng.bernoulli(c.difficulty_mix);

        double mu;
        if (hard) {
            mu = rng.uniform(kHardMeanLo, kHardMeanHi);
        } else {
            const double toward = rng.uniform(kEasyMeanLo, kEasyMeanHi);
            mu = target_stroke ? toward : 1.0 - toward;
        }
        const double nu = c.concentration * (hard ? kHardConcentrationScale : 1.0);

        std::vector<double> probs(static_cast<size_t>(c.mc_runs));
        for (auto& p : probs) p = std::clamp(rng.beta(mu * nu, (1.0 - mu) * nu), 0.0, 1.0);

        ImageRecord img;
        img.image_id = patient_id + "_img" + std::to_string(i);
        img.slice_index = i;
        // TIA patients can only carry no-stroke images; lesions never occur
        // for them because lesion_start stays -1.
        img.true_label = truth;
        img.samples = PredictiveSamples(std::move(probs));
        rec.images.push_back(std::move(img));
    }
    return rec;
}

}  // namespace detail

inline std::pair<CohortDataset, GenerationManifest> generate(const GeneratorConfig& config,
                                                             int threads = 1) {
    validate(config);
    const int total = config.n_stroke_patients + config.n_tia_patients;

    GenerationManifest manifest;
    manifest.config = config;
    manifest.patient_seeds.reserve(static_cast<size_t>(total));

    CohortDataset ds;
    ds.patients.resize(static_cast<size_t>(total));
    std::vector<uint64_t> seeds(static_cast<size_t>(total));
    std::vector<std::string> ids(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) {
        const bool stroke = i < config.n_stroke_patients;
        ids[static_cast<size_t>(i)] =
            (stroke ? "stroke" : "tia") + std::string("_p") + std::to_string(i);
        seeds[static_cast<size_t>(i)] = mix_seed(config.seed, static_cast<uint64_t>(i));
    }

    parallel_for(total, threads, [&](int i) {
        const bool stroke = i < config.n_stroke_patients;
        ds.patients[static_cast<size_t>(i)] = detail::generate_patient(
            config, ids[static_cast<size_t>(i)],
            stroke ? PatientLabel::stroke : PatientLabel::tia, seeds[static_cast<size_t>(i)]);
    });

    manifest.patients_stroke = config.n_stroke_patients;
    manifest.patients_tia = config.n_tia_patients;
    for (int i = 0; i < total; ++i) {
        manifest.patient_seeds.emplace_back(ids[static_cast<size_t>(i)], seeds[static_cast<size_t>(i)]);
        for (const auto& img : ds.patients[static_cast<size_t>(i)].images) {
            ++manifest.images_total;
            if (img.true_label == ImageLabel::stroke) ++manifest.images_stroke;
        }
    }
    validate(ds);
    return {std::move(ds), std::move(manifest)};
}

enum class DegenerateKind { all_confident_correct, all_uniform, single_patient };

// Tiny fixtures with analytically known measure values on every image.
inline CohortDataset degenerate_cohort(DegenerateKind kind) {
    constexpr int kRuns = 10;
    constexpr int kImages = 8;
    const auto make_patient = [&](const std::string& id, PatientLabel label,
                                  DegenerateKind k) {
        PatientRecord rec;
        rec.patient_id = id;
        rec.patient_label = label;
        for (int i = 0; i < kImages; ++i) {
            const bool lesion =
                label == PatientLabel::stroke && k != DegenerateKind::all_uniform && i >= 3 && i < 6;
            double p;
            if (k == DegenerateKind::all_uniform) {
                p = 0.5;
            } else {
                p = lesion ? 0.999 : 0.001;
            }
            ImageRecord img;
            img.image_id = id + "_img" + std::to_string(i);
            img.slice_index = i;
            img.true_label = lesion ? ImageLabel::stroke : ImageLabel::no_stroke;
            img.samples = PredictiveSamples(std::vector<double>(kRuns, p));
            rec.images.push_back(std::move(img));
        }
        return rec;
    };

    CohortDataset ds;
    switch (kind) {
        case DegenerateKind::single_patient:
            ds.patients.push_back(make_patient("solo_p0", PatientLabel::stroke,
                                               DegenerateKind::all_confident_correct));
            break;
        case DegenerateKind::all_confident_correct:
        case DegenerateKind::all_uniform:
            ds.patients.push_back(make_patient("stroke_p0", PatientLabel::stroke, kind));
            ds.patients.push_back(make_patient("stroke_p1", PatientLabel::stroke, kind));
            ds.patients.push_back(make_patient("tia_p0", PatientLabel::tia, kind));
            ds.patients.push_back(make_patient("tia_p1", PatientLabel::tia, kind));
            break;
    }
    validate(ds);
    return ds;
}

inline nlohmann::json manifest_to_json(const GenerationManifest& m) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& [id, seed] : m.patient_seeds) {
        seeds.push_back({{"patient_id", id}, {"seed", seed}});
    }
    return nlohmann::json{
        {"config",
         {{"n_stroke_patients", m.config.n_stroke_patients},
          {"n_tia_patients", m.config.n_tia_patients},
          {"images_min", m.config.images_min},
          {"images_max", m.config.images_max},
          {"images_mean", m.config.images_mean},
          {"stroke_images_mean", m.config.stroke_images_mean},
          {"mc_runs", m.config.mc_runs},
          {"concentration", m.config.concentration},
          {"difficulty_mix", m.config.difficulty_mix},
          {"label_noise", m.config.label_noise},
          {"seed", m.config.seed}}},
        {"realized",
         {{"patients_stroke", m.patients_stroke},
          {"patients_tia", m.patients_tia},
          {"images_total", m.images_total},
          {"images_stroke", m.images_stroke}}},
        {"patient_seeds", std::move(seeds)}};
}

}  // namespace strokeuq::synth
