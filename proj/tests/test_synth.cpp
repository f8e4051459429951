// Synthetic cohort generator: determinism, shape statistics, difficulty and
// concentration knobs, degenerate fixtures.

#include <doctest.h>

#include <cmath>
#include <set>

#include "strokeuq/cohort_io.hpp"
#include "strokeuq/measures.hpp"
#include "strokeuq/metrics.hpp"
#include "strokeuq/synth.hpp"

using namespace strokeuq;
using namespace strokeuq::synth;

namespace {

GeneratorConfig desk_config(uint64_t seed) {
    GeneratorConfig c;
    c.n_stroke_patients = 14;
    c.n_tia_patients = 6;
    c.mc_runs = 25;
    c.seed = seed;
    return c;
}

struct ImageStats {
    std::vector<double> uncertainty_pe;
    std::vector<int> correct;
    std::vector<double> vars;
};

ImageStats image_stats(const CohortDataset& ds) {
    ImageStats st;
    for (const auto& p : ds.patients) {
        for (const auto& img : p.images) {
            const auto u = measures::summarize(img.samples);
            st.uncertainty_pe.push_back(u.pe);
            st.correct.push_back(u.predicted_class == img.true_label ? 1 : 0);
            st.vars.push_back(u.var);
        }
    }
    return st;
}

}  // namespace

TEST_CASE("generate: same seed, byte-identical CSV; patient substreams commute") {
    const auto cfg = desk_config(7);
    const auto [a, ma] = generate(cfg);
    const auto [b, mb] = generate(cfg);
    CHECK(serialize_samples_csv(a) == serialize_samples_csv(b));
    const auto [c, mc] = generate(cfg, /*threads=*/2);
    CHECK(serialize_samples_csv(a) == serialize_samples_csv(c));
    CHECK(ma.patient_seeds == mc.patient_seeds);
}

TEST_CASE("generate: datasets satisfy the cohort invariants and the manifest counts") {
    const auto [ds, manifest] = generate(desk_config(11));
    validate(ds);  // throws on violation
    CHECK(manifest.patients_stroke == 14);
    CHECK(manifest.patients_tia == 6);
    CHECK(manifest.images_total == static_cast<long>(ds.total_images()));
    long strokes = 0;
    for (const auto& p : ds.patients) {
        CHECK(p.images.size() >= 21);
        CHECK(p.images.size() <= 46);
        bool in_run = false;
        bool run_done = false;
        for (const auto& img : p.images) {
            if (img.true_label == ImageLabel::stroke) {
                ++strokes;
                CHECK_FALSE(run_done);  // contiguity: one lesion run only
                in_run = true;
            } else if (in_run) {
                run_done = true;
                in_run = false;
            }
        }
        if (p.patient_label == PatientLabel::tia) {
            for (const auto& img : p.images) CHECK(img.true_label == ImageLabel::no_stroke);
        } else {
            bool any = false;
            for (const auto& img : p.images) any = any || img.true_label == ImageLabel::stroke;
            CHECK(any);
        }
    }
    CHECK(manifest.images_stroke == strokes);
    CHECK(manifest.patient_seeds.size() == 20);
}

TEST_CASE("generate: easy, low-noise, sharp cohorts are almost perfectly classified") {
    auto cfg = desk_config(13);
    cfg.difficulty_mix = 0.0;
    cfg.label_noise = 0.0;
    cfg.concentration = 400.0;
    const auto [ds, manifest] = generate(cfg);
    const auto st = image_stats(ds);
    long ok = 0;
    for (int c : st.correct) ok += c;
    CHECK(static_cast<double>(ok) / static_cast<double>(st.correct.size()) >= 0.99);
}

TEST_CASE("generate: error-uncertainty AUC margin grows with difficulty_mix") {
    // A fixed share of confident wrong predictions (label noise) anchors the
    // AUC; raising the hard-image share shifts the error mass toward
    // high-uncertainty images and the margin over 0.5 must grow.
    double prev_auc = 0.5;
    for (double mix : {0.05, 0.2, 0.45}) {
        auto cfg = desk_config(17);
        cfg.n_stroke_patients = 30;
        cfg.n_tia_patients = 14;
        cfg.difficulty_mix = mix;
        cfg.label_noise = 0.1;
        const auto [ds, manifest] = generate(cfg);
        const auto st = image_stats(ds);
        std::vector<int> errors;
        for (int c : st.correct) errors.push_back(c == 0 ? 1 : 0);
        const double auc = metrics::roc_auc(st.uncertainty_pe, errors).auc;
        CHECK(auc > prev_auc);
        prev_auc = auc;
    }
    CHECK(prev_auc > 0.7);
}

TEST_CASE("generate: higher concentration shrinks the mean MC variance") {
    auto lo = desk_config(19);
    lo.concentration = 15.0;
    auto hi = desk_config(19);
    hi.concentration = 150.0;
    const auto [ds_lo, m_lo] = generate(lo);
    const auto [ds_hi, m_hi] = generate(hi);
    const auto mean_var = [](const CohortDataset& ds) {
        double acc = 0.0;
        long n = 0;
        for (const auto& p : ds.patients) {
            for (const auto& img : p.images) {
                acc += measures::summarize(img.samples).var;
                ++n;
            }
        }
        return acc / static_cast<double>(n);
    };
    CHECK(mean_var(ds_hi) < mean_var(ds_lo));
}

TEST_CASE("generate: default-config realized totals match the target cohort shape") {
    // Image counts are drawn before any per-run sampling, so the realized
    // totals are identical for any mc_runs; 1 keeps the test light.
    synth::GeneratorConfig cfg;
    cfg.mc_runs = 1;
    const auto [ds, manifest] = generate(cfg);
    CHECK(manifest.patients_stroke == 355);
    CHECK(manifest.patients_tia == 156);
    CHECK(manifest.images_total >= static_cast<long>(15188 * 0.9));
    CHECK(manifest.images_total <= static_cast<long>(15188 * 1.1));
}

TEST_CASE("generate: config validation") {
    auto cfg = desk_config(1);
    SUBCASE("difficulty_mix domain") {
        cfg.difficulty_mix = 1.0;
        CHECK_THROWS_AS(generate(cfg), ValidationError);
    }
    SUBCASE("label_noise domain") {
        cfg.label_noise = 0.5;
        CHECK_THROWS_AS(generate(cfg), ValidationError);
    }
    SUBCASE("stroke images must fit the smallest patient") {
        cfg.stroke_images_mean = 50.0;
        CHECK_THROWS_AS(generate(cfg), ValidationError);
    }
    SUBCASE("concentration positive") {
        cfg.concentration = 0.0;
        CHECK_THROWS_AS(generate(cfg), ValidationError);
    }
}

TEST_CASE("degenerate cohorts have the advertised analytic values") {
    SUBCASE("all_uniform: PE = ln 2 and Var = 0 on every image") {
        const auto ds = degenerate_cohort(DegenerateKind::all_uniform);
        for (const auto& p : ds.patients) {
            for (const auto& img : p.images) {
                const auto u = measures::summarize(img.samples);
                CHECK(u.pe == doctest::Approx(std::log(2.0)).epsilon(1e-15));
                CHECK(u.var == 0.0);
            }
        }
    }
    SUBCASE("all_confident_correct: removal curve flat at 1.0") {
        const auto ds = degenerate_cohort(DegenerateKind::all_confident_correct);
        std::vector<double> unc;
        std::vector<int> ok;
        for (const auto& p : ds.patients) {
            for (const auto& img : p.images) {
                const auto u = measures::summarize(img.samples);
                unc.push_back(u.pe);
                ok.push_back(u.predicted_class == img.true_label ? 1 : 0);
            }
        }
        const auto curve = metrics::removal_curve(unc, ok);
        for (const auto& [f, acc] : curve.points) CHECK(acc == 1.0);
    }
    SUBCASE("single_patient: exactly one patient") {
        CHECK(degenerate_cohort(DegenerateKind::single_patient).patients.size() == 1);
    }
}
