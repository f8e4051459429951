#pragma once

// Per-image summaries of the MC dropout predictive distribution: mean class
// probabilities, variance across runs, variation ratio, predictive entropy,
// mutual information, the epistemic/aleatoric split, and 100-bin histograms
// of the per-run probabilities.
//
// Conventions, fixed once for the whole artifact:
//  - natural logarithm everywhere; the binary entropy maximum is ln 2
//  - 0 * ln 0 := 0
//  - the per-run class is stroke iff p_stroke strictly exceeds 0.5
//  - mutual information in [-1e-12, 0) is clamped to 0 (fp cancellation)
//
// Means are computed relative to the first run's value, so constant sample
// matrices produce exactly zero variance and mutual information.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "strokeuq/cohort.hpp"

namespace strokeuq::measures {

inline constexpr int kHistogramBins = 100;
inline constexpr double kClassThreshold = 0.5;
inline constexpr double kMiClampEpsilon = 1e-12;

struct MeanProb {
    double no_stroke = 0.0;
    double stroke = 0.0;

    bool operator==(const MeanProb&) const = default;
};

using HistogramBins = std::array<double, kHistogramBins>;

struct ClassHistograms {
    HistogramBins no_stroke{};
    HistogramBins stroke{};

    bool operator==(const ClassHistograms&) const = default;
};

struct UncertaintySummary {
    MeanProb mean_prob;
    double var = 0.0;   // MC dropout variance, class-averaged, population form
    double vr = 0.0;    // variation ratio
    double pe = 0.0;    // predictive entropy, nats
    double mi = 0.0;    // mutual information, nats
    double epi = 0.0;   // epistemic uncertainty == var
    double alea = 0.0;  // aleatoric uncertainty
    ClassHistograms hist;
    ImageLabel predicted_class = ImageLabel::no_stroke;

    bool operator==(const UncertaintySummary&) const = default;
};

namespace detail {

// Mean relative to the first element; exact for constant input.
template <class GetT>
double shifted_mean(int n, GetT&& get) {
    const double base = get(0);
    double acc = 0.0;
    for (int t = 0; t < n; ++t) acc += get(t) - base;
    return base + acc / n;
}

inline double xlnx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

inline double entropy2(double p0, double p1) { return -(xlnx(p0) + xlnx(p1)); }

inline int bin_of(double p) {
    const int b = static_cast<int>(p * kHistogramBins);
    return b >= kHistogramBins ? kHistogramBins - 1 : b;  // final bin closed at 1.0
}

}  // namespace detail

inline MeanProb mean_probability(const PredictiveSamples& s) {
    const int t_count = s.runs();
    MeanProb m;
    m.stroke = detail::shifted_mean(t_count, [&](int t) { return s.stroke(t); });
    m.no_stroke = detail::shifted_mean(t_count, [&](int t) { return s.no_stroke(t); });
    return m;
}

// Eq-style population variance (divide by T), averaged over the two classes.
inline double mc_variance(const PredictiveSamples& s) {
    const int t_count = s.runs();
    const MeanProb m = mean_probability(s);
    double acc1 = 0.0;
    double acc0 = 0.0;
    for (int t = 0; t < t_count; ++t) {
        const double d1 = s.stroke(t) - m.stroke;
        const double d0 = s.no_stroke(t) - m.no_stroke;
        acc1 += d1 * d1;
        acc0 += d0 * d0;
    }
    return 0.5 * (acc0 / t_count + acc1 / t_count);
}

// 1 - n_m / T where m is the most frequent per-run class. A frequency tie
// makes no numeric difference here, but the mode is defined as no-stroke.
inline double variation_ratio(const PredictiveSamples& s, double threshold = kClassThreshold) {
    const int t_count = s.runs();
    int n_stroke = 0;
    for (int t = 0; t < t_count; ++t) {
        if (s.stroke(t) > threshold) ++n_stroke;
    }
    const int n_mode = std::max(t_count - n_stroke, n_stroke);
    return 1.0 - static_cast<double>(n_mode) / t_count;
}

inline double predictive_entropy(const MeanProb& m) {
    return detail::entropy2(m.no_stroke, m.stroke);
}

inline double mutual_information(const PredictiveSamples& s) {
    const int t_count = s.runs();
    const double pe = predictive_entropy(mean_probability(s));
    const double mean_run_entropy = detail::shifted_mean(
        t_count, [&](int t) { return detail::entropy2(s.no_stroke(t), s.stroke(t)); });
    double mi = pe - mean_run_entropy;
    if (mi < 0.0 && mi >= -kMiClampEpsilon) mi = 0.0;
    return mi;
}

inline double epistemic(const PredictiveSamples& s) { return mc_variance(s); }

// Mean per-run Bernoulli variance of the stroke probability.
inline double aleatoric(const PredictiveSamples& s) {
    const int t_count = s.runs();
    double acc = 0.0;
    for (int t = 0; t < t_count; ++t) {
        const double p = s.stroke(t);
        acc += p * (1.0 - p);
    }
    return acc / t_count;
}

// Bin j (1-based) covers [(j-1)/100, j/100); the last bin is closed at 1.
inline ClassHistograms histogram_counts(const PredictiveSamples& s) {
    const int t_count = s.runs();
    std::array<int, kHistogramBins> c0{};
    std::array<int, kHistogramBins> c1{};
    for (int t = 0; t < t_count; ++t) {
        ++c1[static_cast<size_t>(detail::bin_of(s.stroke(t)))];
        ++c0[static_cast<size_t>(detail::bin_of(s.no_stroke(t)))];
    }
    ClassHistograms h;
    for (int j = 0; j < kHistogramBins; ++j) {
        h.no_stroke[static_cast<size_t>(j)] = static_cast<double>(c0[static_cast<size_t>(j)]) / t_count;
        h.stroke[static_cast<size_t>(j)] = static_cast<double>(c1[static_cast<size_t>(j)]) / t_count;
    }
    return h;
}

inline UncertaintySummary summarize(const PredictiveSamples& s) {
    UncertaintySummary u;
    u.mean_prob = mean_probability(s);
    u.var = mc_variance(s);
    u.vr = variation_ratio(s);
    u.pe = predictive_entropy(u.mean_prob);
    u.mi = mutual_information(s);
    u.epi = u.var;
    u.alea = aleatoric(s);
    u.hist = histogram_counts(s);
    u.predicted_class =
        u.mean_prob.stroke > kClassThreshold ? ImageLabel::stroke : ImageLabel::no_stroke;
    return u;
}

// The six uncertainty measures by name, in the order reports use.
inline constexpr std::array<std::string_view, 6> kMeasureNames = {"var", "vr",  "pe",
                                                                  "mi",  "epi", "alea"};

inline double measure_value(const UncertaintySummary& u, std::string_view name) {
    if (name == "var") return u.var;
    if (name == "vr") return u.vr;
    if (name == "pe") return u.pe;
    if (name == "mi") return u.mi;
    if (name == "epi") return u.epi;
    if (name == "alea") return u.alea;
    throw ValidationError("unknown uncertainty measure: " + std::string(name));
}

}  // namespace strokeuq::measures
