#pragma once

// Patient-level diagnosis from per-image predictive summaries.
//
// Methods:
//  - max:       stroke probability = maximum image-level mean stroke
//               probability; no patient-level uncertainty (reported absent)
//  - fcnn_*:    fully connected nets over the five images with the highest
//               mean stroke probabilities, one parallel weight-shared pathway
//               per image when uncertainty inputs are attached
//  - cnn1d_*:   1-D convolution over all images in slice order, channels are
//               the per-image features, global max pooling absorbs the
//               variable image count
//
// Input feature sets: P alone; P with (VR, PE, MI, Var); P with (Epi, Alea);
// or the 100 stroke-class histogram bins. Patient-level uncertainty comes
// from running the trained net under MC dropout and summarizing the sampled
// outputs exactly like an image's predictive distribution.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "strokeuq/adam.hpp"
#include "strokeuq/cohort.hpp"
#include "strokeuq/errors.hpp"
#include "strokeuq/measures.hpp"
#include "strokeuq/nn.hpp"
#include "strokeuq/rng.hpp"

namespace strokeuq::agg {

inline constexpr int kTopImages = 5;
inline constexpr int kDefaultPatientMcRuns = 500;
inline constexpr int kMinSequenceLength = 3;  // 1D kernel length

enum class Variant {
    max,
    fcnn_p,
    fcnn_p_meas,      // P + VR, PE, MI, Var
    fcnn_p_epi_alea,  // P + Epi, Alea
    fcnn_hist,
    cnn1d_p,
    cnn1d_p_meas,
    cnn1d_p_epi_alea,
    cnn1d_hist,
};

inline constexpr std::array<Variant, 9> kAllVariants = {
    Variant::max,     Variant::fcnn_p,  Variant::fcnn_p_meas,
    Variant::fcnn_p_epi_alea, Variant::fcnn_hist,
    Variant::cnn1d_p, Variant::cnn1d_p_meas, Variant::cnn1d_p_epi_alea,
    Variant::cnn1d_hist};

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::max: return "max";
        case Variant::fcnn_p: return "fcnn_p";
        case Variant::fcnn_p_meas: return "fcnn_p_meas";
        case Variant::fcnn_p_epi_alea: return "fcnn_p_epi_alea";
        case Variant::fcnn_hist: return "fcnn_hist";
        case Variant::cnn1d_p: return "cnn1d_p";
        case Variant::cnn1d_p_meas: return "cnn1d_p_meas";
        case Variant::cnn1d_p_epi_alea: return "cnn1d_p_epi_alea";
        case Variant::cnn1d_hist: return "cnn1d_hist";
    }
    throw ValidationError("unknown variant");
}

inline Variant variant_from_string(std::string_view s) {
    for (Variant v : kAllVariants) {
        if (to_string(v) == s) return v;
    }
    throw ValidationError("unknown variant: " + std::string(s));
}

inline bool is_fcnn(Variant v) {
    return v == Variant::fcnn_p || v == Variant::fcnn_p_meas || v == Variant::fcnn_p_epi_alea ||
           v == Variant::fcnn_hist;
}

inline bool is_cnn1d(Variant v) {
    return v == Variant::cnn1d_p || v == Variant::cnn1d_p_meas ||
           v == Variant::cnn1d_p_epi_alea || v == Variant::cnn1d_hist;
}

// Per-image feature width (pathway input width / sequence channel count).
inline int feature_width(Variant v) {
    switch (v) {
        case Variant::fcnn_p:
        case Variant::cnn1d_p: return 1;
        case Variant::fcnn_p_meas:
        case Variant::cnn1d_p_meas: return 5;
        case Variant::fcnn_p_epi_alea:
        case Variant::cnn1d_p_epi_alea: return 3;
        case Variant::fcnn_hist:
        case Variant::cnn1d_hist: return measures::kHistogramBins;
        case Variant::max: break;
    }
    throw ValidationError("variant has no feature width");
}

// Indices of the five images with the highest mean stroke probabilities,
// descending; ties prefer the lower slice index. Summaries are index-aligned
// with patient.images.
inline std::vector<int> select_top5(const PatientRecord& patient,
                                    std::span<const measures::UncertaintySummary> summaries) {
    if (summaries.size() != patient.images.size()) {
        throw ValidationError("select_top5: summaries not aligned with images");
    }
    if (patient.images.size() < static_cast<size_t>(kTopImages)) {
        throw ValidationError("select_top5: patient " + patient.patient_id + " has only " +
                              std::to_string(patient.images.size()) + " images, need " +
                              std::to_string(kTopImages));
    }
    std::vector<int> idx(patient.images.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double pa = summaries[static_cast<size_t>(a)].mean_prob.stroke;
        const double pb = summaries[static_cast<size_t>(b)].mean_prob.stroke;
        if (pa != pb) return pa > pb;
        return patient.images[static_cast<size_t>(a)].slice_index <
               patient.images[static_cast<size_t>(b)].slice_index;
    });
    idx.resize(kTopImages);
    return idx;
}

namespace detail {

inline void fill_features(const measures::UncertaintySummary& u, Variant v, double* row) {
    switch (v) {
        case Variant::fcnn_p:
        case Variant::cnn1d_p:
            row[0] = u.mean_prob.stroke;
            return;
        case Variant::fcnn_p_meas:
        case Variant::cnn1d_p_meas:
            row[0] = u.mean_prob.stroke;
            row[1] = u.vr;
            row[2] = u.pe;
            row[3] = u.mi;
            row[4] = u.var;
            return;
        case Variant::fcnn_p_epi_alea:
        case Variant::cnn1d_p_epi_alea:
            row[0] = u.mean_prob.stroke;
            row[1] = u.epi;
            row[2] = u.alea;
            return;
        case Variant::fcnn_hist:
        case Variant::cnn1d_hist:
            for (int b = 0; b < measures::kHistogramBins; ++b) row[b] = u.hist.stroke[static_cast<size_t>(b)];
            return;
        case Variant::max: break;
    }
    throw ValidationError("variant has no features");
}

}  // namespace detail

// fcnn variants: 5 x width matrix, one row per selected image (descending
// mean stroke probability). cnn1d variants: n x width matrix over all images
// in slice order.
inline nn::Mat build_features(const PatientRecord& patient,
                              std::span<const measures::UncertaintySummary> summaries,
                              Variant variant) {
    if (summaries.size() != patient.images.size()) {
        throw ValidationError("build_features: summaries not aligned with images");
    }
    const int width = feature_width(variant);
    if (is_fcnn(variant)) {
        const auto top = select_top5(patient, summaries);
        if (variant == Variant::fcnn_p) {
            // Single chain over the five probabilities.
            nn::Mat f(1, kTopImages);
            for (int r = 0; r < kTopImages; ++r) {
                f.at(0, r) =
                    summaries[static_cast<size_t>(top[static_cast<size_t>(r)])].mean_prob.stroke;
            }
            return f;
        }
        nn::Mat f(kTopImages, width);
        for (int r = 0; r < kTopImages; ++r) {
            detail::fill_features(summaries[static_cast<size_t>(top[static_cast<size_t>(r)])],
                                  variant, &f.at(r, 0));
        }
        return f;
    }
    const int n = static_cast<int>(patient.images.size());
    if (n < kMinSequenceLength) {
        throw ValidationError("build_features: patient " + patient.patient_id +
                              " sequence shorter than " + std::to_string(kMinSequenceLength));
    }
    nn::Mat f(n, width);
    for (int r = 0; r < n; ++r) {
        detail::fill_features(summaries[static_cast<size_t>(r)], variant, &f.at(r, 0));
    }
    return f;
}

struct PatientPrediction {
    measures::MeanProb mean_prob;
    std::optional<measures::UncertaintySummary> summary;  // absent for the Maximum method
    PatientLabel predicted_label = PatientLabel::tia;
};

// Baseline: patient stroke probability is the max image-level mean stroke
// probability; stroke iff it strictly exceeds 0.5. No patient-level
// uncertainty exists for this method.
inline PatientPrediction maximum_method(const PatientRecord& patient,
                                        std::span<const measures::UncertaintySummary> summaries) {
    if (summaries.size() != patient.images.size() || summaries.empty()) {
        throw ValidationError("maximum_method: summaries not aligned with images");
    }
    double m = summaries[0].mean_prob.stroke;
    for (const auto& u : summaries) m = std::max(m, u.mean_prob.stroke);
    PatientPrediction pred;
    pred.mean_prob = {1.0 - m, m};
    pred.predicted_label = m > measures::kClassThreshold ? PatientLabel::stroke : PatientLabel::tia;
    return pred;
}

// Architectures, per variant:
//  fcnn_p            dense(8)+relu+dropout(.3) x3, dense(2)+softmax, input 5
//  fcnn parallel     5 shared pathways of dense(8)+relu+dropout x3 over the
//                    per-image features, concat, dense(8)+dropout, dense(2)+
//                    softmax; rate .4 for measure inputs, .5 for histograms
//  cnn1d_*           conv1d(16,k=3)+relu+dropout+global max pool, dense(2)+
//                    softmax; rate .4 (.5 for histogram channels)
inline nn::NetworkGraph build_model(Variant variant) {
    if (variant == Variant::max) {
        throw ValidationError("build_model: the Maximum method has no network");
    }
    nn::NetworkGraph g;
    if (is_fcnn(variant)) {
        const bool parallel = variant != Variant::fcnn_p;
        const double rate = variant == Variant::fcnn_p ? 0.3
                            : variant == Variant::fcnn_hist ? 0.5
                                                            : 0.4;
        g.input_kind = nn::InputKind::vector_per_pathway;
        if (!parallel) {
            // All five probabilities feed one chain.
            g.input_width = kTopImages;
            g.pathway_count = 1;
        } else {
            g.input_width = feature_width(variant);
            g.pathway_count = kTopImages;
            g.shared_pathway_weights = true;
        }
        for (int i = 0; i < 3; ++i) {
            g.pathway_layers.push_back(nn::LayerSpec::dense(8));
            g.pathway_layers.push_back(nn::LayerSpec::relu());
            g.pathway_layers.push_back(nn::LayerSpec::dropout(rate));
        }
        if (parallel) {
            g.head_layers.push_back(nn::LayerSpec::concat());
            g.head_layers.push_back(nn::LayerSpec::dense(8));
            g.head_layers.push_back(nn::LayerSpec::dropout(rate));
        }
        g.head_layers.push_back(nn::LayerSpec::dense(2));
        g.head_layers.push_back(nn::LayerSpec::softmax());
    } else {
        const double rate = variant == Variant::cnn1d_hist ? 0.5 : 0.4;
        g.input_kind = nn::InputKind::sequence;
        g.input_width = feature_width(variant);
        g.pathway_count = 1;
        g.pathway_layers.push_back(nn::LayerSpec::conv1d(16, kMinSequenceLength));
        g.pathway_layers.push_back(nn::LayerSpec::relu());
        g.pathway_layers.push_back(nn::LayerSpec::dropout(rate));
        g.pathway_layers.push_back(nn::LayerSpec::global_max_pool());
        g.head_layers.push_back(nn::LayerSpec::dense(2));
        g.head_layers.push_back(nn::LayerSpec::softmax());
    }
    nn::validate_graph(g);
    return g;
}

struct TrainConfig {
    int epochs = 200;
    int batch_size = 2;
    double lr = 0.001;
    uint64_t seed = 42;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double valid_loss = 0.0;
    double valid_accuracy = 0.0;
};

struct TrainResult {
    nn::ParameterStore params;  // snapshot from the best validation epoch
    std::vector<EpochLog> log;
    int best_epoch = 0;  // 0 when no epochs ran or validation was empty
};

using LabeledFeatures = std::vector<std::pair<nn::Mat, int>>;  // features, label (1 = stroke)

namespace detail {

struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline EvalStats evaluate(const nn::NetworkGraph& net, const nn::ParameterStore& params,
                          const LabeledFeatures& data) {
    EvalStats s;
    if (data.empty()) return s;
    long correct = 0;
    for (const auto& [features, label] : data) {
        const auto probs = nn::forward(net, params, features, nn::Mode::deterministic);
        s.loss += nn::cross_entropy_loss(probs, label);
        const int pred = probs.stroke > measures::kClassThreshold ? 1 : 0;
        correct += (pred == label) ? 1 : 0;
    }
    s.loss /= static_cast<double>(data.size());
    s.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return s;
}

}  // namespace detail

// Mini-batch Adam training with per-epoch seeded shuffling. Batches are
// processed sample by sample with gradient accumulation (sequence lengths
// differ), one Adam step per batch. Early stopping is retrospective: the
// returned parameters are the snapshot of the epoch with minimal validation
// loss (earliest on ties). An empty validation set keeps the final epoch.
inline TrainResult train_aggregator(const nn::NetworkGraph& net, const LabeledFeatures& train,
                                    const LabeledFeatures& valid, const TrainConfig& config) {
    if (train.empty()) throw ValidationError("train_aggregator: empty training set");
    if (config.epochs < 0) throw ValidationError("train_aggregator: negative epoch count");
    if (config.batch_size < 1) throw ValidationError("train_aggregator: batch size must be >= 1");
    if (!(config.lr > 0.0)) throw ValidationError("train_aggregator: learning rate must be > 0");

    Rng rng(config.seed);
    nn::ParameterStore params = nn::init_params(net, rng);
    nn::AdamConfig adam_config;
    adam_config.lr = config.lr;
    nn::AdamState adam = nn::AdamState::init(params, adam_config);

    TrainResult result;
    result.params = params;
    double best_valid_loss = 0.0;
    bool have_best = false;

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        long correct = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            params.zero_grads();
            for (size_t k = start; k < end; ++k) {
                const auto& [features, label] = train[order[k]];
                nn::ForwardCache cache;
                const auto probs = nn::forward(net, params, features, nn::Mode::train, &rng, &cache);
                loss_sum += nn::cross_entropy_loss(probs, label);
                const int pred = probs.stroke > measures::kClassThreshold ? 1 : 0;
                correct += (pred == label) ? 1 : 0;
                nn::backward(net, params, cache, label, inv_batch);
            }
            nn::adam_step(adam, params);
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(train.size());
        entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        const auto v = detail::evaluate(net, params, valid);
        entry.valid_loss = v.loss;
        entry.valid_accuracy = v.accuracy;
        result.log.push_back(entry);

        if (valid.empty()) {
            result.params = params;  // keep the final epoch
            result.best_epoch = epoch;
        } else if (!have_best || v.loss < best_valid_loss) {
            have_best = true;
            best_valid_loss = v.loss;
            result.params = params;
            result.best_epoch = epoch;
        }
    }
    return result;
}

// Patient-level MC dropout: run the trained net T times with dropout active,
// treat the sampled stroke probabilities as a predictive distribution and
// summarize it exactly like an image-level one.
inline PatientPrediction predict_patient(const nn::NetworkGraph& net,
                                         const nn::ParameterStore& params, const nn::Mat& features,
                                         int mc_runs = kDefaultPatientMcRuns, uint64_t seed = 42) {
    if (mc_runs < 1) throw ValidationError("predict_patient: mc_runs must be >= 1");
    Rng rng(seed);
    std::vector<double> stroke_probs;
    stroke_probs.reserve(static_cast<size_t>(mc_runs));
    for (int t = 0; t < mc_runs; ++t) {
        const auto probs = nn::forward(net, params, features, nn::Mode::mc_inference, &rng);
        stroke_probs.push_back(std::clamp(probs.stroke, 0.0, 1.0));
    }
    const PredictiveSamples samples(std::move(stroke_probs));
    PatientPrediction pred;
    pred.summary = measures::summarize(samples);
    pred.mean_prob = pred.summary->mean_prob;
    pred.predicted_label = pred.summary->predicted_class == ImageLabel::stroke
                               ? PatientLabel::stroke
                               : PatientLabel::tia;
    return pred;
}

}  // namespace strokeuq::agg
