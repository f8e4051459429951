#pragma once

// Minimal neural network engine for the aggregation models: dense and 1-D
// convolution layers, ReLU, inverted dropout, global max pooling and a
// softmax head, with reverse-mode gradients of the binary cross-entropy
// loss. Graphs are either a single chain or several parallel pathways with
// shared weights whose outputs are concatenated before the head.
//
// Everything is 64-bit; the networks are tiny and reproducibility matters
// more than speed. Training mode and MC-inference mode sample dropout masks
// from a caller-supplied Rng; deterministic mode is a pure function of
// (parameters, input). Inverted dropout scales by 1/keep at mask time, so
// deterministic inference needs no rescale.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "strokeuq/errors.hpp"
#include "strokeuq/rng.hpp"

namespace strokeuq::nn {

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    bool empty() const { return data.empty(); }

    bool operator==(const Mat&) const = default;
};

enum class LayerKind { dense, conv1d, relu, dropout, global_max_pool, softmax, concat };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int units = 0;      // dense
    int filters = 0;    // conv1d
    int kernel = 0;     // conv1d; odd, >= 1
    double rate = 0.0;  // dropout; in [0, 1)

    static LayerSpec dense(int units) { return {LayerKind::dense, units, 0, 0, 0.0}; }
    static LayerSpec conv1d(int filters, int kernel) { return {LayerKind::conv1d, 0, filters, kernel, 0.0}; }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 0.0}; }
    static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, 0, 0, rate}; }
    static LayerSpec global_max_pool() { return {LayerKind::global_max_pool, 0, 0, 0, 0.0}; }
    static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 0, 0.0}; }
    static LayerSpec concat() { return {LayerKind::concat, 0, 0, 0, 0.0}; }

    bool operator==(const LayerSpec&) const = default;
};

enum class InputKind { vector_per_pathway, sequence };

struct NetworkGraph {
    InputKind input_kind = InputKind::vector_per_pathway;
    int input_width = 0;   // features per pathway row, or channels per sequence step
    int pathway_count = 1;
    bool shared_pathway_weights = true;
    std::vector<LayerSpec> pathway_layers;
    std::vector<LayerSpec> head_layers;  // starts with concat iff pathway_count > 1

    bool operator==(const NetworkGraph&) const = default;
};

// Copy of the graph with every dropout rate replaced; used to switch MC
// sampling off without touching parameters.
inline NetworkGraph with_dropout_rate(NetworkGraph net, double rate) {
    for (auto& l : net.pathway_layers) {
        if (l.kind == LayerKind::dropout) l.rate = rate;
    }
    for (auto& l : net.head_layers) {
        if (l.kind == LayerKind::dropout) l.rate = rate;
    }
    return net;
}

namespace detail {

struct Shape {
    int rows = 1;
    int cols = 0;
    bool rows_fixed = true;  // false while the sequence length is still free
};

inline Shape apply_shape(const Shape& in, const LayerSpec& l, const std::string& where) {
    switch (l.kind) {
        case LayerKind::dense:
            if (l.units < 1) throw ValidationError(where + ": dense needs units >= 1");
            if (!in.rows_fixed || in.rows != 1) {
                throw ValidationError(where + ": dense expects a single row input");
            }
            return {1, l.units, true};
        case LayerKind::conv1d:
            if (l.filters < 1) throw ValidationError(where + ": conv1d needs filters >= 1");
            if (l.kernel < 1 || l.kernel % 2 == 0) {
                throw ValidationError(where + ": conv1d kernel must be odd and >= 1");
            }
            if (in.rows_fixed && in.rows < l.kernel) {
                throw ValidationError(where + ": sequence shorter than kernel");
            }
            return {in.rows_fixed ? in.rows - l.kernel + 1 : in.rows, l.filters, in.rows_fixed};
        case LayerKind::relu:
        case LayerKind::dropout:
            if (l.kind == LayerKind::dropout && !(l.rate >= 0.0 && l.rate < 1.0)) {
                throw ValidationError(where + ": dropout rate must be in [0, 1)");
            }
            return in;
        case LayerKind::global_max_pool:
            return {1, in.cols, true};
        case LayerKind::softmax:
            if (!in.rows_fixed || in.rows != 1) {
                throw ValidationError(where + ": softmax expects a single row input");
            }
            return in;
        case LayerKind::concat:
            throw ValidationError(where + ": concat is only valid as the first head layer");
    }
    throw ValidationError(where + ": unknown layer kind");
}

}  // namespace detail

// Checks structure and shape flow; returns the head input width after concat.
inline void validate_graph(const NetworkGraph& net) {
    if (net.input_width < 1) throw ValidationError("graph: input_width must be >= 1");
    if (net.pathway_count < 1) throw ValidationError("graph: pathway_count must be >= 1");
    if (net.pathway_count > 1 && net.input_kind != InputKind::vector_per_pathway) {
        throw ValidationError("graph: parallel pathways require vector inputs");
    }
    if (net.head_layers.empty()) throw ValidationError("graph: head must end with softmax");

    detail::Shape s;
    if (net.input_kind == InputKind::vector_per_pathway) {
        s = {1, net.input_width, true};
    } else {
        s = {1, net.input_width, false};
    }
    for (size_t j = 0; j < net.pathway_layers.size(); ++j) {
        const auto& l = net.pathway_layers[j];
        if (l.kind == LayerKind::softmax) throw ValidationError("graph: softmax only in head");
        s = detail::apply_shape(s, l, "pathway layer " + std::to_string(j));
    }

    size_t head_start = 0;
    if (net.pathway_count > 1) {
        if (net.head_layers.front().kind != LayerKind::concat) {
            throw ValidationError("graph: parallel pathways need a concat node first in head");
        }
        if (!s.rows_fixed || s.rows != 1) {
            throw ValidationError("graph: pathway outputs must be single rows to concatenate");
        }
        s = {1, s.cols * net.pathway_count, true};
        head_start = 1;
    }
    for (size_t j = head_start; j < net.head_layers.size(); ++j) {
        const auto& l = net.head_layers[j];
        if (l.kind == LayerKind::concat) {
            throw ValidationError("graph: concat is only valid as the first head layer");
        }
        if (l.kind == LayerKind::softmax && j + 1 != net.head_layers.size()) {
            throw ValidationError("graph: softmax must be the final layer");
        }
        s = detail::apply_shape(s, l, "head layer " + std::to_string(j));
    }
    if (net.head_layers.back().kind != LayerKind::softmax) {
        throw ValidationError("graph: head must end with softmax");
    }
    if (s.cols != 2) throw ValidationError("graph: softmax output width must be 2");
}

// Named 64-bit parameter arrays with matching gradient arrays. Entry order is
// creation order, which both serialization and Adam rely on.
struct ParameterStore {
    struct Entry {
        std::string name;
        int rows = 0;
        int cols = 0;
        std::vector<double> value;
        std::vector<double> grad;
    };

    std::vector<Entry> entries;
    std::unordered_map<std::string, size_t> index;

    Entry& add(const std::string& name, int rows, int cols) {
        if (index.count(name) != 0) throw ValidationError("duplicate parameter name: " + name);
        index.emplace(name, entries.size());
        auto& e = entries.emplace_back();
        e.name = name;
        e.rows = rows;
        e.cols = cols;
        e.value.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0);
        e.grad.assign(e.value.size(), 0.0);
        return e;
    }

    Entry& get(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw ValidationError("unknown parameter: " + name);
        return entries[it->second];
    }

    const Entry& get(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ValidationError("unknown parameter: " + name);
        return entries[it->second];
    }

    void zero_grads() {
        for (auto& e : entries) std::fill(e.grad.begin(), e.grad.end(), 0.0);
    }

    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& e : entries) n += e.value.size();
        return n;
    }
};

namespace detail {

inline std::string scope_name(const NetworkGraph& net, int pathway) {
    if (pathway < 0) return "head";
    if (net.pathway_count > 1 && !net.shared_pathway_weights) {
        return "pw" + std::to_string(pathway);
    }
    return "pw";
}

inline std::string param_name(const std::string& scope, size_t layer, const char* which) {
    return scope + "." + std::to_string(layer) + "." + which;
}

// Glorot-uniform bound; conv fan counts use the receptive field convention.
inline double glorot_bound(int fan_in, int fan_out) {
    return std::sqrt(6.0 / (fan_in + fan_out));
}

inline void init_chain(const std::vector<LayerSpec>& layers, const std::string& scope, Shape s,
                       ParameterStore& store, Rng& rng) {
    for (size_t j = 0; j < layers.size(); ++j) {
        const auto& l = layers[j];
        if (l.kind == LayerKind::dense) {
            auto& w = store.add(param_name(scope, j, "W"), l.units, s.cols);
            const double b = glorot_bound(s.cols, l.units);
            for (auto& v : w.value) v = rng.uniform(-b, b);
            store.add(param_name(scope, j, "b"), l.units, 1);
        } else if (l.kind == LayerKind::conv1d) {
            auto& w = store.add(param_name(scope, j, "W"), l.filters, l.kernel * s.cols);
            const double b = glorot_bound(l.kernel * s.cols, l.kernel * l.filters);
            for (auto& v : w.value) v = rng.uniform(-b, b);
            store.add(param_name(scope, j, "b"), l.filters, 1);
        }
        if (l.kind != LayerKind::concat) s = apply_shape(s, l, scope);
    }
}

}  // namespace detail

// Fresh parameters for a validated graph: Glorot-uniform weights, zero biases.
inline ParameterStore init_params(const NetworkGraph& net, Rng& rng) {
    validate_graph(net);
    ParameterStore store;
    const detail::Shape in_shape{1, net.input_width, net.input_kind != InputKind::sequence};
    const int distinct_pathways =
        (net.pathway_count > 1 && !net.shared_pathway_weights) ? net.pathway_count : 1;
    for (int p = 0; p < distinct_pathways; ++p) {
        detail::init_chain(net.pathway_layers,
                           detail::scope_name(net, distinct_pathways > 1 ? p : 0), in_shape, store,
                           rng);
    }
    detail::Shape head_in{1, 0, true};
    {
        detail::Shape s = in_shape;
        for (const auto& l : net.pathway_layers) s = detail::apply_shape(s, l, "pathway");
        head_in = {1, s.cols * net.pathway_count, true};
    }
    std::vector<LayerSpec> head = net.head_layers;
    if (net.pathway_count > 1) head.erase(head.begin());  // concat marker holds no params
    detail::init_chain(head, "head", head_in, store, rng);
    return store;
}

enum class Mode { train, mc_inference, deterministic };

struct Probs {
    double no_stroke = 0.0;
    double stroke = 0.0;
};

struct LayerState {
    Mat input;
    Mat mask;                 // dropout layers in train/mc modes
    std::vector<int> argmax;  // global max pool, one row index per channel
};

struct ForwardCache {
    Mode mode = Mode::deterministic;
    Mat input;
    std::vector<std::vector<LayerState>> pathway_states;
    std::vector<Mat> pathway_outputs;
    std::vector<LayerState> head_states;
    Mat output;  // 1 x 2 probabilities
};

namespace detail {

inline Mat dense_forward(const Mat& x, const ParameterStore::Entry& w,
                         const ParameterStore::Entry& b) {
    if (x.rows != 1 || x.cols != w.cols) throw ValidationError("dense: shape mismatch");
    Mat y(1, w.rows);
    for (int o = 0; o < w.rows; ++o) {
        double acc = b.value[static_cast<size_t>(o)];
        const double* wr = &w.value[static_cast<size_t>(o) * w.cols];
        for (int i = 0; i < w.cols; ++i) acc += wr[i] * x.data[static_cast<size_t>(i)];
        y.at(0, o) = acc;
    }
    return y;
}

inline Mat conv1d_forward(const Mat& x, const LayerSpec& l, const ParameterStore::Entry& w,
                          const ParameterStore::Entry& b) {
    if (x.rows < l.kernel) throw ValidationError("conv1d: sequence shorter than kernel");
    if (w.cols != l.kernel * x.cols) throw ValidationError("conv1d: shape mismatch");
    const int out_rows = x.rows - l.kernel + 1;
    Mat y(out_rows, l.filters);
    for (int i = 0; i < out_rows; ++i) {
        for (int f = 0; f < l.filters; ++f) {
            double acc = b.value[static_cast<size_t>(f)];
            const double* wr = &w.value[static_cast<size_t>(f) * w.cols];
            for (int d = 0; d < l.kernel; ++d) {
                for (int c = 0; c < x.cols; ++c) {
                    acc += wr[d * x.cols + c] * x.at(i + d, c);
                }
            }
            y.at(i, f) = acc;
        }
    }
    return y;
}

inline Mat softmax_forward(const Mat& x) {
    Mat y(1, x.cols);
    double mx = x.at(0, 0);
    for (int c = 1; c < x.cols; ++c) mx = std::max(mx, x.at(0, c));
    double sum = 0.0;
    for (int c = 0; c < x.cols; ++c) {
        const double e = std::exp(x.at(0, c) - mx);
        y.at(0, c) = e;
        sum += e;
    }
    for (int c = 0; c < x.cols; ++c) y.at(0, c) /= sum;
    return y;
}

// Runs one chain of layers. `reuse` replays the dropout masks recorded in a
// previous cache instead of sampling; used by finite-difference checks.
inline Mat run_chain(const std::vector<LayerSpec>& layers, const std::string& scope,
                     const ParameterStore& params, Mat x, Mode mode, Rng* rng,
                     std::vector<LayerState>* states, const std::vector<LayerState>* reuse) {
    for (size_t j = 0; j < layers.size(); ++j) {
        const auto& l = layers[j];
        LayerState st;
        switch (l.kind) {
            case LayerKind::dense:
                st.input = x;
                x = dense_forward(x, params.get(param_name(scope, j, "W")),
                                  params.get(param_name(scope, j, "b")));
                break;
            case LayerKind::conv1d:
                st.input = x;
                x = conv1d_forward(x, l, params.get(param_name(scope, j, "W")),
                                   params.get(param_name(scope, j, "b")));
                break;
            case LayerKind::relu:
                st.input = x;
                for (auto& v : x.data) v = v > 0.0 ? v : 0.0;
                break;
            case LayerKind::dropout: {
                if (mode == Mode::deterministic) break;
                if (reuse != nullptr) {
                    st.mask = (*reuse)[j].mask;
                } else {
                    if (rng == nullptr) throw ValidationError("forward: stochastic mode needs an rng");
                    const double keep = 1.0 - l.rate;
                    st.mask = Mat(x.rows, x.cols);
                    for (auto& m : st.mask.data) m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
                }
                if (st.mask.rows != x.rows || st.mask.cols != x.cols) {
                    throw ValidationError("forward: reused dropout mask has wrong shape");
                }
                for (size_t i = 0; i < x.data.size(); ++i) x.data[i] *= st.mask.data[i];
                break;
            }
            case LayerKind::global_max_pool: {
                st.input = x;
                Mat y(1, x.cols);
                st.argmax.assign(static_cast<size_t>(x.cols), 0);
                for (int c = 0; c < x.cols; ++c) {
                    int best = 0;
                    for (int r = 1; r < x.rows; ++r) {
                        if (x.at(r, c) > x.at(best, c)) best = r;
                    }
                    st.argmax[static_cast<size_t>(c)] = best;
                    y.at(0, c) = x.at(best, c);
                }
                x = std::move(y);
                break;
            }
            case LayerKind::softmax:
                st.input = x;
                x = softmax_forward(x);
                break;
            case LayerKind::concat:
                throw ValidationError("forward: concat inside a chain");
        }
        if (states != nullptr) states->push_back(std::move(st));
    }
    return x;
}

inline Mat forward_impl(const NetworkGraph& net, const ParameterStore& params, const Mat& input,
                        Mode mode, Rng* rng, ForwardCache* cache, const ForwardCache* reuse) {
    if (net.input_kind == InputKind::vector_per_pathway) {
        if (input.rows != net.pathway_count || input.cols != net.input_width) {
            throw ValidationError("forward: input shape mismatch");
        }
    } else {
        if (input.cols != net.input_width || input.rows < 1) {
            throw ValidationError("forward: input shape mismatch");
        }
    }
    if (cache != nullptr) {
        cache->mode = mode;
        cache->input = input;
        cache->pathway_states.assign(static_cast<size_t>(net.pathway_count), {});
        cache->pathway_outputs.assign(static_cast<size_t>(net.pathway_count), {});
        cache->head_states.clear();
    }

    std::vector<Mat> outs;
    outs.reserve(static_cast<size_t>(net.pathway_count));
    for (int p = 0; p < net.pathway_count; ++p) {
        Mat x;
        if (net.input_kind == InputKind::vector_per_pathway) {
            x = Mat(1, net.input_width);
            for (int c = 0; c < net.input_width; ++c) x.at(0, c) = input.at(p, c);
        } else {
            x = input;
        }
        std::vector<LayerState>* states =
            cache != nullptr ? &cache->pathway_states[static_cast<size_t>(p)] : nullptr;
        const std::vector<LayerState>* replay =
            reuse != nullptr ? &reuse->pathway_states[static_cast<size_t>(p)] : nullptr;
        x = run_chain(net.pathway_layers, scope_name(net, p), params, std::move(x), mode, rng,
                      states, replay);
        outs.push_back(std::move(x));
    }

    Mat h;
    std::vector<LayerSpec> head = net.head_layers;
    if (net.pathway_count > 1) {
        head.erase(head.begin());
        int width = 0;
        for (const auto& o : outs) width += o.cols;
        h = Mat(1, width);
        int off = 0;
        for (const auto& o : outs) {
            for (int c = 0; c < o.cols; ++c) h.at(0, off + c) = o.at(0, c);
            off += o.cols;
        }
    } else {
        h = outs.front();
    }
    if (cache != nullptr) cache->pathway_outputs = std::move(outs);

    std::vector<LayerState>* head_states = cache != nullptr ? &cache->head_states : nullptr;
    const std::vector<LayerState>* head_replay = reuse != nullptr ? &reuse->head_states : nullptr;
    h = run_chain(head, "head", params, std::move(h), mode, rng, head_states, head_replay);
    if (cache != nullptr) cache->output = h;
    return h;
}

}  // namespace detail

inline Probs forward(const NetworkGraph& net, const ParameterStore& params, const Mat& input,
                     Mode mode, Rng* rng = nullptr, ForwardCache* cache = nullptr) {
    const Mat out = detail::forward_impl(net, params, input, mode, rng, cache, nullptr);
    return Probs{out.at(0, 0), out.at(0, 1)};
}

// Re-evaluates the train-mode function defined by the dropout masks recorded
// in `masks`; the independent finite-difference oracle perturbs parameters
// against exactly this function.
inline Probs forward_with_masks(const NetworkGraph& net, const ParameterStore& params,
                                const Mat& input, const ForwardCache& masks) {
    const Mat out = detail::forward_impl(net, params, input, masks.mode, nullptr, nullptr, &masks);
    return Probs{out.at(0, 0), out.at(0, 1)};
}

inline constexpr double kProbClamp = 1e-12;

// -[y ln p1 + (1-y) ln p0], probabilities clamped to [1e-12, 1].
inline double cross_entropy_loss(const Probs& probs, int label) {
    if (label != 0 && label != 1) throw ValidationError("cross_entropy_loss: label must be 0 or 1");
    const double p = label == 1 ? probs.stroke : probs.no_stroke;
    return -std::log(std::max(p, kProbClamp));
}

namespace detail {

inline void chain_backward(const std::vector<LayerSpec>& layers, const std::string& scope,
                           ParameterStore& params, const std::vector<LayerState>& states,
                           Mat grad, Mat* grad_input) {
    for (size_t idx = layers.size(); idx-- > 0;) {
        const auto& l = layers[idx];
        const auto& st = states[idx];
        switch (l.kind) {
            case LayerKind::dense: {
                auto& w = params.get(param_name(scope, idx, "W"));
                auto& b = params.get(param_name(scope, idx, "b"));
                Mat gx(1, w.cols);
                for (int o = 0; o < w.rows; ++o) {
                    const double g = grad.at(0, o);
                    b.grad[static_cast<size_t>(o)] += g;
                    double* wg = &w.grad[static_cast<size_t>(o) * w.cols];
                    const double* wv = &w.value[static_cast<size_t>(o) * w.cols];
                    for (int i = 0; i < w.cols; ++i) {
                        wg[i] += g * st.input.data[static_cast<size_t>(i)];
                        gx.data[static_cast<size_t>(i)] += g * wv[i];
                    }
                }
                grad = std::move(gx);
                break;
            }
            case LayerKind::conv1d: {
                auto& w = params.get(param_name(scope, idx, "W"));
                auto& b = params.get(param_name(scope, idx, "b"));
                const Mat& x = st.input;
                Mat gx(x.rows, x.cols);
                for (int i = 0; i < grad.rows; ++i) {
                    for (int f = 0; f < l.filters; ++f) {
                        const double g = grad.at(i, f);
                        if (g == 0.0) continue;
                        b.grad[static_cast<size_t>(f)] += g;
                        double* wg = &w.grad[static_cast<size_t>(f) * w.cols];
                        const double* wv = &w.value[static_cast<size_t>(f) * w.cols];
                        for (int d = 0; d < l.kernel; ++d) {
                            for (int c = 0; c < x.cols; ++c) {
                                wg[d * x.cols + c] += g * x.at(i + d, c);
                                gx.at(i + d, c) += g * wv[d * x.cols + c];
                            }
                        }
                    }
                }
                grad = std::move(gx);
                break;
            }
            case LayerKind::relu:
                for (size_t i = 0; i < grad.data.size(); ++i) {
                    if (st.input.data[i] <= 0.0) grad.data[i] = 0.0;
                }
                break;
            case LayerKind::dropout:
                if (!st.mask.empty()) {
                    for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] *= st.mask.data[i];
                }
                break;
            case LayerKind::global_max_pool: {
                Mat gx(st.input.rows, st.input.cols);
                for (int c = 0; c < st.input.cols; ++c) {
                    gx.at(st.argmax[static_cast<size_t>(c)], c) = grad.at(0, c);
                }
                grad = std::move(gx);
                break;
            }
            case LayerKind::softmax:
                throw ValidationError("backward: softmax inside a chain");
            case LayerKind::concat:
                throw ValidationError("backward: concat inside a chain");
        }
    }
    if (grad_input != nullptr) *grad_input = std::move(grad);
}

}  // namespace detail

// Accumulates grad_scale * d(cross_entropy(sample)) / d(theta) into the
// store's gradient arrays. Requires a cache from a train-mode forward pass so
// the dropout masks used by the forward pass are reapplied.
inline void backward(const NetworkGraph& net, ParameterStore& params, const ForwardCache& cache,
                     int label, double grad_scale = 1.0) {
    if (cache.output.empty()) throw ValidationError("backward: missing forward cache");
    if (cache.mode != Mode::train) {
        throw ValidationError("backward: cache must come from a train-mode forward pass");
    }
    if (label != 0 && label != 1) throw ValidationError("backward: label must be 0 or 1");

    // d(loss)/d(probs) with the same clamping as cross_entropy_loss, then
    // through the softmax Jacobian. For one-hot labels this reduces to
    // probs - one_hot at the logits.
    const int c_star = label;  // class index: 0 = no-stroke, 1 = stroke
    const double p_star = cache.output.at(0, c_star);
    Mat dprobs(1, 2);
    dprobs.at(0, c_star) = p_star > kProbClamp ? -grad_scale / p_star : 0.0;
    Mat dlogits(1, 2);
    double dot = 0.0;
    for (int c = 0; c < 2; ++c) dot += dprobs.at(0, c) * cache.output.at(0, c);
    for (int c = 0; c < 2; ++c) {
        dlogits.at(0, c) = cache.output.at(0, c) * (dprobs.at(0, c) - dot);
    }

    std::vector<LayerSpec> head = net.head_layers;
    if (net.pathway_count > 1) head.erase(head.begin());
    head.pop_back();  // softmax handled above
    std::vector<LayerState> head_states = cache.head_states;
    head_states.pop_back();

    Mat head_grad_in;
    detail::chain_backward(head, "head", params, head_states, std::move(dlogits), &head_grad_in);

    if (net.pathway_count > 1) {
        int off = 0;
        for (int p = 0; p < net.pathway_count; ++p) {
            const Mat& out = cache.pathway_outputs[static_cast<size_t>(p)];
            Mat g(1, out.cols);
            for (int c = 0; c < out.cols; ++c) g.at(0, c) = head_grad_in.at(0, off + c);
            off += out.cols;
            detail::chain_backward(net.pathway_layers, detail::scope_name(net, p), params,
                                   cache.pathway_states[static_cast<size_t>(p)], std::move(g),
                                   nullptr);
        }
    } else {
        detail::chain_backward(net.pathway_layers, detail::scope_name(net, 0), params,
                               cache.pathway_states[0], std::move(head_grad_in), nullptr);
    }
}

}  // namespace strokeuq::nn
