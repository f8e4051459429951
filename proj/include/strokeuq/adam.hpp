#pragma once

// Adam with bias correction. Defaults mirror the Keras implementation the
// aggregation models are tuned against: lr 0.001, beta1 0.9, beta2 0.999,
// epsilon 1e-7.

#include <cmath>
#include <vector>

#include "strokeuq/errors.hpp"
#include "strokeuq/nn.hpp"

namespace strokeuq::nn {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;

    bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
    AdamConfig config;
    long step = 0;
    std::vector<std::vector<double>> m;  // first moments, parallel to store entries
    std::vector<std::vector<double>> v;  // second moments

    static AdamState init(const ParameterStore& params, AdamConfig config = {}) {
        AdamState s;
        s.config = config;
        s.m.reserve(params.entries.size());
        s.v.reserve(params.entries.size());
        for (const auto& e : params.entries) {
            s.m.emplace_back(e.value.size(), 0.0);
            s.v.emplace_back(e.value.size(), 0.0);
        }
        return s;
    }
};

inline void adam_step(AdamState& state, ParameterStore& params) {
    if (state.m.size() != params.entries.size()) {
        throw ValidationError("adam_step: state/parameter shape mismatch");
    }
    ++state.step;
    const auto& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (size_t e = 0; e < params.entries.size(); ++e) {
        auto& entry = params.entries[e];
        auto& m = state.m[e];
        auto& v = state.v[e];
        if (m.size() != entry.value.size()) {
            throw ValidationError("adam_step: state/parameter shape mismatch");
        }
        for (size_t i = 0; i < entry.value.size(); ++i) {
            const double g = entry.grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            entry.value[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

}  // namespace strokeuq::nn
