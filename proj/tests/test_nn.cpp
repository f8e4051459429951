// Network engine: forward semantics, loss, gradients vs finite differences,
// Adam, dropout statistics, model file round trips.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "strokeuq/adam.hpp"
#include "strokeuq/model_io.hpp"
#include "strokeuq/nn.hpp"
#include "strokeuq/rng.hpp"
#include "testutil.hpp"

using namespace strokeuq;
using namespace strokeuq::nn;

namespace {

NetworkGraph linear_softmax(int input_width) {
    NetworkGraph g;
    g.input_kind = InputKind::vector_per_pathway;
    g.input_width = input_width;
    g.head_layers = {LayerSpec::dense(2), LayerSpec::softmax()};
    validate_graph(g);
    return g;
}

NetworkGraph small_mlp(double rate) {
    NetworkGraph g;
    g.input_kind = InputKind::vector_per_pathway;
    g.input_width = 4;
    g.pathway_layers = {LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dropout(rate)};
    g.head_layers = {LayerSpec::dense(2), LayerSpec::softmax()};
    validate_graph(g);
    return g;
}

Mat row(const std::vector<double>& v) {
    Mat m(1, static_cast<int>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) m.at(0, static_cast<int>(i)) = v[i];
    return m;
}

}  // namespace

TEST_CASE("forward: zero dense weights give the uniform softmax") {
    const auto net = linear_softmax(3);
    Rng rng(1);
    auto params = init_params(net, rng);
    for (auto& e : params.entries) std::fill(e.value.begin(), e.value.end(), 0.0);
    const auto p = forward(net, params, row({1.0, -2.0, 5.0}), Mode::deterministic);
    CHECK(p.no_stroke == 0.5);
    CHECK(p.stroke == 0.5);
}

TEST_CASE("forward: dropout rate 0 makes train mode equal deterministic mode") {
    const auto net = small_mlp(0.0);
    Rng rng(2);
    const auto params = init_params(net, rng);
    const auto x = row({0.1, 0.2, 0.3, 0.4});
    Rng mask_rng(77);
    const auto train = forward(net, params, x, Mode::train, &mask_rng);
    const auto det = forward(net, params, x, Mode::deterministic);
    CHECK(train.stroke == det.stroke);
    CHECK(train.no_stroke == det.no_stroke);
}

TEST_CASE("forward: fixed seed reproduces mc_inference exactly") {
    const auto net = small_mlp(0.4);
    Rng rng(3);
    const auto params = init_params(net, rng);
    const auto x = row({0.9, 0.1, 0.5, 0.2});
    std::vector<double> a;
    std::vector<double> b;
    for (int rep = 0; rep < 2; ++rep) {
        Rng mc(4242);
        auto& out = rep == 0 ? a : b;
        for (int t = 0; t < 20; ++t) out.push_back(forward(net, params, x, Mode::mc_inference, &mc).stroke);
    }
    CHECK(a == b);
}

TEST_CASE("forward: softmax output is normalized and positive") {
    const auto net = small_mlp(0.3);
    Rng rng(4);
    const auto params = init_params(net, rng);
    Rng mc(5);
    for (int t = 0; t < 50; ++t) {
        const auto p = forward(net, params, row({-1.0, 2.0, 0.0, 3.0}), Mode::mc_inference, &mc);
        CHECK(p.stroke > 0.0);
        CHECK(p.no_stroke > 0.0);
        CHECK(std::abs(p.stroke + p.no_stroke - 1.0) <= 1e-12);
    }
}

TEST_CASE("forward: shape mismatch") {
    const auto net = small_mlp(0.0);
    Rng rng(6);
    const auto params = init_params(net, rng);
    CHECK_THROWS_AS(forward(net, params, row({1.0, 2.0}), Mode::deterministic), ValidationError);
}

TEST_CASE("cross_entropy_loss: stated values") {
    CHECK(cross_entropy_loss({0.5, 0.5}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy_loss({0.5, 0.5}, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy_loss({0.0, 1.0}, 1) == 0.0);
    CHECK(cross_entropy_loss({0.7, 0.3}, 1) == doctest::Approx(-std::log(0.3)).epsilon(1e-12));
    CHECK(cross_entropy_loss({0.7, 0.3}, 1) == doctest::Approx(1.2039728).epsilon(1e-6));
    // clamped at 1e-12
    CHECK(cross_entropy_loss({1.0, 0.0}, 1) == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy_loss({0.5, 0.5}, 2), ValidationError);
}

TEST_CASE("backward: logits gradient equals probs minus one-hot") {
    const auto net = linear_softmax(3);
    Rng rng(7);
    auto params = init_params(net, rng);
    const auto x = row({0.3, -1.2, 0.8});
    ForwardCache cache;
    const auto probs = forward(net, params, x, Mode::train, &rng, &cache);
    params.zero_grads();
    backward(net, params, cache, 1);
    const auto& b = params.get("head.0.b");
    CHECK(b.grad[0] == doctest::Approx(probs.no_stroke - 0.0).epsilon(1e-12));
    CHECK(b.grad[1] == doctest::Approx(probs.stroke - 1.0).epsilon(1e-12));
}

TEST_CASE("backward: requires a train-mode cache") {
    const auto net = linear_softmax(2);
    Rng rng(8);
    auto params = init_params(net, rng);
    ForwardCache cache;
    CHECK_THROWS_AS(backward(net, params, cache, 0), ValidationError);  // never ran forward
    forward(net, params, row({1.0, 2.0}), Mode::deterministic, nullptr, &cache);
    CHECK_THROWS_AS(backward(net, params, cache, 0), ValidationError);  // wrong mode
}

TEST_CASE("backward: a fully masked chain yields zero upstream gradients") {
    // With dropout(0.9) masking every unit, the layers before it cannot move
    // the loss, so their gradients must be exactly zero.
    NetworkGraph g;
    g.input_kind = InputKind::vector_per_pathway;
    g.input_width = 3;
    g.pathway_layers = {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dropout(0.9)};
    g.head_layers = {LayerSpec::dense(2), LayerSpec::softmax()};
    validate_graph(g);
    Rng init_rng(9);
    auto params = init_params(g, init_rng);
    const auto x = row({0.5, -0.4, 1.2});
    bool found = false;
    for (uint64_t seed = 0; seed < 200 && !found; ++seed) {
        Rng mask_rng(seed);
        ForwardCache cache;
        forward(g, params, x, Mode::train, &mask_rng, &cache);
        const auto& mask = cache.pathway_states[0][2].mask;
        bool all_zero = true;
        for (double m : mask.data) all_zero = all_zero && m == 0.0;
        if (!all_zero) continue;
        found = true;
        params.zero_grads();
        backward(g, params, cache, 1);
        for (double gw : params.get("pw.0.W").grad) CHECK(gw == 0.0);
        for (double gb : params.get("pw.0.b").grad) CHECK(gb == 0.0);
        // the head still learns from its bias path
        const auto& hb = params.get("head.0.b").grad;
        CHECK((hb[0] != 0.0 || hb[1] != 0.0));
    }
    CHECK(found);
}

TEST_CASE("gradient check: every layer kind against central differences") {
    SUBCASE("dense + relu + dropout chain") {
        const auto net = small_mlp(0.35);
        Rng in(11);
        for (int trial = 0; trial < 5; ++trial) {
            Mat x(1, 4);
            for (auto& v : x.data) v = in.uniform(-2.0, 2.0);
            const auto r = testutil::finite_difference_check(net, x, trial % 2,
                                                             1000 + static_cast<uint64_t>(trial));
            CHECK(r.pass_fraction() >= 0.99);
        }
    }
    SUBCASE("conv1d + global max pool") {
        NetworkGraph g;
        g.input_kind = InputKind::sequence;
        g.input_width = 2;
        g.pathway_layers = {LayerSpec::conv1d(3, 3), LayerSpec::relu(), LayerSpec::dropout(0.25),
                            LayerSpec::global_max_pool()};
        g.head_layers = {LayerSpec::dense(2), LayerSpec::softmax()};
        validate_graph(g);
        Rng in(12);
        for (int trial = 0; trial < 5; ++trial) {
            const int n = 3 + trial * 2;
            Mat x(n, 2);
            for (auto& v : x.data) v = in.uniform(-1.5, 1.5);
            const auto r = testutil::finite_difference_check(g, x, trial % 2,
                                                             2000 + static_cast<uint64_t>(trial));
            CHECK(r.pass_fraction() >= 0.99);
        }
    }
    SUBCASE("shared parallel pathways with concat head") {
        NetworkGraph g;
        g.input_kind = InputKind::vector_per_pathway;
        g.input_width = 3;
        g.pathway_count = 4;
        g.shared_pathway_weights = true;
        g.pathway_layers = {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dropout(0.3)};
        g.head_layers = {LayerSpec::concat(), LayerSpec::dense(4), LayerSpec::dropout(0.3),
                         LayerSpec::dense(2), LayerSpec::softmax()};
        validate_graph(g);
        Rng in(13);
        for (int trial = 0; trial < 5; ++trial) {
            Mat x(4, 3);
            for (auto& v : x.data) v = in.uniform(-2.0, 2.0);
            const auto r = testutil::finite_difference_check(g, x, trial % 2,
                                                             3000 + static_cast<uint64_t>(trial));
            CHECK(r.pass_fraction() >= 0.99);
        }
    }
}

TEST_CASE("weight sharing: perturbing a shared weight moves all pathways equally") {
    NetworkGraph g;
    g.input_kind = InputKind::vector_per_pathway;
    g.input_width = 2;
    g.pathway_count = 3;
    g.pathway_layers = {LayerSpec::dense(3)};
    g.head_layers = {LayerSpec::concat(), LayerSpec::dense(2), LayerSpec::softmax()};
    validate_graph(g);
    Rng rng(21);
    auto params = init_params(g, rng);
    // identical pathway inputs -> identical pathway outputs, before and after
    // a shared-weight perturbation
    Mat x(3, 2);
    for (int p = 0; p < 3; ++p) {
        x.at(p, 0) = 0.4;
        x.at(p, 1) = -0.7;
    }
    ForwardCache cache;
    forward(g, params, x, Mode::deterministic, nullptr, &cache);
    auto outs_equal = [&](const ForwardCache& c) {
        return c.pathway_outputs[0] == c.pathway_outputs[1] &&
               c.pathway_outputs[1] == c.pathway_outputs[2];
    };
    CHECK(outs_equal(cache));
    params.get("pw.0.W").value[0] += 0.25;
    ForwardCache cache2;
    forward(g, params, x, Mode::deterministic, nullptr, &cache2);
    CHECK(outs_equal(cache2));
    CHECK(cache2.pathway_outputs[0] != cache.pathway_outputs[0]);
}

TEST_CASE("weight sharing: shared gradient is the sum of per-pathway gradients") {
    NetworkGraph shared;
    shared.input_kind = InputKind::vector_per_pathway;
    shared.input_width = 3;
    shared.pathway_count = 3;
    shared.shared_pathway_weights = true;
    shared.pathway_layers = {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dropout(0.3)};
    shared.head_layers = {LayerSpec::concat(), LayerSpec::dense(2), LayerSpec::softmax()};
    validate_graph(shared);
    NetworkGraph split = shared;
    split.shared_pathway_weights = false;

    Rng rng(61);
    auto params_shared = init_params(shared, rng);
    for (auto& e : params_shared.entries) {
        for (auto& v : e.value) v = rng.uniform(-0.8, 0.8);
    }
    Rng rng2(61);
    auto params_split = init_params(split, rng2);
    for (auto& e : params_split.entries) {
        // copy the shared pathway values into every per-pathway copy
        const std::string src = e.name.rfind("pw", 0) == 0 && e.name[2] != '.'
                                    ? "pw" + e.name.substr(e.name.find('.'))
                                    : e.name;
        e.value = params_shared.get(src).value;
    }

    Mat x(3, 3);
    Rng in(62);
    for (auto& v : x.data) v = in.uniform(-1.0, 1.0);

    Rng mask_a(63);
    ForwardCache cache_a;
    const auto pa = forward(shared, params_shared, x, Mode::train, &mask_a, &cache_a);
    Rng mask_b(63);
    ForwardCache cache_b;
    const auto pb = forward(split, params_split, x, Mode::train, &mask_b, &cache_b);
    CHECK(pa.stroke == pb.stroke);  // same masks, same values

    params_shared.zero_grads();
    params_split.zero_grads();
    backward(shared, params_shared, cache_a, 1);
    backward(split, params_split, cache_b, 1);
    for (const char* which : {"0.W", "0.b"}) {
        const auto& g_shared = params_shared.get(std::string("pw.") + which).grad;
        for (size_t i = 0; i < g_shared.size(); ++i) {
            double sum = 0.0;
            for (int p = 0; p < 3; ++p) {
                sum += params_split.get("pw" + std::to_string(p) + "." + which).grad[i];
            }
            CHECK(g_shared[i] == doctest::Approx(sum).epsilon(1e-12));
        }
    }
}

TEST_CASE("adam: first step moves by about lr * sign(gradient)") {
    ParameterStore store;
    auto& e = store.add("w", 1, 1);
    e.value[0] = 0.3;
    auto state = AdamState::init(store);
    e.grad[0] = 0.7;
    adam_step(state, store);
    const double expected = 0.3 - 0.001 * 0.7 / (0.7 + 1e-7);
    CHECK(e.value[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(state.step == 1);
}

TEST_CASE("adam: zero gradient leaves fresh parameters in place") {
    ParameterStore store;
    auto& e = store.add("w", 2, 1);
    e.value = {1.5, -2.5};
    auto state = AdamState::init(store);
    adam_step(state, store);
    CHECK(e.value[0] == 1.5);
    CHECK(e.value[1] == -2.5);
}

TEST_CASE("adam: 100 steps shrink w^2 from w = 1") {
    ParameterStore store;
    auto& e = store.add("w", 1, 1);
    e.value[0] = 1.0;
    auto state = AdamState::init(store);
    double prev = 1.0;
    for (int step = 0; step < 100; ++step) {
        e.grad[0] = 2.0 * e.value[0];
        adam_step(state, store);
        CHECK(e.value[0] < prev);
        prev = e.value[0];
    }
    CHECK(std::abs(e.value[0]) < 0.95);
}

TEST_CASE("dropout: inverted scaling is unbiased over masks") {
    NetworkGraph g;
    g.input_kind = InputKind::vector_per_pathway;
    g.input_width = 4;
    g.pathway_layers = {LayerSpec::dropout(0.3)};
    g.head_layers = {LayerSpec::dense(2), LayerSpec::softmax()};
    validate_graph(g);
    Rng rng(31);
    const auto params = init_params(g, rng);
    const std::vector<double> x = {1.0, -2.0, 0.5, 3.0};
    const int n = 10000;
    std::vector<double> mean(4, 0.0);
    Rng mc(32);
    for (int k = 0; k < n; ++k) {
        ForwardCache cache;
        forward(g, params, row(x), Mode::train, &mc, &cache);
        const auto& mask = cache.pathway_states[0][0].mask;
        for (int i = 0; i < 4; ++i) mean[static_cast<size_t>(i)] += x[static_cast<size_t>(i)] * mask.at(0, i);
    }
    const double keep = 0.7;
    for (int i = 0; i < 4; ++i) {
        mean[static_cast<size_t>(i)] /= n;
        const double se = std::abs(x[static_cast<size_t>(i)]) *
                          std::sqrt((1.0 - keep) / keep / static_cast<double>(n));
        CHECK(std::abs(mean[static_cast<size_t>(i)] - x[static_cast<size_t>(i)]) <= 3.0 * se);
    }
}

TEST_CASE("graph validation rejects malformed graphs") {
    NetworkGraph g;
    g.input_width = 3;
    g.head_layers = {LayerSpec::dense(2), LayerSpec::softmax()};
    SUBCASE("even conv kernel") {
        g.input_kind = InputKind::sequence;
        g.pathway_layers = {LayerSpec::conv1d(4, 2), LayerSpec::global_max_pool()};
        CHECK_THROWS_AS(validate_graph(g), ValidationError);
    }
    SUBCASE("dropout rate at 1") {
        g.pathway_layers = {LayerSpec::dropout(1.0)};
        CHECK_THROWS_AS(validate_graph(g), ValidationError);
    }
    SUBCASE("softmax of wrong width") {
        g.head_layers = {LayerSpec::dense(3), LayerSpec::softmax()};
        CHECK_THROWS_AS(validate_graph(g), ValidationError);
    }
    SUBCASE("missing softmax") {
        g.head_layers = {LayerSpec::dense(2)};
        CHECK_THROWS_AS(validate_graph(g), ValidationError);
    }
    SUBCASE("concat without parallel pathways") {
        g.head_layers = {LayerSpec::concat(), LayerSpec::dense(2), LayerSpec::softmax()};
        CHECK_THROWS_AS(validate_graph(g), ValidationError);
    }
}

TEST_CASE("model file: parameter round trip is bit exact") {
    const auto net = small_mlp(0.4);
    Rng rng(41);
    ModelFile m;
    m.variant = "fcnn_p";
    m.graph = net;
    m.params = init_params(net, rng);
    m.seed = 123456789;
    const auto j = model_to_json(m);
    const auto back = model_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.variant == m.variant);
    CHECK(back.seed == m.seed);
    CHECK(back.graph == m.graph);
    REQUIRE(back.params.entries.size() == m.params.entries.size());
    for (size_t i = 0; i < m.params.entries.size(); ++i) {
        CHECK(back.params.entries[i].name == m.params.entries[i].name);
        CHECK(back.params.entries[i].value == m.params.entries[i].value);  // bit exact
    }
}
