#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "clsnav/nn.hpp"
#include "clsnav/rng.hpp"
#include "clsnav/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace clsnav;
using clsnav::testing::gradcheck;

TEST_CASE("matmul identity and hand-computed products", "[tensor]") {
    Tape tape;
    auto eye = tensor({2, 2}, {1, 0, 0, 1});
    auto b = tensor({2, 2}, {3, 4, 5, 6});
    auto out = matmul(tape, eye, b);
    REQUIRE(out->data == std::vector<double>{3, 4, 5, 6});

    auto r = tensor({1, 2}, {1, 2});
    auto c = tensor({2, 1}, {3, 4});
    REQUIRE(matmul(tape, r, c)->value() == 11.0);
}

TEST_CASE("matmul rejects mismatched inner extents naming both shapes", "[tensor]") {
    Tape tape;
    auto a = tensor({2, 3}, std::vector<double>(6, 1.0));
    auto b = tensor({2, 2}, std::vector<double>(4, 1.0));
    REQUIRE_THROWS_WITH(matmul(tape, a, b),
                        Catch::Matchers::ContainsSubstring("[2, 3]") && Catch::Matchers::ContainsSubstring("[2, 2]"));
}

TEST_CASE("matmul gradient of sum(output) matches finite differences", "[tensor][grad]") {
    auto rng = make_rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = randn(rng, {4, 5}, 1.0, true);
        auto b = randn(rng, {5, 3}, 1.0, true);
        auto res = gradcheck([&](Tape& t) { return sum(t, matmul(t, a, b)); }, {a, b});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("softmax known values", "[tensor]") {
    Tape tape;
    auto sym = softmax(tape, tensor({2}, {0.0, 0.0}), 0);
    REQUIRE(sym->data[0] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(sym->data[1] == Catch::Approx(0.5).margin(1e-12));

    // Max subtraction keeps huge logits finite.
    auto big = softmax(tape, tensor({3}, {1000.0, 1000.0, 1000.0}), 0);
    for (double v : big->data) REQUIRE(v == Catch::Approx(1.0 / 3.0).margin(1e-12));

    // Independent high-precision evaluation of exp-normalization.
    long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
    long double z = e1 + e2 + e3;
    auto got = softmax(tape, tensor({3}, {1.0, 2.0, 3.0}), 0);
    REQUIRE(got->data[0] == Catch::Approx(static_cast<double>(e1 / z)).epsilon(1e-12));
    REQUIRE(got->data[1] == Catch::Approx(static_cast<double>(e2 / z)).epsilon(1e-12));
    REQUIRE(got->data[2] == Catch::Approx(static_cast<double>(e3 / z)).epsilon(1e-12));
}

TEST_CASE("softmax slices are probability vectors", "[tensor][property]") {
    auto rng = make_rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<std::size_t> dim(1, 6);
        auto x = randn(rng, {dim(rng), dim(rng)}, 5.0);
        const std::size_t axis = trial % 2;
        Tape tape;
        auto p = softmax(tape, x, axis);
        const std::size_t n = p->shape[axis];
        const std::size_t other = p->shape[1 - axis];
        for (std::size_t o = 0; o < other; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double v = axis == 0 ? p->at(i, o) : p->at(o, i);
                REQUIRE(v >= 0.0);
                s += v;
            }
            REQUIRE(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("softmax invalid axis", "[tensor]") {
    Tape tape;
    auto x = tensor({2, 2}, {1, 2, 3, 4});
    REQUIRE_THROWS_AS(softmax(tape, x, 2), TensorError);
}

TEST_CASE("softmax gradients", "[tensor][grad]") {
    auto rng = make_rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = randn(rng, {3, 4}, 2.0, true);
        auto w = randn(rng, {3, 4}, 1.0);  // weighting makes the loss sensitive to every entry
        auto res = gradcheck([&](Tape& t) { return sum(t, mul(t, softmax(t, x, 1), w)); }, {x});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("layer_norm constant row maps to beta", "[tensor]") {
    Tape tape;
    auto x = tensor({1, 3}, {5, 5, 5});
    auto gamma = full({3}, 1.0);
    auto beta = zeros({3});
    auto y = layer_norm(tape, x, gamma, beta);
    for (double v : y->data) REQUIRE(v == Catch::Approx(0.0).margin(1e-9));

    auto x2 = tensor({1, 2}, {-3.0, 9.0});
    auto y2 = layer_norm(tape, x2, zeros({2}), full({2}, 7.0));
    REQUIRE(y2->data == std::vector<double>{7.0, 7.0});
}

TEST_CASE("layer_norm output is standardized before the affine part", "[tensor][property]") {
    auto rng = make_rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = randn(rng, {4, 8}, 3.0);
        Tape tape;
        auto y = layer_norm(tape, x, full({8}, 1.0), zeros({8}));
        for (std::size_t r = 0; r < 4; ++r) {
            double mean = 0.0, var = 0.0;
            for (std::size_t c = 0; c < 8; ++c) mean += y->at(r, c);
            mean /= 8.0;
            for (std::size_t c = 0; c < 8; ++c) var += (y->at(r, c) - mean) * (y->at(r, c) - mean);
            var /= 8.0;
            REQUIRE(std::abs(mean) < 1e-6);
            REQUIRE(std::abs(var - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("layer_norm shape mismatch", "[tensor]") {
    Tape tape;
    auto x = tensor({2, 3}, std::vector<double>(6, 1.0));
    REQUIRE_THROWS_AS(layer_norm(tape, x, full({2}, 1.0), zeros({3})), TensorError);
}

TEST_CASE("layer_norm gradients", "[tensor][grad]") {
    auto rng = make_rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = randn(rng, {3, 5}, 2.0, true);
        auto gamma = randn(rng, {5}, 1.0, true);
        auto beta = randn(rng, {5}, 1.0, true);
        auto w = randn(rng, {3, 5}, 1.0);
        auto res = gradcheck([&](Tape& t) { return sum(t, mul(t, layer_norm(t, x, gamma, beta), w)); },
                             {x, gamma, beta});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("backward fills linear and quadratic gradients", "[tensor]") {
    auto rng = make_rng(43);
    auto x = randn(rng, {3, 4}, 1.0, true);

    Tape t1;
    t1.backward(sum(t1, x));
    for (double g : x->grad) REQUIRE(g == 1.0);

    x->zero_grad();
    Tape t2;
    t2.backward(sum(t2, mul(t2, x, x)));
    for (std::size_t i = 0; i < x->numel(); ++i) REQUIRE(x->grad[i] == Catch::Approx(2.0 * x->data[i]));
}

TEST_CASE("backward rejects non-scalar loss", "[tensor]") {
    Tape tape;
    auto x = tensor({2}, {1.0, 2.0}, true);
    auto y = scale(tape, x, 2.0);
    REQUIRE_THROWS_AS(tape.backward(y), TensorError);
}

TEST_CASE("backward through fan-out sums contributions", "[tensor]") {
    auto x = tensor({4}, {1, 2, 3, 4}, true);
    Tape tape;
    auto loss = add(tape, sum(tape, x), sum(tape, x));
    tape.backward(loss);
    for (double g : x->grad) REQUIRE(g == 2.0);
}

TEST_CASE("gradients accumulate across backward calls until zeroed", "[tensor]") {
    auto x = tensor({2}, {1.0, 1.0}, true);
    {
        Tape tape;
        tape.backward(sum(tape, x));
    }
    {
        Tape tape;
        tape.backward(sum(tape, x));
    }
    for (double g : x->grad) REQUIRE(g == 2.0);
    x->zero_grad();
    for (double g : x->grad) REQUIRE(g == 0.0);
}

TEST_CASE("elementwise and activation gradients", "[tensor][grad]") {
    auto rng = make_rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = randn(rng, {2, 3}, 1.0, true);
        auto b = randn(rng, {2, 3}, 1.0, true);
        auto bias = randn(rng, {3}, 1.0, true);
        auto w = randn(rng, {2, 3}, 1.0);

        auto res = gradcheck(
            [&](Tape& t) {
                auto h = add_bias(t, add(t, mul(t, a, b), sub(t, a, b)), bias);
                return sum(t, mul(t, gelu(t, h), w));
            },
            {a, b, bias});
        REQUIRE(res.max_rel_err < 1e-4);

        auto res2 = gradcheck([&](Tape& t) { return sum(t, mul(t, sigmoid(t, a), w)); }, {a});
        REQUIRE(res2.max_rel_err < 1e-4);
    }
}

TEST_CASE("concat and slice gradients along both axes", "[tensor][grad]") {
    auto rng = make_rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = randn(rng, {2, 3}, 1.0, true);
        auto b = randn(rng, {4, 3}, 1.0, true);
        auto w = randn(rng, {6, 3}, 1.0);
        auto res = gradcheck([&](Tape& t) { return sum(t, mul(t, concat(t, {a, b}, 0), w)); }, {a, b});
        REQUIRE(res.max_rel_err < 1e-4);

        auto x = randn(rng, {3, 6}, 1.0, true);
        auto w2 = randn(rng, {3, 2}, 1.0);
        auto res2 = gradcheck([&](Tape& t) { return sum(t, mul(t, slice(t, x, 1, 2, 4), w2)); }, {x});
        REQUIRE(res2.max_rel_err < 1e-4);
    }
}

TEST_CASE("concat/slice round trip preserves rows", "[tensor]") {
    Tape tape;
    auto x = tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    auto top = slice(tape, x, 0, 0, 1);
    auto rest = slice(tape, x, 0, 1, 3);
    auto back = concat(tape, {top, rest}, 0);
    REQUIRE(back->data == x->data);
}

TEST_CASE("embedding lookup and scatter gradient", "[tensor][grad]") {
    auto rng = make_rng(59);
    auto table = randn(rng, {5, 3}, 1.0, true);
    Tape tape;
    auto out = embedding(tape, table, {2, 2, 0});
    REQUIRE(out->shape == Shape{3, 3});
    for (std::size_t c = 0; c < 3; ++c) {
        REQUIRE(out->at(0, c) == table->at(2, c));
        REQUIRE(out->at(1, c) == table->at(2, c));
        REQUIRE(out->at(2, c) == table->at(0, c));
    }
    REQUIRE_THROWS_AS(embedding(tape, table, {5}), TensorError);

    for (int trial = 0; trial < 20; ++trial) {
        auto tbl = randn(rng, {4, 3}, 1.0, true);
        auto w = randn(rng, {3, 3}, 1.0);
        auto res = gradcheck([&](Tape& t) { return sum(t, mul(t, embedding(t, tbl, {1, 3, 1}), w)); }, {tbl});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("cross entropy value and gradient", "[tensor][grad]") {
    Tape tape;
    auto uniform_logits = zeros({2, 4}, false);
    auto loss = cross_entropy(tape, uniform_logits, {0, 3});
    REQUIRE(loss->value() == Catch::Approx(std::log(4.0)).epsilon(1e-12));

    auto rng = make_rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        auto logits = randn(rng, {3, 5}, 2.0, true);
        auto res = gradcheck([&](Tape& t) { return cross_entropy(t, logits, {4, 0, 2}); }, {logits});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("bce with logits is stable and differentiable", "[tensor][grad]") {
    Tape tape;
    auto logits = tensor({2}, {1000.0, -1000.0});
    auto targets = tensor({2}, {1.0, 0.0});
    REQUIRE(bce_with_logits(tape, logits, targets)->value() == Catch::Approx(0.0).margin(1e-12));

    auto rng = make_rng(67);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = randn(rng, {3, 4}, 2.0, true);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<double> tv(12);
        for (auto& v : tv) v = unit(rng) < 0.5 ? 0.0 : 1.0;
        auto t01 = tensor({3, 4}, tv);
        auto res = gradcheck([&](Tape& t) { return bce_with_logits(t, x, t01); }, {x});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("l2 normalize", "[tensor][grad]") {
    Tape tape;
    auto v = tensor({1, 2}, {3.0, 4.0});
    auto n = l2_normalize(tape, v);
    REQUIRE(n->data[0] == Catch::Approx(0.6));
    REQUIRE(n->data[1] == Catch::Approx(0.8));
    REQUIRE_THROWS_AS(l2_normalize(tape, zeros({3})), TensorError);

    auto rng = make_rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = randn(rng, {1, 5}, 1.0, true);
        auto w = randn(rng, {1, 5}, 1.0);
        auto res = gradcheck([&](Tape& t) { return sum(t, mul(t, l2_normalize(t, x), w)); }, {x});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("scaled dot-product attention matches finite differences", "[tensor][grad]") {
    auto rng = make_rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = randn(rng, {4, 3}, 1.0, true);
        auto k = randn(rng, {4, 3}, 1.0, true);
        auto v = randn(rng, {4, 3}, 1.0, true);
        auto w = randn(rng, {4, 3}, 1.0);
        const double s = 1.0 / std::sqrt(3.0);
        auto res = gradcheck(
            [&](Tape& t) {
                auto attn = softmax(t, scale(t, matmul(t, q, transpose(t, k)), s), 1);
                return sum(t, mul(t, matmul(t, attn, v), w));
            },
            {q, k, v});
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("two-layer transformer block matches finite differences", "[tensor][grad][slow]") {
    auto rng = make_rng(79);
    for (int trial = 0; trial < 3; ++trial) {
        ParamSet params;
        auto l0 = TransformerLayer::create(rng, params, "l0", 8, 2);
        auto l1 = TransformerLayer::create(rng, params, "l1", 8, 2);
        auto x = randn(rng, {3, 8}, 1.0, true);
        auto w = randn(rng, {3, 8}, 1.0);

        std::vector<TensorPtr> leaves = {x};
        for (const auto& [name, t] : params.items()) leaves.push_back(t);

        auto res = gradcheck(
            [&](Tape& t) {
                auto h = l0.forward(t, x).out;
                h = l1.forward(t, h).out;
                return sum(t, mul(t, h, w));
            },
            leaves);
        REQUIRE(res.max_rel_err < 1e-3);
    }
}

TEST_CASE("attention rows are probability vectors", "[tensor][property]") {
    auto rng = make_rng(83);
    ParamSet params;
    auto layer = TransformerLayer::create(rng, params, "l", 8, 2);
    auto x = randn(rng, {5, 8}, 1.0);
    Tape tape;
    auto r = layer.forward(tape, x);
    REQUIRE(r.attn_probs.size() == 2);
    for (const auto& head : r.attn_probs) {
        for (std::size_t i = 0; i < head->rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < head->cols(); ++j) s += head->at(i, j);
            REQUIRE(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("tensor serialization round trip", "[tensor]") {
    auto rng = make_rng(89);
    auto t = randn(rng, {3, 4, 2}, 1.0);
    std::stringstream ss;
    write_tensor(ss, *t);
    auto back = read_tensor(ss);
    REQUIRE(back->shape == t->shape);
    REQUIRE(back->data == t->data);
    REQUIRE(tensor_record_size(*t) == 4 + 3 * 8 + 24 * 8);
}

TEST_CASE("invariants on construction", "[tensor]") {
    REQUIRE_THROWS_AS(tensor({2, 3}, {1.0}), TensorError);
    REQUIRE_THROWS_AS(tensor({0}, {}), TensorError);
    auto t = tensor({2}, {1.0, 2.0}, true);
    REQUIRE(t->grad.size() == t->data.size());
}
