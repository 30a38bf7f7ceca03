#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "clsnav/rng.hpp"
#include "clsnav/visual_encoder.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny.hpp"

using namespace clsnav;
using clsnav::testing::gradcheck;

namespace {

VisualConfig small_cfg(Mechanism mech = Mechanism::replace_cls) {
    auto cfg = clsnav::testing::tiny_model_config(mech).visual;
    return cfg;
}

TextCls make_tcls(std::mt19937_64& rng, std::size_t d, int cat = 0) {
    return TextCls{randn(rng, {1, d}, 1.0), cat};
}

}  // namespace

TEST_CASE("patchify token count and shape", "[visual]") {
    VisualConfig cfg;
    REQUIRE(cfg.tokens() == 16);  // 32x32 image, patch 8

    auto rng = make_rng(5);
    auto small = small_cfg();
    VisualEncoder enc(rng, small);
    Tape tape;
    auto tok = enc.patchify(tape, zeros({3, 16, 16}));
    REQUIRE(tok->shape == Shape{4, 16});
}

TEST_CASE("patchify rejects non-square or indivisible images", "[visual]") {
    auto rng = make_rng(5);
    VisualEncoder enc(rng, small_cfg());
    Tape tape;
    REQUIRE_THROWS_AS(enc.patchify(tape, zeros({3, 16, 15})), TensorError);
    REQUIRE_THROWS_AS(enc.patchify(tape, zeros({3, 8, 8})), TensorError);

    VisualConfig bad;
    bad.image_size = 30;
    REQUIRE_THROWS_AS(bad.validate(), TensorError);
}

TEST_CASE("zero image with zero positional term gives the embedding bias everywhere", "[visual]") {
    auto rng = make_rng(7);
    VisualEncoder enc(rng, small_cfg());
    Tape tape;
    auto tok = enc.patchify(tape, zeros({3, 16, 16}), /*add_positional=*/false);
    const auto& bias = enc.backbone_params().get("patch_embed.b");
    for (std::size_t j = 0; j < tok->rows(); ++j) {
        for (std::size_t c = 0; c < tok->cols(); ++c) REQUIRE(tok->at(j, c) == bias->data[c]);
    }
}

TEST_CASE("permuting two input patches permutes exactly those token rows", "[visual]") {
    auto rng = make_rng(9);
    auto cfg = small_cfg();
    VisualEncoder enc(rng, cfg);
    auto image = uniform(rng, {3, 16, 16}, 0.0, 1.0);

    // Swap the pixel blocks of patches 1 and 2 (grid row 0, cols 0/1 -> patches at (0,1) and (1,0)).
    auto swapped = tensor(image->shape, image->data);
    const std::size_t p = cfg.patch_size;
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t c = 0; c < p; ++c) {
                std::swap(swapped->data[(ch * 16 + r) * 16 + p + c],
                          swapped->data[(ch * 16 + p + r) * 16 + c]);
            }
        }
    }

    Tape tape;
    auto base = enc.patchify(tape, image, false);
    auto perm = enc.patchify(tape, swapped, false);
    for (std::size_t c = 0; c < base->cols(); ++c) {
        REQUIRE(perm->at(1, c) == base->at(2, c));
        REQUIRE(perm->at(2, c) == base->at(1, c));
        REQUIRE(perm->at(0, c) == base->at(0, c));
        REQUIRE(perm->at(3, c) == base->at(3, c));
    }
}

TEST_CASE("empty replacement window matches mechanism none bitwise", "[visual]") {
    auto rng = make_rng(11);
    auto cfg = small_cfg();
    cfg.replace_layers.clear();
    VisualEncoder enc(rng, cfg);
    auto image = uniform(rng, {3, 16, 16}, 0.0, 1.0);
    auto tcls = make_tcls(rng, cfg.d);

    Tape t1, t2, t3;
    auto with_text = enc.encode(t1, image, Mechanism::replace_cls, &tcls);
    auto without_text = enc.encode(t2, image, Mechanism::replace_cls, nullptr);
    auto none = enc.encode(t3, image, Mechanism::none, nullptr);
    REQUIRE(with_text.patch_tokens->data == without_text.patch_tokens->data);
    REQUIRE(with_text.cls_out->data == without_text.cls_out->data);
    REQUIRE(with_text.patch_tokens->data == none.patch_tokens->data);
}

TEST_CASE("replace_cls with a window requires the text token", "[visual]") {
    auto rng = make_rng(13);
    VisualEncoder enc(rng, small_cfg());
    Tape tape;
    REQUIRE_THROWS_AS(enc.encode(tape, zeros({3, 16, 16}), Mechanism::replace_cls, nullptr), TensorError);
}

TEST_CASE("different text tokens change the patch output", "[visual]") {
    auto rng = make_rng(17);
    VisualEncoder enc(rng, small_cfg());
    auto image = uniform(rng, {3, 16, 16}, 0.0, 1.0);
    auto ta = make_tcls(rng, 16, 0);
    auto tb = make_tcls(rng, 16, 1);
    Tape t1, t2;
    auto a = enc.encode(t1, image, Mechanism::replace_cls, &ta);
    auto b = enc.encode(t2, image, Mechanism::replace_cls, &tb);
    REQUIRE(a.patch_tokens->data != b.patch_tokens->data);
}

TEST_CASE("discarded in-window [CLS] outputs receive exactly zero gradient", "[visual][grad]") {
    auto rng = make_rng(19);
    VisualConfig cfg = small_cfg();
    cfg.n_layers = 5;
    cfg.replace_layers = {1, 2, 3};  // window [1, 4)
    VisualEncoder enc(rng, cfg);
    auto image = uniform(rng, {3, 16, 16}, 0.0, 1.0);
    auto tcls = make_tcls(rng, cfg.d);
    tcls.vector->requires_grad = true;
    tcls.vector->grad.assign(tcls.vector->numel(), 0.0);

    Tape tape;
    auto out = enc.encode(tape, image, Mechanism::replace_cls, &tcls);
    auto loss = sum(tape, out.patch_tokens);
    tape.backward(loss);

    // Layers 1 and 2 produce [CLS] outputs that the next in-window layer
    // overwrites; layer 3's output continues into layer 4.
    for (std::size_t i : {std::size_t(1), std::size_t(2)}) {
        for (double g : out.layer_cls_out[i]->grad) REQUIRE(g == 0.0);
    }
    double l3 = 0.0;
    for (double g : out.layer_cls_out[3]->grad) l3 += std::abs(g);
    REQUIRE(l3 > 0.0);
    // The injected token feeds every window layer.
    double tg = 0.0;
    for (double g : tcls.vector->grad) tg += std::abs(g);
    REQUIRE(tg > 0.0);
}

TEST_CASE("attention rows sum to one at every layer", "[visual][property]") {
    auto rng = make_rng(23);
    VisualEncoder enc(rng, small_cfg());
    auto image = uniform(rng, {3, 16, 16}, 0.0, 1.0);
    auto tcls = make_tcls(rng, 16);
    Tape tape;
    auto out = enc.encode(tape, image, Mechanism::replace_cls, &tcls);
    for (const auto& layer : out.attention) {
        for (const auto& head : layer) {
            for (std::size_t r = 0; r < head->rows(); ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < head->cols(); ++c) s += head->at(r, c);
                REQUIRE(std::abs(s - 1.0) < 1e-6);
            }
        }
    }
}

TEST_CASE("embed head is unit norm and rejects the zero vector", "[visual]") {
    auto rng = make_rng(29);
    VisualEncoder enc(rng, small_cfg());
    Tape tape;
    auto e = enc.embed(tape, randn(rng, {1, 16}, 1.0));
    double n = 0.0;
    for (double v : e->data) n += v * v;
    REQUIRE(std::abs(std::sqrt(n) - 1.0) < 1e-9);

    // Zero [CLS] through a zero-bias head must raise on normalization.
    enc.backbone_params().get("head.b")->data.assign(16, 0.0);
    REQUIRE_THROWS_AS(enc.embed(tape, zeros({1, 16})), TensorError);
}

TEST_CASE("embed head gradient", "[visual][grad]") {
    auto rng = make_rng(31);
    VisualEncoder enc(rng, small_cfg());
    auto cls = randn(rng, {1, 16}, 1.0, true);
    auto w = randn(rng, {1, 16}, 1.0);
    auto res = gradcheck([&](Tape& t) { return sum(t, mul(t, enc.embed(t, cls), w)); }, {cls});
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("channel attention gate limits", "[visual]") {
    auto rng = make_rng(37);
    auto cfg = small_cfg(Mechanism::channel_attention);
    VisualEncoder enc(rng, cfg);
    auto tokens = randn(rng, {4, 16}, 1.0);
    auto tcls = make_tcls(rng, 16);

    // Large positive bias saturates the gate at 1: output ~= input.
    enc.mechanism_params().get("channel_gate.w")->data.assign(16 * 16, 0.0);
    enc.mechanism_params().get("channel_gate.b")->data.assign(16, 40.0);
    Tape t1;
    auto near_identity = enc.channel_attention(t1, tokens, tcls);
    for (std::size_t i = 0; i < tokens->numel(); ++i) {
        REQUIRE(near_identity->data[i] == Catch::Approx(tokens->data[i]).margin(1e-9));
    }

    // Zero gate input -> sigmoid(0) = 0.5 exactly.
    enc.mechanism_params().get("channel_gate.b")->data.assign(16, 0.0);
    Tape t2;
    auto halved = enc.channel_attention(t2, tokens, tcls);
    for (std::size_t i = 0; i < tokens->numel(); ++i) {
        REQUIRE(halved->data[i] == Catch::Approx(0.5 * tokens->data[i]));
    }
}

TEST_CASE("channel attention gradient", "[visual][grad]") {
    auto rng = make_rng(41);
    VisualEncoder enc(rng, small_cfg(Mechanism::channel_attention));
    auto tokens = randn(rng, {4, 16}, 1.0, true);
    auto tvec = randn(rng, {1, 16}, 1.0, true);
    auto w = randn(rng, {4, 16}, 1.0);
    std::vector<TensorPtr> leaves = {tokens, tvec, enc.mechanism_params().get("channel_gate.w"),
                                     enc.mechanism_params().get("channel_gate.b")};
    auto res = gradcheck(
        [&](Tape& t) {
            TextCls tc{tvec, 0};
            return sum(t, mul(t, enc.channel_attention(t, tokens, tc), w));
        },
        leaves);
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("spatial attention limits and gradient", "[visual][grad]") {
    auto rng = make_rng(43);
    VisualEncoder enc(rng, small_cfg(Mechanism::spatial_attention));
    auto tokens = randn(rng, {4, 16}, 1.0);
    auto tcls = make_tcls(rng, 16);

    // Zero score vector -> uniform weights 1/m, mean-preserving scale -> identity.
    enc.mechanism_params().get("spatial_score.w")->data.assign(16 * 16, 0.0);
    enc.mechanism_params().get("spatial_score.b")->data.assign(16, 0.0);
    Tape t1;
    auto id = enc.spatial_attention(t1, tokens, tcls);
    for (std::size_t i = 0; i < tokens->numel(); ++i) {
        REQUIRE(id->data[i] == Catch::Approx(tokens->data[i]).margin(1e-12));
    }

    // A dominant score amplifies its token and suppresses the rest.
    VisualEncoder enc2(rng, small_cfg(Mechanism::spatial_attention));
    auto one_hot_tokens = zeros({4, 16});
    for (std::size_t c = 0; c < 16; ++c) {
        one_hot_tokens->at(0, c) = 3.0;  // token 0 aligned with the score vector
        one_hot_tokens->at(1, c) = 1.0;
    }
    enc2.mechanism_params().get("spatial_score.w")->data.assign(16 * 16, 0.0);
    enc2.mechanism_params().get("spatial_score.b")->data.assign(16, 1.0);
    Tape t2;
    auto amp = enc2.spatial_attention(t2, one_hot_tokens, tcls);
    REQUIRE(std::abs(amp->at(0, 0)) > std::abs(one_hot_tokens->at(0, 0)));
    REQUIRE(std::abs(amp->at(1, 0)) < std::abs(one_hot_tokens->at(1, 0)));

    auto tokens_g = randn(rng, {4, 16}, 1.0, true);
    auto tvec = randn(rng, {1, 16}, 1.0, true);
    auto w = randn(rng, {4, 16}, 1.0);
    VisualEncoder enc3(rng, small_cfg(Mechanism::spatial_attention));
    auto res = gradcheck(
        [&](Tape& t) {
            TextCls tc{tvec, 0};
            return sum(t, mul(t, enc3.spatial_attention(t, tokens_g, tc), w));
        },
        {tokens_g, tvec, enc3.mechanism_params().get("spatial_score.w"),
         enc3.mechanism_params().get("spatial_score.b")});
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("vpt prompts extend the in-layer token count and only prompts train", "[visual][grad]") {
    auto rng = make_rng(47);
    auto cfg = small_cfg(Mechanism::vpt);
    VisualEncoder enc(rng, cfg);
    auto image = uniform(rng, {3, 16, 16}, 0.0, 1.0);

    Tape tape;
    auto out = enc.encode(tape, image, Mechanism::vpt, nullptr);
    // token count inside a layer = m + 1 + prompt_count
    REQUIRE(out.attention[0][0]->rows() == 4 + 1 + cfg.vpt_prompt_count);
    REQUIRE(out.patch_tokens->rows() == 4);
    REQUIRE(out.patch_col_offset == 1 + cfg.vpt_prompt_count);

    // Frozen backbone: gradient reaches prompts only.
    enc.backbone_params().set_requires_grad(false);
    Tape t2;
    auto out2 = enc.encode(t2, image, Mechanism::vpt, nullptr);
    auto loss = sum(t2, out2.patch_tokens);
    t2.backward(loss);
    double prompt_grad = 0.0;
    for (const auto& [name, t] : enc.mechanism_params().items()) {
        for (double g : t->grad) prompt_grad += std::abs(g);
    }
    REQUIRE(prompt_grad > 0.0);
    for (const auto& [name, t] : enc.backbone_params().items()) {
        REQUIRE(t->grad.empty());  // frozen tensors carry no gradient buffer
    }
    enc.backbone_params().set_requires_grad(true);
}

TEST_CASE("vpt config requires prompts", "[visual]") {
    auto cfg = small_cfg(Mechanism::vpt);
    cfg.vpt_prompt_count = 0;
    REQUIRE_THROWS_AS(cfg.validate(), TensorError);
}

TEST_CASE("replace window helper validates its range", "[visual]") {
    REQUIRE(VisualConfig::window(2, 5, 12) == std::set<std::size_t>{2, 3, 4});
    REQUIRE_THROWS_AS(VisualConfig::window(5, 5, 12), TensorError);
    REQUIRE_THROWS_AS(VisualConfig::window(2, 13, 12), TensorError);

    VisualConfig cfg;
    cfg.replace_layers = {11, 12};
    REQUIRE_THROWS_AS(cfg.validate(), TensorError);
}

TEST_CASE("attention mass: full coverage, empty mask, and the k/m expectation", "[visual]") {
    const std::size_t grid = 4, patch = 8, m = grid * grid;
    auto rng = make_rng(53);

    Mask full_mask(32, 32);
    for (auto& v : full_mask.on) v = 1;
    auto attn = uniform(rng, {m + 1, m + 1}, 0.01, 1.0);
    REQUIRE(attention_mass_in_mask(*attn, full_mask, grid, patch) == Catch::Approx(1.0));

    Mask empty(32, 32);
    REQUIRE_THROWS_AS(attention_mass_in_mask(*attn, empty, grid, patch), TensorError);

    // Monte Carlo: random attention rows against a mask covering k patches.
    const std::size_t k = 5;
    Mask kmask(32, 32);
    for (std::size_t pidx = 0; pidx < k; ++pidx) {
        const std::size_t gr = pidx / grid, gc = pidx % grid;
        for (std::size_t r = 0; r < patch; ++r) {
            for (std::size_t c = 0; c < patch; ++c) kmask.at(gr * patch + r, gc * patch + c) = 1;
        }
    }
    double mean_mass = 0.0;
    const int trials = 4000;
    for (int i = 0; i < trials; ++i) {
        auto a = uniform(rng, {1, m + 1}, 0.0, 1.0);
        double row_sum = 0.0;
        for (double v : a->data) row_sum += v;
        for (auto& v : a->data) v /= row_sum;
        auto padded = tensor({1, m + 1}, a->data);
        mean_mass += attention_mass_in_mask(*padded, kmask, grid, patch);
    }
    mean_mass /= trials;
    REQUIRE(mean_mass == Catch::Approx(static_cast<double>(k) / m).margin(0.01));
}
