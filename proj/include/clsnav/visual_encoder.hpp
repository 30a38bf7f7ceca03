#pragma once

// ViT-style visual encoder with the one-way text-[CLS] replacement
// window, plus the comparison mechanisms (channel attention, spatial
// attention, deep VPT) and the [CLS]-attention mass probe.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clsnav/image_io.hpp"
#include "clsnav/nn.hpp"
#include "clsnav/rng.hpp"
#include "clsnav/tensor.hpp"
#include "clsnav/text_encoder.hpp"

namespace clsnav {

enum class Mechanism { replace_cls, channel_attention, spatial_attention, vpt, none };

inline std::string mechanism_name(Mechanism m) {
    switch (m) {
        case Mechanism::replace_cls: return "replace_cls";
        case Mechanism::channel_attention: return "channel_attention";
        case Mechanism::spatial_attention: return "spatial_attention";
        case Mechanism::vpt: return "vpt";
        case Mechanism::none: return "none";
    }
    throw TensorError("unknown mechanism");
}

inline Mechanism mechanism_from_name(const std::string& s) {
    if (s == "replace_cls") return Mechanism::replace_cls;
    if (s == "channel_attention") return Mechanism::channel_attention;
    if (s == "spatial_attention") return Mechanism::spatial_attention;
    if (s == "vpt") return Mechanism::vpt;
    if (s == "none") return Mechanism::none;
    throw TensorError("unknown mechanism '" + s + "'");
}

struct VisualConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t n_layers = 12;
    std::size_t d = 64;
    std::size_t n_heads = 4;
    // Replacement layer set; the common case is the contiguous window
    // [n1, n2), but the layer ablation also runs scattered sets.
    std::set<std::size_t> replace_layers = {2, 3, 4};
    Mechanism mechanism = Mechanism::replace_cls;
    std::size_t vpt_prompt_count = 8;

    static std::set<std::size_t> window(std::size_t n1, std::size_t n2, std::size_t n_layers) {
        if (!(n1 < n2 && n2 <= n_layers)) {
            throw TensorError("replace window [" + std::to_string(n1) + ", " + std::to_string(n2) +
                              ") out of range for " + std::to_string(n_layers) + " layers");
        }
        std::set<std::size_t> s;
        for (std::size_t i = n1; i < n2; ++i) s.insert(i);
        return s;
    }

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return grid() * grid(); }

    void validate() const {
        if (patch_size == 0 || image_size % patch_size != 0) {
            throw TensorError("image size " + std::to_string(image_size) + " not divisible by patch size " +
                              std::to_string(patch_size));
        }
        for (auto i : replace_layers) {
            if (i >= n_layers) {
                throw TensorError("replace layer " + std::to_string(i) + " out of range for " +
                                  std::to_string(n_layers) + " layers");
            }
        }
        if (mechanism == Mechanism::vpt && vpt_prompt_count == 0) {
            throw TensorError("vpt mechanism requires vpt_prompt_count > 0");
        }
        if (d % n_heads != 0) {
            throw TensorError("latent width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                              " heads");
        }
    }
};

struct EncoderOutput {
    TensorPtr patch_tokens;  // [m, d]
    TensorPtr cls_out;       // [1, d]
    // attention[layer][head] is [T, T] with rows summing to 1.
    std::vector<std::vector<TensorPtr>> attention;
    // Output [CLS] state of every layer; in-window outputs that the next
    // replacement discards are visible here for gradient audits.
    std::vector<TensorPtr> layer_cls_out;
    std::size_t patch_col_offset = 1;  // column of patch 0 in the attention maps
};

namespace detail {

// Row-major patch extraction: patch j holds its 3*p*p source pixels
// channel-major. Constant w.r.t. the tape (images carry no gradient).
inline TensorPtr image_to_patch_matrix(const Tensor& image, std::size_t patch, std::size_t image_size) {
    image.require_rank(3, "patchify image");
    if (image.shape[0] != 3 || image.shape[1] != image_size || image.shape[2] != image_size) {
        throw TensorError("patchify: expected [3, " + std::to_string(image_size) + ", " + std::to_string(image_size) +
                          "] image, got " + shape_str(image.shape));
    }
    const std::size_t g = image_size / patch;
    const std::size_t m = g * g;
    const std::size_t pd = 3 * patch * patch;
    std::vector<double> d(m * pd);
    for (std::size_t gr = 0; gr < g; ++gr) {
        for (std::size_t gc = 0; gc < g; ++gc) {
            const std::size_t j = gr * g + gc;
            std::size_t k = 0;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                for (std::size_t pr = 0; pr < patch; ++pr) {
                    for (std::size_t pc = 0; pc < patch; ++pc) {
                        d[j * pd + k++] =
                            image.data[(ch * image_size + gr * patch + pr) * image_size + gc * patch + pc];
                    }
                }
            }
        }
    }
    return tensor({m, pd}, std::move(d));
}

}  // namespace detail

class VisualEncoder {
public:
    VisualEncoder(std::mt19937_64 rng, const VisualConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t pd = 3 * cfg_.patch_size * cfg_.patch_size;
        patch_embed_ = Linear::create(rng, backbone_, "patch_embed", pd, cfg_.d, 1.0 / std::sqrt(double(pd)));
        pos_ = backbone_.add("pos", randn(rng, {cfg_.tokens(), cfg_.d}, 0.02, true));
        cls_ = backbone_.add("cls", randn(rng, {1, cfg_.d}, 0.02, true));
        for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
            layers_.push_back(
                TransformerLayer::create(rng, backbone_, "layer" + std::to_string(i), cfg_.d, cfg_.n_heads));
        }
        head_ = Linear::create_head(rng, backbone_, "head", cfg_.d, cfg_.d);

        // Identity-like init keeps the injected token close to T^cls at step 0.
        for (auto i : cfg_.replace_layers) {
            auto w = randn(rng, {cfg_.d, cfg_.d}, 0.01, true);
            for (std::size_t k = 0; k < cfg_.d; ++k) w->at(k, k) += 1.0;
            text_proj_[i] = mech_.add("text_proj" + std::to_string(i) + ".w", w);
        }
        if (cfg_.mechanism == Mechanism::vpt) {
            for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
                vpt_prompts_.push_back(
                    mech_.add("vpt_prompts" + std::to_string(i), randn(rng, {cfg_.vpt_prompt_count, cfg_.d}, 0.02, true)));
            }
        }
        if (cfg_.mechanism == Mechanism::channel_attention) {
            gate_ = Linear::create(rng, mech_, "channel_gate", cfg_.d, cfg_.d);
        }
        if (cfg_.mechanism == Mechanism::spatial_attention) {
            score_ = Linear::create(rng, mech_, "spatial_score", cfg_.d, cfg_.d);
        }
    }

    const VisualConfig& config() const { return cfg_; }
    ParamSet& backbone_params() { return backbone_; }
    const ParamSet& backbone_params() const { return backbone_; }
    ParamSet& mechanism_params() { return mech_; }
    const ParamSet& mechanism_params() const { return mech_; }
    const TensorPtr& positional_embedding() const { return pos_; }

    // Patch tokens with positional encodings added (the `add_positional`
    // switch exists for the permutation-equivariance checks).
    TensorPtr patchify(Tape& tape, const TensorPtr& image, bool add_positional = true) const {
        auto patches = detail::image_to_patch_matrix(*image, cfg_.patch_size, cfg_.image_size);
        auto tok = patch_embed_.forward(tape, patches);
        if (add_positional) tok = add(tape, tok, pos_);
        return tok;
    }

    // Runs the stack under `mechanism`; `text_cls` is required only when
    // a non-empty replacement window is active.
    EncoderOutput encode(Tape& tape, const TensorPtr& image, Mechanism mechanism,
                         const TextCls* text_cls = nullptr) const {
        if (mechanism == Mechanism::replace_cls && !cfg_.replace_layers.empty() && text_cls == nullptr) {
            throw TensorError("encode: replace_cls mechanism needs a text [CLS] token");
        }
        if (text_cls && text_cls->vector->shape != Shape{1, cfg_.d}) {
            throw TensorError("encode: text [CLS] shape " + shape_str(text_cls->vector->shape) +
                              " does not match latent width " + std::to_string(cfg_.d));
        }
        const bool vpt = mechanism == Mechanism::vpt;
        const std::size_t m = cfg_.tokens();
        const std::size_t p = vpt ? cfg_.vpt_prompt_count : 0;

        EncoderOutput out;
        out.patch_col_offset = 1 + p;

        auto cls_state = cls_;
        auto patch_state = patchify(tape, image);
        for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
            if (mechanism == Mechanism::replace_cls && cfg_.replace_layers.count(i)) {
                // Layer input [CLS] slot becomes L^i(T^cls); the previous
                // layer's [CLS] output is dropped.
                cls_state = matmul(tape, text_cls->vector, text_proj_.at(i));
            }
            TensorPtr x = vpt ? concat(tape, {cls_state, vpt_prompts_[i], patch_state}, 0)
                              : concat(tape, {cls_state, patch_state}, 0);
            auto res = layers_[i].forward(tape, x);
            cls_state = slice(tape, res.out, 0, 0, 1);
            patch_state = slice(tape, res.out, 0, 1 + p, 1 + p + m);
            out.attention.push_back(std::move(res.attn_probs));
            out.layer_cls_out.push_back(cls_state);
        }
        out.cls_out = cls_state;
        out.patch_tokens = patch_state;
        return out;
    }

    // Contrastive head: projected final [CLS], unit norm.
    TensorPtr embed(Tape& tape, const TensorPtr& cls_out) const {
        return l2_normalize(tape, head_.forward(tape, cls_out));
    }

    // Per-channel sigmoid gate from T^cls, broadcast over all tokens.
    TensorPtr channel_attention(Tape& tape, const TensorPtr& tokens, const TextCls& text_cls) const {
        if (cfg_.mechanism != Mechanism::channel_attention) {
            throw TensorError("channel_attention: model was not built with this mechanism");
        }
        auto gate = sigmoid(tape, gate_.forward(tape, text_cls.vector));              // [1, d]
        auto gate_rows = matmul(tape, full({tokens->rows(), 1}, 1.0), gate);          // [m, d]
        return mul(tape, tokens, gate_rows);
    }

    // Per-token softmax weight from E . linear(T^cls), mean-preserving scale.
    TensorPtr spatial_attention(Tape& tape, const TensorPtr& tokens, const TextCls& text_cls) const {
        if (cfg_.mechanism != Mechanism::spatial_attention) {
            throw TensorError("spatial_attention: model was not built with this mechanism");
        }
        auto v = score_.forward(tape, text_cls.vector);                                // [1, d]
        auto scores = matmul(tape, tokens, transpose(tape, v));                        // [m, 1]
        auto weights = softmax(tape, scores, 0);
        auto weight_rows = matmul(tape, weights, full({1, tokens->cols()}, 1.0));      // [m, d]
        return scale(tape, mul(tape, tokens, weight_rows), static_cast<double>(tokens->rows()));
    }

    // Output-side mechanism application; identity for the in-encoder ones.
    TensorPtr apply_output_mechanism(Tape& tape, const TensorPtr& tokens, const TextCls* text_cls) const {
        switch (cfg_.mechanism) {
            case Mechanism::channel_attention:
                if (!text_cls) throw TensorError("channel_attention needs a text [CLS] token");
                return channel_attention(tape, tokens, *text_cls);
            case Mechanism::spatial_attention:
                if (!text_cls) throw TensorError("spatial_attention needs a text [CLS] token");
                return spatial_attention(tape, tokens, *text_cls);
            default:
                return tokens;
        }
    }

private:
    VisualConfig cfg_;
    ParamSet backbone_;
    ParamSet mech_;
    Linear patch_embed_;
    TensorPtr pos_, cls_;
    std::vector<TransformerLayer> layers_;
    Linear head_;
    std::map<std::size_t, TensorPtr> text_proj_;  // L^i, weight only
    std::vector<TensorPtr> vpt_prompts_;
    Linear gate_, score_;
};

// Fraction of [CLS]-row attention (over patch columns) that falls on
// patches whose ground-truth coverage exceeds one half.
inline double attention_mass_in_mask(const Tensor& attn, const Mask& gt, std::size_t grid, std::size_t patch_size,
                                     std::size_t patch_col_offset = 1) {
    attn.require_rank(2, "attention map");
    const std::size_t m = grid * grid;
    if (attn.cols() < patch_col_offset + m) {
        throw TensorError("attention map " + shape_str(attn.shape) + " too small for " + std::to_string(m) +
                          " patches at offset " + std::to_string(patch_col_offset));
    }
    if (gt.h != grid * patch_size || gt.w != grid * patch_size) {
        throw TensorError("attention_mass_in_mask: mask " + std::to_string(gt.h) + "x" + std::to_string(gt.w) +
                          " does not match the patch grid");
    }
    if (gt.empty_mask()) throw TensorError("attention_mass_in_mask: empty ground-truth mask");

    double covered = 0.0, total = 0.0;
    for (std::size_t gr = 0; gr < grid; ++gr) {
        for (std::size_t gc = 0; gc < grid; ++gc) {
            std::size_t on = 0;
            for (std::size_t pr = 0; pr < patch_size; ++pr) {
                for (std::size_t pc = 0; pc < patch_size; ++pc) {
                    on += gt.at(gr * patch_size + pr, gc * patch_size + pc) ? 1 : 0;
                }
            }
            const double coverage = static_cast<double>(on) / static_cast<double>(patch_size * patch_size);
            const double a = attn.at(0, patch_col_offset + gr * grid + gc);
            total += a;
            if (coverage > 0.5) covered += a;
        }
    }
    if (total <= 0.0) return 0.0;
    return covered / total;
}

}  // namespace clsnav
