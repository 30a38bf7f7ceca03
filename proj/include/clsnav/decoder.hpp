#pragma once

// Lightweight mask decoder: two transformer layers over the patch
// tokens, then a shared per-token linear head emitting patch_size^2
// logits that tile the full-resolution logit map.

#include <vector>

#include "clsnav/image_io.hpp"
#include "clsnav/nn.hpp"

namespace clsnav {

struct MaskLogits {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<double> logits;  // row-major H x W
    double threshold = 0.0;
};

inline Mask binarize(const MaskLogits& ml) {
    Mask m(ml.h, ml.w);
    for (std::size_t i = 0; i < ml.logits.size(); ++i) m.on[i] = ml.logits[i] > ml.threshold ? 1 : 0;
    return m;
}

class MaskDecoder {
public:
    MaskDecoder(std::mt19937_64 rng, std::size_t d, std::size_t n_heads, std::size_t patch_size, std::size_t grid,
                std::size_t n_layers = 2)
        : d_(d), patch_(patch_size), grid_(grid) {
        for (std::size_t i = 0; i < n_layers; ++i) {
            layers_.push_back(TransformerLayer::create(rng, params_, "layer" + std::to_string(i), d, n_heads));
        }
        head_ = Linear::create(rng, params_, "head", d, patch_size * patch_size);
    }

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::size_t tokens() const { return grid_ * grid_; }
    std::size_t image_size() const { return grid_ * patch_; }

    // Token-major logits [m, patch^2]; `positional` is added to the input
    // (the encoder's table by default, shared and frozen).
    TensorPtr decode_tokens(Tape& tape, const TensorPtr& tokens, const TensorPtr& positional) const {
        if (tokens->rank() != 2 || tokens->rows() != this->tokens() || tokens->cols() != d_) {
            throw TensorError("decode_tokens: expected [" + std::to_string(this->tokens()) + ", " +
                              std::to_string(d_) + "] tokens, got " + shape_str(tokens->shape));
        }
        auto x = add(tape, tokens, positional);
        for (const auto& layer : layers_) x = layer.forward(tape, x).out;
        return head_.forward(tape, x);
    }

    // Rearranges token-major logits into the H x W pixel map: token
    // (gr, gc) owns the patch at rows gr*p.., cols gc*p..
    MaskLogits to_mask_logits(const Tensor& token_logits, double threshold = 0.0) const {
        const std::size_t p2 = patch_ * patch_;
        if (token_logits.rank() != 2 || token_logits.rows() != tokens() || token_logits.cols() != p2) {
            throw TensorError("to_mask_logits: expected [" + std::to_string(tokens()) + ", " + std::to_string(p2) +
                              "] logits, got " + shape_str(token_logits.shape));
        }
        MaskLogits ml;
        ml.h = ml.w = image_size();
        ml.threshold = threshold;
        ml.logits.assign(ml.h * ml.w, 0.0);
        for (std::size_t gr = 0; gr < grid_; ++gr) {
            for (std::size_t gc = 0; gc < grid_; ++gc) {
                const std::size_t j = gr * grid_ + gc;
                for (std::size_t pr = 0; pr < patch_; ++pr) {
                    for (std::size_t pc = 0; pc < patch_; ++pc) {
                        ml.logits[(gr * patch_ + pr) * ml.w + gc * patch_ + pc] =
                            token_logits.at(j, pr * patch_ + pc);
                    }
                }
            }
        }
        return ml;
    }

    // Ground-truth mask rearranged to the token-major layout, for the
    // pixel BCE loss against decode_tokens output.
    TensorPtr mask_to_token_targets(const Mask& mask) const {
        if (mask.h != image_size() || mask.w != image_size()) {
            throw TensorError("mask_to_token_targets: mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                              " does not match decoder image size " + std::to_string(image_size()));
        }
        const std::size_t p2 = patch_ * patch_;
        std::vector<double> t(tokens() * p2, 0.0);
        for (std::size_t gr = 0; gr < grid_; ++gr) {
            for (std::size_t gc = 0; gc < grid_; ++gc) {
                const std::size_t j = gr * grid_ + gc;
                for (std::size_t pr = 0; pr < patch_; ++pr) {
                    for (std::size_t pc = 0; pc < patch_; ++pc) {
                        t[j * p2 + pr * patch_ + pc] =
                            mask.at(gr * patch_ + pr, gc * patch_ + pc) ? 1.0 : 0.0;
                    }
                }
            }
        }
        return tensor({tokens(), p2}, std::move(t));
    }

private:
    std::size_t d_, patch_, grid_;
    ParamSet params_;
    std::vector<TransformerLayer> layers_;
    Linear head_;
};

}  // namespace clsnav
