#pragma once

// Full model bundle: text encoder + visual encoder + mask decoder, with
// the parameter-set views the two training stages need (backbone vs
// mechanism + decoder).

#include <map>
#include <string>

#include "clsnav/decoder.hpp"
#include "clsnav/rng.hpp"
#include "clsnav/text_encoder.hpp"
#include "clsnav/visual_encoder.hpp"

namespace clsnav {

struct ModelConfig {
    VisualConfig visual;
    std::size_t text_layers = 4;
    std::size_t text_heads = 4;
    std::size_t decoder_layers = 2;
    std::size_t decoder_heads = 4;
    // T^cls source: final-layer [CLS] state by default; the projected
    // state is selectable for the ablation harness.
    bool text_post_projection = false;
    bool prompt_template = true;
};

class ClsClipModel {
public:
    ClsClipModel(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed)
        : cfg_(cfg),
          vocab_(vocab),
          text_(make_seeded_rng(seed, "init.text"), vocab, cfg.visual.d, cfg.text_layers, cfg.text_heads),
          visual_(make_seeded_rng(seed, "init.visual"), cfg.visual),
          decoder_(make_seeded_rng(seed, "init.decoder"), cfg.visual.d, cfg.decoder_heads, cfg.visual.patch_size,
                   cfg.visual.grid(), cfg.decoder_layers) {}

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    TextEncoder& text() { return text_; }
    const TextEncoder& text() const { return text_; }
    VisualEncoder& visual() { return visual_; }
    const VisualEncoder& visual() const { return visual_; }
    MaskDecoder& decoder() { return decoder_; }
    const MaskDecoder& decoder() const { return decoder_; }

    // Every parameter, prefixed: text.*, visual.*, mech.*, decoder.*.
    ParamSet all_params() const {
        ParamSet all;
        all.adopt("text.", text_.params());
        all.adopt("visual.", visual_.backbone_params());
        all.adopt("mech.", visual_.mechanism_params());
        all.adopt("decoder.", decoder_.params());
        return all;
    }

    // Dual-encoder backbone (what contrastive pretraining trains and
    // segmentation training freezes).
    ParamSet backbone_params() const {
        ParamSet p;
        p.adopt("text.", text_.params());
        p.adopt("visual.", visual_.backbone_params());
        return p;
    }

    // What segmentation training updates: L^i / prompts / gates + decoder.
    ParamSet segmentation_params() const {
        ParamSet p;
        p.adopt("mech.", visual_.mechanism_params());
        p.adopt("decoder.", decoder_.params());
        return p;
    }

    void freeze_backbone() {
        text_.params().set_requires_grad(false);
        visual_.backbone_params().set_requires_grad(false);
    }

    void unfreeze_backbone() {
        text_.params().set_requires_grad(true);
        visual_.backbone_params().set_requires_grad(true);
    }

    TextCls make_text_cls(Tape& tape, int category) const {
        return text_.encode_category(tape, vocab_, category, cfg_.text_post_projection);
    }

    // Detached per-category T^cls table; valid while the text encoder is
    // frozen (the segmentation stage and evaluation).
    std::map<int, TextCls> text_cls_table() const {
        std::map<int, TextCls> table;
        for (std::size_t c = 0; c < vocab_.word_count(); ++c) {
            Tape tape;
            auto tc = make_text_cls(tape, static_cast<int>(c));
            table[static_cast<int>(c)] = TextCls{clone_detached(*tc.vector), static_cast<int>(c)};
        }
        return table;
    }

    // Segmentation forward: encoder (with the configured mechanism), then
    // the decoder over (possibly re-weighted) patch tokens.
    TensorPtr segment_token_logits(Tape& tape, const TensorPtr& image, const TextCls& text_cls,
                                   EncoderOutput* capture = nullptr) const {
        auto enc = visual_.encode(tape, image, cfg_.visual.mechanism, &text_cls);
        auto feats = visual_.apply_output_mechanism(tape, enc.patch_tokens, &text_cls);
        if (capture) *capture = enc;
        return decoder_.decode_tokens(tape, feats, visual_.positional_embedding());
    }

    MaskLogits segment(const TensorPtr& image, const TextCls& text_cls, double threshold = 0.0) const {
        Tape tape;
        auto logits = segment_token_logits(tape, image, text_cls);
        return decoder_.to_mask_logits(*logits, threshold);
    }

    MaskLogits segment_category(const TensorPtr& image, int category, double threshold = 0.0) const {
        Tape tape;
        auto tcls = make_text_cls(tape, category);
        auto logits = segment_token_logits(tape, image, tcls);
        return decoder_.to_mask_logits(*logits, threshold);
    }

    // Pretraining path: plain encoder (no navigation), unit-norm embeddings.
    TensorPtr image_embedding(Tape& tape, const TensorPtr& image) const {
        auto enc = visual_.encode(tape, image, Mechanism::none, nullptr);
        return visual_.embed(tape, enc.cls_out);
    }

    TensorPtr text_embedding(Tape& tape, int category) const {
        return text_.contrastive_embedding(tape, vocab_, category);
    }

private:
    static std::mt19937_64 make_seeded_rng(std::uint64_t seed, const char* tag) {
        return make_rng(derive_seed(seed, tag));
    }

    ModelConfig cfg_;
    Vocabulary vocab_;
    TextEncoder text_;
    VisualEncoder visual_;
    MaskDecoder decoder_;
};

}  // namespace clsnav
