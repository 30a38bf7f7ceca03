#pragma once

// Small model/corpus configurations shared by the model-level tests;
// sized so forwards take microseconds, not milliseconds.

#include "clsnav/clsclip.hpp"
#include "clsnav/data_synth.hpp"

namespace clsnav::testing {

inline ModelConfig tiny_model_config(Mechanism mech = Mechanism::replace_cls) {
    ModelConfig cfg;
    cfg.visual.image_size = 16;
    cfg.visual.patch_size = 8;  // 2x2 grid, 4 patch tokens
    cfg.visual.n_layers = 3;
    cfg.visual.d = 16;
    cfg.visual.n_heads = 2;
    cfg.visual.replace_layers = {1};
    cfg.visual.mechanism = mech;
    cfg.visual.vpt_prompt_count = 2;
    cfg.text_layers = 1;
    cfg.text_heads = 2;
    cfg.decoder_layers = 1;
    cfg.decoder_heads = 2;
    return cfg;
}

inline SynthSpec tiny_spec(std::uint64_t seed = 1) {
    SynthSpec spec;
    spec.image_size = 16;
    spec.min_objects = 1;
    spec.max_objects = 1;
    spec.seed = seed;
    return spec;
}

inline Vocabulary default_vocab() {
    return Vocabulary(default_categories());
}

}  // namespace clsnav::testing
