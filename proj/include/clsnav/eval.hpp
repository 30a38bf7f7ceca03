#pragma once

// Episode-style evaluation: each (image, present query category) pair is
// one binary-mask episode; per-class IoU aggregates intersection/union
// sums across episodes.

#include <map>
#include <vector>

#include "clsnav/clsclip.hpp"
#include "clsnav/data_synth.hpp"
#include "clsnav/metrics.hpp"

namespace clsnav {

// Queries every category in `query_classes` that is present in a sample.
inline EvalReport evaluate_classes(const ClsClipModel& model, const Corpus& corpus,
                                   const std::vector<int>& query_classes, int fold_id, const std::string& tag,
                                   std::size_t max_samples = 0) {
    const auto tcls = model.text_cls_table();
    IoUAccumulator acc;
    std::size_t taken = 0;
    for (const auto& sample : corpus.samples) {
        if (max_samples && taken >= max_samples) break;
        bool used = false;
        for (int c : query_classes) {
            if (!sample.present.count(c)) continue;
            auto pred = binarize(model.segment(tensor_from_image(sample.image), tcls.at(c)));
            acc.add(c, pred, sample.masks.at(c));
            used = true;
        }
        if (used) ++taken;
    }
    // Classes that never appeared score as unresolved 1.0 (empty/empty);
    // callers size the corpus so every fold class occurs.
    return acc.report(query_classes, fold_id, tag);
}

// Zero-shot protocol: query only the fold's unseen categories.
inline EvalReport evaluate_fold_unseen(const ClsClipModel& model, const Corpus& corpus, const FoldSplit& fold,
                                       std::size_t max_samples = 0) {
    return evaluate_classes(model, corpus, fold.unseen, fold.fold_id,
                            mechanism_name(model.config().visual.mechanism), max_samples);
}

// Diagnostic: fold-seen performance (training-distribution sanity).
inline EvalReport evaluate_fold_seen(const ClsClipModel& model, const Corpus& corpus, const FoldSplit& fold,
                                     std::size_t max_samples = 0) {
    return evaluate_classes(model, corpus, fold.seen, fold.fold_id,
                            mechanism_name(model.config().visual.mechanism), max_samples);
}

}  // namespace clsnav
