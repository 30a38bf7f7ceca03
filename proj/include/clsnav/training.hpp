#pragma once

// Two-stage optimization: contrastive dual-encoder pretraining, then
// frozen-backbone segmentation training of the mechanism parameters and
// the decoder, under the fold-inductive protocol.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsnav/checkpoint.hpp"
#include "clsnav/clsclip.hpp"
#include "clsnav/data_synth.hpp"
#include "clsnav/optim.hpp"
#include "clsnav/rng.hpp"

namespace clsnav {

class TrainError : public std::runtime_error {
public:
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
    std::string stage = "segment";  // "pretrain" | "segment"
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double lr = 0.001;
    double weight_decay = 0.01;
    double eta_min = 0.0;
    std::size_t restart_period = 50;
    double temperature = 0.07;  // pretraining only, fixed (not learned)
    std::uint64_t seed = 0;
    // Pretraining may stop once held-out retrieval reaches this level;
    // 0 disables early stopping.
    double early_stop_retrieval = 0.0;

    void validate() const {
        if (lr <= 0.0) throw TrainError("train config: lr must be > 0");
        if (epochs < 1) throw TrainError("train config: epochs must be >= 1");
        if (temperature <= 0.0) throw TrainError("train config: temperature must be > 0");
        if (restart_period < 1) throw TrainError("train config: restart_period must be >= 1");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"stage", stage},
                              {"epochs", epochs},
                              {"batch_size", batch_size},
                              {"lr", lr},
                              {"weight_decay", weight_decay},
                              {"eta_min", eta_min},
                              {"restart_period", restart_period},
                              {"temperature", temperature},
                              {"seed", seed},
                              {"early_stop_retrieval", early_stop_retrieval}};
    }
};

namespace detail {

inline void log_line(std::ostream* log, nlohmann::json j) {
    if (log) *log << j.dump() << "\n";
}

}  // namespace detail

// Indices of corpus samples holding exactly one object (the pretraining
// positives: image of one class paired with that class word).
inline std::vector<std::size_t> single_object_indices(const Corpus& corpus) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        if (corpus.samples[i].objects.size() == 1) out.push_back(i);
    }
    return out;
}

// Top-1 image->text retrieval over the category words.
inline double retrieval_accuracy(const ClsClipModel& model, const Corpus& corpus,
                                 const std::vector<std::size_t>& indices) {
    if (indices.empty()) return 0.0;
    std::vector<std::vector<double>> text_embs;
    for (std::size_t c = 0; c < model.vocab().word_count(); ++c) {
        Tape tape;
        text_embs.push_back(model.text_embedding(tape, static_cast<int>(c))->data);
    }
    std::size_t hits = 0;
    for (auto idx : indices) {
        const auto& sample = corpus.samples[idx];
        Tape tape;
        auto emb = model.image_embedding(tape, tensor_from_image(sample.image));
        int best = -1;
        double best_sim = -2.0;
        for (std::size_t c = 0; c < text_embs.size(); ++c) {
            double sim = 0.0;
            for (std::size_t k = 0; k < emb->numel(); ++k) sim += emb->data[k] * text_embs[c][k];
            if (sim > best_sim) {
                best_sim = sim;
                best = static_cast<int>(c);
            }
        }
        if (best == sample.objects[0].category) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(indices.size());
}

// Symmetric in-batch contrastive pretraining of both encoders. Batches
// are drawn with distinct categories (one image per class), the cleanest
// desk-scale analog of caption pairs; the effective batch is therefore
// capped at the category count.
inline Checkpoint contrastive_pretrain(ClsClipModel& model, const Corpus& corpus, const TrainConfig& cfg,
                                       std::ostream* log = nullptr) {
    cfg.validate();
    const auto singles = single_object_indices(corpus);
    if (singles.empty()) throw TrainError("contrastive_pretrain: corpus has no single-object samples");

    // Deterministic held-out split for retrieval (last ~15%).
    const std::size_t held = std::max<std::size_t>(1, singles.size() / 7);
    std::vector<std::size_t> train_idx(singles.begin(), singles.end() - static_cast<std::ptrdiff_t>(held));
    std::vector<std::size_t> held_idx(singles.end() - static_cast<std::ptrdiff_t>(held), singles.end());
    if (train_idx.empty()) throw TrainError("contrastive_pretrain: corpus too small for a held-out split");

    // Per-category queues of training images.
    const std::size_t n_cats = model.vocab().word_count();
    std::vector<std::vector<std::size_t>> by_cat(n_cats);
    for (auto idx : train_idx) {
        by_cat[static_cast<std::size_t>(corpus.samples[idx].objects[0].category)].push_back(idx);
    }
    std::vector<std::size_t> usable_cats;
    for (std::size_t c = 0; c < n_cats; ++c) {
        if (!by_cat[c].empty()) usable_cats.push_back(c);
    }
    const std::size_t batch = std::min<std::size_t>(cfg.batch_size, usable_cats.size());
    if (batch < 2) throw TrainError("contrastive_pretrain: need a batch of at least 2 distinct classes");

    model.unfreeze_backbone();
    auto params = model.backbone_params();
    AdamW opt(params, AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    auto rng = make_rng(derive_seed(cfg.seed, "pretrain.batches"));

    double last_loss = 0.0;
    double retrieval = 0.0;
    std::size_t epochs_run = 0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_warm_restart_lr(cfg.lr, cfg.eta_min, cfg.restart_period, epoch);
        // Fresh shuffles per epoch; batches walk the per-class queues.
        for (auto& q : by_cat) std::shuffle(q.begin(), q.end(), rng);
        std::vector<std::size_t> cats = usable_cats;
        std::shuffle(cats.begin(), cats.end(), rng);
        std::size_t max_len = 0;
        for (auto c : usable_cats) max_len = std::max(max_len, by_cat[c].size());

        for (std::size_t round = 0; round < max_len; ++round) {
            std::vector<std::size_t> chosen_cats(cats.begin(), cats.begin() + static_cast<std::ptrdiff_t>(batch));
            std::rotate(cats.begin(), cats.begin() + 1, cats.end());

            Tape tape;
            std::vector<TensorPtr> img_rows, txt_rows;
            std::vector<std::size_t> diag(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& queue = by_cat[chosen_cats[b]];
                const auto& sample = corpus.samples[queue[round % queue.size()]];
                img_rows.push_back(model.image_embedding(tape, tensor_from_image(sample.image)));
                txt_rows.push_back(model.text_embedding(tape, static_cast<int>(chosen_cats[b])));
                diag[b] = b;
            }
            auto z_img = concat(tape, img_rows, 0);
            auto z_txt = concat(tape, txt_rows, 0);
            auto logits = scale(tape, matmul(tape, z_img, transpose(tape, z_txt)), 1.0 / cfg.temperature);
            auto loss_i = cross_entropy(tape, logits, diag);
            auto loss_t = cross_entropy(tape, transpose(tape, logits), diag);
            auto loss = scale(tape, add(tape, loss_i, loss_t), 0.5);
            last_loss = loss->value();
            if (!std::isfinite(last_loss)) {
                throw TrainError("contrastive_pretrain: non-finite loss at step " + std::to_string(step));
            }
            params.zero_grad();
            tape.backward(loss);
            opt.step(lr);
            ++step;
        }

        retrieval = retrieval_accuracy(model, corpus, held_idx);
        epochs_run = epoch + 1;
        detail::log_line(log, {{"stage", "pretrain"},
                               {"epoch", epoch},
                               {"step", step},
                               {"lr", lr},
                               {"loss", last_loss},
                               {"retrieval", retrieval}});
        if (cfg.early_stop_retrieval > 0.0 && retrieval >= cfg.early_stop_retrieval) break;
    }

    return checkpoint_from_params(model.backbone_params(), cfg.to_json(), "pretrain",
                                  {{"final_loss", last_loss},
                                   {"retrieval", retrieval},
                                   {"epochs_run", epochs_run},
                                   {"held_out", held_idx.size()}});
}

struct SegTrainHooks {
    // Called for every training query (sample id, queried category).
    std::function<void(std::size_t, int)> on_query;
    // Called after each epoch with the epoch index.
    std::function<void(std::size_t)> on_epoch_end;
};

// Frozen-backbone segmentation training on fold-seen categories only.
// Each query is (image, one present seen category) with per-pixel BCE.
inline Checkpoint train_segmentation(ClsClipModel& model, const Corpus& corpus, const FoldSplit& fold,
                                     const Checkpoint& pretrained, const TrainConfig& cfg, std::ostream* log = nullptr,
                                     const SegTrainHooks* hooks = nullptr) {
    cfg.validate();
    if (pretrained.stage != "pretrain") {
        throw TrainError("train_segmentation: expected a pretrain checkpoint, got stage '" + pretrained.stage + "'");
    }
    load_state(model.all_params(), pretrained, {"text.", "visual."});
    model.freeze_backbone();

    auto trainable = model.segmentation_params();
    trainable.set_requires_grad(true);
    AdamW opt(trainable, AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});

    // Text side is frozen: one detached T^cls per category.
    const auto tcls = model.text_cls_table();

    // Samples with at least one seen category present.
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        for (int c : corpus.samples[i].present) {
            if (fold.is_seen(c)) {
                eligible.push_back(i);
                break;
            }
        }
    }
    if (eligible.empty()) throw TrainError("train_segmentation: no samples with fold-seen categories");

    auto rng = make_rng(derive_seed(cfg.seed, "segment.sampler"));
    const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);

    double last_loss = 0.0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_warm_restart_lr(cfg.lr, cfg.eta_min, cfg.restart_period, epoch);
        std::shuffle(eligible.begin(), eligible.end(), rng);

        for (std::size_t chunk = 0; chunk < eligible.size(); chunk += batch) {
            const std::size_t chunk_size = std::min(batch, eligible.size() - chunk);
            trainable.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t n = chunk; n < chunk + chunk_size; ++n) {
                const auto& sample = corpus.samples[eligible[n]];
                std::vector<int> seen_present;
                for (int c : sample.present) {
                    if (fold.is_seen(c)) seen_present.push_back(c);
                }
                std::uniform_int_distribution<std::size_t> pick(0, seen_present.size() - 1);
                const int category = seen_present[pick(rng)];
                if (hooks && hooks->on_query) hooks->on_query(sample.id, category);

                Tape tape;
                auto logits = model.segment_token_logits(tape, tensor_from_image(sample.image), tcls.at(category));
                auto targets = model.decoder().mask_to_token_targets(sample.masks.at(category));
                auto loss = bce_with_logits(tape, logits, targets);
                const double lv = loss->value();
                if (!std::isfinite(lv)) {
                    throw TrainError("train_segmentation: non-finite loss at step " + std::to_string(step));
                }
                batch_loss += lv;
                // Mean-of-batch gradients via seeding each sample with 1/B.
                tape.backward(loss, 1.0 / static_cast<double>(chunk_size));
            }
            opt.step(lr);
            last_loss = batch_loss / static_cast<double>(chunk_size);
            ++step;
        }
        detail::log_line(log, {{"stage", "segment"},
                               {"epoch", epoch},
                               {"step", step},
                               {"lr", lr},
                               {"loss", last_loss},
                               {"fold", fold.fold_id},
                               {"mechanism", mechanism_name(model.config().visual.mechanism)}});
        if (hooks && hooks->on_epoch_end) hooks->on_epoch_end(epoch);
    }

    auto cfg_json = cfg.to_json();
    cfg_json["fold"] = fold.fold_id;
    cfg_json["mechanism"] = mechanism_name(model.config().visual.mechanism);
    return checkpoint_from_params(model.all_params(), cfg_json, "segment",
                                  {{"final_loss", last_loss}, {"train_samples", eligible.size()}});
}

}  // namespace clsnav
