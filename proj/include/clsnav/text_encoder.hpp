#pragma once

// Text side of the dual encoder: one-token category words, optionally
// wrapped in a fixed 3-token prompt template, encoded by a small
// transformer; the final [CLS] state is the category token handed to
// the visual encoder.

#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "clsnav/nn.hpp"
#include "clsnav/rng.hpp"
#include "clsnav/tensor.hpp"

namespace clsnav {

class VocabError : public std::runtime_error {
public:
    explicit VocabError(const std::string& msg) : std::runtime_error(msg) {}
};

// Closed category vocabulary. Three extra token ids after the category
// words are reserved for the prompt template ("a photo of a <word>"
// collapsed to three tokens).
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> words, bool use_prompt_template = true)
        : words_(std::move(words)), use_template_(use_prompt_template) {
        for (std::size_t i = 0; i < words_.size(); ++i) {
            if (!index_.emplace(words_[i], i).second) {
                throw VocabError("duplicate category word '" + words_[i] + "'");
            }
        }
    }

    std::size_t word_count() const { return words_.size(); }
    std::size_t token_count() const { return words_.size() + 3; }
    bool uses_template() const { return use_template_; }

    const std::string& word(std::size_t id) const {
        if (id >= words_.size()) throw VocabError("category id " + std::to_string(id) + " out of range");
        return words_[id];
    }

    std::size_t lookup(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw VocabError("word '" + word + "' not in vocabulary");
        return it->second;
    }

    // Token sequence fed to the encoder for one category.
    std::vector<std::size_t> tokens_for(std::size_t category_id) const {
        if (category_id >= words_.size()) {
            throw VocabError("category id " + std::to_string(category_id) + " out of vocabulary (size " +
                             std::to_string(words_.size()) + ")");
        }
        if (!use_template_) return {category_id};
        const std::size_t t0 = words_.size();
        return {t0, t0 + 1, t0 + 2, category_id};
    }

    std::size_t max_sequence() const { return 1 + (use_template_ ? 4 : 1); }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw VocabError(path.string() + ": cannot open for writing");
        os << nlohmann::json(words_).dump(2) << "\n";
    }

    static Vocabulary load(const std::filesystem::path& path, bool use_prompt_template = true) {
        std::ifstream is(path);
        if (!is) throw VocabError(path.string() + ": cannot open");
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw VocabError(path.string() + ": malformed vocabulary: " + e.what());
        }
        return Vocabulary(j.get<std::vector<std::string>>(), use_prompt_template);
    }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
    bool use_template_ = true;
};

struct TextCls {
    TensorPtr vector;  // [1, d], the shared latent width
    int category_id = -1;
};

class TextEncoder {
public:
    TextEncoder(std::mt19937_64 rng, const Vocabulary& vocab, std::size_t d, std::size_t n_layers,
                std::size_t n_heads)
        : d_(d) {
        tok_emb_ = params_.add("tok_emb", randn(rng, {vocab.token_count(), d}, 0.02, true));
        pos_emb_ = params_.add("pos_emb", randn(rng, {vocab.max_sequence(), d}, 0.02, true));
        cls_ = params_.add("cls", randn(rng, {1, d}, 0.02, true));
        for (std::size_t i = 0; i < n_layers; ++i) {
            layers_.push_back(TransformerLayer::create(rng, params_, "layer" + std::to_string(i), d, n_heads));
        }
        // Contrastive projection; zero weight keeps step-0 similarities uniform.
        proj_ = Linear::create_head(rng, params_, "proj", d, d);
    }

    std::size_t width() const { return d_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // Final-layer [CLS]-position state over [CLS] + token embeddings.
    TensorPtr encode_tokens(Tape& tape, const std::vector<std::size_t>& token_ids) const {
        if (token_ids.empty()) throw VocabError("encode_tokens: empty token sequence");
        const std::size_t seq = 1 + token_ids.size();
        if (seq > pos_emb_->rows()) {
            throw VocabError("encode_tokens: sequence length " + std::to_string(seq) +
                             " exceeds positional table " + std::to_string(pos_emb_->rows()));
        }
        auto toks = embedding(tape, tok_emb_, token_ids);
        auto x = concat(tape, {cls_, toks}, 0);
        x = add(tape, x, slice(tape, pos_emb_, 0, 0, seq));
        for (const auto& layer : layers_) x = layer.forward(tape, x).out;
        return slice(tape, x, 0, 0, 1);
    }

    TextCls encode_category(Tape& tape, const Vocabulary& vocab, int category_id,
                            bool post_projection = false) const {
        auto state = encode_tokens(tape, vocab.tokens_for(static_cast<std::size_t>(category_id)));
        if (post_projection) state = proj_.forward(tape, state);
        return TextCls{state, category_id};
    }

    // Unit-norm embedding used by the contrastive loss and retrieval.
    TensorPtr contrastive_embedding(Tape& tape, const Vocabulary& vocab, int category_id) const {
        auto state = encode_tokens(tape, vocab.tokens_for(static_cast<std::size_t>(category_id)));
        return l2_normalize(tape, proj_.forward(tape, state));
    }

private:
    std::size_t d_;
    ParamSet params_;
    TensorPtr tok_emb_, pos_emb_, cls_;
    std::vector<TransformerLayer> layers_;
    Linear proj_;
};

}  // namespace clsnav
