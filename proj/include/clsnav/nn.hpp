#pragma once

// Parameter registry and the transformer building blocks shared by the
// text encoder, visual encoder and mask decoder.

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clsnav/tensor.hpp"

namespace clsnav {

// Ordered name -> tensor registry. Creation order is the serialization
// order, so checkpoints and optimizer state line up across runs.
class ParamSet {
public:
    TensorPtr add(const std::string& name, TensorPtr t) {
        if (index_.count(name)) throw TensorError("ParamSet: duplicate parameter '" + name + "'");
        index_[name] = items_.size();
        items_.emplace_back(name, t);
        return t;
    }

    const TensorPtr& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw TensorError("ParamSet: unknown parameter '" + name + "'");
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return items_.size(); }

    const std::vector<std::pair<std::string, TensorPtr>>& items() const& { return items_; }
    // Safe to iterate on a temporary set (e.g. model.backbone_params().items()).
    std::vector<std::pair<std::string, TensorPtr>> items() && { return std::move(items_); }

    void adopt(const std::string& prefix, const ParamSet& other) {
        for (const auto& [name, t] : other.items_) add(prefix + name, t);
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t->zero_grad();
    }

    void set_requires_grad(bool rg) {
        for (auto& [name, t] : items_) {
            t->requires_grad = rg;
            if (rg) {
                if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), 0.0);
            } else {
                t->grad.clear();
            }
        }
    }

private:
    std::vector<std::pair<std::string, TensorPtr>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Linear {
    TensorPtr w;  // [in, out]
    TensorPtr b;  // [out]

    // Default init is fan-in scaled (1/sqrt(in)).
    static Linear create(std::mt19937_64& rng, ParamSet& params, const std::string& name, std::size_t in,
                         std::size_t out, double w_std = 0.0) {
        Linear l;
        if (w_std <= 0.0) w_std = 1.0 / std::sqrt(static_cast<double>(in));
        l.w = params.add(name + ".w", randn(rng, {in, out}, w_std, true));
        l.b = params.add(name + ".b", zeros({out}, true));
        return l;
    }

    static Linear create_head(std::mt19937_64& rng, ParamSet& params, const std::string& name, std::size_t in,
                              std::size_t out) {
        return create(rng, params, name, in, out);
    }

    TensorPtr forward(Tape& tape, const TensorPtr& x) const { return add_bias(tape, matmul(tape, x, w), b); }
};

struct LayerNorm {
    TensorPtr gamma;
    TensorPtr beta;
    double eps = 1e-8;

    static LayerNorm create(ParamSet& params, const std::string& name, std::size_t d) {
        LayerNorm ln;
        ln.gamma = params.add(name + ".gamma", full({d}, 1.0, true));
        ln.beta = params.add(name + ".beta", zeros({d}, true));
        return ln;
    }

    TensorPtr forward(Tape& tape, const TensorPtr& x) const { return layer_norm(tape, x, gamma, beta, eps); }
};

struct AttentionResult {
    TensorPtr out;                  // [T, d]
    std::vector<TensorPtr> probs;   // per head, [T, T], rows sum to 1
};

struct MultiHeadAttention {
    std::size_t n_heads = 1;
    Linear q, k, v, o;

    static MultiHeadAttention create(std::mt19937_64& rng, ParamSet& params, const std::string& name, std::size_t d,
                                     std::size_t n_heads) {
        if (n_heads == 0 || d % n_heads != 0) {
            throw TensorError("attention: width " + std::to_string(d) + " not divisible by " +
                              std::to_string(n_heads) + " heads");
        }
        MultiHeadAttention a;
        a.n_heads = n_heads;
        a.q = Linear::create(rng, params, name + ".q", d, d);
        a.k = Linear::create(rng, params, name + ".k", d, d);
        a.v = Linear::create(rng, params, name + ".v", d, d);
        a.o = Linear::create(rng, params, name + ".o", d, d);
        return a;
    }

    AttentionResult forward(Tape& tape, const TensorPtr& x) const {
        const std::size_t d = x->cols();
        const std::size_t dh = d / n_heads;
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        auto qs = q.forward(tape, x);
        auto ks = k.forward(tape, x);
        auto vs = v.forward(tape, x);
        std::vector<TensorPtr> head_outs;
        std::vector<TensorPtr> probs;
        head_outs.reserve(n_heads);
        probs.reserve(n_heads);
        for (std::size_t h = 0; h < n_heads; ++h) {
            auto qh = slice(tape, qs, 1, h * dh, (h + 1) * dh);
            auto kh = slice(tape, ks, 1, h * dh, (h + 1) * dh);
            auto vh = slice(tape, vs, 1, h * dh, (h + 1) * dh);
            auto scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_dh);
            auto attn = softmax(tape, scores, 1);
            probs.push_back(attn);
            head_outs.push_back(matmul(tape, attn, vh));
        }
        auto merged = n_heads == 1 ? head_outs[0] : concat(tape, head_outs, 1);
        return {o.forward(tape, merged), std::move(probs)};
    }
};

// Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x)), GELU MLP ratio 4.
struct TransformerLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    Linear fc1, fc2;

    static TransformerLayer create(std::mt19937_64& rng, ParamSet& params, const std::string& name, std::size_t d,
                                   std::size_t n_heads, std::size_t mlp_ratio = 4) {
        TransformerLayer l;
        l.ln1 = LayerNorm::create(params, name + ".ln1", d);
        l.attn = MultiHeadAttention::create(rng, params, name + ".attn", d, n_heads);
        l.ln2 = LayerNorm::create(params, name + ".ln2", d);
        l.fc1 = Linear::create(rng, params, name + ".fc1", d, d * mlp_ratio);
        l.fc2 = Linear::create(rng, params, name + ".fc2", d * mlp_ratio, d);
        return l;
    }

    struct Result {
        TensorPtr out;
        std::vector<TensorPtr> attn_probs;
    };

    Result forward(Tape& tape, const TensorPtr& x) const {
        auto a = attn.forward(tape, ln1.forward(tape, x));
        auto y = add(tape, x, a.out);
        auto m = fc2.forward(tape, gelu(tape, fc1.forward(tape, ln2.forward(tape, y))));
        return {add(tape, y, m), std::move(a.probs)};
    }
};

}  // namespace clsnav
