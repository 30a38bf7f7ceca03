#pragma once

// AdamW (decoupled weight decay) with a cyclic cosine-annealing
// learning-rate schedule.

#include <cmath>
#include <string>
#include <vector>

#include "clsnav/nn.hpp"
#include "clsnav/tensor.hpp"

namespace clsnav {

// Epoch-granular schedule; the rate returns to `lr0` at every restart
// boundary (epoch % period == 0) and anneals to `eta_min` in between.
inline double cosine_warm_restart_lr(double lr0, double eta_min, std::size_t period, std::size_t epoch) {
    if (period == 0) throw TensorError("cosine schedule: period must be >= 1");
    const std::size_t t = epoch % period;
    const double progress = static_cast<double>(t) / static_cast<double>(period);
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(progress * 3.14159265358979323846));
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW(const ParamSet& params, AdamWConfig cfg = {}) : cfg_(cfg) {
        for (const auto& [name, t] : params.items()) {
            slots_.push_back(Slot{name, t, std::vector<double>(t->numel(), 0.0), std::vector<double>(t->numel(), 0.0)});
        }
    }

    std::size_t step_count() const { return t_; }

    // One decoupled-weight-decay adaptive step over every parameter that
    // currently requires grad. Rejects non-finite gradients by name.
    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& slot : slots_) {
            auto& p = *slot.param;
            if (!p.requires_grad) continue;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double g = p.grad[i];
                if (!std::isfinite(g)) {
                    throw TensorError("AdamW: non-finite gradient in parameter '" + slot.name + "'");
                }
                slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
                slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                p.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.data[i]);
            }
        }
    }

private:
    struct Slot {
        std::string name;
        TensorPtr param;
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamWConfig cfg_;
    std::vector<Slot> slots_;
    std::size_t t_ = 0;
};

}  // namespace clsnav
