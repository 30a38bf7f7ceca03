#pragma once

// Brute-force oracles kept deliberately independent of the library
// implementations they check.

#include <cstddef>
#include <random>

#include "clsnav/image_io.hpp"

namespace clsnav::testing {

struct PixelCounts {
    std::size_t inter = 0, uni = 0, pred = 0, gt = 0;
};

inline PixelCounts count_pixels(const Mask& pred, const Mask& gt) {
    PixelCounts c;
    for (std::size_t i = 0; i < pred.on.size(); ++i) {
        const bool p = pred.on[i] != 0, g = gt.on[i] != 0;
        if (p) ++c.pred;
        if (g) ++c.gt;
        if (p && g) ++c.inter;
        if (p || g) ++c.uni;
    }
    return c;
}

inline double oracle_iou(const Mask& pred, const Mask& gt) {
    const auto c = count_pixels(pred, gt);
    if (c.uni == 0) return 1.0;
    return static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

inline double oracle_fb_iou(const Mask& pred, const Mask& gt) {
    const auto c = count_pixels(pred, gt);
    const std::size_t total = pred.on.size();
    const double fg = c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
    const std::size_t bg_inter = total - c.uni;
    const std::size_t bg_uni = total - c.inter;
    const double bg = bg_uni == 0 ? 1.0 : static_cast<double>(bg_inter) / static_cast<double>(bg_uni);
    return 0.5 * (fg + bg);
}

inline Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double p_on) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Mask m(h, w);
    for (auto& v : m.on) v = unit(rng) < p_on ? 1 : 0;
    return m;
}

}  // namespace clsnav::testing
