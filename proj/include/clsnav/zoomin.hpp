#pragma once

// Local zoom-in pipeline: region proposals (oracle, jittered oracle, or
// color-blob detector), per-region segmentation through the full model,
// and hard-union aggregation of the region masks.

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsnav/clsclip.hpp"
#include "clsnav/data_synth.hpp"
#include "clsnav/image_io.hpp"

namespace clsnav {

class ZoomError : public std::runtime_error {
public:
    explicit ZoomError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class ProposalSource { oracle, oracle_jittered, blob };

inline std::string proposal_source_name(ProposalSource s) {
    switch (s) {
        case ProposalSource::oracle: return "oracle";
        case ProposalSource::oracle_jittered: return "oracle_jittered";
        case ProposalSource::blob: return "blob";
    }
    throw ZoomError("unknown proposal source");
}

inline ProposalSource proposal_source_from_name(const std::string& s) {
    if (s == "oracle") return ProposalSource::oracle;
    if (s == "oracle_jittered") return ProposalSource::oracle_jittered;
    if (s == "blob") return ProposalSource::blob;
    throw ZoomError("unknown proposal source '" + s + "'");
}

struct RegionProposal {
    Bbox bbox;
    int category_id = -1;
    double score = 0.0;
};

struct RegionSet {
    std::vector<RegionProposal> proposals;
    ProposalSource source = ProposalSource::oracle;
};

namespace detail {

inline Bbox clamp_box(Bbox b, std::size_t img) {
    b.x0 = std::clamp(b.x0, 0, static_cast<int>(img) - 1);
    b.y0 = std::clamp(b.y0, 0, static_cast<int>(img) - 1);
    b.x1 = std::clamp(b.x1, b.x0 + 1, static_cast<int>(img));
    b.y1 = std::clamp(b.y1, b.y0 + 1, static_cast<int>(img));
    return b;
}

// Blob detector: map saturated pixels to the nearest category color,
// then take 4-connected components per category.
inline std::vector<RegionProposal> blob_proposals(const SynthSample& sample, std::size_t n_categories) {
    const std::size_t s = sample.image.h;
    std::vector<int> label(s * s, -1);
    for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < s; ++c) {
            const int rv = sample.image.at(r, c, 0), gv = sample.image.at(r, c, 1), bv = sample.image.at(r, c, 2);
            const int spread = std::max({rv, gv, bv}) - std::min({rv, gv, bv});
            if (spread < 40) continue;  // gray background
            int best = -1;
            int best_dist = 1 << 30;
            for (std::size_t cat = 0; cat < n_categories; ++cat) {
                const auto col = category_color(static_cast<int>(cat), n_categories);
                const int dist = std::abs(rv - col[0]) + std::abs(gv - col[1]) + std::abs(bv - col[2]);
                if (dist < best_dist) {
                    best_dist = dist;
                    best = static_cast<int>(cat);
                }
            }
            label[r * s + c] = best;
        }
    }

    std::vector<RegionProposal> out;
    std::vector<bool> visited(s * s, false);
    for (std::size_t start = 0; start < s * s; ++start) {
        if (visited[start] || label[start] < 0) continue;
        const int cat = label[start];
        std::deque<std::size_t> queue{start};
        visited[start] = true;
        std::size_t count = 0;
        int x0 = static_cast<int>(s), y0 = static_cast<int>(s), x1 = 0, y1 = 0;
        while (!queue.empty()) {
            const std::size_t cur = queue.front();
            queue.pop_front();
            const int r = static_cast<int>(cur / s), c = static_cast<int>(cur % s);
            ++count;
            x0 = std::min(x0, c);
            y0 = std::min(y0, r);
            x1 = std::max(x1, c + 1);
            y1 = std::max(y1, r + 1);
            const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int nr = r + dr[k], nc = c + dc[k];
                if (nr < 0 || nc < 0 || nr >= static_cast<int>(s) || nc >= static_cast<int>(s)) continue;
                const std::size_t ni = static_cast<std::size_t>(nr) * s + static_cast<std::size_t>(nc);
                if (visited[ni] || label[ni] != cat) continue;
                visited[ni] = true;
                queue.push_back(ni);
            }
        }
        if (count < 2) continue;
        const Bbox box{x0, y0, x1, y1};
        const double fill = static_cast<double>(count) / static_cast<double>(box.width() * box.height());
        out.push_back(RegionProposal{box, cat, fill});
    }
    return out;
}

}  // namespace detail

inline RegionSet propose_regions(const SynthSample& sample, ProposalSource source, std::mt19937_64& rng,
                                 std::size_t n_categories) {
    RegionSet rs;
    rs.source = source;
    const std::size_t img = sample.image.h;
    switch (source) {
        case ProposalSource::oracle:
            for (const auto& o : sample.objects) {
                rs.proposals.push_back(RegionProposal{o.bbox, o.category, 1.0});
            }
            break;
        case ProposalSource::oracle_jittered: {
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            std::uniform_real_distribution<double> grow(0.0, 1.0);
            for (const auto& o : sample.objects) {
                const double w = o.bbox.width(), h = o.bbox.height();
                Bbox b = o.bbox;
                // shift up to 20% of the size, dilate up to 20% outward
                const int sx = static_cast<int>(std::lround(unit(rng) * 0.2 * w));
                const int sy = static_cast<int>(std::lround(unit(rng) * 0.2 * h));
                const int gx = static_cast<int>(std::lround(grow(rng) * 0.2 * w));
                const int gy = static_cast<int>(std::lround(grow(rng) * 0.2 * h));
                b.x0 += sx - gx;
                b.x1 += sx + gx;
                b.y0 += sy - gy;
                b.y1 += sy + gy;
                rs.proposals.push_back(RegionProposal{detail::clamp_box(b, img), o.category, 1.0});
            }
            break;
        }
        case ProposalSource::blob:
            rs.proposals = detail::blob_proposals(sample, n_categories);
            break;
    }
    for (const auto& p : rs.proposals) {
        if (!p.bbox.valid(img, img)) throw ZoomError("propose_regions produced an invalid bbox");
    }
    return rs;
}

// Keep exactly the proposals of the queried category, order preserved.
inline std::vector<Bbox> filter_regions(const RegionSet& regions, int category_id) {
    std::vector<Bbox> out;
    for (const auto& p : regions.proposals) {
        if (p.category_id == category_id) out.push_back(p.bbox);
    }
    return out;
}

namespace detail {

// Crop [3,H,W] -> pad to centered square (background gray) -> bilinear
// resize to the model input size. Exact identity when no resampling is
// needed.
inline TensorPtr crop_and_resize(const Tensor& image, const Bbox& box, std::size_t out_size) {
    const std::size_t img = image.shape[1];
    const std::size_t w = static_cast<std::size_t>(box.width());
    const std::size_t h = static_cast<std::size_t>(box.height());
    const std::size_t side = std::max(w, h);
    const std::size_t ox = (side - w) / 2, oy = (side - h) / 2;

    std::vector<double> square(3 * side * side, 0.5);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                square[(ch * side + oy + r) * side + ox + c] =
                    image.data[(ch * img + box.y0 + r) * img + box.x0 + c];
            }
        }
    }
    if (side == out_size) return tensor({3, out_size, out_size}, std::move(square));

    std::vector<double> out(3 * out_size * out_size);
    const double scale = static_cast<double>(side) / static_cast<double>(out_size);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t r = 0; r < out_size; ++r) {
            const double sy = std::clamp((r + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
            const std::size_t y0 = static_cast<std::size_t>(sy);
            const std::size_t y1 = std::min(y0 + 1, side - 1);
            const double fy = sy - static_cast<double>(y0);
            for (std::size_t c = 0; c < out_size; ++c) {
                const double sx = std::clamp((c + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
                const std::size_t x0 = static_cast<std::size_t>(sx);
                const std::size_t x1 = std::min(x0 + 1, side - 1);
                const double fx = sx - static_cast<double>(x0);
                const double v00 = square[(ch * side + y0) * side + x0];
                const double v01 = square[(ch * side + y0) * side + x1];
                const double v10 = square[(ch * side + y1) * side + x0];
                const double v11 = square[(ch * side + y1) * side + x1];
                out[(ch * out_size + r) * out_size + c] =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return tensor({3, out_size, out_size}, std::move(out));
}

// Inverse of the crop geometry: nearest-neighbor lookup from the model
// output mask back into bbox-local coordinates.
inline Mask mask_to_bbox_local(const Mask& model_mask, const Bbox& box) {
    const std::size_t w = static_cast<std::size_t>(box.width());
    const std::size_t h = static_cast<std::size_t>(box.height());
    const std::size_t side = std::max(w, h);
    const std::size_t ox = (side - w) / 2, oy = (side - h) / 2;
    const double scale = static_cast<double>(model_mask.h) / static_cast<double>(side);

    Mask out(h, w);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t mr = std::min(model_mask.h - 1,
                                            static_cast<std::size_t>((static_cast<double>(oy + r) + 0.5) * scale));
            const std::size_t mc = std::min(model_mask.w - 1,
                                            static_cast<std::size_t>((static_cast<double>(ox + c) + 0.5) * scale));
            out.at(r, c) = model_mask.at(mr, mc);
        }
    }
    return out;
}

}  // namespace detail

// Crop -> resize -> full forward -> binary mask resized back to the bbox.
inline Mask segment_region(const ClsClipModel& model, const TensorPtr& image, const Bbox& box,
                           const TextCls& text_cls) {
    const std::size_t img = image->shape[1];
    if (!box.valid(img, img)) throw ZoomError("segment_region: bbox outside the image");
    if (box.width() < 2 || box.height() < 2) {
        throw ZoomError("segment_region: degenerate bbox (" + std::to_string(box.width()) + "x" +
                        std::to_string(box.height()) + ")");
    }
    auto crop = detail::crop_and_resize(*image, box, model.config().visual.image_size);
    auto pred = binarize(model.segment(crop, text_cls));
    return detail::mask_to_bbox_local(pred, box);
}

// Eq.-style hard union: a pixel is positive iff positive in any region
// mask; pixels outside every bbox stay background.
inline Mask aggregate_masks(const std::vector<std::pair<Bbox, Mask>>& region_masks, std::size_t image_size) {
    Mask out(image_size, image_size);
    for (const auto& [box, mask] : region_masks) {
        if (!box.valid(image_size, image_size)) throw ZoomError("aggregate_masks: invalid bbox");
        if (mask.h != static_cast<std::size_t>(box.height()) || mask.w != static_cast<std::size_t>(box.width())) {
            throw ZoomError("aggregate_masks: mask extent does not match its bbox");
        }
        for (std::size_t r = 0; r < mask.h; ++r) {
            for (std::size_t c = 0; c < mask.w; ++c) {
                if (mask.at(r, c)) out.at(box.y0 + r, box.x0 + c) = 1;
            }
        }
    }
    return out;
}

// Full zoom-in prediction for one (image, category) query.
inline Mask zoomin_segment(const ClsClipModel& model, const TensorPtr& image, const RegionSet& regions, int category,
                           const TextCls& text_cls) {
    const std::size_t img = image->shape[1];
    std::vector<std::pair<Bbox, Mask>> parts;
    for (const auto& box : filter_regions(regions, category)) {
        parts.emplace_back(box, segment_region(model, image, box, text_cls));
    }
    return aggregate_masks(parts, img);
}

// Raw boxes-as-masks baseline: every filtered bbox fully foreground.
inline Mask boxes_as_mask(const RegionSet& regions, int category, std::size_t image_size) {
    Mask out(image_size, image_size);
    for (const auto& box : filter_regions(regions, category)) {
        for (int r = box.y0; r < box.y1; ++r) {
            for (int c = box.x0; c < box.x1; ++c) out.at(r, c) = 1;
        }
    }
    return out;
}

inline nlohmann::json region_set_to_json(const RegionSet& rs, const std::vector<std::string>& categories) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : rs.proposals) {
        arr.push_back({{"bbox", {p.bbox.x0, p.bbox.y0, p.bbox.x1, p.bbox.y1}},
                       {"category", categories.at(static_cast<std::size_t>(p.category_id))},
                       {"score", p.score}});
    }
    return nlohmann::json{{"source", proposal_source_name(rs.source)}, {"proposals", arr}};
}

}  // namespace clsnav
