#pragma once

// Segmentation metrics: per-pair IoU, fold mIoU, FB-IoU, and the
// accumulator used by the evaluation harness (per-class sums of
// intersection and union across episodes).

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsnav/image_io.hpp"

namespace clsnav {

class MetricError : public std::runtime_error {
public:
    explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// |pred AND gt| / |pred OR gt|; both empty counts as a perfect 1.0,
// exactly one empty as 0.0.
inline double iou(const Mask& pred, const Mask& gt) {
    if (!pred.same_shape(gt)) {
        throw MetricError("iou: shape mismatch " + std::to_string(pred.h) + "x" + std::to_string(pred.w) + " vs " +
                          std::to_string(gt.h) + "x" + std::to_string(gt.w));
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.on.size(); ++i) {
        const bool p = pred.on[i] != 0, g = gt.on[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double miou(const std::map<int, double>& per_class, const std::vector<int>& fold_classes) {
    if (fold_classes.empty()) throw MetricError("miou: empty class list");
    double s = 0.0;
    for (int c : fold_classes) {
        auto it = per_class.find(c);
        if (it == per_class.end()) throw MetricError("miou: class " + std::to_string(c) + " missing from IoU map");
        s += it->second;
    }
    return s / static_cast<double>(fold_classes.size());
}

inline Mask complement(const Mask& m) {
    Mask out(m.h, m.w);
    for (std::size_t i = 0; i < m.on.size(); ++i) out.on[i] = m.on[i] ? 0 : 1;
    return out;
}

inline double fb_iou(const Mask& pred, const Mask& gt) {
    if (!pred.same_shape(gt)) {
        throw MetricError("fb_iou: shape mismatch " + std::to_string(pred.h) + "x" + std::to_string(pred.w) + " vs " +
                          std::to_string(gt.h) + "x" + std::to_string(gt.w));
    }
    return 0.5 * (iou(pred, gt) + iou(complement(pred), complement(gt)));
}

struct EvalReport {
    std::map<int, double> per_class_iou;
    double miou = 0.0;
    double fb_iou = 0.0;
    std::size_t sample_count = 0;
    int fold_id = -1;
    std::string mechanism;

    nlohmann::json to_json() const {
        nlohmann::json per;
        for (const auto& [c, v] : per_class_iou) per[std::to_string(c)] = v;
        return nlohmann::json{{"per_class_iou", per},   {"miou", miou},       {"fb_iou", fb_iou},
                              {"sample_count", sample_count}, {"fold_id", fold_id}, {"mechanism", mechanism}};
    }
};

// Benchmark-style aggregation: per class, IoU_c = sum(I) / sum(U) over
// all episodes of that class; FB-IoU aggregates foreground/background
// pixel counts the same way.
class IoUAccumulator {
public:
    void add(int category, const Mask& pred, const Mask& gt) {
        if (!pred.same_shape(gt)) throw MetricError("IoUAccumulator: shape mismatch");
        std::size_t inter = 0, uni = 0, binter = 0, buni = 0;
        for (std::size_t i = 0; i < pred.on.size(); ++i) {
            const bool p = pred.on[i] != 0, g = gt.on[i] != 0;
            inter += (p && g) ? 1 : 0;
            uni += (p || g) ? 1 : 0;
            binter += (!p && !g) ? 1 : 0;
            buni += (!p || !g) ? 1 : 0;
        }
        auto& acc = per_class_[category];
        acc.first += inter;
        acc.second += uni;
        fg_inter_ += inter;
        fg_union_ += uni;
        bg_inter_ += binter;
        bg_union_ += buni;
        ++episodes_;
    }

    std::size_t episodes() const { return episodes_; }

    std::map<int, double> per_class_iou() const {
        std::map<int, double> out;
        for (const auto& [c, acc] : per_class_) {
            out[c] = acc.second == 0 ? 1.0 : static_cast<double>(acc.first) / static_cast<double>(acc.second);
        }
        return out;
    }

    EvalReport report(const std::vector<int>& fold_classes, int fold_id, const std::string& mechanism) const {
        EvalReport r;
        r.per_class_iou = per_class_iou();
        r.miou = clsnav::miou(r.per_class_iou, fold_classes);
        const double fg = fg_union_ == 0 ? 1.0 : static_cast<double>(fg_inter_) / static_cast<double>(fg_union_);
        const double bg = bg_union_ == 0 ? 1.0 : static_cast<double>(bg_inter_) / static_cast<double>(bg_union_);
        r.fb_iou = 0.5 * (fg + bg);
        r.sample_count = episodes_;
        r.fold_id = fold_id;
        r.mechanism = mechanism;
        return r;
    }

private:
    std::map<int, std::pair<std::size_t, std::size_t>> per_class_;  // class -> (sum I, sum U)
    std::size_t fg_inter_ = 0, fg_union_ = 0, bg_inter_ = 0, bg_union_ = 0;
    std::size_t episodes_ = 0;
};

}  // namespace clsnav
