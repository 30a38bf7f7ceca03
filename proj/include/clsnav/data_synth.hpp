#pragma once

// Synthetic shapes corpus: 8 categories with distinctive hue + texture,
// 1-3 non-occluding objects per image, exact analytic masks, category
// folds for the inductive zero-shot protocol.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsnav/image_io.hpp"
#include "clsnav/rng.hpp"

namespace clsnav {

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

inline const std::vector<std::string>& default_categories() {
    static const std::vector<std::string> cats = {"circle", "square",  "triangle", "ring",
                                                  "cross",  "bar",     "diamond",  "dots"};
    return cats;
}

// Half-open pixel box: x is the column axis, y the row axis.
struct Bbox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool valid(std::size_t img_w, std::size_t img_h) const {
        return 0 <= x0 && x0 < x1 && x1 <= static_cast<int>(img_w) && 0 <= y0 && y0 < y1 &&
               y1 <= static_cast<int>(img_h);
    }
    bool intersects(const Bbox& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
    Bbox padded(int p, std::size_t img_w, std::size_t img_h) const {
        Bbox b{x0 - p, y0 - p, x1 + p, y1 + p};
        b.x0 = std::max(b.x0, 0);
        b.y0 = std::max(b.y0, 0);
        b.x1 = std::min(b.x1, static_cast<int>(img_w));
        b.y1 = std::min(b.y1, static_cast<int>(img_h));
        return b;
    }
    bool operator==(const Bbox&) const = default;
};

struct SynthSpec {
    std::size_t image_size = 32;
    std::vector<std::string> categories = default_categories();
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    bool tiny_objects = false;  // every object side <= image_size/8
    double background_noise = 0.08;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"image_size", image_size},   {"categories", categories},
                              {"min_objects", min_objects}, {"max_objects", max_objects},
                              {"tiny_objects", tiny_objects}, {"background_noise", background_noise},
                              {"seed", seed}};
    }
    static SynthSpec from_json(const nlohmann::json& j) {
        SynthSpec s;
        s.image_size = j.at("image_size").get<std::size_t>();
        s.categories = j.at("categories").get<std::vector<std::string>>();
        s.min_objects = j.at("min_objects").get<std::size_t>();
        s.max_objects = j.at("max_objects").get<std::size_t>();
        s.tiny_objects = j.at("tiny_objects").get<bool>();
        s.background_noise = j.at("background_noise").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        return s;
    }
};

struct ObjectInstance {
    int category = 0;
    double cx = 0.0, cy = 0.0, size = 0.0;
    Bbox bbox;

    bool operator==(const ObjectInstance&) const = default;
};

struct SynthSample {
    std::size_t id = 0;
    std::uint64_t seed = 0;
    ImageU8 image;
    std::map<int, Mask> masks;  // per present category, objects of one category merged
    std::set<int> present;
    std::vector<ObjectInstance> objects;

    bool operator==(const SynthSample&) const = default;
};

struct FoldSplit {
    int fold_id = 0;
    std::vector<int> seen;
    std::vector<int> unseen;

    bool is_seen(int cat) const {
        for (int c : seen) {
            if (c == cat) return true;
        }
        return false;
    }
    bool is_unseen(int cat) const {
        for (int c : unseen) {
            if (c == cat) return true;
        }
        return false;
    }
};

inline std::vector<FoldSplit> build_folds(std::size_t n_categories, std::size_t n_folds = 4) {
    if (n_folds == 0 || n_categories % n_folds != 0) {
        throw DataError("build_folds: " + std::to_string(n_categories) + " categories not divisible into " +
                        std::to_string(n_folds) + " folds");
    }
    const std::size_t k = n_categories / n_folds;
    std::vector<FoldSplit> folds;
    for (std::size_t f = 0; f < n_folds; ++f) {
        FoldSplit split;
        split.fold_id = static_cast<int>(f);
        for (std::size_t c = 0; c < n_categories; ++c) {
            if (c >= f * k && c < (f + 1) * k) {
                split.unseen.push_back(static_cast<int>(c));
            } else {
                split.seen.push_back(static_cast<int>(c));
            }
        }
        folds.push_back(std::move(split));
    }
    return folds;
}

namespace detail {

inline std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    auto q = [&](double t) { return static_cast<std::uint8_t>(std::lround((t + m) * 255.0)); };
    return {q(r), q(g), q(b)};
}

// Pixel-center predicate for each shape; `size` is the full side extent.
inline bool shape_covers(int category, double px, double py, double cx, double cy, double size) {
    const double dx = px - cx, dy = py - cy;
    const double half = size / 2.0;
    switch (category) {
        case 0:  // circle
            return dx * dx + dy * dy <= half * half;
        case 1:  // square
            return std::abs(dx) <= half && std::abs(dy) <= half;
        case 2: {  // triangle, apex up
            const double t = dy + half;  // 0 at apex, size at base
            if (t < 0.0 || t > size) return false;
            return std::abs(dx) <= (t / size) * half;
        }
        case 3: {  // ring
            const double rr = dx * dx + dy * dy;
            const double inner = half * 0.55;
            return rr <= half * half && rr > inner * inner;
        }
        case 4: {  // cross
            const double arm = std::max(size / 6.0, 0.5);
            return (std::abs(dx) <= arm && std::abs(dy) <= half) || (std::abs(dy) <= arm && std::abs(dx) <= half);
        }
        case 5: {  // bar, horizontal
            const double thick = std::max(size / 6.0, 0.5);
            return std::abs(dx) <= half && std::abs(dy) <= thick;
        }
        case 6:  // diamond
            return std::abs(dx) + std::abs(dy) <= half;
        case 7: {  // dot cluster
            const double r = std::max(size / 6.0, 0.5);
            const double off = half * 0.55;
            const double offs[4][2] = {{-off, -off}, {off, -off}, {-off, off}, {off, off}};
            for (const auto& o : offs) {
                const double ddx = dx - o[0], ddy = dy - o[1];
                if (ddx * ddx + ddy * ddy <= r * r) return true;
            }
            return false;
        }
        default:
            throw DataError("shape_covers: unknown category " + std::to_string(category));
    }
}

// Distinctive per-category value modulation so objects carry texture,
// not just flat color.
inline double texture_mul(int category, std::size_t r, std::size_t c) {
    switch (category % 4) {
        case 0: return ((r + c) & 1) ? 0.85 : 1.0;   // checker
        case 1: return (r & 1) ? 0.85 : 1.0;          // horizontal stripes
        case 2: return (c & 1) ? 0.85 : 1.0;          // vertical stripes
        default: return ((r / 2 + c / 2) & 1) ? 0.9 : 1.0;  // coarse checker
    }
}

}  // namespace detail

inline std::array<std::uint8_t, 3> category_color(int category, std::size_t n_categories) {
    const double hue = 360.0 * static_cast<double>(category) / static_cast<double>(n_categories);
    return detail::hsv_to_rgb(hue, 0.85, 0.9);
}

inline SynthSample generate_sample(const SynthSpec& spec, std::mt19937_64& rng) {
    const std::size_t s = spec.image_size;
    if (s < 16) throw DataError("generate_sample: image_size must be >= 16");
    SynthSample sample;
    sample.image = ImageU8(s, s);

    // Gray noisy background.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < s; ++c) {
            const double g = 0.5 + spec.background_noise * (unit(rng) - 0.5) * 2.0;
            const auto b = static_cast<std::uint8_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255.0));
            sample.image.at(r, c, 0) = b;
            sample.image.at(r, c, 1) = b;
            sample.image.at(r, c, 2) = b;
        }
    }

    std::uniform_int_distribution<std::size_t> n_obj_dist(spec.min_objects, spec.max_objects);
    std::uniform_int_distribution<int> cat_dist(0, static_cast<int>(spec.categories.size()) - 1);
    // Normal objects span one to two patches; several must co-exist
    // without occlusion, which caps the feasible size.
    const double lo_size = spec.tiny_objects ? 3.0 : static_cast<double>(s) / 5.0;
    const double hi_size = spec.tiny_objects ? static_cast<double>(s) / 8.0 : static_cast<double>(s) / 3.2;
    std::uniform_real_distribution<double> size_dist(lo_size, std::max(lo_size, hi_size));

    const std::size_t n_objects = n_obj_dist(rng);
    std::vector<Bbox> taken;
    int attempts_left = 1000;
    for (std::size_t obj_i = 0; obj_i < n_objects; ++obj_i) {
        bool placed = false;
        while (!placed) {
            if (--attempts_left < 0) throw DataError("generate_sample: placement failed after 1000 attempts");
            const int category = cat_dist(rng);
            const double size = size_dist(rng);
            const double margin = size / 2.0 + 1.0;
            std::uniform_real_distribution<double> pos(margin, static_cast<double>(s) - margin);
            const double cx = pos(rng), cy = pos(rng);

            // Rasterize to find the exact pixel footprint.
            std::vector<std::pair<std::size_t, std::size_t>> pixels;
            int x0 = static_cast<int>(s), y0 = static_cast<int>(s), x1 = 0, y1 = 0;
            const int lo_r = std::max(0, static_cast<int>(cy - size));
            const int hi_r = std::min(static_cast<int>(s) - 1, static_cast<int>(cy + size) + 1);
            const int lo_c = std::max(0, static_cast<int>(cx - size));
            const int hi_c = std::min(static_cast<int>(s) - 1, static_cast<int>(cx + size) + 1);
            for (int r = lo_r; r <= hi_r; ++r) {
                for (int c = lo_c; c <= hi_c; ++c) {
                    if (detail::shape_covers(category, c + 0.5, r + 0.5, cx, cy, size)) {
                        pixels.emplace_back(r, c);
                        x0 = std::min(x0, c);
                        y0 = std::min(y0, r);
                        x1 = std::max(x1, c + 1);
                        y1 = std::max(y1, r + 1);
                    }
                }
            }
            if (pixels.size() < 3) continue;  // degenerate rasterization, retry

            Bbox box{x0, y0, x1, y1};
            bool overlap = false;
            for (const auto& t : taken) {
                if (box.padded(1, s, s).intersects(t)) {
                    overlap = true;
                    break;
                }
            }
            if (overlap) continue;

            taken.push_back(box);
            auto [it, inserted] = sample.masks.try_emplace(category, Mask(s, s));
            const auto color = category_color(category, spec.categories.size());
            for (auto [r, c] : pixels) {
                it->second.at(r, c) = 1;
                const double m = detail::texture_mul(category, r, c);
                sample.image.at(r, c, 0) = static_cast<std::uint8_t>(std::lround(color[0] * m));
                sample.image.at(r, c, 1) = static_cast<std::uint8_t>(std::lround(color[1] * m));
                sample.image.at(r, c, 2) = static_cast<std::uint8_t>(std::lround(color[2] * m));
            }
            sample.present.insert(category);
            sample.objects.push_back(ObjectInstance{category, cx, cy, size, box});
            placed = true;
        }
    }
    return sample;
}

struct Corpus {
    SynthSpec spec;
    std::vector<SynthSample> samples;
    std::vector<FoldSplit> folds;

    bool operator==(const Corpus& o) const {
        return samples == o.samples && spec.to_json() == o.spec.to_json();
    }
};

inline Corpus generate_corpus(const SynthSpec& spec, std::size_t count, std::size_t n_folds = 4) {
    Corpus corpus;
    corpus.spec = spec;
    corpus.folds = build_folds(spec.categories.size(), n_folds);
    corpus.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t sample_seed = derive_seed(spec.seed, "sample", i);
        auto rng = make_rng(sample_seed);
        auto sample = generate_sample(spec, rng);
        sample.id = i;
        sample.seed = sample_seed;
        corpus.samples.push_back(std::move(sample));
    }
    return corpus;
}

namespace detail {

inline std::string sample_file_name(std::size_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05zu", id);
    return buf;
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& dir, const Corpus& corpus) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    nlohmann::json manifest;
    manifest["spec"] = corpus.spec.to_json();
    nlohmann::json colors = nlohmann::json::array();
    for (std::size_t c = 0; c < corpus.spec.categories.size(); ++c) {
        const auto col = category_color(static_cast<int>(c), corpus.spec.categories.size());
        colors.push_back({col[0], col[1], col[2]});
    }
    manifest["category_colors"] = colors;
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : corpus.folds) {
        folds.push_back({{"fold_id", f.fold_id}, {"seen", f.seen}, {"unseen", f.unseen}});
    }
    manifest["folds"] = folds;

    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : corpus.samples) {
        const std::string name = detail::sample_file_name(s.id);
        write_ppm(dir / "images" / (name + ".ppm"), s.image);
        for (const auto& [cat, mask] : s.masks) {
            const auto cat_dir = dir / "masks" / corpus.spec.categories.at(cat);
            fs::create_directories(cat_dir);
            write_pgm(cat_dir / (name + ".pgm"), mask);
        }
        nlohmann::json objs = nlohmann::json::array();
        for (const auto& o : s.objects) {
            objs.push_back({{"category", o.category},
                            {"cx", o.cx},
                            {"cy", o.cy},
                            {"size", o.size},
                            {"bbox", {o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1}}});
        }
        samples.push_back({{"id", s.id},
                           {"seed", s.seed},
                           {"present", std::vector<int>(s.present.begin(), s.present.end())},
                           {"objects", objs}});
    }
    manifest["samples"] = samples;

    std::ofstream os(dir / "manifest.json");
    if (!os) throw DataError((dir / "manifest.json").string() + ": cannot open for writing");
    os << manifest.dump(2) << "\n";
}

inline Corpus read_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw DataError(manifest_path.string() + ": missing manifest");
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": malformed manifest: " + e.what());
    }

    Corpus corpus;
    try {
        corpus.spec = SynthSpec::from_json(manifest.at("spec"));
        for (const auto& f : manifest.at("folds")) {
            FoldSplit split;
            split.fold_id = f.at("fold_id").get<int>();
            split.seen = f.at("seen").get<std::vector<int>>();
            split.unseen = f.at("unseen").get<std::vector<int>>();
            corpus.folds.push_back(std::move(split));
        }
        for (const auto& sj : manifest.at("samples")) {
            SynthSample s;
            s.id = sj.at("id").get<std::size_t>();
            s.seed = sj.at("seed").get<std::uint64_t>();
            const std::string name = detail::sample_file_name(s.id);
            s.image = read_ppm(dir / "images" / (name + ".ppm"));
            for (int cat : sj.at("present").get<std::vector<int>>()) {
                s.present.insert(cat);
                s.masks[cat] = read_pgm(dir / "masks" / corpus.spec.categories.at(cat) / (name + ".pgm"));
            }
            for (const auto& oj : sj.at("objects")) {
                ObjectInstance o;
                o.category = oj.at("category").get<int>();
                o.cx = oj.at("cx").get<double>();
                o.cy = oj.at("cy").get<double>();
                o.size = oj.at("size").get<double>();
                const auto& b = oj.at("bbox");
                o.bbox = Bbox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
                s.objects.push_back(o);
            }
            corpus.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": manifest field error: " + e.what());
    }
    return corpus;
}

}  // namespace clsnav
