#pragma once

// Binary PPM (P6) / PGM (P5) images, 8-bit, plus the Mask type shared by
// the generator, metrics and the zoom-in pipeline.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clsnav/tensor.hpp"

namespace clsnav {

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Mask {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint8_t> on;  // 0 or 1

    Mask() = default;
    Mask(std::size_t h_, std::size_t w_) : h(h_), w(w_), on(h_ * w_, 0) {}

    std::uint8_t& at(std::size_t r, std::size_t c) { return on[r * w + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return on[r * w + c]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : on) n += v ? 1 : 0;
        return n;
    }
    bool empty_mask() const { return count() == 0; }
    bool same_shape(const Mask& o) const { return h == o.h && w == o.w; }

    bool operator==(const Mask& o) const { return h == o.h && w == o.w && on == o.on; }
};

struct ImageU8 {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

    ImageU8() = default;
    ImageU8(std::size_t h_, std::size_t w_) : h(h_), w(w_), rgb(3 * h_ * w_, 0) {}

    std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) { return rgb[(r * w + c) * 3 + ch]; }
    std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const { return rgb[(r * w + c) * 3 + ch]; }

    bool operator==(const ImageU8& o) const { return h == o.h && w == o.w && rgb == o.rgb; }
};

namespace detail {

inline void skip_pnm_whitespace(std::istream& is) {
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            is.get();
        } else {
            break;
        }
    }
}

inline std::size_t read_pnm_int(std::istream& is, const std::string& path, const char* what) {
    skip_pnm_whitespace(is);
    std::size_t v = 0;
    if (!(is >> v)) throw IoError(path + ": malformed PNM header (" + what + ")");
    return v;
}

}  // namespace detail

inline void write_pgm(const std::filesystem::path& path, const Mask& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path.string() + ": cannot open for writing");
    os << "P5\n" << m.w << " " << m.h << "\n255\n";
    for (auto v : m.on) os.put(v ? static_cast<char>(255) : 0);
    if (!os) throw IoError(path.string() + ": write failure");
}

inline void write_pgm_gray(const std::filesystem::path& path, std::size_t h, std::size_t w,
                           const std::vector<std::uint8_t>& gray) {
    if (gray.size() != h * w) throw IoError(path.string() + ": gray buffer size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path.string() + ": cannot open for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!os) throw IoError(path.string() + ": write failure");
}

inline Mask read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path.string() + ": cannot open");
    std::string magic;
    is >> magic;
    if (magic != "P5") throw IoError(path.string() + ": expected P5 PGM, got magic '" + magic + "'");
    const std::size_t w = detail::read_pnm_int(is, path.string(), "width");
    const std::size_t h = detail::read_pnm_int(is, path.string(), "height");
    const std::size_t maxval = detail::read_pnm_int(is, path.string(), "maxval");
    if (maxval != 255) throw IoError(path.string() + ": unsupported maxval " + std::to_string(maxval));
    is.get();  // single whitespace after header
    Mask m(h, w);
    std::vector<std::uint8_t> raw(h * w);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw IoError(path.string() + ": truncated PGM payload");
    for (std::size_t i = 0; i < raw.size(); ++i) m.on[i] = raw[i] >= 128 ? 1 : 0;
    return m;
}

inline void write_ppm(const std::filesystem::path& path, const ImageU8& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path.string() + ": cannot open for writing");
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw IoError(path.string() + ": write failure");
}

inline ImageU8 read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path.string() + ": cannot open");
    std::string magic;
    is >> magic;
    if (magic != "P6") throw IoError(path.string() + ": expected P6 PPM, got magic '" + magic + "'");
    const std::size_t w = detail::read_pnm_int(is, path.string(), "width");
    const std::size_t h = detail::read_pnm_int(is, path.string(), "height");
    const std::size_t maxval = detail::read_pnm_int(is, path.string(), "maxval");
    if (maxval != 255) throw IoError(path.string() + ": unsupported maxval " + std::to_string(maxval));
    is.get();
    ImageU8 img(h, w);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!is) throw IoError(path.string() + ": truncated PPM payload");
    return img;
}

// Model-side image layout is [3, H, W] in [0, 1]; u8 conversion is exact
// on the 1/255 grid, which makes dataset round trips byte-identical.
inline TensorPtr tensor_from_image(const ImageU8& img) {
    std::vector<double> d(3 * img.h * img.w);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t r = 0; r < img.h; ++r) {
            for (std::size_t c = 0; c < img.w; ++c) {
                d[(ch * img.h + r) * img.w + c] = img.at(r, c, ch) / 255.0;
            }
        }
    }
    return tensor({3, img.h, img.w}, std::move(d));
}

inline ImageU8 image_from_tensor(const Tensor& t) {
    t.require_rank(3, "image_from_tensor");
    if (t.shape[0] != 3) throw IoError("image tensor must have 3 channels, got " + shape_str(t.shape));
    ImageU8 img(t.shape[1], t.shape[2]);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t r = 0; r < img.h; ++r) {
            for (std::size_t c = 0; c < img.w; ++c) {
                double v = t.data[(ch * img.h + r) * img.w + c];
                v = std::min(1.0, std::max(0.0, v));
                img.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

}  // namespace clsnav
