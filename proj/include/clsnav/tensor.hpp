#pragma once

// Dense f64 tensors with reverse-mode autodiff on an explicit tape.
// Ops record their backward rule as a closure; Tape::backward replays
// the recording in reverse. Gradients accumulate until zeroed.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace clsnav {

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;

    Tensor(Shape s, std::vector<double> d, bool rg) : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        for (auto e : shape) {
            if (e == 0) throw TensorError("tensor extent must be >= 1, got shape " + shape_str(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw TensorError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                              shape_str(shape));
        }
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return numel() == 1; }

    double value() const {
        if (!is_scalar()) throw TensorError("value() on non-scalar tensor " + shape_str(shape));
        return data[0];
    }

    std::size_t rows() const {
        require_rank(2, "rows()");
        return shape[0];
    }
    std::size_t cols() const {
        require_rank(2, "cols()");
        return shape[1];
    }
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    void require_rank(std::size_t r, const char* what) const {
        if (shape.size() != r) {
            throw TensorError(std::string(what) + " expects rank " + std::to_string(r) + " tensor, got " +
                              shape_str(shape));
        }
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    void accumulate_grad(const std::vector<double>& g) {
        if (!requires_grad) return;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
};

inline TensorPtr tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

inline TensorPtr zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return tensor(std::move(shape), std::move(d), requires_grad);
}

inline TensorPtr full(Shape shape, double v, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), v);
    return tensor(std::move(shape), std::move(d), requires_grad);
}

inline TensorPtr scalar_tensor(double v, bool requires_grad = false) {
    return tensor({1}, {v}, requires_grad);
}

inline TensorPtr randn(std::mt19937_64& rng, Shape shape, double stddev, bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = dist(rng);
    return tensor(std::move(shape), std::move(d), requires_grad);
}

inline TensorPtr uniform(std::mt19937_64& rng, Shape shape, double lo, double hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = dist(rng);
    return tensor(std::move(shape), std::move(d), requires_grad);
}

inline TensorPtr clone_detached(const Tensor& t) {
    return tensor(t.shape, t.data, false);
}

// Records backward rules in forward order; inputs of every recorded op
// already exist when it is recorded, so the list is topologically sorted.
class Tape {
public:
    void record(std::function<void()> backward_rule) { ops_.push_back(std::move(backward_rule)); }

    std::size_t size() const { return ops_.size(); }

    void clear() { ops_.clear(); }

    // Seeds d(loss)/d(loss) = seed and replays every rule in reverse.
    void backward(const TensorPtr& loss, double seed = 1.0) {
        if (!loss->is_scalar()) {
            throw TensorError("backward requires a scalar loss, got " + shape_str(loss->shape));
        }
        if (!loss->requires_grad) {
            throw TensorError("backward: loss does not require grad (not connected to any trainable tensor)");
        }
        loss->grad[0] += seed;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
}

inline TensorPtr result(Shape shape, std::vector<double> data, bool requires_grad) {
    return tensor(std::move(shape), std::move(data), requires_grad);
}

}  // namespace detail

// ---- elementwise ----

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> d(a->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] + b->data[i];
    auto out = detail::result(a->shape, std::move(d), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        tape.record([a, b, out] {
            if (a->requires_grad) a->accumulate_grad(out->grad);
            if (b->requires_grad) b->accumulate_grad(out->grad);
        });
    }
    return out;
}

inline TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> d(a->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] - b->data[i];
    auto out = detail::result(a->shape, std::move(d), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        tape.record([a, b, out] {
            if (a->requires_grad) a->accumulate_grad(out->grad);
            if (b->requires_grad) {
                for (std::size_t i = 0; i < b->grad.size(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> d(a->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * b->data[i];
    auto out = detail::result(a->shape, std::move(d), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        tape.record([a, b, out] {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += b->data[i] * out->grad[i];
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += a->data[i] * out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
    std::vector<double> d(a->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * c;
    auto out = detail::result(a->shape, std::move(d), a->requires_grad);
    if (out->requires_grad) {
        tape.record([a, out, c] {
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += c * out->grad[i];
        });
    }
    return out;
}

// Bias broadcast over the last axis; the one permitted broadcast.
inline TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& bias) {
    if (bias->rank() != 1) throw TensorError("add_bias: bias must be rank 1, got " + shape_str(bias->shape));
    const std::size_t d = bias->shape[0];
    if (x->shape.empty() || x->shape.back() != d) {
        throw TensorError("add_bias: last extent of " + shape_str(x->shape) + " does not match bias " +
                          shape_str(bias->shape));
    }
    std::vector<double> out_d(x->numel());
    const std::size_t rows = x->numel() / d;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) out_d[r * d + c] = x->data[r * d + c] + bias->data[c];
    }
    auto out = detail::result(x->shape, std::move(out_d), x->requires_grad || bias->requires_grad);
    if (out->requires_grad) {
        tape.record([x, bias, out, rows, d] {
            if (x->requires_grad) x->accumulate_grad(out->grad);
            if (bias->requires_grad) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < d; ++c) bias->grad[c] += out->grad[r * d + c];
                }
            }
        });
    }
    return out;
}

// ---- linear algebra ----

inline TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    a->require_rank(2, "matmul lhs");
    b->require_rank(2, "matmul rhs");
    if (a->shape[1] != b->shape[0]) {
        throw TensorError("matmul: inner extents differ: " + shape_str(a->shape) + " x " + shape_str(b->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> out_d(m * n, 0.0);
    {
        const double* A = a->data.data();
        const double* B = b->data.data();
        double* O = out_d.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* Ai = A + i * k;
            double* Oi = O + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = Ai[p];
                const double* Bp = B + p * n;
                for (std::size_t j = 0; j < n; ++j) Oi[j] += av * Bp[j];
            }
        }
    }
    auto out = detail::result({m, n}, std::move(out_d), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        tape.record([a, b, out, m, k, n] {
            const double* G = out->grad.data();
            if (a->requires_grad) {
                // dA = G B^T
                double* GA = a->grad.data();
                const double* B = b->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* Gi = G + i * n;
                    double* GAi = GA + i * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* Bp = B + p * n;
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                        GAi[p] += s;
                    }
                }
            }
            if (b->requires_grad) {
                // dB = A^T G
                double* GB = b->grad.data();
                const double* A = a->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* Ai = A + i * k;
                    const double* Gi = G + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = Ai[p];
                        double* GBp = GB + p * n;
                        for (std::size_t j = 0; j < n; ++j) GBp[j] += av * Gi[j];
                    }
                }
            }
        });
    }
    return out;
}

inline TensorPtr transpose(Tape& tape, const TensorPtr& x) {
    x->require_rank(2, "transpose");
    const std::size_t m = x->shape[0], n = x->shape[1];
    std::vector<double> d(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[j * m + i] = x->data[i * n + j];
    }
    auto out = detail::result({n, m}, std::move(d), x->requires_grad);
    if (out->requires_grad) {
        tape.record([x, out, m, n] {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) x->grad[i * n + j] += out->grad[j * m + i];
            }
        });
    }
    return out;
}

// ---- reductions / activations ----

inline TensorPtr sum(Tape& tape, const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    auto out = detail::result({1}, {s}, x->requires_grad);
    if (out->requires_grad) {
        tape.record([x, out] {
            const double g = out->grad[0];
            for (auto& gv : x->grad) gv += g;
        });
    }
    return out;
}

inline TensorPtr gelu(Tape& tape, const TensorPtr& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = x->data[i];
        d[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    auto out = detail::result(x->shape, std::move(d), x->requires_grad);
    if (out->requires_grad) {
        tape.record([x, out] {
            for (std::size_t i = 0; i < x->grad.size(); ++i) {
                const double v = x->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                x->grad[i] += (cdf + v * pdf) * out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr sigmoid(Tape& tape, const TensorPtr& x) {
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = x->data[i];
        d[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    auto out = detail::result(x->shape, std::move(d), x->requires_grad);
    if (out->requires_grad) {
        tape.record([x, out] {
            for (std::size_t i = 0; i < x->grad.size(); ++i) {
                const double y = out->data[i];
                x->grad[i] += y * (1.0 - y) * out->grad[i];
            }
        });
    }
    return out;
}

// Max-subtracted softmax along `axis`; every slice sums to 1.
inline TensorPtr softmax(Tape& tape, const TensorPtr& x, std::size_t axis) {
    if (axis >= x->rank()) {
        throw TensorError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(x->shape));
    }
    const std::size_t n = x->shape[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x->shape[i];
    for (std::size_t i = axis + 1; i < x->rank(); ++i) inner *= x->shape[i];

    std::vector<double> d(x->numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x->data[base + i * inner]);
            double z = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(x->data[base + i * inner] - mx);
                d[base + i * inner] = e;
                z += e;
            }
            for (std::size_t i = 0; i < n; ++i) d[base + i * inner] /= z;
        }
    }
    auto out = detail::result(x->shape, std::move(d), x->requires_grad);
    if (out->requires_grad) {
        tape.record([x, out, outer, inner, n] {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        dot += out->grad[base + i * inner] * out->data[base + i * inner];
                    }
                    for (std::size_t i = 0; i < n; ++i) {
                        const std::size_t idx = base + i * inner;
                        x->grad[idx] += out->data[idx] * (out->grad[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// Normalizes each row (all leading axes flattened) over the last axis.
inline TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                            double eps = 1e-8) {
    if (eps <= 0.0) throw TensorError("layer_norm: eps must be > 0");
    if (x->rank() == 0) throw TensorError("layer_norm: scalar input");
    const std::size_t d = x->shape.back();
    if (gamma->shape != Shape{d} || beta->shape != Shape{d}) {
        throw TensorError("layer_norm: gamma/beta " + shape_str(gamma->shape) + "/" + shape_str(beta->shape) +
                          " do not match last extent of " + shape_str(x->shape));
    }
    const std::size_t rows = x->numel() / d;
    std::vector<double> out_d(x->numel());
    auto xhat = std::make_shared<std::vector<double>>(x->numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x->data.data() + r * d;
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += xr[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dx = xr[c] - mean;
            var += dx * dx;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (xr[c] - mean) * istd;
            (*xhat)[r * d + c] = h;
            out_d[r * d + c] = h * gamma->data[c] + beta->data[c];
        }
    }
    auto out = detail::result(x->shape, std::move(out_d), x->requires_grad || gamma->requires_grad || beta->requires_grad);
    if (out->requires_grad) {
        tape.record([x, gamma, beta, out, xhat, inv_std, rows, d] {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = out->grad.data() + r * d;
                const double* h = xhat->data() + r * d;
                if (beta->requires_grad) {
                    for (std::size_t c = 0; c < d; ++c) beta->grad[c] += g[c];
                }
                if (gamma->requires_grad) {
                    for (std::size_t c = 0; c < d; ++c) gamma->grad[c] += g[c] * h[c];
                }
                if (x->requires_grad) {
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dh = g[c] * gamma->data[c];
                        sum_dh += dh;
                        sum_dh_h += dh * h[c];
                    }
                    const double istd = (*inv_std)[r];
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dh = g[c] * gamma->data[c];
                        x->grad[r * d + c] += istd * (dh - inv_d * sum_dh - h[c] * inv_d * sum_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

// ---- shape ops (2-D) ----

inline TensorPtr concat(Tape& tape, const std::vector<TensorPtr>& parts, std::size_t axis) {
    if (parts.empty()) throw TensorError("concat: no inputs");
    if (axis > 1) throw TensorError("concat: axis must be 0 or 1 for 2-D tensors");
    for (const auto& p : parts) p->require_rank(2, "concat");
    const std::size_t other = axis == 0 ? 1 : 0;
    const std::size_t fixed = parts[0]->shape[other];
    std::size_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p->shape[other] != fixed) {
            throw TensorError("concat: extent mismatch along axis " + std::to_string(other) + ": " +
                              shape_str(parts[0]->shape) + " vs " + shape_str(p->shape));
        }
        total += p->shape[axis];
        rg = rg || p->requires_grad;
    }
    Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    std::vector<double> d(shape_numel(out_shape));
    if (axis == 0) {
        std::size_t row = 0;
        for (const auto& p : parts) {
            std::copy(p->data.begin(), p->data.end(), d.begin() + row * fixed);
            row += p->shape[0];
        }
    } else {
        std::size_t col = 0;
        for (const auto& p : parts) {
            const std::size_t pc = p->shape[1];
            for (std::size_t r = 0; r < fixed; ++r) {
                std::copy(p->data.begin() + r * pc, p->data.begin() + (r + 1) * pc, d.begin() + r * total + col);
            }
            col += pc;
        }
    }
    auto out = detail::result(std::move(out_shape), std::move(d), rg);
    if (out->requires_grad) {
        tape.record([parts, out, axis, fixed] {
            const std::size_t total = out->shape[axis];
            if (axis == 0) {
                std::size_t row = 0;
                for (const auto& p : parts) {
                    if (p->requires_grad) {
                        for (std::size_t i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[row * fixed + i];
                    }
                    row += p->shape[0];
                }
            } else {
                std::size_t col = 0;
                for (const auto& p : parts) {
                    const std::size_t pc = p->shape[1];
                    if (p->requires_grad) {
                        for (std::size_t r = 0; r < fixed; ++r) {
                            for (std::size_t c = 0; c < pc; ++c) p->grad[r * pc + c] += out->grad[r * total + col + c];
                        }
                    }
                    col += pc;
                }
            }
        });
    }
    return out;
}

inline TensorPtr slice(Tape& tape, const TensorPtr& x, std::size_t axis, std::size_t begin, std::size_t end) {
    x->require_rank(2, "slice");
    if (axis > 1) throw TensorError("slice: axis must be 0 or 1");
    if (begin >= end || end > x->shape[axis]) {
        throw TensorError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") invalid for axis extent " + std::to_string(x->shape[axis]));
    }
    const std::size_t m = x->shape[0], n = x->shape[1];
    const std::size_t len = end - begin;
    Shape out_shape = axis == 0 ? Shape{len, n} : Shape{m, len};
    std::vector<double> d(shape_numel(out_shape));
    if (axis == 0) {
        std::copy(x->data.begin() + begin * n, x->data.begin() + end * n, d.begin());
    } else {
        for (std::size_t r = 0; r < m; ++r) {
            std::copy(x->data.begin() + r * n + begin, x->data.begin() + r * n + end, d.begin() + r * len);
        }
    }
    auto out = detail::result(std::move(out_shape), std::move(d), x->requires_grad);
    if (out->requires_grad) {
        tape.record([x, out, axis, begin, m, n, len] {
            if (axis == 0) {
                for (std::size_t i = 0; i < out->numel(); ++i) x->grad[begin * n + i] += out->grad[i];
            } else {
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < len; ++c) x->grad[r * n + begin + c] += out->grad[r * len + c];
                }
            }
        });
    }
    return out;
}

// ---- lookup / losses ----

inline TensorPtr embedding(Tape& tape, const TensorPtr& table, const std::vector<std::size_t>& ids) {
    table->require_rank(2, "embedding table");
    const std::size_t v = table->shape[0], d = table->shape[1];
    for (auto id : ids) {
        if (id >= v) {
            throw TensorError("embedding: id " + std::to_string(id) + " out of vocabulary (size " + std::to_string(v) +
                              ")");
        }
    }
    std::vector<double> out_d(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy(table->data.begin() + ids[i] * d, table->data.begin() + (ids[i] + 1) * d, out_d.begin() + i * d);
    }
    auto out = detail::result({ids.size(), d}, std::move(out_d), table->requires_grad);
    if (out->requires_grad) {
        tape.record([table, out, ids, d] {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                for (std::size_t c = 0; c < d; ++c) table->grad[ids[i] * d + c] += out->grad[i * d + c];
            }
        });
    }
    return out;
}

// Mean cross-entropy of row-wise logits against integer targets.
inline TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits, const std::vector<std::size_t>& targets) {
    logits->require_rank(2, "cross_entropy logits");
    const std::size_t b = logits->shape[0], c = logits->shape[1];
    if (targets.size() != b) {
        throw TensorError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(b) +
                          " rows");
    }
    for (auto t : targets) {
        if (t >= c) throw TensorError("cross_entropy: target " + std::to_string(t) + " out of range");
    }
    auto probs = std::make_shared<std::vector<double>>(b * c);
    double loss = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        const double* lr = logits->data.data() + r * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(lr[j] - mx);
            (*probs)[r * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= z;
        loss += mx + std::log(z) - lr[targets[r]];
    }
    loss /= static_cast<double>(b);
    auto out = detail::result({1}, {loss}, logits->requires_grad);
    if (out->requires_grad) {
        tape.record([logits, out, probs, targets, b, c] {
            const double g = out->grad[0] / static_cast<double>(b);
            for (std::size_t r = 0; r < b; ++r) {
                for (std::size_t j = 0; j < c; ++j) {
                    double p = (*probs)[r * c + j];
                    if (j == targets[r]) p -= 1.0;
                    logits->grad[r * c + j] += g * p;
                }
            }
        });
    }
    return out;
}

// Mean binary cross-entropy with logits; targets are constants in [0,1].
inline TensorPtr bce_with_logits(Tape& tape, const TensorPtr& logits, const TensorPtr& targets) {
    detail::check_same_shape(logits, targets, "bce_with_logits");
    const std::size_t n = logits->numel();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = logits->data[i], t = targets->data[i];
        loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= static_cast<double>(n);
    auto out = detail::result({1}, {loss}, logits->requires_grad);
    if (out->requires_grad) {
        tape.record([logits, targets, out, n] {
            const double g = out->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double x = logits->data[i];
                const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                logits->grad[i] += g * (s - targets->data[i]);
            }
        });
    }
    return out;
}

// Whole-tensor L2 normalization; rejects near-zero input.
inline TensorPtr l2_normalize(Tape& tape, const TensorPtr& x) {
    double sq = 0.0;
    for (double v : x->data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) throw TensorError("l2_normalize: cannot normalize a zero vector");
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = x->data[i] / norm;
    auto out = detail::result(x->shape, std::move(d), x->requires_grad);
    if (out->requires_grad) {
        tape.record([x, out, norm] {
            double dot = 0.0;
            for (std::size_t i = 0; i < out->numel(); ++i) dot += out->grad[i] * out->data[i];
            for (std::size_t i = 0; i < x->grad.size(); ++i) {
                x->grad[i] += (out->grad[i] - out->data[i] * dot) / norm;
            }
        });
    }
    return out;
}

// ---- serialization: u32 rank, u64 extents, f64 row-major payload ----

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

inline void write_tensor(std::ostream& os, const Tensor& t) {
    const std::uint32_t rank = static_cast<std::uint32_t>(t.shape.size());
    os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (auto e : t.shape) {
        const std::uint64_t ext = e;
        os.write(reinterpret_cast<const char*>(&ext), sizeof(ext));
    }
    os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!os) throw TensorError("write_tensor: stream failure");
}

inline TensorPtr read_tensor(std::istream& is, bool requires_grad = false) {
    std::uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!is) throw TensorError("read_tensor: truncated header");
    if (rank > 8) throw TensorError("read_tensor: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        std::uint64_t ext = 0;
        is.read(reinterpret_cast<char*>(&ext), sizeof(ext));
        if (!is || ext == 0) throw TensorError("read_tensor: bad extent");
        e = static_cast<std::size_t>(ext);
    }
    std::vector<double> data(shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw TensorError("read_tensor: truncated payload");
    return tensor(std::move(shape), std::move(data), requires_grad);
}

inline std::size_t tensor_record_size(const Tensor& t) {
    return sizeof(std::uint32_t) + t.shape.size() * sizeof(std::uint64_t) + t.data.size() * sizeof(double);
}

}  // namespace clsnav
