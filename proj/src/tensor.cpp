#include "ensel/tensor.hpp"

#include "ensel/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace ensel {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::invalid_shape, what);
}

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t filters, kh, kw;
    std::size_t out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels, int stride, int pad) {
    require(input.rank() == 3, "conv2d: input must be C x H x W, got " + shape_string(input.shape()));
    require(kernels.rank() == 4,
            "conv2d: kernels must be K x C x kh x kw, got " + shape_string(kernels.shape()));
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(pad >= 0, "conv2d: pad must be >= 0");
    ConvGeometry g{};
    g.channels = input.dim(0);
    g.height = input.dim(1);
    g.width = input.dim(2);
    g.filters = kernels.dim(0);
    g.kh = kernels.dim(2);
    g.kw = kernels.dim(3);
    require(kernels.dim(1) == g.channels, "conv2d: kernel channels " + std::to_string(kernels.dim(1)) +
                                              " != input channels " + std::to_string(g.channels));
    const auto padded_h = g.height + 2 * static_cast<std::size_t>(pad);
    const auto padded_w = g.width + 2 * static_cast<std::size_t>(pad);
    require(g.kh <= padded_h && g.kw <= padded_w, "conv2d: kernel larger than padded input");
    g.out_h = (padded_h - g.kh) / static_cast<std::size_t>(stride) + 1;
    g.out_w = (padded_w - g.kw) / static_cast<std::size_t>(stride) + 1;
    return g;
}

// Output positions o with 0 <= o*stride + k - pad < extent.
struct Range {
    std::size_t begin, end;
};

Range valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t k, int stride, int pad) {
    const long s = stride;
    const long off = static_cast<long>(k) - pad;
    // smallest o with o*s + off >= 0
    long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    // largest o with o*s + off <= in_extent - 1
    const long limit = static_cast<long>(in_extent) - 1 - off;
    long hi_excl = limit < 0 ? 0 : limit / s + 1;
    hi_excl = std::min<long>(hi_excl, static_cast<long>(out_extent));
    if (lo > hi_excl) lo = hi_excl;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi_excl)};
}

}  // namespace

std::size_t shape_size(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill_value) : shape_(std::move(shape)) {
    for (auto d : shape_) require(d > 0, "tensor dims must be positive: " + shape_string(shape_));
    data_.assign(shape_size(shape_), fill_value);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    for (auto d : shape_) require(d > 0, "tensor dims must be positive: " + shape_string(shape_));
    require(data_.size() == shape_size(shape_), "tensor data length " + std::to_string(data_.size()) +
                                                    " does not match shape " + shape_string(shape_));
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride, int pad) {
    const auto g = conv_geometry(input, kernels, stride, pad);
    require(bias.rank() == 1 && bias.dim(0) == g.filters, "conv2d: bias must have K entries");

    Tensor out({g.filters, g.out_h, g.out_w});
    const double* in = input.data().data();
    const double* w = kernels.data().data();
    double* o = out.data().data();
    const auto plane = g.out_h * g.out_w;

    for (std::size_t k = 0; k < g.filters; ++k) {
        double* op = o + k * plane;
        std::fill(op, op + plane, bias[k]);
        for (std::size_t c = 0; c < g.channels; ++c) {
            const double* ip = in + c * g.height * g.width;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const auto ry = valid_outputs(g.out_h, g.height, ky, stride, pad);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const auto rx = valid_outputs(g.out_w, g.width, kx, stride, pad);
                    const double wv = w[((k * g.channels + c) * g.kh + ky) * g.kw + kx];
                    for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
                        const auto iy = oy * stride + ky - pad;
                        const double* irow = ip + iy * g.width;
                        double* orow = op + oy * g.out_w;
                        if (stride == 1) {
                            const double* src = irow + (rx.begin + kx - pad);
                            for (std::size_t ox = rx.begin; ox < rx.end; ++ox) orow[ox] += wv * src[ox - rx.begin];
                        } else {
                            for (std::size_t ox = rx.begin; ox < rx.end; ++ox)
                                orow[ox] += wv * irow[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_output,
                            int stride, int pad, bool input_grad) {
    const auto g = conv_geometry(input, kernels, stride, pad);
    require(grad_output.shape() == Shape({g.filters, g.out_h, g.out_w}),
            "conv2d_backward: grad_output shape " + shape_string(grad_output.shape()));

    Conv2dGrads grads{input_grad ? Tensor(input.shape()) : Tensor(), Tensor(kernels.shape()), Tensor({g.filters})};
    const double* in = input.data().data();
    const double* w = kernels.data().data();
    const double* go = grad_output.data().data();
    double* gi = input_grad ? grads.input.data().data() : nullptr;
    double* gw = grads.kernels.data().data();
    const auto plane = g.out_h * g.out_w;

    for (std::size_t k = 0; k < g.filters; ++k) {
        const double* gp = go + k * plane;
        double sum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) sum += gp[i];
        grads.bias[k] = sum;
        for (std::size_t c = 0; c < g.channels; ++c) {
            const double* ip = in + c * g.height * g.width;
            double* gip = gi ? gi + c * g.height * g.width : nullptr;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const auto ry = valid_outputs(g.out_h, g.height, ky, stride, pad);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const auto rx = valid_outputs(g.out_w, g.width, kx, stride, pad);
                    const auto widx = ((k * g.channels + c) * g.kh + ky) * g.kw + kx;
                    const double wv = w[widx];
                    double lanes[4] = {0.0, 0.0, 0.0, 0.0};
                    for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
                        const auto iy = oy * stride + ky - pad;
                        const double* irow = ip + iy * g.width;
                        const double* grow = gp + oy * g.out_w;
                        if (stride == 1) {
                            const double* src = irow + (rx.begin + kx - pad);
                            const double* gsrc = grow + rx.begin;
                            const std::size_t len = rx.end - rx.begin;
                            std::size_t i = 0;
                            for (; i + 4 <= len; i += 4)
                                for (std::size_t l = 0; l < 4; ++l) lanes[l] += gsrc[i + l] * src[i + l];
                            for (; i < len; ++i) lanes[0] += gsrc[i] * src[i];
                            if (gip) {
                                double* dst = gip + iy * g.width + (rx.begin + kx - pad);
                                for (std::size_t j = 0; j < len; ++j) dst[j] += wv * gsrc[j];
                            }
                        } else {
                            for (std::size_t ox = rx.begin; ox < rx.end; ++ox) {
                                const auto ix = ox * stride + kx - pad;
                                lanes[0] += grow[ox] * irow[ix];
                                if (gip) gip[iy * g.width + ix] += wv * grow[ox];
                            }
                        }
                    }
                    gw[widx] = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
                }
            }
        }
    }
    return grads;
}

MaxPoolResult maxpool2(const Tensor& input) {
    require(input.rank() == 3, "maxpool2: input must be C x H x W");
    const auto c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    require(h >= 2 && w >= 2, "maxpool2: H and W must be >= 2, got " + shape_string(input.shape()));
    const auto oh = h / 2, ow = w / 2;
    MaxPoolResult r{Tensor({c_n, oh, ow}), std::vector<std::uint32_t>(c_n * oh * ow)};
    const double* in = input.data().data();
    std::size_t out_i = 0;
    for (std::size_t c = 0; c < c_n; ++c) {
        const double* p = in + c * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x, ++out_i) {
                std::size_t best = (2 * y) * w + 2 * x;
                const std::size_t candidates[3] = {best + 1, best + w, best + w + 1};
                for (auto cand : candidates)
                    if (p[cand] > p[best]) best = cand;
                r.output[out_i] = p[best];
                r.argmax[out_i] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return r;
}

Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                         const Tensor& grad_output) {
    require(input_shape.size() == 3, "maxpool2_backward: input shape must be rank 3");
    require(argmax.size() == grad_output.size(), "maxpool2_backward: argmax/grad size mismatch");
    Tensor grad(input_shape);
    const auto plane_in = input_shape[1] * input_shape[2];
    const auto plane_out = grad_output.size() / input_shape[0];
    for (std::size_t i = 0; i < grad_output.size(); ++i) {
        const auto c = i / plane_out;
        grad[c * plane_in + argmax[i]] += grad_output[i];
    }
    return grad;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require(weights.rank() == 2, "dense: weights must be M x N");
    const auto m = weights.dim(0), n = weights.dim(1);
    require(input.size() == n, "dense: input length " + std::to_string(input.size()) + " != " + std::to_string(n));
    require(bias.size() == m, "dense: bias length mismatch");
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        double sum = bias[i];
        const double* row = weights.data().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) sum += row[j] * input[j];
        out[i] = sum;
    }
    return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
    const auto m = weights.dim(0), n = weights.dim(1);
    require(input.size() == n && grad_output.size() == m, "dense_backward: shape mismatch");
    DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({m})};
    for (std::size_t i = 0; i < m; ++i) {
        const double go = grad_output[i];
        g.bias[i] = go;
        const double* row = weights.data().data() + i * n;
        double* grow = g.weights.data().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            grow[j] = go * input[j];
            g.input[j] += row[j] * go;
        }
    }
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
    require(input.shape() == grad_output.shape(), "relu_backward: shape mismatch");
    Tensor g(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? grad_output[i] : 0.0;
    return g;
}

Tensor global_avg_pool(const Tensor& input) {
    require(input.rank() == 3, "global_avg_pool: input must be C x H x W");
    const auto c_n = input.dim(0), plane = input.dim(1) * input.dim(2);
    Tensor out({c_n});
    for (std::size_t c = 0; c < c_n; ++c) {
        double sum = 0.0;
        const double* p = input.data().data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        out[c] = sum / static_cast<double>(plane);
    }
    return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_output) {
    require(input_shape.size() == 3 && grad_output.size() == input_shape[0],
            "global_avg_pool_backward: shape mismatch");
    Tensor g(input_shape);
    const auto plane = input_shape[1] * input_shape[2];
    for (std::size_t c = 0; c < input_shape[0]; ++c) {
        const double v = grad_output[c] / static_cast<double>(plane);
        std::fill_n(g.data().data() + c * plane, plane, v);
    }
    return g;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw Error(Errc::invalid_argument, "softmax: need at least one logit");
    for (double z : logits)
        if (!std::isfinite(z)) throw Error(Errc::numeric, "softmax: non-finite logit");
    const double zmax = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - zmax);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

double sigmoid(double z) noexcept {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace ensel
