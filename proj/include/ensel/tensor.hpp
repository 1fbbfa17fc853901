#pragma once

// Dense f64 tensors and the handful of layer primitives the two frozen
// networks need, each with an exact backward pass.
//
// Summation order is part of the contract: conv2d accumulates, for every
// output element, bias first and then input-channel -> kernel-row ->
// kernel-column; dense accumulates bias then j = 0..N-1. Results are
// therefore bit-reproducible against a naive loop with the same order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ensel {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // C x H x W indexing.
    double& at(std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    void fill(double value) noexcept;
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// input C x H x W, kernels K x C x kh x kw, bias K.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride, int pad);

struct Conv2dGrads {
    Tensor input;
    Tensor kernels;
    Tensor bias;
};

// With input_grad = false the input gradient is skipped and left empty.
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_output,
                            int stride, int pad, bool input_grad = true);

struct MaxPoolResult {
    Tensor output;
    // Flat index (y * W + x) into the input plane of the winning element,
    // one per output element, row-major over C x H' x W'.
    std::vector<std::uint32_t> argmax;
};

// 2x2 window, stride 2. Ties resolve to the first element in row-major order.
MaxPoolResult maxpool2(const Tensor& input);
Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                         const Tensor& grad_output);

// x: N, weights: M x N, bias: M.
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

// C x H x W -> C.
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_output);

// Max-shifted softmax. Throws Errc::numeric on non-finite logits.
std::vector<double> softmax(std::span<const double> logits);

double sigmoid(double z) noexcept;

}  // namespace ensel
