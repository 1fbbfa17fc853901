#pragma once

// Sequential networks over the fixed layer vocabulary of the two frozen
// architectures (lesion detector and lesion classifier). Backward passes are
// hand-derived per layer kind; there is no general autodiff graph.

#include "ensel/rng.hpp"
#include "ensel/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ensel {

enum class LayerKind { conv, relu, maxpool2, global_avg_pool, dense };

std::string to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t out_channels = 0;  // conv filters or dense outputs
    std::size_t kernel = 0;        // conv only, square
    int pad = 0;
    int stride = 1;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureSpec {
    std::string name;
    Shape input;  // C x H x W
    std::vector<LayerSpec> layers;

    friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

inline constexpr const char* kDetectorArchitecture = "ensel-detector-v1";
inline constexpr const char* kClassifierArchitecture = "ensel-classifier-v1";

// 3x128x128 -> conv3x3x8(p1) relu pool -> conv3x3x8(p1) relu pool -> conv1x1x1 -> 1x32x32 logits.
ArchitectureSpec detector_architecture();
// 3x64x64 -> conv3x3x8(p1) relu pool -> conv3x3x16(p1) relu pool -> gap -> dense 16->C.
ArchitectureSpec classifier_architecture(std::size_t class_count);

// Layer index whose output is the Grad-CAM feature map in the classifier
// (the 16x16x16 map after the last conv block).
inline constexpr std::size_t kClassifierCamLayer = 5;

// Activation shapes: element 0 is the input, element i+1 the output of layer i.
std::vector<Shape> activation_shapes(const ArchitectureSpec& arch);

struct LayerParams {
    Tensor weights;  // empty for parameter-free layers
    Tensor bias;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

class Network {
public:
    Network() = default;
    // Zero-initialised parameters with shapes from the architecture.
    explicit Network(ArchitectureSpec arch);
    Network(ArchitectureSpec arch, std::vector<LayerParams> params);

    const ArchitectureSpec& architecture() const noexcept { return arch_; }
    const std::vector<LayerParams>& params() const noexcept { return params_; }
    std::vector<LayerParams>& params() noexcept { return params_; }
    const Shape& output_shape() const noexcept { return output_shape_; }

    // Expected parameter shapes in declared order (weights, bias per
    // parameterised layer).
    std::vector<Shape> parameter_shapes() const;
    std::size_t parameter_count() const;

    // FNV-1a over the raw parameter bits; used to reject stale caches.
    std::uint64_t digest() const noexcept;

    friend bool operator==(const Network&, const Network&) = default;

private:
    void validate() const;

    ArchitectureSpec arch_;
    std::vector<LayerParams> params_;
    Shape output_shape_;
};

// He-uniform weights, zero biases, drawn in declared order.
Network init_network(const ArchitectureSpec& arch, std::uint64_t seed);

struct LayerCache {
    std::string architecture;
    std::uint64_t params_digest = 0;
    std::vector<Tensor> activations;                  // size layers + 1
    std::vector<std::vector<std::uint32_t>> argmax;   // per layer; empty unless maxpool2
};

struct ForwardPass {
    Tensor output;
    LayerCache cache;
};

ForwardPass network_forward(const Network& net, const Tensor& input);

// Runs layers [first, end) starting from an activation of layer `first`'s
// input shape. No cache is produced.
Tensor forward_from(const Network& net, const Tensor& activation, std::size_t first);

struct Gradients {
    std::vector<LayerParams> params;  // same layout as Network::params()
    Tensor input;
    // Filled only when requested: gradient w.r.t. activations[i].
    std::vector<Tensor> activations;
};

// input_grad = false skips the gradient w.r.t. the network input
// (Gradients::input stays empty); parameter gradients are unaffected.
Gradients network_backward(const Network& net, const LayerCache& cache, const Tensor& grad_output,
                           bool keep_activation_grads = false, bool input_grad = true);

using BackwardFn = std::function<Gradients(const Network&, const LayerCache&, const Tensor&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    std::size_t samples_per_tensor = 12;
    std::size_t input_samples = 24;
    std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Samples whose +-eps evaluations straddle a ReLU sign change or a
    // max-pool winner change; the central difference is not a derivative
    // there, so they are replaced by the next candidate.
    std::size_t kinks_skipped = 0;
};

// Worst relative error |a - n| / max(|a|, |n|, 1e-6) between the analytic
// gradient of f = sum_i c_i * out_i (c drawn from the seed) and the central
// difference (f(t+e) - f(t-e)) / 2e, over a sampled subset of parameters and
// input elements.
GradCheckReport grad_check(const Network& net, const Tensor& input, const GradCheckOptions& options = {},
                           const BackwardFn& backward = {});

}  // namespace ensel
