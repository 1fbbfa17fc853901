#include "ensel/network.hpp"

#include "ensel/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace ensel {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2: return "maxpool2";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::dense: return "dense";
    }
    return "unknown";
}

ArchitectureSpec detector_architecture() {
    return {kDetectorArchitecture,
            {3, 128, 128},
            {
                {LayerKind::conv, 8, 3, 1, 1},
                {LayerKind::relu},
                {LayerKind::maxpool2},
                {LayerKind::conv, 8, 3, 1, 1},
                {LayerKind::relu},
                {LayerKind::maxpool2},
                {LayerKind::conv, 1, 1, 0, 1},
            }};
}

ArchitectureSpec classifier_architecture(std::size_t class_count) {
    return {kClassifierArchitecture,
            {3, 64, 64},
            {
                {LayerKind::conv, 8, 3, 1, 1},
                {LayerKind::relu},
                {LayerKind::maxpool2},
                {LayerKind::conv, 16, 3, 1, 1},
                {LayerKind::relu},
                {LayerKind::maxpool2},
                {LayerKind::global_avg_pool},
                {LayerKind::dense, class_count},
            }};
}

std::vector<Shape> activation_shapes(const ArchitectureSpec& arch) {
    if (arch.input.size() != 3) throw Error(Errc::invalid_shape, "architecture input must be C x H x W");
    std::vector<Shape> shapes{arch.input};
    for (const auto& layer : arch.layers) {
        const Shape& in = shapes.back();
        Shape out;
        switch (layer.kind) {
            case LayerKind::conv: {
                if (in.size() != 3 || layer.kernel == 0 || layer.out_channels == 0 || layer.stride < 1)
                    throw Error(Errc::invalid_shape, "bad conv layer in " + arch.name);
                const auto ph = in[1] + 2 * static_cast<std::size_t>(layer.pad);
                const auto pw = in[2] + 2 * static_cast<std::size_t>(layer.pad);
                if (layer.kernel > ph || layer.kernel > pw)
                    throw Error(Errc::invalid_shape, "conv kernel larger than input in " + arch.name);
                const auto s = static_cast<std::size_t>(layer.stride);
                out = {layer.out_channels, (ph - layer.kernel) / s + 1, (pw - layer.kernel) / s + 1};
                break;
            }
            case LayerKind::relu: out = in; break;
            case LayerKind::maxpool2:
                if (in.size() != 3 || in[1] < 2 || in[2] < 2)
                    throw Error(Errc::invalid_shape, "maxpool2 needs H, W >= 2 in " + arch.name);
                out = {in[0], in[1] / 2, in[2] / 2};
                break;
            case LayerKind::global_avg_pool:
                if (in.size() != 3) throw Error(Errc::invalid_shape, "gap needs rank-3 input in " + arch.name);
                out = {in[0]};
                break;
            case LayerKind::dense:
                if (layer.out_channels == 0) throw Error(Errc::invalid_shape, "dense layer needs outputs");
                out = {layer.out_channels};
                break;
        }
        shapes.push_back(std::move(out));
    }
    return shapes;
}

namespace {

bool has_params(LayerKind kind) { return kind == LayerKind::conv || kind == LayerKind::dense; }

std::pair<Shape, Shape> param_shapes(const LayerSpec& layer, const Shape& in) {
    if (layer.kind == LayerKind::conv)
        return {{layer.out_channels, in[0], layer.kernel, layer.kernel}, {layer.out_channels}};
    return {{layer.out_channels, shape_size(in)}, {layer.out_channels}};
}

}  // namespace

Network::Network(ArchitectureSpec arch) : arch_(std::move(arch)) {
    const auto shapes = activation_shapes(arch_);
    params_.resize(arch_.layers.size());
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
        if (!has_params(arch_.layers[i].kind)) continue;
        auto [ws, bs] = param_shapes(arch_.layers[i], shapes[i]);
        params_[i] = {Tensor(ws), Tensor(bs)};
    }
    output_shape_ = shapes.back();
}

Network::Network(ArchitectureSpec arch, std::vector<LayerParams> params)
    : arch_(std::move(arch)), params_(std::move(params)) {
    validate();
    output_shape_ = activation_shapes(arch_).back();
}

void Network::validate() const {
    const auto shapes = activation_shapes(arch_);
    if (params_.size() != arch_.layers.size())
        throw Error(Errc::shape_mismatch, "parameter list length does not match " + arch_.name);
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
        const auto& p = params_[i];
        if (!has_params(arch_.layers[i].kind)) {
            if (!p.weights.empty() || !p.bias.empty())
                throw Error(Errc::shape_mismatch, "layer " + std::to_string(i) + " takes no parameters");
            continue;
        }
        auto [ws, bs] = param_shapes(arch_.layers[i], shapes[i]);
        if (p.weights.shape() != ws || p.bias.shape() != bs)
            throw Error(Errc::shape_mismatch, "layer " + std::to_string(i) + " expects weights " +
                                                  shape_string(ws) + ", got " + shape_string(p.weights.shape()));
    }
}

std::vector<Shape> Network::parameter_shapes() const {
    std::vector<Shape> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!has_params(arch_.layers[i].kind)) continue;
        out.push_back(params_[i].weights.shape());
        out.push_back(params_[i].bias.shape());
    }
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weights.size() + p.bias.size();
    return n;
}

std::uint64_t Network::digest() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params_) {
        for (double v : p.weights.data()) mix(v);
        for (double v : p.bias.data()) mix(v);
    }
    return h;
}

Network init_network(const ArchitectureSpec& arch, std::uint64_t seed) {
    Network net(arch);
    SplitMix64 rng(seed);
    const auto shapes = activation_shapes(arch);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        auto& p = net.params()[i];
        if (p.weights.empty()) continue;
        const double fan_in = static_cast<double>(p.weights.size() / p.weights.dim(0));
        const double limit = std::sqrt(6.0 / fan_in);
        for (auto& w : p.weights.data()) w = rng.uniform(-limit, limit);
    }
    return net;
}

ForwardPass network_forward(const Network& net, const Tensor& input) {
    const auto& arch = net.architecture();
    if (input.shape() != arch.input)
        throw Error(Errc::invalid_shape, arch.name + " expects input " + shape_string(arch.input) + ", got " +
                                             shape_string(input.shape()));
    ForwardPass pass;
    pass.cache.architecture = arch.name;
    pass.cache.params_digest = net.digest();
    pass.cache.activations.reserve(arch.layers.size() + 1);
    pass.cache.argmax.resize(arch.layers.size());
    pass.cache.activations.push_back(input);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& layer = arch.layers[i];
        const auto& p = net.params()[i];
        const Tensor& x = pass.cache.activations.back();
        Tensor y;
        switch (layer.kind) {
            case LayerKind::conv: y = conv2d(x, p.weights, p.bias, layer.stride, layer.pad); break;
            case LayerKind::relu: y = relu(x); break;
            case LayerKind::maxpool2: {
                auto r = maxpool2(x);
                y = std::move(r.output);
                pass.cache.argmax[i] = std::move(r.argmax);
                break;
            }
            case LayerKind::global_avg_pool: y = global_avg_pool(x); break;
            case LayerKind::dense: y = dense(x, p.weights, p.bias); break;
        }
        pass.cache.activations.push_back(std::move(y));
    }
    pass.output = pass.cache.activations.back();
    return pass;
}

Tensor forward_from(const Network& net, const Tensor& activation, std::size_t first) {
    const auto& arch = net.architecture();
    if (first > arch.layers.size()) throw Error(Errc::invalid_argument, "forward_from: layer out of range");
    const auto shapes = activation_shapes(arch);
    if (activation.shape() != shapes[first])
        throw Error(Errc::invalid_shape, "forward_from: activation shape " + shape_string(activation.shape()));
    Tensor x = activation;
    for (std::size_t i = first; i < arch.layers.size(); ++i) {
        const auto& layer = arch.layers[i];
        const auto& p = net.params()[i];
        switch (layer.kind) {
            case LayerKind::conv: x = conv2d(x, p.weights, p.bias, layer.stride, layer.pad); break;
            case LayerKind::relu: x = relu(x); break;
            case LayerKind::maxpool2: x = maxpool2(x).output; break;
            case LayerKind::global_avg_pool: x = global_avg_pool(x); break;
            case LayerKind::dense: x = dense(x, p.weights, p.bias); break;
        }
    }
    return x;
}

Gradients network_backward(const Network& net, const LayerCache& cache, const Tensor& grad_output,
                           bool keep_activation_grads, bool input_grad) {
    const auto& arch = net.architecture();
    const auto n = arch.layers.size();
    if (cache.architecture != arch.name || cache.activations.size() != n + 1 || cache.argmax.size() != n)
        throw Error(Errc::invalid_state, "layer cache does not belong to " + arch.name);
    if (cache.params_digest != net.digest())
        throw Error(Errc::invalid_state, "layer cache is stale: parameters changed since the forward pass");
    if (grad_output.shape() != cache.activations.back().shape())
        throw Error(Errc::invalid_shape, "grad_output shape " + shape_string(grad_output.shape()) +
                                             " does not match network output " +
                                             shape_string(cache.activations.back().shape()));

    Gradients g;
    g.params.resize(n);
    if (keep_activation_grads) g.activations.resize(n + 1);
    Tensor grad = grad_output;
    for (std::size_t i = n; i-- > 0;) {
        if (keep_activation_grads) g.activations[i + 1] = grad;
        const auto& layer = arch.layers[i];
        const auto& p = net.params()[i];
        const Tensor& x = cache.activations[i];
        switch (layer.kind) {
            case LayerKind::conv: {
                auto cg = conv2d_backward(x, p.weights, grad, layer.stride, layer.pad, input_grad || i > 0);
                g.params[i] = {std::move(cg.kernels), std::move(cg.bias)};
                grad = std::move(cg.input);
                break;
            }
            case LayerKind::relu: grad = relu_backward(x, grad); break;
            case LayerKind::maxpool2: grad = maxpool2_backward(x.shape(), cache.argmax[i], grad); break;
            case LayerKind::global_avg_pool: grad = global_avg_pool_backward(x.shape(), grad); break;
            case LayerKind::dense: {
                auto dg = dense_backward(x, p.weights, grad);
                g.params[i] = {std::move(dg.weights), std::move(dg.bias)};
                grad = std::move(dg.input);
                break;
            }
        }
    }
    if (keep_activation_grads) g.activations[0] = grad;
    g.input = std::move(grad);
    return g;
}

namespace {

double projected(const Tensor& out, const std::vector<double>& coeffs) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += coeffs[i] * out[i];
    return s;
}

double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// True when the two passes share every ReLU sign and max-pool winner, i.e.
// the network is the same smooth function at both points.
bool same_regime(const ArchitectureSpec& arch, const LayerCache& a, const LayerCache& b) {
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        if (arch.layers[i].kind == LayerKind::relu) {
            const auto& x = a.activations[i];
            const auto& y = b.activations[i];
            for (std::size_t k = 0; k < x.size(); ++k)
                if ((x[k] > 0.0) != (y[k] > 0.0)) return false;
        } else if (arch.layers[i].kind == LayerKind::maxpool2) {
            if (a.argmax[i] != b.argmax[i]) return false;
        }
    }
    return true;
}

}  // namespace

GradCheckReport grad_check(const Network& net, const Tensor& input, const GradCheckOptions& options,
                           const BackwardFn& backward) {
    if (!(options.eps > 0.0 && options.eps <= 1e-2))
        throw Error(Errc::invalid_argument, "grad_check: eps must lie in (0, 1e-2]");
    SplitMix64 rng(options.seed);

    const auto base = network_forward(net, input);
    std::vector<double> coeffs(base.output.size());
    for (auto& c : coeffs) c = rng.uniform(-1.0, 1.0);
    Tensor dout(base.output.shape(), coeffs);

    const Gradients analytic =
        backward ? backward(net, base.cache, dout) : network_backward(net, base.cache, dout);

    GradCheckReport report;
    const auto& arch = net.architecture();
    // Perturbs target[i] by +-eps through `eval`; returns false when a kink
    // lies between the two points.
    auto probe_element = [&](Tensor& target, std::size_t i, double grad, auto&& eval) {
        const double saved = target[i];
        target[i] = saved + options.eps;
        const auto plus = eval();
        target[i] = saved - options.eps;
        const auto minus = eval();
        target[i] = saved;
        if (!same_regime(arch, base.cache, plus.cache) || !same_regime(arch, base.cache, minus.cache)) {
            ++report.kinks_skipped;
            return false;
        }
        const double numeric = (projected(plus.output, coeffs) - projected(minus.output, coeffs)) / (2.0 * options.eps);
        report.max_rel_error = std::max(report.max_rel_error, rel_error(grad, numeric));
        ++report.checked;
        return true;
    };
    auto probe_tensor = [&](Tensor& target, const Tensor& grad, std::size_t wanted, auto&& eval) {
        std::vector<std::size_t> order(target.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle(std::span(order), rng);
        std::size_t done = 0;
        for (std::size_t k = 0; k < order.size() && done < wanted; ++k)
            if (probe_element(target, order[k], grad[order[k]], eval)) ++done;
    };

    Network probe = net;
    auto eval_params = [&] { return network_forward(probe, input); };
    for (std::size_t layer = 0; layer < probe.params().size(); ++layer) {
        auto& p = probe.params()[layer];
        if (!p.weights.empty()) probe_tensor(p.weights, analytic.params[layer].weights, options.samples_per_tensor, eval_params);
        if (!p.bias.empty()) probe_tensor(p.bias, analytic.params[layer].bias, options.samples_per_tensor, eval_params);
    }

    Tensor x = input;
    probe_tensor(x, analytic.input, options.input_samples, [&] { return network_forward(net, x); });
    return report;
}

}  // namespace ensel
