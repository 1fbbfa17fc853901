#include "ensel/explain.hpp"

#include "ensel/detect.hpp"
#include "ensel/error.hpp"

#include <algorithm>

namespace ensel {

CamResult grad_cam_layer(const Network& net, const Tensor& input, std::size_t target, std::size_t layer) {
    const auto& layers = net.architecture().layers;
    if (layer >= layers.size()) throw Error(Errc::invalid_argument, "grad_cam: layer index out of range");
    const auto pass = network_forward(net, input);
    if (target >= pass.output.size()) throw Error(Errc::invalid_argument, "grad_cam: target class out of range");

    Tensor seed(pass.output.shape(), 0.0);
    seed[target] = 1.0;
    const auto grads = network_backward(net, pass.cache, seed, true);
    const Tensor& a = pass.cache.activations[layer + 1];
    const Tensor& g = grads.activations[layer + 1];
    if (a.rank() != 3) throw Error(Errc::invalid_shape, "grad_cam: chosen layer is not a feature map");

    const std::size_t channels = a.dim(0), h = a.dim(1), w = a.dim(2), plane = h * w;
    std::vector<double> alpha(channels, 0.0);
    for (std::size_t k = 0; k < channels; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += g[k * plane + i];
        alpha[k] = s / static_cast<double>(plane);
    }

    CamResult r;
    r.target_class = target;
    r.raw = Heatmap(static_cast<int>(h), static_cast<int>(w));
    double peak = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < channels; ++k) s += alpha[k] * a[k * plane + i];
        r.raw.values[i] = std::max(0.0, s);
        peak = std::max(peak, r.raw.values[i]);
    }
    Heatmap norm(r.raw.height, r.raw.width);
    if (peak > 0.0)
        for (std::size_t i = 0; i < plane; ++i) norm.values[i] = r.raw.values[i] / peak;
    r.heatmap = resize_bilinear(norm, static_cast<int>(input.dim(1)), static_cast<int>(input.dim(2)));
    for (auto& v : r.heatmap.values) v = std::clamp(v, 0.0, 1.0);
    return r;
}

CamResult grad_cam(const ClassifierModel& model, const ImageU8& input, std::size_t target_class) {
    if (input.height != kClassifierInput || input.width != kClassifierInput)
        throw Error(Errc::invalid_shape, "grad_cam: classifier input must be 64x64");
    if (target_class >= model.class_count()) throw Error(Errc::invalid_argument, "grad_cam: unknown class index");
    auto r = grad_cam_layer(model.net, image_to_tensor(input), target_class, kClassifierCamLayer);
    r.target_label = model.labels[target_class];
    r.model_id = model.meta.id;
    return r;
}

CamResult grad_cam(const ClassifierModel& model, const ImageU8& input, const std::string& target_label) {
    const auto it = std::find(model.labels.begin(), model.labels.end(), target_label);
    if (it == model.labels.end())
        throw Error(Errc::invalid_argument, "grad_cam: model has no class '" + target_label + "'");
    return grad_cam(model, input, static_cast<std::size_t>(it - model.labels.begin()));
}

ImageU8 cam_overlay(const ImageU8& image, const CamResult& cam, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::invalid_argument, "cam_overlay: alpha must lie in [0,1]");
    const Heatmap& heat = (cam.heatmap.height == image.height && cam.heatmap.width == image.width)
                              ? cam.heatmap
                              : resize_bilinear(cam.heatmap, image.height, image.width);
    return alpha_blend(image, colormap(heat), alpha);
}

ImageU8 segmentation_overlay(const ImageU8& image, const Heatmap& mask, Rgb color, double alpha) {
    return alpha_blend(image, color, mask, alpha);
}

std::vector<CamResult> cam_compare(std::span<const ClassifierModel* const> models, const ImageU8& input,
                                   const std::string& target_label) {
    std::vector<CamResult> out;
    out.reserve(models.size());
    for (const auto* m : models) out.push_back(grad_cam(*m, input, target_label));
    return out;
}

ImageU8 explain_overlay(const ImageU8& image, const ClassifierModel& model, const std::string& target_label,
                        const std::optional<BBox>& region, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::invalid_argument, "explain_overlay: alpha must lie in [0,1]");
    if (!region) {
        const auto cam = grad_cam(model, resize_bilinear(image, kClassifierInput, kClassifierInput), target_label);
        return cam_overlay(image, cam, alpha);
    }
    const BBox box = clamp_to(*region, image.width, image.height);
    const auto cam = grad_cam(model, rescale_crop(image, box), target_label);
    const ImageU8 tint = colormap(resize_bilinear(cam.heatmap, box.height(), box.width()));
    ImageU8 out = image;
    for (int y = 0; y < box.height(); ++y)
        for (int x = 0; x < box.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                const double b = image.at(box.y0 + y, box.x0 + x, c);
                out.at(box.y0 + y, box.x0 + x, c) = round_half_up_u8(alpha * tint.at(y, x, c) + (1.0 - alpha) * b);
            }
    return out;
}

}  // namespace ensel
