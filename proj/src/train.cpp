#include "ensel/train.hpp"

#include "ensel/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

namespace ensel {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const SyntheticDatasetSpec& spec) {
    if (spec.per_class < 1) throw Error(Errc::invalid_argument, "per-class count must be >= 1");
    if (spec.classes.empty()) throw Error(Errc::invalid_argument, "dataset needs at least one class");
    if (std::set<std::string>(spec.classes.begin(), spec.classes.end()).size() != spec.classes.size())
        throw Error(Errc::invalid_argument, "class names must be unique");
    if (spec.min_axis < 1 || spec.max_axis < spec.min_axis)
        throw Error(Errc::invalid_argument, "lesion axis range is invalid");
    if (2 * spec.max_axis > std::min(spec.height, spec.width))
        throw Error(Errc::invalid_argument, "largest lesion does not fit in the image");
    if (spec.noise_min < 0 || spec.noise_max < spec.noise_min || spec.noise_max > 255)
        throw Error(Errc::invalid_argument, "noise range is invalid");
}

namespace {

enum class LesionStyle { speckled, dotted, solid };

LesionStyle style_for(const std::string& label, std::size_t class_index) {
    if (label == "atopic_dermatitis") return LesionStyle::speckled;
    if (label == "psoriasis") return LesionStyle::dotted;
    if (label == "nevus") return LesionStyle::solid;
    return static_cast<LesionStyle>(class_index % 3);
}

struct Palette {
    Rgb base;
    Rgb accent;
    double accent_rate;
};

Palette palette_for(LesionStyle style) {
    switch (style) {
        case LesionStyle::speckled: return {{196, 84, 84}, {128, 36, 44}, 0.35};
        case LesionStyle::dotted: return {{214, 112, 108}, {246, 240, 232}, 0.25};
        case LesionStyle::solid: break;
    }
    return {{92, 62, 52}, {92, 62, 52}, 0.0};
}

}  // namespace

std::vector<LabeledSample> generate_synthetic(const SyntheticDatasetSpec& spec, std::uint64_t seed) {
    validate(spec);
    SplitMix64 rng(seed);
    const std::size_t class_count = spec.classes.size();
    const std::size_t total = class_count * static_cast<std::size_t>(spec.per_class);
    std::vector<LabeledSample> samples;
    samples.reserve(total);

    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t ci = i % class_count;
        LabeledSample s;
        s.label = spec.classes[ci];
        s.noise = static_cast<int>(rng.uniform_int(spec.noise_min, spec.noise_max));
        ImageU8 img(spec.height, spec.width, spec.base_tone);

        if (s.label != kHealthyLabel) {
            const auto style = style_for(s.label, ci);
            const auto pal = palette_for(style);
            const int a = static_cast<int>(rng.uniform_int(spec.min_axis, spec.max_axis));
            const int b = style == LesionStyle::solid ? a : static_cast<int>(rng.uniform_int(spec.min_axis, spec.max_axis));
            const int cx = static_cast<int>(rng.uniform_int(a, spec.width - a));
            const int cy = static_cast<int>(rng.uniform_int(b, spec.height - b));
            BBox box{spec.width, spec.height, 0, 0, 1.0, std::nullopt};
            for (int y = cy - b; y < cy + b; ++y) {
                for (int x = cx - a; x < cx + a; ++x) {
                    const double dx = (x + 0.5 - cx) / a, dy = (y + 0.5 - cy) / b;
                    if (dx * dx + dy * dy > 1.0) continue;
                    const bool accent = pal.accent_rate > 0.0 && rng.uniform() < pal.accent_rate;
                    const Rgb& c = accent ? pal.accent : pal.base;
                    for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
                    box.x0 = std::min(box.x0, x);
                    box.y0 = std::min(box.y0, y);
                    box.x1 = std::max(box.x1, x + 1);
                    box.y1 = std::max(box.y1, y + 1);
                }
            }
            s.box = box;
        }

        for (auto& p : img.pixels) {
            const auto offset = rng.uniform_int(-s.noise, s.noise);
            p = static_cast<std::uint8_t>(std::clamp<std::int64_t>(p + offset, 0, 255));
        }
        s.image = std::move(img);
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_dataset(const std::string& dir, const std::vector<LabeledSample>& samples) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(Errc::io, "cannot create dataset directory " + dir);
    json list = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.ppm", i);
        write_image((fs::path(dir) / name).string(), samples[i].image, ImageFormat::ppm);
        json entry = {{"file", name}, {"label", samples[i].label}, {"noise", samples[i].noise}};
        if (const auto& b = samples[i].box)
            entry["box"] = {{"x0", b->x0}, {"y0", b->y0}, {"x1", b->x1}, {"y1", b->y1}};
        else
            entry["box"] = nullptr;
        list.push_back(std::move(entry));
    }
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    out << json{{"samples", list}}.dump(2) << '\n';
    if (!out) throw Error(Errc::io, "cannot write dataset manifest in " + dir);
}

std::vector<LabeledSample> read_dataset(const std::string& dir) {
    const auto manifest = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest);
    if (!in) throw Error(Errc::missing_file, "no dataset manifest at " + manifest.string());
    std::vector<LabeledSample> samples;
    try {
        const json j = json::parse(in);
        for (const auto& e : j.at("samples")) {
            LabeledSample s;
            s.image = read_image((fs::path(dir) / e.at("file").get<std::string>()).string());
            s.label = e.at("label").get<std::string>();
            s.noise = e.value("noise", 0);
            if (e.contains("box") && !e.at("box").is_null()) {
                const auto& b = e.at("box");
                s.box = BBox{b.at("x0").get<int>(), b.at("y0").get<int>(), b.at("x1").get<int>(), b.at("y1").get<int>(), 1.0, std::nullopt};
            }
            samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw Error(Errc::metadata, "bad dataset manifest: " + std::string(e.what()));
    }
    return samples;
}

void validate(const TrainConfig& c) {
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate))
        throw Error(Errc::invalid_argument, "learning rate must be positive");
    if (c.epochs < 1) throw Error(Errc::invalid_argument, "epochs must be >= 1");
    if (c.batch_size < 1) throw Error(Errc::invalid_argument, "batch size must be >= 1");
    if (c.patience < 1) throw Error(Errc::invalid_argument, "patience must be >= 1");
    for (double r : c.split)
        if (!(r >= 0.0)) throw Error(Errc::invalid_argument, "split ratios must be >= 0");
    if (std::abs(c.split[0] + c.split[1] + c.split[2] - 1.0) > 1e-9)
        throw Error(Errc::invalid_argument, "split ratios must sum to 1");
}

DatasetSplit split_dataset(const std::vector<LabeledSample>& samples, const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i) groups[samples[i].label].push_back(i);
    SplitMix64 rng(seed);
    DatasetSplit out;
    for (auto& [label, idx] : groups) {
        shuffle(std::span<std::size_t>(idx), rng);
        const auto n = idx.size();
        const auto n_train = std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratios[0] * n))));
        const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
        for (std::size_t k = 0; k < n; ++k) {
            auto& dest = k < n_train ? out.train : (k < n_train + n_val ? out.validation : out.test);
            dest.push_back(samples[idx[k]]);
        }
    }
    return out;
}

std::string LossCurve::csv() const {
    std::string out = "epoch,train_loss,val_loss\n";
    char line[96];
    for (std::size_t i = 0; i < train_loss.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", i + 1, train_loss[i], val_loss[i]);
        out += line;
    }
    return out;
}

EarlyStop early_stopping(const std::vector<double>& val_losses, int patience) {
    if (val_losses.empty()) throw Error(Errc::invalid_argument, "early_stopping: no validation losses");
    if (patience < 1) throw Error(Errc::invalid_argument, "early_stopping: patience must be >= 1");
    EarlyStop r{1, val_losses.size()};
    double best = val_losses[0];
    for (std::size_t e = 1; e <= val_losses.size(); ++e) {
        if (val_losses[e - 1] < best) {
            best = val_losses[e - 1];
            r.best_epoch = e;
        }
        if (e - r.best_epoch >= static_cast<std::size_t>(patience)) {
            r.stop_epoch = e;
            break;
        }
    }
    return r;
}

std::vector<std::string> dataset_labels(const std::vector<LabeledSample>& samples) {
    std::set<std::string> labels;
    for (const auto& s : samples) labels.insert(s.label);
    return {labels.begin(), labels.end()};
}

std::vector<ImageU8> classifier_views(const LabeledSample& sample, SplitMix64& rng) {
    std::vector<ImageU8> views;
    views.push_back(resize_bilinear(sample.image, kClassifierInput, kClassifierInput));
    BBox region;
    if (sample.box) {
        region = *sample.box;
    } else {
        const int limit = std::min(sample.image.height, sample.image.width);
        const int side = static_cast<int>(rng.uniform_int(std::min(20, limit), std::min(60, limit)));
        region.x0 = static_cast<int>(rng.uniform_int(0, sample.image.width - side));
        region.y0 = static_cast<int>(rng.uniform_int(0, sample.image.height - side));
        region.x1 = region.x0 + side;
        region.y1 = region.y0 + side;
    }
    views.push_back(rescale_crop(sample.image, region));
    return views;
}

namespace {

struct Example {
    Tensor input;
    std::size_t target = 0;
};

struct DetExample {
    Tensor input;
    Tensor target;
};

std::vector<Example> classifier_examples(const std::vector<LabeledSample>& samples,
                                         const std::vector<std::string>& labels, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<Example> out;
    for (const auto& s : samples) {
        const auto it = std::find(labels.begin(), labels.end(), s.label);
        if (it == labels.end()) throw Error(Errc::invalid_argument, "sample label '" + s.label + "' is not a model class");
        for (auto& v : classifier_views(s, rng))
            out.push_back({image_to_tensor(v), static_cast<std::size_t>(it - labels.begin())});
    }
    return out;
}

std::vector<LayerParams> zero_like(const std::vector<LayerParams>& params) {
    std::vector<LayerParams> z;
    z.reserve(params.size());
    for (const auto& p : params)
        z.push_back({p.weights.empty() ? Tensor() : Tensor(p.weights.shape()), p.bias.empty() ? Tensor() : Tensor(p.bias.shape())});
    return z;
}

void accumulate(std::vector<LayerParams>& acc, const std::vector<LayerParams>& g) {
    for (std::size_t l = 0; l < acc.size(); ++l) {
        for (std::size_t i = 0; i < acc[l].weights.size(); ++i) acc[l].weights[i] += g[l].weights[i];
        for (std::size_t i = 0; i < acc[l].bias.size(); ++i) acc[l].bias[i] += g[l].bias[i];
    }
}

void sgd_step(std::vector<LayerParams>& params, const std::vector<LayerParams>& grad, double scale) {
    for (std::size_t l = 0; l < params.size(); ++l) {
        for (std::size_t i = 0; i < params[l].weights.size(); ++i) params[l].weights[i] -= scale * grad[l].weights[i];
        for (std::size_t i = 0; i < params[l].bias.size(); ++i) params[l].bias[i] -= scale * grad[l].bias[i];
    }
}

double cross_entropy(const Tensor& logits, std::size_t target, Tensor* grad) {
    const auto p = softmax(logits.data());
    if (grad) {
        *grad = Tensor(logits.shape(), p);
        (*grad)[target] -= 1.0;
    }
    return -std::log(p[target]);
}

double bce_with_logits(const Tensor& logits, const Tensor& target, Tensor* grad) {
    const double n = static_cast<double>(logits.size());
    if (grad) *grad = Tensor(logits.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i], t = target[i];
        loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
        if (grad) (*grad)[i] = (sigmoid(z) - t) / n;
    }
    return loss / n;
}

double mean_classifier_loss(const Network& net, const std::vector<Example>& examples) {
    double sum = 0.0;
    for (const auto& ex : examples) sum += cross_entropy(network_forward(net, ex.input).output, ex.target, nullptr);
    return sum / static_cast<double>(examples.size());
}

double mean_detector_loss(const Network& net, const std::vector<DetExample>& examples) {
    double sum = 0.0;
    for (const auto& ex : examples) sum += bce_with_logits(network_forward(net, ex.input).output, ex.target, nullptr);
    return sum / static_cast<double>(examples.size());
}

std::vector<DetExample> detector_examples(const std::vector<LabeledSample>& samples) {
    std::vector<DetExample> out;
    out.reserve(samples.size());
    for (const auto& s : samples)
        out.push_back({image_to_tensor(resize_bilinear(s.image, kDetectorInput, kDetectorInput)),
                       detector_targets(s.box, s.image.height, s.image.width)});
    return out;
}

// Shared minibatch SGD loop with best-validation tracking and early stopping.
template <typename Example, typename LossFn, typename ValFn>
Network run_sgd(Network net, const std::vector<Example>& train, const TrainConfig& config, LossFn&& loss_and_grad,
                ValFn&& validation_loss, LossCurve& curve, EarlyStop& stop) {
    if (train.empty()) throw Error(Errc::invalid_argument, "training set is empty");
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(config.seed ^ 0x53485546464c45ULL);

    Network best = net;
    double best_val = std::numeric_limits<double>::infinity();
    stop = {1, 0};
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            auto acc = zero_like(net.params());
            for (std::size_t k = start; k < end; ++k) {
                const auto& ex = train[order[k]];
                auto pass = network_forward(net, ex.input);
                Tensor grad_out;
                double loss = 0.0;
                try {
                    loss = loss_and_grad(pass.output, ex, grad_out);
                } catch (const Error& e) {
                    throw TrainingError(epoch, e.what());
                }
                if (!std::isfinite(loss)) throw TrainingError(epoch, "loss diverged to a non-finite value");
                epoch_loss += loss;
                accumulate(acc, network_backward(net, pass.cache, grad_out, false, false).params);
            }
            sgd_step(net.params(), acc, config.learning_rate / static_cast<double>(end - start));
        }
        double val = 0.0;
        try {
            val = validation_loss(net);
        } catch (const Error& e) {
            throw TrainingError(epoch, e.what());
        }
        if (!std::isfinite(val)) throw TrainingError(epoch, "validation loss is not finite");
        curve.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
        curve.val_loss.push_back(val);
        if (val < best_val) {
            best_val = val;
            best = net;
            stop.best_epoch = static_cast<std::size_t>(epoch);
        }
        stop.stop_epoch = static_cast<std::size_t>(epoch);
        if (static_cast<std::size_t>(epoch) - stop.best_epoch >= static_cast<std::size_t>(config.patience)) break;
    }
    return best;
}

}  // namespace

double classifier_loss(const ClassifierModel& model, const std::vector<LabeledSample>& samples, std::uint64_t seed) {
    if (samples.empty()) throw Error(Errc::invalid_argument, "classifier_loss: no samples");
    return mean_classifier_loss(model.net, classifier_examples(samples, model.labels, seed));
}

ClassifierTraining train_classifier(const std::vector<LabeledSample>& train, const std::vector<LabeledSample>& validation,
                                    const TrainConfig& config, ModelMetadata meta) {
    validate(config);
    auto labels = config.labels.empty() ? dataset_labels(train) : config.labels;
    for (const auto& l : dataset_labels(train))
        if (std::find(labels.begin(), labels.end(), l) == labels.end())
            throw Error(Errc::invalid_argument, "training label '" + l + "' is not in the configured label set");
    if (labels.size() < 2) throw Error(Errc::invalid_argument, "classifier training needs at least two classes");
    const auto train_ex = classifier_examples(train, labels, config.seed ^ 0x7472616eULL);
    const auto val_ex = validation.empty() ? train_ex : classifier_examples(validation, labels, config.seed ^ 0x76616cULL);

    ClassifierTraining out;
    auto initial = init_classifier(labels, config.seed);
    auto net = run_sgd(
        std::move(initial.net), train_ex, config,
        [](const Tensor& logits, const Example& ex, Tensor& grad) { return cross_entropy(logits, ex.target, &grad); },
        [&](const Network& n) { return mean_classifier_loss(n, val_ex); }, out.curve, out.stop);
    out.model = ClassifierModel(std::move(net), std::move(labels), std::move(meta));
    return out;
}

ClassifierTraining train_classifier(const std::vector<LabeledSample>& dataset, const TrainConfig& config,
                                    ModelMetadata meta) {
    validate(config);
    const auto split = split_dataset(dataset, config.split, config.seed);
    return train_classifier(split.train, split.validation, config, std::move(meta));
}

Tensor detector_targets(const std::optional<BBox>& box, int image_height, int image_width) {
    Tensor t({1, static_cast<std::size_t>(kObjectnessSize), static_cast<std::size_t>(kObjectnessSize)});
    if (!box) return t;
    for (int cy = 0; cy < kObjectnessSize; ++cy) {
        const double y = (cy * kObjectnessStride + kObjectnessStride / 2.0) * image_height / kDetectorInput;
        for (int cx = 0; cx < kObjectnessSize; ++cx) {
            const double x = (cx * kObjectnessStride + kObjectnessStride / 2.0) * image_width / kDetectorInput;
            if (box->contains(x, y)) t.at(0, static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)) = 1.0;
        }
    }
    return t;
}

double detector_loss(const DetectorModel& model, const std::vector<LabeledSample>& samples) {
    if (samples.empty()) throw Error(Errc::invalid_argument, "detector_loss: no samples");
    return mean_detector_loss(model.net, detector_examples(samples));
}

DetectorTraining train_detector(const std::vector<LabeledSample>& train, const std::vector<LabeledSample>& validation,
                                const TrainConfig& config, ModelMetadata meta) {
    validate(config);
    const auto train_ex = detector_examples(train);
    const auto val_ex = validation.empty() ? train_ex : detector_examples(validation);

    DetectorTraining out;
    auto net = run_sgd(
        init_network(detector_architecture(), config.seed), train_ex, config,
        [](const Tensor& logits, const DetExample& ex, Tensor& grad) { return bce_with_logits(logits, ex.target, &grad); },
        [&](const Network& n) { return mean_detector_loss(n, val_ex); }, out.curve, out.stop);
    out.model = DetectorModel(std::move(net), std::move(meta));
    return out;
}

DetectorTraining train_detector(const std::vector<LabeledSample>& dataset, const TrainConfig& config,
                                ModelMetadata meta) {
    validate(config);
    const auto split = split_dataset(dataset, config.split, config.seed);
    return train_detector(split.train, split.validation, config, std::move(meta));
}

}  // namespace ensel
