#include "ensel/model_io.hpp"

#include "ensel/error.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ensel {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'N', 'S', 'L'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double get_f64(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{p[i]} << (8 * i);
    return std::bit_cast<double>(bits);
}

json tensor_order(const Network& net) {
    json order = json::array();
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        const auto& p = net.params()[i];
        if (p.weights.empty()) continue;
        order.push_back({{"name", "layer" + std::to_string(i) + ".weights"}, {"shape", p.weights.shape()}});
        order.push_back({{"name", "layer" + std::to_string(i) + ".bias"}, {"shape", p.bias.shape()}});
    }
    return order;
}

ArchitectureSpec architecture_for(const std::string& name, std::size_t class_count) {
    if (name == kDetectorArchitecture) return detector_architecture();
    if (name == kClassifierArchitecture) return classifier_architecture(class_count);
    throw Error(Errc::metadata, "unknown architecture '" + name + "'");
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) noexcept {
    return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> serialize_model(const ModelFile& model) {
    const auto& arch = model.net.architecture();
    json meta = {
        {"architecture", arch.name},
        {"role", to_string(model.role)},
        {"input", {arch.input[1], arch.input[2], arch.input[0]}},
        {"class_labels", model.labels},
        {"class_count", model.labels.size()},
        {"tensor_order", tensor_order(model.net)},
        {"id", model.meta.id},
        {"training_phase", model.meta.training_phase},
        {"created_at", model.meta.created_at},
        {"version", model.meta.version},
    };
    const std::string text = meta.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, kModelFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    const auto weights_at = out.size();
    for (const auto& p : model.net.params()) {
        for (double v : p.weights.data()) put_f64(out, v);
        for (double v : p.bias.data()) put_f64(out, v);
    }
    const auto crc = crc32_of(std::span(out).subspan(weights_at));
    put_u32(out, crc);
    return out;
}

ModelFile parse_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw Error(Errc::truncated, "model file truncated in magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(Errc::bad_magic, "not a model file (bad magic)");
    if (bytes.size() < 12) throw Error(Errc::truncated, "model file truncated in header");
    const auto version = get_u32(bytes.data() + 4);
    if (version != kModelFormatVersion)
        throw Error(Errc::bad_version, "unsupported model file version " + std::to_string(version));
    const auto meta_len = get_u32(bytes.data() + 8);
    if (bytes.size() - 12 < meta_len) throw Error(Errc::truncated, "model file truncated in metadata");

    json meta;
    try {
        meta = json::parse(bytes.begin() + 12, bytes.begin() + 12 + meta_len);
    } catch (const json::exception& e) {
        throw Error(Errc::metadata, std::string("model metadata is not valid JSON: ") + e.what());
    }

    ModelFile model;
    Network shaped;
    try {
        model.role = parse_role(meta.at("role").get<std::string>());
        model.labels = meta.value("class_labels", std::vector<std::string>{});
        model.meta.id = meta.value("id", "");
        model.meta.training_phase = meta.value("training_phase", "");
        model.meta.created_at = meta.value("created_at", "");
        model.meta.version = meta.value("version", "");
        const auto arch = architecture_for(meta.at("architecture").get<std::string>(), model.labels.size());
        if ((model.role == ModelRole::detector) != (arch.name == kDetectorArchitecture))
            throw Error(Errc::role_mismatch, "model role does not match its architecture");
        shaped = Network(arch);

        std::vector<Shape> declared;
        for (const auto& t : meta.at("tensor_order")) declared.push_back(t.at("shape").get<Shape>());
        if (declared != shaped.parameter_shapes())
            throw Error(Errc::shape_mismatch, "declared tensor shapes do not match architecture " + arch.name);
    } catch (const json::exception& e) {
        throw Error(Errc::metadata, std::string("model metadata is incomplete: ") + e.what());
    }

    const std::size_t weights_at = 12 + meta_len;
    const std::size_t weight_bytes = shaped.parameter_count() * 8;
    if (bytes.size() - weights_at < weight_bytes + 4) throw Error(Errc::truncated, "model file truncated in weights");
    if (bytes.size() - weights_at > weight_bytes + 4) throw Error(Errc::metadata, "unexpected trailing bytes");
    const auto crc = crc32_of(bytes.subspan(weights_at, weight_bytes));
    if (crc != get_u32(bytes.data() + weights_at + weight_bytes))
        throw Error(Errc::checksum, "model weight checksum mismatch");

    const std::uint8_t* p = bytes.data() + weights_at;
    for (auto& lp : shaped.params()) {
        for (auto& v : lp.weights.data()) v = get_f64(p), p += 8;
        for (auto& v : lp.bias.data()) v = get_f64(p), p += 8;
    }
    model.net = std::move(shaped);
    return model;
}

ModelFile to_model_file(const ClassifierModel& model) {
    return {ModelRole::classifier, model.meta, model.labels, model.net};
}

ModelFile to_model_file(const DetectorModel& model) { return {ModelRole::detector, model.meta, {}, model.net}; }

namespace {

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write model file " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io, "short write to " + path);
}

}  // namespace

void save_model(const ClassifierModel& model, const std::string& path) {
    write_bytes(path, serialize_model(to_model_file(model)));
}

void save_model(const DetectorModel& model, const std::string& path) {
    write_bytes(path, serialize_model(to_model_file(model)));
}

ModelFile load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::missing_file, "cannot open model file " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_model(bytes);
}

ClassifierModel load_classifier(const std::string& path) {
    auto file = load_model(path);
    if (file.role != ModelRole::classifier) throw Error(Errc::role_mismatch, path + " is not a classifier model");
    return ClassifierModel(std::move(file.net), std::move(file.labels), std::move(file.meta));
}

DetectorModel load_detector(const std::string& path) {
    auto file = load_model(path);
    if (file.role != ModelRole::detector) throw Error(Errc::role_mismatch, path + " is not a detector model");
    return DetectorModel(std::move(file.net), std::move(file.meta));
}

}  // namespace ensel
