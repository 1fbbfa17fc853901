#include "ensel/explain.hpp"

#include "test_util.hpp"
#include "toy_models.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace ensel;
using testutil::error_code;
using testutil::random_image;

namespace {

ImageU8 lesion_64() { return toy::red_squares(64, 64, {BBox{20, 12, 44, 36}}); }

std::size_t best_class(const ClassifierModel& m, const ImageU8& img) { return classify(m, img).argmax(); }

// Compares `image` against tests/golden/<name>; ENSEL_UPDATE_GOLDEN=1
// rewrites the file instead.
void check_golden(const std::string& name, const ImageU8& image) {
    const auto path = std::filesystem::path(ENSEL_GOLDEN_DIR) / name;
    const auto bytes = encode(image, ImageFormat::ppm);
    if (const char* update = std::getenv("ENSEL_UPDATE_GOLDEN"); update && std::string(update) == "1") {
        std::filesystem::create_directories(path.parent_path());
        std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                     static_cast<std::streamsize>(bytes.size()));
        MESSAGE("golden written: " << path.string());
        return;
    }
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing golden " << path.string());
    const std::vector<std::uint8_t> golden{std::istreambuf_iterator<char>(in), {}};
    CHECK_MESSAGE(golden == bytes, "golden mismatch: " << name);
}

}  // namespace

TEST_CASE("zero gradient gives an all-zero heatmap") {
    auto m = toy::biased_classifier(toy::labels(), 3, 1, 2.0);
    m.net.params().back().weights.fill(0.0);
    const auto cam = grad_cam(m, lesion_64(), "healthy");
    REQUIRE(cam.heatmap.height == 64);
    for (double v : cam.heatmap.values) CHECK(v == 0.0);
    for (double v : cam.raw.values) CHECK(v == 0.0);
}

TEST_CASE("single-channel toy with unit gradient collapses to ReLU(A)/max") {
    ArchitectureSpec arch;
    arch.name = "toy";
    arch.input = {1, 4, 4};
    arch.layers = {{LayerKind::conv, 1, 1, 0, 1}, {LayerKind::global_avg_pool}, {LayerKind::dense, 2}};
    Network net(arch);
    net.params()[0].weights[0] = 1.0;
    net.params()[2].weights = Tensor({2, 1}, std::vector<double>{16.0, -3.0});
    const Tensor x({1, 4, 4}, std::vector<double>{-1, 2, 0, 4, 1, -5, 3, 0, 0, 0, 8, -2, 1, 1, 1, 1});
    const auto cam = grad_cam_layer(net, x, 0, 0);
    REQUIRE(cam.raw.height == 4);
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(cam.raw.values[i] == std::max(0.0, x[i]));
        CHECK(cam.heatmap.values[i] == doctest::Approx(std::max(0.0, x[i]) / 8.0).epsilon(1e-15));
    }
}

TEST_CASE("channel weights agree with a finite-difference construction") {
    const auto m = toy::biased_classifier(toy::labels(), 17);
    const auto img = lesion_64();
    const std::size_t target = best_class(m, img);
    const auto cam = grad_cam(m, img, target);

    const auto pass = network_forward(m.net, image_to_tensor(img));
    const Tensor& a = pass.cache.activations[kClassifierCamLayer + 1];
    const std::size_t channels = a.dim(0), plane = a.dim(1) * a.dim(2);
    const double eps = 1e-5;
    std::vector<double> alpha(channels);
    for (std::size_t k = 0; k < channels; ++k) {
        Tensor plus = a, minus = a;
        for (std::size_t i = 0; i < plane; ++i) {
            plus[k * plane + i] += eps;
            minus[k * plane + i] -= eps;
        }
        const double fp = forward_from(m.net, plus, kClassifierCamLayer + 1)[target];
        const double fm = forward_from(m.net, minus, kClassifierCamLayer + 1)[target];
        alpha[k] = (fp - fm) / (2 * eps) / static_cast<double>(plane);
    }
    double peak = 0.0;
    for (double v : cam.raw.values) peak = std::max(peak, v);
    REQUIRE(peak > 0.0);
    for (std::size_t i = 0; i < plane; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < channels; ++k) s += alpha[k] * a[k * plane + i];
        const double fd = std::max(0.0, s);
        CHECK(std::abs(fd - cam.raw.values[i]) <= 1e-4 * std::max(peak, 1e-12));
    }
}

TEST_CASE("scaling the target dense row scales raw and leaves the heatmap unchanged") {
    auto m = toy::biased_classifier(toy::labels(), 23);
    const auto img = lesion_64();
    const std::size_t target = best_class(m, img);
    const auto before = grad_cam(m, img, target);
    auto& w = m.net.params().back().weights;
    const std::size_t n = w.dim(1);
    for (std::size_t j = 0; j < n; ++j) w[target * n + j] *= 3.5;
    const auto after = grad_cam(m, img, target);
    for (std::size_t i = 0; i < before.raw.values.size(); ++i)
        CHECK(after.raw.values[i] == doctest::Approx(3.5 * before.raw.values[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < before.heatmap.values.size(); ++i)
        CHECK(std::abs(after.heatmap.values[i] - before.heatmap.values[i]) <= 1e-9);
}

TEST_CASE("grad_cam is deterministic and validates inputs") {
    const auto m = toy::biased_classifier(toy::labels(), 5, 0, 0.0, "M5");
    const auto a = grad_cam(m, lesion_64(), "nevus"), b = grad_cam(m, lesion_64(), "nevus");
    CHECK(a.heatmap == b.heatmap);
    CHECK(a.raw == b.raw);
    CHECK(a.target_label == "nevus");
    CHECK(a.model_id == "M5");
    for (double v : a.heatmap.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(error_code([&] { grad_cam(m, lesion_64(), "eczema"); }) == Errc::invalid_argument);
    CHECK(error_code([&] { grad_cam(m, lesion_64(), 9); }) == Errc::invalid_argument);
    CHECK(error_code([&] { grad_cam(m, random_image(32, 32, 1), "nevus"); }) == Errc::invalid_shape);
}

TEST_CASE("cam_overlay cases") {
    const auto img = lesion_64();
    const auto m = toy::biased_classifier(toy::labels(), 41);
    const auto cam = grad_cam(m, img, best_class(m, img));
    CHECK(cam_overlay(img, cam, 0.0) == img);

    CamResult zero;
    zero.heatmap = Heatmap(64, 64, 0.0);
    const auto blue = cam_overlay(img, zero, 0.4);
    for (int y = 0; y < 64; y += 5)
        for (int x = 0; x < 64; x += 5)
            for (int c = 0; c < 3; ++c)
                CHECK(blue.at(y, x, c) == round_half_up_u8(0.4 * (c == 2 ? 255 : 0) + 0.6 * img.at(y, x, c)));

    const auto big = toy::red_squares(130, 90, {});
    CHECK(cam_overlay(big, cam, 0.5).height == 130);
    CHECK(error_code([&] { cam_overlay(img, cam, -0.1); }) == Errc::invalid_argument);
}

TEST_CASE("segmentation overlay cases") {
    const auto img = random_image(20, 30, 8);
    const Heatmap full(20, 30, 1.0);
    CHECK(segmentation_overlay(img, full, Rgb{1, 2, 3}, 0.0) == img);
    const auto solid = segmentation_overlay(img, full, Rgb{1, 2, 3}, 1.0);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 30; ++x) CHECK(solid.pixel(y, x) == Rgb{1, 2, 3});
}

TEST_CASE("cam_compare runs each member independently") {
    const auto a = toy::biased_classifier(toy::labels(), 61, 0, 0.0, "M2");
    const auto b = toy::biased_classifier(toy::labels(), 62, 0, 0.0, "M8");
    const auto img = lesion_64();
    const ClassifierModel* one[] = {&a};
    CHECK(cam_compare(one, img, "psoriasis").size() == 1);
    const ClassifierModel* both[] = {&a, &b};
    const auto cams = cam_compare(both, img, "psoriasis");
    REQUIRE(cams.size() == 2);
    CHECK(cams[0].heatmap == grad_cam(a, img, "psoriasis").heatmap);
    CHECK(cams[1].heatmap == grad_cam(b, img, "psoriasis").heatmap);
    CHECK(cams[0].model_id == "M2");
    CHECK(cams[1].model_id == "M8");
}

TEST_CASE("explain_overlay paints only inside the region") {
    const auto m = toy::biased_classifier(toy::labels(), 71);
    const auto img = toy::red_squares(90, 120, {BBox{30, 20, 70, 60}});
    const BBox region{25, 15, 75, 65};
    const auto out = explain_overlay(img, m, "nevus", region, 0.5);
    for (int y = 0; y < 90; ++y)
        for (int x = 0; x < 120; ++x)
            if (!region.contains(x, y)) CHECK(out.pixel(y, x) == img.pixel(y, x));
    const auto whole = explain_overlay(img, m, "nevus", std::nullopt, 0.5);
    CHECK(whole == cam_overlay(img, grad_cam(m, resize_bilinear(img, 64, 64), "nevus"), 0.5));
    CHECK(explain_overlay(img, m, "nevus", region, 0.0) == img);
}

TEST_CASE("overlay goldens") {
    const auto img = lesion_64();
    const auto a = toy::biased_classifier(toy::labels(), 61, 0, 0.0, "M2");
    const auto b = toy::biased_classifier(toy::labels(), 62, 0, 0.0, "M8");
    check_golden("cam_overlay_M2.ppm", cam_overlay(img, grad_cam(a, img, best_class(a, img)), 0.5));
    check_golden("cam_overlay_M8.ppm", cam_overlay(img, grad_cam(b, img, best_class(b, img)), 0.5));
    const auto scene = toy::red_squares(96, 96, {BBox{5, 5, 25, 25}, BBox{50, 60, 90, 80}});
    const auto loc = locate_lesions(scene, toy::red_detector());
    check_golden("segmentation_overlay.ppm",
                 segmentation_overlay(scene, lesion_mask(loc.objectness, 0.5, 96, 96), Rgb{0, 255, 0}, 0.4));
}
