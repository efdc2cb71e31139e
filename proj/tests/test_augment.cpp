#include "doctest_torch.hpp"

#include <cmath>

#include "comics/augment.hpp"
#include "comics/geometry.hpp"
#include "helpers.hpp"

using namespace comics;

namespace {

torch::Tensor gradient_image(int h, int w) {
    auto ys = torch::linspace(0, 1, h).view({1, h, 1}).expand({3, h, w});
    auto xs = torch::linspace(0, 1, w).view({1, 1, w}).expand({3, h, w});
    return (0.5 * ys + 0.3 * xs + torch::tensor({0.0, 0.1, 0.2}).view({3, 1, 1})).clamp(0, 1).contiguous();
}

double high_band_energy(const torch::Tensor& img) {
    const auto x = img - img.mean();
    const auto spec = torch::fft::fft2(x).abs().pow(2);
    const int64_t h = img.size(0), w = img.size(1);
    auto fy = torch::fft::fftfreq(h).abs().view({h, 1}).expand({h, w});
    auto fx = torch::fft::fftfreq(w).abs().view({1, w}).expand({h, w});
    const auto band = torch::maximum(fy, fx) > 0.125;
    return spec.masked_select(band).sum().item<double>();
}

}  // namespace

TEST_SUITE("dual_view_augment") {

TEST_CASE("seed derivation is stable and stream-separated") {
    CHECK(derive_seed(1, 2, 3, 4) == derive_seed(1, 2, 3, 4));
    CHECK(derive_seed(1, 2, 3, 4) != derive_seed(1, 2, 3, 5));
    CHECK(derive_seed(1, 2, 0, 0) != derive_seed(1, 0, 2, 0));
}

TEST_CASE("identity transform leaves annotations unchanged") {
    const auto img = gradient_image(64, 80);
    const Annotations faces = {testing::rect_face(64, 80, 5, 6, 30, 40, FaceLabel::Fake)};
    const auto v = apply_query_transform(img, faces, QueryTransform{});
    REQUIRE(v.faces.size() == 1);
    CHECK(v.faces[0].box == faces[0].box);
    CHECK(v.faces[0].mask == faces[0].mask);
    CHECK(v.faces[0].label == FaceLabel::Fake);
    CHECK(v.faces[0].source_index == 0);
    CHECK((v.image - img).abs().max().item<double>() < 1e-6);
}

TEST_CASE("horizontal flip maps x to W - x") {
    const Annotations faces = {testing::rect_face(10, 100, 10, 0, 30, 10)};
    QueryTransform t;
    t.flip = true;
    const auto v = apply_query_transform(gradient_image(10, 100), faces, t);
    REQUIRE(v.faces.size() == 1);
    CHECK((v.faces[0].box == Box{70, 0, 90, 10}));
    CHECK(v.faces[0].mask == testing::rect_mask(10, 100, 70, 0, 90, 10));
    const auto m = query_affine(t, 10, 100);
    CHECK(m[0] == -1.0);
    CHECK(m[2] == 100.0);
}

TEST_CASE("query view is deterministic and keeps faces traceable") {
    AugmentConfig cfg;
    const auto img = gradient_image(96, 96);
    const Annotations faces = {testing::rect_face(96, 96, 10, 10, 40, 40), testing::rect_face(96, 96, 50, 50, 90, 85)};
    for (uint64_t s = 0; s < 20; ++s) {
        Rng a(s), b(s);
        const auto va = make_query_view(img, faces, cfg, a);
        const auto vb = make_query_view(img, faces, cfg, b);
        CHECK(torch::equal(va.image, vb.image));
        REQUIRE(va.faces.size() == vb.faces.size());
        CHECK(std::abs(va.transform.angle_degrees) <= 15.0);
        if (va.transform.crop.valid()) CHECK(va.transform.crop.area() >= 0.8 * 96 * 96 - 1e-6);
        CHECK(va.faces.size() + size_t(va.dropped_faces) == faces.size());
        for (size_t i = 0; i < va.faces.size(); ++i) {
            CHECK(va.faces[i].box == vb.faces[i].box);
            CHECK(va.faces[i].mask == vb.faces[i].mask);
            CHECK(va.faces[i].source_index >= 0);
            CHECK(va.faces[i].box == va.faces[i].mask.bbox().value());
        }
    }
}

TEST_CASE("transformed masks agree with transformed polygons up to one boundary pixel") {
    const int h = 96, w = 112;
    const std::vector<double> poly = {20, 15, 70, 20, 60, 70, 25, 60};
    const auto mask = rasterize_polygons({poly}, h, w);
    FaceAnnotation f;
    f.mask = mask;
    f.box = *mask.bbox();
    for (uint64_t s = 0; s < 10; ++s) {
        Rng rng(100 + s);
        AugmentConfig cfg;
        const auto v = make_query_view(gradient_image(h, w), {f}, cfg, rng);
        if (v.faces.empty()) continue;
        const auto m = query_affine(v.transform, h, w);
        std::vector<double> moved;
        for (size_t i = 0; i < poly.size(); i += 2) {
            moved.push_back(m[0] * poly[i] + m[1] * poly[i + 1] + m[2]);
            moved.push_back(m[3] * poly[i] + m[4] * poly[i + 1] + m[5]);
        }
        const auto expect = rasterize_polygons({moved}, h, w);
        const auto& got = v.faces[0].mask;
        int bad = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (got.at(y, x) == expect.at(y, x)) continue;
                bool boundary = false;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
                        boundary = boundary || expect.at(yy, xx) != expect.at(y, x);
                    }
                bad += !boundary;
            }
        CHECK(bad == 0);
    }
}

TEST_CASE("key view with every op disabled returns the input") {
    AugmentConfig cfg;
    cfg.op_probability = 0.0;
    const auto img = gradient_image(64, 64);
    Rng rng(1);
    const auto k = make_key_view(img, cfg, rng);
    CHECK(torch::equal(k.image, img));
    CHECK(k.log.empty());
}

TEST_CASE("neutral factors are identities") {
    const auto img = gradient_image(32, 48);
    CHECK((adjust_brightness(img, 1.0) - img).abs().max().item<double>() < 1e-6);
    CHECK((adjust_contrast(img, 1.0) - img).abs().max().item<double>() < 1e-6);
    CHECK((adjust_saturation(img, 1.0) - img).abs().max().item<double>() < 1e-6);
    CHECK((adjust_sharpness(img, 1.0) - img).abs().max().item<double>() < 1e-6);
    const auto g = to_grayscale(img);
    CHECK(torch::equal(g[0], g[1]));
    CHECK(torch::equal(g[1], g[2]));
}

TEST_CASE("key view is deterministic and replayable from its log without noise ops") {
    AugmentConfig cfg;
    cfg.gaussian_noise = cfg.salt_pepper = false;
    const auto img = gradient_image(64, 64);
    for (uint64_t s = 0; s < 10; ++s) {
        Rng a(s), b(s);
        const auto ka = make_key_view(img, cfg, a);
        const auto kb = make_key_view(img, cfg, b);
        CHECK(torch::equal(ka.image, kb.image));
        CHECK(ka.log == kb.log);
        auto x = img;
        for (const auto& op : ka.log) {
            const auto name = op.at("op").get<std::string>();
            if (name == "color_jitter")
                x = adjust_sharpness(adjust_saturation(adjust_contrast(adjust_brightness(x, op["brightness"]), op["contrast"]),
                                                       op["saturation"]),
                                     op["sharpness"]);
            else if (name == "grayscale")
                x = to_grayscale(x);
            else if (name == "random_block")
                x = block_chunks(x, cfg.block_grid, op["chunks"].get<std::vector<int>>());
            else if (name == "interpolate")
                x = downscale_upscale(x, op["factor"]);
        }
        CHECK(torch::equal(x, ka.image));
    }
}

TEST_CASE("downscale then upscale removes high-frequency energy") {
    torch::manual_seed(0);
    const auto noise = torch::rand({3, 256, 256});
    const auto out = downscale_upscale(noise, 0.25);
    CHECK(out.sizes() == torch::IntArrayRef({3, 256, 256}));
    const double before = high_band_energy(noise[0]), after = high_band_energy(out[0]);
    CHECK(after < 0.5 * before);
}

TEST_CASE("block chunks zero exactly the chunk area") {
    const auto img = torch::full({3, 100, 100}, 0.5);
    const auto out = block_chunks(img, 10, {0, 11, 55, 99});
    CHECK((out[0] == 0).sum().item<int64_t>() == 400);
    AugmentConfig cfg;
    for (uint64_t s = 0; s < 200; ++s) {
        Rng rng(s);
        std::vector<int> chunks;
        const auto o = random_block(img, cfg, rng, &chunks);
        CHECK(chunks.size() >= 2);
        CHECK(chunks.size() <= 6);
        auto keep = torch::ones({100, 100}, torch::kBool);
        for (int c : chunks)
            keep.index_put_({torch::indexing::Slice((c / 10) * 10, (c / 10) * 10 + 10),
                             torch::indexing::Slice((c % 10) * 10, (c % 10) * 10 + 10)},
                            false);
        CHECK(torch::equal(o.masked_select(keep.expand({3, 100, 100})), img.masked_select(keep.expand({3, 100, 100}))));
    }
}

TEST_CASE("gaussian noise variance and salt-and-pepper fraction") {
    Rng rng(3);
    const auto img = torch::full({1, 1000, 1000}, 0.5);
    const auto n = gaussian_noise(img, 0.01, rng, false);
    const double var = (n - img).var().item<double>();
    CHECK(var >= 0.008);
    CHECK(var <= 0.012);
    Rng r2(4);
    const auto sp = salt_pepper(torch::full({3, 1000, 1000}, 0.5), 0.1, r2);
    const double changed = (sp[0] != 0.5).to(torch::kFloat64).mean().item<double>();
    CHECK(changed >= 0.08);
    CHECK(changed <= 0.12);
    Rng a(9), b(9);
    CHECK(torch::equal(salt_pepper(img.expand({3, 1000, 1000}).contiguous(), 0.05, a),
                       salt_pepper(img.expand({3, 1000, 1000}).contiguous(), 0.05, b)));
    Rng c(1);
    CHECK_THROWS_AS(add_noise(img, "speckle", AugmentConfig{}, c), std::invalid_argument);
}

}  // TEST_SUITE
