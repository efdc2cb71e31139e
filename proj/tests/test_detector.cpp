#include "doctest_torch.hpp"

#include <random>

#include "comics/dataset.hpp"
#include "comics/detector.hpp"
#include "comics/geometry.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace comics;

namespace {

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.fea.enabled = true;
    return cfg;
}

int64_t ceil_by_loop(int64_t n, int64_t stride) {
    int64_t k = 0;
    while (k * stride < n) ++k;
    return k;
}

}  // namespace

TEST_SUITE("detector_core") {

TEST_CASE("pyramid shapes follow ceil(H/2^i)") {
    torch::manual_seed(0);
    Detector model(small_config());
    model->eval();
    torch::NoGradGuard ng;
    for (auto [h, w] : {std::pair{256, 256}, std::pair{256, 257}, std::pair{64, 100}, std::pair{97, 131}}) {
        const auto p = model->extract_pyramid(torch::rand({1, 3, h, w}));
        CHECK(p.levels.size() == 5);
        for (int level = 3; level <= 7; ++level) {
            CHECK(p.at(level).size(2) == ceil_by_loop(h, int64_t(1) << level));
            CHECK(p.at(level).size(3) == ceil_by_loop(w, int64_t(1) << level));
            CHECK(p.at(level).size(1) == p.channels());
        }
    }
    const auto p = model->extract_pyramid(torch::rand({1, 3, 256, 256}));
    CHECK(p.at(3).size(2) == 32);
    CHECK(p.at(7).size(3) == 2);
    CHECK(model->extract_pyramid(torch::rand({1, 3, 256, 257})).at(7).size(3) == 3);
}

TEST_CASE("inputs below 64 pixels are rejected") {
    Detector model(small_config());
    CHECK_THROWS_AS(model->forward(torch::rand({1, 3, 63, 128})), std::invalid_argument);
    CHECK_THROWS_AS(model->forward(torch::rand({1, 3, 128, 40})), std::invalid_argument);
}

TEST_CASE("identical inputs give bitwise-identical pyramids") {
    torch::manual_seed(3);
    Detector model(small_config());
    model->eval();
    torch::NoGradGuard ng;
    const auto x = torch::rand({1, 3, 128, 128});
    const auto a = model->extract_pyramid(x.clone());
    const auto b = model->extract_pyramid(x.clone());
    for (int level = 3; level <= 7; ++level) CHECK(testing::bitwise_equal(a.at(level), b.at(level)));
}

TEST_CASE("FeaturePyramid::check flags violations") {
    FeaturePyramid p;
    p.image_height = p.image_width = 64;
    for (int level = 3; level <= 7; ++level) {
        const int64_t s = ceil_by_loop(64, int64_t(1) << level);
        p.levels[level] = torch::zeros({1, 8, s, s});
    }
    CHECK_NOTHROW(p.check());
    p.levels[5] = torch::zeros({1, 8, 3, 2});
    CHECK_THROWS_AS(p.check(), std::logic_error);
    p.levels[5] = torch::zeros({1, 4, 2, 2});
    CHECK_THROWS_AS(p.check(), std::logic_error);
    p.levels.erase(5);
    CHECK_THROWS_AS(p.check(), std::logic_error);
}

TEST_CASE("iou examples") {
    CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == doctest::Approx(1.0));
    CHECK(iou({0, 0, 10, 10}, {20, 20, 30, 30}) == 0.0);
    CHECK(iou({0, 0, 10, 10}, {5, 5, 15, 15}) == doctest::Approx(25.0 / 175.0).epsilon(1e-12));
    CHECK(iou({0, 0, 0, 10}, {0, 0, 0, 10}) == 0.0);
}

TEST_CASE("iou is symmetric, bounded and equals the raster count") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> c(0, 64);
    for (int t = 0; t < 300; ++t) {
        int a[4], b[4];
        for (int* v : {a, b}) {
            int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
            if (x1 > x2) std::swap(x1, x2);
            if (y1 > y2) std::swap(y1, y2);
            v[0] = x1, v[1] = y1, v[2] = x2, v[3] = y2;
        }
        const Box ba{double(a[0]), double(a[1]), double(a[2]), double(a[3])};
        const Box bb{double(b[0]), double(b[1]), double(b[2]), double(b[3])};
        const double v = iou(ba, bb);
        CHECK(v == iou(bb, ba));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::abs(v - oracle::raster_iou(a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3])) < 1e-9);
    }
}

TEST_CASE("zeroed objectness head gives 0.5 everywhere; boxes are clipped") {
    torch::manual_seed(1);
    Detector model(small_config());
    model->eval();
    {
        torch::NoGradGuard ng;
        model->head->ctr->weight.zero_();
        model->head->ctr->bias.zero_();
    }
    torch::NoGradGuard ng;
    const auto out = model->forward(torch::zeros({1, 3, 128, 160}));
    for (const auto& [level, h] : out.heads)
        CHECK(torch::sigmoid(h.ctr).eq(0.5).all().item<bool>());
    auto props = model->generate_proposals(out.encoder, out.heads, ProposalMode::Training);
    REQUIRE(!props[0].empty());
    for (const auto& p : props[0]) {
        CHECK(p.objectness == 0.5);
        CHECK(p.box.x1 >= 0);
        CHECK(p.box.y1 >= 0);
        CHECK(p.box.x2 <= 160);
        CHECK(p.box.y2 <= 128);
    }
}

TEST_CASE("proposal count of a fixed-seed toy image matches the frozen reference") {
    ToyGenConfig g;
    g.seed = 7;
    const auto ds = generate_toy_dataset(g, 1);
    torch::manual_seed(0);
    Detector model(small_config());
    model->eval();
    torch::NoGradGuard ng;
    const auto out = model->forward(ds.images[0].image().unsqueeze(0));
    const auto props = model->generate_proposals(out.encoder, out.heads, ProposalMode::Inference);
    // recorded once from this configuration and frozen
    CHECK(props[0].size() == 284);
}

TEST_CASE("mask prediction shapes and zero-weight behaviour") {
    torch::manual_seed(2);
    TrainConfig cfg = small_config();
    Detector model(cfg);
    model->eval();
    torch::NoGradGuard ng;
    const auto out = model->forward(torch::rand({1, 3, 128, 128}));
    const auto none = model->predict_masks(out.mask_features, {}, 128, 128);
    CHECK(none.masks.empty());
    CHECK(none.logits.size(0) == 0);

    for (auto& p : model->mask_predictor->parameters()) p.zero_();
    std::vector<Proposal> props(3);
    props[0].box = {10, 10, 60, 70};
    props[1].box = {0, 0, 128, 128};
    props[2].box = {100, 20, 127, 40};
    const auto pred = model->predict_masks(out.mask_features, props, 128, 128);
    REQUIRE(pred.masks.size() == 3);
    for (const auto& m : pred.masks) {
        CHECK(m.feature_map.sizes() == torch::IntArrayRef({cfg.model.mask_channels, 28, 28}));
        CHECK(m.mask_prob().eq(0.5).all().item<bool>());
    }
}

TEST_CASE("degenerate proposal boxes are skipped by the mask predictor") {
    Detector model(small_config());
    model->eval();
    torch::NoGradGuard ng;
    const auto out = model->forward(torch::rand({1, 3, 64, 64}));
    std::vector<Proposal> props(2);
    props[0].box = {200, 200, 220, 220};
    props[1].box = {5, 5, 30, 30};
    const auto pred = model->predict_masks(out.mask_features, props, 64, 64);
    CHECK(pred.skipped == std::vector<size_t>{0});
    REQUIRE(pred.masks.size() == 1);
    CHECK(pred.masks[0].proposal_id == 1);
}

TEST_CASE("ground-truth proposals sit at the centre cell on every level") {
    Detector model(small_config());
    model->eval();
    torch::NoGradGuard ng;
    const auto out = model->forward(torch::rand({1, 3, 128, 128}));
    const Annotations faces = {testing::rect_face(128, 128, 20, 30, 60, 90)};
    const auto props = ground_truth_proposals(out.encoder, out.heads, 0, faces);
    REQUIRE(props.size() == 5);
    for (const auto& p : props) {
        CHECK(p.injected);
        CHECK(p.box == faces[0].box);
        CHECK(p.row == 60 >> p.level);
        CHECK(p.col == 40 >> p.level);
        CHECK(p.feature.size(0) == 32);
    }
}

TEST_CASE("paste_mask places a full-probability map on the roi") {
    const auto m = paste_mask(torch::ones({28, 28}), {10, 20, 30, 40}, 64, 64);
    CHECK(m.area() == 400);
    CHECK((m.bbox().value() == Box{10, 20, 30, 40}));
}

TEST_CASE("roi mask targets reproduce an axis-aligned mask") {
    const auto mask = testing::rect_mask(64, 64, 16, 16, 48, 48);
    const auto t = roi_mask_targets({&mask}, {Box{16, 16, 48, 48}}, 28);
    CHECK(t.sum().item<double>() == 28 * 28);
    const auto t2 = roi_mask_targets({&mask}, {Box{0, 0, 64, 64}}, 32);
    CHECK(t2.sum().item<double>() == 16 * 16);
}

TEST_CASE("dense targets: positives lie inside their face and near its centre") {
    Detector model(small_config());
    torch::NoGradGuard ng;
    const auto pyr = model->extract_pyramid(torch::rand({1, 3, 128, 128}));
    const Annotations faces = {testing::rect_face(128, 128, 10, 10, 50, 50),
                               testing::rect_face(128, 128, 70, 60, 120, 120, FaceLabel::Fake)};
    const auto t = build_dense_targets(pyr, {faces}, 1.5);
    CHECK(t.num_faces == 2);
    int positives = 0;
    for (const auto& [level, lt] : t.levels) {
        const double s = double(int64_t(1) << level);
        const auto lab = lt.labels[0];
        for (int64_t y = 0; y < lab.size(0); ++y)
            for (int64_t x = 0; x < lab.size(1); ++x) {
                const int64_t l = lab[y][x].item<int64_t>();
                if (l < 0) continue;
                ++positives;
                const auto& f = faces[size_t(lt.gt_index[0][y][x].item<int64_t>())];
                CHECK(l == class_index(f.label));
                const double cx = (x + 0.5) * s, cy = (y + 0.5) * s;
                CHECK(cx > f.box.x1);
                CHECK(cx < f.box.x2);
                CHECK(std::abs(cx - f.box.cx()) <= 1.5 * s);
                CHECK(std::abs(cy - f.box.cy()) <= 1.5 * s);
                const auto ltrb = lt.ltrb[0][y][x];
                CHECK(ltrb[0].item<double>() == doctest::Approx(cx - f.box.x1));
                CHECK(ltrb[3].item<double>() == doctest::Approx(f.box.y2 - cy));
            }
    }
    CHECK(positives > 0);
}

TEST_CASE("detection loss requires ground truth") {
    Detector model(small_config());
    const auto out = model->forward(torch::rand({1, 3, 64, 64}));
    const auto t = build_dense_targets(out.encoder.pyramid, {Annotations{}}, 1.5);
    CHECK_THROWS_AS(detection_loss(out.heads, t, nullptr), std::invalid_argument);
}

TEST_CASE("detection loss vanishes for saturated perfect predictions") {
    Detector model(small_config());
    torch::NoGradGuard ng;
    const auto pyr = model->extract_pyramid(torch::rand({1, 3, 128, 128}));
    const Annotations faces = {testing::rect_face(128, 128, 10, 10, 50, 50),
                               testing::rect_face(128, 128, 64, 60, 124, 124, FaceLabel::Fake)};
    const auto t = build_dense_targets(pyr, {faces}, 1.5);
    HeadOutputs heads;
    for (const auto& [level, lt] : t.levels) {
        const double s = double(int64_t(1) << level);
        const auto lab = lt.labels;  // [1,h,w]
        auto cls = torch::full({1, 2, lab.size(1), lab.size(2)}, -30.0);
        for (int c = 0; c < 2; ++c) cls.select(1, c).masked_fill_(lab.eq(c), 30.0);
        auto box = torch::log(lt.ltrb.clamp_min(1e-3) / s).permute({0, 3, 1, 2}).contiguous();
        const auto c = lt.centerness.clamp(1e-6, 1 - 1e-6);
        auto ctr = torch::log(c / (1 - c)).unsqueeze(1);
        heads[level] = LevelHead{cls, box, ctr};
    }
    const auto targets = torch::ones({2, 28, 28});
    auto logits = torch::full({2, 28, 28}, 30.0);
    const MaskLossInput mi{logits, targets};
    const auto loss = detection_loss(heads, t, &mi);
    CHECK(loss.total.item<double>() < 1e-3);
}

TEST_CASE("detection loss is finite on random init for 100 toy images") {
    ToyGenConfig g;
    g.seed = 21;
    const auto ds = generate_toy_dataset(g, 100);
    torch::manual_seed(0);
    TrainConfig cfg = small_config();
    Detector model(cfg);
    torch::NoGradGuard ng;
    for (size_t start = 0; start < 100; start += 10) {
        std::vector<size_t> idx;
        std::vector<Annotations> faces;
        for (size_t i = start; i < start + 10; ++i) {
            idx.push_back(i);
            faces.push_back(ds.images[i].faces);
        }
        const auto out = model->forward(batch_images(ds, idx));
        const auto t = build_dense_targets(out.encoder.pyramid, faces, 1.5);
        const auto loss = detection_loss(out.heads, t, nullptr);
        CHECK(std::isfinite(loss.total.item<double>()));
    }
}

TEST_CASE("detection loss gradient matches central finite differences in float64") {
    torch::manual_seed(5);
    TrainConfig cfg = small_config();
    Detector model(cfg);
    model->to(torch::kFloat64);
    model->eval();  // batch statistics frozen so the loss is a fixed function of the weights
    ToyGenConfig g;
    g.image_size = 96;
    g.face_size_min = 20;
    g.face_size_max = 50;
    g.seed = 4;
    const auto ds = generate_toy_dataset(g, 2);
    const auto x = batch_images(ds, {0, 1}).to(torch::kFloat64);
    std::vector<Annotations> faces = {ds.images[0].faces, ds.images[1].faces};

    std::vector<Proposal> rois;
    std::vector<const Mask*> masks;
    for (int n = 0; n < 2; ++n)
        for (const auto& f : faces[size_t(n)]) {
            Proposal p;
            p.image = n;
            p.box = f.box;
            rois.push_back(p);
            masks.push_back(&f.mask);
        }
    auto loss_fn = [&]() {
        const auto out = model->forward(x);
        const auto t = build_dense_targets(out.encoder.pyramid, faces, 1.5);
        const auto mp = model->predict_masks(out.mask_features, rois, 96, 96);
        std::vector<Box> r;
        for (const auto& m : mp.masks) r.push_back(m.roi);
        const MaskLossInput mi{mp.logits, roi_mask_targets(masks, r, cfg.model.mask_size)};
        return detection_loss(out.heads, t, &mi).total;
    };
    model->zero_grad();
    loss_fn().backward();

    auto params = model->named_parameters();
    std::mt19937 rng(9);
    int checked = 0;
    for (int attempt = 0; attempt < 400 && checked < 10; ++attempt) {
        auto& item = params[std::uniform_int_distribution<size_t>(0, params.size() - 1)(rng)];
        auto p = item.value();
        if (!p.grad().defined()) continue;
        const int64_t k = std::uniform_int_distribution<int64_t>(0, p.numel() - 1)(rng);
        const double g_an = p.grad().view(-1)[k].item<double>();
        if (std::abs(g_an) < 1e-6) continue;
        const double h = 1e-6;
        double plus, minus;
        {
            torch::NoGradGuard ng;
            auto flat = p.view(-1);
            const double orig = flat[k].item<double>();
            flat[k] = orig + h;
            plus = loss_fn().item<double>();
            flat[k] = orig - h;
            minus = loss_fn().item<double>();
            flat[k] = orig;
        }
        const double g_fd = (plus - minus) / (2 * h);
        INFO(item.key(), "[", k, "] analytic ", g_an, " fd ", g_fd);
        CHECK(std::abs(g_fd - g_an) / std::max(std::abs(g_an), std::abs(g_fd)) < 1e-4);
        ++checked;
    }
    CHECK(checked == 10);
}

TEST_CASE("nms keeps the higher score and drops overlaps") {
    const std::vector<Box> boxes = {{0, 0, 10, 10}, {1, 1, 11, 11}, {50, 50, 60, 60}, {0, 0, 10, 10}};
    const std::vector<double> scores = {0.9, 0.95, 0.5, 0.95};
    CHECK((nms(boxes, scores, 0.5) == std::vector<size_t>{1, 2}));
}

TEST_CASE("detect returns clipped, scored instances with full-size masks") {
    torch::manual_seed(0);
    Detector model(small_config());
    torch::NoGradGuard ng;
    const auto preds = model->detect(torch::rand({2, 3, 96, 128}));
    REQUIRE(preds.size() == 2);
    for (const auto& img : preds) {
        CHECK(img.size() <= 50);
        for (size_t i = 0; i < img.size(); ++i) {
            CHECK(img[i].mask.height == 96);
            CHECK(img[i].mask.width == 128);
            CHECK(img[i].score >= 0.05);
            if (i > 0) CHECK(img[i - 1].score >= img[i].score);
        }
    }
}

}  // TEST_SUITE
