#include "comics/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace F = torch::nn::functional;

namespace comics {

namespace {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, bool bias = true) {
    return torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).bias(bias));
}

torch::nn::Sequential down_block(int64_t in, int64_t out) {
    return torch::nn::Sequential(conv(in, out, 3, 2, false), torch::nn::BatchNorm2d(out),
                                 torch::nn::ReLU());
}

torch::nn::Sequential stage(int64_t in, int64_t out) {
    return torch::nn::Sequential(conv(in, out, 3, 2, false), torch::nn::BatchNorm2d(out),
                                 torch::nn::ReLU(), ResidualBlock(out));
}

torch::Tensor upsample_to(const torch::Tensor& x, const torch::Tensor& like) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{like.size(2), like.size(3)})
                                 .mode(torch::kNearest));
}

// Per-level regression size ranges (largest ltrb distance), scaled for small images.
std::pair<double, double> size_range(int level) {
    switch (level) {
        case 3: return {0.0, 24.0};
        case 4: return {24.0, 48.0};
        case 5: return {48.0, 96.0};
        case 6: return {96.0, 192.0};
        default: return {192.0, std::numeric_limits<double>::infinity()};
    }
}

void init_head_conv(torch::nn::Conv2d& c, double bias = 0.0) {
    torch::NoGradGuard g;
    torch::nn::init::normal_(c->weight, 0.0, 0.01);
    torch::nn::init::constant_(c->bias, bias);
}

}  // namespace

void FeaturePyramid::check() const {
    if (levels.size() != static_cast<size_t>(kNumLevels))
        throw std::logic_error("feature pyramid must hold exactly levels 3..7");
    int64_t channels = -1;
    for (int level : kLevels) {
        const auto it = levels.find(level);
        if (it == levels.end()) throw std::logic_error("feature pyramid is missing a level");
        const auto& t = it->second;
        if (t.dim() != 4) throw std::logic_error("pyramid level must be [N,C,h,w]");
        if (t.size(2) != ceil_div(image_height, level_stride(level)) ||
            t.size(3) != ceil_div(image_width, level_stride(level)))
            throw std::logic_error("pyramid level " + std::to_string(level) + " has wrong spatial size");
        if (channels >= 0 && t.size(1) != channels)
            throw std::logic_error("pyramid levels disagree on channel count");
        channels = t.size(1);
    }
}

torch::Tensor as_image_batch(const torch::Tensor& images) {
    auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
    if (x.dim() != 4 || x.size(1) != 3) throw std::invalid_argument("expected images [N,3,H,W] or [3,H,W]");
    if (x.size(2) < 64 || x.size(3) < 64)
        throw std::invalid_argument("image must be at least 64x64, got " + std::to_string(x.size(2)) +
                                    "x" + std::to_string(x.size(3)));
    return x;
}

// ---------------------------------------------------------------------------

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
    conv1 = register_module("conv1", conv(channels, channels, 3, 1, false));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(channels));
    conv2 = register_module("conv2", conv(channels, channels, 3, 1, false));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1(conv1(x)));
    y = bn2(conv2(y));
    return torch::relu(y + x);
}

EncoderImpl::EncoderImpl(const ModelConfig& model, const FeaConfig& fea_cfg) : fea_(fea_cfg) {
    const int64_t c = model.pyramid_channels;
    stem = register_module("stem", down_block(3, 16));
    layer2 = register_module("layer2", stage(16, 24));
    layer3 = register_module("layer3", stage(24, 32));
    layer4 = register_module("layer4", stage(32, 48));
    layer5 = register_module("layer5", stage(48, 64));
    lateral3 = register_module("lateral3", conv(32, c, 1));
    lateral4 = register_module("lateral4", conv(48, c, 1));
    lateral5 = register_module("lateral5", conv(64, c, 1));
    smooth3 = register_module("smooth3", conv(c, c, 3));
    smooth4 = register_module("smooth4", conv(c, c, 3));
    smooth5 = register_module("smooth5", conv(c, c, 3));
    down6 = register_module("down6", conv(c, c, 3, 2));
    down7 = register_module("down7", conv(c, c, 3, 2));
    projection = register_module(
        "projection", torch::nn::Sequential(conv(c, 2 * c, 1), torch::nn::ReLU(), conv(2 * c, model.embed_dim, 1)));
    // Registered last and always constructed, so toggling it leaves every other
    // parameter's initialisation unchanged.
    fea = register_module("fea", AttentionBranch(fea_cfg));
}

EncoderOutput EncoderImpl::forward(const torch::Tensor& images) {
    const auto x = as_image_batch(images);
    EncoderOutput out;
    const auto c1 = stem->forward(x);
    out.stride4 = layer2->forward(c1);
    const auto c3 = layer3->forward(out.stride4);
    const auto c4 = layer4->forward(c3);
    const auto c5 = layer5->forward(c4);

    const auto p5 = lateral5(c5);
    const auto p4 = lateral4(c4) + upsample_to(p5, c4);
    const auto p3 = lateral3(c3) + upsample_to(p4, c3);
    const auto o5 = smooth5(p5);
    const auto o6 = down6(o5);
    out.ungated.levels = {{3, smooth3(p3)}, {4, smooth4(p4)}, {5, o5}, {6, o6}, {7, down7(torch::relu(o6))}};
    out.ungated.image_height = x.size(2);
    out.ungated.image_width = x.size(3);

    out.pyramid = out.ungated;
    if (fea_.enabled) {
        out.attention = fea->forward(x);
        for (int level : fea_.apply_levels) {
            auto& t = out.pyramid.levels.at(level);
            t = apply_fea(t, resample_attention(out.attention, t.size(2), t.size(3)));
        }
    }
    for (const auto& [level, t] : out.pyramid.levels) out.embeddings[level] = projection->forward(t);
    return out;
}

DetectionHeadImpl::DetectionHeadImpl(int64_t channels) {
    tower = register_module("tower", torch::nn::Sequential(conv(channels, channels, 3),
                                                           torch::nn::GroupNorm(8, channels),
                                                           torch::nn::ReLU()));
    cls = register_module("cls", conv(channels, kNumClasses, 3));
    box = register_module("box", conv(channels, 4, 3));
    ctr = register_module("ctr", conv(channels, 1, 3));
    init_head_conv(cls, -std::log((1.0 - 0.01) / 0.01));
    init_head_conv(box);
    init_head_conv(ctr);
}

HeadOutputs DetectionHeadImpl::forward(const FeaturePyramid& pyramid) {
    HeadOutputs out;
    for (const auto& [level, feat] : pyramid.levels) {
        const auto t = tower->forward(feat);
        out[level] = LevelHead{cls(t), box(t), ctr(t)};
    }
    return out;
}

MaskBranchImpl::MaskBranchImpl(int64_t stride4_channels, int64_t pyramid_channels, int64_t mask_channels) {
    lateral = register_module("lateral", conv(stride4_channels, mask_channels, 1));
    reduce = register_module("reduce", conv(pyramid_channels, mask_channels, 1));
    conv1 = register_module("conv1", conv(mask_channels, mask_channels, 3));
    conv2 = register_module("conv2", conv(mask_channels, mask_channels, 3));
}

torch::Tensor MaskBranchImpl::forward(const torch::Tensor& stride4, const torch::Tensor& p3) {
    const auto lat = lateral(stride4);
    const auto x = lat + F::interpolate(reduce(p3), F::InterpolateFuncOptions()
                                                       .size(std::vector<int64_t>{lat.size(2), lat.size(3)})
                                                       .mode(torch::kBilinear)
                                                       .align_corners(false));
    // No final activation: pixel features stay signed and rarely vanish.
    return conv2(torch::relu(conv1(x)));
}

MaskPredictorImpl::MaskPredictorImpl(int64_t mask_channels) {
    fc1 = register_module("fc1", conv(mask_channels + 2, 16, 1));
    fc2 = register_module("fc2", conv(16, 16, 1));
    out = register_module("out", conv(16, 1, 1));
}

torch::Tensor MaskPredictorImpl::forward(const torch::Tensor& roi_features) {
    const int64_t r = roi_features.size(0), s = roi_features.size(2);
    const auto opts = roi_features.options().requires_grad(false);
    const auto lin = (torch::arange(s, opts) + 0.5) * (2.0 / s) - 1.0;
    const auto grid = torch::meshgrid({lin, lin}, "ij");
    const auto coords = torch::stack({grid[1], grid[0]}).unsqueeze(0).expand({r, 2, s, s});
    auto x = torch::relu(fc1(torch::cat({roi_features, coords}, 1)));
    x = torch::relu(fc2(x));
    return out(x).squeeze(1);
}

// ---------------------------------------------------------------------------

DetectorImpl::DetectorImpl(const TrainConfig& cfg) : model_(cfg.model) {
    encoder = register_module("encoder", Encoder(cfg.model, cfg.fea));
    head = register_module("head", DetectionHead(cfg.model.pyramid_channels));
    mask_branch = register_module("mask_branch",
                                  MaskBranch(24, cfg.model.pyramid_channels, cfg.model.mask_channels));
    mask_predictor = register_module("mask_predictor", MaskPredictor(cfg.model.mask_channels));
}

DetectorOutput DetectorImpl::forward(const torch::Tensor& images) {
    DetectorOutput out;
    out.encoder = encoder->forward(images);
    out.heads = head->forward(out.encoder.pyramid);
    out.mask_features = mask_branch->forward(out.encoder.stride4, out.encoder.pyramid.at(3));
    return out;
}

FeaturePyramid DetectorImpl::extract_pyramid(const torch::Tensor& images) {
    return encoder->forward(images).pyramid;
}

torch::Tensor decode_ltrb(const torch::Tensor& box_raw, int level) {
    return torch::exp(box_raw.clamp(-6.0, 6.0)).permute({0, 2, 3, 1}) * double(level_stride(level));
}

torch::Tensor decode_boxes(const torch::Tensor& box_raw, int level) {
    const auto ltrb = decode_ltrb(box_raw, level);
    const double s = double(level_stride(level));
    const auto opts = ltrb.options().requires_grad(false);
    const auto ys = (torch::arange(ltrb.size(1), opts) + 0.5) * s;
    const auto xs = (torch::arange(ltrb.size(2), opts) + 0.5) * s;
    const auto grid = torch::meshgrid({ys, xs}, "ij");
    const auto cy = grid[0].unsqueeze(0), cx = grid[1].unsqueeze(0);
    auto parts = ltrb.unbind(3);
    return torch::stack({cx - parts[0], cy - parts[1], cx + parts[2], cy + parts[3]}, 3);
}

torch::Tensor gather_proposal_features(const EncoderOutput& enc, const std::vector<Proposal>& proposals) {
    if (proposals.empty()) {
        const auto& any = enc.embeddings.begin()->second;
        return torch::zeros({0, any.size(1)}, any.options());
    }
    std::map<int, std::vector<int64_t>> flat_index, order;
    for (size_t i = 0; i < proposals.size(); ++i) {
        const auto& p = proposals[i];
        const auto& e = enc.embeddings.at(p.level);
        flat_index[p.level].push_back((int64_t(p.image) * e.size(2) + p.row) * e.size(3) + p.col);
        order[p.level].push_back(int64_t(i));
    }
    std::vector<torch::Tensor> parts;
    std::vector<int64_t> original;
    for (const auto& [level, idx] : flat_index) {
        const auto& e = enc.embeddings.at(level);
        const auto flat = e.permute({0, 2, 3, 1}).reshape({-1, e.size(1)});
        parts.push_back(flat.index_select(0, torch::tensor(idx, torch::kInt64)));
        original.insert(original.end(), order[level].begin(), order[level].end());
    }
    std::vector<int64_t> inverse(original.size());
    for (size_t k = 0; k < original.size(); ++k) inverse[original[k]] = int64_t(k);
    return torch::cat(parts).index_select(0, torch::tensor(inverse, torch::kInt64));
}

std::vector<std::vector<Proposal>> DetectorImpl::generate_proposals(const EncoderOutput& enc,
                                                                     const HeadOutputs& heads,
                                                                     ProposalMode mode) const {
    const int64_t n_images = heads.begin()->second.cls.size(0);
    const double img_w = double(enc.pyramid.image_width), img_h = double(enc.pyramid.image_height);
    std::vector<std::vector<Proposal>> out(n_images);
    for (const auto& [level, h] : heads) {
        torch::NoGradGuard no_grad;
        const auto cls = h.cls.detach().to(torch::kFloat64).contiguous();
        const auto prob = torch::sigmoid(cls);
        const auto obj = torch::sigmoid(h.ctr.detach().to(torch::kFloat64)).squeeze(1);
        const auto score = torch::sqrt(std::get<0>(prob.max(1)) * obj).contiguous();
        const auto boxes = decode_boxes(h.box.detach().to(torch::kFloat64), level).contiguous();
        const int64_t hh = score.size(1), ww = score.size(2);
        auto sa = score.accessor<double, 3>();
        auto ba = boxes.accessor<double, 4>();
        auto ca = cls.accessor<double, 4>();
        auto oa = obj.accessor<double, 3>();
        for (int64_t n = 0; n < n_images; ++n) {
            std::vector<std::pair<double, int64_t>> cand;
            for (int64_t r = 0; r < hh; ++r)
                for (int64_t c = 0; c < ww; ++c) {
                    const double s = sa[n][r][c];
                    if (mode == ProposalMode::Inference && s <= model_.score_threshold) continue;
                    cand.emplace_back(s, r * ww + c);
                }
            const size_t limit = mode == ProposalMode::Training
                                     ? size_t(std::max(0, model_.train_proposals_per_level))
                                     : size_t(std::max(0, model_.pre_nms_top_n));
            std::stable_sort(cand.begin(), cand.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            if (cand.size() > limit) cand.resize(limit);
            for (const auto& [s, idx] : cand) {
                const int64_t r = idx / ww, c = idx % ww;
                Proposal p;
                p.image = int(n);
                p.level = level;
                p.row = int(r);
                p.col = int(c);
                p.box = Box{ba[n][r][c][0], ba[n][r][c][1], ba[n][r][c][2], ba[n][r][c][3]}.clipped(img_w, img_h);
                if (!p.box.valid()) continue;
                p.class_logits = {ca[n][0][r][c], ca[n][1][r][c]};
                p.objectness = oa[n][r][c];
                p.score = s;
                out[n].push_back(std::move(p));
            }
        }
    }
    for (auto& props : out) {
        if (props.empty()) continue;
        const auto feats = gather_proposal_features(enc, props).unbind(0);
        for (size_t i = 0; i < props.size(); ++i) props[i].feature = feats[i];
    }
    return out;
}

std::vector<Proposal> ground_truth_proposals(const EncoderOutput& enc, const HeadOutputs& heads, int image,
                                             const Annotations& faces) {
    std::vector<Proposal> out;
    const double img_w = double(enc.pyramid.image_width), img_h = double(enc.pyramid.image_height);
    for (int level : kLevels) {
        const auto& h = heads.at(level);
        const int64_t hh = h.cls.size(2), ww = h.cls.size(3);
        const double s = double(level_stride(level));
        for (const auto& face : faces) {
            Proposal p;
            p.image = image;
            p.level = level;
            p.row = int(std::clamp<int64_t>(int64_t(std::floor(face.box.cy() / s)), 0, hh - 1));
            p.col = int(std::clamp<int64_t>(int64_t(std::floor(face.box.cx() / s)), 0, ww - 1));
            p.box = face.box.clipped(img_w, img_h);
            if (!p.box.valid()) continue;
            torch::NoGradGuard no_grad;
            const auto cl = h.cls.index({image, torch::indexing::Slice(), p.row, p.col}).to(torch::kFloat64);
            p.class_logits = {cl[0].item<double>(), cl[1].item<double>()};
            p.objectness = torch::sigmoid(h.ctr.index({image, 0, p.row, p.col})).item<double>();
            p.score = 1.0;
            p.injected = true;
            out.push_back(std::move(p));
        }
    }
    if (!out.empty()) {
        const auto feats = gather_proposal_features(enc, out).unbind(0);
        for (size_t i = 0; i < out.size(); ++i) out[i].feature = feats[i];
    }
    return out;
}

torch::Tensor roi_theta(const std::vector<Box>& rois, int64_t image_height, int64_t image_width,
                        torch::ScalarType dtype) {
    auto theta = torch::zeros({int64_t(rois.size()), 2, 3}, torch::kFloat64);
    auto a = theta.accessor<double, 3>();
    const double w = double(image_width), h = double(image_height);
    for (size_t i = 0; i < rois.size(); ++i) {
        const auto& b = rois[i];
        a[i][0][0] = b.width() / w;
        a[i][0][2] = (b.x1 + b.x2) / w - 1.0;
        a[i][1][1] = b.height() / h;
        a[i][1][2] = (b.y1 + b.y2) / h - 1.0;
    }
    return theta.to(dtype);
}

torch::Tensor roi_crop(const torch::Tensor& maps, const std::vector<int64_t>& image_index,
                       const std::vector<Box>& rois, int64_t image_height, int64_t image_width, int64_t size) {
    const int64_t r = int64_t(rois.size());
    if (r == 0) return torch::zeros({0, maps.size(1), size, size}, maps.options());
    const auto theta = roi_theta(rois, image_height, image_width, maps.scalar_type());
    const auto grid = F::affine_grid(theta, {r, maps.size(1), size, size}, false);
    const auto input = maps.index_select(0, torch::tensor(image_index, torch::kInt64));
    return F::grid_sample(input, grid,
                          F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
}

torch::Tensor roi_mask_targets(const std::vector<const Mask*>& masks, const std::vector<Box>& rois, int64_t size) {
    auto out = torch::zeros({int64_t(rois.size()), size, size}, torch::kFloat32);
    auto a = out.accessor<float, 3>();
    for (size_t i = 0; i < rois.size(); ++i) {
        const Mask& m = *masks[i];
        const Box& b = rois[i];
        for (int64_t gy = 0; gy < size; ++gy) {
            const double y = b.y1 + (gy + 0.5) / double(size) * b.height();
            const int64_t py = int64_t(std::floor(y));
            if (py < 0 || py >= m.height) continue;
            for (int64_t gx = 0; gx < size; ++gx) {
                const double x = b.x1 + (gx + 0.5) / double(size) * b.width();
                const int64_t px = int64_t(std::floor(x));
                if (px < 0 || px >= m.width) continue;
                a[i][gy][gx] = m.at(int(py), int(px)) ? 1.0f : 0.0f;
            }
        }
    }
    return out;
}

Mask paste_mask(const torch::Tensor& mask_prob, const Box& roi, int height, int width, double threshold) {
    Mask out(height, width);
    const auto prob = mask_prob.detach().to(torch::kFloat64).contiguous();
    const int64_t s = prob.size(0);
    auto a = prob.accessor<double, 2>();
    const Box clip = roi.clipped(width, height);
    if (!clip.valid() || !roi.valid()) return out;
    const int y0 = int(std::floor(clip.y1)), y1 = int(std::ceil(clip.y2));
    const int x0 = int(std::floor(clip.x1)), x1 = int(std::ceil(clip.x2));
    for (int y = y0; y < y1; ++y) {
        const double v = (y + 0.5 - roi.y1) / roi.height() * double(s) - 0.5;
        if (v < -0.5 || v > double(s) - 0.5) continue;
        const double vc = std::clamp(v, 0.0, double(s - 1));
        const int64_t v0 = int64_t(std::floor(vc)), v1 = std::min(v0 + 1, s - 1);
        const double fv = vc - double(v0);
        for (int x = x0; x < x1; ++x) {
            const double u = (x + 0.5 - roi.x1) / roi.width() * double(s) - 0.5;
            if (u < -0.5 || u > double(s) - 0.5) continue;
            const double uc = std::clamp(u, 0.0, double(s - 1));
            const int64_t u0 = int64_t(std::floor(uc)), u1 = std::min(u0 + 1, s - 1);
            const double fu = uc - double(u0);
            const double p = (1 - fv) * ((1 - fu) * a[v0][u0] + fu * a[v0][u1]) +
                             fv * ((1 - fu) * a[v1][u0] + fu * a[v1][u1]);
            if (p >= threshold) out.at(y, x) = 1;
        }
    }
    return out;
}

MaskPrediction DetectorImpl::predict_masks(const torch::Tensor& mask_features, const std::vector<Proposal>& proposals,
                                           int64_t image_height, int64_t image_width) {
    MaskPrediction out;
    std::vector<Box> rois;
    std::vector<int64_t> images;
    std::vector<size_t> ids;
    for (size_t i = 0; i < proposals.size(); ++i) {
        const Box clipped = proposals[i].box.clipped(double(image_width), double(image_height));
        if (!clipped.valid()) {
            out.skipped.push_back(i);
            continue;
        }
        rois.push_back(clipped.scaled_about_center(model_.roi_scale));
        images.push_back(proposals[i].image);
        ids.push_back(i);
    }
    out.features = roi_crop(mask_features, images, rois, image_height, image_width, model_.mask_size);
    out.logits = rois.empty() ? torch::zeros({0, model_.mask_size, model_.mask_size}, mask_features.options())
                              : mask_predictor->forward(out.features);
    for (size_t k = 0; k < ids.size(); ++k)
        out.masks.push_back(PredictedMask{ids[k], rois[k], out.features[int64_t(k)], out.logits[int64_t(k)]});
    return out;
}

std::vector<std::vector<InstancePrediction>> DetectorImpl::detect(const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    const auto batch = as_image_batch(images);
    const auto fwd = forward(batch);
    const auto proposals = generate_proposals(fwd.encoder, fwd.heads, ProposalMode::Inference);
    const int height = int(batch.size(2)), width = int(batch.size(3));
    std::vector<std::vector<InstancePrediction>> out(proposals.size());
    for (size_t n = 0; n < proposals.size(); ++n) {
        const auto& props = proposals[n];
        std::vector<Box> boxes;
        std::vector<double> scores;
        for (const auto& p : props) {
            boxes.push_back(p.box);
            scores.push_back(p.score);
        }
        auto keep = nms(boxes, scores, model_.nms_threshold);
        if (keep.size() > size_t(model_.max_detections)) keep.resize(size_t(model_.max_detections));
        std::vector<Proposal> kept;
        for (size_t k : keep) kept.push_back(props[k]);
        const auto masks = predict_masks(fwd.mask_features, kept, height, width);
        for (const auto& pm : masks.masks) {
            const auto& p = kept[pm.proposal_id];
            InstancePrediction pred;
            pred.box = p.box;
            pred.label = p.class_logits[1] > p.class_logits[0] ? FaceLabel::Fake : FaceLabel::Real;
            pred.score = p.score;
            pred.mask = paste_mask(pm.mask_prob(), pm.roi, height, width);
            out[n].push_back(std::move(pred));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

DenseTargets build_dense_targets(const FeaturePyramid& pyramid, const std::vector<Annotations>& faces,
                                 double center_radius) {
    DenseTargets out;
    for (const auto& f : faces) out.num_faces += int64_t(f.size());
    for (const auto& [level, feat] : pyramid.levels) {
        const int64_t n = feat.size(0), hh = feat.size(2), ww = feat.size(3);
        if (int64_t(faces.size()) != n) throw std::invalid_argument("one annotation list per image required");
        const double s = double(level_stride(level));
        const auto [lo, hi] = size_range(level);
        auto labels = torch::full({n, hh, ww}, -1, torch::kInt64);
        auto gt_index = torch::full({n, hh, ww}, -1, torch::kInt64);
        auto ltrb = torch::zeros({n, hh, ww, 4}, torch::kFloat32);
        auto ctr = torch::zeros({n, hh, ww}, torch::kFloat32);
        auto la = labels.accessor<int64_t, 3>();
        auto ga = gt_index.accessor<int64_t, 3>();
        auto ta = ltrb.accessor<float, 4>();
        auto ca = ctr.accessor<float, 3>();
        for (int64_t b = 0; b < n; ++b) {
            const auto& list = faces[size_t(b)];
            for (int64_t r = 0; r < hh; ++r) {
                const double y = (r + 0.5) * s;
                for (int64_t c = 0; c < ww; ++c) {
                    const double x = (c + 0.5) * s;
                    int best = -1;
                    double best_area = std::numeric_limits<double>::infinity();
                    std::array<double, 4> best_d{};
                    for (size_t g = 0; g < list.size(); ++g) {
                        const Box& bx = list[g].box;
                        const std::array<double, 4> d{x - bx.x1, y - bx.y1, bx.x2 - x, bx.y2 - y};
                        if (*std::min_element(d.begin(), d.end()) <= 0) continue;
                        const double rad = center_radius * s;
                        if (std::abs(x - bx.cx()) >= rad || std::abs(y - bx.cy()) >= rad) continue;
                        const double m = *std::max_element(d.begin(), d.end());
                        if (m < lo || m >= hi) continue;
                        if (bx.area() < best_area) {
                            best_area = bx.area();
                            best = int(g);
                            best_d = d;
                        }
                    }
                    if (best < 0) continue;
                    la[b][r][c] = class_index(list[size_t(best)].label);
                    ga[b][r][c] = best;
                    for (int k = 0; k < 4; ++k) ta[b][r][c][k] = float(best_d[k]);
                    const double lr = std::min(best_d[0], best_d[2]) / std::max(best_d[0], best_d[2]);
                    const double tb = std::min(best_d[1], best_d[3]) / std::max(best_d[1], best_d[3]);
                    ca[b][r][c] = float(std::sqrt(lr * tb));
                }
            }
        }
        out.levels[level] = LevelTargets{labels, ltrb, ctr, gt_index};
    }
    return out;
}

DetectionLoss detection_loss(const HeadOutputs& heads, const DenseTargets& targets, const MaskLossInput* masks) {
    if (targets.num_faces <= 0) throw std::invalid_argument("detection_loss: batch has no ground-truth faces");
    std::vector<torch::Tensor> cls_v, ltrb_v, ctr_v, lab_v, tltrb_v, tctr_v;
    for (const auto& [level, h] : heads) {
        const auto& t = targets.levels.at(level);
        cls_v.push_back(h.cls.permute({0, 2, 3, 1}).reshape({-1, kNumClasses}));
        ltrb_v.push_back(decode_ltrb(h.box, level).reshape({-1, 4}));
        ctr_v.push_back(h.ctr.reshape({-1}));
        lab_v.push_back(t.labels.reshape({-1}));
        tltrb_v.push_back(t.ltrb.reshape({-1, 4}));
        tctr_v.push_back(t.centerness.reshape({-1}));
    }
    const auto cls = torch::cat(cls_v);
    const auto dtype = cls.scalar_type();
    const auto labels = torch::cat(lab_v);
    const auto pos = torch::nonzero(labels >= 0).squeeze(1);
    const int64_t num_pos = pos.size(0);
    const double norm = std::max<double>(1.0, double(num_pos));

    // sigmoid focal loss, alpha 0.25, gamma 2
    auto onehot = torch::zeros_like(cls);
    if (num_pos > 0) onehot.index_put_({pos, labels.index_select(0, pos)}, 1.0);
    const auto p = torch::sigmoid(cls);
    const auto ce = F::binary_cross_entropy_with_logits(
        cls, onehot, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
    const auto p_t = p * onehot + (1 - p) * (1 - onehot);
    const auto alpha_t = 0.25 * onehot + 0.75 * (1 - onehot);
    DetectionLoss out;
    out.cls = (alpha_t * ce * (1 - p_t).pow(2)).sum() / norm;

    const auto zero = cls.sum() * 0.0;
    if (num_pos > 0) {
        const auto pred = torch::cat(ltrb_v).index_select(0, pos);
        const auto tgt = torch::cat(tltrb_v).to(dtype).index_select(0, pos);
        const auto ctr_t = torch::cat(tctr_v).to(dtype).index_select(0, pos);
        const auto pa = (pred.select(1, 0) + pred.select(1, 2)) * (pred.select(1, 1) + pred.select(1, 3));
        const auto ta = (tgt.select(1, 0) + tgt.select(1, 2)) * (tgt.select(1, 1) + tgt.select(1, 3));
        const auto mn = torch::min(pred, tgt);
        const auto inter = (mn.select(1, 0) + mn.select(1, 2)) * (mn.select(1, 1) + mn.select(1, 3));
        const auto uni = pa + ta - inter;
        const auto iou_loss = -torch::log((inter + 1.0) / (uni + 1.0));
        const auto wsum = ctr_t.sum();
        out.box = wsum.item<double>() > 0 ? (iou_loss * ctr_t).sum() / wsum : iou_loss.mean();

        const auto ctr_logit = torch::cat(ctr_v).index_select(0, pos);
        const auto bce = F::binary_cross_entropy_with_logits(
            ctr_logit, ctr_t, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
        // subtract the target entropy so a perfect prediction scores exactly zero
        const auto c = ctr_t.clamp(1e-12, 1.0);
        const auto c1 = (1.0 - ctr_t).clamp(1e-12, 1.0);
        const auto entropy = -(ctr_t * torch::log(c) + (1.0 - ctr_t) * torch::log(c1));
        out.ctr = (bce - entropy).mean();
    } else {
        out.box = zero;
        out.ctr = zero;
    }

    if (masks != nullptr && masks->logits.defined() && masks->logits.numel() > 0) {
        out.mask = F::binary_cross_entropy_with_logits(masks->logits, masks->targets.to(masks->logits.scalar_type()));
    } else {
        out.mask = zero;
    }
    out.total = out.cls + out.box + out.ctr + out.mask;
    return out;
}

}  // namespace comics
