#include "comics/augment.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

namespace F = torch::nn::functional;

namespace comics {

uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b, uint64_t c) {
    auto mix = [](uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(mix(root) ^ a) ^ b) ^ c);
}

namespace {

constexpr double kPi = 3.14159265358979323846;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
bool coin(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }
template <typename T>
T pick(Rng& rng, const std::vector<T>& v) {
    return v[std::uniform_int_distribution<size_t>(0, v.size() - 1)(rng)];
}

void check_image(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw std::invalid_argument("expected image [3,H,W]");
}

torch::Tensor luminance(const torch::Tensor& image) {
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2];
}

torch::Tensor blend(const torch::Tensor& degenerate, const torch::Tensor& image, double factor) {
    return (degenerate + factor * (image - degenerate)).clamp(0.0, 1.0);
}

using Mat3 = std::array<double, 9>;

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[size_t(i * 3 + j)] += a[size_t(i * 3 + k)] * b[size_t(k * 3 + j)];
    return r;
}

Mat3 translate(double tx, double ty) { return {1, 0, tx, 0, 1, ty, 0, 0, 1}; }

cv::Mat to_mat(const torch::Tensor& image) {
    const auto hwc = image.permute({1, 2, 0}).contiguous().to(torch::kFloat32);
    return cv::Mat(int(hwc.size(0)), int(hwc.size(1)), CV_32FC3, hwc.data_ptr<float>()).clone();
}

torch::Tensor from_mat(const cv::Mat& m) {
    return torch::from_blob(m.data, {m.rows, m.cols, 3}, torch::kFloat32).permute({2, 0, 1}).clone();
}

Box transform_box(const Box& b, const std::array<double, 6>& a) {
    const std::array<std::pair<double, double>, 4> corners = {
        {{b.x1, b.y1}, {b.x2, b.y1}, {b.x1, b.y2}, {b.x2, b.y2}}};
    Box out{1e300, 1e300, -1e300, -1e300};
    for (const auto& [x, y] : corners) {
        const double u = a[0] * x + a[1] * y + a[2];
        const double v = a[3] * x + a[4] * y + a[5];
        out.x1 = std::min(out.x1, u);
        out.y1 = std::min(out.y1, v);
        out.x2 = std::max(out.x2, u);
        out.y2 = std::max(out.y2, v);
    }
    return out;
}

}  // namespace

std::array<double, 6> query_affine(const QueryTransform& t, int height, int width) {
    const double w = width, h = height;
    const double th = t.angle_degrees * kPi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    Mat3 m = mul(translate(w / 2, h / 2), mul(Mat3{c, -s, 0, s, c, 0, 0, 0, 1}, translate(-w / 2, -h / 2)));
    if (t.crop.valid()) {
        const Mat3 crop = {w / t.crop.width(), 0, -t.crop.x1 * w / t.crop.width(),
                           0, h / t.crop.height(), -t.crop.y1 * h / t.crop.height(),
                           0, 0, 1};
        m = mul(crop, m);
    }
    if (t.flip) m = mul(Mat3{-1, 0, w, 0, 1, 0, 0, 0, 1}, m);
    return {m[0], m[1], m[2], m[3], m[4], m[5]};
}

QueryView apply_query_transform(const torch::Tensor& image, const Annotations& faces, const QueryTransform& t) {
    check_image(image);
    const int h = int(image.size(1)), w = int(image.size(2));
    const auto a = query_affine(t, h, w);
    // OpenCV addresses pixel centres; shift the edge-coordinate map by half a pixel.
    const Mat3 edge = {a[0], a[1], a[2], a[3], a[4], a[5], 0, 0, 1};
    const Mat3 centre = mul(translate(-0.5, -0.5), mul(edge, translate(0.5, 0.5)));
    const cv::Mat m = (cv::Mat_<double>(2, 3) << centre[0], centre[1], centre[2], centre[3], centre[4], centre[5]);

    QueryView out;
    out.transform = t;
    cv::Mat dst;
    cv::warpAffine(to_mat(image), dst, m, cv::Size(w, h), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(0, 0, 0));
    out.image = from_mat(dst).clamp(0.0, 1.0);

    for (size_t i = 0; i < faces.size(); ++i) {
        const auto& f = faces[i];
        FaceAnnotation g;
        g.label = f.label;
        g.source_index = f.source_index >= 0 ? f.source_index : int(i);
        if (!f.mask.empty()) {
            cv::Mat src(f.mask.height, f.mask.width, CV_8UC1, const_cast<uint8_t*>(f.mask.pixels.data()));
            cv::Mat warped;
            cv::warpAffine(src, warped, m, cv::Size(w, h), cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(0));
            g.mask = Mask(h, w);
            std::copy(warped.data, warped.data + size_t(h) * size_t(w), g.mask.pixels.begin());
            const auto bb = g.mask.bbox();
            if (!bb) {
                ++out.dropped_faces;
                continue;
            }
            g.box = *bb;
        } else {
            g.box = transform_box(f.box, a).clipped(w, h);
            if (!g.box.valid()) {
                ++out.dropped_faces;
                continue;
            }
        }
        out.faces.push_back(std::move(g));
    }
    if (out.dropped_faces > 0)
        std::cerr << "warning: query view dropped " << out.dropped_faces << " degenerate face(s)\n";
    return out;
}

QueryView make_query_view(const torch::Tensor& image, const Annotations& faces, const AugmentConfig& cfg, Rng& rng) {
    check_image(image);
    const int h = int(image.size(1)), w = int(image.size(2));
    QueryTransform t;
    t.angle_degrees = uniform(rng, -cfg.rotation_degrees, cfg.rotation_degrees);
    const QueryTransform rot_only{t.angle_degrees, Box{}, false};
    const auto rot = query_affine(rot_only, h, w);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double area = uniform(rng, cfg.min_crop_area, 1.0) * w * h;
        // aspect limited so the window fits without shrinking below the sampled area
        double lo = std::max(3.0 / 4.0, area / (double(h) * h)), hi = std::min(4.0 / 3.0, double(w) * w / area);
        if (lo > hi) lo = hi = double(w) / h;
        const double aspect = std::exp(uniform(rng, std::log(lo), std::log(hi)));
        const double cw = std::min<double>(w, std::sqrt(area * aspect));
        const double ch = std::min<double>(h, std::sqrt(area / aspect));
        const double x0 = uniform(rng, 0.0, w - cw + 1e-12), y0 = uniform(rng, 0.0, h - ch + 1e-12);
        const Box crop{x0, y0, x0 + cw, y0 + ch};
        const bool all_inside = std::all_of(faces.begin(), faces.end(), [&](const FaceAnnotation& f) {
            return iou(transform_box(f.box, rot), crop) > 0.0;
        });
        if (all_inside) {
            t.crop = crop;
            break;
        }
    }
    t.flip = coin(rng, cfg.flip_probability);
    return apply_query_transform(image, faces, t);
}

// ---------------------------------------------------------------------------

torch::Tensor adjust_brightness(const torch::Tensor& image, double factor) {
    return blend(torch::zeros_like(image), image, factor);
}

torch::Tensor adjust_contrast(const torch::Tensor& image, double factor) {
    const auto mean = luminance(image).mean();
    return blend(torch::full_like(image, mean.item<double>()), image, factor);
}

torch::Tensor adjust_saturation(const torch::Tensor& image, double factor) {
    return blend(luminance(image).unsqueeze(0).expand_as(image), image, factor);
}

torch::Tensor adjust_sharpness(const torch::Tensor& image, double factor) {
    // smoothing kernel of the classic image-enhance sharpness filter; border pixels stay put
    auto k = torch::ones({3, 1, 3, 3}, image.options());
    k.index_put_({torch::indexing::Slice(), 0, 1, 1}, 5.0);
    k = k / 13.0;
    auto smooth = image.clone();
    if (image.size(1) > 2 && image.size(2) > 2) {
        const auto inner = F::conv2d(image.unsqueeze(0), k, F::Conv2dFuncOptions().groups(3)).squeeze(0);
        smooth.index_put_({torch::indexing::Slice(), torch::indexing::Slice(1, -1), torch::indexing::Slice(1, -1)},
                          inner);
    }
    return blend(smooth, image, factor);
}

torch::Tensor to_grayscale(const torch::Tensor& image) {
    return luminance(image).unsqueeze(0).expand_as(image).clone();
}

torch::Tensor downscale_upscale(const torch::Tensor& image, double factor) {
    check_image(image);
    const int64_t h = image.size(1), w = image.size(2);
    const int64_t sh = std::max<int64_t>(1, int64_t(std::lround(h * factor)));
    const int64_t sw = std::max<int64_t>(1, int64_t(std::lround(w * factor)));
    const auto small = F::interpolate(image.unsqueeze(0), F::InterpolateFuncOptions()
                                                              .size(std::vector<int64_t>{sh, sw})
                                                              .mode(torch::kBilinear)
                                                              .align_corners(false)
                                                              .antialias(true));
    return F::interpolate(small, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{h, w})
                                     .mode(torch::kBilinear)
                                     .align_corners(false))
        .squeeze(0)
        .clamp(0.0, 1.0);
}

torch::Tensor block_chunks(const torch::Tensor& image, int grid, const std::vector<int>& chunks) {
    check_image(image);
    const int64_t h = image.size(1), w = image.size(2);
    auto out = image.clone();
    for (int c : chunks) {
        if (c < 0 || c >= grid * grid) throw std::out_of_range("block_chunks: chunk index");
        const int r = c / grid, col = c % grid;
        const int64_t y0 = h * r / grid, y1 = h * (r + 1) / grid;
        const int64_t x0 = w * col / grid, x1 = w * (col + 1) / grid;
        out.index_put_({torch::indexing::Slice(), torch::indexing::Slice(y0, y1), torch::indexing::Slice(x0, x1)}, 0.0);
    }
    return out;
}

torch::Tensor random_block(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng, std::vector<int>* blocked) {
    check_image(image);
    if (image.size(1) < cfg.block_grid || image.size(2) < cfg.block_grid)
        throw std::invalid_argument("random_block: image smaller than the block grid");
    const int total = cfg.block_grid * cfg.block_grid;
    const int lo = int(std::ceil(cfg.block_fraction_range[0] * total - 1e-9));
    const int hi = int(std::floor(cfg.block_fraction_range[1] * total + 1e-9));
    const int n = std::uniform_int_distribution<int>(lo, hi)(rng);
    std::vector<int> all(static_cast<size_t>(total));
    std::iota(all.begin(), all.end(), 0);
    for (int i = 0; i < n; ++i) std::swap(all[size_t(i)], all[std::uniform_int_distribution<size_t>(size_t(i), all.size() - 1)(rng)]);
    std::vector<int> chosen(all.begin(), all.begin() + n);
    std::sort(chosen.begin(), chosen.end());
    if (blocked) *blocked = chosen;
    return block_chunks(image, cfg.block_grid, chosen);
}

torch::Tensor gaussian_noise(const torch::Tensor& image, double variance, Rng& rng, bool clip) {
    auto out = image.to(torch::kFloat32).contiguous().clone();
    std::normal_distribution<double> n(0.0, std::sqrt(variance));
    float* p = out.data_ptr<float>();
    for (int64_t i = 0; i < out.numel(); ++i) p[i] = float(p[i] + n(rng));
    return clip ? out.clamp(0.0, 1.0) : out;
}

torch::Tensor salt_pepper(const torch::Tensor& image, double fraction, Rng& rng) {
    check_image(image);
    auto out = image.to(torch::kFloat32).contiguous().clone();
    const int64_t plane = out.size(1) * out.size(2);
    float* p = out.data_ptr<float>();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int64_t i = 0; i < plane; ++i) {
        if (u(rng) >= fraction) continue;
        const float v = u(rng) < 0.5 ? 0.0f : 1.0f;
        for (int c = 0; c < 3; ++c) p[c * plane + i] = v;
    }
    return out;
}

torch::Tensor add_noise(const torch::Tensor& image, const std::string& kind, const AugmentConfig& cfg, Rng& rng) {
    if (kind == "gaussian") return gaussian_noise(image, pick(rng, cfg.gaussian_variances), rng);
    if (kind == "salt_pepper") return salt_pepper(image, pick(rng, cfg.salt_pepper_fractions), rng);
    throw std::invalid_argument("add_noise: unknown kind '" + kind + "'");
}

KeyView make_key_view(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng) {
    check_image(image);
    KeyView out;
    auto x = image.to(torch::kFloat32);
    const double p = cfg.op_probability;
    if (cfg.color_jitter && coin(rng, p)) {
        const double b = uniform(rng, cfg.brightness_range[0], cfg.brightness_range[1]);
        const double c = uniform(rng, cfg.contrast_range[0], cfg.contrast_range[1]);
        const double s = uniform(rng, cfg.saturation_range[0], cfg.saturation_range[1]);
        const double sh = uniform(rng, cfg.sharpness_range[0], cfg.sharpness_range[1]);
        x = adjust_sharpness(adjust_saturation(adjust_contrast(adjust_brightness(x, b), c), s), sh);
        out.log.push_back({{"op", "color_jitter"}, {"brightness", b}, {"contrast", c}, {"saturation", s}, {"sharpness", sh}});
    }
    if (cfg.grayscale && coin(rng, p)) {
        x = to_grayscale(x);
        out.log.push_back({{"op", "grayscale"}});
    }
    if (cfg.random_block && coin(rng, p)) {
        std::vector<int> chunks;
        x = random_block(x, cfg, rng, &chunks);
        out.log.push_back({{"op", "random_block"}, {"chunks", chunks}});
    }
    if (cfg.interpolate && coin(rng, p)) {
        x = downscale_upscale(x, cfg.downscale);
        out.log.push_back({{"op", "interpolate"}, {"factor", cfg.downscale}});
    }
    if (cfg.gaussian_noise && coin(rng, p)) {
        const double v = pick(rng, cfg.gaussian_variances);
        x = gaussian_noise(x, v, rng);
        out.log.push_back({{"op", "gaussian_noise"}, {"variance", v}});
    }
    if (cfg.salt_pepper && coin(rng, p)) {
        const double f = pick(rng, cfg.salt_pepper_fractions);
        x = salt_pepper(x, f, rng);
        out.log.push_back({{"op", "salt_pepper"}, {"fraction", f}});
    }
    out.image = x.contiguous();
    return out;
}

}  // namespace comics
