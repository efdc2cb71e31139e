#include "comics/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace comics {

Box Box::clipped(double w, double h) const {
    return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h), std::clamp(x2, 0.0, w),
            std::clamp(y2, 0.0, h)};
}

Box Box::scaled_about_center(double factor) const {
    const double hw = 0.5 * width() * factor;
    const double hh = 0.5 * height() * factor;
    return {cx() - hw, cy() - hh, cx() + hw, cy() + hh};
}

double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) return 0.0;
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

int64_t Mask::area() const {
    return std::count_if(pixels.begin(), pixels.end(), [](uint8_t v) { return v != 0; });
}

std::optional<Box> Mask::bbox() const {
    int min_x = width, min_y = height, max_x = -1, max_y = -1;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (!at(y, x)) continue;
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
        }
    }
    if (max_x < 0) return std::nullopt;
    return Box{double(min_x), double(min_y), double(max_x + 1), double(max_y + 1)};
}

double mask_iou(const Mask& a, const Mask& b) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument("mask_iou: mask sizes differ");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const bool pa = a.pixels[i] != 0, pb = b.pixels[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

Rle rle_encode(const Mask& mask) {
    Rle rle{mask.height, mask.width, {}};
    uint8_t current = 0;
    uint32_t run = 0;
    for (int x = 0; x < mask.width; ++x) {
        for (int y = 0; y < mask.height; ++y) {
            const uint8_t v = mask.at(y, x) ? 1 : 0;
            if (v != current) {
                rle.counts.push_back(run);
                run = 0;
                current = v;
            }
            ++run;
        }
    }
    rle.counts.push_back(run);
    return rle;
}

Mask rle_decode(const Rle& rle) {
    Mask mask(rle.height, rle.width);
    const size_t total = static_cast<size_t>(rle.height) * rle.width;
    size_t pos = 0;
    uint8_t value = 0;
    for (uint32_t run : rle.counts) {
        if (pos + run > total) throw std::invalid_argument("rle_decode: counts exceed mask size");
        for (uint32_t i = 0; i < run; ++i, ++pos) {
            if (value) {
                const size_t x = pos / rle.height, y = pos % rle.height;
                mask.pixels[y * rle.width + x] = 1;
            }
        }
        value ^= 1;
    }
    if (pos != total) throw std::invalid_argument("rle_decode: counts do not cover the mask");
    return mask;
}

Mask rasterize_polygons(const std::vector<std::vector<double>>& polygons, int height, int width) {
    Mask mask(height, width);
    for (const auto& poly : polygons) {
        if (poly.size() < 6 || poly.size() % 2 != 0)
            throw std::invalid_argument("polygon needs at least three x,y vertices");
        const size_t n = poly.size() / 2;
        for (int y = 0; y < height; ++y) {
            const double py = y + 0.5;
            for (int x = 0; x < width; ++x) {
                const double px = x + 0.5;
                bool inside = false;
                for (size_t i = 0, j = n - 1; i < n; j = i++) {
                    const double xi = poly[2 * i], yi = poly[2 * i + 1];
                    const double xj = poly[2 * j], yj = poly[2 * j + 1];
                    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi)
                        inside = !inside;
                }
                if (inside) mask.at(y, x) ^= 1;
            }
        }
    }
    return mask;
}

std::vector<size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                        double iou_threshold) {
    std::vector<size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::vector<size_t> keep;
    std::vector<bool> removed(boxes.size(), false);
    for (size_t i = 0; i < order.size(); ++i) {
        const size_t a = order[i];
        if (removed[a]) continue;
        keep.push_back(a);
        for (size_t j = i + 1; j < order.size(); ++j) {
            const size_t b = order[j];
            if (!removed[b] && iou(boxes[a], boxes[b]) > iou_threshold) removed[b] = true;
        }
    }
    return keep;
}

}  // namespace comics
