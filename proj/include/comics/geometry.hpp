#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace comics {

/// Axis-aligned box in continuous pixel coordinates. Pixel (x, y) covers
/// [x, x+1) x [y, y+1), so a box that exactly covers pixels 0..9 is (0,0,10,10).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return valid() ? width() * height() : 0.0; }
    bool valid() const { return x2 > x1 && y2 > y1; }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    Box clipped(double width, double height) const;
    Box scaled_about_center(double factor) const;

    bool operator==(const Box&) const = default;
};

/// Intersection over union. Degenerate (zero-area) boxes give 0.
double iou(const Box& a, const Box& b);

/// Dense binary mask, row-major.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w, 0) {}

    uint8_t& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
    bool empty() const { return pixels.empty(); }
    int64_t area() const;
    /// Tight bounding box in pixel-edge coordinates; nullopt when no pixel is set.
    std::optional<Box> bbox() const;

    bool operator==(const Mask&) const = default;
};

double mask_iou(const Mask& a, const Mask& b);

/// COCO uncompressed run-length encoding: column-major, first run counts zeros.
struct Rle {
    int height = 0;
    int width = 0;
    std::vector<uint32_t> counts;

    bool operator==(const Rle&) const = default;
};

Rle rle_encode(const Mask& mask);
Mask rle_decode(const Rle& rle);

/// Rasterizes polygon rings (flat x0,y0,x1,y1,... in pixel-edge coordinates)
/// by testing pixel centers with the even-odd rule.
Mask rasterize_polygons(const std::vector<std::vector<double>>& polygons, int height, int width);

/// Non-maximum suppression. Returns kept indices ordered by descending score;
/// ties keep the lower index first.
std::vector<size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                        double iou_threshold);

}  // namespace comics
