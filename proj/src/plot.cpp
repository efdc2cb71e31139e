#include <algorithm>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "comics/trainer.hpp"

namespace comics {

namespace {

struct Range {
    double lo, hi;
};

Range padded(double lo, double hi) {
    if (hi - lo < 1.0) {
        const double mid = 0.5 * (lo + hi);
        lo = mid - 0.5;
        hi = mid + 0.5;
    }
    const double pad = 0.1 * (hi - lo);
    return {lo - pad, hi + pad};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

}  // namespace

void plot_scatter(const std::vector<ScatterPoint>& points, const std::filesystem::path& path,
                  const std::string& title) {
    if (points.empty()) throw std::invalid_argument("plot_scatter: no points");
    const int width = 720, height = 540;
    const int left = 70, right = 30, top = 50, bottom = 60;
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));

    double ap_lo = points[0].ap, ap_hi = points[0].ap, lrp_lo = points[0].olrp, lrp_hi = points[0].olrp;
    for (const auto& p : points) {
        ap_lo = std::min(ap_lo, p.ap);
        ap_hi = std::max(ap_hi, p.ap);
        lrp_lo = std::min(lrp_lo, p.olrp);
        lrp_hi = std::max(lrp_hi, p.olrp);
    }
    const Range ax = padded(ap_lo, ap_hi), ay = padded(lrp_lo, lrp_hi);
    const int pw = width - left - right, ph = height - top - bottom;
    // AP decreases to the right; oLRP increases downwards.
    auto to_px = [&](double ap, double olrp) {
        const double fx = (ax.hi - ap) / (ax.hi - ax.lo);
        const double fy = (olrp - ay.lo) / (ay.hi - ay.lo);
        return cv::Point(left + int(fx * pw), top + int(fy * ph));
    };

    const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
    const int font = cv::FONT_HERSHEY_SIMPLEX;
    for (int t = 0; t <= 4; ++t) {
        const double ap = ax.hi - (ax.hi - ax.lo) * t / 4.0;
        const double lrp = ay.lo + (ay.hi - ay.lo) * t / 4.0;
        const int x = left + pw * t / 4, y = top + ph * t / 4;
        cv::line(img, {x, top}, {x, top + ph}, grey, 1);
        cv::line(img, {left, y}, {left + pw, y}, grey, 1);
        cv::putText(img, fmt(ap), {x - 14, top + ph + 18}, font, 0.4, black, 1, cv::LINE_AA);
        cv::putText(img, fmt(lrp), {8, y + 4}, font, 0.4, black, 1, cv::LINE_AA);
    }
    cv::rectangle(img, {left, top}, {left + pw, top + ph}, black, 1);
    cv::putText(img, "AP", {left + pw / 2 - 8, height - 15}, font, 0.5, black, 1, cv::LINE_AA);
    cv::putText(img, "oLRP", {8, top - 12}, font, 0.5, black, 1, cv::LINE_AA);
    cv::putText(img, title, {left, 28}, font, 0.6, black, 1, cv::LINE_AA);

    for (const auto& p : points) {
        const auto c = to_px(p.ap, p.olrp);
        cv::circle(img, c, 5, cv::Scalar(40, 90, 200), cv::FILLED, cv::LINE_AA);
        cv::putText(img, p.label, {c.x + 8, c.y - 6}, font, 0.4, black, 1, cv::LINE_AA);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace comics
