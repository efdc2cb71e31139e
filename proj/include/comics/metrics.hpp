#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comics/geometry.hpp"

namespace comics {

struct Detection {
    int image_id = 0;
    int category = 0;  // 0 real, 1 fake
    double score = 0.0;
    Box box;
    std::optional<Mask> mask;
};

struct GroundTruth {
    int image_id = 0;
    int category = 0;
    Box box;
    std::optional<Mask> mask;
    /// Mask area when a mask is present, else box area.
    double area() const;
};

enum class IouKind { Box, Mask };

double pair_iou(const Detection& d, const GroundTruth& g, IouKind kind);

/// Greedy one-to-one matching of detections of one image and class. Detections
/// are visited by descending score (ties by position); each takes the
/// unmatched ground truth of highest IoU >= threshold, preferring ground truth
/// not flagged in `gt_ignore`.
struct Matching {
    std::vector<size_t> order;   // detection indices in processing order
    std::vector<int> det_gt;     // per detection: matched gt index or -1
    std::vector<double> det_iou; // IoU with the matched gt (0 when unmatched)
    std::vector<int> gt_det;     // per gt: matched detection or -1
};
Matching match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                          double iou_threshold, IouKind kind, const std::vector<bool>* gt_ignore = nullptr);

/// Size bucket boundaries in pixel^2, COCO convention.
inline constexpr double kSmallArea = 32.0 * 32.0;
inline constexpr double kLargeArea = 96.0 * 96.0;
inline constexpr int kMaxDetsPerImage = 100;

struct ApSummary {
    double ap = 0, ap_s = 0, ap_m = 0, ap_l = 0;  // x100
};

/// 101-point interpolated AP averaged over IoU 0.50:0.05:0.95 and over the
/// classes that have ground truth. Buckets with no ground truth report 0.
ApSummary coco_ap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind);

/// Single-class, single-threshold AP for one area range; -1 when no ground truth.
double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind,
                         double iou_threshold, double area_lo = 0.0, double area_hi = 1e10);

struct LrpResult {
    double lrp = 0, loc = 0, fp = 0, fn = 0;  // x100
    int tp_count = 0, fp_count = 0, fn_count = 0;
};

/// LRP of the given detections (all of them) against the ground truth, pooled
/// over images. Loc is 100 when there is no true positive, FP is 0 when there
/// is no detection.
LrpResult lrp_at(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind,
                 double tau_iou = 0.5);

struct OlrpResult {
    double olrp = 0, loc = 0, fp = 0, fn = 0;  // x100
};

/// Minimum LRP over confidence thresholds at the distinct detection scores,
/// per class, then averaged over classes with ground truth. Ties pick the
/// higher threshold.
OlrpResult optimal_lrp(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind,
                       double tau_iou = 0.5);

/// Per-class oLRP (single category present in the inputs is not required; the
/// inputs are filtered to `category`). Returns nullopt when the class has no ground truth.
std::optional<OlrpResult> class_optimal_lrp(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                            int category, IouKind kind, double tau_iou = 0.5);

struct MetricBlock {
    double ap = 0, ap_s = 0, ap_m = 0, ap_l = 0;
    double olrp = 0, olrp_loc = 0, olrp_fp = 0, olrp_fn = 0;
};

struct EvalReport {
    MetricBlock detection;
    MetricBlock segmentation;
    std::map<std::string, MetricBlock> per_class_detection;
    std::map<std::string, MetricBlock> per_class_segmentation;
};

EvalReport evaluate_predictions(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts);

/// One decimal, as reported.
double report_round(double v);
nlohmann::json report_to_json(const EvalReport& report);
/// Schema version of the report JSON.
inline constexpr int kReportSchemaVersion = 1;

/// COCO results format: [{image_id, category_id, bbox:[x,y,w,h], score, segmentation:{size, counts}}].
nlohmann::json detections_to_json(const std::vector<Detection>& dets);
std::vector<Detection> detections_from_json(const nlohmann::json& j);

}  // namespace comics
