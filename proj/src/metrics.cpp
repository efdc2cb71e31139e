#include "comics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "comics/types.hpp"

namespace comics {

double GroundTruth::area() const { return mask ? double(mask->area()) : box.area(); }

namespace {

double det_area(const Detection& d, IouKind kind) {
    return kind == IouKind::Mask && d.mask ? double(d.mask->area()) : d.box.area();
}

std::vector<size_t> score_order(const std::vector<Detection>& dets) {
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    return order;
}

using Key = std::pair<int, int>;  // (image, category)

template <typename T>
std::map<Key, std::vector<T>> group(const std::vector<T>& items) {
    std::map<Key, std::vector<T>> out;
    for (const auto& it : items) out[{it.image_id, it.category}].push_back(it);
    return out;
}

// Original positions of the items in each group, parallel to group().
template <typename T>
std::map<Key, std::vector<size_t>> group_positions(const std::vector<T>& items) {
    std::map<Key, std::vector<size_t>> out;
    for (size_t i = 0; i < items.size(); ++i) out[{items[i].image_id, items[i].category}].push_back(i);
    return out;
}

// Per image: keep the top-scoring detections across classes.
std::vector<Detection> cap_per_image(const std::vector<Detection>& dets) {
    std::map<int, std::vector<size_t>> by_image;
    for (size_t i = 0; i < dets.size(); ++i) by_image[dets[i].image_id].push_back(i);
    std::vector<uint8_t> keep(dets.size(), 0);
    for (auto& [img, idx] : by_image) {
        std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
        for (size_t k = 0; k < idx.size() && k < size_t(kMaxDetsPerImage); ++k) keep[idx[k]] = 1;
    }
    std::vector<Detection> out;
    for (size_t i = 0; i < dets.size(); ++i)
        if (keep[i]) out.push_back(dets[i]);
    return out;
}

std::vector<int> categories_with_gt(const std::vector<GroundTruth>& gts) {
    std::vector<int> cats;
    for (const auto& g : gts)
        if (std::find(cats.begin(), cats.end(), g.category) == cats.end()) cats.push_back(g.category);
    std::sort(cats.begin(), cats.end());
    return cats;
}

template <typename T>
std::vector<T> of_category(const std::vector<T>& items, int category) {
    std::vector<T> out;
    for (const auto& it : items)
        if (it.category == category) out.push_back(it);
    return out;
}

}  // namespace

double pair_iou(const Detection& d, const GroundTruth& g, IouKind kind) {
    if (kind == IouKind::Box) return iou(d.box, g.box);
    if (!d.mask || !g.mask) throw std::invalid_argument("mask IoU requested but a mask is missing");
    return mask_iou(*d.mask, *g.mask);
}

Matching match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                          double iou_threshold, IouKind kind, const std::vector<bool>* gt_ignore) {
    Matching m;
    m.order = score_order(dets);
    m.det_gt.assign(dets.size(), -1);
    m.det_iou.assign(dets.size(), 0.0);
    m.gt_det.assign(gts.size(), -1);
    auto ignored = [&](size_t g) { return gt_ignore != nullptr && (*gt_ignore)[g]; };
    for (size_t d : m.order) {
        const double thr = std::min(iou_threshold, 1.0 - 1e-10);
        int best = -1;
        double best_iou = 0.0;
        bool best_ignored = false;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (m.gt_det[g] >= 0) continue;
            const double v = pair_iou(dets[d], gts[g], kind);
            if (v < thr) continue;
            const bool ig = ignored(g);
            // a regular ground truth always beats an ignored one
            const bool take = best < 0 || (best_ignored && !ig) || (best_ignored == ig && v > best_iou);
            if (!take) continue;
            best = int(g);
            best_iou = v;
            best_ignored = ig;
        }
        if (best < 0) continue;
        m.det_gt[d] = best;
        m.det_iou[d] = best_iou;
        m.gt_det[size_t(best)] = int(d);
    }
    return m;
}

double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind,
                         double iou_threshold, double area_lo, double area_hi) {
    const auto gt_groups = group(gts);
    const auto det_groups = group(dets);
    struct Scored {
        double score;
        size_t seq;
        bool tp;
    };
    const auto det_pos = group_positions(dets);
    std::vector<Scored> scored;
    int64_t npig = 0;
    std::vector<Key> keys;
    for (const auto& [k, v] : gt_groups) keys.push_back(k);
    for (const auto& [k, v] : det_groups)
        if (!gt_groups.count(k)) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (const auto& key : keys) {
        static const std::vector<GroundTruth> kNoGt;
        static const std::vector<Detection> kNoDet;
        const auto git = gt_groups.find(key);
        const auto dit = det_groups.find(key);
        const auto& g = git == gt_groups.end() ? kNoGt : git->second;
        const auto& d = dit == det_groups.end() ? kNoDet : dit->second;
        std::vector<bool> ig(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
            const double a = g[i].area();
            ig[i] = a < area_lo || a > area_hi;
            if (!ig[i]) ++npig;
        }
        const auto m = match_detections(d, g, iou_threshold, kind, &ig);
        for (size_t di : m.order) {
            bool det_ignored;
            if (m.det_gt[di] >= 0) {
                det_ignored = ig[size_t(m.det_gt[di])];
            } else {
                const double a = det_area(d[di], kind);
                det_ignored = a < area_lo || a > area_hi;
            }
            if (!det_ignored) scored.push_back({d[di].score, det_pos.at(key)[di], m.det_gt[di] >= 0});
        }
    }
    if (npig == 0) return -1.0;
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        return a.score != b.score ? a.score > b.score : a.seq < b.seq;
    });
    std::vector<double> recall, precision;
    int64_t tp = 0, fp = 0;
    for (const auto& s : scored) {
        (s.tp ? tp : fp) += 1;
        recall.push_back(double(tp) / double(npig));
        precision.push_back(double(tp) / double(tp + fp));
    }
    for (size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[size_t(it - recall.begin())];
    }
    return sum / 101.0;
}

ApSummary coco_ap(const std::vector<Detection>& dets_in, const std::vector<GroundTruth>& gts, IouKind kind) {
    const auto dets = cap_per_image(dets_in);
    const std::array<std::pair<double, double>, 4> ranges = {
        {{0.0, 1e10}, {0.0, kSmallArea}, {kSmallArea, kLargeArea}, {kLargeArea, 1e10}}};
    std::array<double, 4> result{};
    for (size_t r = 0; r < ranges.size(); ++r) {
        double sum = 0.0;
        int count = 0;
        for (int c = 0; c < kNumClasses; ++c) {
            const auto d = of_category(dets, c);
            const auto g = of_category(gts, c);
            for (int t = 0; t < 10; ++t) {
                const double thr = 0.5 + 0.05 * t;
                const double ap = average_precision(d, g, kind, thr, ranges[r].first, ranges[r].second);
                if (ap < 0) continue;
                sum += ap;
                ++count;
            }
        }
        result[r] = count == 0 ? 0.0 : 100.0 * sum / count;
    }
    return {result[0], result[1], result[2], result[3]};
}

namespace {

struct PooledMatch {
    std::vector<double> scores;  // descending
    std::vector<double> ious;    // matched IoU or -1 for FP
    int64_t num_gt = 0;
};

PooledMatch pooled_match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind,
                         double tau) {
    PooledMatch out;
    out.num_gt = int64_t(gts.size());
    const auto gt_groups = group(gts);
    const auto det_groups = group(dets);
    struct Item {
        double score;
        size_t seq;
        double iou;
    };
    std::vector<Item> items;
    size_t seq = 0;
    for (const auto& [key, d] : det_groups) {
        static const std::vector<GroundTruth> kNoGt;
        const auto git = gt_groups.find(key);
        const auto& g = git == gt_groups.end() ? kNoGt : git->second;
        const auto m = match_detections(d, g, tau, kind);
        for (size_t di : m.order) items.push_back({d[di].score, seq++, m.det_gt[di] >= 0 ? m.det_iou[di] : -1.0});
    }
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
    for (const auto& it : items) {
        out.scores.push_back(it.score);
        out.ious.push_back(it.iou);
    }
    return out;
}

LrpResult lrp_from_counts(double loc_sum, int64_t tp, int64_t fp, int64_t num_gt, double tau) {
    LrpResult r;
    const int64_t fn = num_gt - tp;
    r.tp_count = int(tp);
    r.fp_count = int(fp);
    r.fn_count = int(fn);
    const int64_t denom = tp + fp + fn;
    r.lrp = denom == 0 ? 0.0 : 100.0 * (loc_sum / (1.0 - tau) + double(fp + fn)) / double(denom);
    r.loc = tp == 0 ? 100.0 : 100.0 * loc_sum / (1.0 - tau) / double(tp);
    r.fp = tp + fp == 0 ? 0.0 : 100.0 * double(fp) / double(tp + fp);
    r.fn = num_gt == 0 ? 0.0 : 100.0 * double(fn) / double(num_gt);
    return r;
}

}  // namespace

LrpResult lrp_at(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind,
                 double tau_iou) {
    const auto pm = pooled_match(dets, gts, kind, tau_iou);
    double loc = 0.0;
    int64_t tp = 0, fp = 0;
    for (double v : pm.ious) {
        if (v >= 0) {
            ++tp;
            loc += 1.0 - v;
        } else {
            ++fp;
        }
    }
    return lrp_from_counts(loc, tp, fp, pm.num_gt, tau_iou);
}

std::optional<OlrpResult> class_optimal_lrp(const std::vector<Detection>& dets_in,
                                            const std::vector<GroundTruth>& gts_in, int category, IouKind kind,
                                            double tau_iou) {
    const auto gts = of_category(gts_in, category);
    if (gts.empty()) return std::nullopt;
    const auto dets = of_category(cap_per_image(dets_in), category);
    const auto pm = pooled_match(dets, gts, kind, tau_iou);
    if (pm.scores.empty()) {
        const auto r = lrp_from_counts(0.0, 0, 0, pm.num_gt, tau_iou);
        return OlrpResult{r.lrp, r.loc, r.fp, r.fn};
    }
    double loc = 0.0;
    int64_t tp = 0, fp = 0;
    std::optional<LrpResult> best;
    for (size_t i = 0; i < pm.scores.size(); ++i) {
        if (pm.ious[i] >= 0) {
            ++tp;
            loc += 1.0 - pm.ious[i];
        } else {
            ++fp;
        }
        // only evaluate at the end of a run of equal scores
        if (i + 1 < pm.scores.size() && pm.scores[i + 1] == pm.scores[i]) continue;
        const auto r = lrp_from_counts(loc, tp, fp, pm.num_gt, tau_iou);
        if (!best || r.lrp < best->lrp) best = r;
    }
    return OlrpResult{best->lrp, best->loc, best->fp, best->fn};
}

OlrpResult optimal_lrp(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind,
                       double tau_iou) {
    OlrpResult sum;
    int n = 0;
    for (int c : categories_with_gt(gts)) {
        const auto r = class_optimal_lrp(dets, gts, c, kind, tau_iou);
        if (!r) continue;
        sum.olrp += r->olrp;
        sum.loc += r->loc;
        sum.fp += r->fp;
        sum.fn += r->fn;
        ++n;
    }
    if (n == 0) return sum;
    return {sum.olrp / n, sum.loc / n, sum.fp / n, sum.fn / n};
}

namespace {

MetricBlock block(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, IouKind kind) {
    const auto ap = coco_ap(dets, gts, kind);
    const auto lrp = optimal_lrp(dets, gts, kind);
    return {ap.ap, ap.ap_s, ap.ap_m, ap.ap_l, lrp.olrp, lrp.loc, lrp.fp, lrp.fn};
}

nlohmann::json block_json(const MetricBlock& b) {
    return {{"AP", report_round(b.ap)},         {"AP_S", report_round(b.ap_s)},
            {"AP_M", report_round(b.ap_m)},     {"AP_L", report_round(b.ap_l)},
            {"oLRP", report_round(b.olrp)},     {"oLRP_Loc", report_round(b.olrp_loc)},
            {"oLRP_FP", report_round(b.olrp_fp)}, {"oLRP_FN", report_round(b.olrp_fn)}};
}

}  // namespace

EvalReport evaluate_predictions(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts) {
    EvalReport r;
    r.detection = block(dets, gts, IouKind::Box);
    r.segmentation = block(dets, gts, IouKind::Mask);
    for (int c = 0; c < kNumClasses; ++c) {
        const auto g = of_category(gts, c);
        if (g.empty()) continue;
        const auto d = of_category(dets, c);
        const std::string name = label_name(static_cast<FaceLabel>(c));
        r.per_class_detection[name] = block(d, g, IouKind::Box);
        r.per_class_segmentation[name] = block(d, g, IouKind::Mask);
    }
    return r;
}

double report_round(double v) { return std::round(v * 10.0) / 10.0; }

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [name, b] : report.per_class_detection) per_class[name]["detection"] = block_json(b);
    for (const auto& [name, b] : report.per_class_segmentation) per_class[name]["segmentation"] = block_json(b);
    return {{"schema_version", kReportSchemaVersion},
            {"detection", block_json(report.detection)},
            {"segmentation", block_json(report.segmentation)},
            {"per_class", per_class}};
}

nlohmann::json detections_to_json(const std::vector<Detection>& dets) {
    auto out = nlohmann::json::array();
    for (const auto& d : dets) {
        nlohmann::json j = {{"image_id", d.image_id},
                            {"category_id", d.category},
                            {"bbox", {d.box.x1, d.box.y1, d.box.width(), d.box.height()}},
                            {"score", d.score}};
        if (d.mask) {
            const auto rle = rle_encode(*d.mask);
            j["segmentation"] = {{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
        }
        out.push_back(std::move(j));
    }
    return out;
}

std::vector<Detection> detections_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::runtime_error("predictions: expected a JSON array");
    std::vector<Detection> out;
    for (size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        try {
            Detection d;
            d.image_id = e.at("image_id").get<int>();
            d.category = e.at("category_id").get<int>();
            if (d.category < 0 || d.category >= kNumClasses)
                throw std::runtime_error("unknown category id " + std::to_string(d.category));
            d.score = e.at("score").get<double>();
            const auto b = e.at("bbox").get<std::vector<double>>();
            if (b.size() != 4) throw std::runtime_error("bbox must have 4 numbers");
            d.box = Box{b[0], b[1], b[0] + b[2], b[1] + b[3]};
            if (e.contains("segmentation")) {
                const auto& s = e.at("segmentation");
                const auto size = s.at("size").get<std::vector<int>>();
                if (size.size() != 2) throw std::runtime_error("segmentation.size must be [h, w]");
                d.mask = rle_decode(Rle{size[0], size[1], s.at("counts").get<std::vector<uint32_t>>()});
            }
            out.push_back(std::move(d));
        } catch (const std::exception& ex) {
            throw std::runtime_error("predictions[" + std::to_string(i) + "]: " + ex.what());
        }
    }
    return out;
}

}  // namespace comics
