#include "comics/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>

#include "comics/augment.hpp"
#include "comics/checkpoint.hpp"
#include "comics/fine_contrast.hpp"

namespace comics {

namespace {

double scalar(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

bool finite(const torch::Tensor& t) { return !t.defined() || torch::isfinite(t).all().item<bool>(); }

torch::Tensor zero_like_loss(const torch::Tensor& ref) {
    return torch::zeros({}, ref.defined() ? ref.options() : torch::TensorOptions(torch::kFloat32));
}

void copy_module_state(torch::nn::Module& dst, const torch::nn::Module& src) {
    torch::NoGradGuard no_grad;
    auto dp = dst.named_parameters(true);
    const auto sp = src.named_parameters(true);
    for (const auto& p : sp) dp[p.key()].copy_(p.value());
    auto db = dst.named_buffers(true);
    const auto sb = src.named_buffers(true);
    for (const auto& b : sb) db[b.key()].copy_(b.value());
}

void check_hash(const CheckpointHeader& h, const TrainConfig& cfg, const std::filesystem::path& path) {
    const uint64_t expected = config_hash(cfg);
    if (h.config_hash != expected) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "checkpoint/config hash mismatch (checkpoint %016llx, config %016llx)",
                      static_cast<unsigned long long>(h.config_hash), static_cast<unsigned long long>(expected));
        throw std::runtime_error(path.string() + ": " + buf);
    }
}

}  // namespace

LossBundle total_loss(const LossBundle& parts, const TrainConfig& cfg) {
    if (!parts.l_detect.defined()) throw std::invalid_argument("total_loss: detection loss missing");
    if (!finite(parts.l_detect)) throw NonFiniteLoss("l_detect");
    LossBundle out = parts;
    auto total = parts.l_detect;
    auto add = [&](bool enabled, torch::Tensor& term, double lambda, const char* name) {
        if (!enabled || !term.defined()) {
            term = zero_like_loss(parts.l_detect);
            return;
        }
        if (!finite(term)) throw NonFiniteLoss(name);
        total = total + lambda * term;
    };
    add(cfg.coarse.enabled, out.l_cl, cfg.lambda1, "l_cl");
    add(cfg.fine.enabled, out.l_fl_intra, cfg.lambda2, "l_fl_intra");
    add(cfg.fine.enabled, out.l_fl_inter, cfg.lambda3, "l_fl_inter");
    if (!cfg.coarse.enabled) out.cl_skipped = true;
    if (!cfg.fine.enabled) out.intra_skipped = out.inter_skipped = true;
    if (!finite(total)) throw NonFiniteLoss("total");
    out.total = total;
    return out;
}

double learning_rate(const TrainConfig& cfg, int64_t step, int64_t steps_per_epoch) {
    double lr = cfg.base_lr;
    const double epoch = double(step / std::max<int64_t>(1, steps_per_epoch));
    if (epoch >= cfg.epochs * 2.0 / 3.0) lr *= 0.1;
    if (epoch >= cfg.epochs * 5.0 / 6.0) lr *= 0.1;
    if (cfg.warmup_iters > 0 && step < cfg.warmup_iters)
        lr *= 1.0 / 3.0 + (2.0 / 3.0) * double(step) / double(cfg.warmup_iters);
    return lr;
}

nlohmann::json StepLog::to_json() const {
    return {{"step", step},
            {"epoch", epoch},
            {"lr", lr},
            {"l_detect", l_detect},
            {"l_cl", l_cl},
            {"l_fl_intra", l_fl_intra},
            {"l_fl_inter", l_fl_inter},
            {"total", total},
            {"skipped", {{"cl", cl_skipped}, {"intra", intra_skipped}, {"inter", inter_skipped}}},
            {"queue_fill", queue_fill},
            {"coarse_queries", coarse_queries},
            {"coarse_fallback", coarse_fallback},
            {"fine_real", fine_real},
            {"fine_fake", fine_fake},
            {"fine_skipped_masks", fine_skipped_masks}};
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const Dataset& train_set)
    : cfg_(cfg), data_(train_set), coarse_(cfg.coarse, cfg.model.embed_dim) {
    if (train_set.size() == 0) throw std::invalid_argument("training set is empty");
    torch::manual_seed(cfg.seed);
    model_ = Detector(cfg);
    key_encoder_ = Encoder(cfg.model, cfg.fea);
    copy_module_state(*key_encoder_, *model_->encoder);
    for (auto& p : key_encoder_->parameters()) p.set_requires_grad(false);
    optimizer_ = std::make_unique<torch::optim::SGD>(
        model_->parameters(),
        torch::optim::SGDOptions(cfg.base_lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
    steps_per_epoch_ = std::max<int64_t>(1, int64_t(train_set.size()) / std::max(1, cfg.batch_size));
}

int64_t Trainer::total_steps() const {
    const int64_t full = int64_t(cfg_.epochs) * steps_per_epoch_;
    return cfg_.max_steps > 0 ? std::min<int64_t>(full, cfg_.max_steps) : full;
}

std::vector<size_t> Trainer::batch_indices(int64_t step) const {
    const size_t n = data_.size();
    const int64_t epoch = step / steps_per_epoch_;
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), size_t{0});
    Rng rng(derive_seed(cfg_.seed, uint64_t(epoch), 0x5eedULL));
    for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[std::uniform_int_distribution<size_t>(0, i - 1)(rng)]);
    const size_t b = std::min<size_t>(n, size_t(std::max(1, cfg_.batch_size)));
    const size_t start = size_t(step % steps_per_epoch_) * b;
    return {perm.begin() + long(start), perm.begin() + long(std::min(n, start + b))};
}

StepLog Trainer::step() {
    StepLog log;
    log.step = step_;
    log.epoch = epoch();
    log.lr = learning_rate(cfg_, step_, steps_per_epoch_);
    for (auto& group : optimizer_->param_groups())
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(log.lr);

    // Views.
    const auto idx = batch_indices(step_);
    std::vector<torch::Tensor> q_imgs, k_imgs;
    std::vector<Annotations> q_faces, k_faces;
    for (size_t i : idx) {
        const auto& item = data_.images[i];
        const auto img = item.image();
        Annotations faces = item.faces;
        for (size_t f = 0; f < faces.size(); ++f) faces[f].source_index = int(f);
        if (cfg_.augment.enabled) {
            Rng rq(derive_seed(cfg_.seed, uint64_t(step_), uint64_t(i), 1));
            auto qv = make_query_view(img, faces, cfg_.augment, rq);
            Rng rk(derive_seed(cfg_.seed, uint64_t(step_), uint64_t(i), 2));
            auto kv = make_key_view(img, cfg_.augment, rk);
            if (cfg_.augment.debug_log)
                std::cerr << nlohmann::json{{"step", step_}, {"image", item.id}, {"key_ops", kv.log},
                                            {"query", {{"rotation", qv.transform.angle_degrees},
                                                       {"crop", {qv.transform.crop.x1, qv.transform.crop.y1,
                                                                 qv.transform.crop.x2, qv.transform.crop.y2}},
                                                       {"flip", qv.transform.flip}}}}
                                 .dump()
                          << "\n";
            if (qv.faces.empty()) {
                q_imgs.push_back(img);
                q_faces.push_back(faces);
            } else {
                q_imgs.push_back(qv.image);
                q_faces.push_back(std::move(qv.faces));
            }
            k_imgs.push_back(kv.image);
        } else {
            q_imgs.push_back(img);
            q_faces.push_back(faces);
            k_imgs.push_back(img);
        }
        k_faces.push_back(std::move(faces));
    }
    const auto q_batch = torch::stack(q_imgs);
    const int64_t H = q_batch.size(2), W = q_batch.size(3);

    model_->train();
    optimizer_->zero_grad();
    const auto fwd = model_->forward(q_batch);
    const auto targets = build_dense_targets(fwd.encoder.pyramid, q_faces, cfg_.model.center_radius);

    const auto props = model_->generate_proposals(fwd.encoder, fwd.heads, ProposalMode::Training);
    std::vector<std::vector<Proposal>> query_props(props.size());
    for (size_t n = 0; n < props.size(); ++n) {
        query_props[n] = props[n];
        auto gt = ground_truth_proposals(fwd.encoder, fwd.heads, int(n), q_faces[n]);
        query_props[n].insert(query_props[n].end(), gt.begin(), gt.end());
    }

    // Mask RoIs: each face's own box, then proposals matched to a face.
    std::vector<Proposal> roi_props;
    std::vector<const Mask*> roi_masks;
    std::vector<FaceLabel> roi_labels;
    for (size_t n = 0; n < props.size(); ++n) {
        int taken = 0;
        const int cap = std::max(1, cfg_.model.max_mask_rois_per_image);
        for (const auto& f : q_faces[n]) {
            if (taken >= cap || f.mask.empty()) continue;
            Proposal p;
            p.image = int(n);
            p.box = f.box;
            roi_props.push_back(p);
            roi_masks.push_back(&f.mask);
            roi_labels.push_back(f.label);
            ++taken;
        }
        std::vector<Box> boxes;
        for (const auto& p : props[n]) boxes.push_back(p.box);
        const auto labels = label_proposals(boxes, q_faces[n], cfg_.coarse.iou_threshold);
        for (size_t k = 0; k < props[n].size() && taken < cap; ++k) {
            if (labels[k].label < 0) continue;
            const auto& f = q_faces[n][size_t(labels[k].gt_index)];
            if (f.mask.empty()) continue;
            roi_props.push_back(props[n][k]);
            roi_masks.push_back(&f.mask);
            roi_labels.push_back(f.label);
            ++taken;
        }
    }
    const auto masks = model_->predict_masks(fwd.mask_features, roi_props, H, W);
    std::vector<const Mask*> kept_masks;
    std::vector<Box> kept_rois;
    for (const auto& pm : masks.masks) {
        kept_masks.push_back(roi_masks[pm.proposal_id]);
        kept_rois.push_back(pm.roi);
    }
    const auto mask_targets = roi_mask_targets(kept_masks, kept_rois, cfg_.model.mask_size);
    const MaskLossInput mask_in{masks.logits, mask_targets};
    const auto det = detection_loss(fwd.heads, targets, &mask_in);

    LossBundle parts;
    parts.l_detect = det.total;

    // Coarse-grained contrast.
    std::vector<LabeledFeature> keys;
    if (cfg_.coarse.enabled) {
        std::vector<LabeledFeature> queries;
        for (size_t n = 0; n < query_props.size(); ++n) {
            auto lf = labeled_features(query_props[n], q_faces[n], cfg_.coarse.iou_threshold);
            queries.insert(queries.end(), lf.begin(), lf.end());
        }
        {
            torch::NoGradGuard no_grad;
            key_encoder_->train();
            const auto kenc = key_encoder_->forward(torch::stack(k_imgs));
            const auto kheads = model_->head->forward(kenc.pyramid);
            auto kprops = model_->generate_proposals(kenc, kheads, ProposalMode::Training);
            for (size_t n = 0; n < kprops.size(); ++n) {
                auto gt = ground_truth_proposals(kenc, kheads, int(n), k_faces[n]);
                kprops[n].insert(kprops[n].end(), gt.begin(), gt.end());
                auto lf = labeled_features(kprops[n], k_faces[n], cfg_.coarse.iou_threshold);
                keys.insert(keys.end(), lf.begin(), lf.end());
            }
        }
        const auto cl = coarse_.loss(queries, keys);
        parts.l_cl = cl.value;
        parts.cl_skipped = cl.skipped();
        log.coarse_queries = cl.queries;
        log.coarse_fallback = cl.fallback;
    }

    // Fine-grained contrast on the query-view masks.
    if (cfg_.fine.enabled) {
        std::vector<MaskRegionSplit> splits;
        const bool warmup = log.epoch < cfg_.fine.warmup_epochs;
        for (size_t k = 0; k < masks.masks.size(); ++k) {
            const auto& pm = masks.masks[k];
            const FaceLabel label = roi_labels[pm.proposal_id];
            auto split = split_mask_regions(pm.feature_map, pm.mask_prob(), label, cfg_.fine, pm.proposal_id);
            if (!split && warmup) {
                const auto t = mask_targets[int64_t(k)].contiguous();
                std::vector<uint8_t> binary(size_t(t.numel()));
                const float* d = t.data_ptr<float>();
                for (size_t i = 0; i < binary.size(); ++i) binary[i] = d[i] >= 0.5f;
                split = split_mask_regions(pm.feature_map, binary, label, cfg_.fine, pm.proposal_id);
            }
            if (!split) {
                ++log.fine_skipped_masks;
                continue;
            }
            (label == FaceLabel::Real ? log.fine_real : log.fine_fake) += 1;
            splits.push_back(std::move(*split));
        }
        const auto intra = intra_face_loss(splits, cfg_.fine.tau);
        const auto inter = inter_face_loss(splits, cfg_.fine.tau, cfg_.fine.pair_cap,
                                           derive_seed(cfg_.seed, uint64_t(step_), 0xf1e7ULL));
        parts.l_fl_intra = intra.value;
        parts.intra_skipped = intra.skipped;
        parts.l_fl_inter = inter.value;
        parts.inter_skipped = inter.skipped;
    }

    const auto bundle = total_loss(parts, cfg_);
    bundle.total.backward();
    if (cfg_.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model_->parameters(), cfg_.grad_clip);
    optimizer_->step();
    momentum_update(*key_encoder_, *model_->encoder, cfg_.coarse.beta);
    if (cfg_.coarse.enabled) coarse_.update(keys);

    log.l_detect = scalar(bundle.l_detect);
    log.l_cl = scalar(bundle.l_cl);
    log.l_fl_intra = scalar(bundle.l_fl_intra);
    log.l_fl_inter = scalar(bundle.l_fl_inter);
    log.total = scalar(bundle.total);
    log.cl_skipped = bundle.cl_skipped;
    log.intra_skipped = bundle.intra_skipped;
    log.inter_skipped = bundle.inter_skipped;
    for (int level : kLevels)
        for (auto label : {FaceLabel::Real, FaceLabel::Fake}) log.queue_fill.push_back(coarse_.queue(level, label).size());
    ++step_;
    return log;
}

void Trainer::save(const std::filesystem::path& path) {
    torch::serialize::OutputArchive ar, m, k, o, c;
    model_->save(m);
    key_encoder_->save(k);
    optimizer_->save(o);
    coarse_.save(c);
    ar.write("model", m);
    ar.write("key_encoder", k);
    ar.write("optimizer", o);
    ar.write("coarse", c);
    write_checkpoint(path, CheckpointHeader{kCheckpointFormatVersion, config_hash(cfg_), step_}, ar);
}

void Trainer::load(const std::filesystem::path& path) {
    torch::serialize::InputArchive ar, m, k, o, c;
    const auto header = read_checkpoint(path, ar);
    check_hash(header, cfg_, path);
    ar.read("model", m);
    ar.read("key_encoder", k);
    ar.read("optimizer", o);
    ar.read("coarse", c);
    model_->load(m);
    key_encoder_->load(k);
    for (auto& p : key_encoder_->parameters()) p.set_requires_grad(false);
    optimizer_->load(o);
    coarse_.load(c);
    step_ = header.step;
}

// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const TrainOptions& options) {
    std::filesystem::create_directories(options.output_dir);
    Trainer trainer(cfg, train_set);
    if (options.resume) trainer.load(*options.resume);
    std::ofstream log(options.output_dir / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
    TrainResult result;
    const int64_t total = trainer.total_steps();
    while (trainer.global_step() < total) {
        StepLog row;
        try {
            row = trainer.step();
        } catch (const NonFiniteLoss& e) {
            result.halted = true;
            result.halt_reason = e.what();
            log << nlohmann::json{{"step", trainer.global_step()}, {"halt", e.what()}}.dump() << "\n";
            std::cerr << "training halted at step " << trainer.global_step() << ": " << e.what() << "\n";
            break;
        }
        log << row.to_json().dump() << "\n";
        log.flush();
        if (options.on_step) options.on_step(row);
        const int64_t s = trainer.global_step();
        if (cfg.checkpoint_each_epoch && s % trainer.steps_per_epoch() == 0) {
            const auto p = options.output_dir / ("epoch_" + std::to_string(s / trainer.steps_per_epoch()) + ".ckpt");
            trainer.save(p);
            std::filesystem::copy_file(p, options.output_dir / "last.ckpt",
                                       std::filesystem::copy_options::overwrite_existing);
        }
    }
    result.steps = trainer.global_step();
    if (!result.halted) {
        result.final_checkpoint = options.output_dir / "final.ckpt";
        trainer.save(result.final_checkpoint);
    } else if (std::filesystem::exists(options.output_dir / "last.ckpt")) {
        result.final_checkpoint = options.output_dir / "last.ckpt";
    }
    return result;
}

std::vector<Detection> predict_dataset(Detector& model, const Dataset& ds, int batch_size) {
    model->eval();
    std::vector<Detection> out;
    for (size_t start = 0; start < ds.size(); start += size_t(batch_size)) {
        std::vector<size_t> idx;
        for (size_t i = start; i < std::min(ds.size(), start + size_t(batch_size)); ++i) idx.push_back(i);
        const auto preds = model->detect(batch_images(ds, idx));
        for (size_t b = 0; b < idx.size(); ++b)
            for (const auto& p : preds[b])
                out.push_back(Detection{ds.images[idx[b]].id, class_index(p.label), p.score, p.box, p.mask});
    }
    return out;
}

std::vector<GroundTruth> ground_truth_of(const Dataset& ds) {
    std::vector<GroundTruth> out;
    for (const auto& im : ds.images)
        for (const auto& f : im.faces)
            out.push_back(GroundTruth{im.id, class_index(f.label), f.box,
                                      f.mask.empty() ? std::optional<Mask>() : std::optional<Mask>(f.mask)});
    return out;
}

Detector load_detector(const std::filesystem::path& checkpoint, const TrainConfig& cfg) {
    check_hash(read_checkpoint_header(checkpoint), cfg, checkpoint);
    torch::serialize::InputArchive ar, m;
    read_checkpoint(checkpoint, ar);
    ar.read("model", m);
    Detector model(cfg);
    model->load(m);
    return model;
}

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const TrainConfig& cfg, const Dataset& ds) {
    auto model = load_detector(checkpoint, cfg);
    torch::NoGradGuard no_grad;
    return evaluate_predictions(predict_dataset(model, ds, cfg.batch_size), ground_truth_of(ds));
}

std::vector<TrainConfig> ablation_grid(const TrainConfig& base, std::vector<std::string>* names) {
    std::vector<TrainConfig> out;
    if (names) names->clear();
    for (int bits = 0; bits < 8; ++bits) {
        TrainConfig c = base;
        c.augment.enabled = bits & 1;
        c.fea.enabled = bits & 2;
        c.coarse.enabled = c.fine.enabled = bits & 4;
        out.push_back(c);
        if (names) {
            std::string n;
            if (bits & 1) n += "DA+";
            if (bits & 2) n += "FEA+";
            if (bits & 4) n += "Bi+";
            names->push_back(n.empty() ? "baseline" : n.substr(0, n.size() - 1));
        }
    }
    return out;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& train_set, const Dataset& test_set,
                                      const std::filesystem::path& output_dir) {
    std::vector<std::string> names;
    const auto grid = ablation_grid(base, &names);
    std::vector<AblationRow> rows;
    nlohmann::json summary = nlohmann::json::array();
    std::vector<ScatterPoint> seg, det;
    for (size_t i = 0; i < grid.size(); ++i) {
        const auto dir = output_dir / names[i];
        std::cerr << "ablation: " << names[i] << "\n";
        const auto result = train(grid[i], train_set, TrainOptions{dir, std::nullopt, nullptr});
        if (result.final_checkpoint.empty()) throw std::runtime_error("ablation run " + names[i] + " produced no checkpoint");
        AblationRow row{names[i], grid[i].augment.enabled, grid[i].fea.enabled, grid[i].coarse.enabled,
                        evaluate_checkpoint(result.final_checkpoint, grid[i], test_set)};
        std::ofstream(dir / "report.json") << report_to_json(row.report).dump(2);
        summary.push_back({{"name", row.name}, {"augment", row.augment}, {"fea", row.fea},
                           {"bi_grained", row.bi_grained}, {"report", report_to_json(row.report)}});
        seg.push_back({row.name, report_round(row.report.segmentation.ap), report_round(row.report.segmentation.olrp)});
        det.push_back({row.name, report_round(row.report.detection.ap), report_round(row.report.detection.olrp)});
        rows.push_back(std::move(row));
    }
    std::ofstream(output_dir / "ablation.json") << summary.dump(2);
    plot_scatter(seg, output_dir / "ablation_segmentation.png", "segmentation AP vs oLRP");
    plot_scatter(det, output_dir / "ablation_detection.png", "detection AP vs oLRP");
    return rows;
}

std::filesystem::path output_directory(const std::filesystem::path& fallback) {
    if (const char* env = std::getenv("COMICS_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
    return fallback;
}

}  // namespace comics
