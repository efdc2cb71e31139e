#include "comics/coarse_contrast.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace comics {

void momentum_update(torch::nn::Module& key, const torch::nn::Module& query, double beta) {
    torch::NoGradGuard no_grad;
    auto kp = key.named_parameters(true);
    const auto qp = query.named_parameters(true);
    if (kp.size() != qp.size()) throw std::logic_error("momentum_update: parameter count mismatch");
    for (size_t i = 0; i < kp.size(); ++i) {
        const auto& k = kp[i];
        const auto& q = qp[i];
        if (k.key() != q.key() || !k.value().sizes().equals(q.value().sizes()))
            throw std::logic_error("momentum_update: structure mismatch at " + k.key());
        k.value().mul_(beta).add_(q.value(), 1.0 - beta);
    }
}

void update_prototype(Prototype& proto, const torch::Tensor& feature) {
    const auto f = feature.detach().to(torch::kFloat64).flatten();
    if (!torch::isfinite(f).all().item<bool>()) throw std::invalid_argument("update_prototype: non-finite feature");
    if (!proto.initialized) {
        proto.vector = f.clone();
        proto.initialized = true;
        return;
    }
    if (proto.vector.numel() != f.numel()) throw std::invalid_argument("update_prototype: dimension mismatch");
    proto.vector = proto.alpha * proto.vector + (1.0 - proto.alpha) * f;
}

double cosine_sim(const torch::Tensor& a, const torch::Tensor& b) {
    const auto x = a.detach().to(torch::kFloat64).flatten();
    const auto y = b.detach().to(torch::kFloat64).flatten();
    const double nx = x.norm().item<double>(), ny = y.norm().item<double>();
    if (nx == 0.0 || ny == 0.0) throw std::invalid_argument("cosine_sim: zero vector");
    return (x.dot(y).item<double>()) / (nx * ny);
}

// ---------------------------------------------------------------------------

ContrastQueue::ContrastQueue(int64_t capacity, int64_t dim)
    : capacity_(capacity), dim_(dim), storage_(torch::zeros({capacity, dim}, torch::kFloat32)) {
    if (capacity <= 0) throw std::invalid_argument("queue capacity must be positive");
}

void ContrastQueue::push(const torch::Tensor& feature) {
    torch::NoGradGuard no_grad;
    const auto f = feature.detach().to(torch::kFloat32).flatten();
    if (f.numel() != dim_) throw std::invalid_argument("ContrastQueue::push: dimension mismatch");
    const double n = f.norm().item<double>();
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("ContrastQueue::push: zero or non-finite feature");
    storage_[head_].copy_(f / n);
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
    ++pushed_;
}

torch::Tensor ContrastQueue::entries() const {
    if (size_ < capacity_) return storage_.narrow(0, 0, size_);
    return torch::cat({storage_.narrow(0, head_, capacity_ - head_), storage_.narrow(0, 0, head_)});
}

void ContrastQueue::save(torch::serialize::OutputArchive& ar, const std::string& prefix) const {
    ar.write(prefix + ".storage", storage_);
    ar.write(prefix + ".state", torch::tensor({head_, size_, pushed_}, torch::kInt64));
}

void ContrastQueue::load(torch::serialize::InputArchive& ar, const std::string& prefix) {
    torch::Tensor storage, state;
    ar.read(prefix + ".storage", storage);
    ar.read(prefix + ".state", state);
    if (!storage.sizes().equals(storage_.sizes())) throw std::runtime_error("queue " + prefix + ": shape mismatch");
    storage_ = storage.clone();
    head_ = state[0].item<int64_t>();
    size_ = state[1].item<int64_t>();
    pushed_ = state[2].item<int64_t>();
}

std::vector<int64_t> enqueue_topk_dissimilar(ContrastQueue& queue, const Prototype& proto,
                                             const torch::Tensor& features, int k) {
    if (!proto.initialized) throw std::logic_error("enqueue_topk_dissimilar: prototype not initialised");
    const int64_t m = features.size(0);
    std::vector<std::pair<double, int64_t>> sims;
    sims.reserve(size_t(m));
    for (int64_t i = 0; i < m; ++i) sims.emplace_back(cosine_sim(features[i], proto.vector), i);
    std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<int64_t> pushed;
    for (int64_t i = 0; i < std::min<int64_t>(m, k); ++i) {
        queue.push(features[sims[size_t(i)].second]);
        pushed.push_back(sims[size_t(i)].second);
    }
    return pushed;
}

std::vector<ProposalLabel> label_proposals(const std::vector<Box>& boxes, const Annotations& faces,
                                           double iou_threshold) {
    std::vector<ProposalLabel> out(boxes.size());
    for (size_t i = 0; i < boxes.size(); ++i) {
        double best = -1.0;
        int best_g = -1;
        for (size_t g = 0; g < faces.size(); ++g) {
            const double v = iou(boxes[i], faces[g].box);
            if (v > best) {
                best = v;
                best_g = int(g);
            }
        }
        if (best_g >= 0 && best > iou_threshold)
            out[i] = ProposalLabel{class_index(faces[size_t(best_g)].label), best_g, best};
    }
    return out;
}

// ---------------------------------------------------------------------------

torch::Tensor flatnce_from_similarities(const torch::Tensor& pos_sim, const torch::Tensor& neg_sim, double tau) {
    if (tau <= 0) throw std::invalid_argument("flatnce: tau must be positive");
    const auto logits = (neg_sim - pos_sim.unsqueeze(1)) / tau;
    const auto z = torch::exp(logits).sum(1);
    return (z / z.detach()).mean();
}

LayerLoss flatnce_layer_loss(const torch::Tensor& queries, const torch::Tensor& positives,
                             const ContrastQueue& negatives, double tau, int64_t min_fill) {
    LayerLoss out;
    if (queries.size(0) == 0 || negatives.size() < std::max<int64_t>(1, min_fill)) {
        out.value = torch::zeros({}, queries.options());
        return out;
    }
    const auto q = torch::nn::functional::normalize(queries, torch::nn::functional::NormalizeFuncOptions().dim(1));
    const auto k = torch::nn::functional::normalize(positives, torch::nn::functional::NormalizeFuncOptions().dim(1));
    const auto neg = negatives.entries().to(q.scalar_type());
    out.value = flatnce_from_similarities((q * k).sum(1), q.matmul(neg.t()), tau);
    out.skipped = false;
    return out;
}

torch::Tensor multilayer_loss(const std::map<int, LayerLoss>& per_layer,
                              const std::array<double, kNumLevels>& weights) {
    torch::Tensor total;
    for (const auto& [level, l] : per_layer) {
        if (level < kMinLevel || level > kMaxLevel) throw std::invalid_argument("multilayer_loss: bad level");
        if (l.skipped) continue;
        const auto term = weights[size_t(level - kMinLevel)] * l.value;
        total = total.defined() ? total + term : term;
    }
    return total.defined() ? total : torch::zeros({}, torch::kFloat32);
}

std::vector<LabeledFeature> labeled_features(const std::vector<Proposal>& proposals, const Annotations& faces,
                                             double iou_threshold) {
    std::vector<Box> boxes;
    boxes.reserve(proposals.size());
    for (const auto& p : proposals) boxes.push_back(p.box);
    const auto labels = label_proposals(boxes, faces, iou_threshold);
    std::vector<LabeledFeature> out;
    for (size_t i = 0; i < proposals.size(); ++i) {
        if (labels[i].label < 0) continue;
        const auto& face = faces[size_t(labels[i].gt_index)];
        out.push_back(LabeledFeature{proposals[i].level, face.label, proposals[i].image,
                                     face.source_index >= 0 ? face.source_index : labels[i].gt_index,
                                     labels[i].iou, proposals[i].feature});
    }
    return out;
}

bool CoarseLoss::skipped() const {
    return std::all_of(per_layer.begin(), per_layer.end(), [](const auto& kv) { return kv.second.skipped; });
}

// ---------------------------------------------------------------------------

CoarseContrast::CoarseContrast(const CoarseConfig& cfg, int64_t dim) : cfg_(cfg), dim_(dim) {
    if (cfg.tau <= 0) throw std::invalid_argument("coarse.tau must be positive");
    for (size_t i = 0; i < size_t(kNumLevels * kNumClasses); ++i) {
        queues_.emplace_back(cfg.queue_capacity, dim);
        prototypes_.push_back(Prototype{torch::Tensor(), cfg.alpha, false});
    }
}

size_t CoarseContrast::slot(int level, FaceLabel label) {
    if (level < kMinLevel || level > kMaxLevel) throw std::out_of_range("level outside 3..7");
    return size_t((level - kMinLevel) * kNumClasses + class_index(label));
}

ContrastQueue& CoarseContrast::queue(int level, FaceLabel label) { return queues_[slot(level, label)]; }
const ContrastQueue& CoarseContrast::queue(int level, FaceLabel label) const { return queues_[slot(level, label)]; }
Prototype& CoarseContrast::prototype(int level, FaceLabel label) { return prototypes_[slot(level, label)]; }
const Prototype& CoarseContrast::prototype(int level, FaceLabel label) const {
    return prototypes_[slot(level, label)];
}
int64_t CoarseContrast::min_fill() const { return cfg_.min_queue_fill; }

CoarseLoss CoarseContrast::loss(const std::vector<LabeledFeature>& queries,
                                const std::vector<LabeledFeature>& keys) const {
    CoarseLoss out;
    std::map<int, std::vector<torch::Tensor>> q_by_level[kNumClasses], k_by_level[kNumClasses];
    for (const auto& q : queries) {
        ++out.queries;
        const LabeledFeature* best = nullptr;
        for (const auto& k : keys) {
            if (k.level != q.level || k.image != q.image || k.face != q.face || k.label != q.label) continue;
            if (best == nullptr || k.iou > best->iou) best = &k;
        }
        torch::Tensor positive;
        if (best != nullptr) {
            positive = best->feature.detach();
            ++out.paired;
        } else if (const auto& proto = prototype(q.level, q.label); proto.initialized) {
            positive = proto.vector.to(q.feature.scalar_type());
            ++out.fallback;
        } else {
            ++out.dropped;
            continue;
        }
        q_by_level[class_index(q.label)][q.level].push_back(q.feature);
        k_by_level[class_index(q.label)][q.level].push_back(positive);
    }

    for (int level : kLevels) {
        LayerLoss layer;
        std::vector<torch::Tensor> parts;
        std::vector<int64_t> counts;
        for (int c = 0; c < kNumClasses; ++c) {
            const auto it = q_by_level[c].find(level);
            if (it == q_by_level[c].end()) continue;
            const FaceLabel other = c == class_index(FaceLabel::Real) ? FaceLabel::Fake : FaceLabel::Real;
            const auto l = flatnce_layer_loss(torch::stack(it->second), torch::stack(k_by_level[c].at(level)),
                                              queue(level, other), cfg_.tau, cfg_.min_queue_fill);
            if (l.skipped) continue;
            parts.push_back(l.value * double(it->second.size()));
            counts.push_back(int64_t(it->second.size()));
        }
        if (!parts.empty()) {
            const double n = double(std::accumulate(counts.begin(), counts.end(), int64_t{0}));
            layer.value = torch::stack(parts).sum() / n;
            layer.skipped = false;
        } else {
            layer.value = torch::zeros({}, torch::kFloat32);
        }
        out.per_layer[level] = layer;
    }
    out.value = multilayer_loss(out.per_layer, cfg_.layer_weights);
    return out;
}

void CoarseContrast::update(const std::vector<LabeledFeature>& keys) {
    torch::NoGradGuard no_grad;
    std::map<size_t, std::vector<torch::Tensor>> groups;
    for (const auto& k : keys) {
        const auto f = k.feature.detach();
        update_prototype(prototype(k.level, k.label), f);
        groups[slot(k.level, k.label)].push_back(f);
    }
    for (const auto& [s, feats] : groups)
        enqueue_topk_dissimilar(queues_[s], prototypes_[s], torch::stack(feats), cfg_.top_k);
}

void CoarseContrast::save(torch::serialize::OutputArchive& ar) const {
    for (size_t s = 0; s < queues_.size(); ++s) {
        const std::string prefix = "coarse." + std::to_string(s);
        queues_[s].save(ar, prefix + ".queue");
        const auto& p = prototypes_[s];
        ar.write(prefix + ".proto_init", torch::tensor(int64_t(p.initialized)));
        ar.write(prefix + ".proto", p.initialized ? p.vector : torch::zeros({dim_}, torch::kFloat64));
    }
}

void CoarseContrast::load(torch::serialize::InputArchive& ar) {
    for (size_t s = 0; s < queues_.size(); ++s) {
        const std::string prefix = "coarse." + std::to_string(s);
        queues_[s].load(ar, prefix + ".queue");
        torch::Tensor init, vec;
        ar.read(prefix + ".proto_init", init);
        ar.read(prefix + ".proto", vec);
        prototypes_[s].initialized = init.item<int64_t>() != 0;
        prototypes_[s].vector = prototypes_[s].initialized ? vec.clone() : torch::Tensor();
    }
}

}  // namespace comics
