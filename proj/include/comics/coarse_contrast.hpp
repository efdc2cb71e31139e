#pragma once

#include <map>
#include <vector>

#include <torch/torch.h>

#include "comics/config.hpp"
#include "comics/detector.hpp"
#include "comics/types.hpp"

namespace comics {

/// theta_k <- beta * theta_k + (1 - beta) * theta_q for every parameter.
/// Parameter names and shapes must agree; otherwise std::logic_error.
void momentum_update(torch::nn::Module& key, const torch::nn::Module& query, double beta);

/// Class centroid updated by exponential moving average. The first observed
/// feature initialises it.
struct Prototype {
    torch::Tensor vector;  // [D] float64
    double alpha = 0.9;
    bool initialized = false;
};

/// Throws std::invalid_argument for non-finite features.
void update_prototype(Prototype& proto, const torch::Tensor& feature);

/// (a/|a|).(b/|b|); throws std::invalid_argument when either vector is zero.
double cosine_sim(const torch::Tensor& a, const torch::Tensor& b);

/// FIFO of L2-normalised key features for one (level, class) pair.
class ContrastQueue {
public:
    ContrastQueue(int64_t capacity, int64_t dim);

    void push(const torch::Tensor& feature);
    int64_t size() const { return size_; }
    int64_t capacity() const { return capacity_; }
    int64_t dim() const { return dim_; }
    int64_t total_pushed() const { return pushed_; }
    /// Entries oldest first, [size, D].
    torch::Tensor entries() const;

    void save(torch::serialize::OutputArchive& ar, const std::string& prefix) const;
    void load(torch::serialize::InputArchive& ar, const std::string& prefix);

private:
    int64_t capacity_;
    int64_t dim_;
    torch::Tensor storage_;  // [capacity, D]
    int64_t head_ = 0;       // next write slot
    int64_t size_ = 0;
    int64_t pushed_ = 0;
};

/// Pushes the k rows of `features` least similar to the prototype, most
/// dissimilar first. Every row is pushed when there are at most k.
/// Returns the pushed row indices.
std::vector<int64_t> enqueue_topk_dissimilar(ContrastQueue& queue, const Prototype& proto,
                                             const torch::Tensor& features, int k);

struct ProposalLabel {
    int label = -1;     // class index, -1 when unlabeled
    int gt_index = -1;  // index into the ground-truth list
    double iou = 0.0;   // IoU with that face
};

/// A proposal is labeled with the class of the face it overlaps most when that
/// IoU exceeds `iou_threshold`. Equal IoUs go to the lower face index.
std::vector<ProposalLabel> label_proposals(const std::vector<Box>& boxes, const Annotations& faces,
                                           double iou_threshold);

/// Per-query FlatNCE value sum_h exp((s_h - s_+)/tau) / detach(same), averaged
/// over queries. `pos_sim` is [Q], `neg_sim` is [Q, M].
torch::Tensor flatnce_from_similarities(const torch::Tensor& pos_sim, const torch::Tensor& neg_sim, double tau);

struct LayerLoss {
    torch::Tensor value;
    bool skipped = true;
};

/// Queries [Q,D] with their positives [Q,D] against a negative queue. Skipped
/// (zero value) when there are no queries or the queue holds fewer than
/// `min_fill` entries.
LayerLoss flatnce_layer_loss(const torch::Tensor& queries, const torch::Tensor& positives,
                             const ContrastQueue& negatives, double tau, int64_t min_fill);

/// sum_i w_i * L_i over the supplied levels; skipped levels contribute 0.
torch::Tensor multilayer_loss(const std::map<int, LayerLoss>& per_layer,
                              const std::array<double, kNumLevels>& weights);

/// A proposal feature with its label and the identity of the face it matched.
struct LabeledFeature {
    int level = kMinLevel;
    FaceLabel label = FaceLabel::Real;
    int image = 0;
    int face = -1;  // source face index within the image
    double iou = 0.0;
    torch::Tensor feature;
};

/// Labels proposals of one image against its faces and keeps the labeled ones.
/// The face identity is the annotation's source_index when set, else its position.
std::vector<LabeledFeature> labeled_features(const std::vector<Proposal>& proposals, const Annotations& faces,
                                             double iou_threshold);

struct CoarseLoss {
    torch::Tensor value;
    std::map<int, LayerLoss> per_layer;
    int queries = 0;
    int paired = 0;     // queries with a matching key proposal
    int fallback = 0;   // queries using the key prototype
    int dropped = 0;    // queries with neither
    bool skipped() const;
};

/// Queues and prototypes for all five levels and both classes.
class CoarseContrast {
public:
    CoarseContrast(const CoarseConfig& cfg, int64_t dim);

    const CoarseConfig& config() const { return cfg_; }
    ContrastQueue& queue(int level, FaceLabel label);
    const ContrastQueue& queue(int level, FaceLabel label) const;
    Prototype& prototype(int level, FaceLabel label);
    const Prototype& prototype(int level, FaceLabel label) const;
    int64_t min_fill() const;

    /// Multi-layer loss of query-encoder features. A query's positive is the
    /// best key proposal on its level matched to the same source face, else
    /// the key prototype of its class; negatives come from the other class's queue.
    CoarseLoss loss(const std::vector<LabeledFeature>& queries, const std::vector<LabeledFeature>& keys) const;

    /// Updates prototypes with every key feature, then enqueues the top-k most
    /// dissimilar key features per (level, class).
    void update(const std::vector<LabeledFeature>& keys);

    void save(torch::serialize::OutputArchive& ar) const;
    void load(torch::serialize::InputArchive& ar);

private:
    static size_t slot(int level, FaceLabel label);
    CoarseConfig cfg_;
    int64_t dim_;
    std::vector<ContrastQueue> queues_;
    std::vector<Prototype> prototypes_;
};

}  // namespace comics
