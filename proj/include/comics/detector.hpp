#pragma once

#include <array>
#include <map>
#include <vector>

#include <torch/torch.h>

#include "comics/config.hpp"
#include "comics/freq_attention.hpp"
#include "comics/types.hpp"

namespace comics {

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }
inline int64_t level_stride(int level) { return int64_t{1} << level; }

/// Multi-scale features at levels 3..7 for a batch of images.
struct FeaturePyramid {
    std::map<int, torch::Tensor> levels;  // level -> [N, C, ceil(H/2^l), ceil(W/2^l)]
    int64_t image_height = 0;
    int64_t image_width = 0;

    int64_t channels() const { return levels.begin()->second.size(1); }
    const torch::Tensor& at(int level) const { return levels.at(level); }
    /// Throws std::logic_error when a shape invariant is violated.
    void check() const;
};

struct EncoderOutput {
    FeaturePyramid pyramid;                    // after attention gating when enabled
    FeaturePyramid ungated;                    // backbone + FPN output
    std::map<int, torch::Tensor> embeddings;   // level -> [N, D, h, w] projected features
    torch::Tensor stride4;                     // backbone features at stride 4
    torch::Tensor attention;                   // [N,1,h,w] or undefined when disabled
};

struct LevelHead {
    torch::Tensor cls;    // [N, 2, h, w] logits (real, fake)
    torch::Tensor box;    // [N, 4, h, w] log-space ltrb / stride
    torch::Tensor ctr;    // [N, 1, h, w] objectness logit
};
using HeadOutputs = std::map<int, LevelHead>;

/// Candidate face region from one pyramid cell.
struct Proposal {
    int image = 0;
    int level = kMinLevel;
    int row = 0;
    int col = 0;
    Box box;
    std::array<double, 2> class_logits{0.0, 0.0};
    double objectness = 0.5;
    double score = 0.0;
    torch::Tensor feature;  // [D] embedding; may carry autograd history
    bool injected = false;  // ground-truth box placed at its centre cell
};

struct PredictedMask {
    size_t proposal_id = 0;
    Box roi;                    // enlarged crop window in image pixels
    torch::Tensor feature_map;  // [Dm, S, S]
    torch::Tensor mask_logits;  // [S, S]
    torch::Tensor mask_prob() const { return torch::sigmoid(mask_logits); }
};

struct MaskPrediction {
    std::vector<PredictedMask> masks;
    std::vector<size_t> skipped;  // proposal ids whose clipped box was degenerate
    torch::Tensor features;       // [R, Dm, S, S]
    torch::Tensor logits;         // [R, S, S]
};

class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Backbone + feature pyramid + attention gating + projection head. This is the
/// part duplicated into the momentum (key) encoder.
class EncoderImpl : public torch::nn::Module {
public:
    EncoderImpl(const ModelConfig& model, const FeaConfig& fea);
    EncoderOutput forward(const torch::Tensor& images);

    const FeaConfig& fea_config() const { return fea_; }

    torch::nn::Sequential stem{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr},
        layer5{nullptr};
    torch::nn::Conv2d lateral3{nullptr}, lateral4{nullptr}, lateral5{nullptr};
    torch::nn::Conv2d smooth3{nullptr}, smooth4{nullptr}, smooth5{nullptr};
    torch::nn::Conv2d down6{nullptr}, down7{nullptr};
    torch::nn::Sequential projection{nullptr};
    AttentionBranch fea{nullptr};

private:
    FeaConfig fea_;
};
TORCH_MODULE(Encoder);

/// Shared per-level head: class logits, box regression and objectness.
class DetectionHeadImpl : public torch::nn::Module {
public:
    explicit DetectionHeadImpl(int64_t channels);
    HeadOutputs forward(const FeaturePyramid& pyramid);

    torch::nn::Sequential tower{nullptr};
    torch::nn::Conv2d cls{nullptr}, box{nullptr}, ctr{nullptr};
};
TORCH_MODULE(DetectionHead);

/// Stride-4 mask feature basis from the stride-4 backbone map and P3.
class MaskBranchImpl : public torch::nn::Module {
public:
    MaskBranchImpl(int64_t stride4_channels, int64_t pyramid_channels, int64_t mask_channels);
    torch::Tensor forward(const torch::Tensor& stride4, const torch::Tensor& p3);

    torch::nn::Conv2d lateral{nullptr}, reduce{nullptr}, conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(MaskBranch);

/// Per-RoI mask logits from cropped mask features plus relative coordinates.
class MaskPredictorImpl : public torch::nn::Module {
public:
    explicit MaskPredictorImpl(int64_t mask_channels);
    torch::Tensor forward(const torch::Tensor& roi_features);  // [R,Dm,S,S] -> [R,S,S]

    torch::nn::Conv2d fc1{nullptr}, fc2{nullptr}, out{nullptr};
};
TORCH_MODULE(MaskPredictor);

struct DetectorOutput {
    EncoderOutput encoder;
    HeadOutputs heads;
    torch::Tensor mask_features;  // [N, Dm, ceil(H/4), ceil(W/4)]
};

enum class ProposalMode { Training, Inference };

struct InstancePrediction {
    Box box;
    FaceLabel label = FaceLabel::Real;
    double score = 0.0;
    Mask mask;
};

class DetectorImpl : public torch::nn::Module {
public:
    explicit DetectorImpl(const TrainConfig& cfg);

    const ModelConfig& model_config() const { return model_; }

    /// Images [N,3,H,W] in [0,1]; throws std::invalid_argument when H or W < 64.
    DetectorOutput forward(const torch::Tensor& images);
    /// Pyramid only; same preconditions as forward.
    FeaturePyramid extract_pyramid(const torch::Tensor& images);

    std::vector<std::vector<Proposal>> generate_proposals(const EncoderOutput& enc,
                                                          const HeadOutputs& heads,
                                                          ProposalMode mode) const;
    MaskPrediction predict_masks(const torch::Tensor& mask_features,
                                 const std::vector<Proposal>& proposals, int64_t image_height,
                                 int64_t image_width);

    /// Full inference for a batch: proposals, NMS, masks pasted at image resolution.
    std::vector<std::vector<InstancePrediction>> detect(const torch::Tensor& images);

    Encoder encoder{nullptr};
    DetectionHead head{nullptr};
    MaskBranch mask_branch{nullptr};
    MaskPredictor mask_predictor{nullptr};

private:
    ModelConfig model_;
};
TORCH_MODULE(Detector);

/// Validates image size and converts [3,H,W] to a batch of one.
torch::Tensor as_image_batch(const torch::Tensor& images);

/// Decodes a level's regression output into boxes [N, h, w, 4] (x1,y1,x2,y2).
torch::Tensor decode_boxes(const torch::Tensor& box_raw, int level);
/// Predicted ltrb distances [N, h, w, 4] from raw regression output.
torch::Tensor decode_ltrb(const torch::Tensor& box_raw, int level);

/// Gathers `embeddings[level][image, :, row, col]` for each proposal, in order.
torch::Tensor gather_proposal_features(const EncoderOutput& enc,
                                       const std::vector<Proposal>& proposals);

/// Proposals holding each annotation's box at its centre cell on every level.
std::vector<Proposal> ground_truth_proposals(const EncoderOutput& enc, const HeadOutputs& heads,
                                             int image, const Annotations& faces);

/// Affine sampling grid parameters mapping an S x S output onto `roi`.
torch::Tensor roi_theta(const std::vector<Box>& rois, int64_t image_height, int64_t image_width,
                        torch::ScalarType dtype);

/// Crops `maps[image_index[r]]` onto each roi, producing [R, C, S, S].
torch::Tensor roi_crop(const torch::Tensor& maps, const std::vector<int64_t>& image_index,
                       const std::vector<Box>& rois, int64_t image_height, int64_t image_width,
                       int64_t size);

/// Binary mask targets of each RoI cropped from full-resolution masks: [R, S, S] in {0,1}.
torch::Tensor roi_mask_targets(const std::vector<const Mask*>& masks, const std::vector<Box>& rois,
                               int64_t size);

/// Pastes an S x S probability map onto the image grid inside `roi`, thresholded.
Mask paste_mask(const torch::Tensor& mask_prob, const Box& roi, int height, int width,
                double threshold = 0.5);

// ---------------------------------------------------------------------------
// Training targets and losses

struct LevelTargets {
    torch::Tensor labels;      // [N, h, w] int64, -1 for background
    torch::Tensor ltrb;        // [N, h, w, 4]
    torch::Tensor centerness;  // [N, h, w]
    torch::Tensor gt_index;    // [N, h, w] int64, -1 for background
};
struct DenseTargets {
    std::map<int, LevelTargets> levels;
    int64_t num_faces = 0;
};

/// Anchor-free assignment: a cell is positive for the smallest face whose box
/// contains the cell centre, that lies within `center_radius` strides of the face
/// centre, and whose largest regression distance fits the level's size range.
DenseTargets build_dense_targets(const FeaturePyramid& pyramid,
                                 const std::vector<Annotations>& faces, double center_radius);

struct MaskLossInput {
    torch::Tensor logits;   // [R, S, S]
    torch::Tensor targets;  // [R, S, S] in {0,1}
};

struct DetectionLoss {
    torch::Tensor cls, box, ctr, mask, total;
};

/// Focal classification + IoU regression + objectness + per-pixel mask loss.
/// Throws std::invalid_argument when the batch contains no ground truth.
DetectionLoss detection_loss(const HeadOutputs& heads, const DenseTargets& targets,
                             const MaskLossInput* masks);

}  // namespace comics
