#pragma once

#include <array>

#include <torch/torch.h>

#include "comics/config.hpp"

namespace comics {

/// Fixed high-pass residual kernels from the spatial-rich-model family.
struct SrmKernels {
    struct Kernel {
        std::array<std::array<double, 5>, 5> coeffs;
        double divisor;
    };
    std::array<Kernel, 3> kernels;

    static const SrmKernels& standard();
    /// [3, 1, 5, 5] weight for conv2d, coefficients already divided.
    torch::Tensor weight(torch::ScalarType dtype = torch::kFloat32) const;
};

/// BT.601 luminance of a [3,H,W] or [N,3,H,W] image; single-channel inputs pass through.
torch::Tensor to_luminance(const torch::Tensor& image);

/// SRM residuals of a [C,H,W] or [N,C,H,W] image (C in {1,3}) with
/// mirror padding. Returns [3,H,W] or [N,3,H,W].
torch::Tensor srm_filter(const torch::Tensor& image);

/// channel-max and channel-mean maps -> 7x7 conv -> logistic.
class SpatialAttentionImpl : public torch::nn::Module {
public:
    SpatialAttentionImpl();
    /// [N,C,H,W] -> [N,1,H,W], values strictly inside (0,1).
    torch::Tensor forward(const torch::Tensor& features);

    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SpatialAttention);

/// SRM residuals -> two conv/BN/ReLU blocks -> spatial attention.
class AttentionBranchImpl : public torch::nn::Module {
public:
    explicit AttentionBranchImpl(const FeaConfig& cfg);
    /// Raw images [N,3,H,W] in [0,1] -> attention map [N,1,ceil(H/4),ceil(W/4)].
    torch::Tensor forward(const torch::Tensor& images);

    torch::nn::Sequential block1{nullptr};
    torch::nn::Sequential block2{nullptr};
    SpatialAttention attention{nullptr};
};
TORCH_MODULE(AttentionBranch);

/// Gates one pyramid level: out[n,c,h,w] = level[n,c,h,w] * attention[n,0,h,w].
/// `attention` must already match the level's spatial size.
torch::Tensor apply_fea(const torch::Tensor& level, const torch::Tensor& attention);

/// Bilinear resample of an attention map to (height, width).
torch::Tensor resample_attention(const torch::Tensor& attention, int64_t height, int64_t width);

}  // namespace comics
