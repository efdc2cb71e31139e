#include "comics/freq_attention.hpp"

#include <stdexcept>

namespace F = torch::nn::functional;

namespace comics {

const SrmKernels& SrmKernels::standard() {
    static const SrmKernels k = [] {
        SrmKernels out{};
        // second-order horizontal residual
        out.kernels[0] = Kernel{{{{{0, 0, 0, 0, 0}},
                           {{0, 0, 0, 0, 0}},
                           {{0, 1, -2, 1, 0}},
                           {{0, 0, 0, 0, 0}},
                           {{0, 0, 0, 0, 0}}}}, 2.0};
        // KB
        out.kernels[1] = Kernel{{{{{0, 0, 0, 0, 0}},
                           {{0, -1, 2, -1, 0}},
                           {{0, 2, -4, 2, 0}},
                           {{0, -1, 2, -1, 0}},
                           {{0, 0, 0, 0, 0}}}}, 4.0};
        // KV
        out.kernels[2] = Kernel{{{{{-1, 2, -2, 2, -1}},
                           {{2, -6, 8, -6, 2}},
                           {{-2, 8, -12, 8, -2}},
                           {{2, -6, 8, -6, 2}},
                           {{-1, 2, -2, 2, -1}}}}, 12.0};
        return out;
    }();
    return k;
}

torch::Tensor SrmKernels::weight(torch::ScalarType dtype) const {
    auto w = torch::zeros({3, 1, 5, 5}, torch::kFloat64);
    auto acc = w.accessor<double, 4>();
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) acc[k][0][i][j] = kernels[k].coeffs[i][j] / kernels[k].divisor;
    return w.to(dtype);
}

torch::Tensor to_luminance(const torch::Tensor& image) {
    const int64_t cdim = image.dim() == 4 ? 1 : 0;
    if (image.size(cdim) == 1) return image;
    if (image.size(cdim) != 3) throw std::invalid_argument("to_luminance: expected 1 or 3 channels");
    auto ch = image.unbind(cdim);
    return (0.299 * ch[0] + 0.587 * ch[1] + 0.114 * ch[2]).unsqueeze(cdim);
}

torch::Tensor srm_filter(const torch::Tensor& image) {
    if (image.dim() != 3 && image.dim() != 4)
        throw std::invalid_argument("srm_filter: expected [C,H,W] or [N,C,H,W]");
    const bool batched = image.dim() == 4;
    auto x = batched ? image : image.unsqueeze(0);
    if (x.size(1) != 1 && x.size(1) != 3) throw std::invalid_argument("srm_filter: C must be 1 or 3");
    if (x.size(2) < 5 || x.size(3) < 5) throw std::invalid_argument("srm_filter: H and W must be >= 5");
    x = to_luminance(x);
    x = F::pad(x, F::PadFuncOptions({2, 2, 2, 2}).mode(torch::kReflect));
    auto out = F::conv2d(x, SrmKernels::standard().weight(x.scalar_type()));
    return batched ? out : out.squeeze(0);
}

SpatialAttentionImpl::SpatialAttentionImpl() {
    conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, 7).padding(3)));
}

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& features) {
    auto max_map = std::get<0>(features.max(1, true));
    auto mean_map = features.mean(1, true);
    // Clamping keeps the logistic strictly inside (0,1) in float32.
    return torch::sigmoid(conv(torch::cat({max_map, mean_map}, 1)).clamp(-15.0, 15.0));
}

namespace {
torch::nn::Sequential conv_bn_relu(int64_t in, int64_t out, int64_t stride) {
    return torch::nn::Sequential(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)),
        torch::nn::BatchNorm2d(out), torch::nn::ReLU());
}
}  // namespace

AttentionBranchImpl::AttentionBranchImpl(const FeaConfig& cfg) {
    block1 = register_module("block1", conv_bn_relu(3, cfg.channels, 2));
    block2 = register_module("block2", conv_bn_relu(cfg.channels, cfg.channels, 2));
    attention = register_module("attention", SpatialAttention());
}

torch::Tensor AttentionBranchImpl::forward(const torch::Tensor& images) {
    torch::Tensor residual;
    {
        torch::NoGradGuard no_grad;  // fixed filter on raw pixels
        residual = srm_filter(images);
    }
    return attention(block2->forward(block1->forward(residual)));
}

torch::Tensor apply_fea(const torch::Tensor& level, const torch::Tensor& attention) {
    const auto nd = level.dim();
    if (attention.dim() != nd || attention.size(nd - 1) != level.size(nd - 1) ||
        attention.size(nd - 2) != level.size(nd - 2) || attention.size(nd - 3) != 1)
        throw std::logic_error("apply_fea: attention map does not match the feature level");
    return level * attention;
}

torch::Tensor resample_attention(const torch::Tensor& attention, int64_t height, int64_t width) {
    if (attention.size(-2) == height && attention.size(-1) == width) return attention;
    return F::interpolate(attention, F::InterpolateFuncOptions()
                                         .size(std::vector<int64_t>{height, width})
                                         .mode(torch::kBilinear)
                                         .align_corners(false));
}

}  // namespace comics
