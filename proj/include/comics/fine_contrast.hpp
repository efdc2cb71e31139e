#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "comics/config.hpp"
#include "comics/types.hpp"

namespace comics {

/// Boolean pixel sets on an S x S grid, row-major.
struct RegionSelection {
    int size = 0;
    std::vector<uint8_t> face;        // B-pixels far enough from the contour
    std::vector<uint8_t> background;  // not-B pixels far enough from the contour
    int64_t face_count() const;
    int64_t background_count() const;
};

/// Contour pixels of a binary grid: set pixels with an unset 8-neighbour or on the grid border.
std::vector<uint8_t> mask_contour(const std::vector<uint8_t>& binary, int size);

/// Chebyshev distance of every pixel to the nearest contour pixel (large when there is none).
std::vector<int> chebyshev_distance(const std::vector<uint8_t>& contour, int size);

/// Keeps pixels whose Chebyshev distance to the contour is at least `radius`.
RegionSelection select_regions(const std::vector<uint8_t>& binary, int size, int radius);

struct MaskRegionSplit {
    FaceLabel label = FaceLabel::Real;
    size_t proposal_id = 0;
    torch::Tensor face_pixels;        // [Nf, D]
    torch::Tensor background_pixels;  // [Nb, D]
};

/// Binarises `mask_prob` [S,S] and gathers the surviving pixel features from
/// `feature_map` [D,S,S]. Returns nullopt when either set is empty.
std::optional<MaskRegionSplit> split_mask_regions(const torch::Tensor& feature_map, const torch::Tensor& mask_prob,
                                                  FaceLabel label, const FineConfig& cfg, size_t proposal_id = 0);

/// Same, with an explicit binary region instead of a thresholded probability map.
std::optional<MaskRegionSplit> split_mask_regions(const torch::Tensor& feature_map,
                                                  const std::vector<uint8_t>& binary, FaceLabel label,
                                                  const FineConfig& cfg, size_t proposal_id = 0);

/// Mean pairwise cosine similarity of two pixel sets, computed as the dot
/// product of their mean unit vectors. Throws on an empty set.
torch::Tensor region_sim(const torch::Tensor& h, const torch::Tensor& h_prime);

struct ContrastTerm {
    torch::Tensor value;
    bool skipped = true;
};

/// -log( sum_R e^{d_R/tau} / (sum_R e^{d_R/tau} + sum_F e^{d_F/tau}) ).
/// Skipped without real terms; exactly 0 without fake terms.
ContrastTerm intra_face_loss_from_sims(const torch::Tensor& real_sims, const torch::Tensor& fake_sims, double tau);

/// -log( sum e^{neg/tau} / (sum e^{neg/tau} + sum e^{pos/tau}) ), where `neg`
/// holds background-background and `pos` face-face similarities per pair.
ContrastTerm inter_face_loss_from_sims(const torch::Tensor& background_sims, const torch::Tensor& face_sims,
                                       double tau);

ContrastTerm intra_face_loss(const std::vector<MaskRegionSplit>& splits, double tau);

/// All real x fake pairs, uniformly subsampled to `pair_cap` with `seed`.
ContrastTerm inter_face_loss(const std::vector<MaskRegionSplit>& splits, double tau, int pair_cap,
                             uint64_t seed);

}  // namespace comics
