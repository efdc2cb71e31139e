#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "comics/config.hpp"
#include "comics/types.hpp"

namespace comics {

using Rng = std::mt19937_64;

/// Mixes a root seed with stream indices (splitmix64 finaliser).
uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b = 0, uint64_t c = 0);

// Images are float tensors [3,H,W] with values in [0,1].

/// Geometric transform of the query view: rotation about the image centre,
/// then a crop window (in rotated coordinates) resized to the full frame,
/// then an optional horizontal flip.
struct QueryTransform {
    double angle_degrees = 0.0;
    Box crop;  // empty box means the full frame
    bool flip = false;
};

/// 2x3 affine matrix (row-major) mapping source pixel-edge coordinates to
/// output pixel-edge coordinates.
std::array<double, 6> query_affine(const QueryTransform& t, int height, int width);

struct QueryView {
    torch::Tensor image;
    Annotations faces;  // source_index set to the face's index in the input list
    QueryTransform transform;
    int dropped_faces = 0;
};

QueryView apply_query_transform(const torch::Tensor& image, const Annotations& faces, const QueryTransform& t);
QueryView make_query_view(const torch::Tensor& image, const Annotations& faces, const AugmentConfig& cfg, Rng& rng);

struct KeyView {
    torch::Tensor image;
    nlohmann::json log = nlohmann::json::array();  // one entry per applied op with its parameters
};

KeyView make_key_view(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng);

torch::Tensor adjust_brightness(const torch::Tensor& image, double factor);
torch::Tensor adjust_contrast(const torch::Tensor& image, double factor);
torch::Tensor adjust_saturation(const torch::Tensor& image, double factor);
torch::Tensor adjust_sharpness(const torch::Tensor& image, double factor);
torch::Tensor to_grayscale(const torch::Tensor& image);
/// Downscale by `factor` with antialiasing, then bilinear back to the input size.
torch::Tensor downscale_upscale(const torch::Tensor& image, double factor);

/// Zeroes the listed chunks (row-major indices) of a grid x grid partition.
torch::Tensor block_chunks(const torch::Tensor& image, int grid, const std::vector<int>& chunks);
/// Zeroes a random 2..6 percent of the grid chunks. `blocked` receives the chunk indices.
torch::Tensor random_block(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng,
                           std::vector<int>* blocked = nullptr);

/// Additive N(0, variance) noise per element; clipped to [0,1] unless `clip` is false.
torch::Tensor gaussian_noise(const torch::Tensor& image, double variance, Rng& rng, bool clip = true);
/// Sets a `fraction` of pixel locations to black or white with equal odds.
torch::Tensor salt_pepper(const torch::Tensor& image, double fraction, Rng& rng);
/// kind is "gaussian" or "salt_pepper"; parameters are drawn from the config sets.
/// Throws std::invalid_argument for any other kind.
torch::Tensor add_noise(const torch::Tensor& image, const std::string& kind, const AugmentConfig& cfg, Rng& rng);

}  // namespace comics
