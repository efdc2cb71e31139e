#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "comics/config.hpp"
#include "comics/types.hpp"

namespace comics {

struct AnnotatedImage {
    int id = 0;
    std::string file_name;
    int height = 0;
    int width = 0;
    torch::Tensor pixels;  // uint8 [3,H,W]
    Annotations faces;

    /// Float image [3,H,W] in [0,1].
    torch::Tensor image() const;
};

struct Dataset {
    std::vector<AnnotatedImage> images;
    size_t size() const { return images.size(); }
    size_t face_count() const;
    size_t fake_count() const;
};

/// Deterministic synthetic multi-face images: textured ellipses, fakes carry a
/// colour-shifted, smoothed interior blended into the face over a narrow band.
Dataset generate_toy_dataset(const ToyGenConfig& cfg, int n_images, int first_id = 0);

/// Mean |luminance difference| between a fake face's swapped interior and its
/// untouched outer ring; the generator keeps only faces where it exceeds 0.05.
double fake_boundary_contrast(const torch::Tensor& image, const Mask& face, const Mask& interior);

/// COCO-style annotations with uncompressed RLE masks.
nlohmann::json manifest_to_json(const Dataset& ds);

/// Parses a COCO-style manifest. Polygons and RLE are accepted. `source`
/// names the file in error messages. Image pixels are not loaded.
Dataset manifest_from_json(const nlohmann::json& j, const std::string& source = "<json>");

/// Writes PNGs under dir/images and dir/annotations.json.
void save_manifest(const Dataset& ds, const std::filesystem::path& dir);
/// Reads annotations.json (or the given .json file) and the referenced PNGs.
Dataset load_manifest(const std::filesystem::path& path);

/// uint8 [3,H,W] <-> PNG file.
void write_png(const std::filesystem::path& path, const torch::Tensor& pixels);
torch::Tensor read_png(const std::filesystem::path& path);

/// Stacks float images of the given indices into [N,3,H,W].
torch::Tensor batch_images(const Dataset& ds, const std::vector<size_t>& indices);

}  // namespace comics
