#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace comics {

inline constexpr int kMinLevel = 3;
inline constexpr int kMaxLevel = 7;
inline constexpr int kNumLevels = kMaxLevel - kMinLevel + 1;
inline constexpr std::array<int, kNumLevels> kLevels = {3, 4, 5, 6, 7};

struct ModelConfig {
    int pyramid_channels = 32;
    int embed_dim = 32;
    int mask_channels = 16;
    int mask_size = 28;
    double roi_scale = 1.4;
    double center_radius = 1.5;
    double score_threshold = 0.05;
    double nms_threshold = 0.5;
    int pre_nms_top_n = 100;
    int max_detections = 50;
    int train_proposals_per_level = 16;
    int max_mask_rois_per_image = 16;
};

struct FeaConfig {
    bool enabled = true;
    std::string kernel_set = "srm3";
    std::vector<int> apply_levels = {3, 4, 5, 6, 7};
    int channels = 8;
};

struct AugmentConfig {
    bool enabled = true;
    double op_probability = 0.5;
    std::array<double, 2> saturation_range = {0.0, 3.1};
    std::array<double, 2> sharpness_range = {0.0, 3.1};
    std::array<double, 2> brightness_range = {1.0, 2.1};
    std::array<double, 2> contrast_range = {1.0, 2.1};
    int block_grid = 10;
    std::array<double, 2> block_fraction_range = {0.02, 0.06};
    std::vector<double> gaussian_variances = {0.01, 0.02, 0.03, 0.04, 0.05};
    std::vector<double> salt_pepper_fractions = {0.05, 0.1, 0.15};
    double downscale = 0.25;
    double rotation_degrees = 15.0;
    double min_crop_area = 0.8;
    double flip_probability = 0.5;
    bool color_jitter = true;
    bool grayscale = true;
    bool random_block = true;
    bool interpolate = true;
    bool gaussian_noise = true;
    bool salt_pepper = true;
    bool debug_log = false;
};

struct CoarseConfig {
    bool enabled = true;
    double tau = 0.7;
    double beta = 0.999;
    double alpha = 0.9;
    double iou_threshold = 0.6;
    int top_k = 5;
    int queue_capacity = 4096;
    int min_queue_fill = 64;
    std::array<double, kNumLevels> layer_weights = {0.1, 0.2, 0.4, 0.7, 1.0};
};

struct FineConfig {
    bool enabled = true;
    double tau = 0.7;
    int erosion_radius = 2;
    double binarize_threshold = 0.5;
    int pair_cap = 32;
    int warmup_epochs = 1;
};

struct ToyGenConfig {
    int image_size = 256;
    int faces_min = 1;
    int faces_max = 6;
    double fake_fraction = 0.5;
    int face_size_min = 20;
    int face_size_max = 110;
    double texture_shift = 0.12;
    double blend_width = 3.0;
    uint64_t seed = 0;
};

struct TrainConfig {
    double lambda1 = 0.5;
    double lambda2 = 0.1;
    double lambda3 = 0.1;
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 12;
    int batch_size = 8;
    int warmup_iters = 50;
    double grad_clip = 10.0;
    int max_steps = 0;
    uint64_t seed = 0;
    bool checkpoint_each_epoch = true;

    ModelConfig model;
    FeaConfig fea;
    AugmentConfig augment;
    CoarseConfig coarse;
    FineConfig fine;
    ToyGenConfig data;
};

/// Flat `key = value` text configuration with `#` comments.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& source = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    bool contains(const std::string& key) const { return entries_.count(key) != 0; }
    const std::string& at(const std::string& key) const;
    const std::map<std::string, std::string>& entries() const { return entries_; }
    std::string serialize() const;

private:
    std::map<std::string, std::string> entries_;
};

/// Applies every key in `kv` on top of defaults. Unknown keys and malformed
/// values raise std::invalid_argument naming the key.
TrainConfig train_config_from(const KeyValueConfig& kv);
KeyValueConfig to_key_values(const TrainConfig& cfg);
/// Documented key list, in serialization order.
std::vector<std::string> config_keys();

/// FNV-1a over the architecture-defining keys (model.*, fea.*). Two configs
/// with the same hash build interchangeable networks.
uint64_t config_hash(const TrainConfig& cfg);

}  // namespace comics
