#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "comics/coarse_contrast.hpp"
#include "comics/config.hpp"
#include "comics/dataset.hpp"
#include "comics/detector.hpp"
#include "comics/metrics.hpp"

namespace comics {

/// Raised when a loss component is NaN or infinite.
class NonFiniteLoss : public std::runtime_error {
public:
    explicit NonFiniteLoss(const std::string& component)
        : std::runtime_error("non-finite loss component: " + component), component_(component) {}
    const std::string& component() const { return component_; }

private:
    std::string component_;
};

struct LossBundle {
    torch::Tensor l_detect, l_cl, l_fl_intra, l_fl_inter, total;
    bool cl_skipped = true, intra_skipped = true, inter_skipped = true;
};

/// total = l_detect + lambda1 l_cl + lambda2 l_fl_intra + lambda3 l_fl_inter.
/// Components whose toggle is off contribute exactly 0 and are not inspected.
/// Throws NonFiniteLoss naming the first offending enabled component.
LossBundle total_loss(const LossBundle& parts, const TrainConfig& cfg);

/// Learning rate at a step: linear warmup from a third of the base rate, then
/// x0.1 from epoch 2/3 and x0.01 from epoch 5/6 of the schedule.
double learning_rate(const TrainConfig& cfg, int64_t step, int64_t steps_per_epoch);

struct StepLog {
    int64_t step = 0;
    int epoch = 0;
    double lr = 0;
    double l_detect = 0, l_cl = 0, l_fl_intra = 0, l_fl_inter = 0, total = 0;
    bool cl_skipped = true, intra_skipped = true, inter_skipped = true;
    std::vector<int64_t> queue_fill;  // (level, class) order: 3 real, 3 fake, 4 real, ...
    int coarse_queries = 0, coarse_fallback = 0;
    int fine_real = 0, fine_fake = 0, fine_skipped_masks = 0;
    nlohmann::json to_json() const;
};

class Trainer {
public:
    Trainer(const TrainConfig& cfg, const Dataset& train_set);

    /// One optimiser step on the next batch.
    StepLog step();

    int64_t global_step() const { return step_; }
    int64_t steps_per_epoch() const { return steps_per_epoch_; }
    /// Scheduled total including the max_steps cap.
    int64_t total_steps() const;
    int epoch() const { return int(step_ / steps_per_epoch_); }

    Detector& model() { return model_; }
    Encoder& key_encoder() { return key_encoder_; }
    CoarseContrast& coarse() { return coarse_; }
    const TrainConfig& config() const { return cfg_; }

    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

    /// Batch indices used at a given step.
    std::vector<size_t> batch_indices(int64_t step) const;

private:
    TrainConfig cfg_;
    const Dataset& data_;
    Detector model_{nullptr};
    Encoder key_encoder_{nullptr};
    CoarseContrast coarse_;
    std::unique_ptr<torch::optim::SGD> optimizer_;
    int64_t step_ = 0;
    int64_t steps_per_epoch_ = 1;
};

struct TrainOptions {
    std::filesystem::path output_dir;
    std::optional<std::filesystem::path> resume;
    std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
    std::filesystem::path final_checkpoint;
    int64_t steps = 0;
    bool halted = false;  // stopped on a non-finite loss
    std::string halt_reason;
};

/// Runs the full schedule, writing train_log.jsonl, per-epoch checkpoints and
/// final.ckpt into the output directory.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const TrainOptions& options);

/// Detector predictions for every image of a dataset, as metric detections.
std::vector<Detection> predict_dataset(Detector& model, const Dataset& ds, int batch_size = 8);
std::vector<GroundTruth> ground_truth_of(const Dataset& ds);

/// Loads a checkpoint (refusing a config hash mismatch) and evaluates it.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const TrainConfig& cfg, const Dataset& ds);

/// Loads model weights from a checkpoint after checking its config hash.
Detector load_detector(const std::filesystem::path& checkpoint, const TrainConfig& cfg);

struct AblationRow {
    std::string name;
    bool augment = false, fea = false, bi_grained = false;
    EvalReport report;
};

/// The 2x2x2 grid over data augmentation, frequency attention and the
/// bi-grained contrast terms (coarse and fine together).
std::vector<TrainConfig> ablation_grid(const TrainConfig& base, std::vector<std::string>* names = nullptr);

std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& train_set, const Dataset& test_set,
                                      const std::filesystem::path& output_dir);

/// Output directory: COMICS_OUTPUT_DIR when set, else `fallback`.
std::filesystem::path output_directory(const std::filesystem::path& fallback);

/// Writes an AP-vs-oLRP scatter (AP decreasing to the right, oLRP increasing
/// downwards, so the best corner is top-left) as PNG.
struct ScatterPoint {
    std::string label;
    double ap = 0;
    double olrp = 0;
};
void plot_scatter(const std::vector<ScatterPoint>& points, const std::filesystem::path& path,
                  const std::string& title = "AP vs oLRP");

}  // namespace comics
