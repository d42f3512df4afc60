#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adlfusion/fusion.hpp"
#include "adlfusion/object_context.hpp"
#include "adlfusion/tensor.hpp"

namespace adlfusion {

// Weighting of the two training objectives and the prediction horizon of
// the auxiliary head.
struct LossConfig {
    double lambda_pose = 0.25;
    std::size_t delta_horizon = 3; // pose frames past the end of the clip

    void validate() const; // throws ConfigError
};

// Cross entropy on softmax output, probability clamped at 1e-12 before the
// log.  cross_entropy_backward returns dL/d(probs) scaled by `scale`
// (typically 1/batch for a batch-mean loss).
double cross_entropy(const DenseTensor& probs, std::size_t label);
DenseTensor cross_entropy_backward(const DenseTensor& probs, std::size_t label, double scale);

// Mean squared error over all pose coordinates.
double pose_mse(const DenseTensor& pred, const DenseTensor& target);
DenseTensor pose_mse_backward(const DenseTensor& pred, const DenseTensor& target, double scale);

// Row = ground truth, column = prediction.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t classes)
        : classes(classes), counts(classes * classes, 0) {}

    std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
    std::size_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * classes + pred];
    }
    std::size_t row_total(std::size_t truth) const;
    void add(std::size_t truth, std::size_t pred);
};

// Mean over classes of per-class accuracy (diagonal over row total).
// Classes with no ground-truth samples are left out of the mean; if no
// class has samples the result is NaN.
double mean_per_class_accuracy(const ConfusionMatrix& cm);

// One synthetic clip: inputs the model consumes plus its targets.
struct SyntheticSample {
    DenseTensor pose;        // [T_p, J, 3]
    DenseTensor features;    // [T, H, W, C]
    std::vector<GridMask> masks;
    std::size_t label = 0;
    DenseTensor future_pose; // [J, 3], clean trajectory at T_p - 1 + delta
};

struct SyntheticSpec {
    std::size_t classes = 4;
    std::size_t clips_per_class = 10;
    double pose_noise = 0.01;
    double feature_noise = 0.05;
    double signal = 4.0; // class marker strength in the feature map
};

// Clips follow a shared oscillation frequency with class-specific phase,
// amplitude and axis emphasis, so a linear temporal filter can extrapolate
// the future pose; each class also lights up a distinct feature-map cell
// and channel.  Group g's mask covers the marker cells of classes with
// c % groups == g (groups beyond the class count stay empty).
std::vector<SyntheticSample> generate_synthetic(const ModelConfig& cfg, const SyntheticSpec& spec,
                                                const LossConfig& loss, std::uint64_t seed);

// Splits per class: floor(val_fraction * n) clips of each label go to the
// validation side (at least one when the class has two or more).
void stratified_split_indices(std::span<const SyntheticSample> samples, double val_fraction,
                              std::uint64_t seed, std::vector<std::size_t>& train_idx,
                              std::vector<std::size_t>& val_idx);
void stratified_split(std::span<const SyntheticSample> samples, double val_fraction,
                      std::uint64_t seed, std::vector<SyntheticSample>& train_out,
                      std::vector<SyntheticSample>& val_out);

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t max_epochs = 100;
    std::size_t patience = 10; // epochs without val improvement before stopping
    std::uint64_t seed = 0;
    AdamConfig adam;
    LossConfig loss;

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_mpca = 0.0;
    double val_pose_loss = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    double initial_val_pose_loss = 0.0; // before the first update
    std::size_t best_epoch = 0;
    double best_val_mpca = 0.0;
    bool early_stopped = false;
};

struct EvalResult {
    ConfusionMatrix confusion;
    double mpca = 0.0;
    double mean_ce = 0.0;
    double mean_pose_loss = 0.0;
};

EvalResult evaluate(const FusionModel& model, std::span<const SyntheticSample> data,
                    const LossConfig& loss);

// Batched Adam on the joint objective ce + lambda * pose_mse, per-epoch
// validation, early stopping on val MPCA; the best-epoch weights are
// restored before returning.
TrainHistory train(FusionModel& model, std::span<const SyntheticSample> train_set,
                   std::span<const SyntheticSample> val_set, const TrainConfig& cfg);

// "epoch,train_loss,val_mpca" rows, %.17g so reruns compare byte for byte.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

} // namespace adlfusion
