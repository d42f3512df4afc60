#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adlfusion/fusion.hpp"
#include "adlfusion/object_context.hpp"
#include "adlfusion/pose.hpp"
#include "adlfusion/training.hpp"
#include "adlfusion/video_region.hpp"

namespace adlfusion {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

struct PipelinePaths {
    std::filesystem::path detections;
    std::filesystem::path poses;
    std::filesystem::path joints;
    std::filesystem::path labels;
    std::filesystem::path vocabulary; // empty selects the built-in list
    std::filesystem::path output_dir;
};

// One JSON document configures every subcommand; command-line flags override
// individual keys (flag > config > built-in default).
struct PipelineConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;    // carries the Adam and loss settings
    SyntheticSpec dataset;
    double val_fraction = 0.2;
    double confidence_threshold = 0.5;
    std::size_t stride = 2;
    std::size_t crop_size = 224;
    PipelinePaths paths;

    void validate() const; // throws ConfigError
};

PipelineConfig load_pipeline_config(const std::filesystem::path& json_path);

// Clip index lists into the deterministic synthetic ordering (class-major,
// clip-minor).  `test` may be empty; eval prefers test, then val.
struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};
SplitIndices load_split(const std::filesystem::path& json_path);
void save_split(const std::filesystem::path& json_path, const SplitIndices& split);

std::vector<SyntheticSample> build_synthetic_dataset(const PipelineConfig& cfg);

struct PreprocessPoseOutcome {
    RotationAngles angles;
    std::vector<std::size_t> kept_frames;
    bool single_frame_warning = false;
};
PreprocessPoseOutcome run_preprocess_pose(const std::filesystem::path& pose_in,
                                          const std::filesystem::path& joints_json,
                                          std::size_t stride,
                                          const std::filesystem::path& pose_out,
                                          const std::filesystem::path& angles_out);

struct CropOutcome {
    ActivityCrop crop;
    std::size_t frames_written = 0;
};
// Frames are optional: without them only the crop geometry JSON is written.
CropOutcome run_crop(const std::filesystem::path& detections_path,
                     const std::optional<std::string>& video_id,
                     const std::optional<std::filesystem::path>& frames_in,
                     std::size_t out_size,
                     const std::optional<std::filesystem::path>& frames_out,
                     const std::filesystem::path& crop_json_out);

struct GroupObjectsOutcome {
    ObjectGrouping grouping;
    std::vector<std::string> masks_written;  // video ids
    std::vector<std::string> skipped_videos; // labeled but no person boxes
};
GroupObjectsOutcome run_group_objects(const PipelineConfig& cfg,
                                      const std::filesystem::path& detections_path,
                                      const std::filesystem::path& labels_path,
                                      std::size_t target_groups,
                                      const std::filesystem::path& out_dir);

struct TrainOutcome {
    TrainHistory history;
    EvalResult final_val;
};
// Writes the parameter directory, history.csv and the split actually used.
TrainOutcome run_train(const PipelineConfig& cfg,
                       const std::optional<std::filesystem::path>& split_path,
                       const std::filesystem::path& model_dir);

EvalResult run_eval(const PipelineConfig& cfg, const std::filesystem::path& model_dir,
                    const std::optional<std::filesystem::path>& split_path);
std::string metrics_to_json(const EvalResult& result);

// Per-clip attention dump: {"alpha": [T], "cross_attention": [heads][G][N]}.
// Returns the number of clip files written.
std::size_t run_dump_attention(const PipelineConfig& cfg,
                               const std::filesystem::path& model_dir,
                               const std::optional<std::filesystem::path>& split_path,
                               const std::filesystem::path& out_dir);

} // namespace adlfusion
