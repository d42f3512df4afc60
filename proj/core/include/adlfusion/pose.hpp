#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "adlfusion/tensor.hpp"

namespace adlfusion {

// Indices of the four torso joints the view normalization needs.
struct JointMap {
    std::size_t left_shoulder = 0;
    std::size_t right_shoulder = 0;
    std::size_t left_hip = 0;
    std::size_t right_hip = 0;

    void validate(std::size_t joint_count) const; // throws ConfigError
};

JointMap load_joint_map(const std::filesystem::path& json_path);
void save_joint_map(const std::filesystem::path& json_path, const JointMap& map);

// A skeleton sequence: frames tensor of shape [T, J, 3] (x, y, z per joint)
// plus the torso joint indices.
struct PoseSequence {
    DenseTensor frames; // [T, J, 3]
    JointMap joints;

    PoseSequence() = default;
    PoseSequence(DenseTensor frames, JointMap joints);

    std::size_t frame_count() const { return frames.dim(0); }
    std::size_t joint_count() const { return frames.dim(1); }

    double& at(std::size_t t, std::size_t j, std::size_t c);
    double at(std::size_t t, std::size_t j, std::size_t c) const;
};

struct RotationAngles {
    double alpha_y = 0.0;            // body orientation, first frame only
    std::vector<double> beta_z;      // per-frame tilt correction
};

// Body orientation about the vertical axis, measured at one frame from the
// left shoulder against the midpoint of right shoulder and right hip:
// alpha = atan2(s_lz - (s_rz + h_rz) / 2, s_lx - (s_rx + h_rx) / 2).
// Throws DegeneratePoseError when the torso extent vanishes.
double compute_y_rotation(const PoseSequence& pose, std::size_t frame = 0);

// In-plane tilt at one frame: mean of the shoulder-pair and hip-pair angles,
// each atan2(left_y - right_y, left_x - right_x).
double compute_z_rotation(const PoseSequence& pose, std::size_t frame);

// Rotation helpers shared with the tests.  rotate_y maps +X toward +Z for
// positive angles; rotate_z maps +X toward +Y.  With these conventions a
// pose rotated by rotate_y(theta) measures alpha == theta, so normalization
// applies the negated measured angles.
void rotate_y_all(PoseSequence& pose, double angle);
void rotate_z_frame(PoseSequence& pose, std::size_t frame, double angle);

struct NormalizeResult {
    PoseSequence pose;
    RotationAngles angles;
};

// View normalization: one Y-rotation by -alpha (alpha measured at frame 0,
// applied to every frame; later body turns are deliberately preserved), then
// a per-frame Z-rotation by -beta_t.  Frames containing non-finite joints
// are rejected with their index.
NormalizeResult normalize_sequence(const PoseSequence& pose);

struct SubsampleResult {
    PoseSequence pose;
    std::vector<std::size_t> kept_frames;
    // Set when the stride exceeded the sequence length and only frame 0
    // survived.
    bool single_frame_warning = false;
};

// Keeps frames 0, stride, 2*stride, ...  Stride 0 is a ConfigError.
SubsampleResult temporal_subsample(const PoseSequence& pose, std::size_t stride);

// Pose tensors travel as TNSR files of shape [T, J, 3].
PoseSequence load_pose(const std::filesystem::path& tnsr_path, const JointMap& joints);
void save_pose(const std::filesystem::path& tnsr_path, const PoseSequence& pose);

void save_angles(const std::filesystem::path& json_path, const RotationAngles& angles,
                 const std::vector<std::size_t>& kept_frames);

} // namespace adlfusion
