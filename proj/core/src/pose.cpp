#include "adlfusion/pose.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "adlfusion/errors.hpp"

namespace adlfusion {

namespace {

// Below this extent a torso or joint pair is considered collapsed and the
// angle undefined.
constexpr double kDegenerate = 1e-9;

void check_frame_finite(const PoseSequence& pose, std::size_t t) {
    std::size_t joints = pose.joint_count();
    for (std::size_t j = 0; j < joints; ++j)
        for (std::size_t c = 0; c < 3; ++c)
            if (!std::isfinite(pose.at(t, j, c)))
                throw DegeneratePoseError("frame " + std::to_string(t) +
                                          " contains a non-finite joint coordinate (joint " +
                                          std::to_string(j) + ")");
}

double pair_angle(const PoseSequence& pose, std::size_t t, std::size_t left, std::size_t right,
                  const char* what) {
    double dx = pose.at(t, left, 0) - pose.at(t, right, 0);
    double dy = pose.at(t, left, 1) - pose.at(t, right, 1);
    if (std::abs(dx) < kDegenerate && std::abs(dy) < kDegenerate)
        throw DegeneratePoseError(std::string("coincident ") + what + " pair at frame " +
                                  std::to_string(t));
    return std::atan2(dy, dx);
}

} // namespace

void JointMap::validate(std::size_t joint_count) const {
    auto check = [&](std::size_t idx, const char* name) {
        if (idx >= joint_count)
            throw ConfigError(std::string("joint map: ") + name + " index " +
                              std::to_string(idx) + " out of range for " +
                              std::to_string(joint_count) + " joints");
    };
    check(left_shoulder, "left_shoulder");
    check(right_shoulder, "right_shoulder");
    check(left_hip, "left_hip");
    check(right_hip, "right_hip");
}

JointMap load_joint_map(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open joint map " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed joint map " + json_path.string() + ": " + e.what());
    }
    JointMap map;
    try {
        map.left_shoulder = j.at("left_shoulder").get<std::size_t>();
        map.right_shoulder = j.at("right_shoulder").get<std::size_t>();
        map.left_hip = j.at("left_hip").get<std::size_t>();
        map.right_hip = j.at("right_hip").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("joint map " + json_path.string() +
                        " must name left_shoulder/right_shoulder/left_hip/right_hip: " + e.what());
    }
    return map;
}

void save_joint_map(const std::filesystem::path& json_path, const JointMap& map) {
    nlohmann::json j{{"left_shoulder", map.left_shoulder},
                     {"right_shoulder", map.right_shoulder},
                     {"left_hip", map.left_hip},
                     {"right_hip", map.right_hip}};
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write joint map " + json_path.string());
    out << j.dump(2) << '\n';
}

PoseSequence::PoseSequence(DenseTensor frames_, JointMap joints_)
    : frames(std::move(frames_)), joints(joints_) {
    if (frames.rank() != 3 || frames.dim(2) != 3)
        throw DimensionError("pose sequence must have shape [T, J, 3], got " +
                             shape_string(frames.shape()));
    joints.validate(frames.dim(1));
}

double& PoseSequence::at(std::size_t t, std::size_t j, std::size_t c) {
    return frames[(t * frames.dim(1) + j) * 3 + c];
}

double PoseSequence::at(std::size_t t, std::size_t j, std::size_t c) const {
    return frames[(t * frames.dim(1) + j) * 3 + c];
}

double compute_y_rotation(const PoseSequence& pose, std::size_t frame) {
    if (frame >= pose.frame_count())
        throw DimensionError("compute_y_rotation: frame " + std::to_string(frame) +
                             " out of range");
    const JointMap& m = pose.joints;
    double num = pose.at(frame, m.left_shoulder, 2) -
                 0.5 * (pose.at(frame, m.right_shoulder, 2) + pose.at(frame, m.right_hip, 2));
    double den = pose.at(frame, m.left_shoulder, 0) -
                 0.5 * (pose.at(frame, m.right_shoulder, 0) + pose.at(frame, m.right_hip, 0));
    if (std::abs(num) < kDegenerate && std::abs(den) < kDegenerate)
        throw DegeneratePoseError("zero-length torso at frame " + std::to_string(frame) +
                                  "; body orientation undefined");
    return std::atan2(num, den);
}

double compute_z_rotation(const PoseSequence& pose, std::size_t frame) {
    if (frame >= pose.frame_count())
        throw DimensionError("compute_z_rotation: frame " + std::to_string(frame) +
                             " out of range");
    const JointMap& m = pose.joints;
    double beta_shoulders = pair_angle(pose, frame, m.left_shoulder, m.right_shoulder, "shoulder");
    double beta_hips = pair_angle(pose, frame, m.left_hip, m.right_hip, "hip");
    return 0.5 * (beta_shoulders + beta_hips);
}

void rotate_y_all(PoseSequence& pose, double angle) {
    double c = std::cos(angle), s = std::sin(angle);
    std::size_t frames = pose.frame_count(), joints = pose.joint_count();
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t j = 0; j < joints; ++j) {
            double x = pose.at(t, j, 0), z = pose.at(t, j, 2);
            pose.at(t, j, 0) = x * c - z * s;
            pose.at(t, j, 2) = x * s + z * c;
        }
}

void rotate_z_frame(PoseSequence& pose, std::size_t frame, double angle) {
    double c = std::cos(angle), s = std::sin(angle);
    std::size_t joints = pose.joint_count();
    for (std::size_t j = 0; j < joints; ++j) {
        double x = pose.at(frame, j, 0), y = pose.at(frame, j, 1);
        pose.at(frame, j, 0) = x * c - y * s;
        pose.at(frame, j, 1) = x * s + y * c;
    }
}

NormalizeResult normalize_sequence(const PoseSequence& pose) {
    if (pose.frame_count() == 0)
        throw DataError("normalize_sequence: empty pose sequence");
    NormalizeResult result;
    result.pose = pose;
    std::size_t frames = pose.frame_count();
    for (std::size_t t = 0; t < frames; ++t) check_frame_finite(result.pose, t);

    result.angles.alpha_y = compute_y_rotation(result.pose, 0);
    rotate_y_all(result.pose, -result.angles.alpha_y);

    result.angles.beta_z.resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        double beta = compute_z_rotation(result.pose, t);
        result.angles.beta_z[t] = beta;
        rotate_z_frame(result.pose, t, -beta);
    }
    return result;
}

SubsampleResult temporal_subsample(const PoseSequence& pose, std::size_t stride) {
    if (stride == 0) throw ConfigError("temporal_subsample: stride must be positive");
    SubsampleResult result;
    std::size_t frames = pose.frame_count();
    for (std::size_t t = 0; t < frames; t += stride) result.kept_frames.push_back(t);
    result.single_frame_warning = stride >= frames && frames > 1;

    DenseTensor out({result.kept_frames.size(), pose.joint_count(), 3});
    std::size_t frame_len = pose.joint_count() * 3;
    for (std::size_t i = 0; i < result.kept_frames.size(); ++i) {
        const double* src = pose.frames.data() + result.kept_frames[i] * frame_len;
        std::copy(src, src + frame_len, out.data() + i * frame_len);
    }
    result.pose = PoseSequence(std::move(out), pose.joints);
    return result;
}

PoseSequence load_pose(const std::filesystem::path& tnsr_path, const JointMap& joints) {
    DenseTensor frames = read_tnsr(tnsr_path);
    if (frames.rank() != 3 || frames.dim(2) != 3)
        throw DataError("pose tensor " + tnsr_path.string() + " must have shape [T, J, 3], got " +
                        shape_string(frames.shape()));
    return PoseSequence(std::move(frames), joints);
}

void save_pose(const std::filesystem::path& tnsr_path, const PoseSequence& pose) {
    write_tnsr(tnsr_path, pose.frames);
}

void save_angles(const std::filesystem::path& json_path, const RotationAngles& angles,
                 const std::vector<std::size_t>& kept_frames) {
    nlohmann::json j{{"alpha_y", angles.alpha_y},
                     {"beta_z", angles.beta_z},
                     {"kept_frames", kept_frames}};
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write angles file " + json_path.string());
    out << j.dump(2) << '\n';
}

} // namespace adlfusion
