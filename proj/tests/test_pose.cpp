#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "adlfusion/errors.hpp"
#include "adlfusion/pose.hpp"
#include "adlfusion/rng.hpp"

using namespace adlfusion;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

JointMap torso_map() {
    JointMap m;
    m.left_shoulder = 1;
    m.right_shoulder = 2;
    m.left_hip = 3;
    m.right_hip = 4;
    return m;
}

// Upright subject facing the camera: torso joints lie in the z = 0 plane
// with left on +x, so both measured angles are exactly zero.  Non-torso
// joints carry arbitrary jitter; the rotations are rigid, so they do not
// influence the measured angles.
PoseSequence frontal_pose(std::size_t frames, std::size_t joints, Rng& rng) {
    DenseTensor data({frames, joints, 3});
    PoseSequence pose(std::move(data), torso_map());
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t j = 0; j < joints; ++j) {
            pose.at(t, j, 0) = rng.uniform(-0.5, 0.5);
            pose.at(t, j, 1) = rng.uniform(0.0, 1.8);
            pose.at(t, j, 2) = rng.uniform(-0.3, 0.3);
        }
        pose.at(t, 1, 0) = 0.25;
        pose.at(t, 1, 1) = 1.4;
        pose.at(t, 1, 2) = 0.0;
        pose.at(t, 2, 0) = -0.2;
        pose.at(t, 2, 1) = 1.4;
        pose.at(t, 2, 2) = 0.0;
        pose.at(t, 3, 0) = 0.12;
        pose.at(t, 3, 1) = 0.9;
        pose.at(t, 3, 2) = 0.0;
        pose.at(t, 4, 0) = -0.12;
        pose.at(t, 4, 1) = 0.9;
        pose.at(t, 4, 2) = 0.0;
    }
    return pose;
}

double joint_distance(const PoseSequence& p, std::size_t t, std::size_t a, std::size_t b) {
    double dx = p.at(t, a, 0) - p.at(t, b, 0);
    double dy = p.at(t, a, 1) - p.at(t, b, 1);
    double dz = p.at(t, a, 2) - p.at(t, b, 2);
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct TempDir {
    fs::path path;
    TempDir(const char* tag) {
        path = fs::temp_directory_path() / (std::string("adlfusion_pose_") + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("y rotation angle matches the torso formula") {
    Rng rng(1);
    PoseSequence pose = frontal_pose(1, 6, rng);
    pose.at(0, 1, 0) = 1.0;
    pose.at(0, 1, 2) = 0.5;
    pose.at(0, 2, 0) = 0.0;
    pose.at(0, 2, 2) = 0.1;
    pose.at(0, 4, 0) = 0.2;
    pose.at(0, 4, 2) = 0.3;
    double expected = std::atan2(0.5 - (0.1 + 0.3) / 2.0, 1.0 - (0.0 + 0.2) / 2.0);
    CHECK(compute_y_rotation(pose, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("z rotation angle averages shoulder and hip tilts") {
    Rng rng(2);
    PoseSequence pose = frontal_pose(1, 6, rng);
    pose.at(0, 1, 0) = 0.4;
    pose.at(0, 1, 1) = 1.5;
    pose.at(0, 2, 0) = -0.3;
    pose.at(0, 2, 1) = 1.2;
    pose.at(0, 3, 0) = 0.15;
    pose.at(0, 3, 1) = 0.95;
    pose.at(0, 4, 0) = -0.1;
    pose.at(0, 4, 1) = 0.85;
    double shoulders = std::atan2(1.5 - 1.2, 0.4 + 0.3);
    double hips = std::atan2(0.95 - 0.85, 0.15 + 0.1);
    CHECK(compute_z_rotation(pose, 0) ==
          doctest::Approx(0.5 * (shoulders + hips)).epsilon(1e-15));
}

TEST_CASE("rotation helpers measure back the applied angle") {
    Rng rng(3);
    for (double theta : {-2.5, -0.7, 0.0, 0.3, 1.9}) {
        PoseSequence pose = frontal_pose(2, 6, rng);
        rotate_y_all(pose, theta);
        CHECK(compute_y_rotation(pose, 0) == doctest::Approx(theta).epsilon(1e-12));
    }
    for (double gamma : {-0.6, 0.0, 0.45}) {
        PoseSequence pose = frontal_pose(2, 6, rng);
        rotate_z_frame(pose, 1, gamma);
        CHECK(compute_z_rotation(pose, 1) == doctest::Approx(gamma).epsilon(1e-12));
        CHECK(compute_z_rotation(pose, 0) == doctest::Approx(0.0));
    }
}

TEST_CASE("degenerate torsos are rejected") {
    Rng rng(4);
    PoseSequence pose = frontal_pose(1, 6, rng);
    // Collapse the left shoulder onto the right-side midpoint.
    pose.at(0, 1, 0) = 0.5 * (pose.at(0, 2, 0) + pose.at(0, 4, 0));
    pose.at(0, 1, 2) = 0.5 * (pose.at(0, 2, 2) + pose.at(0, 4, 2));
    CHECK_THROWS_AS((void)compute_y_rotation(pose, 0), DegeneratePoseError);

    PoseSequence pose2 = frontal_pose(1, 6, rng);
    pose2.at(0, 2, 0) = pose2.at(0, 1, 0);
    pose2.at(0, 2, 1) = pose2.at(0, 1, 1);
    CHECK_THROWS_AS((void)compute_z_rotation(pose2, 0), DegeneratePoseError);

    PoseSequence pose3 = frontal_pose(3, 6, rng);
    pose3.at(2, 5, 1) = std::nan("");
    bool threw = false;
    try {
        (void)normalize_sequence(pose3);
    } catch (const DegeneratePoseError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("pose sequences validate their shape") {
    CHECK_THROWS_AS(PoseSequence(DenseTensor({3, 6}), torso_map()), DimensionError);
    CHECK_THROWS_AS(PoseSequence(DenseTensor({3, 6, 2}), torso_map()), DimensionError);
    JointMap tight = torso_map();
    tight.right_hip = 6;
    CHECK_THROWS_AS(PoseSequence(DenseTensor({3, 6, 3}), tight), ConfigError);
    CHECK_THROWS_AS((void)normalize_sequence(PoseSequence()), DataError);
}

TEST_CASE("normalization zeroes both measured angles and keeps the body rigid") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        PoseSequence pose = frontal_pose(4, 7, rng);
        for (std::size_t t = 0; t < 4; ++t)
            rotate_z_frame(pose, t, rng.uniform(-0.8, 0.8));
        rotate_y_all(pose, rng.uniform(-kPi + 0.05, kPi - 0.05));

        NormalizeResult result = normalize_sequence(pose);
        CHECK(std::fabs(compute_y_rotation(result.pose, 0)) < 1e-9);
        for (std::size_t t = 0; t < 4; ++t)
            CHECK(std::fabs(compute_z_rotation(result.pose, t)) < 1e-9);

        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t a = 0; a < 7; ++a)
                for (std::size_t b = a + 1; b < 7; ++b)
                    CHECK(joint_distance(pose, t, a, b) ==
                          doctest::Approx(joint_distance(result.pose, t, a, b)).epsilon(1e-9));
    }
}

TEST_CASE("normalization inverts known rotations of a frontal pose") {
    Rng rng(6);
    for (int trial = 0; trial < 25; ++trial) {
        PoseSequence base = frontal_pose(5, 7, rng);
        PoseSequence rotated = base;
        std::vector<double> gammas(5);
        for (std::size_t t = 0; t < 5; ++t) {
            gammas[t] = rng.uniform(-0.8, 0.8);
            rotate_z_frame(rotated, t, gammas[t]);
        }
        double theta = rng.uniform(-kPi + 0.05, kPi - 0.05);
        rotate_y_all(rotated, theta);

        NormalizeResult result = normalize_sequence(rotated);
        CHECK(result.angles.alpha_y == doctest::Approx(theta).epsilon(1e-9));
        for (std::size_t t = 0; t < 5; ++t)
            CHECK(result.angles.beta_z[t] == doctest::Approx(gammas[t]).epsilon(1e-9));
        for (std::size_t i = 0; i < base.frames.size(); ++i)
            CHECK(result.pose.frames[i] == doctest::Approx(base.frames[i]).epsilon(1e-6));
    }
}

TEST_CASE("later body turns survive normalization") {
    // The orientation is measured once at the first frame, so a subject who
    // turns mid-sequence keeps that turn after normalization.
    Rng rng(7);
    PoseSequence pose = frontal_pose(2, 6, rng);
    rotate_y_all(pose, 0.4);
    PoseSequence turned = pose;
    { // extra rotation on the second frame only
        PoseSequence one(DenseTensor({1, 6, 3}), torso_map());
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t c = 0; c < 3; ++c) one.at(0, j, c) = turned.at(1, j, c);
        rotate_y_all(one, 0.9);
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t c = 0; c < 3; ++c) turned.at(1, j, c) = one.at(0, j, c);
    }
    NormalizeResult result = normalize_sequence(turned);
    CHECK(result.angles.alpha_y == doctest::Approx(0.4).epsilon(1e-9));
    CHECK(compute_y_rotation(result.pose, 1) == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("temporal subsampling keeps every stride-th frame") {
    Rng rng(8);
    PoseSequence pose = frontal_pose(7, 6, rng);
    SubsampleResult sub = temporal_subsample(pose, 2);
    CHECK(sub.kept_frames == std::vector<std::size_t>{0, 2, 4, 6});
    CHECK(sub.pose.frame_count() == 4);
    CHECK_FALSE(sub.single_frame_warning);
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(sub.pose.at(k, j, 0) == pose.at(sub.kept_frames[k], j, 0));

    SubsampleResult tail = temporal_subsample(pose, 10);
    CHECK(tail.kept_frames == std::vector<std::size_t>{0});
    CHECK(tail.single_frame_warning);

    CHECK_THROWS_AS((void)temporal_subsample(pose, 0), ConfigError);
}

TEST_CASE("pose and joint map files round-trip") {
    TempDir dir("io");
    Rng rng(9);
    PoseSequence pose = frontal_pose(3, 6, rng);
    fs::path tnsr = dir.path / "pose.tnsr";
    save_pose(tnsr, pose);
    PoseSequence back = load_pose(tnsr, torso_map());
    CHECK(back.frame_count() == 3);
    CHECK(back.joint_count() == 6);
    for (std::size_t i = 0; i < pose.frames.size(); ++i)
        CHECK(back.frames[i] == static_cast<double>(static_cast<float>(pose.frames[i])));

    fs::path joints = dir.path / "joints.json";
    save_joint_map(joints, torso_map());
    JointMap loaded = load_joint_map(joints);
    CHECK(loaded.left_shoulder == 1);
    CHECK(loaded.right_hip == 4);

    std::ofstream(dir.path / "bad.json") << "{ \"left_shoulder\": 1 ";
    CHECK_THROWS_AS((void)load_joint_map(dir.path / "bad.json"), DataError);
    std::ofstream(dir.path / "missing.json") << "{ \"left_shoulder\": 1 }";
    CHECK_THROWS_AS((void)load_joint_map(dir.path / "missing.json"), DataError);
    CHECK_THROWS_AS((void)load_joint_map(dir.path / "absent.json"), DataError);

    fs::path angles_path = dir.path / "angles.json";
    RotationAngles angles;
    angles.alpha_y = 0.25;
    angles.beta_z = {0.1, -0.2, 0.3};
    save_angles(angles_path, angles, {0, 2, 4});
    std::ifstream in(angles_path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("alpha_y") != std::string::npos);
    CHECK(text.find("beta_z") != std::string::npos);
    CHECK(text.find("kept_frames") != std::string::npos);
}
