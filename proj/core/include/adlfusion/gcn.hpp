#pragma once

#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

#include "adlfusion/ops.hpp"
#include "adlfusion/tensor.hpp"

namespace adlfusion {

// Skeleton connectivity with weighted, fully dense adjacency: connected
// joints get `connected_weight`, disconnected pairs still get
// `disconnected_weight` (so information flows between all joints), diagonal
// stays zero.
struct SkeletonGraph {
    std::size_t joints = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    double connected_weight = 5.0;
    double disconnected_weight = 2.0;
    DenseTensor adjacency; // [J, J]
};

SkeletonGraph build_adjacency(std::vector<std::pair<std::size_t, std::size_t>> edges,
                              std::size_t joints, double connected_weight = 5.0,
                              double disconnected_weight = 2.0);

// Symmetric degree normalization with self loops:
// A_hat = D^{-1/2} (A + I) D^{-1/2}, D = diag(rowsum(A + I)).
DenseTensor normalize_adjacency(const SkeletonGraph& graph);

// Default 13-joint upper/lower body skeleton: head, neck, spine, left/right
// shoulder, elbow, wrist, hip, knee.  The joint budget stops at the knees.
enum Joint13 : std::size_t {
    kHead = 0, kNeck, kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow,
    kLeftWrist, kRightWrist, kSpine, kLeftHip, kRightHip, kLeftKnee, kRightKnee,
};
SkeletonGraph default_skeleton_13();

// Simple chain skeleton (joint i bonded to i+1); used for reduced-size
// configurations and synthetic data.
SkeletonGraph chain_skeleton(std::size_t joints);

// Graph spec file: {"joints": J, "edges": [[i, j], ...],
//                   "alpha": connected, "beta": disconnected}.
SkeletonGraph load_graph(const std::filesystem::path& json_path);
void save_graph(const std::filesystem::path& json_path, const SkeletonGraph& graph);

// Two graph-convolution layers with ReLU plus a linear residual projection
// of the raw coordinates, applied independently per frame:
//   H1 = relu(A_hat X W1), H2 = relu(A_hat H1 W2), out = H2 + X Wres.
struct GcnStack {
    DenseTensor a_hat;   // [J, J], symmetric
    Parameter w1;        // [3, hidden]
    Parameter w2;        // [hidden, out]
    Parameter w_res;     // [3, out]

    GcnStack() = default;
    GcnStack(const DenseTensor& a_hat, std::size_t hidden, std::size_t out,
             const std::string& name_prefix = "gcn");

    std::size_t joint_count() const { return a_hat.dim(0); }
    std::size_t hidden_dim() const { return w1.value.dim(1); }
    std::size_t out_dim() const { return w2.value.dim(1); }
    void init(Rng& rng);
    std::vector<Parameter*> parameters();
};

struct GcnTrace {
    DenseTensor ax;   // [T, J, 3]       A_hat X
    DenseTensor h1;   // [T, J, hidden]  relu output of layer 1
    DenseTensor ah1;  // [T, J, hidden]  A_hat H1
    DenseTensor h2;   // [T, J, out]     relu output of layer 2, pre-residual
    DenseTensor out;  // [T, J, out]
};

// pose: [T, J, 3] -> features [T, J, out].  The trace holds what backward
// needs; pass null when gradients are not wanted.
DenseTensor gcn_forward(const DenseTensor& pose, const GcnStack& stack, GcnTrace* trace);

// Accumulates parameter gradients; d_pose (same shape as the input) is
// optional.
void gcn_backward(const DenseTensor& pose, const GcnTrace& trace, const DenseTensor& d_out,
                  GcnStack& stack, DenseTensor* d_pose);

} // namespace adlfusion
