#include "adlfusion/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "adlfusion/errors.hpp"

namespace adlfusion {

SkeletonGraph build_adjacency(std::vector<std::pair<std::size_t, std::size_t>> edges,
                              std::size_t joints, double connected_weight,
                              double disconnected_weight) {
    if (joints == 0) throw ConfigError("build_adjacency: joint count must be positive");
    SkeletonGraph g;
    g.joints = joints;
    g.connected_weight = connected_weight;
    g.disconnected_weight = disconnected_weight;
    g.adjacency = DenseTensor({joints, joints});
    for (std::size_t i = 0; i < joints; ++i)
        for (std::size_t j = 0; j < joints; ++j)
            g.adjacency[i * joints + j] = i == j ? 0.0 : disconnected_weight;
    for (const auto& [a, b] : edges) {
        if (a >= joints || b >= joints)
            throw ConfigError("build_adjacency: edge (" + std::to_string(a) + ", " +
                              std::to_string(b) + ") references a joint outside 0.." +
                              std::to_string(joints - 1));
        if (a == b)
            throw ConfigError("build_adjacency: self edge at joint " + std::to_string(a));
        g.adjacency[a * joints + b] = connected_weight;
        g.adjacency[b * joints + a] = connected_weight;
    }
    g.edges = std::move(edges);
    return g;
}

DenseTensor normalize_adjacency(const SkeletonGraph& graph) {
    std::size_t j = graph.joints;
    DenseTensor a_hat({j, j});
    std::vector<double> inv_sqrt_deg(j);
    for (std::size_t i = 0; i < j; ++i) {
        double deg = 1.0; // self loop
        for (std::size_t k = 0; k < j; ++k) deg += i == k ? 0.0 : graph.adjacency[i * j + k];
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
    // Fill the lower triangle and mirror so the result is exactly symmetric
    // regardless of rounding in the scale products.
    for (std::size_t i = 0; i < j; ++i)
        for (std::size_t k = 0; k <= i; ++k) {
            double a = graph.adjacency[i * j + k] + (i == k ? 1.0 : 0.0);
            double v = inv_sqrt_deg[i] * a * inv_sqrt_deg[k];
            a_hat[i * j + k] = v;
            a_hat[k * j + i] = v;
        }
    return a_hat;
}

SkeletonGraph default_skeleton_13() {
    std::vector<std::pair<std::size_t, std::size_t>> bones{
        {kHead, kNeck},
        {kNeck, kLeftShoulder},   {kNeck, kRightShoulder},
        {kLeftShoulder, kLeftElbow},  {kRightShoulder, kRightElbow},
        {kLeftElbow, kLeftWrist},     {kRightElbow, kRightWrist},
        {kNeck, kSpine},
        {kSpine, kLeftHip},       {kSpine, kRightHip},
        {kLeftHip, kLeftKnee},    {kRightHip, kRightKnee},
    };
    return build_adjacency(std::move(bones), 13);
}

SkeletonGraph chain_skeleton(std::size_t joints) {
    std::vector<std::pair<std::size_t, std::size_t>> bones;
    for (std::size_t i = 0; i + 1 < joints; ++i) bones.emplace_back(i, i + 1);
    return build_adjacency(std::move(bones), joints);
}

SkeletonGraph load_graph(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open graph spec " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed graph spec " + json_path.string() + ": " + e.what());
    }
    try {
        std::size_t joints = j.at("joints").get<std::size_t>();
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (const auto& e : j.at("edges"))
            edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
        double alpha = j.value("alpha", 5.0);
        double beta = j.value("beta", 2.0);
        return build_adjacency(std::move(edges), joints, alpha, beta);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("graph spec " + json_path.string() + " missing joints/edges: " + e.what());
    }
}

void save_graph(const std::filesystem::path& json_path, const SkeletonGraph& graph) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [a, b] : graph.edges) edges.push_back({a, b});
    nlohmann::json j{{"joints", graph.joints},
                     {"edges", edges},
                     {"alpha", graph.connected_weight},
                     {"beta", graph.disconnected_weight}};
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write graph spec " + json_path.string());
    out << j.dump(2) << '\n';
}

GcnStack::GcnStack(const DenseTensor& a_hat_, std::size_t hidden, std::size_t out,
                   const std::string& name_prefix)
    : a_hat(a_hat_),
      w1(name_prefix + ".w1", {3, hidden}),
      w2(name_prefix + ".w2", {hidden, out}),
      w_res(name_prefix + ".w_res", {3, out}) {
    if (a_hat.rank() != 2 || a_hat.dim(0) != a_hat.dim(1))
        throw DimensionError("GcnStack: normalized adjacency must be square, got " +
                             shape_string(a_hat.shape()));
}

void GcnStack::init(Rng& rng) {
    ops::glorot_init(w1.value, 3, hidden_dim(), rng);
    ops::glorot_init(w2.value, hidden_dim(), out_dim(), rng);
    ops::glorot_init(w_res.value, 3, out_dim(), rng);
}

std::vector<Parameter*> GcnStack::parameters() {
    return {&w1, &w2, &w_res};
}

DenseTensor gcn_forward(const DenseTensor& pose, const GcnStack& stack, GcnTrace* trace) {
    if (pose.rank() != 3 || pose.dim(2) != 3)
        throw DimensionError("gcn_forward expects pose of shape [T, J, 3], got " +
                             shape_string(pose.shape()));
    std::size_t frames = pose.dim(0), joints = pose.dim(1);
    if (joints != stack.joint_count())
        throw DimensionError("gcn_forward: pose has " + std::to_string(joints) +
                             " joints but adjacency is " + shape_string(stack.a_hat.shape()));
    std::size_t hidden = stack.hidden_dim(), out_dim = stack.out_dim();

    GcnTrace local;
    GcnTrace& tr = trace ? *trace : local;
    tr.ax = DenseTensor({frames, joints, 3});
    tr.h1 = DenseTensor({frames, joints, hidden});
    tr.ah1 = DenseTensor({frames, joints, hidden});
    tr.h2 = DenseTensor({frames, joints, out_dim});
    tr.out = DenseTensor({frames, joints, out_dim});

    const double* a = stack.a_hat.data();
    for (std::size_t t = 0; t < frames; ++t) {
        const double* x = pose.data() + t * joints * 3;
        double* ax = tr.ax.data() + t * joints * 3;
        double* h1 = tr.h1.data() + t * joints * hidden;
        double* ah1 = tr.ah1.data() + t * joints * hidden;
        double* h2 = tr.h2.data() + t * joints * out_dim;
        double* out = tr.out.data() + t * joints * out_dim;

        ops::mm_nn(a, x, ax, joints, joints, 3);
        ops::mm_nn(ax, stack.w1.value.data(), h1, joints, 3, hidden);
        for (std::size_t i = 0; i < joints * hidden; ++i) h1[i] = std::max(0.0, h1[i]);
        ops::mm_nn(a, h1, ah1, joints, joints, hidden);
        ops::mm_nn(ah1, stack.w2.value.data(), h2, joints, hidden, out_dim);
        for (std::size_t i = 0; i < joints * out_dim; ++i) h2[i] = std::max(0.0, h2[i]);
        // Residual projection keeps the raw coordinates reachable after the
        // two smoothing layers.
        std::copy(h2, h2 + joints * out_dim, out);
        ops::mm_nn(x, stack.w_res.value.data(), out, joints, 3, out_dim, /*accumulate=*/true);
    }
    return tr.out;
}

void gcn_backward(const DenseTensor& pose, const GcnTrace& trace, const DenseTensor& d_out,
                  GcnStack& stack, DenseTensor* d_pose) {
    std::size_t frames = pose.dim(0), joints = pose.dim(1);
    std::size_t hidden = stack.hidden_dim(), out_dim = stack.out_dim();
    if (!d_out.same_shape(trace.out))
        throw DimensionError("gcn_backward: gradient shape " + shape_string(d_out.shape()) +
                             " does not match forward output " + shape_string(trace.out.shape()));

    const double* a = stack.a_hat.data(); // symmetric, so A^T = A
    DenseTensor dz2({joints, out_dim}), dah1({joints, hidden}), dh1({joints, hidden});
    DenseTensor dz1({joints, hidden}), dax({joints, 3});
    for (std::size_t t = 0; t < frames; ++t) {
        const double* x = pose.data() + t * joints * 3;
        const double* ax = trace.ax.data() + t * joints * 3;
        const double* h1 = trace.h1.data() + t * joints * hidden;
        const double* ah1 = trace.ah1.data() + t * joints * hidden;
        const double* h2 = trace.h2.data() + t * joints * out_dim;
        const double* dout = d_out.data() + t * joints * out_dim;

        // Residual branch.
        ops::mm_tn(x, dout, stack.w_res.grad.data(), 3, joints, out_dim, true);
        if (d_pose)
            ops::mm_nt(dout, stack.w_res.value.data(), d_pose->data() + t * joints * 3,
                       joints, out_dim, 3, true);

        // Layer 2.
        for (std::size_t i = 0; i < joints * out_dim; ++i)
            dz2[i] = h2[i] > 0.0 ? dout[i] : 0.0;
        ops::mm_tn(ah1, dz2.data(), stack.w2.grad.data(), hidden, joints, out_dim, true);
        ops::mm_nt(dz2.data(), stack.w2.value.data(), dah1.data(), joints, out_dim, hidden);
        ops::mm_nn(a, dah1.data(), dh1.data(), joints, joints, hidden);

        // Layer 1.
        for (std::size_t i = 0; i < joints * hidden; ++i)
            dz1[i] = h1[i] > 0.0 ? dh1[i] : 0.0;
        ops::mm_tn(ax, dz1.data(), stack.w1.grad.data(), 3, joints, hidden, true);
        ops::mm_nt(dz1.data(), stack.w1.value.data(), dax.data(), joints, hidden, 3);
        if (d_pose)
            ops::mm_nn(a, dax.data(), d_pose->data() + t * joints * 3, joints, joints, 3, true);
    }
}

} // namespace adlfusion
