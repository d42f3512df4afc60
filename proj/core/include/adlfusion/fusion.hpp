#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "adlfusion/gcn.hpp"
#include "adlfusion/object_context.hpp"
#include "adlfusion/ops.hpp"
#include "adlfusion/rng.hpp"
#include "adlfusion/tensor.hpp"

namespace adlfusion {

// Dimensions and defaults of the full recognition model.
struct ModelConfig {
    std::size_t pose_frames = 32;    // pose sequence length fed to the GCN
    std::size_t feature_frames = 8;  // temporal length of the visual feature map
    std::size_t joints = 13;
    std::size_t grid_h = 7, grid_w = 7;
    std::size_t channels = 1024;     // visual feature channels
    std::size_t groups = 8;          // object groups
    std::size_t heads = 8;           // cross-attention heads
    std::size_t classes = 35;

    std::size_t gcn_hidden = 128;
    std::size_t gcn_out = 64;        // per-joint pose feature width
    std::size_t mlp_hidden = 64;     // shared per-frame MLP
    std::size_t attention_hidden = 16;
    std::size_t attention_conv_kernel = 3;
    std::array<std::size_t, 2> classifier_hidden{256, 128};
    double dropout_rate = 0.3;

    std::size_t pose_dim() const { return 3 * joints; }
    std::size_t pool_factor() const { return pose_frames / feature_frames; }
    std::size_t head_dim() const { return channels / heads; }
    std::size_t token_count() const { return feature_frames * grid_h * grid_w; }
    std::size_t fused_dim() const { return groups * channels + channels + gcn_out; }

    void validate() const; // throws ConfigError
};

// Pose-driven temporal attention: 1-D temporal convolution over the shared
// MLP features, mean pooling down to the feature-frame rate, a small dense
// block emitting one score per time step, and a softmax.
struct TemporalAttentionBlock {
    Parameter conv_w; // [kernel, d, d]
    Parameter conv_b; // [d]
    ops::DenseLayer hidden; // d -> attention_hidden, relu
    ops::DenseLayer score;  // attention_hidden -> 1

    TemporalAttentionBlock() = default;
    TemporalAttentionBlock(std::size_t d, std::size_t kernel, std::size_t hidden_dim);
    void init(Rng& rng);
    std::vector<Parameter*> parameters();
};

// Temporal 1-D convolution with zero padding, channels preserved.
DenseTensor temporal_conv1d(const DenseTensor& x, const Parameter& w, const Parameter& b);
void temporal_conv1d_backward(const DenseTensor& x, const DenseTensor& dy, Parameter& w,
                              Parameter& b, DenseTensor* dx);

// Multi-head cross attention from group queries to visual tokens.
struct CrossAttentionBlock {
    std::size_t heads = 0;
    std::vector<Parameter> wq, wk, wv; // per head [C, head_dim]
    Parameter wo;                      // [C, C]

    CrossAttentionBlock() = default;
    CrossAttentionBlock(std::size_t channels, std::size_t heads);
    std::size_t channels() const { return wo.value.dim(0); }
    std::size_t head_dim() const { return channels() / heads; }
    void init(Rng& rng);
    std::vector<Parameter*> parameters();
};

struct CrossAttentionTrace {
    std::vector<DenseTensor> qh, kh, vh; // per head: [G, dh], [N, dh], [N, dh]
    std::vector<DenseTensor> probs;      // per head: [G, N], rows softmaxed
    DenseTensor concat;                  // [G, C]
};

// queries [G, C], tokens [N, C] -> attended [G, C].
DenseTensor cross_attention(const DenseTensor& queries, const DenseTensor& tokens,
                            const CrossAttentionBlock& block, CrossAttentionTrace* trace);
void cross_attention_backward(const DenseTensor& queries, const DenseTensor& tokens,
                              const CrossAttentionTrace& trace, const DenseTensor& d_attended,
                              CrossAttentionBlock& block, DenseTensor* d_queries,
                              DenseTensor* d_tokens);

// Free building blocks (all shapes as produced by FusionModel::forward).
DenseTensor joint_mean_pool(const DenseTensor& gcn_out);              // [T, J, C] -> [T, C]
DenseTensor flatten_tokens(const DenseTensor& f);                     // [T, H, W, C] -> [T*H*W, C]
DenseTensor unflatten_tokens(const DenseTensor& tokens, std::size_t t, std::size_t h,
                             std::size_t w);
DenseTensor modulate(const DenseTensor& f, const DenseTensor& alpha); // scales frame t by alpha_t

struct MaskedQueryResult {
    DenseTensor q; // [C]
    bool active = false;
    double mask_sum = 0.0;
};

// Masked average pool over the modulated feature map: mean over all frames
// of the cells the mask selects, denominator (sum of mask) * T.  An empty
// mask yields a zero query flagged inactive.
MaskedQueryResult masked_query(const DenseTensor& f_mod, const GridMask& mask);

// Everything backward needs from one forward pass.
struct ForwardTrace {
    // Inputs (kept by value; desk-scale tensors are small).
    DenseTensor pose;      // [T_p, J, 3]
    DenseTensor features;  // [T, H, W, C]
    std::vector<GridMask> masks;

    GcnTrace gcn;
    DenseTensor h_seq;        // [T_p, C_p]  per-frame joint mean
    DenseTensor mlp_hidden;   // [T_p, mlp_hidden]
    DenseTensor mlp_out;      // [T_p, 3J]  shared features, no pose residual
    DenseTensor m_residual;   // [T_p, 3J]  mlp_out + flattened pose (aux branch only)
    DenseTensor aux_input;    // [J, 3, T_p]
    DenseTensor aux_pred;     // [J, 3]

    DenseTensor conv_out;     // [T_p, 3J]
    DenseTensor pooled;       // [T, 3J]
    DenseTensor attn_hidden;  // [T, attention_hidden]
    DenseTensor attn_scores;  // [T]
    DenseTensor alpha;        // [T]

    DenseTensor f_mod;        // [T, H, W, C]
    DenseTensor queries;      // [G, C]
    std::vector<MaskedQueryResult> query_info;
    CrossAttentionTrace cross;
    DenseTensor attended;     // [G, C]

    DenseTensor pose_pooled;  // [C_p]  temporal mean of h_seq
    DenseTensor visual_gap;   // [C]    global average pool of f_mod
    DenseTensor fused_in;     // [G*C + C + C_p]
    DenseTensor cls_h1, cls_h2;
    ops::DropoutMask drop1, drop2;
    DenseTensor logits;       // [classes]
    DenseTensor probs;        // [classes]
};

// The full multimodal model: skeleton GCN, shared MLP with auxiliary
// future-pose head, pose-driven temporal attention over the visual stream,
// object-group cross attention and the fused classifier.
class FusionModel {
public:
    FusionModel(ModelConfig cfg, const SkeletonGraph& graph);

    const ModelConfig& config() const { return cfg_; }
    const SkeletonGraph& graph() const { return graph_; }

    void init_params(std::uint64_t seed);
    std::vector<Parameter*> parameters(); // stable order
    void zero_grads();
    void reset_adam_state();

    // dropout_rng == nullptr -> evaluation mode (dropout is the identity).
    ForwardTrace forward(const DenseTensor& pose, const DenseTensor& features,
                         std::span<const GridMask> masks, Rng* dropout_rng = nullptr) const;

    // Accumulates parameter gradients from upstream gradients of the class
    // probabilities and the auxiliary pose prediction (either may be empty
    // to skip that head).
    void backward(const ForwardTrace& trace, const DenseTensor& d_probs,
                  const DenseTensor& d_aux_pred);

    void save(const std::filesystem::path& dir) const;
    static FusionModel load(const std::filesystem::path& dir);

private:
    ModelConfig cfg_;
    SkeletonGraph graph_;
    GcnStack gcn_;
    ops::DenseLayer mlp1_, mlp2_;
    TemporalAttentionBlock temporal_;
    Parameter aux_conv_w_; // [T_p, 1]
    CrossAttentionBlock cross_;
    ops::DenseLayer cls1_, cls2_, cls_out_;
};

} // namespace adlfusion
