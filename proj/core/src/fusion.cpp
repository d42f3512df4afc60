#include "adlfusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "adlfusion/errors.hpp"
#include "json_util.hpp"

namespace adlfusion {

void ModelConfig::validate() const {
    if (pose_frames == 0 || feature_frames == 0 || joints == 0 || grid_h == 0 || grid_w == 0 ||
        channels == 0 || groups == 0 || heads == 0)
        throw ConfigError("model config: all dimensions must be positive");
    if (classes < 2)
        throw ConfigError("model config: need at least 2 classes, got " + std::to_string(classes));
    if (pose_frames % feature_frames != 0)
        throw ConfigError("model config: pose_frames (" + std::to_string(pose_frames) +
                          ") must be an integer multiple of feature_frames (" +
                          std::to_string(feature_frames) + ")");
    if (channels % heads != 0)
        throw ConfigError("model config: channels (" + std::to_string(channels) +
                          ") must be divisible by heads (" + std::to_string(heads) + ")");
    if (gcn_hidden == 0 || gcn_out == 0 || mlp_hidden == 0 || attention_hidden == 0)
        throw ConfigError("model config: internal layer widths must be positive");
    if (attention_conv_kernel == 0 || attention_conv_kernel % 2 == 0)
        throw ConfigError("model config: attention_conv_kernel must be odd");
    if (classifier_hidden[0] == 0 || classifier_hidden[1] == 0)
        throw ConfigError("model config: classifier widths must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError("model config: dropout_rate must be in [0, 1)");
}

TemporalAttentionBlock::TemporalAttentionBlock(std::size_t d, std::size_t kernel,
                                               std::size_t hidden_dim)
    : conv_w("temporal.conv.w", {kernel, d, d}),
      conv_b("temporal.conv.b", {d}),
      hidden("temporal.hidden", d, hidden_dim, ops::Activation::relu),
      score("temporal.score", hidden_dim, 1, ops::Activation::identity) {}

void TemporalAttentionBlock::init(Rng& rng) {
    std::size_t d = conv_b.value.dim(0);
    std::size_t kernel = conv_w.value.dim(0);
    ops::glorot_init(conv_w.value, kernel * d, d, rng);
    conv_b.value.fill(0.0);
    hidden.init(rng);
    score.init(rng);
}

std::vector<Parameter*> TemporalAttentionBlock::parameters() {
    return {&conv_w, &conv_b, &hidden.w, &hidden.b, &score.w, &score.b};
}

DenseTensor temporal_conv1d(const DenseTensor& x, const Parameter& w, const Parameter& b) {
    if (x.rank() != 2)
        throw DimensionError("temporal_conv1d expects [T, d] input, got " +
                             shape_string(x.shape()));
    std::size_t t_len = x.dim(0), d = x.dim(1);
    std::size_t kernel = w.value.dim(0);
    if (w.value.rank() != 3 || w.value.dim(1) != d || w.value.dim(2) != d)
        throw DimensionError("temporal_conv1d: weight shape " + shape_string(w.value.shape()) +
                             " does not match channel width " + std::to_string(d));
    long pad = static_cast<long>(kernel / 2);
    DenseTensor y({t_len, d});
    for (std::size_t t = 0; t < t_len; ++t) {
        double* yt = y.data() + t * d;
        std::copy(b.value.data(), b.value.data() + d, yt);
        for (std::size_t k = 0; k < kernel; ++k) {
            long src = static_cast<long>(t) + static_cast<long>(k) - pad;
            if (src < 0 || src >= static_cast<long>(t_len)) continue;
            const double* xs = x.data() + static_cast<std::size_t>(src) * d;
            const double* wk = w.value.data() + k * d * d;
            // yt += xs . wk  (wk is [d_in, d_out])
            for (std::size_t i = 0; i < d; ++i) {
                double xv = xs[i];
                const double* wr = wk + i * d;
                for (std::size_t o = 0; o < d; ++o) yt[o] += xv * wr[o];
            }
        }
    }
    return y;
}

void temporal_conv1d_backward(const DenseTensor& x, const DenseTensor& dy, Parameter& w,
                              Parameter& b, DenseTensor* dx) {
    std::size_t t_len = x.dim(0), d = x.dim(1);
    std::size_t kernel = w.value.dim(0);
    if (!dy.same_shape(x))
        throw DimensionError("temporal_conv1d_backward: gradient shape " +
                             shape_string(dy.shape()) + " does not match input " +
                             shape_string(x.shape()));
    long pad = static_cast<long>(kernel / 2);
    double* bg = b.grad.data();
    for (std::size_t t = 0; t < t_len; ++t) {
        const double* dyt = dy.data() + t * d;
        for (std::size_t o = 0; o < d; ++o) bg[o] += dyt[o];
        for (std::size_t k = 0; k < kernel; ++k) {
            long src = static_cast<long>(t) + static_cast<long>(k) - pad;
            if (src < 0 || src >= static_cast<long>(t_len)) continue;
            const double* xs = x.data() + static_cast<std::size_t>(src) * d;
            double* wg = w.grad.data() + k * d * d;
            for (std::size_t i = 0; i < d; ++i) {
                double xv = xs[i];
                double* wgr = wg + i * d;
                for (std::size_t o = 0; o < d; ++o) wgr[o] += xv * dyt[o];
            }
            if (dx) {
                double* dxs = dx->data() + static_cast<std::size_t>(src) * d;
                const double* wk = w.value.data() + k * d * d;
                for (std::size_t i = 0; i < d; ++i) {
                    const double* wr = wk + i * d;
                    double acc = 0.0;
                    for (std::size_t o = 0; o < d; ++o) acc += wr[o] * dyt[o];
                    dxs[i] += acc;
                }
            }
        }
    }
}

CrossAttentionBlock::CrossAttentionBlock(std::size_t channels, std::size_t heads_)
    : heads(heads_), wo("cross.wo", {channels, channels}) {
    if (heads == 0 || channels % heads != 0)
        throw ConfigError("cross attention: channels (" + std::to_string(channels) +
                          ") must be divisible by heads (" + std::to_string(heads) + ")");
    std::size_t dh = channels / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        wq.emplace_back("cross.wq.h" + std::to_string(h), std::vector<std::size_t>{channels, dh});
        wk.emplace_back("cross.wk.h" + std::to_string(h), std::vector<std::size_t>{channels, dh});
        wv.emplace_back("cross.wv.h" + std::to_string(h), std::vector<std::size_t>{channels, dh});
    }
}

void CrossAttentionBlock::init(Rng& rng) {
    std::size_t c = channels(), dh = head_dim();
    for (std::size_t h = 0; h < heads; ++h) {
        ops::glorot_init(wq[h].value, c, dh, rng);
        ops::glorot_init(wk[h].value, c, dh, rng);
        ops::glorot_init(wv[h].value, c, dh, rng);
    }
    ops::glorot_init(wo.value, c, c, rng);
}

std::vector<Parameter*> CrossAttentionBlock::parameters() {
    std::vector<Parameter*> out;
    for (auto& p : wq) out.push_back(&p);
    for (auto& p : wk) out.push_back(&p);
    for (auto& p : wv) out.push_back(&p);
    out.push_back(&wo);
    return out;
}

DenseTensor cross_attention(const DenseTensor& queries, const DenseTensor& tokens,
                            const CrossAttentionBlock& block, CrossAttentionTrace* trace) {
    if (queries.rank() != 2 || tokens.rank() != 2)
        throw DimensionError("cross_attention expects rank-2 queries and tokens");
    std::size_t c = block.wo.value.dim(0);
    if (queries.dim(1) != c || tokens.dim(1) != c)
        throw DimensionError("cross_attention: channel width mismatch: queries " +
                             shape_string(queries.shape()) + ", tokens " +
                             shape_string(tokens.shape()) + ", expected width " +
                             std::to_string(c));
    std::size_t g = queries.dim(0), n = tokens.dim(0), dh = block.head_dim();
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    CrossAttentionTrace local;
    CrossAttentionTrace& tr = trace ? *trace : local;
    tr.qh.clear(); tr.kh.clear(); tr.vh.clear(); tr.probs.clear();
    tr.concat = DenseTensor({g, c});

    for (std::size_t h = 0; h < block.heads; ++h) {
        DenseTensor qh({g, dh}), kh({n, dh}), vh({n, dh});
        ops::mm_nn(queries.data(), block.wq[h].value.data(), qh.data(), g, c, dh);
        ops::mm_nn(tokens.data(), block.wk[h].value.data(), kh.data(), n, c, dh);
        ops::mm_nn(tokens.data(), block.wv[h].value.data(), vh.data(), n, c, dh);

        DenseTensor probs({g, n});
        ops::mm_nt(qh.data(), kh.data(), probs.data(), g, dh, n);
        for (std::size_t i = 0; i < probs.size(); ++i) probs[i] *= inv_scale;
        for (std::size_t row = 0; row < g; ++row)
            ops::softmax_row(probs.data() + row * n, probs.data() + row * n, n);

        DenseTensor head_out({g, dh});
        ops::mm_nn(probs.data(), vh.data(), head_out.data(), g, n, dh);
        for (std::size_t row = 0; row < g; ++row)
            std::copy(head_out.data() + row * dh, head_out.data() + (row + 1) * dh,
                      tr.concat.data() + row * c + h * dh);

        tr.qh.push_back(std::move(qh));
        tr.kh.push_back(std::move(kh));
        tr.vh.push_back(std::move(vh));
        tr.probs.push_back(std::move(probs));
    }
    DenseTensor attended({g, c});
    ops::mm_nn(tr.concat.data(), block.wo.value.data(), attended.data(), g, c, c);
    return attended;
}

void cross_attention_backward(const DenseTensor& queries, const DenseTensor& tokens,
                              const CrossAttentionTrace& trace, const DenseTensor& d_attended,
                              CrossAttentionBlock& block, DenseTensor* d_queries,
                              DenseTensor* d_tokens) {
    std::size_t c = block.wo.value.dim(0);
    std::size_t g = queries.dim(0), n = tokens.dim(0), dh = block.head_dim();
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ops::mm_tn(trace.concat.data(), d_attended.data(), block.wo.grad.data(), c, g, c, true);
    DenseTensor d_concat({g, c});
    ops::mm_nt(d_attended.data(), block.wo.value.data(), d_concat.data(), g, c, c);

    DenseTensor d_head({g, dh}), d_probs({g, n}), d_scores({g, n});
    DenseTensor d_qh({g, dh}), d_kh({n, dh}), d_vh({n, dh});
    for (std::size_t h = 0; h < block.heads; ++h) {
        for (std::size_t row = 0; row < g; ++row)
            std::copy(d_concat.data() + row * c + h * dh, d_concat.data() + row * c + (h + 1) * dh,
                      d_head.data() + row * dh);

        const DenseTensor& probs = trace.probs[h];
        ops::mm_nt(d_head.data(), trace.vh[h].data(), d_probs.data(), g, dh, n);
        ops::mm_tn(probs.data(), d_head.data(), d_vh.data(), n, g, dh);

        d_scores.fill(0.0);
        for (std::size_t row = 0; row < g; ++row)
            ops::softmax_backward_row(probs.data() + row * n, d_probs.data() + row * n,
                                      d_scores.data() + row * n, n);
        for (std::size_t i = 0; i < d_scores.size(); ++i) d_scores[i] *= inv_scale;

        ops::mm_nn(d_scores.data(), trace.kh[h].data(), d_qh.data(), g, n, dh);
        ops::mm_tn(d_scores.data(), trace.qh[h].data(), d_kh.data(), n, g, dh);

        ops::mm_tn(queries.data(), d_qh.data(), block.wq[h].grad.data(), c, g, dh, true);
        ops::mm_tn(tokens.data(), d_kh.data(), block.wk[h].grad.data(), c, n, dh, true);
        ops::mm_tn(tokens.data(), d_vh.data(), block.wv[h].grad.data(), c, n, dh, true);
        if (d_queries)
            ops::mm_nt(d_qh.data(), block.wq[h].value.data(), d_queries->data(), g, dh, c, true);
        if (d_tokens) {
            ops::mm_nt(d_kh.data(), block.wk[h].value.data(), d_tokens->data(), n, dh, c, true);
            ops::mm_nt(d_vh.data(), block.wv[h].value.data(), d_tokens->data(), n, dh, c, true);
        }
    }
}

DenseTensor joint_mean_pool(const DenseTensor& gcn_out) {
    if (gcn_out.rank() != 3)
        throw DimensionError("joint_mean_pool expects [T, J, C], got " +
                             shape_string(gcn_out.shape()));
    std::size_t t_len = gcn_out.dim(0), joints = gcn_out.dim(1), c = gcn_out.dim(2);
    DenseTensor out({t_len, c});
    double inv = 1.0 / static_cast<double>(joints);
    for (std::size_t t = 0; t < t_len; ++t) {
        double* ot = out.data() + t * c;
        for (std::size_t j = 0; j < joints; ++j) {
            const double* src = gcn_out.data() + (t * joints + j) * c;
            for (std::size_t k = 0; k < c; ++k) ot[k] += src[k];
        }
        for (std::size_t k = 0; k < c; ++k) ot[k] *= inv;
    }
    return out;
}

DenseTensor flatten_tokens(const DenseTensor& f) {
    if (f.rank() != 4)
        throw DimensionError("flatten_tokens expects [T, H, W, C], got " +
                             shape_string(f.shape()));
    return f.reshaped({f.dim(0) * f.dim(1) * f.dim(2), f.dim(3)});
}

DenseTensor unflatten_tokens(const DenseTensor& tokens, std::size_t t, std::size_t h,
                             std::size_t w) {
    if (tokens.rank() != 2)
        throw DimensionError("unflatten_tokens expects [N, C], got " +
                             shape_string(tokens.shape()));
    if (tokens.dim(0) != t * h * w)
        throw DimensionError("unflatten_tokens: token count " + std::to_string(tokens.dim(0)) +
                             " does not factor as " + std::to_string(t) + "*" +
                             std::to_string(h) + "*" + std::to_string(w));
    return tokens.reshaped({t, h, w, tokens.dim(1)});
}

DenseTensor modulate(const DenseTensor& f, const DenseTensor& alpha) {
    if (f.rank() != 4)
        throw DimensionError("modulate expects [T, H, W, C], got " + shape_string(f.shape()));
    if (alpha.rank() != 1 || alpha.dim(0) != f.dim(0))
        throw DimensionError("modulate: alpha shape " + shape_string(alpha.shape()) +
                             " does not match " + std::to_string(f.dim(0)) + " frames");
    DenseTensor out(f.shape());
    std::size_t frame = f.dim(1) * f.dim(2) * f.dim(3);
    for (std::size_t t = 0; t < f.dim(0); ++t) {
        double a = alpha[t];
        const double* src = f.data() + t * frame;
        double* dst = out.data() + t * frame;
        for (std::size_t i = 0; i < frame; ++i) dst[i] = a * src[i];
    }
    return out;
}

MaskedQueryResult masked_query(const DenseTensor& f_mod, const GridMask& mask) {
    if (f_mod.rank() != 4)
        throw DimensionError("masked_query expects [T, H, W, C], got " +
                             shape_string(f_mod.shape()));
    if (mask.rows != f_mod.dim(1) || mask.cols != f_mod.dim(2))
        throw DimensionError("masked_query: mask " + std::to_string(mask.rows) + "x" +
                             std::to_string(mask.cols) + " does not match feature grid " +
                             std::to_string(f_mod.dim(1)) + "x" + std::to_string(f_mod.dim(2)));
    std::size_t t_len = f_mod.dim(0), rows = f_mod.dim(1), cols = f_mod.dim(2), c = f_mod.dim(3);
    MaskedQueryResult result;
    result.q = DenseTensor({c});
    result.mask_sum = static_cast<double>(mask.count());
    if (result.mask_sum == 0.0) return result; // inactive group, zero query
    result.active = true;
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t col = 0; col < cols; ++col) {
                if (!mask.cell(r, col)) continue;
                const double* src = f_mod.data() + ((t * rows + r) * cols + col) * c;
                for (std::size_t k = 0; k < c; ++k) result.q[k] += src[k];
            }
    double denom = result.mask_sum * static_cast<double>(t_len);
    for (std::size_t k = 0; k < c; ++k) result.q[k] /= denom;
    return result;
}

FusionModel::FusionModel(ModelConfig cfg, const SkeletonGraph& graph)
    : cfg_(cfg), graph_(graph) {
    cfg_.validate();
    if (graph.joints != cfg_.joints)
        throw ConfigError("model config names " + std::to_string(cfg_.joints) +
                          " joints but the skeleton graph has " + std::to_string(graph.joints));
    gcn_ = GcnStack(normalize_adjacency(graph_), cfg_.gcn_hidden, cfg_.gcn_out);
    mlp1_ = ops::DenseLayer("mlp.fc1", cfg_.gcn_out, cfg_.mlp_hidden, ops::Activation::relu);
    mlp2_ = ops::DenseLayer("mlp.fc2", cfg_.mlp_hidden, cfg_.pose_dim(), ops::Activation::identity);
    temporal_ = TemporalAttentionBlock(cfg_.pose_dim(), cfg_.attention_conv_kernel,
                                       cfg_.attention_hidden);
    aux_conv_w_ = Parameter("aux.conv1x1.w", {cfg_.pose_frames, 1});
    cross_ = CrossAttentionBlock(cfg_.channels, cfg_.heads);
    cls1_ = ops::DenseLayer("classifier.fc1", cfg_.fused_dim(), cfg_.classifier_hidden[0],
                            ops::Activation::relu);
    cls2_ = ops::DenseLayer("classifier.fc2", cfg_.classifier_hidden[0], cfg_.classifier_hidden[1],
                            ops::Activation::relu);
    cls_out_ = ops::DenseLayer("classifier.out", cfg_.classifier_hidden[1], cfg_.classes,
                               ops::Activation::identity);
}

void FusionModel::init_params(std::uint64_t seed) {
    Rng rng(seed);
    gcn_.init(rng);
    mlp1_.init(rng);
    mlp2_.init(rng);
    temporal_.init(rng);
    ops::glorot_init(aux_conv_w_.value, cfg_.pose_frames, 1, rng);
    cross_.init(rng);
    cls1_.init(rng);
    cls2_.init(rng);
    cls_out_.init(rng);
}

std::vector<Parameter*> FusionModel::parameters() {
    std::vector<Parameter*> out = gcn_.parameters();
    auto add = [&](std::vector<Parameter*> more) {
        out.insert(out.end(), more.begin(), more.end());
    };
    add({&mlp1_.w, &mlp1_.b, &mlp2_.w, &mlp2_.b});
    add(temporal_.parameters());
    add({&aux_conv_w_});
    add(cross_.parameters());
    add({&cls1_.w, &cls1_.b, &cls2_.w, &cls2_.b, &cls_out_.w, &cls_out_.b});
    return out;
}

void FusionModel::zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
}

void FusionModel::reset_adam_state() {
    for (Parameter* p : parameters()) p->reset_adam_state();
}

ForwardTrace FusionModel::forward(const DenseTensor& pose, const DenseTensor& features,
                                  std::span<const GridMask> masks, Rng* dropout_rng) const {
    std::size_t tp = cfg_.pose_frames, t = cfg_.feature_frames, j = cfg_.joints;
    std::size_t h = cfg_.grid_h, w = cfg_.grid_w, c = cfg_.channels, g = cfg_.groups;
    if (pose.rank() != 3 || pose.dim(0) != tp || pose.dim(1) != j || pose.dim(2) != 3)
        throw DimensionError("forward: pose shape " + shape_string(pose.shape()) +
                             " does not match config [" + std::to_string(tp) + ", " +
                             std::to_string(j) + ", 3]");
    if (features.rank() != 4 || features.dim(0) != t || features.dim(1) != h ||
        features.dim(2) != w || features.dim(3) != c)
        throw DimensionError("forward: feature shape " + shape_string(features.shape()) +
                             " does not match config [" + std::to_string(t) + ", " +
                             std::to_string(h) + ", " + std::to_string(w) + ", " +
                             std::to_string(c) + "]");
    if (masks.size() != g)
        throw DimensionError("forward: expected " + std::to_string(g) + " group masks, got " +
                             std::to_string(masks.size()));

    ForwardTrace tr;
    tr.pose = pose;
    tr.features = features;
    tr.masks.assign(masks.begin(), masks.end());

    // Pose branch: GCN, per-frame joint mean, shared MLP.
    gcn_forward(pose, gcn_, &tr.gcn);
    tr.h_seq = joint_mean_pool(tr.gcn.out);
    tr.mlp_hidden = ops::dense_apply(tr.h_seq, mlp1_);
    tr.mlp_out = ops::dense_apply(tr.mlp_hidden, mlp2_);

    // Auxiliary future-pose head gets the pose residual; the attention
    // branch below deliberately does not.
    tr.m_residual = tr.mlp_out;
    const DenseTensor pose_flat = pose.reshaped({tp, cfg_.pose_dim()});
    for (std::size_t i = 0; i < tr.m_residual.size(); ++i) tr.m_residual[i] += pose_flat[i];
    tr.aux_input = DenseTensor({j, 3, tp});
    for (std::size_t ti = 0; ti < tp; ++ti)
        for (std::size_t ji = 0; ji < j; ++ji)
            for (std::size_t ci = 0; ci < 3; ++ci)
                tr.aux_input[(ji * 3 + ci) * tp + ti] =
                    tr.m_residual[ti * cfg_.pose_dim() + ji * 3 + ci];
    tr.aux_pred = ops::conv1x1_temporal(tr.aux_input, aux_conv_w_).reshaped({j, 3});

    // Temporal attention over the visual frame rate.
    tr.conv_out = temporal_conv1d(tr.mlp_out, temporal_.conv_w, temporal_.conv_b);
    std::size_t n_pool = cfg_.pool_factor();
    std::size_t d = cfg_.pose_dim();
    tr.pooled = DenseTensor({t, d});
    for (std::size_t ti = 0; ti < t; ++ti) {
        double* dst = tr.pooled.data() + ti * d;
        for (std::size_t s = 0; s < n_pool; ++s) {
            const double* src = tr.conv_out.data() + (ti * n_pool + s) * d;
            for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
        }
        for (std::size_t k = 0; k < d; ++k) dst[k] /= static_cast<double>(n_pool);
    }
    tr.attn_hidden = ops::dense_apply(tr.pooled, temporal_.hidden);
    tr.attn_scores = ops::dense_apply(tr.attn_hidden, temporal_.score).reshaped({t});
    tr.alpha = ops::softmax(tr.attn_scores);

    // Visual stream scaled by the pose-driven attention.
    tr.f_mod = modulate(features, tr.alpha);
    tr.queries = DenseTensor({g, c});
    tr.query_info.resize(g);
    for (std::size_t gi = 0; gi < g; ++gi) {
        tr.query_info[gi] = masked_query(tr.f_mod, masks[gi]);
        std::copy(tr.query_info[gi].q.data(), tr.query_info[gi].q.data() + c,
                  tr.queries.data() + gi * c);
    }
    DenseTensor tokens = flatten_tokens(tr.f_mod);
    tr.attended = cross_attention(tr.queries, tokens, cross_, &tr.cross);

    // Fused embedding: attended context, visual GAP, time-pooled pose.
    tr.pose_pooled = DenseTensor({cfg_.gcn_out});
    for (std::size_t ti = 0; ti < tp; ++ti)
        for (std::size_t k = 0; k < cfg_.gcn_out; ++k)
            tr.pose_pooled[k] += tr.h_seq[ti * cfg_.gcn_out + k];
    for (std::size_t k = 0; k < cfg_.gcn_out; ++k)
        tr.pose_pooled[k] /= static_cast<double>(tp);

    tr.visual_gap = DenseTensor({c});
    std::size_t cells = t * h * w;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* src = tr.f_mod.data() + cell * c;
        for (std::size_t k = 0; k < c; ++k) tr.visual_gap[k] += src[k];
    }
    for (std::size_t k = 0; k < c; ++k) tr.visual_gap[k] /= static_cast<double>(cells);

    tr.fused_in = DenseTensor({cfg_.fused_dim()});
    std::copy(tr.attended.data(), tr.attended.data() + g * c, tr.fused_in.data());
    std::copy(tr.visual_gap.data(), tr.visual_gap.data() + c, tr.fused_in.data() + g * c);
    std::copy(tr.pose_pooled.data(), tr.pose_pooled.data() + cfg_.gcn_out,
              tr.fused_in.data() + g * c + c);

    double rate = dropout_rng ? cfg_.dropout_rate : 0.0;
    tr.cls_h1 = ops::dense_apply(tr.fused_in, cls1_);
    if (rate > 0.0) {
        tr.drop1 = ops::sample_dropout_mask(*dropout_rng, tr.cls_h1.size(), rate);
        ops::dropout_apply(tr.cls_h1, tr.drop1);
    } else {
        tr.drop1.scale.assign(tr.cls_h1.size(), 1.0);
    }
    tr.cls_h2 = ops::dense_apply(tr.cls_h1, cls2_);
    if (rate > 0.0) {
        tr.drop2 = ops::sample_dropout_mask(*dropout_rng, tr.cls_h2.size(), rate);
        ops::dropout_apply(tr.cls_h2, tr.drop2);
    } else {
        tr.drop2.scale.assign(tr.cls_h2.size(), 1.0);
    }
    tr.logits = ops::dense_apply(tr.cls_h2, cls_out_);
    tr.probs = ops::softmax(tr.logits);
    ensure_finite(tr.probs, "fusion forward class probabilities");
    return tr;
}

void FusionModel::backward(const ForwardTrace& tr, const DenseTensor& d_probs,
                           const DenseTensor& d_aux_pred) {
    std::size_t tp = cfg_.pose_frames, t = cfg_.feature_frames, j = cfg_.joints;
    std::size_t h = cfg_.grid_h, w = cfg_.grid_w, c = cfg_.channels, g = cfg_.groups;
    std::size_t d = cfg_.pose_dim();

    DenseTensor d_mlp_out({tp, d});
    DenseTensor d_h_seq({tp, cfg_.gcn_out});

    if (d_probs.size() != 0) {
        if (!d_probs.same_shape(tr.probs))
            throw DimensionError("backward: d_probs shape " + shape_string(d_probs.shape()) +
                                 " does not match probabilities " +
                                 shape_string(tr.probs.shape()));
        DenseTensor d_logits = ops::softmax_backward(tr.probs, d_probs);

        // Classifier stack (dropout masks recorded during forward).
        DenseTensor d_h2(tr.cls_h2.shape());
        ops::dense_backward(tr.cls_h2, tr.logits, d_logits, cls_out_, &d_h2);
        ops::dropout_backward(d_h2, tr.drop2);
        DenseTensor d_h1(tr.cls_h1.shape());
        ops::dense_backward(tr.cls_h1, tr.cls_h2, d_h2, cls2_, &d_h1);
        ops::dropout_backward(d_h1, tr.drop1);
        DenseTensor d_fused(tr.fused_in.shape());
        ops::dense_backward(tr.fused_in, tr.cls_h1, d_h1, cls1_, &d_fused);

        // Split the fused gradient back into its three sources.
        DenseTensor d_attended({g, c});
        std::copy(d_fused.data(), d_fused.data() + g * c, d_attended.data());
        DenseTensor d_gap({c});
        std::copy(d_fused.data() + g * c, d_fused.data() + g * c + c, d_gap.data());
        DenseTensor d_pose_pooled({cfg_.gcn_out});
        std::copy(d_fused.data() + g * c + c, d_fused.data() + cfg_.fused_dim(),
                  d_pose_pooled.data());

        DenseTensor tokens = flatten_tokens(tr.f_mod);
        DenseTensor d_queries({g, c});
        DenseTensor d_tokens({t * h * w, c});
        cross_attention_backward(tr.queries, tokens, tr.cross, d_attended, cross_, &d_queries,
                                 &d_tokens);

        // Modulated feature gradient from tokens, GAP and masked queries.
        DenseTensor d_f_mod({t, h, w, c});
        for (std::size_t i = 0; i < d_tokens.size(); ++i) d_f_mod[i] = d_tokens[i];
        std::size_t cells = t * h * w;
        for (std::size_t cell = 0; cell < cells; ++cell) {
            double* dst = d_f_mod.data() + cell * c;
            for (std::size_t k = 0; k < c; ++k) dst[k] += d_gap[k] / static_cast<double>(cells);
        }
        for (std::size_t gi = 0; gi < g; ++gi) {
            const MaskedQueryResult& info = tr.query_info[gi];
            if (!info.active) continue;
            double denom = info.mask_sum * static_cast<double>(t);
            const GridMask& mask = tr.masks[gi];
            for (std::size_t ti = 0; ti < t; ++ti)
                for (std::size_t r = 0; r < h; ++r)
                    for (std::size_t col = 0; col < w; ++col) {
                        if (!mask.cell(r, col)) continue;
                        double* dst = d_f_mod.data() + ((ti * h + r) * w + col) * c;
                        for (std::size_t k = 0; k < c; ++k)
                            dst[k] += d_queries[gi * c + k] / denom;
                    }
        }

        // Through the modulation into the attention weights.
        DenseTensor d_alpha({t});
        std::size_t frame = h * w * c;
        for (std::size_t ti = 0; ti < t; ++ti) {
            const double* f = tr.features.data() + ti * frame;
            const double* dm = d_f_mod.data() + ti * frame;
            double acc = 0.0;
            for (std::size_t i = 0; i < frame; ++i) acc += f[i] * dm[i];
            d_alpha[ti] = acc;
        }
        DenseTensor d_scores = ops::softmax_backward(tr.alpha, d_alpha);

        DenseTensor scores2 = tr.attn_scores.reshaped({t, 1});
        DenseTensor d_scores2 = d_scores.reshaped({t, 1});
        DenseTensor d_attn_hidden(tr.attn_hidden.shape());
        ops::dense_backward(tr.attn_hidden, scores2, d_scores2, temporal_.score, &d_attn_hidden);
        DenseTensor d_pooled(tr.pooled.shape());
        ops::dense_backward(tr.pooled, tr.attn_hidden, d_attn_hidden, temporal_.hidden,
                            &d_pooled);

        // Un-pool and run the temporal convolution backward into the shared
        // MLP features.
        std::size_t n_pool = cfg_.pool_factor();
        DenseTensor d_conv({tp, d});
        for (std::size_t ti = 0; ti < t; ++ti)
            for (std::size_t s = 0; s < n_pool; ++s) {
                double* dst = d_conv.data() + (ti * n_pool + s) * d;
                const double* src = d_pooled.data() + ti * d;
                for (std::size_t k = 0; k < d; ++k)
                    dst[k] += src[k] / static_cast<double>(n_pool);
            }
        temporal_conv1d_backward(tr.mlp_out, d_conv, temporal_.conv_w, temporal_.conv_b,
                                 &d_mlp_out);

        // Pose summary branch of the fused embedding.
        for (std::size_t ti = 0; ti < tp; ++ti)
            for (std::size_t k = 0; k < cfg_.gcn_out; ++k)
                d_h_seq[ti * cfg_.gcn_out + k] +=
                    d_pose_pooled[k] / static_cast<double>(tp);
    }

    if (d_aux_pred.size() != 0) {
        if (d_aux_pred.size() != j * 3)
            throw DimensionError("backward: d_aux_pred shape " +
                                 shape_string(d_aux_pred.shape()) + " does not match [" +
                                 std::to_string(j) + ", 3]");
        DenseTensor d_aux_in({j, 3, tp});
        ops::conv1x1_temporal_backward(tr.aux_input, d_aux_pred, aux_conv_w_, &d_aux_in);
        // The pose residual feeds input data, so only the MLP side receives
        // this gradient.
        for (std::size_t ti = 0; ti < tp; ++ti)
            for (std::size_t ji = 0; ji < j; ++ji)
                for (std::size_t ci = 0; ci < 3; ++ci)
                    d_mlp_out[ti * d + ji * 3 + ci] += d_aux_in[(ji * 3 + ci) * tp + ti];
    }

    // Shared MLP and GCN receive both branches' gradients.
    DenseTensor d_mlp_hidden(tr.mlp_hidden.shape());
    ops::dense_backward(tr.mlp_hidden, tr.mlp_out, d_mlp_out, mlp2_, &d_mlp_hidden);
    ops::dense_backward(tr.h_seq, tr.mlp_hidden, d_mlp_hidden, mlp1_, &d_h_seq);

    DenseTensor d_gcn_out({tp, j, cfg_.gcn_out});
    for (std::size_t ti = 0; ti < tp; ++ti)
        for (std::size_t ji = 0; ji < j; ++ji)
            for (std::size_t k = 0; k < cfg_.gcn_out; ++k)
                d_gcn_out[(ti * j + ji) * cfg_.gcn_out + k] =
                    d_h_seq[ti * cfg_.gcn_out + k] / static_cast<double>(j);
    gcn_backward(tr.pose, tr.gcn, d_gcn_out, gcn_, nullptr);
}

void FusionModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["model"] = detail::model_config_to_json(cfg_);
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [a, b] : graph_.edges) edges.push_back({a, b});
    manifest["graph"] = {{"joints", graph_.joints},
                         {"edges", edges},
                         {"alpha", graph_.connected_weight},
                         {"beta", graph_.disconnected_weight}};
    nlohmann::json params = nlohmann::json::array();
    for (const Parameter* p : const_cast<FusionModel*>(this)->parameters()) {
        std::string file = p->name;
        std::replace(file.begin(), file.end(), '.', '_');
        file += ".tnsr";
        write_tnsr(dir / file, p->value);
        params.push_back({{"name", p->name}, {"file", file}, {"shape", p->value.shape()}});
    }
    manifest["parameters"] = params;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write model manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

FusionModel FusionModel::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open model manifest " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed model manifest in " + dir.string() + ": " + e.what());
    }
    ModelConfig cfg = detail::model_config_from_json(manifest.at("model"));
    SkeletonGraph graph;
    try {
        const auto& gj = manifest.at("graph");
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (const auto& e : gj.at("edges"))
            edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
        graph = build_adjacency(std::move(edges), gj.at("joints").get<std::size_t>(),
                                gj.value("alpha", 5.0), gj.value("beta", 2.0));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model manifest missing graph: " + std::string(e.what()));
    }
    FusionModel model(cfg, graph);
    for (Parameter* p : model.parameters()) {
        bool found = false;
        for (const auto& entry : manifest.at("parameters")) {
            if (entry.at("name").get<std::string>() != p->name) continue;
            DenseTensor value = read_tnsr(dir / entry.at("file").get<std::string>());
            if (!value.same_shape(p->value))
                throw DataError("parameter " + p->name + " has shape " +
                                shape_string(value.shape()) + " on disk, expected " +
                                shape_string(p->value.shape()));
            p->value = std::move(value);
            found = true;
            break;
        }
        if (!found) throw DataError("model manifest is missing parameter " + p->name);
    }
    return model;
}

} // namespace adlfusion
