// Microbenchmarks for the numeric hot paths.  Run with
// build/benchmarks/adlfusion_benchmarks; not part of ctest.

#include <benchmark/benchmark.h>

#include <vector>

#include "adlfusion/fusion.hpp"
#include "adlfusion/gcn.hpp"
#include "adlfusion/object_context.hpp"
#include "adlfusion/ops.hpp"
#include "adlfusion/pose.hpp"
#include "adlfusion/rng.hpp"
#include "adlfusion/training.hpp"

namespace {

using namespace adlfusion;

DenseTensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    DenseTensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.pose_frames = 8;
    cfg.feature_frames = 4;
    cfg.joints = 5;
    cfg.grid_h = 3;
    cfg.grid_w = 3;
    cfg.channels = 8;
    cfg.groups = 2;
    cfg.heads = 2;
    cfg.classes = 3;
    cfg.gcn_hidden = 8;
    cfg.gcn_out = 6;
    cfg.mlp_hidden = 8;
    cfg.attention_hidden = 4;
    cfg.classifier_hidden = {16, 8};
    cfg.dropout_rate = 0.0;
    return cfg;
}

void BM_Matmul(benchmark::State& state) {
    std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    DenseTensor a = random_tensor({n, n}, rng);
    DenseTensor b = random_tensor({n, n}, rng);
    for (auto _ : state) {
        DenseTensor c = ops::matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

void BM_GcnForward(benchmark::State& state) {
    Rng rng(2);
    SkeletonGraph graph = default_skeleton_13();
    GcnStack stack(normalize_adjacency(graph), 128, 64);
    stack.init(rng);
    DenseTensor pose = random_tensor({32, 13, 3}, rng);
    for (auto _ : state) {
        DenseTensor out = gcn_forward(pose, stack, nullptr);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_GcnForward);

void BM_CrossAttention(benchmark::State& state) {
    Rng rng(3);
    CrossAttentionBlock block(64, 8);
    block.init(rng);
    DenseTensor queries = random_tensor({8, 64}, rng);
    DenseTensor tokens = random_tensor({8 * 7 * 7, 64}, rng);
    for (auto _ : state) {
        DenseTensor out = cross_attention(queries, tokens, block, nullptr);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_CrossAttention);

void BM_NormalizeSequence(benchmark::State& state) {
    Rng rng(4);
    JointMap joints{2, 3, 9, 10};
    DenseTensor frames = random_tensor({64, 13, 3}, rng);
    PoseSequence pose(frames, joints);
    for (auto _ : state) {
        NormalizeResult out = normalize_sequence(pose);
        benchmark::DoNotOptimize(out.pose.frames.data());
    }
}
BENCHMARK(BM_NormalizeSequence);

void BM_MergeGroups(benchmark::State& state) {
    Rng rng(5);
    const Vocabulary& vocab = default_home_vocabulary();
    std::map<std::string, std::string> labels;
    std::vector<DetectionBox> boxes;
    for (int v = 0; v < 40; ++v) {
        std::string vid = "v" + std::to_string(v);
        labels[vid] = "act" + std::to_string(v % 6);
        for (int k = 0; k < 8; ++k) {
            DetectionBox b;
            b.video_id = vid;
            b.frame = k;
            b.class_id = vocab.classes[rng.index(vocab.size())].first;
            b.x1 = 0;
            b.y1 = 0;
            b.x2 = 10;
            b.y2 = 10;
            b.confidence = 0.9;
            boxes.push_back(b);
        }
    }
    IncidenceMatrix inc = build_incidence(boxes, labels, 0.5, vocab);
    for (auto _ : state) {
        ObjectGrouping grouping = merge_groups(inc, 8);
        benchmark::DoNotOptimize(grouping.groups.data());
    }
}
BENCHMARK(BM_MergeGroups);

void BM_FusionForward(benchmark::State& state) {
    ModelConfig cfg = tiny_config();
    FusionModel model(cfg, chain_skeleton(cfg.joints));
    model.init_params(7);
    LossConfig loss;
    SyntheticSpec spec;
    spec.classes = 3;
    spec.clips_per_class = 1;
    auto data = generate_synthetic(cfg, spec, loss, 7);
    const SyntheticSample& s = data[0];
    for (auto _ : state) {
        ForwardTrace tr = model.forward(s.pose, s.features, s.masks);
        benchmark::DoNotOptimize(tr.probs.data());
    }
}
BENCHMARK(BM_FusionForward);

void BM_FusionBackward(benchmark::State& state) {
    ModelConfig cfg = tiny_config();
    FusionModel model(cfg, chain_skeleton(cfg.joints));
    model.init_params(7);
    LossConfig loss;
    SyntheticSpec spec;
    spec.classes = 3;
    spec.clips_per_class = 1;
    auto data = generate_synthetic(cfg, spec, loss, 7);
    const SyntheticSample& s = data[0];
    ForwardTrace tr = model.forward(s.pose, s.features, s.masks);
    DenseTensor d_probs = cross_entropy_backward(tr.probs, s.label, 1.0);
    DenseTensor d_pred = pose_mse_backward(tr.aux_pred, s.future_pose, 0.25);
    for (auto _ : state) {
        model.zero_grads();
        model.backward(tr, d_probs, d_pred);
        benchmark::DoNotOptimize(model.parameters().front()->grad.data());
    }
}
BENCHMARK(BM_FusionBackward);

} // namespace

BENCHMARK_MAIN();
