#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "adlfusion/errors.hpp"
#include "adlfusion/rng.hpp"
#include "adlfusion/training.hpp"

using namespace adlfusion;
namespace fs = std::filesystem;

namespace {

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
    cfg.classes = 4;
    cfg.gcn_hidden = 6;
    cfg.gcn_out = 4;
    cfg.mlp_hidden = 6;
    cfg.attention_hidden = 4;
    cfg.attention_conv_kernel = 3;
    cfg.classifier_hidden = {8, 6};
    cfg.dropout_rate = 0.1;
    return cfg;
}

} // namespace

TEST_CASE("cross entropy clamps vanishing probabilities") {
    DenseTensor probs({3}, {0.2, 0.5, 0.3});
    CHECK(cross_entropy(probs, 1) == doctest::Approx(-std::log(0.5)).epsilon(1e-15));

    DenseTensor collapsed({2}, {1.0, 0.0});
    CHECK(cross_entropy(collapsed, 1) == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));

    CHECK_THROWS_AS((void)cross_entropy(probs, 3), DataError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Parameter p("probs", {4});
    p.value = DenseTensor({4}, {0.1, 0.4, 0.3, 0.2});
    auto loss = [&]() { return 2.0 * cross_entropy(p.value, 2); };
    DenseTensor g = cross_entropy_backward(p.value, 2, 2.0);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
    CHECK(g[3] == 0.0);
    p.grad = g;
    Parameter* params[] = {&p};
    ops::GradCheckReport report = ops::finite_diff_check(loss, params, 1e-7);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("pose mse averages squared coordinate errors") {
    DenseTensor pred({2, 3}, {1, 2, 3, 4, 5, 6});
    DenseTensor target({2, 3}, {1, 2, 3, 4, 5, 12});
    CHECK(pose_mse(pred, target) == doctest::Approx(36.0 / 6.0).epsilon(1e-15));

    DenseTensor g = pose_mse_backward(pred, target, 0.5);
    CHECK(g[5] == doctest::Approx(0.5 * 2.0 * -6.0 / 6.0).epsilon(1e-15));
    CHECK(g[0] == 0.0);

    CHECK_THROWS_AS((void)pose_mse(pred, DenseTensor({3, 3})), DimensionError);

    Parameter p("pred", {2, 3});
    p.value = pred;
    auto loss = [&]() { return 3.0 * pose_mse(p.value, target); };
    p.grad = pose_mse_backward(p.value, target, 3.0);
    Parameter* params[] = {&p};
    ops::GradCheckReport report = ops::finite_diff_check(loss, params, 1e-6);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("mean per-class accuracy is macro averaged") {
    // Imbalanced fixture: class 0 has 2 samples (all right), class 1 has 6
    // (all wrong).  The macro mean is 0.5 even though only a quarter of the
    // samples are correct.
    ConfusionMatrix cm(2);
    std::size_t labels[] = {0, 0, 1, 1, 1, 1, 1, 1};
    for (std::size_t truth : labels) cm.add(truth, 0);
    CHECK(cm.row_total(0) == 2);
    CHECK(cm.row_total(1) == 6);
    CHECK(mean_per_class_accuracy(cm) == doctest::Approx(0.5).epsilon(1e-15));
    double micro = 2.0 / 8.0;
    CHECK(mean_per_class_accuracy(cm) != doctest::Approx(micro));

    // Absent classes are excluded from the mean entirely.
    ConfusionMatrix partial(3);
    partial.add(0, 0);
    partial.add(2, 0);
    partial.add(2, 2);
    CHECK(mean_per_class_accuracy(partial) == doctest::Approx((1.0 + 0.5) / 2.0));

    ConfusionMatrix empty(3);
    CHECK(std::isnan(mean_per_class_accuracy(empty)));
}

TEST_CASE("mean per-class accuracy matches a hand confusion oracle") {
    Rng rng(61);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t classes = 2 + rng.index(4);
        std::size_t n = 5 + rng.index(40);
        std::vector<std::size_t> truth(n), pred(n);
        ConfusionMatrix cm(classes);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = rng.index(classes);
            pred[i] = rng.index(classes);
            cm.add(truth[i], pred[i]);
        }
        // Independent tally straight from the label arrays.
        double sum = 0.0;
        std::size_t present = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            std::size_t total = 0, correct = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (truth[i] != c) continue;
                ++total;
                correct += pred[i] == c ? 1 : 0;
            }
            if (total == 0) continue;
            ++present;
            sum += static_cast<double>(correct) / static_cast<double>(total);
        }
        double expected = sum / static_cast<double>(present);
        CHECK(mean_per_class_accuracy(cm) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("synthetic clips are deterministic and well shaped") {
    ModelConfig cfg = tiny_config();
    SyntheticSpec spec;
    spec.classes = cfg.classes;
    spec.clips_per_class = 3;
    LossConfig loss;

    std::vector<SyntheticSample> a = generate_synthetic(cfg, spec, loss, 77);
    std::vector<SyntheticSample> b = generate_synthetic(cfg, spec, loss, 77);
    std::vector<SyntheticSample> c = generate_synthetic(cfg, spec, loss, 78);

    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pose.shape() == std::vector<std::size_t>{8, 5, 3});
        CHECK(a[i].features.shape() == std::vector<std::size_t>{4, 3, 3, 8});
        CHECK(a[i].masks.size() == cfg.groups);
        CHECK(a[i].future_pose.shape() == std::vector<std::size_t>{5, 3});
        CHECK(a[i].label < cfg.classes);
        CHECK(a[i].pose == b[i].pose);
        CHECK(a[i].features == b[i].features);
        CHECK(a[i].label == b[i].label);
    }
    CHECK(a[0].pose != c[0].pose);

    std::vector<std::size_t> per_class(cfg.classes, 0);
    for (const auto& s : a) ++per_class[s.label];
    for (std::size_t n : per_class) CHECK(n == 3);

    // Every class marker must be covered by its group's mask.
    for (const auto& s : a) {
        const GridMask& mask = s.masks[s.label % cfg.groups];
        CHECK(mask.any());
    }
}

TEST_CASE("stratified split and training config validation") {
    ModelConfig cfg = tiny_config();
    SyntheticSpec spec;
    spec.classes = cfg.classes;
    spec.clips_per_class = 5;
    LossConfig loss;
    std::vector<SyntheticSample> data = generate_synthetic(cfg, spec, loss, 3);

    std::vector<std::size_t> train_idx, val_idx;
    stratified_split_indices(data, 0.2, 5, train_idx, val_idx);
    CHECK(train_idx.size() == 16);
    CHECK(val_idx.size() == 4);

    std::vector<std::size_t> val_per_class(cfg.classes, 0);
    for (std::size_t i : val_idx) ++val_per_class[data[i].label];
    for (std::size_t n : val_per_class) CHECK(n == 1);

    std::vector<std::size_t> all = train_idx;
    all.insert(all.end(), val_idx.begin(), val_idx.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

    std::vector<std::size_t> t2, v2;
    stratified_split_indices(data, 0.2, 5, t2, v2);
    CHECK(t2 == train_idx);
    CHECK(v2 == val_idx);

    TrainConfig tc;
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.loss.lambda_pose = -1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.loss.delta_horizon = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("a short training run learns and reruns bitwise") {
    ModelConfig cfg = tiny_config();
    SyntheticSpec spec;
    spec.classes = cfg.classes;
    spec.clips_per_class = 6;
    LossConfig loss;
    std::vector<SyntheticSample> data = generate_synthetic(cfg, spec, loss, 21);
    std::vector<SyntheticSample> train_set, val_set;
    stratified_split(data, 0.25, 21, train_set, val_set);

    TrainConfig tc;
    tc.batch_size = 8;
    tc.max_epochs = 30;
    tc.patience = 30;
    tc.seed = 21;
    tc.adam.learning_rate = 0.01;

    auto run = [&]() {
        FusionModel model(cfg, chain_skeleton(cfg.joints));
        model.init_params(tc.seed);
        TrainHistory history = train(model, train_set, val_set, tc);
        EvalResult final_train = evaluate(model, train_set, tc.loss);
        return std::make_tuple(std::move(model), std::move(history), final_train);
    };

    auto [model, history, final_train] = run();
    REQUIRE(!history.epochs.empty());
    CHECK(history.epochs.front().epoch == 1);
    CHECK(history.best_epoch >= 1);
    CHECK(history.best_val_mpca >= 0.5); // tiny task, should separate easily
    CHECK(final_train.mpca > 0.9);
    // The loss should clearly drop from the first epoch.
    CHECK(history.epochs.back().train_loss < 0.5 * history.epochs.front().train_loss);
    // The auxiliary head must also improve on held-out clips.
    double last_pose = history.epochs.back().val_pose_loss;
    CHECK(last_pose < history.initial_val_pose_loss);

    auto [model2, history2, final2] = run();
    std::vector<Parameter*> p1 = model.parameters();
    std::vector<Parameter*> p2 = model2.parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value == p2[i]->value);
    CHECK(history2.epochs.size() == history.epochs.size());
    for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        CHECK(history2.epochs[e].train_loss == history.epochs[e].train_loss);
        CHECK(history2.epochs[e].val_mpca == history.epochs[e].val_mpca);
    }
}

TEST_CASE("early stopping restores the best epoch weights") {
    ModelConfig cfg = tiny_config();
    SyntheticSpec spec;
    spec.classes = cfg.classes;
    spec.clips_per_class = 4;
    LossConfig loss;
    std::vector<SyntheticSample> data = generate_synthetic(cfg, spec, loss, 31);
    std::vector<SyntheticSample> train_set, val_set;
    stratified_split(data, 0.25, 31, train_set, val_set);

    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_epochs = 50;
    tc.patience = 3;
    tc.seed = 31;
    tc.adam.learning_rate = 0.01;

    FusionModel model(cfg, chain_skeleton(cfg.joints));
    model.init_params(tc.seed);
    TrainHistory history = train(model, train_set, val_set, tc);

    if (history.early_stopped)
        CHECK(history.epochs.size() < tc.max_epochs);
    // Whatever stopped the run, the returned weights evaluate to the best
    // recorded validation MPCA.
    EvalResult val = evaluate(model, val_set, tc.loss);
    CHECK(val.mpca == doctest::Approx(history.best_val_mpca).epsilon(1e-12));
}

TEST_CASE("history csv is written deterministically") {
    TrainHistory history;
    history.initial_val_pose_loss = 0.5;
    for (std::size_t e = 1; e <= 3; ++e) {
        EpochStats stats;
        stats.epoch = e;
        stats.train_loss = 1.0 / static_cast<double>(e);
        stats.val_mpca = 0.25 * static_cast<double>(e);
        stats.val_pose_loss = 0.5 / static_cast<double>(e);
        history.epochs.push_back(stats);
    }

    fs::path dir = fs::temp_directory_path() / "adlfusion_training_io";
    fs::remove_all(dir);
    fs::create_directories(dir);
    fs::path a = dir / "a.csv";
    fs::path b = dir / "b.csv";
    write_history_csv(a, history);
    write_history_csv(b, history);

    std::ifstream fa(a), fb(b);
    std::string ta((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string tb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ta == tb);
    CHECK(ta.find("epoch,train_loss,val_mpca") == 0);
    CHECK(ta.find("\n1,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("evaluate fills the confusion matrix consistently") {
    ModelConfig cfg = tiny_config();
    SyntheticSpec spec;
    spec.classes = cfg.classes;
    spec.clips_per_class = 2;
    LossConfig loss;
    std::vector<SyntheticSample> data = generate_synthetic(cfg, spec, loss, 41);

    FusionModel model(cfg, chain_skeleton(cfg.joints));
    model.init_params(41);
    EvalResult result = evaluate(model, data, loss);

    std::size_t total = 0;
    for (std::size_t t = 0; t < cfg.classes; ++t) total += result.confusion.row_total(t);
    CHECK(total == data.size());
    CHECK(result.mean_ce > 0.0);
    CHECK(result.mean_pose_loss > 0.0);
    CHECK(result.mpca >= 0.0);
    CHECK(result.mpca <= 1.0);
}
