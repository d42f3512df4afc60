#include "adlfusion/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "adlfusion/errors.hpp"

namespace adlfusion {

namespace {
constexpr double kProbClamp = 1e-12;
} // namespace

void LossConfig::validate() const {
    if (!(lambda_pose >= 0.0) || !std::isfinite(lambda_pose))
        throw ConfigError("loss config: lambda_pose must be finite and non-negative");
    if (delta_horizon == 0)
        throw ConfigError("loss config: delta_horizon must be positive");
}

double cross_entropy(const DenseTensor& probs, std::size_t label) {
    if (probs.rank() != 1)
        throw DimensionError("cross_entropy expects a probability vector, got " +
                             shape_string(probs.shape()));
    if (label >= probs.dim(0))
        throw DataError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                        std::to_string(probs.dim(0)) + " classes");
    return -std::log(std::max(probs[label], kProbClamp));
}

DenseTensor cross_entropy_backward(const DenseTensor& probs, std::size_t label, double scale) {
    if (label >= probs.size())
        throw DataError("cross_entropy_backward: label " + std::to_string(label) +
                        " out of range");
    DenseTensor d(probs.shape());
    if (probs[label] >= kProbClamp) d[label] = -scale / probs[label];
    return d;
}

double pose_mse(const DenseTensor& pred, const DenseTensor& target) {
    if (!pred.same_shape(target))
        throw DimensionError("pose_mse: prediction " + shape_string(pred.shape()) +
                             " vs target " + shape_string(target.shape()));
    if (pred.size() == 0) throw DimensionError("pose_mse on empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double diff = pred[i] - target[i];
        acc += diff * diff;
    }
    return acc / static_cast<double>(pred.size());
}

DenseTensor pose_mse_backward(const DenseTensor& pred, const DenseTensor& target, double scale) {
    if (!pred.same_shape(target))
        throw DimensionError("pose_mse_backward: prediction " + shape_string(pred.shape()) +
                             " vs target " + shape_string(target.shape()));
    DenseTensor d(pred.shape());
    double k = 2.0 * scale / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) d[i] = k * (pred[i] - target[i]);
    return d;
}

std::size_t ConfusionMatrix::row_total(std::size_t truth) const {
    std::size_t total = 0;
    for (std::size_t p = 0; p < classes; ++p) total += at(truth, p);
    return total;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred) {
    if (truth >= classes || pred >= classes)
        throw DataError("confusion matrix: class index out of range (truth " +
                        std::to_string(truth) + ", pred " + std::to_string(pred) + ", classes " +
                        std::to_string(classes) + ")");
    at(truth, pred) += 1;
}

double mean_per_class_accuracy(const ConfusionMatrix& cm) {
    double acc = 0.0;
    std::size_t present = 0;
    for (std::size_t t = 0; t < cm.classes; ++t) {
        std::size_t total = cm.row_total(t);
        if (total == 0) continue;
        acc += static_cast<double>(cm.at(t, t)) / static_cast<double>(total);
        present += 1;
    }
    if (present == 0) return std::numeric_limits<double>::quiet_NaN();
    return acc / static_cast<double>(present);
}

std::vector<SyntheticSample> generate_synthetic(const ModelConfig& cfg, const SyntheticSpec& spec,
                                                const LossConfig& loss, std::uint64_t seed) {
    cfg.validate();
    loss.validate();
    if (spec.classes == 0 || spec.clips_per_class == 0)
        throw ConfigError("synthetic spec: classes and clips_per_class must be positive");
    if (spec.classes > cfg.classes)
        throw ConfigError("synthetic spec: " + std::to_string(spec.classes) +
                          " classes exceed the model's " + std::to_string(cfg.classes));
    Rng rng(seed);
    std::size_t tp = cfg.pose_frames, t_feat = cfg.feature_frames, j = cfg.joints;
    std::size_t h = cfg.grid_h, w = cfg.grid_w, c = cfg.channels, g = cfg.groups;

    // Shared frequency keeps every coordinate trace inside the span of
    // {1, sin(wt), cos(wt)}, so one linear filter can hit the future value
    // of all classes at once.
    double omega = 2.0 * 3.14159265358979323846 * 1.5 / static_cast<double>(tp);

    // Group masks are a dataset-level property: group g covers the marker
    // cells of the classes it is responsible for.
    std::vector<GridMask> masks(g, GridMask(h, w));
    for (std::size_t cls = 0; cls < spec.classes; ++cls) {
        std::size_t row = cls % h, col = (cls / h) % w;
        masks[cls % g].cell(row, col) = 1;
    }

    std::vector<SyntheticSample> samples;
    samples.reserve(spec.classes * spec.clips_per_class);
    for (std::size_t cls = 0; cls < spec.classes; ++cls) {
        double amp = 0.4 + 0.15 * static_cast<double>(cls);
        double class_phase = 0.9 * static_cast<double>(cls);
        std::size_t axis_hot = cls % 3;
        std::size_t row = cls % h, col = (cls / h) % w, chan = cls % c;
        for (std::size_t clip = 0; clip < spec.clips_per_class; ++clip) {
            double jitter = rng.uniform(0.0, 0.8);
            auto coordinate = [&](std::size_t time, std::size_t joint, std::size_t axis) {
                double base = 0.15 * static_cast<double>(joint) * (axis == 1 ? -1.0 : 1.0) +
                              0.5 * static_cast<double>(axis);
                double gain = (axis == axis_hot) ? 1.0 : 0.3;
                double phase = class_phase + jitter + 0.7 * static_cast<double>(joint) +
                               0.4 * static_cast<double>(axis);
                return base +
                       amp * gain * std::sin(omega * static_cast<double>(time) + phase);
            };

            SyntheticSample s;
            s.label = cls;
            s.masks = masks;
            s.pose = DenseTensor({tp, j, 3});
            for (std::size_t ti = 0; ti < tp; ++ti)
                for (std::size_t ji = 0; ji < j; ++ji)
                    for (std::size_t ax = 0; ax < 3; ++ax)
                        s.pose[(ti * j + ji) * 3 + ax] =
                            coordinate(ti, ji, ax) + spec.pose_noise * rng.normal();
            s.future_pose = DenseTensor({j, 3});
            std::size_t future_t = tp - 1 + loss.delta_horizon;
            for (std::size_t ji = 0; ji < j; ++ji)
                for (std::size_t ax = 0; ax < 3; ++ax)
                    s.future_pose[ji * 3 + ax] = coordinate(future_t, ji, ax);

            s.features = DenseTensor({t_feat, h, w, c});
            for (std::size_t i = 0; i < s.features.size(); ++i)
                s.features[i] = spec.feature_noise * rng.normal();
            for (std::size_t ti = 0; ti < t_feat; ++ti)
                s.features[((ti * h + row) * w + col) * c + chan] +=
                    spec.signal *
                    (1.0 + 0.2 * std::sin(0.9 * static_cast<double>(ti) +
                                          static_cast<double>(cls)));
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

void stratified_split_indices(std::span<const SyntheticSample> samples, double val_fraction,
                              std::uint64_t seed, std::vector<std::size_t>& train_idx,
                              std::vector<std::size_t>& val_idx) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("stratified_split: val_fraction must be in [0, 1)");
    train_idx.clear();
    val_idx.clear();
    std::size_t max_label = 0;
    for (const auto& s : samples) max_label = std::max(max_label, s.label);
    std::vector<std::vector<std::size_t>> by_label(samples.empty() ? 0 : max_label + 1);
    for (std::size_t i = 0; i < samples.size(); ++i) by_label[samples[i].label].push_back(i);

    Rng rng(seed);
    for (auto& idx : by_label) {
        if (idx.empty()) continue;
        rng.shuffle(idx);
        std::size_t val_n =
            static_cast<std::size_t>(val_fraction * static_cast<double>(idx.size()));
        if (val_n == 0 && val_fraction > 0.0 && idx.size() >= 2) val_n = 1;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (k < val_n)
                val_idx.push_back(idx[k]);
            else
                train_idx.push_back(idx[k]);
        }
    }
}

void stratified_split(std::span<const SyntheticSample> samples, double val_fraction,
                      std::uint64_t seed, std::vector<SyntheticSample>& train_out,
                      std::vector<SyntheticSample>& val_out) {
    std::vector<std::size_t> train_idx, val_idx;
    stratified_split_indices(samples, val_fraction, seed, train_idx, val_idx);
    train_out.clear();
    val_out.clear();
    for (std::size_t i : train_idx) train_out.push_back(samples[i]);
    for (std::size_t i : val_idx) val_out.push_back(samples[i]);
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("train config: max_epochs must be positive");
    if (patience == 0) throw ConfigError("train config: patience must be positive");
    adam.validate();
    loss.validate();
}

EvalResult evaluate(const FusionModel& model, std::span<const SyntheticSample> data,
                    const LossConfig& loss) {
    if (data.empty()) throw DataError("evaluate: no samples");
    EvalResult result;
    result.confusion = ConfusionMatrix(model.config().classes);
    for (const auto& s : data) {
        ForwardTrace tr = model.forward(s.pose, s.features, s.masks);
        std::size_t pred = 0;
        for (std::size_t k = 1; k < tr.probs.size(); ++k)
            if (tr.probs[k] > tr.probs[pred]) pred = k;
        result.confusion.add(s.label, pred);
        result.mean_ce += cross_entropy(tr.probs, s.label);
        result.mean_pose_loss += pose_mse(tr.aux_pred, s.future_pose);
    }
    result.mean_ce /= static_cast<double>(data.size());
    result.mean_pose_loss /= static_cast<double>(data.size());
    result.mpca = mean_per_class_accuracy(result.confusion);
    return result;
}

TrainHistory train(FusionModel& model, std::span<const SyntheticSample> train_set,
                   std::span<const SyntheticSample> val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training set");
    if (val_set.empty()) throw DataError("train: empty validation set");

    std::vector<Parameter*> params = model.parameters();
    model.zero_grads();
    Rng rng(cfg.seed);

    TrainHistory history;
    history.initial_val_pose_loss = evaluate(model, val_set, cfg.loss).mean_pose_loss;

    auto snapshot = [&params]() {
        std::vector<DenseTensor> values;
        values.reserve(params.size());
        for (const Parameter* p : params) values.push_back(p->value);
        return values;
    };
    std::vector<DenseTensor> best_values = snapshot();

    double best_mpca = -std::numeric_limits<double>::infinity();
    std::size_t stale_epochs = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const SyntheticSample& s = train_set[order[k]];
                ForwardTrace tr = model.forward(s.pose, s.features, s.masks, &rng);
                double ce = cross_entropy(tr.probs, s.label);
                double mse = pose_mse(tr.aux_pred, s.future_pose);
                loss_sum += ce + cfg.loss.lambda_pose * mse;
                DenseTensor d_probs = cross_entropy_backward(tr.probs, s.label, inv_batch);
                DenseTensor d_pred = pose_mse_backward(tr.aux_pred, s.future_pose,
                                                       cfg.loss.lambda_pose * inv_batch);
                model.backward(tr, d_probs, d_pred);
            }
            ops::adam_step(params, cfg.adam);
        }

        EvalResult val = evaluate(model, val_set, cfg.loss);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_set.size());
        stats.val_mpca = val.mpca;
        stats.val_pose_loss = val.mean_pose_loss;
        history.epochs.push_back(stats);

        if (val.mpca > best_mpca) {
            best_mpca = val.mpca;
            history.best_epoch = epoch;
            best_values = snapshot();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if (stale_epochs >= cfg.patience) {
                history.early_stopped = true;
                break;
            }
        }
    }

    history.best_val_mpca = best_mpca;
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    return history;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write training history to " + path.string());
    out << "epoch,train_loss,val_mpca\n";
    char buf[96];
    for (const EpochStats& e : history.epochs) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_mpca);
        out << buf;
    }
}

} // namespace adlfusion
