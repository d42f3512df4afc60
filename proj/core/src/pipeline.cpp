#include "adlfusion/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "adlfusion/errors.hpp"
#include "json_util.hpp"

namespace adlfusion {

namespace {

nlohmann::json read_json_file(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed ") + what + " " + path.string() + ": " +
                          e.what());
    }
    return j;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::map<std::string, std::string> read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open labels file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed labels file " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw DataError("labels file " + path.string() +
                                        " must map video ids to activity names");
    std::map<std::string, std::string> labels;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_string())
            throw DataError("labels file " + path.string() + ": activity for \"" + key +
                            "\" is not a string");
        labels[key] = value.get<std::string>();
    }
    return labels;
}

std::vector<std::size_t> index_vector(const nlohmann::json& j, const char* key) {
    std::vector<std::size_t> out;
    if (!j.contains(key)) return out;
    for (const auto& v : j.at(key)) out.push_back(v.get<std::size_t>());
    return out;
}

void check_indices(const std::vector<std::size_t>& idx, std::size_t n, const char* what) {
    for (std::size_t i : idx)
        if (i >= n)
            throw DataError(std::string("split ") + what + " index " + std::to_string(i) +
                            " out of range for " + std::to_string(n) + " clips");
}

std::vector<SyntheticSample> take(const std::vector<SyntheticSample>& all,
                                  const std::vector<std::size_t>& idx) {
    std::vector<SyntheticSample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

// eval order of preference: explicit test split, then val, then everything.
std::vector<std::size_t> eval_indices(const SplitIndices& split, std::size_t n) {
    if (!split.test.empty()) return split.test;
    if (!split.val.empty()) return split.val;
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
}

SplitIndices resolve_split(const PipelineConfig& cfg,
                           const std::optional<std::filesystem::path>& split_path,
                           const std::filesystem::path& model_dir, std::size_t n) {
    if (split_path) {
        SplitIndices s = load_split(*split_path);
        check_indices(s.train, n, "train");
        check_indices(s.val, n, "val");
        check_indices(s.test, n, "test");
        return s;
    }
    std::filesystem::path saved = model_dir / "split.json";
    if (std::filesystem::exists(saved)) {
        SplitIndices s = load_split(saved);
        check_indices(s.train, n, "train");
        check_indices(s.val, n, "val");
        check_indices(s.test, n, "test");
        return s;
    }
    (void)cfg;
    return SplitIndices{};
}

} // namespace

void PipelineConfig::validate() const {
    model.validate();
    train.validate();
    if (dataset.classes == 0 || dataset.clips_per_class == 0)
        throw ConfigError("config: dataset.classes and dataset.clips_per_class must be positive");
    if (dataset.classes > model.classes)
        throw ConfigError("config: dataset.classes (" + std::to_string(dataset.classes) +
                          ") exceeds model.classes (" + std::to_string(model.classes) + ")");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("config: val_fraction must be in [0, 1)");
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
        throw ConfigError("config: confidence_threshold must be in [0, 1]");
    if (stride == 0) throw ConfigError("config: stride must be positive");
    if (crop_size == 0) throw ConfigError("config: crop_size must be positive");
}

PipelineConfig load_pipeline_config(const std::filesystem::path& json_path) {
    nlohmann::json j = read_json_file(json_path, "config");
    PipelineConfig cfg;
    try {
        int schema = j.value("schema_version", kConfigSchemaVersion);
        if (schema != kConfigSchemaVersion)
            throw ConfigError("config schema version " + std::to_string(schema) +
                              " unsupported (tool speaks " +
                              std::to_string(kConfigSchemaVersion) + ")");
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("model")) cfg.model = detail::model_config_from_json(j.at("model"));
        if (j.contains("train")) {
            const auto& t = j.at("train");
            cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
            cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
            cfg.train.patience = t.value("patience", cfg.train.patience);
            cfg.train.adam.learning_rate =
                t.value("learning_rate", cfg.train.adam.learning_rate);
            cfg.train.adam.beta1 = t.value("beta1", cfg.train.adam.beta1);
            cfg.train.adam.beta2 = t.value("beta2", cfg.train.adam.beta2);
            cfg.train.adam.epsilon = t.value("epsilon", cfg.train.adam.epsilon);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            cfg.train.loss.lambda_pose = l.value("lambda_pose", cfg.train.loss.lambda_pose);
            cfg.train.loss.delta_horizon = l.value("delta_horizon", cfg.train.loss.delta_horizon);
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            cfg.dataset.classes = d.value("classes", cfg.dataset.classes);
            cfg.dataset.clips_per_class = d.value("clips_per_class", cfg.dataset.clips_per_class);
            cfg.dataset.pose_noise = d.value("pose_noise", cfg.dataset.pose_noise);
            cfg.dataset.feature_noise = d.value("feature_noise", cfg.dataset.feature_noise);
            cfg.dataset.signal = d.value("signal", cfg.dataset.signal);
            cfg.val_fraction = d.value("val_fraction", cfg.val_fraction);
        }
        cfg.confidence_threshold = j.value("confidence_threshold", cfg.confidence_threshold);
        cfg.stride = j.value("stride", cfg.stride);
        cfg.crop_size = j.value("crop_size", cfg.crop_size);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            auto path_of = [&](const char* key) -> std::filesystem::path {
                return p.contains(key) ? std::filesystem::path(p.at(key).get<std::string>())
                                       : std::filesystem::path();
            };
            cfg.paths.detections = path_of("detections");
            cfg.paths.poses = path_of("poses");
            cfg.paths.joints = path_of("joints");
            cfg.paths.labels = path_of("labels");
            cfg.paths.vocabulary = path_of("vocabulary");
            cfg.paths.output_dir = path_of("output_dir");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + json_path.string() + ": " + e.what());
    }
    return cfg;
}

SplitIndices load_split(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open split file " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed split file " + json_path.string() + ": " + e.what());
    }
    SplitIndices split;
    try {
        split.train = index_vector(j, "train");
        split.val = index_vector(j, "val");
        split.test = index_vector(j, "test");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed split file " + json_path.string() + ": " + e.what());
    }
    return split;
}

void save_split(const std::filesystem::path& json_path, const SplitIndices& split) {
    nlohmann::json j;
    j["train"] = split.train;
    j["val"] = split.val;
    if (!split.test.empty()) j["test"] = split.test;
    write_json_file(json_path, j);
}

std::vector<SyntheticSample> build_synthetic_dataset(const PipelineConfig& cfg) {
    return generate_synthetic(cfg.model, cfg.dataset, cfg.train.loss, cfg.seed);
}

PreprocessPoseOutcome run_preprocess_pose(const std::filesystem::path& pose_in,
                                          const std::filesystem::path& joints_json,
                                          std::size_t stride,
                                          const std::filesystem::path& pose_out,
                                          const std::filesystem::path& angles_out) {
    JointMap joints = load_joint_map(joints_json);
    PoseSequence pose = load_pose(pose_in, joints);
    NormalizeResult norm = normalize_sequence(pose);
    SubsampleResult sub = temporal_subsample(norm.pose, stride);
    save_pose(pose_out, sub.pose);
    save_angles(angles_out, norm.angles, sub.kept_frames);
    PreprocessPoseOutcome outcome;
    outcome.angles = norm.angles;
    outcome.kept_frames = sub.kept_frames;
    outcome.single_frame_warning = sub.single_frame_warning;
    return outcome;
}

CropOutcome run_crop(const std::filesystem::path& detections_path,
                     const std::optional<std::string>& video_id,
                     const std::optional<std::filesystem::path>& frames_in,
                     std::size_t out_size,
                     const std::optional<std::filesystem::path>& frames_out,
                     const std::filesystem::path& crop_json_out) {
    std::vector<DetectionBox> boxes = read_detections_jsonl(detections_path);
    std::vector<DetectionBox> person;
    std::vector<std::string> videos;
    for (const auto& b : boxes) {
        if (video_id && b.video_id != *video_id) continue;
        if (std::find(videos.begin(), videos.end(), b.video_id) == videos.end())
            videos.push_back(b.video_id);
        if (b.class_id == kPersonClassId) person.push_back(b);
    }
    if (!video_id && videos.size() > 1)
        throw DataError("crop: detections cover " + std::to_string(videos.size()) +
                        " videos; select one with --video");
    if (person.empty())
        throw DataError("crop: no person detections" +
                        (video_id ? " for video " + *video_id : std::string()) + " in " +
                        detections_path.string());

    BoundingBox bbox = full_activity_bbox(person);
    CropOutcome outcome;
    if (frames_in) {
        DenseTensor frames = read_tnsr(*frames_in);
        if (frames.rank() != 4 || frames.dim(3) != 3)
            throw DataError("crop: frames tensor " + frames_in->string() +
                            " must have shape [T, H, W, 3], got " +
                            shape_string(frames.shape()));
        outcome.crop = squarify(bbox, frames.dim(2), frames.dim(1));
        DenseTensor cropped = crop_frames(frames, outcome.crop, out_size);
        if (!frames_out) throw ConfigError("crop: --out-frames required when frames are given");
        write_tnsr(*frames_out, cropped);
        outcome.frames_written = cropped.dim(0);
    } else {
        outcome.crop = squarify(bbox, 0, 0);
    }

    nlohmann::json j;
    j["x0"] = outcome.crop.x0;
    j["y0"] = outcome.crop.y0;
    j["side"] = outcome.crop.side;
    j["image_width"] = outcome.crop.image_width;
    j["image_height"] = outcome.crop.image_height;
    j["out_size"] = out_size;
    write_json_file(crop_json_out, j);
    return outcome;
}

GroupObjectsOutcome run_group_objects(const PipelineConfig& cfg,
                                      const std::filesystem::path& detections_path,
                                      const std::filesystem::path& labels_path,
                                      std::size_t target_groups,
                                      const std::filesystem::path& out_dir) {
    std::vector<DetectionBox> boxes = read_detections_jsonl(detections_path);
    std::map<std::string, std::string> labels = read_labels(labels_path);
    Vocabulary vocab = cfg.paths.vocabulary.empty() ? default_home_vocabulary()
                                                    : load_vocabulary(cfg.paths.vocabulary);

    IncidenceMatrix inc = build_incidence(boxes, labels, cfg.confidence_threshold, vocab);
    ObjectGrouping grouping = merge_groups(inc, target_groups);

    std::filesystem::create_directories(out_dir);
    save_grouping(out_dir / "grouping.json", grouping, vocab);

    GroupObjectsOutcome outcome;
    outcome.grouping = grouping;

    std::filesystem::path mask_dir = out_dir / "masks";
    std::filesystem::create_directories(mask_dir);
    for (std::size_t v = 0; v < inc.video_ids.size(); ++v) {
        const std::string& vid = inc.video_ids[v];
        std::vector<DetectionBox> person;
        for (const auto& b : boxes)
            if (b.video_id == vid && b.class_id == kPersonClassId) person.push_back(b);
        if (person.empty()) {
            outcome.skipped_videos.push_back(vid);
            continue;
        }
        ActivityCrop crop = squarify(full_activity_bbox(person), 0, 0);

        std::vector<GridMask> group_masks;
        group_masks.reserve(grouping.groups.size());
        for (const auto& members : grouping.groups) {
            std::vector<DetectionBox> member_boxes;
            for (const auto& b : boxes) {
                if (b.video_id != vid || b.confidence < cfg.confidence_threshold) continue;
                auto idx = vocab.index_of(b.class_id);
                if (!idx) continue;
                if (std::find(members.begin(), members.end(), *idx) != members.end())
                    member_boxes.push_back(b);
            }
            group_masks.push_back(
                temporal_object_mask(member_boxes, crop, cfg.model.grid_h, cfg.model.grid_w));
        }
        write_tnsr(mask_dir / (vid + ".tnsr"), masks_to_tensor(group_masks));
        outcome.masks_written.push_back(vid);
    }
    return outcome;
}

TrainOutcome run_train(const PipelineConfig& cfg,
                       const std::optional<std::filesystem::path>& split_path,
                       const std::filesystem::path& model_dir) {
    cfg.validate();
    std::vector<SyntheticSample> dataset = build_synthetic_dataset(cfg);

    SplitIndices split;
    if (split_path) {
        split = load_split(*split_path);
        check_indices(split.train, dataset.size(), "train");
        check_indices(split.val, dataset.size(), "val");
        check_indices(split.test, dataset.size(), "test");
        if (split.train.empty() || split.val.empty())
            throw DataError("split file " + split_path->string() +
                            " must provide train and val indices");
    } else {
        stratified_split_indices(dataset, cfg.val_fraction, cfg.seed, split.train, split.val);
    }

    FusionModel model(cfg.model, chain_skeleton(cfg.model.joints));
    model.init_params(cfg.seed);

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    std::vector<SyntheticSample> train_set = take(dataset, split.train);
    std::vector<SyntheticSample> val_set = take(dataset, split.val);

    TrainOutcome outcome;
    outcome.history = train(model, train_set, val_set, tc);
    outcome.final_val = evaluate(model, val_set, tc.loss);

    std::filesystem::create_directories(model_dir);
    model.save(model_dir);
    write_history_csv(model_dir / "history.csv", outcome.history);
    save_split(model_dir / "split.json", split);
    return outcome;
}

EvalResult run_eval(const PipelineConfig& cfg, const std::filesystem::path& model_dir,
                    const std::optional<std::filesystem::path>& split_path) {
    cfg.validate();
    FusionModel model = FusionModel::load(model_dir);
    std::vector<SyntheticSample> dataset = build_synthetic_dataset(cfg);
    SplitIndices split = resolve_split(cfg, split_path, model_dir, dataset.size());
    std::vector<SyntheticSample> subset = take(dataset, eval_indices(split, dataset.size()));
    return evaluate(model, subset, cfg.train.loss);
}

std::string metrics_to_json(const EvalResult& result) {
    nlohmann::json j;
    j["mean_per_class"] = result.mpca;
    j["mean_cross_entropy"] = result.mean_ce;
    j["mean_pose_loss"] = result.mean_pose_loss;
    std::size_t n = 0;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t t = 0; t < result.confusion.classes; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t p = 0; p < result.confusion.classes; ++p) {
            row.push_back(result.confusion.at(t, p));
            n += result.confusion.at(t, p);
        }
        rows.push_back(row);
    }
    j["confusion"] = rows;
    j["samples"] = n;
    return j.dump(2);
}

std::size_t run_dump_attention(const PipelineConfig& cfg,
                               const std::filesystem::path& model_dir,
                               const std::optional<std::filesystem::path>& split_path,
                               const std::filesystem::path& out_dir) {
    cfg.validate();
    FusionModel model = FusionModel::load(model_dir);
    std::vector<SyntheticSample> dataset = build_synthetic_dataset(cfg);
    SplitIndices split = resolve_split(cfg, split_path, model_dir, dataset.size());
    std::vector<std::size_t> indices = eval_indices(split, dataset.size());

    std::filesystem::create_directories(out_dir);
    for (std::size_t i : indices) {
        const SyntheticSample& s = dataset[i];
        ForwardTrace tr = model.forward(s.pose, s.features, s.masks);
        nlohmann::json j;
        j["clip"] = i;
        j["label"] = s.label;
        j["alpha"] = std::vector<double>(tr.alpha.data(), tr.alpha.data() + tr.alpha.size());
        nlohmann::json heads = nlohmann::json::array();
        for (const DenseTensor& probs : tr.cross.probs) {
            nlohmann::json rows = nlohmann::json::array();
            std::size_t g = probs.dim(0), n = probs.dim(1);
            for (std::size_t row = 0; row < g; ++row)
                rows.push_back(std::vector<double>(probs.data() + row * n,
                                                   probs.data() + (row + 1) * n));
            heads.push_back(rows);
        }
        j["cross_attention"] = heads;
        char name[32];
        std::snprintf(name, sizeof name, "clip_%04zu.json", i);
        write_json_file(out_dir / name, j);
    }
    return indices.size();
}

} // namespace adlfusion
