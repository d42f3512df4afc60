// Command-line front end: argument handling and exit-code mapping only, all
// work happens in the pipeline layer.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "adlfusion/errors.hpp"
#include "adlfusion/pipeline.hpp"

namespace {

using namespace adlfusion;

std::filesystem::path resolve_path(const std::string& flag, const std::filesystem::path& from_cfg,
                                   const char* what) {
    if (!flag.empty()) return flag;
    if (!from_cfg.empty()) return from_cfg;
    throw ConfigError(std::string("no ") + what + " given (flag or config paths section)");
}

std::optional<std::filesystem::path> optional_path(const std::string& flag) {
    if (flag.empty()) return std::nullopt;
    return std::filesystem::path(flag);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"activity recognition pipeline; flags override config keys "
                 "(precedence: flag > config > default)"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "pipeline configuration JSON");
    std::optional<std::uint64_t> seed_flag;
    app.add_option("--seed", seed_flag, "seed override, propagates to every stage");
    bool dry_run = false;
    app.add_flag("--dry-run", dry_run, "validate the configuration and exit without writing");

    auto* pp = app.add_subcommand("preprocess-pose",
                                  "view-normalize one pose clip and subsample in time");
    std::string pp_pose, pp_joints, pp_out_pose, pp_out_angles;
    std::optional<std::size_t> stride_flag;
    pp->add_option("--pose", pp_pose, "input pose TNSR of shape [T, J, 3]")->required();
    pp->add_option("--joints", pp_joints, "joint map JSON (torso joint indices)")->required();
    pp->add_option("--stride", stride_flag, "temporal stride (config key: stride)");
    pp->add_option("--out-pose", pp_out_pose, "normalized pose TNSR")->required();
    pp->add_option("--out-angles", pp_out_angles, "rotation angles JSON")->required();

    auto* cp = app.add_subcommand("crop", "square activity crop from person detections");
    std::string cp_dets, cp_video, cp_frames, cp_out_frames, cp_out_crop;
    std::optional<std::size_t> size_flag;
    cp->add_option("--detections", cp_dets, "detections JSONL");
    cp->add_option("--video", cp_video, "video id when the stream covers several");
    cp->add_option("--frames", cp_frames, "frames TNSR [T, H, W, 3] to crop");
    cp->add_option("--size", size_flag, "output side in pixels (config key: crop_size)");
    cp->add_option("--out-frames", cp_out_frames, "cropped frames TNSR");
    cp->add_option("--out-crop", cp_out_crop, "crop geometry JSON")->required();

    auto* go = app.add_subcommand("group-objects",
                                  "merge detector classes into co-occurrence groups");
    std::string go_dets, go_labels, go_out;
    std::optional<std::size_t> target_flag;
    go->add_option("--detections", go_dets, "detections JSONL");
    go->add_option("--labels", go_labels, "video id to activity JSON");
    go->add_option("--target", target_flag, "group count (config key: model.groups)");
    go->add_option("--out-dir", go_out, "output directory for grouping.json and masks/");

    auto* tr = app.add_subcommand("train", "train on the synthetic set from the config");
    std::string tr_out, tr_split;
    tr->add_option("--out", tr_out, "model output directory");
    tr->add_option("--split", tr_split, "split JSON (train/val indices)");

    auto* ev = app.add_subcommand("eval", "evaluate a trained model, prints metrics JSON");
    std::string ev_model, ev_split;
    ev->add_option("--model", ev_model, "model directory from train");
    ev->add_option("--split", ev_split, "split JSON (prefers test, then val)");

    auto* da = app.add_subcommand("dump-attention",
                                  "write per-clip temporal and cross-attention weights");
    std::string da_model, da_split, da_out;
    da->add_option("--model", da_model, "model directory from train");
    da->add_option("--split", da_split, "split JSON selecting the clips");
    da->add_option("--out", da_out, "output directory for clip_*.json");

    app.add_subcommand("version", "print tool version and config schema version");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        PipelineConfig cfg;
        if (!config_path.empty()) cfg = load_pipeline_config(config_path);
        if (seed_flag) cfg.seed = *seed_flag;
        if (stride_flag) cfg.stride = *stride_flag;
        if (size_flag) cfg.crop_size = *size_flag;

        if (app.got_subcommand("version")) {
            std::printf("adlfusion %s (config schema %d)\n", kToolVersion, kConfigSchemaVersion);
            return 0;
        }

        if (dry_run) {
            cfg.validate();
            if (cfg.stride == 0) throw ConfigError("stride must be positive");
            std::printf("configuration ok\n");
            return 0;
        }

        if (app.got_subcommand(pp)) {
            PreprocessPoseOutcome out =
                run_preprocess_pose(pp_pose, pp_joints, cfg.stride, pp_out_pose, pp_out_angles);
            if (out.single_frame_warning)
                std::fprintf(stderr,
                             "warning: stride exceeds clip length, only frame 0 kept\n");
            std::printf("kept %zu frames, alpha %.6f\n", out.kept_frames.size(),
                        out.angles.alpha_y);
        } else if (app.got_subcommand(cp)) {
            CropOutcome out = run_crop(
                resolve_path(cp_dets, cfg.paths.detections, "detections path"),
                cp_video.empty() ? std::nullopt : std::make_optional(cp_video),
                optional_path(cp_frames), cfg.crop_size, optional_path(cp_out_frames),
                std::filesystem::path(cp_out_crop));
            std::printf("crop side %.2f at (%.2f, %.2f), %zu frames written\n", out.crop.side,
                        out.crop.x0, out.crop.y0, out.frames_written);
        } else if (app.got_subcommand(go)) {
            std::size_t target = target_flag ? *target_flag : cfg.model.groups;
            GroupObjectsOutcome out = run_group_objects(
                cfg, resolve_path(go_dets, cfg.paths.detections, "detections path"),
                resolve_path(go_labels, cfg.paths.labels, "labels path"), target,
                resolve_path(go_out, cfg.paths.output_dir, "output directory"));
            std::printf("%zu groups, masks for %zu videos", out.grouping.groups.size(),
                        out.masks_written.size());
            if (!out.skipped_videos.empty())
                std::printf(" (%zu skipped, no person boxes)", out.skipped_videos.size());
            if (out.grouping.undefined_fallback)
                std::printf(" [fallback merges: all correlations undefined]");
            std::printf("\n");
        } else if (app.got_subcommand(tr)) {
            std::filesystem::path model_dir =
                tr_out.empty() ? resolve_path("", cfg.paths.output_dir, "output directory") /
                                     "model"
                               : std::filesystem::path(tr_out);
            TrainOutcome out = run_train(cfg, optional_path(tr_split), model_dir);
            std::printf("trained %zu epochs%s, best val mpca %.4f at epoch %zu, model in %s\n",
                        out.history.epochs.size(),
                        out.history.early_stopped ? " (early stop)" : "",
                        out.history.best_val_mpca, out.history.best_epoch,
                        model_dir.string().c_str());
        } else if (app.got_subcommand(ev)) {
            std::filesystem::path model_dir =
                ev_model.empty()
                    ? resolve_path("", cfg.paths.output_dir, "model directory") / "model"
                    : std::filesystem::path(ev_model);
            EvalResult result = run_eval(cfg, model_dir, optional_path(ev_split));
            std::printf("%s\n", metrics_to_json(result).c_str());
        } else if (app.got_subcommand(da)) {
            std::filesystem::path model_dir =
                da_model.empty()
                    ? resolve_path("", cfg.paths.output_dir, "model directory") / "model"
                    : std::filesystem::path(da_model);
            std::filesystem::path out_dir =
                da_out.empty()
                    ? resolve_path("", cfg.paths.output_dir, "output directory") / "attention"
                    : std::filesystem::path(da_out);
            std::size_t n = run_dump_attention(cfg, model_dir, optional_path(da_split), out_dir);
            std::printf("wrote attention for %zu clips to %s\n", n, out_dir.string().c_str());
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
