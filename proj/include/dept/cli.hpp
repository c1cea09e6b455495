#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "dept/gradcheck.hpp"
#include "dept/io_formats.hpp"
#include "dept/pipeline.hpp"
#include "dept/toygrad.hpp"
#include "dept/version.hpp"

namespace dept::cli {

// Exit codes, stable contract: 0 success, 1 input error, 2
// verification/divergence failure.
inline constexpr int kOk = 0;
inline constexpr int kInputError = 1;
inline constexpr int kVerificationError = 2;

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

inline std::string curve_csv_rows(const std::string& run,
                                  const std::vector<LossBreakdown>& curve) {
    std::string text;
    for (size_t i = 0; i < curve.size(); ++i) {
        const LossBreakdown& b = curve[i];
        text += run + "," + std::to_string(i + 1) + "," + fmt(b.depth) + "," +
                fmt(b.corner_focal) + "," + fmt(b.center_focal) + "," + fmt(b.size) + "," +
                fmt(b.offset) + "," + fmt(b.total) + "\n";
    }
    return text;
}

inline constexpr const char* kCsvHeader =
    "run,epoch,depth,corner_focal,center_focal,size,offset,total\n";

}  // namespace detail

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"supervision-target generator and training toolkit for joint depth + 2d "
                 "detection pre-training"};
    app.name(kToolName);
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "",
                   "key=value file with [gen-targets] / [toy] sections; explicit flags win");

    // gen-targets ------------------------------------------------------------
    PipelineConfig cfg;
    std::string dataset_dir, gen_out_dir, sigma_dir;
    bool gen_json = false;
    CLI::App* gen = app.add_subcommand(
        "gen-targets", "build per-frame supervision bundles from lidar, calib and 2d boxes");
    gen->add_option("dataset", dataset_dir,
                    "dataset dir holding velodyne/, calib/ and detections.ndjson")
        ->required();
    gen->add_option("--out", gen_out_dir, "output directory, one bundle per frame")->required();
    gen->add_option("--stride", cfg.stride, "pixels per target-grid cell (tool default 4)")
        ->capture_default_str();
    gen->add_option("--max-depth", cfg.max_depth,
                    "depth supervision cutoff in meters (method constant 60)")
        ->capture_default_str();
    gen->add_option("--sigma-lo", cfg.sigma_lo,
                    "uncertainty below which a seed stamps a 5x5 patch (method constant 0.3)")
        ->capture_default_str();
    gen->add_option("--sigma-hi", cfg.sigma_hi,
                    "uncertainty up to which a seed stamps a 3x3 patch (method constant 0.7)")
        ->capture_default_str();
    gen->add_option("--patch-lo", cfg.patch_lo,
                    "patch side for confident seeds (method constant 5)")
        ->capture_default_str();
    gen->add_option("--patch-hi", cfg.patch_hi,
                    "patch side for mid-confidence seeds (method constant 3)")
        ->capture_default_str();
    gen->add_option("--propagated-weight", cfg.propagated_weight,
                    "loss weight of copied depth cells (tool default 1)")
        ->capture_default_str();
    gen->add_option("--score-threshold", cfg.score_threshold,
                    "drop boxes scored strictly below this (tool default 0.3)")
        ->capture_default_str();
    gen->add_option("--n-classes", cfg.n_classes, "number of box classes (tool default 3)")
        ->capture_default_str();
    gen->add_option("--seed", cfg.seed, "rng seed recorded in reports (tool default 0)")
        ->capture_default_str();
    gen->add_option("--jobs", cfg.jobs,
                    "worker threads, 0 = all hardware threads (tool default 0)")
        ->capture_default_str();
    gen->add_option("--image-w", cfg.image_w,
                    "image width when frames.ndjson is absent (tool default 1242)")
        ->capture_default_str();
    gen->add_option("--image-h", cfg.image_h,
                    "image height when frames.ndjson is absent (tool default 375)")
        ->capture_default_str();
    gen->add_option("--sigma-const", cfg.sigma_const,
                    "uniform depth uncertainty when no raster is supplied (tool default 0.5)")
        ->capture_default_str();
    gen->add_option("--sigma-dir", sigma_dir,
                    "directory of per-frame sigma rasters, <frame_id>.bin (tool default: none)");
    gen->add_flag("--json", gen_json, "also write report.json next to report.txt");

    // gradcheck --------------------------------------------------------------
    uint64_t gc_seed = 42;
    bool gc_perturb = false;
    CLI::App* gc = app.add_subcommand(
        "gradcheck", "verify every analytic gradient against central finite differences");
    gc->add_option("--seed", gc_seed, "rng seed for the probe points (tool default 42)")
        ->capture_default_str();
    gc->add_flag("--perturb", gc_perturb)->group("");  // negative control, hidden

    // toy --------------------------------------------------------------------
    std::string toy_mode;
    std::string toy_out;
    toy::TrainConfig tc;
    tc.epochs = 60;
    tc.pretrain_epochs = 40;
    int toy_scenes = 6;
    CLI::App* toy_cmd = app.add_subcommand(
        "toy", "train the desk-scale model or run the pretrain-vs-scratch comparison");
    toy_cmd->add_option("--mode", toy_mode, "train | transfer")
        ->required()
        ->check(CLI::IsMember({"train", "transfer"}));
    toy_cmd->add_option("--epochs", tc.epochs, "fine-tune / train epochs (tool default 60)")
        ->capture_default_str();
    toy_cmd
        ->add_option("--pretrain-epochs", tc.pretrain_epochs,
                     "depth-only epochs before fine-tuning, transfer mode (tool default 40)")
        ->capture_default_str();
    toy_cmd->add_option("--lr", tc.learning_rate, "sgd learning rate (tool default 0.02)")
        ->capture_default_str();
    toy_cmd->add_option("--seed", tc.seed, "net init + data order seed (tool default 1)")
        ->capture_default_str();
    toy_cmd->add_option("--batch", tc.batch, "scenes per sgd step (tool default 1)")
        ->capture_default_str();
    toy_cmd->add_option("--scenes", toy_scenes, "scenes per set (tool default 6)")
        ->capture_default_str();
    toy_cmd->add_option("--hidden", tc.hidden, "hidden units (tool default 32)")
        ->capture_default_str();
    toy_cmd
        ->add_option("--propagated-weight", tc.propagated_weight,
                     "loss weight of copied depth cells (tool default 1)")
        ->capture_default_str();
    toy_cmd->add_option("--lambda-depth", tc.lambdas.depth, "depth term weight (tool default 1)")
        ->capture_default_str();
    toy_cmd
        ->add_option("--lambda-corner", tc.lambdas.corner, "corner term weight (tool default 1)")
        ->capture_default_str();
    toy_cmd
        ->add_option("--lambda-center", tc.lambdas.center, "center term weight (tool default 1)")
        ->capture_default_str();
    toy_cmd->add_option("--lambda-size", tc.lambdas.size, "size term weight (tool default 1)")
        ->capture_default_str();
    toy_cmd
        ->add_option("--lambda-offset", tc.lambdas.offset, "offset term weight (tool default 1)")
        ->capture_default_str();
    toy_cmd->add_option("--out", toy_out, "write the loss-curve csv here instead of stdout");

    // class-weights ----------------------------------------------------------
    std::string cw_path;
    int cw_classes = 3;
    double cw_threshold = 0.3;
    CLI::App* cw = app.add_subcommand("class-weights",
                                      "per-class loss weights from a detections file");
    cw->add_option("detections", cw_path, "newline-delimited json detections")->required();
    cw->add_option("--n-classes", cw_classes, "number of box classes (tool default 3)")
        ->capture_default_str();
    cw->add_option("--score-threshold", cw_threshold,
                   "drop boxes scored strictly below this (tool default 0.3)")
        ->capture_default_str();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInputError;
    }

    try {
        if (gen->parsed()) {
            cfg.sigma_dir = sigma_dir;
            cfg.validate();
            std::error_code ec;
            fs::create_directories(gen_out_dir, ec);
            if (ec) throw IoError("cannot create " + gen_out_dir + ": " + ec.message());

            const GenSummary summary = gen_targets(dataset_dir, gen_out_dir, cfg);
            const std::string report = render_report(summary, dataset_dir, gen_out_dir);
            out << report;
            detail::write_text(fs::path(gen_out_dir) / "report.txt", report);
            if (gen_json)
                detail::write_text(fs::path(gen_out_dir) / "report.json",
                                   report_json(summary, dataset_dir, gen_out_dir).dump(2) + "\n");
            if (summary.frames_total == 0) {
                err << "no frames found in " << dataset_dir << "\n";
                return kInputError;
            }
            return summary.frames_failed > 0 ? kInputError : kOk;
        }

        if (gc->parsed()) {
            const auto results = gradcheck::run_all(gc_seed, gc_perturb);
            out << gradcheck::render(results, gc_seed);
            return gradcheck::all_pass(results) ? kOk : kVerificationError;
        }

        if (toy_cmd->parsed()) {
            toy::SceneParams sp;
            std::string csv{detail::kCsvHeader};
            if (toy_mode == "train") {
                const auto scenes = toy::make_scenes(sp, toy_scenes, tc.seed);
                toy::ToyNet net;
                net.init(sp.feature_dim, tc.hidden, kCornerChannels + sp.n_classes, tc.seed,
                         tc.init_scale);
                const auto curve = toy::train(net, scenes, tc, toy::TrainMode::combined);
                csv += detail::curve_csv_rows("train", curve);
            } else {
                const auto pre = toy::make_scenes(sp, toy_scenes, tc.seed);
                const auto fine = toy::make_scenes(sp, toy_scenes, tc.seed + 7919);
                const toy::TransferResult res = toy::transfer_experiment(pre, fine, tc);
                csv += detail::curve_csv_rows("pretrained", res.pretrained_finetune);
                csv += detail::curve_csv_rows("scratch", res.scratch_finetune);
                out << "depth loss, mean of fine-tune epochs 1-5: pretrained "
                    << detail::fmt4(res.pretrained_early_depth_mean) << ", scratch "
                    << detail::fmt4(res.scratch_early_depth_mean) << "\n";
                out << "verdict: " << (res.pretrained_faster ? "pretrained faster"
                                                             : "pretrained not faster")
                    << "\n";
            }
            if (toy_out.empty())
                out << csv;
            else
                detail::write_text(toy_out, csv);
            return kOk;
        }

        if (cw->parsed()) {
            const DetectionSet set = read_detections_file(cw_path, cw_threshold);
            std::vector<Box2D> all;
            for (const auto& [id, boxes] : set.by_frame)
                all.insert(all.end(), boxes.begin(), boxes.end());
            const auto counts = count_classes(std::span<const Box2D>(all), cw_classes);
            const ClassWeightTable table = class_weights(counts);
            long long top = 0;
            for (long long c : counts) top = std::max(top, c);
            for (int k = 0; k < cw_classes; ++k) {
                out << "class " << k << ": count " << counts[k] << ", w = "
                    << detail::fmt4(table.weights[k]);
                if (counts[k] == top) out << "  (majority)";
                out << "\n";
            }
            return kOk;
        }
    } catch (const DivergenceDetected& e) {
        err << kToolName << ": " << e.what() << "\n";
        return kVerificationError;
    } catch (const ZeroCount& e) {
        err << kToolName << ": " << e.what() << "\n";
        return kVerificationError;
    } catch (const std::exception& e) {
        err << kToolName << ": " << e.what() << "\n";
        return kInputError;
    }
    return kInputError;
}

}  // namespace dept::cli
