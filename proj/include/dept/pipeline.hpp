#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dept/depth_targets.hpp"
#include "dept/io_formats.hpp"
#include "dept/keypoint_targets.hpp"
#include "dept/log.hpp"
#include "dept/losses.hpp"

namespace dept {

// Everything the target generator needs to know. Defaults that come from the
// method are marked as such in the CLI help; the rest are tool choices.
struct PipelineConfig {
    int stride = 4;
    double max_depth = 60.0;  // method constant
    double sigma_lo = 0.3;    // method constant
    double sigma_hi = 0.7;    // method constant
    int patch_lo = 5;         // method constant
    int patch_hi = 3;         // method constant
    double propagated_weight = 1.0;
    double score_threshold = 0.3;
    Lambdas lambdas;
    int n_classes = 3;
    uint64_t seed = 0;
    int jobs = 0;  // 0 = hardware concurrency
    int image_w = 1242, image_h = 375;
    double sigma_const = 0.5;  // used when no per-frame sigma raster exists
    fs::path sigma_dir;        // optional per-frame sigma rasters, <frame_id>.bin

    void validate() const {
        if (stride < 1) throw Error("stride must be >= 1");
        if (!(max_depth > 0.0)) throw Error("max_depth must be > 0");
        PropagationParams prop{sigma_lo, sigma_hi, patch_lo, patch_hi, propagated_weight};
        prop.validate();
        if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
            throw Error("score_threshold must lie in [0,1]");
        if (n_classes < 1) throw Error("n_classes must be >= 1");
        if (jobs < 0) throw Error("jobs must be >= 0");
        if (image_w < 1 || image_h < 1) throw Error("image dims must be positive");
        if (!(sigma_const > 0.0)) throw Error("sigma_const must be > 0");
    }

    PropagationParams propagation() const {
        return {sigma_lo, sigma_hi, patch_lo, patch_hi, propagated_weight};
    }
};

// Detector boxes may hang over the image edge; clip them to the frame and
// drop any that collapse to a line in the process.
inline std::vector<Box2D> clip_boxes(const std::vector<Box2D>& boxes, int image_w, int image_h) {
    std::vector<Box2D> out;
    for (Box2D b : boxes) {
        b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(image_w));
        b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(image_w));
        b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(image_h));
        b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(image_h));
        if (b.x_min < b.x_max && b.y_min < b.y_max) out.push_back(b);
    }
    return out;
}

inline TargetBundle process_frame(const FrameRecord& rec, const PipelineConfig& cfg) {
    const KittiCalib calib = read_kitti_calib_file(rec.calib_path);
    const CameraModel cam = calib.camera(rec.image_w, rec.image_h);
    const std::vector<LidarPoint> points = read_velodyne_file(rec.lidar_path);

    const SparseDepthMap sparse = lidar_to_sparse_depth(points, calib.extrinsic, cam, cfg.stride);
    const std::vector<Box2D> boxes = clip_boxes(rec.boxes, rec.image_w, rec.image_h);
    const SparseDepthMap filtered = region_filter(sparse, boxes, cfg.max_depth);

    UncertaintyMap sigma(sparse.width, sparse.height, cfg.sigma_const);
    if (!cfg.sigma_dir.empty()) {
        const fs::path sigma_path = cfg.sigma_dir / (rec.frame_id + ".bin");
        if (fs::exists(sigma_path)) {
            sigma = read_sigma_file(sigma_path);
            require_same_shape(sigma.width, sigma.height, sparse.width, sparse.height,
                               "sigma raster vs target grid");
        }
    }

    TargetBundle bundle;
    bundle.depth = propagate(filtered, sigma, cfg.propagation());
    bundle.corners = corner_heatmaps(boxes, cfg.stride, sparse.width, sparse.height);
    bundle.detection =
        detection_targets(boxes, cfg.n_classes, cfg.stride, sparse.width, sparse.height);
    bundle.meta.frame_id = rec.frame_id;
    bundle.meta.image_w = rec.image_w;
    bundle.meta.image_h = rec.image_h;
    bundle.meta.stride = cfg.stride;
    bundle.meta.max_depth = cfg.max_depth;
    bundle.meta.sigma_lo = cfg.sigma_lo;
    bundle.meta.sigma_hi = cfg.sigma_hi;
    bundle.meta.patch_lo = cfg.patch_lo;
    bundle.meta.patch_hi = cfg.patch_hi;
    bundle.meta.propagated_weight = cfg.propagated_weight;
    bundle.meta.score_threshold = cfg.score_threshold;
    bundle.meta.n_classes = cfg.n_classes;
    return bundle;
}

struct FrameOutcome {
    std::string frame_id;
    bool ok = false;
    std::string error;
    int original = 0;
    int propagated = 0;
    int entries = 0;
    int boxes = 0;
};

struct GenSummary {
    int frames_total = 0;
    int frames_ok = 0;
    int frames_failed = 0;
    long long original_cells = 0;
    long long propagated_cells = 0;
    long long detection_entries = 0;
    int dropped_low_score = 0;
    int dropped_degenerate = 0;
    std::vector<long long> class_counts;             // boxes per class, ok frames only
    std::vector<std::optional<double>> class_weight;  // absent for zero-count classes
    std::vector<FrameOutcome> outcomes;              // sorted by frame id
};

// Runs the whole per-frame path over a dataset directory with a bounded
// worker pool. One bad frame is skipped and reported, never fatal. Output
// and report content are independent of the worker count.
inline GenSummary gen_targets(const fs::path& dataset_dir, const fs::path& out_dir,
                              const PipelineConfig& cfg) {
    cfg.validate();

    DetectionSet detections;
    const fs::path det_path = dataset_dir / "detections.ndjson";
    if (fs::exists(det_path)) detections = read_detections_file(det_path, cfg.score_threshold);

    const std::vector<FrameRecord> records =
        walk_dataset(dataset_dir, detections, cfg.image_w, cfg.image_h);

    GenSummary summary;
    summary.frames_total = static_cast<int>(records.size());
    summary.dropped_low_score = detections.dropped_low_score;
    summary.dropped_degenerate = detections.dropped_degenerate;
    summary.outcomes.resize(records.size());
    if (records.empty()) return summary;

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    int workers = cfg.jobs > 0 ? cfg.jobs : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, static_cast<int>(records.size()));

    std::atomic<size_t> cursor{0};
    auto run = [&] {
        for (size_t i; (i = cursor.fetch_add(1)) < records.size();) {
            const FrameRecord& rec = records[i];
            FrameOutcome& outcome = summary.outcomes[i];
            outcome.frame_id = rec.frame_id;
            try {
                const TargetBundle bundle = process_frame(rec, cfg);
                write_target_bundle(bundle, out_dir / rec.frame_id);
                outcome.ok = true;
                outcome.original = bundle.depth.count(Provenance::Original);
                outcome.propagated = bundle.depth.count(Provenance::Propagated);
                outcome.entries = static_cast<int>(bundle.detection.entries.size());
                outcome.boxes = static_cast<int>(
                    clip_boxes(rec.boxes, rec.image_w, rec.image_h).size());
                log_debug("frame " + rec.frame_id + " done");
            } catch (const std::exception& e) {
                outcome.ok = false;
                outcome.error = e.what();
                log_error("frame " + rec.frame_id + ": " + e.what());
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (std::thread& t : pool) t.join();

    summary.class_counts.assign(cfg.n_classes, 0);
    for (size_t i = 0; i < records.size(); ++i) {
        const FrameOutcome& outcome = summary.outcomes[i];
        if (!outcome.ok) {
            ++summary.frames_failed;
            continue;
        }
        ++summary.frames_ok;
        summary.original_cells += outcome.original;
        summary.propagated_cells += outcome.propagated;
        summary.detection_entries += outcome.entries;
        for (const Box2D& b : clip_boxes(records[i].boxes, records[i].image_w,
                                         records[i].image_h)) {
            if (b.class_id >= cfg.n_classes) throw UnknownClass(b.class_id);
            ++summary.class_counts[b.class_id];
        }
    }

    // Weights over the classes that actually occur; zero-count classes stay
    // blank rather than poisoning the table.
    summary.class_weight.assign(cfg.n_classes, std::nullopt);
    long long top = 0;
    for (long long c : summary.class_counts) top = std::max(top, c);
    if (top > 0)
        for (int k = 0; k < cfg.n_classes; ++k)
            if (summary.class_counts[k] > 0)
                summary.class_weight[k] =
                    std::sqrt(static_cast<double>(top) / summary.class_counts[k]);
    return summary;
}

inline std::string render_report(const GenSummary& s, const fs::path& dataset_dir,
                                 const fs::path& out_dir) {
    std::ostringstream out;
    out << kToolName << " gen-targets report\n";
    out << "dataset: " << dataset_dir.string() << "\n";
    out << "output: " << out_dir.string() << "\n";
    out << "frames: " << s.frames_ok << " ok, " << s.frames_failed << " failed, "
        << s.frames_total << " total\n";
    out << "depth cells: " << s.original_cells << " original, " << s.propagated_cells
        << " propagated\n";
    out << "detection entries: " << s.detection_entries << "\n";
    out << "boxes dropped: " << s.dropped_low_score << " low score, " << s.dropped_degenerate
        << " degenerate\n";
    out << "classes:\n";
    long long top = 0;
    for (long long c : s.class_counts) top = std::max(top, c);
    for (size_t k = 0; k < s.class_counts.size(); ++k) {
        out << "  class " << k << ": " << s.class_counts[k] << " boxes, w = ";
        if (s.class_weight[k]) {
            out << std::fixed << std::setprecision(4) << *s.class_weight[k]
                << std::defaultfloat;
            if (s.class_counts[k] == top) out << "  (majority)";
        } else {
            out << "-";
        }
        out << "\n";
    }
    out << "frames by id:\n";
    for (const FrameOutcome& f : s.outcomes) {
        if (f.ok)
            out << "  " << f.frame_id << ": ok (original " << f.original << ", propagated "
                << f.propagated << ", entries " << f.entries << ", boxes " << f.boxes << ")\n";
        else
            out << "  " << f.frame_id << ": FAILED " << f.error << "\n";
    }
    return out.str();
}

inline nlohmann::json report_json(const GenSummary& s, const fs::path& dataset_dir,
                                  const fs::path& out_dir) {
    nlohmann::json j;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["dataset"] = dataset_dir.string();
    j["output"] = out_dir.string();
    j["frames"] = {{"ok", s.frames_ok}, {"failed", s.frames_failed}, {"total", s.frames_total}};
    j["depth_cells"] = {{"original", s.original_cells}, {"propagated", s.propagated_cells}};
    j["detection_entries"] = s.detection_entries;
    j["dropped"] = {{"low_score", s.dropped_low_score}, {"degenerate", s.dropped_degenerate}};
    nlohmann::json classes = nlohmann::json::array();
    for (size_t k = 0; k < s.class_counts.size(); ++k) {
        nlohmann::json c;
        c["class_id"] = k;
        c["count"] = s.class_counts[k];
        if (s.class_weight[k])
            c["weight"] = *s.class_weight[k];
        else
            c["weight"] = nullptr;
        classes.push_back(c);
    }
    j["classes"] = std::move(classes);
    nlohmann::json frames = nlohmann::json::array();
    for (const FrameOutcome& f : s.outcomes) {
        nlohmann::json rec;
        rec["frame_id"] = f.frame_id;
        rec["ok"] = f.ok;
        if (f.ok) {
            rec["original"] = f.original;
            rec["propagated"] = f.propagated;
            rec["entries"] = f.entries;
            rec["boxes"] = f.boxes;
        } else {
            rec["error"] = f.error;
        }
        frames.push_back(rec);
    }
    j["frames_by_id"] = std::move(frames);
    return j;
}

}  // namespace dept
