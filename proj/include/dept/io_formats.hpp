#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dept/depth_targets.hpp"
#include "dept/errors.hpp"
#include "dept/geometry.hpp"
#include "dept/keypoint_targets.hpp"
#include "dept/log.hpp"
#include "dept/png16.hpp"
#include "dept/version.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw rasters and velodyne files are little-endian; big-endian hosts unsupported");

namespace dept {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Calibration

// Intrinsics of the left color camera plus the lidar-to-rectified-camera
// transform, as carried by a calibration text file.
struct KittiCalib {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    RigidTransform extrinsic;  // lidar frame -> rectified camera frame
    std::optional<Eigen::Matrix3d> rect;

    CameraModel camera(int image_w, int image_h) const {
        CameraModel cam{fx, fy, cx, cy, image_w, image_h};
        cam.validate();
        return cam;
    }
};

namespace detail {

inline std::vector<double> parse_floats(const std::string& text, int line_no, size_t expect,
                                        const std::string& key) {
    std::istringstream in(text);
    std::vector<double> out;
    double v;
    while (in >> v) out.push_back(v);
    std::string trailing;
    if (!in.eof() && (in.clear(), in >> trailing))
        throw ParseError(line_no, key + ": non-numeric token '" + trailing + "'");
    if (out.size() != expect)
        throw ParseError(line_no, key + ": expected " + std::to_string(expect) + " floats, got " +
                                      std::to_string(out.size()));
    return out;
}

}  // namespace detail

// Expects `P2:` (12 floats) and `Tr_velo_to_cam:` (12 floats); `R0_rect:`
// (9 floats) is optional and, when present, is composed into the extrinsic:
// x_cam = R0 (R x + t).
inline KittiCalib read_kitti_calib(std::istream& in) {
    std::optional<std::vector<double>> p2, tr, r0;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        const std::string rest = line.substr(colon + 1);
        if (key == "P2")
            p2 = detail::parse_floats(rest, line_no, 12, key);
        else if (key == "Tr_velo_to_cam")
            tr = detail::parse_floats(rest, line_no, 12, key);
        else if (key == "R0_rect")
            r0 = detail::parse_floats(rest, line_no, 9, key);
    }
    if (!p2) throw MissingKey("P2");
    if (!tr) throw MissingKey("Tr_velo_to_cam");

    KittiCalib calib;
    calib.fx = (*p2)[0];
    calib.fy = (*p2)[5];
    calib.cx = (*p2)[2];
    calib.cy = (*p2)[6];

    Eigen::Matrix3d r;
    Eigen::Vector3d t;
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) r(row, col) = (*tr)[row * 4 + col];
        t(row) = (*tr)[row * 4 + 3];
    }
    if (r0) {
        Eigen::Matrix3d rect;
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 3; ++col) rect(row, col) = (*r0)[row * 3 + col];
        calib.rect = rect;
        r = rect * r;
        t = rect * t;
    }
    calib.extrinsic.rotation = r;
    calib.extrinsic.translation = t;
    return calib;
}

inline KittiCalib read_kitti_calib(const std::string& text) {
    std::istringstream in(text);
    return read_kitti_calib(in);
}

inline KittiCalib read_kitti_calib_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open calib file " + path.string());
    return read_kitti_calib(in);
}

// ---------------------------------------------------------------------------
// Lidar

// Little-endian float quadruples (x, y, z, intensity), back to back.
inline std::vector<LidarPoint> read_velodyne_bin(std::span<const uint8_t> bytes) {
    if (bytes.size() % 16 != 0)
        throw TruncatedFile("velodyne payload of " + std::to_string(bytes.size()) +
                            " bytes is not a multiple of 16");
    std::vector<LidarPoint> points(bytes.size() / 16);
    if (!points.empty()) std::memcpy(points.data(), bytes.data(), bytes.size());
    return points;
}

inline std::vector<LidarPoint> read_velodyne_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open lidar file " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return read_velodyne_bin(bytes);
}

// ---------------------------------------------------------------------------
// Detections (newline-delimited JSON) and label-file shim

struct DetectionSet {
    std::map<std::string, std::vector<Box2D>> by_frame;
    int dropped_low_score = 0;
    int dropped_degenerate = 0;

    int total_boxes() const {
        int n = 0;
        for (const auto& [id, boxes] : by_frame) n += static_cast<int>(boxes.size());
        return n;
    }
};

// One JSON object per line: {"frame_id", "class_id", "bbox": [x1,y1,x2,y2],
// "score"}. Boxes under the score threshold (strict <) are dropped silently;
// degenerate boxes are dropped with a counted warning.
inline DetectionSet read_detections(std::istream& in, double score_threshold = 0.3) {
    DetectionSet set;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        Box2D box;
        std::string frame_id;
        try {
            frame_id = rec.at("frame_id").get<std::string>();
            box.class_id = rec.at("class_id").get<int>();
            const auto& bbox = rec.at("bbox");
            if (!bbox.is_array() || bbox.size() != 4)
                throw ParseError(line_no, "bbox must be [x1,y1,x2,y2]");
            box.x_min = bbox[0].get<double>();
            box.y_min = bbox[1].get<double>();
            box.x_max = bbox[2].get<double>();
            box.y_max = bbox[3].get<double>();
            box.score = rec.at("score").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        if (box.score < score_threshold) {
            ++set.dropped_low_score;
            continue;
        }
        if (!(box.x_min < box.x_max) || !(box.y_min < box.y_max)) {
            ++set.dropped_degenerate;
            log_info("dropped degenerate box at line " + std::to_string(line_no) + " (frame " +
                     frame_id + ")");
            continue;
        }
        try {
            box.validate();
        } catch (const Error& e) {
            throw ParseError(line_no, e.what());
        }
        set.by_frame[frame_id].push_back(box);
    }
    return set;
}

inline DetectionSet read_detections_file(const fs::path& path, double score_threshold = 0.3) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open detections file " + path.string());
    return read_detections(in, score_threshold);
}

// KITTI label txt import: type + 14 floats (+ optional score). Rows whose
// type is DontCare or absent from class_names are skipped. Bridges
// ground-truth label files into the same Box2D stream pseudo-labels use.
inline std::vector<Box2D> read_kitti_labels(std::istream& in,
                                            const std::vector<std::string>& class_names) {
    std::vector<Box2D> boxes;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream row(line);
        std::string type;
        row >> type;
        std::vector<double> f;
        double v;
        while (row >> v) f.push_back(v);
        if (f.size() < 14) throw ParseError(line_no, "expected at least 14 numeric fields");
        if (type == "DontCare") continue;
        int class_id = -1;
        for (size_t k = 0; k < class_names.size(); ++k)
            if (class_names[k] == type) class_id = static_cast<int>(k);
        if (class_id < 0) continue;
        Box2D box;
        box.class_id = class_id;
        box.x_min = f[3];
        box.y_min = f[4];
        box.x_max = f[5];
        box.y_max = f[6];
        box.score = f.size() >= 15 ? f[14] : 1.0;
        boxes.push_back(box);
    }
    return boxes;
}

// Exact per-class multiset counts over a box stream.
inline std::vector<long long> count_classes(std::span<const Box2D> boxes, int n_classes) {
    std::vector<long long> counts(n_classes, 0);
    for (const Box2D& b : boxes) {
        if (b.class_id < 0 || b.class_id >= n_classes) throw UnknownClass(b.class_id);
        ++counts[b.class_id];
    }
    return counts;
}

inline std::vector<long long> count_classes(const DetectionSet& set, int n_classes) {
    std::vector<long long> counts(n_classes, 0);
    for (const auto& [id, boxes] : set.by_frame) {
        const auto per_frame = count_classes(std::span<const Box2D>(boxes), n_classes);
        for (int k = 0; k < n_classes; ++k) counts[k] += per_frame[k];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Raw raster files: 16-byte header (4-byte magic, u32 C, u32 H, u32 W, all
// little-endian), then the payload plane by plane.

namespace detail {

inline void write_u32le(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32le(std::istream& in, const std::string& what) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw TruncatedFile(what);
    return v;
}

struct RasterDims {
    uint32_t channels, height, width;
};

inline void write_raster_header(std::ostream& out, const char magic[4], RasterDims d) {
    out.write(magic, 4);
    write_u32le(out, d.channels);
    write_u32le(out, d.height);
    write_u32le(out, d.width);
}

inline RasterDims read_raster_header(std::istream& in, const char magic[4],
                                     const std::string& what) {
    char got[4] = {};
    if (!in.read(got, 4)) throw TruncatedFile(what + ": header");
    if (std::memcmp(got, magic, 4) != 0)
        throw CorruptHeader(what + ": magic '" + std::string(got, 4) + "', expected '" +
                            std::string(magic, 4) + "'");
    RasterDims d;
    d.channels = read_u32le(in, what + ": channels");
    d.height = read_u32le(in, what + ": height");
    d.width = read_u32le(in, what + ": width");
    return d;
}

template <typename T>
void write_plane(std::ostream& out, std::span<const T> plane) {
    out.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_plane(std::istream& in, size_t count, const std::string& what) {
    std::vector<T> plane(count);
    if (!in.read(reinterpret_cast<char*>(plane.data()),
                 static_cast<std::streamsize>(count * sizeof(T))))
        throw TruncatedFile(what + ": payload");
    return plane;
}

inline std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::binary) {
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

inline std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::binary) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

}  // namespace detail

inline constexpr char kHeatmapMagic[4] = {'D', 'E', 'P', 'T'};     // f32 planes
inline constexpr char kDepthRawMagic[4] = {'D', 'E', 'P', 'F'};    // f64 planes
inline constexpr char kProvenanceMagic[4] = {'D', 'E', 'P', 'P'};  // u8 plane

inline void write_heatmap_file(const fs::path& path, const HeatmapSet& heat) {
    auto out = detail::open_out(path);
    detail::write_raster_header(out, kHeatmapMagic,
                                {static_cast<uint32_t>(heat.channels),
                                 static_cast<uint32_t>(heat.height),
                                 static_cast<uint32_t>(heat.width)});
    std::vector<float> plane(heat.values.size());
    for (size_t i = 0; i < plane.size(); ++i) plane[i] = static_cast<float>(heat.values[i]);
    detail::write_plane<float>(out, plane);
    if (!out) throw IoError("short write to " + path.string());
}

inline HeatmapSet read_heatmap_file(const fs::path& path) {
    auto in = detail::open_in(path);
    const auto d = detail::read_raster_header(in, kHeatmapMagic, path.string());
    HeatmapSet heat(static_cast<int>(d.channels), static_cast<int>(d.width),
                    static_cast<int>(d.height));
    const auto plane = detail::read_plane<float>(in, heat.values.size(), path.string());
    for (size_t i = 0; i < plane.size(); ++i) heat.values[i] = plane[i];
    return heat;
}

// Per-cell sigma rasters share the f64 container format, one plane.
inline void write_sigma_file(const fs::path& path, const UncertaintyMap& sigma) {
    auto out = detail::open_out(path);
    detail::write_raster_header(out, kDepthRawMagic,
                                {1, static_cast<uint32_t>(sigma.height),
                                 static_cast<uint32_t>(sigma.width)});
    detail::write_plane<double>(out, sigma.sigma);
    if (!out) throw IoError("short write to " + path.string());
}

inline UncertaintyMap read_sigma_file(const fs::path& path) {
    auto in = detail::open_in(path);
    const auto d = detail::read_raster_header(in, kDepthRawMagic, path.string());
    if (d.channels != 1) throw CorruptHeader(path.string() + ": expected one sigma plane");
    UncertaintyMap sigma(static_cast<int>(d.width), static_cast<int>(d.height), 1.0);
    sigma.sigma = detail::read_plane<double>(in, sigma.sigma.size(), path.string());
    sigma.validate();
    return sigma;
}

// ---------------------------------------------------------------------------
// Target bundle: everything gen-targets produces for one frame.

struct BundleMetadata {
    std::string frame_id;
    int image_w = 0, image_h = 0;
    int stride = 1;
    double max_depth = 60.0;
    double sigma_lo = 0.3, sigma_hi = 0.7;
    int patch_lo = 5, patch_hi = 3;
    double propagated_weight = 1.0;
    double score_threshold = 0.3;
    int n_classes = 0;
    std::string tool = kToolName;
    std::string version = kToolVersion;

    bool operator==(const BundleMetadata&) const = default;
};

struct TargetBundle {
    SemiDenseDepthTarget depth;
    HeatmapSet corners;
    DetectionTargets detection;
    BundleMetadata meta;
};

inline constexpr double kPngDepthScale = 256.0;

inline uint16_t depth_to_png(double depth) {
    const double v = std::round(depth * kPngDepthScale);
    return static_cast<uint16_t>(std::clamp(v, 0.0, 65535.0));
}

// Layout inside `dir`:
//   depth.png       16-bit grayscale, value = round(depth*256), 0 = no label
//   depth_raw.bin   DEPF, 2 planes f64: exact depth, cell weight
//   provenance.bin  DEPP, 1 plane u8 (0 none, 1 original, 2 propagated)
//   corners.bin     DEPT, 4 planes f32
//   centers.bin     DEPT, n_classes planes f32
//   targets.json    metadata + detection entries
inline void write_target_bundle(const TargetBundle& bundle, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    const SemiDenseDepthTarget& depth = bundle.depth;
    const size_t n = depth.depth.size();

    std::vector<uint16_t> png_pixels(n, 0);
    for (size_t i = 0; i < n; ++i)
        if (depth.provenance[i] != Provenance::None) png_pixels[i] = depth_to_png(depth.depth[i]);
    {
        const auto bytes = png16::encode(png_pixels, depth.width, depth.height);
        auto out = detail::open_out(dir / "depth.png");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + (dir / "depth.png").string());
    }
    {
        auto out = detail::open_out(dir / "depth_raw.bin");
        detail::write_raster_header(out, kDepthRawMagic,
                                    {2, static_cast<uint32_t>(depth.height),
                                     static_cast<uint32_t>(depth.width)});
        detail::write_plane<double>(out, depth.depth);
        detail::write_plane<double>(out, depth.weight);
        if (!out) throw IoError("short write to " + (dir / "depth_raw.bin").string());
    }
    {
        auto out = detail::open_out(dir / "provenance.bin");
        detail::write_raster_header(out, kProvenanceMagic,
                                    {1, static_cast<uint32_t>(depth.height),
                                     static_cast<uint32_t>(depth.width)});
        std::vector<uint8_t> plane(n);
        for (size_t i = 0; i < n; ++i) plane[i] = static_cast<uint8_t>(depth.provenance[i]);
        detail::write_plane<uint8_t>(out, plane);
        if (!out) throw IoError("short write to " + (dir / "provenance.bin").string());
    }
    write_heatmap_file(dir / "corners.bin", bundle.corners);
    write_heatmap_file(dir / "centers.bin", bundle.detection.center_heatmaps);

    nlohmann::json meta;
    meta["frame_id"] = bundle.meta.frame_id;
    meta["tool"] = bundle.meta.tool;
    meta["version"] = bundle.meta.version;
    meta["image"] = {{"width", bundle.meta.image_w}, {"height", bundle.meta.image_h}};
    meta["grid"] = {{"stride", bundle.meta.stride},
                    {"width", depth.width},
                    {"height", depth.height}};
    meta["params"] = {{"max_depth", bundle.meta.max_depth},
                      {"sigma_lo", bundle.meta.sigma_lo},
                      {"sigma_hi", bundle.meta.sigma_hi},
                      {"patch_lo", bundle.meta.patch_lo},
                      {"patch_hi", bundle.meta.patch_hi},
                      {"propagated_weight", bundle.meta.propagated_weight},
                      {"score_threshold", bundle.meta.score_threshold},
                      {"n_classes", bundle.meta.n_classes}};
    meta["counts"] = {{"original", bundle.depth.count(Provenance::Original)},
                      {"propagated", bundle.depth.count(Provenance::Propagated)},
                      {"detection_entries", bundle.detection.entries.size()}};
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : bundle.detection.entries)
        entries.push_back({{"class_id", e.class_id},
                           {"cell_x", e.cell_x},
                           {"cell_y", e.cell_y},
                           {"size_w", e.size_w},
                           {"size_h", e.size_h},
                           {"offset_x", e.offset_x},
                           {"offset_y", e.offset_y}});
    meta["detection_entries"] = std::move(entries);
    {
        auto out = detail::open_out(dir / "targets.json", std::ios::out);
        out << meta.dump(2) << "\n";
        if (!out) throw IoError("short write to " + (dir / "targets.json").string());
    }
}

inline TargetBundle read_target_bundle(const fs::path& dir) {
    TargetBundle bundle;

    nlohmann::json meta;
    {
        auto in = detail::open_in(dir / "targets.json", std::ios::in);
        try {
            in >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(0, std::string("targets.json: ") + e.what());
        }
    }
    try {
        bundle.meta.frame_id = meta.at("frame_id").get<std::string>();
        bundle.meta.tool = meta.at("tool").get<std::string>();
        bundle.meta.version = meta.at("version").get<std::string>();
        bundle.meta.image_w = meta.at("image").at("width").get<int>();
        bundle.meta.image_h = meta.at("image").at("height").get<int>();
        bundle.meta.stride = meta.at("grid").at("stride").get<int>();
        const auto& p = meta.at("params");
        bundle.meta.max_depth = p.at("max_depth").get<double>();
        bundle.meta.sigma_lo = p.at("sigma_lo").get<double>();
        bundle.meta.sigma_hi = p.at("sigma_hi").get<double>();
        bundle.meta.patch_lo = p.at("patch_lo").get<int>();
        bundle.meta.patch_hi = p.at("patch_hi").get<int>();
        bundle.meta.propagated_weight = p.at("propagated_weight").get<double>();
        bundle.meta.score_threshold = p.at("score_threshold").get<double>();
        bundle.meta.n_classes = p.at("n_classes").get<int>();

        const int grid_w = meta.at("grid").at("width").get<int>();
        const int grid_h = meta.at("grid").at("height").get<int>();
        bundle.depth = SemiDenseDepthTarget(grid_w, grid_h, bundle.meta.stride);

        for (const auto& e : meta.at("detection_entries")) {
            DetectionTargets::Entry entry;
            entry.class_id = e.at("class_id").get<int>();
            entry.cell_x = e.at("cell_x").get<int>();
            entry.cell_y = e.at("cell_y").get<int>();
            entry.size_w = e.at("size_w").get<double>();
            entry.size_h = e.at("size_h").get<double>();
            entry.offset_x = e.at("offset_x").get<double>();
            entry.offset_y = e.at("offset_y").get<double>();
            bundle.detection.entries.push_back(entry);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("targets.json: ") + e.what());
    }

    const size_t n = bundle.depth.depth.size();
    {
        auto in = detail::open_in(dir / "depth_raw.bin");
        const auto d = detail::read_raster_header(in, kDepthRawMagic, "depth_raw.bin");
        if (d.channels != 2 || d.width != static_cast<uint32_t>(bundle.depth.width) ||
            d.height != static_cast<uint32_t>(bundle.depth.height))
            throw CorruptHeader("depth_raw.bin dims disagree with targets.json");
        bundle.depth.depth = detail::read_plane<double>(in, n, "depth_raw.bin");
        bundle.depth.weight = detail::read_plane<double>(in, n, "depth_raw.bin");
    }
    {
        auto in = detail::open_in(dir / "provenance.bin");
        const auto d = detail::read_raster_header(in, kProvenanceMagic, "provenance.bin");
        if (d.channels != 1 || d.width != static_cast<uint32_t>(bundle.depth.width) ||
            d.height != static_cast<uint32_t>(bundle.depth.height))
            throw CorruptHeader("provenance.bin dims disagree with targets.json");
        const auto plane = detail::read_plane<uint8_t>(in, n, "provenance.bin");
        for (size_t i = 0; i < n; ++i) {
            if (plane[i] > 2)
                throw CorruptHeader("provenance.bin: bad code " + std::to_string(plane[i]));
            bundle.depth.provenance[i] = static_cast<Provenance>(plane[i]);
        }
    }
    bundle.corners = read_heatmap_file(dir / "corners.bin");
    bundle.detection.center_heatmaps = read_heatmap_file(dir / "centers.bin");
    if (bundle.corners.width != bundle.depth.width ||
        bundle.corners.height != bundle.depth.height ||
        bundle.corners.channels != kCornerChannels)
        throw CorruptHeader("corners.bin dims disagree with targets.json");
    if (bundle.detection.center_heatmaps.width != bundle.depth.width ||
        bundle.detection.center_heatmaps.height != bundle.depth.height ||
        bundle.detection.center_heatmaps.channels != bundle.meta.n_classes)
        throw CorruptHeader("centers.bin dims disagree with targets.json");
    return bundle;
}

// ---------------------------------------------------------------------------
// Dataset directory walking

struct FrameRecord {
    std::string frame_id;
    int image_w = 0, image_h = 0;
    fs::path calib_path;
    fs::path lidar_path;
    std::vector<Box2D> boxes;
};

// Frames are the sorted velodyne/*.bin ids. Boxes come from
// detections.ndjson; image dims from an optional frames.ndjson
// ({"frame_id","width","height"} per line), else the supplied defaults.
// Missing calib files surface later, as per-frame processing errors.
inline std::vector<FrameRecord> walk_dataset(const fs::path& dataset_dir,
                                             const DetectionSet& detections, int default_w,
                                             int default_h) {
    const fs::path velo_dir = dataset_dir / "velodyne";
    const fs::path calib_dir = dataset_dir / "calib";
    if (!fs::is_directory(velo_dir)) return {};

    std::map<std::string, std::pair<int, int>> dims;
    const fs::path frames_path = dataset_dir / "frames.ndjson";
    if (fs::exists(frames_path)) {
        auto in = detail::open_in(frames_path, std::ios::in);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const auto rec = nlohmann::json::parse(line);
                dims[rec.at("frame_id").get<std::string>()] = {rec.at("width").get<int>(),
                                                               rec.at("height").get<int>()};
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(line_no, std::string("frames.ndjson: ") + e.what());
            }
        }
    }

    std::vector<FrameRecord> records;
    for (const auto& entry : fs::directory_iterator(velo_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".bin") continue;
        FrameRecord rec;
        rec.frame_id = entry.path().stem().string();
        rec.lidar_path = entry.path();
        rec.calib_path = calib_dir / (rec.frame_id + ".txt");
        const auto it = dims.find(rec.frame_id);
        rec.image_w = it != dims.end() ? it->second.first : default_w;
        rec.image_h = it != dims.end() ? it->second.second : default_h;
        if (auto boxes = detections.by_frame.find(rec.frame_id);
            boxes != detections.by_frame.end())
            rec.boxes = boxes->second;
        records.push_back(std::move(rec));
    }
    std::sort(records.begin(), records.end(),
              [](const FrameRecord& a, const FrameRecord& b) { return a.frame_id < b.frame_id; });
    return records;
}

inline std::vector<FrameRecord> walk_dataset(const fs::path& dataset_dir, double score_threshold,
                                             int default_w, int default_h) {
    DetectionSet detections;
    const fs::path det_path = dataset_dir / "detections.ndjson";
    if (fs::exists(det_path)) detections = read_detections_file(det_path, score_threshold);
    return walk_dataset(dataset_dir, detections, default_w, default_h);
}

}  // namespace dept
