#pragma once

#include <cmath>
#include <vector>

#include "dept/depth_targets.hpp"
#include "dept/errors.hpp"

namespace dept {

// C×H×W response maps, values in [0, 1]. Channel-major storage.
struct HeatmapSet {
    int channels = 0;
    int width = 0;
    int height = 0;
    std::vector<double> values;

    HeatmapSet() = default;
    HeatmapSet(int c, int w, int h)
        : channels(c), width(w), height(h),
          values(static_cast<size_t>(c) * w * h, 0.0) {}

    size_t index(int c, int x, int y) const {
        return (static_cast<size_t>(c) * height + y) * width + x;
    }
    double at(int c, int x, int y) const { return values[index(c, x, y)]; }
    double& at(int c, int x, int y) { return values[index(c, x, y)]; }

    bool same_shape(const HeatmapSet& o) const {
        return channels == o.channels && width == o.width && height == o.height;
    }

    bool operator==(const HeatmapSet&) const = default;
};

struct Keypoint {
    int channel = 0;
    double px = 0.0;  // cell coordinates
    double py = 0.0;
    double sigma_p = 1.0;
};

// round-half-up; keypoint coordinates are non-negative here
inline int snap_to_cell(double coord) { return static_cast<int>(std::floor(coord + 0.5)); }

// Largest shift r of a box corner such that the shifted box still has
// IoU >= min_iou with the original. The binding case is the minimum over the
// three contact configurations, each an exact quadratic root:
//   1. box slides diagonally, same size:    r² − (w+h)r + wh(1−q)/(1+q) = 0
//   2. both corners pull inward (shrink):   4r² − 2(w+h)r + (1−q)wh = 0
//   3. both corners push outward (grow):    4q·r² + 2q(w+h)r + (q−1)wh = 0
inline double overlap_radius(double box_w, double box_h, double min_iou = 0.7) {
    if (!(box_w > 0.0) || !(box_h > 0.0)) throw InvalidBox("non-positive dims");
    if (!(min_iou > 0.0 && min_iou < 1.0)) throw Error("min_iou must be in (0,1)");
    const double w = box_w, h = box_h, q = min_iou;

    const double b1 = w + h;
    const double c1 = w * h * (1.0 - q) / (1.0 + q);
    const double r1 = (b1 - std::sqrt(b1 * b1 - 4.0 * c1)) / 2.0;

    const double b2 = w + h;
    const double c2 = (1.0 - q) * w * h;
    const double r2 = (b2 - std::sqrt(b2 * b2 - 4.0 * c2)) / 4.0;

    const double b3 = q * (w + h);
    const double disc3 = b3 * b3 + 4.0 * q * (1.0 - q) * w * h;
    const double r3 = (-b3 + std::sqrt(disc3)) / (4.0 * q);

    return std::min({r1, r2, r3});
}

// Size-adaptive Gaussian std: sigma = max(r/3, 2/3) with r the overlap radius.
inline double gaussian_sigma(double box_w, double box_h, double min_iou = 0.7) {
    constexpr double kSigmaFloor = 2.0 / 3.0;
    return std::max(overlap_radius(box_w, box_h, min_iou) / 3.0, kSigmaFloor);
}

// Render Gaussian responses: each cell of a channel takes the element-wise
// maximum over that channel's keypoints of exp(−((x−px)² + (y−py)²)/(2σ²)).
// Keypoints are snapped to their nearest cell first, so the peak is exactly 1.
inline HeatmapSet render_keypoints(const std::vector<Keypoint>& keypoints, int channels, int width,
                                   int height) {
    if (channels < 0 || width <= 0 || height <= 0) throw Error("bad heatmap dims");
    HeatmapSet set(channels, width, height);
    for (const Keypoint& kp : keypoints) {
        if (kp.channel < 0 || kp.channel >= channels)
            throw Error("keypoint channel out of range");
        if (!(kp.sigma_p > 0.0)) throw Error("keypoint sigma must be positive");
        const int kx = snap_to_cell(kp.px);
        const int ky = snap_to_cell(kp.py);
        if (kx < 0 || kx >= width || ky < 0 || ky >= height)
            throw Error("keypoint outside grid after rounding");
        const double inv_two_sigma_sq = 1.0 / (2.0 * kp.sigma_p * kp.sigma_p);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double dx = x - kx, dy = y - ky;
                const double v = std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
                double& cell = set.at(kp.channel, x, y);
                if (v > cell) cell = v;
            }
        }
    }
    return set;
}

// Fixed corner channel order.
enum CornerChannel { kTopLeft = 0, kTopRight = 1, kBottomRight = 2, kBottomLeft = 3 };
inline constexpr int kCornerChannels = 4;

// 4-channel corner keypoint heatmaps, one channel per box corner. Corner
// coordinates are divided by stride; sigma comes from the stride-scaled box.
// Corners that round off the grid are skipped.
inline HeatmapSet corner_heatmaps(const std::vector<Box2D>& boxes, int stride, int width,
                                  int height) {
    if (stride < 1) throw Error("stride must be >= 1");
    std::vector<Keypoint> kps;
    for (const Box2D& box : boxes) {
        box.validate();
        const double s = static_cast<double>(stride);
        const double sigma = gaussian_sigma(box.width() / s, box.height() / s);
        const double corners[4][2] = {{box.x_min, box.y_min},
                                      {box.x_max, box.y_min},
                                      {box.x_max, box.y_max},
                                      {box.x_min, box.y_max}};
        for (int c = 0; c < 4; ++c) {
            const double px = corners[c][0] / s, py = corners[c][1] / s;
            const int kx = snap_to_cell(px), ky = snap_to_cell(py);
            if (kx < 0 || kx >= width || ky < 0 || ky >= height) continue;
            kps.push_back({c, px, py, sigma});
        }
    }
    return render_keypoints(kps, 4, width, height);
}

// Center heatmaps plus per-positive-cell regression targets for the 2D
// detection head.
struct DetectionTargets {
    HeatmapSet center_heatmaps;  // one channel per class

    struct Entry {
        int class_id = 0;
        int cell_x = 0;
        int cell_y = 0;
        double size_w = 0.0;    // cells
        double size_h = 0.0;    // cells
        double offset_x = 0.0;  // [0,1)
        double offset_y = 0.0;  // [0,1)

        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> entries;

    bool operator==(const DetectionTargets&) const = default;
};

// Center keypoint goes on the class channel at the floor cell of the
// stride-scaled box center; the fractional part becomes the offset target.
// When two same-class boxes share a center cell, both Gaussians render but
// only the first box keeps the size/offset entry.
inline DetectionTargets detection_targets(const std::vector<Box2D>& boxes, int n_classes,
                                          int stride, int width, int height) {
    if (stride < 1) throw Error("stride must be >= 1");
    if (n_classes < 1) throw Error("n_classes must be >= 1");
    DetectionTargets out;
    std::vector<Keypoint> kps;
    for (const Box2D& box : boxes) {
        box.validate();
        if (box.class_id >= n_classes) throw InvalidClass(box.class_id, n_classes);
        const double s = static_cast<double>(stride);
        const double cx = box.center_x() / s;
        const double cy = box.center_y() / s;
        const int cell_x = static_cast<int>(std::floor(cx));
        const int cell_y = static_cast<int>(std::floor(cy));
        if (cell_x < 0 || cell_x >= width || cell_y < 0 || cell_y >= height) continue;
        const double sigma = gaussian_sigma(box.width() / s, box.height() / s);
        kps.push_back({box.class_id, static_cast<double>(cell_x), static_cast<double>(cell_y),
                       sigma});
        const bool taken = std::any_of(out.entries.begin(), out.entries.end(),
                                       [&](const DetectionTargets::Entry& e) {
                                           return e.class_id == box.class_id &&
                                                  e.cell_x == cell_x && e.cell_y == cell_y;
                                       });
        if (taken) continue;
        out.entries.push_back({box.class_id, cell_x, cell_y, box.width() / s, box.height() / s,
                               cx - cell_x, cy - cell_y});
    }
    out.center_heatmaps = render_keypoints(kps, n_classes, width, height);
    return out;
}

}  // namespace dept
