#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "dept/depth_targets.hpp"
#include "dept/errors.hpp"
#include "dept/keypoint_targets.hpp"

namespace dept {

// Predicted depth and log-scale: s = log(sigma_d), so sigma_d = exp(s) > 0
// holds by construction.
struct DepthPrediction {
    double z = 0.0;
    double s = 0.0;
};

struct LaplaceDepthLoss {
    double loss = 0.0;
    double grad_z = 0.0;
    double grad_s = 0.0;
};

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Laplace-uncertainty depth loss, parameterized by s = log(sigma_d):
//   L = sqrt(2) * exp(-s) * |z - z_gt| + s
// with analytic gradients in both predictions.
inline LaplaceDepthLoss laplace_depth_loss(const DepthPrediction& pred, double z_gt) {
    const double r = pred.z - z_gt;
    const double scale = std::sqrt(2.0) * std::exp(-pred.s);
    LaplaceDepthLoss out;
    out.loss = scale * std::abs(r) + pred.s;
    out.grad_z = scale * sign(r);
    out.grad_s = -scale * std::abs(r) + 1.0;
    return out;
}

inline constexpr double kHeatmapEps = 1e-6;

inline double clamp_prob(double p) { return std::clamp(p, kHeatmapEps, 1.0 - kHeatmapEps); }

struct FocalHeatmapLoss {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d prediction, per cell (pre-clamp pass-through)
    int positives = 0;
};

// Penalty-reduced pixel-wise focal loss over a heatmap set:
//   target == 1:  -(1-p)^alpha * log(p)
//   otherwise:    -(1-y)^beta * p^alpha * log(1-p)
// summed over all cells and divided by max(1, #positives). Predictions are
// clamped to [eps, 1-eps] before evaluation.
inline FocalHeatmapLoss focal_heatmap_loss(const HeatmapSet& pred, const HeatmapSet& target,
                                           double alpha = 2.0, double beta = 4.0) {
    if (!pred.same_shape(target))
        throw DimensionMismatch("focal loss prediction vs target heatmaps");
    FocalHeatmapLoss out;
    out.grad.assign(pred.values.size(), 0.0);
    for (double y : target.values)
        out.positives += (y == 1.0);
    const double norm = 1.0 / std::max(1, out.positives);

    double total = 0.0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double p = clamp_prob(pred.values[i]);
        const double y = target.values[i];
        if (y == 1.0) {
            const double om = 1.0 - p;
            total += -std::pow(om, alpha) * std::log(p);
            out.grad[i] = norm * (alpha * std::pow(om, alpha - 1.0) * std::log(p) -
                                  std::pow(om, alpha) / p);
        } else {
            const double yw = std::pow(1.0 - y, beta);
            total += -yw * std::pow(p, alpha) * std::log(1.0 - p);
            out.grad[i] = norm * yw * (std::pow(p, alpha) / (1.0 - p) -
                                       alpha * std::pow(p, alpha - 1.0) * std::log(1.0 - p));
        }
    }
    out.loss = total * norm;
    return out;
}

// Per-class counts and the derived weights w_k = sqrt(s_m / s_k),
// s_m = max_k s_k. The majority class gets exactly 1.
struct ClassWeightTable {
    std::vector<long long> counts;
    std::vector<double> weights;

    int n_classes() const { return static_cast<int>(weights.size()); }
    double weight(int class_id) const {
        if (class_id < 0 || class_id >= n_classes()) throw UnknownClass(class_id);
        return weights[class_id];
    }

    static ClassWeightTable uniform(int n) {
        ClassWeightTable t;
        t.counts.assign(n, 1);
        t.weights.assign(n, 1.0);
        return t;
    }
};

inline ClassWeightTable class_weights(std::span<const long long> counts) {
    if (counts.empty()) throw Error("class_weights: empty count vector");
    long long s_m = 0;
    for (long long c : counts) s_m = std::max(s_m, c);
    if (s_m <= 0) throw ZeroCount(0);
    ClassWeightTable table;
    table.counts.assign(counts.begin(), counts.end());
    table.weights.resize(counts.size());
    for (size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] <= 0) throw ZeroCount(static_cast<int>(k));
        table.weights[k] = std::sqrt(static_cast<double>(s_m) / static_cast<double>(counts[k]));
    }
    return table;
}

inline ClassWeightTable class_weights(const std::vector<long long>& counts) {
    return class_weights(std::span<const long long>(counts));
}

// Class-level loss adjustment: weighted mean of per-target losses,
// sum(w_k * loss) / sum(w_k). The mean keeps the loss scale independent of
// the target count.
inline double apply_class_adjustment(std::span<const std::pair<int, double>> per_target_losses,
                                     const ClassWeightTable& table) {
    if (per_target_losses.empty()) return 0.0;
    double num = 0.0, den = 0.0;
    for (const auto& [class_id, loss] : per_target_losses) {
        const double w = table.weight(class_id);
        num += w * loss;
        den += w;
    }
    return num / den;
}

inline double apply_class_adjustment(const std::vector<std::pair<int, double>>& losses,
                                     const ClassWeightTable& table) {
    return apply_class_adjustment(std::span<const std::pair<int, double>>(losses), table);
}

struct Lambdas {
    double depth = 1.0;
    double corner = 1.0;
    double center = 1.0;
    double size = 1.0;
    double offset = 1.0;
};

// depth can go negative (the log-scale term of the Laplace loss); the
// remaining terms are non-negative.
struct LossBreakdown {
    double depth = 0.0;
    double corner_focal = 0.0;
    double center_focal = 0.0;
    double size = 0.0;
    double offset = 0.0;
    double total = 0.0;
    int supervised_depth_cells = 0;
    int positive_center_cells = 0;

    bool finite() const {
        return std::isfinite(depth) && std::isfinite(corner_focal) && std::isfinite(center_focal) &&
               std::isfinite(size) && std::isfinite(offset) && std::isfinite(total);
    }
};

// Per-cell predictions on the target grid. size/offset grids may be left
// empty when no such head exists; their terms are then zero.
struct FramePredictions {
    std::vector<double> z;
    std::vector<double> s;
    HeatmapSet corners;
    HeatmapSet centers;
    std::vector<double> size_w, size_h;
    std::vector<double> offset_x, offset_y;
};

struct FrameTargets {
    SemiDenseDepthTarget depth;
    HeatmapSet corners;
    DetectionTargets detection;
    std::vector<Box2D> boxes;  // image-pixel coords; used for cell-class lookup
};

// d(total) / d(prediction), same layout as FramePredictions.
struct FrameLossGrads {
    std::vector<double> z;
    std::vector<double> s;
    HeatmapSet corners;
    HeatmapSet centers;
    std::vector<double> size_w, size_h;
    std::vector<double> offset_x, offset_y;
};

// Class of a depth cell: the smallest-area box whose pixel-space region
// contains the cell center, ties by box index; -1 when uncontained
// (propagated overflow), which is treated as weight 1.
inline int cell_class(int x, int y, int stride, const std::vector<Box2D>& boxes) {
    const double px = stride * (x + 0.5);
    const double py = stride * (y + 0.5);
    int best = -1;
    double best_area = 0.0;
    for (size_t i = 0; i < boxes.size(); ++i) {
        if (!boxes[i].contains(px, py)) continue;
        const double area = boxes[i].area();
        if (best < 0 || area < best_area) {
            best = static_cast<int>(i);
            best_area = area;
        }
    }
    return best < 0 ? -1 : boxes[best].class_id;
}

// Combined pre-training objective. The depth term is the class-adjusted
// weighted mean of per-cell Laplace losses scaled by the target's cell
// weights; corner/center terms are focal; size/offset are L1 at positive
// cells, class-adjusted like the depth term. total = sum of lambda_i * term_i.
// When `grads` is non-null it receives d(total)/d(prediction).
inline LossBreakdown combined_loss(const FramePredictions& preds, const FrameTargets& targets,
                                   const ClassWeightTable& table, const Lambdas& lambdas,
                                   FrameLossGrads* grads = nullptr) {
    const SemiDenseDepthTarget& dt = targets.depth;
    const size_t n_cells = dt.depth.size();
    if (preds.z.size() != n_cells || preds.s.size() != n_cells)
        throw DimensionMismatch("depth predictions vs target grid");

    LossBreakdown bd;
    if (grads) {
        grads->z.assign(n_cells, 0.0);
        grads->s.assign(n_cells, 0.0);
        grads->corners = HeatmapSet(preds.corners.channels, preds.corners.width,
                                    preds.corners.height);
        grads->centers = HeatmapSet(preds.centers.channels, preds.centers.width,
                                    preds.centers.height);
        grads->size_w.assign(preds.size_w.size(), 0.0);
        grads->size_h.assign(preds.size_h.size(), 0.0);
        grads->offset_x.assign(preds.offset_x.size(), 0.0);
        grads->offset_y.assign(preds.offset_y.size(), 0.0);
    }

    // Depth term.
    struct CellTerm {
        int idx;
        double class_weight;
        LaplaceDepthLoss laplace;
        double cell_weight;
    };
    std::vector<CellTerm> cells;
    for (int y = 0; y < dt.height; ++y) {
        for (int x = 0; x < dt.width; ++x) {
            const int i = dt.index(x, y);
            if (dt.provenance[i] == Provenance::None) continue;
            const int cls = cell_class(x, y, dt.stride, targets.boxes);
            const double cw = cls < 0 ? 1.0 : table.weight(cls);
            cells.push_back({i, cw, laplace_depth_loss({preds.z[i], preds.s[i]}, dt.depth[i]),
                             dt.weight[i]});
        }
    }
    bd.supervised_depth_cells = static_cast<int>(cells.size());
    if (!cells.empty()) {
        double num = 0.0, den = 0.0;
        for (const CellTerm& c : cells) {
            num += c.class_weight * c.cell_weight * c.laplace.loss;
            den += c.class_weight;
        }
        bd.depth = num / den;
        if (grads) {
            for (const CellTerm& c : cells) {
                const double k = lambdas.depth * c.class_weight * c.cell_weight / den;
                grads->z[c.idx] = k * c.laplace.grad_z;
                grads->s[c.idx] = k * c.laplace.grad_s;
            }
        }
    }

    // Heatmap terms. A map with no positive cell carries no appearance
    // supervision for the frame; its term is skipped so empty frames are
    // exact no-ops (and the 1/max(1,n_pos) normalization never amplifies a
    // background-only sum).
    const auto has_positive = [](const HeatmapSet& t) {
        for (double y : t.values)
            if (y == 1.0) return true;
        return false;
    };
    if (has_positive(targets.corners)) {
        FocalHeatmapLoss corner = focal_heatmap_loss(preds.corners, targets.corners);
        bd.corner_focal = corner.loss;
        if (grads)
            for (size_t i = 0; i < corner.grad.size(); ++i)
                grads->corners.values[i] = lambdas.corner * corner.grad[i];
    }
    if (has_positive(targets.detection.center_heatmaps)) {
        FocalHeatmapLoss center = focal_heatmap_loss(preds.centers,
                                                     targets.detection.center_heatmaps);
        bd.center_focal = center.loss;
        bd.positive_center_cells = center.positives;
        if (grads)
            for (size_t i = 0; i < center.grad.size(); ++i)
                grads->centers.values[i] = lambdas.center * center.grad[i];
    }

    // Size / offset terms: L1 at positive cells, class-adjusted.
    const bool has_size = !preds.size_w.empty();
    const bool has_offset = !preds.offset_x.empty();
    if ((has_size || has_offset) && !targets.detection.entries.empty()) {
        const int w = targets.detection.center_heatmaps.width;
        double size_num = 0.0, off_num = 0.0, den = 0.0;
        for (const DetectionTargets::Entry& e : targets.detection.entries) {
            const int i = e.cell_y * w + e.cell_x;
            const double cw = table.weight(e.class_id);
            den += cw;
            if (has_size)
                size_num += cw * (std::abs(preds.size_w[i] - e.size_w) +
                                  std::abs(preds.size_h[i] - e.size_h));
            if (has_offset)
                off_num += cw * (std::abs(preds.offset_x[i] - e.offset_x) +
                                 std::abs(preds.offset_y[i] - e.offset_y));
        }
        if (has_size) bd.size = size_num / den;
        if (has_offset) bd.offset = off_num / den;
        if (grads) {
            for (const DetectionTargets::Entry& e : targets.detection.entries) {
                const int i = e.cell_y * w + e.cell_x;
                const double cw = table.weight(e.class_id);
                if (has_size) {
                    grads->size_w[i] += lambdas.size * cw * sign(preds.size_w[i] - e.size_w) / den;
                    grads->size_h[i] += lambdas.size * cw * sign(preds.size_h[i] - e.size_h) / den;
                }
                if (has_offset) {
                    grads->offset_x[i] +=
                        lambdas.offset * cw * sign(preds.offset_x[i] - e.offset_x) / den;
                    grads->offset_y[i] +=
                        lambdas.offset * cw * sign(preds.offset_y[i] - e.offset_y) / den;
                }
            }
        }
    }

    bd.total = lambdas.depth * bd.depth + lambdas.corner * bd.corner_focal +
               lambdas.center * bd.center_focal + lambdas.size * bd.size +
               lambdas.offset * bd.offset;
    return bd;
}

}  // namespace dept
