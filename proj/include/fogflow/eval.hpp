#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fogflow/grid.hpp"

namespace fogflow {

// Mean endpoint error |pred - gt|_2 over pixels with valid == 1.
double epe(const FlowField& pred, const FlowField& gt, const Mask& valid);

// KITTI outlier fraction: endpoint error > 3 px AND > 5% of |gt|_2.
double f1_all(const FlowField& pred, const FlowField& gt, const Mask& valid);

struct RegionMetrics {
    long long count = 0;
    double epe = 0.0;
    double f1_all = 0.0;
};

// Metrics inside one depth band [lo, hi).
struct DepthBandRow {
    double lo = 0.0;
    double hi = 0.0;
    RegionMetrics metrics;
};

// Per-band metrics over ascending band edges (n+1 edges give n bands).
// Bands that catch no pixel are omitted rather than reported as zero.
std::vector<DepthBandRow> depth_band_report(const FlowField& pred, const FlowField& gt,
                                            const DepthMap& depth,
                                            const std::vector<double>& band_edges);

// Full breakdown: overall, rigid (nonrigid == 0), non-rigid, and depth bands.
// Rigid/non-rigid rows keep count 0 when their region is empty; bands are
// omitted. All regions respect the validity mask.
struct EvalReport {
    RegionMetrics all, rigid, nonrigid;
    std::vector<DepthBandRow> bands;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

EvalReport evaluate(const FlowField& pred, const FlowField& gt, const Mask& valid,
                    const Mask& nonrigid, const DepthMap& depth,
                    const std::vector<double>& band_edges);

// Aggregate over same-named .flo files in two directories (pixel-weighted;
// overall region only). Throws when nothing pairs up or extents disagree.
EvalReport evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir);

// Color-wheel rendering of a flow field, intensities in [0,1], saturation
// scaled by |flow| / max|flow| (white at zero motion).
ImageGrid flow_to_color(const FlowField& f);

// P6 PPM of flow_to_color with the normalizing magnitude recorded in a
// header comment ("# max-magnitude=<v>").
void write_flow_ppm(const std::string& path, const FlowField& f);

}  // namespace fogflow
