#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fogflow/camera.hpp"
#include "fogflow/grid.hpp"

namespace fogflow {

// Independently moving textured rectangle: a fronto-parallel plane patch at
// depth_m whose frame-t footprint covers the given pixel rect and which
// translates in-plane by (dx_px, dy_px) pixels per frame (measured under an
// identity camera pose).
struct SceneObjectConfig {
    double x_px = 0, y_px = 0, w_px = 0, h_px = 0;
    double depth_m = 0;
    double dx_px = 0, dy_px = 0;
};

// Procedural stereo scene: a textured background plane whose ray depth runs
// from depth_far_m at the top row to depth_near_m at the bottom row, plus
// 0..n moving rectangles. The camera moves by rotation_deg / translation_m
// between frames t and t+1 (camera motion, not coordinate transform).
struct SceneConfig {
    int width = 32, height = 32;
    double fx = 40.0, fy = 40.0;
    double cx = -1.0, cy = -1.0;  // negative: defaults to the image center
    double baseline_m = 0.5;
    double depth_near_m = 5.0, depth_far_m = 50.0;
    std::array<double, 3> rotation_deg{0.0, 0.0, 0.0};
    std::array<double, 3> translation_m{0.0, 0.0, 0.0};
    std::vector<SceneObjectConfig> objects;
    int texture_octaves = 3;
    double texture_base_cell_m = 2.5;
    double noise_sigma = 0.0;  // additive per-pixel sensor noise on rendered images

    static SceneConfig from_json(const nlohmann::json& j);
    static SceneConfig load(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;

    double center_x() const { return cx >= 0.0 ? cx : (width - 1) / 2.0; }
    double center_y() const { return cy >= 0.0 ? cy : (height - 1) / 2.0; }
};

struct SceneSample {
    ImageGrid I_t_left, I_t1_left, I_t_right, I_t1_right;
    DepthMap D_t, D_t1;  // left-camera depth at t and t+1
    CameraModel camera;
    FlowField gt_flow;      // left t -> t+1
    FlowField gt_flow_bwd;  // left t+1 -> t
    Mask gt_nonrigid;       // 1 on moving-object pixels in frame t
};

// Deterministic for fixed (config, seed). Ground-truth flow is the exact
// composition of camera-induced rigid flow and object displacements.
SceneSample make_scene(const SceneConfig& config, std::uint64_t seed);

}  // namespace fogflow
