#pragma once

#include <utility>

#include "fogflow/camera.hpp"
#include "fogflow/grid.hpp"

namespace fogflow {

struct RigidFlowResult {
    FlowField flow;
    Mask valid;  // 0 where the transformed point lands behind the camera
};

// Rigid flow from depth, intrinsics, and relative pose: back-project each
// pixel (X = D·K⁻¹p), transform (X' = R·X + t), reproject, and subtract.
// Pixels whose transformed depth falls at or below z_min are marked invalid
// with zero flow. Throws when every pixel is invalid (degenerate pose).
RigidFlowResult project_rigid_flow(const DepthMap& depth, const CameraModel& cam,
                                   double z_min = 1e-6);

// Forward-backward consistency: p is occluded in the forward mask iff
//   |F_f(p) + F_b(p+F_f(p))|² > alpha1·(|F_f(p)|² + |F_b(p+F_f(p))|²) + alpha2
// with F_b sampled bilinearly (clamped at borders). The backward mask is the
// symmetric check. Returns (O_f, O_b), 1 = occluded.
std::pair<Mask, Mask> fb_occlusion(const FlowField& flow_fwd, const FlowField& flow_bwd,
                                   double alpha1 = 0.01, double alpha2 = 0.5);

// Non-rigid region: V(p) = 1 iff |F(p) − F_rigid(p)|₂ > tau.
Mask nonrigid_mask(const FlowField& F, const FlowField& F_rigid, double tau = 1.0);

// Pixels whose flow target p + F(p) falls outside the frame.
Mask oob_mask(const FlowField& flow);

}  // namespace fogflow
