#include "fogflow/geometry.hpp"

#include <cmath>

#include "fogflow/errors.hpp"

namespace fogflow {

RigidFlowResult project_rigid_flow(const DepthMap& depth, const CameraModel& cam, double z_min) {
    if (depth.channels != 1) throw ValidationError("project_rigid_flow: depth must be single-channel");
    cam.validate();
    RigidFlowResult out{FlowField(depth.height, depth.width), Mask(depth.height, depth.width)};
    // An identity transform moves nothing; shortcut keeps the zero exact
    // instead of leaving ulp-level projection noise.
    const Mat3 eye = mat3_identity();
    bool identity = cam.t[0] == 0.0 && cam.t[1] == 0.0 && cam.t[2] == 0.0;
    for (int i = 0; i < 9 && identity; ++i) identity = cam.R[i] == eye[i];
    long long n_valid = 0;
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const double d = depth.at(y, x, 0);
            if (!(d > 0.0) || !std::isfinite(d))
                throw ValidationError("project_rigid_flow: depth must be positive and finite");
            if (identity) {
                out.valid.at(y, x) = 1.0;
                ++n_valid;
                continue;
            }
            const Vec3 X{d * (x - cam.cx) / cam.fx, d * (y - cam.cy) / cam.fy, d};
            const Vec3 Xp = mat3_apply(cam.R, X);
            const double zx = Xp[0] + cam.t[0], zy = Xp[1] + cam.t[1], zz = Xp[2] + cam.t[2];
            if (zz <= z_min) continue;  // invalid: flow 0, valid 0
            out.flow.u(y, x) = cam.fx * zx / zz + cam.cx - x;
            out.flow.v(y, x) = cam.fy * zy / zz + cam.cy - y;
            out.valid.at(y, x) = 1.0;
            ++n_valid;
        }
    }
    if (n_valid == 0) throw ValidationError("project_rigid_flow: degenerate pose, all pixels invalid");
    return out;
}

namespace {

// Flow fields as 2-channel grids so bilinear_sample applies.
ImageGrid as_grid(const FlowField& f) {
    ImageGrid g(f.height, f.width, 2);
    g.data = f.uv;
    return g;
}

Mask one_side(const FlowField& a, const FlowField& b, double alpha1, double alpha2) {
    Mask occ(a.height, a.width);
    const ImageGrid bg = as_grid(b);
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            const double fu = a.u(y, x), fv = a.v(y, x);
            double bb[2];
            bilinear_sample(bg, x + fu, y + fv, bb);
            const double su = fu + bb[0], sv = fv + bb[1];
            const double lhs = su * su + sv * sv;
            const double rhs = alpha1 * (fu * fu + fv * fv + bb[0] * bb[0] + bb[1] * bb[1]) + alpha2;
            if (lhs > rhs) occ.at(y, x) = 1.0;
        }
    }
    return occ;
}

}  // namespace

std::pair<Mask, Mask> fb_occlusion(const FlowField& flow_fwd, const FlowField& flow_bwd,
                                   double alpha1, double alpha2) {
    if (flow_fwd.height != flow_bwd.height || flow_fwd.width != flow_bwd.width)
        throw ValidationError("fb_occlusion: extent mismatch");
    return {one_side(flow_fwd, flow_bwd, alpha1, alpha2), one_side(flow_bwd, flow_fwd, alpha1, alpha2)};
}

Mask nonrigid_mask(const FlowField& F, const FlowField& F_rigid, double tau) {
    if (F.height != F_rigid.height || F.width != F_rigid.width)
        throw ValidationError("nonrigid_mask: extent mismatch");
    if (!(tau > 0.0)) throw ValidationError("nonrigid_mask: tau must be positive");
    Mask v(F.height, F.width);
    for (int y = 0; y < F.height; ++y)
        for (int x = 0; x < F.width; ++x) {
            const double du = F.u(y, x) - F_rigid.u(y, x);
            const double dv = F.v(y, x) - F_rigid.v(y, x);
            if (std::sqrt(du * du + dv * dv) > tau) v.at(y, x) = 1.0;
        }
    return v;
}

Mask oob_mask(const FlowField& flow) {
    Mask m(flow.height, flow.width);
    for (int y = 0; y < flow.height; ++y)
        for (int x = 0; x < flow.width; ++x) {
            const double tx = x + flow.u(y, x), ty = y + flow.v(y, x);
            if (tx < 0.0 || tx > flow.width - 1.0 || ty < 0.0 || ty > flow.height - 1.0)
                m.at(y, x) = 1.0;
        }
    return m;
}

}  // namespace fogflow
