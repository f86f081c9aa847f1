#include "fogflow/camera.hpp"

#include <cmath>

#include "fogflow/errors.hpp"

namespace fogflow {

Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return r;
}

Mat3 mat3_transpose(const Mat3& a) {
    return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

Vec3 mat3_apply(const Mat3& a, const Vec3& v) {
    return {a[0] * v[0] + a[1] * v[1] + a[2] * v[2], a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
            a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

double mat3_det(const Mat3& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Mat3 euler_deg_rotation(double rx, double ry, double rz) {
    const double d2r = M_PI / 180.0;
    const double ax = rx * d2r, ay = ry * d2r, az = rz * d2r;
    const Mat3 Rx{1, 0, 0, 0, std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax)};
    const Mat3 Ry{std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay)};
    const Mat3 Rz{std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0, 0, 0, 1};
    return mat3_mul(Rz, mat3_mul(Ry, Rx));
}

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera: focal lengths must be positive");
    for (double v : R)
        if (!std::isfinite(v)) throw ValidationError("camera: non-finite rotation");
    for (double v : t)
        if (!std::isfinite(v)) throw ValidationError("camera: non-finite translation");
    const Mat3 rtr = mat3_mul(mat3_transpose(R), R);
    const Mat3 eye = mat3_identity();
    for (int i = 0; i < 9; ++i)
        if (std::abs(rtr[i] - eye[i]) > 1e-9)
            throw ValidationError("camera: rotation is not orthonormal");
    if (std::abs(mat3_det(R) - 1.0) > 1e-9)
        throw ValidationError("camera: rotation determinant must be +1");
}

CameraModel CameraModel::inverse_pose() const {
    CameraModel inv = *this;
    inv.R = mat3_transpose(R);
    const Vec3 rt = mat3_apply(inv.R, t);
    inv.t = {-rt[0], -rt[1], -rt[2]};
    return inv;
}

CameraModel camera_from_motion(double fx, double fy, double cx, double cy, const Mat3& R_cam,
                               const Vec3& c, double baseline) {
    CameraModel cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.baseline = baseline;
    cam.R = mat3_transpose(R_cam);
    const Vec3 rc = mat3_apply(cam.R, c);
    cam.t = {-rc[0], -rc[1], -rc[2]};
    cam.validate();
    return cam;
}

}  // namespace fogflow
