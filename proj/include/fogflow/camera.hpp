#pragma once

#include <array>

namespace fogflow {

using Mat3 = std::array<double, 9>;   // row-major
using Vec3 = std::array<double, 3>;

Mat3 mat3_identity();
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Mat3 mat3_transpose(const Mat3& a);
Vec3 mat3_apply(const Mat3& a, const Vec3& v);
double mat3_det(const Mat3& a);

// Rotation from Euler angles in degrees, composed as Rz(rz)·Ry(ry)·Rx(rx).
Mat3 euler_deg_rotation(double rx, double ry, double rz);

// Pinhole camera with zero skew plus the relative pose between frames t and
// t+1. The pose is stored as the coordinate transform X_{t+1} = R·X_t + t,
// i.e. how a static point's camera coordinates change when the camera moves.
struct CameraModel {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Mat3 R = mat3_identity();
    Vec3 t{0.0, 0.0, 0.0};
    double baseline = 0.0;  // stereo baseline, meters

    // fx,fy > 0; R orthonormal with determinant 1, checked to 1e-9.
    void validate() const;

    // Coordinate transform of the reverse pose (frame t+1 -> t).
    CameraModel inverse_pose() const;
};

// Build from camera MOTION: the camera rotates by R_cam and moves by c
// (both expressed in frame-t coordinates), so a static point transforms as
// X_{t+1} = R_camᵀ·(X_t − c). A camera moving right (+x) therefore shifts
// image content left.
CameraModel camera_from_motion(double fx, double fy, double cx, double cy, const Mat3& R_cam,
                               const Vec3& c, double baseline);

}  // namespace fogflow
