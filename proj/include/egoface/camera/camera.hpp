#pragma once

#include <Eigen/Core>

#include <array>

namespace egoface::camera {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

inline constexpr double near_plane_mm = 1.0;

/// Rot(R) = Rz(R.z) * Ry(R.y) * Rx(R.x).
Matrix3d rotation(const Vector3d& euler);

/// Partial derivatives of rotation() with respect to R.x, R.y, R.z.
std::array<Matrix3d, 3> rotation_derivatives(const Vector3d& euler);

/// Inverse of rotation() for a proper rotation matrix (pitch in [-pi/2, pi/2]).
Vector3d euler_from_rotation(const Matrix3d& rot);

/// Pinhole camera; pixel (i, j) covers [i, i + 1) x [j, j + 1), so its center is (i + 0.5, j + 0.5).
struct PerspectiveCamera
{
    double focal = 550.0;
    double cx = 128.0;
    double cy = 128.0;
    int width = 256;
    int height = 256;

    /// Throws std::invalid_argument on a non-positive focal length or an outside principal point.
    void validate() const;

    /// Same camera for an image scaled by factor (intrinsics scale exactly).
    PerspectiveCamera scaled(double factor) const;
};

/// Translation placing the face frame origin in front of a frontal camera.
Vector3d frontal_translation();

struct Projection
{
    Vector2d pixel = Vector2d::Zero();
    double depth = 0.0; // camera-space z
    bool valid = false; // false when depth <= near plane
};

Projection project_camera_space(const PerspectiveCamera& cam, const Vector3d& p_cam);

/// p' = Rot(R) p + T, then u = f x'/z' + cx, v = f y'/z' + cy.
Projection project_perspective(const PerspectiveCamera& cam, const Vector3d& R, const Vector3d& T, const Vector3d& point);

/// Equidistant fisheye rigidly attached to the face: p_cam = Rot(offset_euler) p + offset_translation.
struct FisheyeCamera
{
    double focal = 0.0; // pixels per radian
    double cx = 128.0;
    double cy = 128.0;
    int width = 256;
    int height = 256;
    double fov = 170.0 * 3.14159265358979323846 / 180.0;
    Vector3d offset_euler = Vector3d::Zero();
    Vector3d offset_translation = Vector3d::Zero();

    Matrix3d offset_rotation() const { return rotation(offset_euler); }
    Vector3d to_camera(const Vector3d& p) const { return offset_rotation() * p + offset_translation; }

    /// Throws std::invalid_argument on fov outside (0, pi) or non-positive focal.
    void validate() const;
};

/// Focal length that maps the half field of view onto the inscribed image circle.
double fisheye_focal_for(int width, int height, double fov);

/// The glasses-mounted camera: beside the right cheek, about 40 mm in front of the
/// face, looking down and across toward the mouth.
FisheyeCamera ego_camera_default(int width = 256, int height = 256);

/// Look-at construction: camera at `eye`, optical axis toward `target`, image y roughly along face +y.
void set_look_at(FisheyeCamera& cam, const Vector3d& eye, const Vector3d& target);

struct FisheyeProjection
{
    Vector2d pixel = Vector2d::Zero();
    double theta = 0.0;    // incidence angle from the optical axis
    double distance = 0.0; // camera-space Euclidean distance
    bool valid = false;    // false when theta >= fov / 2 or the point sits at the center
};

FisheyeProjection project_fisheye_camera_space(const FisheyeCamera& cam, const Vector3d& p_cam);

/// Projects a face-frame point: rho = f * theta along the azimuth of the camera-space ray.
FisheyeProjection project_fisheye(const FisheyeCamera& cam, const Vector3d& point);

} // namespace egoface::camera
