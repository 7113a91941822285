#include "egoface/camera/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace egoface::camera {

namespace {

Matrix3d rx(double a)
{
    Matrix3d m;
    m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return m;
}

Matrix3d ry(double a)
{
    Matrix3d m;
    m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return m;
}

Matrix3d rz(double a)
{
    Matrix3d m;
    m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return m;
}

Matrix3d drx(double a)
{
    Matrix3d m;
    m << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
    return m;
}

Matrix3d dry(double a)
{
    Matrix3d m;
    m << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
    return m;
}

Matrix3d drz(double a)
{
    Matrix3d m;
    m << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
    return m;
}

} // namespace

Matrix3d rotation(const Vector3d& e)
{
    return rz(e.z()) * ry(e.y()) * rx(e.x());
}

std::array<Matrix3d, 3> rotation_derivatives(const Vector3d& e)
{
    return {rz(e.z()) * ry(e.y()) * drx(e.x()), rz(e.z()) * dry(e.y()) * rx(e.x()),
            drz(e.z()) * ry(e.y()) * rx(e.x())};
}

Vector3d euler_from_rotation(const Matrix3d& r)
{
    const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    return {std::atan2(r(2, 1), r(2, 2)), pitch, std::atan2(r(1, 0), r(0, 0))};
}

void PerspectiveCamera::validate() const
{
    if (!(focal > 0) || width <= 0 || height <= 0) {
        throw std::invalid_argument("perspective camera needs a positive focal length and resolution");
    }
    if (!(cx >= 0 && cx <= width && cy >= 0 && cy <= height)) {
        throw std::invalid_argument("principal point lies outside the image");
    }
}

PerspectiveCamera PerspectiveCamera::scaled(double factor) const
{
    PerspectiveCamera c = *this;
    c.focal *= factor;
    c.cx *= factor;
    c.cy *= factor;
    c.width = static_cast<int>(std::lround(width * factor));
    c.height = static_cast<int>(std::lround(height * factor));
    return c;
}

Vector3d frontal_translation()
{
    return {0.0, 0.0, 500.0};
}

Projection project_camera_space(const PerspectiveCamera& cam, const Vector3d& p)
{
    Projection out;
    out.depth = p.z();
    if (!(p.z() > near_plane_mm)) {
        return out;
    }
    out.pixel = {cam.focal * p.x() / p.z() + cam.cx, cam.focal * p.y() / p.z() + cam.cy};
    out.valid = true;
    return out;
}

Projection project_perspective(const PerspectiveCamera& cam, const Vector3d& R, const Vector3d& T, const Vector3d& point)
{
    return project_camera_space(cam, rotation(R) * point + T);
}

void FisheyeCamera::validate() const
{
    if (!(fov > 0 && fov < 3.14159265358979323846)) {
        throw std::invalid_argument("fisheye field of view must lie in (0, pi)");
    }
    if (!(focal > 0) || width <= 0 || height <= 0) {
        throw std::invalid_argument("fisheye camera needs a positive focal length and resolution");
    }
}

double fisheye_focal_for(int width, int height, double fov)
{
    return 0.5 * std::min(width, height) / (0.5 * fov);
}

void set_look_at(FisheyeCamera& cam, const Vector3d& eye, const Vector3d& target)
{
    const Vector3d z = (target - eye).normalized();
    const Vector3d y = (Vector3d::UnitY() - Vector3d::UnitY().dot(z) * z).normalized();
    const Vector3d x = y.cross(z);
    Matrix3d rot;
    rot.row(0) = x;
    rot.row(1) = y;
    rot.row(2) = z;
    cam.offset_euler = euler_from_rotation(rot);
    cam.offset_translation = -cam.offset_rotation() * eye;
}

FisheyeCamera ego_camera_default(int width, int height)
{
    FisheyeCamera cam;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    // the sensor crops the image circle so the lower face fills the frame
    cam.focal = 140.0 * std::min(width, height) / 256.0;
    set_look_at(cam, Vector3d(55.0, -10.0, -100.0), Vector3d(-5.0, 45.0, -60.0));
    return cam;
}

FisheyeProjection project_fisheye_camera_space(const FisheyeCamera& cam, const Vector3d& p)
{
    FisheyeProjection out;
    const double r = std::hypot(p.x(), p.y());
    out.distance = p.norm();
    out.theta = std::atan2(r, p.z());
    if (!(out.distance > 0) || out.theta >= 0.5 * cam.fov) {
        return out;
    }
    const double rho = cam.focal * out.theta;
    if (r > 0) {
        out.pixel = {cam.cx + rho * p.x() / r, cam.cy + rho * p.y() / r};
    } else {
        out.pixel = {cam.cx, cam.cy};
    }
    out.valid = true;
    return out;
}

FisheyeProjection project_fisheye(const FisheyeCamera& cam, const Vector3d& point)
{
    return project_fisheye_camera_space(cam, cam.to_camera(point));
}

} // namespace egoface::camera
