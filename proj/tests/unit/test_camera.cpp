#include "doctest.h"

#include "egoface/camera/camera.hpp"
#include "egoface/model/face_model.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

using namespace egoface;
using namespace egoface::camera;

TEST_CASE("rotation order and derivatives")
{
    const Vector3d e(0.3, -0.2, 0.5);
    const Matrix3d expected = (Eigen::AngleAxisd(e.z(), Vector3d::UnitZ()) * Eigen::AngleAxisd(e.y(), Vector3d::UnitY()) *
                               Eigen::AngleAxisd(e.x(), Vector3d::UnitX()))
                                  .toRotationMatrix();
    CHECK((rotation(e) - expected).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((euler_from_rotation(rotation(e)) - e).cwiseAbs().maxCoeff() < 1e-12);
    const auto d = rotation_derivatives(e);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        Vector3d ep = e, em = e;
        ep(k) += h;
        em(k) -= h;
        const Matrix3d fd = (rotation(ep) - rotation(em)) / (2 * h);
        CHECK((fd - d[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("perspective projection")
{
    PerspectiveCamera cam{500, 320, 240, 640, 480};
    const Vector3d zero = Vector3d::Zero();
    Projection p = project_perspective(cam, zero, Vector3d(0, 0, 1000), Vector3d::Zero());
    CHECK(p.valid);
    CHECK(p.pixel == Vector2d(320, 240));
    CHECK(p.depth == 1000);
    p = project_perspective(cam, zero, Vector3d(0, 0, 1000), Vector3d(100, 0, 0));
    CHECK(p.pixel == Vector2d(370, 240));
    p = project_perspective(cam, zero, Vector3d(0, 0, 2000), Vector3d(100, 0, 0));
    CHECK(p.pixel == Vector2d(345, 240));
    p = project_perspective(cam, zero, Vector3d(0, 0, -5), Vector3d::Zero());
    CHECK_FALSE(p.valid);
    p = project_perspective(cam, zero, Vector3d(0, 0, 0.5), Vector3d::Zero());
    CHECK_FALSE(p.valid);

    // points along one camera ray land on one pixel
    const Vector3d dir(0.1, -0.05, 1.0);
    const Vector2d first = project_camera_space(cam, 300 * dir).pixel;
    for (double s : {450.0, 900.0, 5000.0}) {
        CHECK((project_camera_space(cam, s * dir).pixel - first).norm() < 1e-9);
    }
    PerspectiveCamera bad = cam;
    bad.cx = 700;
    CHECK_THROWS(bad.validate());
    CHECK(cam.scaled(0.5).focal == 250);
}

TEST_CASE("fisheye projection")
{
    FisheyeCamera cam;
    cam.focal = 200;
    cam.cx = 128;
    cam.cy = 100;
    cam.validate();

    FisheyeProjection p = project_fisheye(cam, Vector3d(0, 0, 50));
    CHECK(p.valid);
    CHECK(p.pixel == Vector2d(128, 100));

    p = project_fisheye(cam, Vector3d(std::sin(0.5), 0, std::cos(0.5)) * 80);
    CHECK(p.pixel.x() == doctest::Approx(228));
    CHECK(p.pixel.y() == doctest::Approx(100));

    const double limit = 85.0 * std::numbers::pi / 180.0;
    p = project_fisheye(cam, Vector3d(std::sin(limit + 1e-4), 0, std::cos(limit + 1e-4)));
    CHECK_FALSE(p.valid);
    p = project_fisheye(cam, Vector3d(std::sin(limit - 1e-4), 0, std::cos(limit - 1e-4)));
    CHECK(p.valid);

    // rho monotone in theta, azimuth preserved
    double last = -1;
    for (int i = 1; i < 80; ++i) {
        const double th = i * std::numbers::pi / 180.0;
        const double phi = 0.7;
        const Vector3d d(std::sin(th) * std::cos(phi), std::sin(th) * std::sin(phi), std::cos(th));
        const FisheyeProjection q = project_fisheye(cam, d);
        const Vector2d off = q.pixel - Vector2d(cam.cx, cam.cy);
        CHECK(off.norm() > last);
        last = off.norm();
        CHECK(std::atan2(off.y(), off.x()) == doctest::Approx(phi).epsilon(1e-12));
    }
    // first-order agreement with the pinhole model
    for (double th : {0.01, 0.03, 0.049}) {
        const double rho = project_fisheye(cam, Vector3d(std::sin(th), 0, std::cos(th))).pixel.x() - cam.cx;
        CHECK(std::abs(rho - cam.focal * std::tan(th)) / (cam.focal * std::tan(th)) < 1e-3);
    }
    FisheyeCamera wide = cam;
    wide.fov = std::numbers::pi;
    CHECK_THROWS(wide.validate());
}

TEST_CASE("default egocentric offset")
{
    const FisheyeCamera a = ego_camera_default();
    const FisheyeCamera b = ego_camera_default();
    CHECK(a.offset_euler == b.offset_euler);
    CHECK(a.offset_translation == b.offset_translation);
    const Matrix3d r = a.offset_rotation();
    CHECK((r.transpose() * r - Matrix3d::Identity()).norm() < 1e-12);
    CHECK(a.fov == doctest::Approx(170.0 * std::numbers::pi / 180.0));

    // the template's bounding sphere center is seen inside the field of view
    const model::FaceBasis basis = model::synth_basis({500, 4, 4, 4}, 1);
    Vector3d centroid = Vector3d::Zero();
    for (int i = 0; i < basis.vertex_count; ++i) {
        centroid += basis.a_geo.segment<3>(3 * i);
    }
    centroid /= basis.vertex_count;
    const FisheyeProjection p = project_fisheye(a, centroid);
    CHECK(p.valid);
    CHECK(p.theta < a.fov / 2);
    // and the camera sits outside the face, in front of it
    const Vector3d eye = -r.transpose() * a.offset_translation;
    CHECK(eye.z() < -80);
}
