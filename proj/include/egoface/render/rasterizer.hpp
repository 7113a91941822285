#pragma once

#include "egoface/camera/camera.hpp"
#include "egoface/model/face_model.hpp"
#include "egoface/render/image.hpp"

#include <limits>
#include <vector>

namespace egoface::render {

using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// A vertex after projection: pixel position, interpolation weight w (camera depth
/// or distance; interpolation is linear in 1/w) and whether it projected at all.
struct ScreenVertex
{
    Vector2d pixel = Vector2d::Zero();
    double w = 1.0;
    bool valid = false;
};

struct RenderResult
{
    Image image;
    std::vector<double> depth;  // per pixel, +inf where nothing was drawn
    std::vector<int> triangle;  // per pixel, -1 where nothing was drawn

    double depth_at(int x, int y) const { return depth[static_cast<std::size_t>(y) * image.width() + x]; }
    int triangle_at(int x, int y) const { return triangle[static_cast<std::size_t>(y) * image.width() + x]; }
    bool covered(int x, int y) const { return triangle_at(x, y) >= 0; }
    /// Fraction of pixels covered by a triangle.
    double coverage() const;
};

inline constexpr double no_depth = std::numeric_limits<double>::infinity();

/// Z-buffered rasterization at pixel centers with a top-left fill rule and
/// perspective-correct vertex color interpolation. Triangles with an invalid
/// vertex are skipped. On exact depth ties the lower triangle index wins.
RenderResult rasterize(const std::vector<ScreenVertex>& vertices, const std::vector<model::Triangle>& triangles,
                       const VectorXd& colors, int width, int height, const Vector3d& background);

/// Pose for rasterization (face frame to camera frame: Rot(R) p + T).
struct Pose
{
    Vector3d R = Vector3d::Zero();
    Vector3d T = camera::frontal_translation();
};

std::vector<ScreenVertex> project_vertices(const VectorXd& positions, const camera::PerspectiveCamera& cam,
                                           const Pose& pose);
std::vector<ScreenVertex> project_vertices(const VectorXd& positions, const camera::FisheyeCamera& cam);

RenderResult rasterize_shaded(const model::ShadedMesh& mesh, const camera::PerspectiveCamera& cam, const Pose& pose,
                              const Vector3d& background);

/// Reflectance-only render (no illumination) with the pose given separately from params.
RenderResult rasterize_albedo(const model::FaceBasis& basis, const model::ParamVector& params,
                              const camera::PerspectiveCamera& cam, const Pose& pose, const Vector3d& background);

/// Fisheye render from the face-attached camera; independent of the frontal head pose.
RenderResult rasterize_egocentric(const model::ShadedMesh& mesh, const camera::FisheyeCamera& cam,
                                  const Vector3d& background);

struct LandmarkSet
{
    std::vector<Vector2d> points;  // 66 pixel positions
    std::vector<bool> visible;

    int visible_count() const;
};

inline constexpr double landmark_depth_tolerance_mm = 1.0;

/// Projects the 66 landmark vertices; a landmark is visible when it passes the
/// near plane, lands inside the image and nothing in the depth buffer lies more than
/// 1 mm in front of it (near silhouettes the buffer may sit behind the vertex).
LandmarkSet project_landmarks(const model::FaceBasis& basis, const VectorXd& positions,
                              const camera::PerspectiveCamera& cam, const Pose& pose, const RenderResult& render);

/// Convenience overload: builds the mesh and the depth buffer from params (pose taken from params).
LandmarkSet project_landmarks(const model::FaceBasis& basis, const model::ParamVector& params,
                              const camera::PerspectiveCamera& cam);

} // namespace egoface::render
