#include "egoface/render/rasterizer.hpp"

#include "egoface/common/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace egoface::render {

namespace {

constexpr int band_rows = 32;

struct Setup
{
    int v[3];
    Vector2d p[3];
    double inv_w[3];
    double area;
    bool owns[3]; // top-left ownership of edge (p[k+1], p[k+2])
    double min_x, max_x, min_y, max_y;
};

double edge(const Vector2d& a, const Vector2d& b, const Vector2d& p)
{
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

bool top_left(const Vector2d& a, const Vector2d& b)
{
    const double dy = b.y() - a.y();
    const double dx = b.x() - a.x();
    return dy < 0 || (dy == 0 && dx > 0);
}

std::vector<Setup> setup_triangles(const std::vector<ScreenVertex>& vertices, const std::vector<model::Triangle>& tris)
{
    std::vector<Setup> out;
    out.reserve(tris.size());
    for (const model::Triangle& t : tris) {
        Setup s{};
        bool ok = true;
        for (int k = 0; k < 3; ++k) {
            const ScreenVertex& sv = vertices[static_cast<std::size_t>(t[static_cast<std::size_t>(k)])];
            ok = ok && sv.valid && sv.w > 0;
            s.v[k] = t[static_cast<std::size_t>(k)];
            s.p[k] = sv.pixel;
            s.inv_w[k] = 1.0 / sv.w;
        }
        s.area = ok ? edge(s.p[0], s.p[1], s.p[2]) : 0.0;
        if (s.area < 0) {
            std::swap(s.v[1], s.v[2]);
            std::swap(s.p[1], s.p[2]);
            std::swap(s.inv_w[1], s.inv_w[2]);
            s.area = -s.area;
        }
        if (!(s.area > 0)) {
            s.area = 0; // degenerate or culled; keep the slot so indices stay aligned
        }
        for (int k = 0; k < 3; ++k) {
            s.owns[k] = top_left(s.p[(k + 1) % 3], s.p[(k + 2) % 3]);
        }
        s.min_x = std::min({s.p[0].x(), s.p[1].x(), s.p[2].x()});
        s.max_x = std::max({s.p[0].x(), s.p[1].x(), s.p[2].x()});
        s.min_y = std::min({s.p[0].y(), s.p[1].y(), s.p[2].y()});
        s.max_y = std::max({s.p[0].y(), s.p[1].y(), s.p[2].y()});
        out.push_back(s);
    }
    return out;
}

} // namespace

double RenderResult::coverage() const
{
    const auto covered = std::count_if(triangle.begin(), triangle.end(), [](int t) { return t >= 0; });
    return static_cast<double>(covered) / static_cast<double>(triangle.size());
}

RenderResult rasterize(const std::vector<ScreenVertex>& vertices, const std::vector<model::Triangle>& triangles,
                       const VectorXd& colors, int width, int height, const Vector3d& background)
{
    if (colors.size() != 3 * static_cast<Eigen::Index>(vertices.size())) {
        throw std::invalid_argument("rasterize: colors must hold 3 values per vertex");
    }
    RenderResult r;
    r.image = Image(width, height, background);
    r.depth.assign(static_cast<std::size_t>(width) * height, no_depth);
    r.triangle.assign(static_cast<std::size_t>(width) * height, -1);
    const std::vector<Setup> setups = setup_triangles(vertices, triangles);

    const int bands = (height + band_rows - 1) / band_rows;
    parallel_for(static_cast<std::size_t>(bands), [&](std::size_t band) {
        const int y_begin = static_cast<int>(band) * band_rows;
        const int y_end = std::min(height, y_begin + band_rows);
        for (std::size_t ti = 0; ti < setups.size(); ++ti) {
            const Setup& s = setups[ti];
            if (s.area == 0) {
                continue;
            }
            const int y0 = std::max(y_begin, static_cast<int>(std::ceil(s.min_y - 0.5)));
            const int y1 = std::min(y_end - 1, static_cast<int>(std::floor(s.max_y - 0.5)));
            const int x0 = std::max(0, static_cast<int>(std::ceil(s.min_x - 0.5)));
            const int x1 = std::min(width - 1, static_cast<int>(std::floor(s.max_x - 0.5)));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const Vector2d p(x + 0.5, y + 0.5);
                    double e[3];
                    bool inside = true;
                    for (int k = 0; k < 3 && inside; ++k) {
                        e[k] = edge(s.p[(k + 1) % 3], s.p[(k + 2) % 3], p);
                        inside = e[k] > 0 || (e[k] == 0 && s.owns[k]);
                    }
                    if (!inside) {
                        continue;
                    }
                    const double q0 = e[0] / s.area * s.inv_w[0];
                    const double q1 = e[1] / s.area * s.inv_w[1];
                    const double q2 = e[2] / s.area * s.inv_w[2];
                    const double sum = q0 + q1 + q2;
                    const double depth = 1.0 / sum;
                    const std::size_t pi = static_cast<std::size_t>(y) * width + x;
                    if (!(depth < r.depth[pi])) {
                        continue;
                    }
                    r.depth[pi] = depth;
                    r.triangle[pi] = static_cast<int>(ti);
                    const double l1 = q1 / sum, l2 = q2 / sum;
                    const Vector3d c0 = colors.segment<3>(3 * s.v[0]);
                    const Vector3d c1 = colors.segment<3>(3 * s.v[1]);
                    const Vector3d c2 = colors.segment<3>(3 * s.v[2]);
                    r.image.set(x, y, c0 + l1 * (c1 - c0) + l2 * (c2 - c0));
                }
            }
        }
    });
    return r;
}

std::vector<ScreenVertex> project_vertices(const VectorXd& positions, const camera::PerspectiveCamera& cam,
                                           const Pose& pose)
{
    const Eigen::Matrix3d rot = camera::rotation(pose.R);
    std::vector<ScreenVertex> out(static_cast<std::size_t>(positions.size() / 3));
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Vector3d pc = rot * positions.segment<3>(3 * static_cast<Eigen::Index>(i)) + pose.T;
        const camera::Projection pr = camera::project_camera_space(cam, pc);
        out[i] = {pr.pixel, pr.depth, pr.valid};
    }
    return out;
}

std::vector<ScreenVertex> project_vertices(const VectorXd& positions, const camera::FisheyeCamera& cam)
{
    std::vector<ScreenVertex> out(static_cast<std::size_t>(positions.size() / 3));
    for (std::size_t i = 0; i < out.size(); ++i) {
        const camera::FisheyeProjection pr =
            camera::project_fisheye(cam, positions.segment<3>(3 * static_cast<Eigen::Index>(i)));
        out[i] = {pr.pixel, pr.distance, pr.valid};
    }
    return out;
}

RenderResult rasterize_shaded(const model::ShadedMesh& mesh, const camera::PerspectiveCamera& cam, const Pose& pose,
                              const Vector3d& background)
{
    return rasterize(project_vertices(mesh.positions, cam, pose), mesh.triangles, mesh.colors, cam.width, cam.height,
                     background);
}

RenderResult rasterize_albedo(const model::FaceBasis& basis, const model::ParamVector& params,
                              const camera::PerspectiveCamera& cam, const Pose& pose, const Vector3d& background)
{
    params.check(basis);
    const VectorXd positions = model::assemble_geometry(basis, params.alpha, params.delta);
    const VectorXd reflectance = model::assemble_reflectance(basis, params.beta);
    return rasterize(project_vertices(positions, cam, pose), basis.triangles, reflectance, cam.width, cam.height,
                     background);
}

RenderResult rasterize_egocentric(const model::ShadedMesh& mesh, const camera::FisheyeCamera& cam,
                                  const Vector3d& background)
{
    return rasterize(project_vertices(mesh.positions, cam), mesh.triangles, mesh.colors, cam.width, cam.height,
                     background);
}

int LandmarkSet::visible_count() const
{
    return static_cast<int>(std::count(visible.begin(), visible.end(), true));
}

LandmarkSet project_landmarks(const model::FaceBasis& basis, const VectorXd& positions,
                              const camera::PerspectiveCamera& cam, const Pose& pose, const RenderResult& render)
{
    const Eigen::Matrix3d rot = camera::rotation(pose.R);
    LandmarkSet out;
    for (const int id : basis.landmark_vertex_ids) {
        const camera::Projection pr = camera::project_camera_space(cam, rot * positions.segment<3>(3 * id) + pose.T);
        out.points.push_back(pr.pixel);
        bool vis = pr.valid;
        if (vis) {
            const int x = static_cast<int>(std::floor(pr.pixel.x()));
            const int y = static_cast<int>(std::floor(pr.pixel.y()));
            vis = x >= 0 && y >= 0 && x < cam.width && y < cam.height &&
                  pr.depth <= render.depth_at(x, y) + landmark_depth_tolerance_mm;
        }
        out.visible.push_back(vis);
    }
    return out;
}

LandmarkSet project_landmarks(const model::FaceBasis& basis, const model::ParamVector& params,
                              const camera::PerspectiveCamera& cam)
{
    const model::ShadedMesh mesh = model::build_shaded_mesh(basis, params);
    const Pose pose{params.R, params.T};
    const RenderResult render = rasterize_shaded(mesh, cam, pose, Vector3d::Zero());
    return project_landmarks(basis, mesh.positions, cam, pose, render);
}

} // namespace egoface::render
