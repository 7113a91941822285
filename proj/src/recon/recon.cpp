#include "egoface/recon/recon.hpp"

#include "egoface/common/error.hpp"
#include "egoface/common/parallel.hpp"
#include "egoface/model/param_io.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace egoface::recon {

using Eigen::Matrix3d;
using model::FaceBasis;
using model::ParamVector;

namespace {

constexpr const char* block_names[] = {"R", "T", "alpha", "beta", "delta", "gamma"};

struct Frame
{
    VectorXd positions;
    VectorXd reflectance;
    VectorXd raw_normals; // unnormalized area-weighted sums
    VectorXd normals;
    VectorXd colors;
    Matrix3d rot;
    std::array<Matrix3d, 3> drot;
};

Frame evaluate(const FaceBasis& basis, const ParamVector& p)
{
    Frame f;
    f.positions = model::assemble_geometry(basis, p.alpha, p.delta);
    f.reflectance = model::assemble_reflectance(basis, p.beta);
    f.raw_normals = VectorXd::Zero(f.positions.size());
    for (const model::Triangle& t : basis.triangles) {
        const Vector3d p0 = f.positions.segment<3>(3 * t[0]);
        const Vector3d face = (f.positions.segment<3>(3 * t[1]) - p0).cross(f.positions.segment<3>(3 * t[2]) - p0);
        for (const int i : t) {
            f.raw_normals.segment<3>(3 * i) += face;
        }
    }
    f.normals = model::vertex_normals(f.positions, basis.triangles);
    f.colors = model::shade_vertices(f.reflectance, f.normals, p.gamma);
    f.rot = camera::rotation(p.R);
    f.drot = camera::rotation_derivatives(p.R);
    return f;
}

// Derivative of the 9 SH basis values with respect to the (unit) normal.
Eigen::Matrix<double, model::sh_band_count, 3> sh_gradient(const Vector3d& n)
{
    const double a = 0.488603, k = 1.092548, q = 0.546274, c = 0.315392;
    const double x = n.x(), y = n.y(), z = n.z();
    Eigen::Matrix<double, model::sh_band_count, 3> g;
    g << 0, 0, 0,                 //
        0, a, 0,                  //
        0, 0, a,                  //
        a, 0, 0,                  //
        k * y, k * x, 0,          //
        0, k * z, k * y,          //
        0, 0, 6 * c * z,          //
        k * z, 0, k * x,          //
        2 * q * x, -2 * q * y, 0; //
    return g;
}

// Pixel position and its derivative with respect to the camera-space point.
struct Projected
{
    Vector2d pixel;
    Eigen::Matrix<double, 2, 3> d_point;
    bool valid;
};

Projected project(const camera::PerspectiveCamera& cam, const Vector3d& pc)
{
    Projected out;
    const camera::Projection pr = camera::project_camera_space(cam, pc);
    out.pixel = pr.pixel;
    out.valid = pr.valid;
    const double z = pc.z();
    out.d_point << cam.focal / z, 0, -cam.focal * pc.x() / (z * z), 0, cam.focal / z, -cam.focal * pc.y() / (z * z);
    return out;
}

struct Sample
{
    Vector3d value;
    Vector3d du; // per-channel derivative along image x
    Vector3d dv;
};

Sample sample_with_gradient(const render::Image& img, const Vector2d& pixel)
{
    const int w = img.width(), h = img.height();
    double x = pixel.x() - 0.5, y = pixel.y() - 0.5;
    const bool clamp_x = x < 0 || x > w - 1;
    const bool clamp_y = y < 0 || y > h - 1;
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(w - 2, 0));
    const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(h - 2, 0));
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0, fy = y - y0;
    const Vector3d p00 = img.pixel(x0, y0), p10 = img.pixel(x1, y0), p01 = img.pixel(x0, y1), p11 = img.pixel(x1, y1);
    Sample s;
    s.value = (1 - fy) * ((1 - fx) * p00 + fx * p10) + fy * ((1 - fx) * p01 + fx * p11);
    s.du = clamp_x ? Vector3d::Zero() : Vector3d((1 - fy) * (p10 - p00) + fy * (p11 - p01));
    s.dv = clamp_y ? Vector3d::Zero() : Vector3d((1 - fx) * (p01 - p00) + fx * (p11 - p10));
    return s;
}

std::vector<int> used_landmarks(const FaceBasis& basis, const render::LandmarkSet& landmarks)
{
    std::vector<int> out;
    if (landmarks.points.empty()) {
        return out;
    }
    if (landmarks.points.size() != basis.landmark_vertex_ids.size() ||
        landmarks.visible.size() != landmarks.points.size()) {
        throw std::invalid_argument("landmark set has " + std::to_string(landmarks.points.size()) +
                                    " entries, expected " + std::to_string(basis.landmark_vertex_ids.size()));
    }
    for (std::size_t l = 0; l < landmarks.points.size(); ++l) {
        if (landmarks.visible[l]) {
            out.push_back(static_cast<int>(l));
        }
    }
    return out;
}

// Derivative of all unit normals for a geometry change dp (3N).
VectorXd normal_derivative(const FaceBasis& basis, const Frame& f, const Eigen::Ref<const VectorXd>& dp)
{
    VectorXd dm = VectorXd::Zero(f.positions.size());
    for (const model::Triangle& t : basis.triangles) {
        const Vector3d p0 = f.positions.segment<3>(3 * t[0]);
        const Vector3d e1 = f.positions.segment<3>(3 * t[1]) - p0;
        const Vector3d e2 = f.positions.segment<3>(3 * t[2]) - p0;
        const Vector3d d0 = dp.segment<3>(3 * t[0]);
        const Vector3d de1 = dp.segment<3>(3 * t[1]) - d0;
        const Vector3d de2 = dp.segment<3>(3 * t[2]) - d0;
        const Vector3d dface = de1.cross(e2) + e1.cross(de2);
        for (const int i : t) {
            dm.segment<3>(3 * i) += dface;
        }
    }
    VectorXd dn(dm.size());
    for (Eigen::Index i = 0; i < dm.size() / 3; ++i) {
        const Vector3d m = f.raw_normals.segment<3>(3 * i);
        const double len = m.norm();
        if (len == 0) {
            dn.segment<3>(3 * i).setZero();
            continue;
        }
        const Vector3d n = m / len;
        dn.segment<3>(3 * i) = (dm.segment<3>(3 * i) - n * n.dot(dm.segment<3>(3 * i))) / len;
    }
    return dn;
}

struct Column
{
    int flat = 0;  // index in ParamVector::flatten()
    int block = 0; // 0 R, 1 T, 2 alpha, 3 beta, 4 delta, 5 gamma
    int k = 0;     // index inside the block
};

std::vector<Column> free_columns(const FreeSet& free, const model::BasisDims& dims)
{
    const bool on[] = {free.R, free.T, free.alpha, free.beta, free.delta, free.gamma};
    const int sizes[] = {3, 3, dims.alpha, dims.beta, dims.delta, model::gamma_size};
    std::vector<Column> out;
    int offset = 0;
    for (int b = 0; b < 6; ++b) {
        for (int k = 0; on[b] && k < sizes[b]; ++k) {
            out.push_back({offset + k, b, k});
        }
        offset += sizes[b];
    }
    return out;
}

double checked(const nlohmann::json& j, const std::string& key, double lo, bool lo_open)
{
    if (!j.at(key).is_number()) {
        throw ConfigError("recon." + key + " must be a number");
    }
    const double v = j.at(key).get<double>();
    if (!std::isfinite(v) || (lo_open ? v <= lo : v < lo)) {
        throw ConfigError("recon." + key + " is out of range");
    }
    return v;
}

} // namespace

FreeSet FreeSet::parse(const std::string& list)
{
    FreeSet f = none();
    bool* fields[] = {&f.R, &f.T, &f.alpha, &f.beta, &f.delta, &f.gamma};
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
        if (item.empty()) {
            continue;
        }
        bool found = false;
        for (int b = 0; b < 6; ++b) {
            if (item == block_names[b]) {
                *fields[b] = true;
                found = true;
            }
        }
        if (!found) {
            throw ConfigError("unknown parameter block '" + item + "' (expected R, T, alpha, beta, delta, gamma)");
        }
    }
    return f;
}

std::string FreeSet::to_string() const
{
    const bool on[] = {R, T, alpha, beta, delta, gamma};
    std::string out;
    for (int b = 0; b < 6; ++b) {
        if (on[b]) {
            out += (out.empty() ? "" : ",") + std::string(block_names[b]);
        }
    }
    return out;
}

std::vector<int> free_indices(const FreeSet& free, const model::BasisDims& dims)
{
    std::vector<int> out;
    for (const Column& c : free_columns(free, dims)) {
        out.push_back(c.flat);
    }
    return out;
}

void EnergyConfig::validate() const
{
    if (!(w_photo >= 0) || !(w_lmk >= 0) || !(w_prior >= 0)) {
        throw ConfigError("recon weights must be non-negative");
    }
    if (w_photo == 0 && w_lmk == 0 && w_prior == 0) {
        throw ConfigError("recon needs at least one positive weight");
    }
    if (pyramid_levels < 1 || max_iterations < 1) {
        throw ConfigError("recon.pyramid_levels and recon.max_iterations must be at least 1");
    }
    if (!(lm_damping > 0) || !(damping_increase > 1) || !(damping_decrease > 0 && damping_decrease < 1) ||
        !(damping_cap > lm_damping)) {
        throw ConfigError("recon damping schedule is invalid");
    }
    if (!(tolerance > 0) || !(min_facing >= -1 && min_facing < 1) || !(depth_tolerance_mm >= 0)) {
        throw ConfigError("recon tolerances are out of range");
    }
}

nlohmann::json energy_config_to_json(const EnergyConfig& c)
{
    return {{"w_photo", c.w_photo},
            {"w_lmk", c.w_lmk},
            {"w_prior", c.w_prior},
            {"pyramid_levels", c.pyramid_levels},
            {"max_iterations", c.max_iterations},
            {"lm_damping", c.lm_damping},
            {"damping_increase", c.damping_increase},
            {"damping_decrease", c.damping_decrease},
            {"damping_cap", c.damping_cap},
            {"tolerance", c.tolerance},
            {"min_facing", c.min_facing},
            {"depth_tolerance_mm", c.depth_tolerance_mm}};
}

EnergyConfig energy_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) {
        throw ConfigError("recon must be an object");
    }
    EnergyConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "w_photo") {
            c.w_photo = checked(j, key, 0, false);
        } else if (key == "w_lmk") {
            c.w_lmk = checked(j, key, 0, false);
        } else if (key == "w_prior") {
            c.w_prior = checked(j, key, 0, false);
        } else if (key == "pyramid_levels" || key == "max_iterations") {
            if (!value.is_number_integer() || value.get<int>() < 1) {
                throw ConfigError("recon." + key + " must be a positive integer");
            }
            (key == "pyramid_levels" ? c.pyramid_levels : c.max_iterations) = value.get<int>();
        } else if (key == "lm_damping") {
            c.lm_damping = checked(j, key, 0, true);
        } else if (key == "damping_increase") {
            c.damping_increase = checked(j, key, 1, true);
        } else if (key == "damping_decrease") {
            c.damping_decrease = checked(j, key, 0, true);
        } else if (key == "damping_cap") {
            c.damping_cap = checked(j, key, 0, true);
        } else if (key == "tolerance") {
            c.tolerance = checked(j, key, 0, true);
        } else if (key == "min_facing") {
            c.min_facing = checked(j, key, -1, false);
        } else if (key == "depth_tolerance_mm") {
            c.depth_tolerance_mm = checked(j, key, 0, false);
        } else {
            throw ConfigError("unknown key recon." + key);
        }
    }
    c.validate();
    return c;
}

Vector3d sample_bilinear(const render::Image& image, const Vector2d& pixel)
{
    return sample_with_gradient(image, pixel).value;
}

std::vector<int> photo_vertices(const FaceBasis& basis, const ParamVector& params, const camera::PerspectiveCamera& cam,
                                const EnergyConfig& cfg)
{
    params.check(basis);
    const Frame f = evaluate(basis, params);
    const render::Pose pose{params.R, params.T};
    const std::vector<render::ScreenVertex> screen = render::project_vertices(f.positions, cam, pose);
    const render::RenderResult r = render::rasterize(screen, basis.triangles, f.colors, cam.width, cam.height,
                                                     Vector3d::Zero());
    std::vector<int> out;
    for (int i = 0; i < basis.vertex_count; ++i) {
        const render::ScreenVertex& s = screen[static_cast<std::size_t>(i)];
        if (!s.valid) {
            continue;
        }
        const int x = static_cast<int>(std::floor(s.pixel.x()));
        const int y = static_cast<int>(std::floor(s.pixel.y()));
        if (x < 0 || y < 0 || x >= cam.width || y >= cam.height || s.w > r.depth_at(x, y) + cfg.depth_tolerance_mm) {
            continue;
        }
        const Vector3d pc = f.rot * f.positions.segment<3>(3 * i) + params.T;
        const double facing = -(f.rot * f.normals.segment<3>(3 * i)).dot(pc.normalized());
        if (facing >= cfg.min_facing) {
            out.push_back(i);
        }
    }
    return out;
}

Residuals energy_residuals(const FaceBasis& basis, const ParamVector& params, const camera::PerspectiveCamera& cam,
                           const render::Image& image, const render::LandmarkSet& landmarks, const EnergyConfig& cfg,
                           const std::vector<int>& photo_set)
{
    params.check(basis);
    const Frame f = evaluate(basis, params);
    const std::vector<int> lmk = used_landmarks(basis, landmarks);
    Residuals out;
    out.photo_rows = cfg.w_photo > 0 ? 3 * static_cast<int>(photo_set.size()) : 0;
    out.landmark_rows = cfg.w_lmk > 0 ? 2 * static_cast<int>(lmk.size()) : 0;
    out.prior_rows = cfg.w_prior > 0 ? basis.dim_alpha() + basis.dim_beta() + basis.dim_delta() : 0;
    out.values = VectorXd::Zero(out.photo_rows + out.landmark_rows + out.prior_rows);

    if (out.photo_rows > 0) {
        if (image.width() != cam.width || image.height() != cam.height) {
            throw std::invalid_argument("image size does not match the camera");
        }
        const double sw = std::sqrt(cfg.w_photo);
        parallel_for(photo_set.size(), [&](std::size_t k) {
            const int i = photo_set[k];
            const Vector3d pc = f.rot * f.positions.segment<3>(3 * i) + params.T;
            const Vector3d sample = sample_with_gradient(image, camera::project_camera_space(cam, pc).pixel).value;
            out.values.segment<3>(3 * static_cast<Eigen::Index>(k)) = sw * (sample - f.colors.segment<3>(3 * i));
        });
    }
    if (out.landmark_rows > 0) {
        const double sw = std::sqrt(cfg.w_lmk);
        for (std::size_t k = 0; k < lmk.size(); ++k) {
            const int l = lmk[k];
            const int v = basis.landmark_vertex_ids[static_cast<std::size_t>(l)];
            const Vector3d pc = f.rot * f.positions.segment<3>(3 * v) + params.T;
            out.values.segment<2>(out.photo_rows + 2 * static_cast<Eigen::Index>(k)) =
                sw * (camera::project_camera_space(cam, pc).pixel - landmarks.points[static_cast<std::size_t>(l)]);
        }
    }
    if (out.prior_rows > 0) {
        const double sw = std::sqrt(cfg.w_prior);
        const Eigen::Index o = out.photo_rows + out.landmark_rows;
        out.values.segment(o, basis.dim_alpha()) = sw * params.alpha.cwiseQuotient(basis.sigma_alpha);
        out.values.segment(o + basis.dim_alpha(), basis.dim_beta()) = sw * params.beta.cwiseQuotient(basis.sigma_beta);
        out.values.segment(o + basis.dim_alpha() + basis.dim_beta(), basis.dim_delta()) =
            sw * params.delta.cwiseQuotient(basis.sigma_delta);
    }
    if (!out.values.allFinite()) {
        throw NumericError("non-finite reconstruction residual");
    }
    return out;
}

Residuals energy_residuals(const FaceBasis& basis, const ParamVector& params, const camera::PerspectiveCamera& cam,
                           const render::Image& image, const render::LandmarkSet& landmarks, const EnergyConfig& cfg)
{
    const std::vector<int> set = cfg.w_photo > 0 ? photo_vertices(basis, params, cam, cfg) : std::vector<int>{};
    return energy_residuals(basis, params, cam, image, landmarks, cfg, set);
}

MatrixXd energy_jacobian(const FaceBasis& basis, const ParamVector& params, const camera::PerspectiveCamera& cam,
                         const render::Image& image, const render::LandmarkSet& landmarks, const EnergyConfig& cfg,
                         const std::vector<int>& photo_set, const FreeSet& free)
{
    params.check(basis);
    const Frame f = evaluate(basis, params);
    const std::vector<int> lmk = used_landmarks(basis, landmarks);
    const std::vector<Column> cols = free_columns(free, basis.dims());
    const int photo_rows = cfg.w_photo > 0 ? 3 * static_cast<int>(photo_set.size()) : 0;
    const int landmark_rows = cfg.w_lmk > 0 ? 2 * static_cast<int>(lmk.size()) : 0;
    const int prior_rows = cfg.w_prior > 0 ? basis.dim_alpha() + basis.dim_beta() + basis.dim_delta() : 0;
    MatrixXd J = MatrixXd::Zero(photo_rows + landmark_rows + prior_rows, static_cast<Eigen::Index>(cols.size()));

    // geometry direction per column (alpha / delta), and the normal change it causes
    auto geometry_column = [&](const Column& c) -> Eigen::Ref<const VectorXd> {
        return c.block == 2 ? basis.b_geo.col(c.k) : basis.b_exp.col(c.k);
    };
    std::vector<VectorXd> dnormals(cols.size());
    if (photo_rows > 0) {
        parallel_for(cols.size(), [&](std::size_t j) {
            if (cols[j].block == 2 || cols[j].block == 4) {
                dnormals[j] = normal_derivative(basis, f, geometry_column(cols[j]));
            }
        });
    }

    // d(pixel)/d(column) for vertex i
    auto pixel_derivative = [&](const Column& c, int i, const Eigen::Matrix<double, 2, 3>& dp) -> Vector2d {
        switch (c.block) {
        case 0:
            return dp * (f.drot[static_cast<std::size_t>(c.k)] * f.positions.segment<3>(3 * i));
        case 1:
            return dp.col(c.k);
        case 2:
        case 4:
            return dp * (f.rot * geometry_column(c).segment<3>(3 * i));
        default:
            return Vector2d::Zero();
        }
    };

    if (photo_rows > 0) {
        if (image.width() != cam.width || image.height() != cam.height) {
            throw std::invalid_argument("image size does not match the camera");
        }
        const double sw = std::sqrt(cfg.w_photo);
        parallel_for(photo_set.size(), [&](std::size_t k) {
            const int i = photo_set[k];
            const Vector3d pc = f.rot * f.positions.segment<3>(3 * i) + params.T;
            const Projected pr = project(cam, pc);
            const Sample s = sample_with_gradient(image, pr.pixel);
            const Vector3d n = f.normals.segment<3>(3 * i);
            const auto y = model::sh_basis(n);
            const auto gy = sh_gradient(n);
            const Vector3d refl = f.reflectance.segment<3>(3 * i);
            Eigen::Matrix3d dc_dn; // row per channel
            Vector3d irradiance;
            for (int ch = 0; ch < 3; ++ch) {
                const auto g = params.gamma.segment<model::sh_band_count>(ch * model::sh_band_count);
                dc_dn.row(ch) = refl(ch) * (g.transpose() * gy);
                double e = 0;
                for (int b = 0; b < model::sh_band_count; ++b) {
                    e += g(b) * y[static_cast<std::size_t>(b)];
                }
                irradiance(ch) = e;
            }
            const Eigen::Index row = 3 * static_cast<Eigen::Index>(k);
            for (std::size_t j = 0; j < cols.size(); ++j) {
                const Column& c = cols[j];
                Vector3d d = Vector3d::Zero();
                const Vector2d dpix = pixel_derivative(c, i, pr.d_point);
                d += s.du * dpix.x() + s.dv * dpix.y();
                if (c.block == 2 || c.block == 4) {
                    d -= dc_dn * dnormals[j].segment<3>(3 * i);
                } else if (c.block == 3) {
                    d -= basis.b_ref.col(c.k).segment<3>(3 * i).cwiseProduct(irradiance);
                } else if (c.block == 5) {
                    const int ch = c.k / model::sh_band_count;
                    d(ch) -= refl(ch) * y[static_cast<std::size_t>(c.k % model::sh_band_count)];
                }
                J.block<3, 1>(row, static_cast<Eigen::Index>(j)) = sw * d;
            }
        });
    }
    if (landmark_rows > 0) {
        const double sw = std::sqrt(cfg.w_lmk);
        for (std::size_t k = 0; k < lmk.size(); ++k) {
            const int v = basis.landmark_vertex_ids[static_cast<std::size_t>(lmk[k])];
            const Projected pr = project(cam, f.rot * f.positions.segment<3>(3 * v) + params.T);
            for (std::size_t j = 0; j < cols.size(); ++j) {
                J.block<2, 1>(photo_rows + 2 * static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                    sw * pixel_derivative(cols[j], v, pr.d_point);
            }
        }
    }
    if (prior_rows > 0) {
        const double sw = std::sqrt(cfg.w_prior);
        const int o = photo_rows + landmark_rows;
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const Column& c = cols[j];
            if (c.block == 2) {
                J(o + c.k, static_cast<Eigen::Index>(j)) = sw / basis.sigma_alpha(c.k);
            } else if (c.block == 3) {
                J(o + basis.dim_alpha() + c.k, static_cast<Eigen::Index>(j)) = sw / basis.sigma_beta(c.k);
            } else if (c.block == 4) {
                J(o + basis.dim_alpha() + basis.dim_beta() + c.k, static_cast<Eigen::Index>(j)) =
                    sw / basis.sigma_delta(c.k);
            }
        }
    }
    return J;
}

namespace {

render::LandmarkSet scale_landmarks(const render::LandmarkSet& l, double factor)
{
    render::LandmarkSet out = l;
    for (Vector2d& p : out.points) {
        p *= factor;
    }
    return out;
}

void record(StageRecord& s, const Residuals& r)
{
    s.photo.push_back(r.photo_energy());
    s.landmark.push_back(r.landmark_energy());
    s.prior.push_back(r.prior_energy());
    s.total.push_back(r.total());
}

} // namespace

FitReport fit_frame(const FaceBasis& basis, const render::Image& image, const render::LandmarkSet& landmarks,
                    const camera::PerspectiveCamera& cam, const ParamVector& init, const FreeSet& free,
                    const EnergyConfig& cfg)
{
    cfg.validate();
    init.check(basis);
    if (image.width() != cam.width || image.height() != cam.height) {
        throw std::invalid_argument("image size does not match the camera");
    }

    // coarsest level first; stop halving when a dimension is no longer even
    std::vector<render::Image> pyramid{image};
    std::vector<camera::PerspectiveCamera> cams{cam};
    while (static_cast<int>(pyramid.size()) < cfg.pyramid_levels && pyramid.back().width() % 2 == 0 &&
           pyramid.back().height() % 2 == 0 && pyramid.back().width() >= 16 && pyramid.back().height() >= 16) {
        pyramid.push_back(render::downsample_box(pyramid.back(), 2));
        camera::PerspectiveCamera c = cams.back().scaled(0.5);
        c.width = pyramid.back().width();
        c.height = pyramid.back().height();
        cams.push_back(c);
    }

    const std::vector<int> idx = free_indices(free, basis.dims());
    FitReport report;
    report.params = init;
    VectorXd x = init.flatten();
    const model::BasisDims dims = basis.dims();

    for (int level = static_cast<int>(pyramid.size()) - 1; level >= 0; --level) {
        const render::Image& img = pyramid[static_cast<std::size_t>(level)];
        const camera::PerspectiveCamera& c = cams[static_cast<std::size_t>(level)];
        const render::LandmarkSet lm = scale_landmarks(landmarks, std::ldexp(1.0, -level));
        StageRecord stage;
        stage.level = level;

        ParamVector current = ParamVector::unflatten(x, dims);
        const std::vector<int> set = cfg.w_photo > 0 ? photo_vertices(basis, current, c, cfg) : std::vector<int>{};
        Residuals res = energy_residuals(basis, current, c, img, lm, cfg, set);
        record(stage, res);
        double lambda = cfg.lm_damping;

        if (idx.empty() || res.total() < 1e-24) {
            stage.converged = true;
        }
        while (!stage.converged && stage.iterations < cfg.max_iterations && lambda <= cfg.damping_cap) {
            const MatrixXd J = energy_jacobian(basis, current, c, img, lm, cfg, set, free);
            const MatrixXd A = J.transpose() * J;
            const VectorXd g = J.transpose() * res.values;
            const VectorXd diag = A.diagonal().cwiseMax(1e-12 * std::max(1.0, A.diagonal().maxCoeff()));
            bool accepted = false;
            while (!accepted && stage.iterations < cfg.max_iterations && lambda <= cfg.damping_cap) {
                ++stage.iterations;
                MatrixXd damped = A;
                damped.diagonal() += lambda * diag;
                const VectorXd step = -damped.ldlt().solve(g);
                VectorXd candidate = x;
                for (std::size_t j = 0; j < idx.size(); ++j) {
                    candidate(idx[j]) += step(static_cast<Eigen::Index>(j));
                }
                if (step.norm() <= 1e-14 * (1.0 + x.norm())) {
                    stage.converged = true;
                    break;
                }
                const ParamVector trial = ParamVector::unflatten(candidate, dims);
                Residuals trial_res;
                bool ok = candidate.allFinite();
                if (ok) {
                    try {
                        trial_res = energy_residuals(basis, trial, c, img, lm, cfg, set);
                    } catch (const NumericError&) {
                        ok = false;
                    }
                }
                if (ok && trial_res.total() < res.total()) {
                    const double decrease = (res.total() - trial_res.total()) / res.total();
                    x = candidate;
                    current = trial;
                    res = trial_res;
                    record(stage, res);
                    lambda = std::max(lambda * cfg.damping_decrease, 1e-12);
                    accepted = true;
                    if (decrease < cfg.tolerance || res.total() < 1e-24) {
                        stage.converged = true;
                    }
                } else {
                    lambda *= cfg.damping_increase;
                }
            }
        }
        report.total_iterations += stage.iterations;
        report.stages.push_back(std::move(stage));
    }

    report.params = ParamVector::unflatten(x, dims);
    report.iterations = report.stages.back().iterations;
    report.converged = report.stages.back().converged;
    report.final_energy = report.stages.back().total.back();
    EnergyConfig unit = cfg;
    unit.w_photo = 1.0;
    const std::vector<int> set = photo_vertices(basis, report.params, cam, unit);
    const Residuals r = energy_residuals(basis, report.params, cam, image, landmarks, unit, set);
    report.photo_rms = r.photo_rows > 0 ? std::sqrt(r.photo_energy() / r.photo_rows) : 0.0;
    return report;
}

SequenceFit fit_sequence(const FaceBasis& basis, const std::vector<render::Image>& frames,
                         const std::vector<render::LandmarkSet>& landmark_tracks, const camera::PerspectiveCamera& cam,
                         const ParamVector& init, const EnergyConfig& cfg)
{
    if (frames.empty()) {
        throw std::invalid_argument("fit_sequence needs at least one frame");
    }
    if (!landmark_tracks.empty() && landmark_tracks.size() != frames.size()) {
        throw std::invalid_argument("landmark track count differs from frame count");
    }
    SequenceFit out;
    ParamVector start = init;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        const render::LandmarkSet lm = landmark_tracks.empty() ? render::LandmarkSet{} : landmark_tracks[k];
        FitReport r = fit_frame(basis, frames[k], lm, cam, start, k == 0 ? FreeSet::all() : FreeSet::tracking(), cfg);
        start = r.params;
        out.params.push_back(r.params);
        out.reports.push_back(std::move(r));
    }
    return out;
}

ParamVector frontal_init(const FaceBasis& basis)
{
    ParamVector p = ParamVector::neutral(basis);
    p.T = camera::frontal_translation();
    return p;
}

void write_fit_jsonl(const SequenceFit& fit, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    for (std::size_t k = 0; k < fit.params.size(); ++k) {
        nlohmann::json line{{"frame", k}, {"params", model::param_to_json(fit.params[k])}};
        if (k < fit.reports.size()) {
            line["converged"] = fit.reports[k].converged;
            line["iterations"] = fit.reports[k].iterations;
            line["energy"] = fit.reports[k].final_energy;
        }
        out << line.dump() << '\n';
    }
}

std::vector<ParamVector> read_params_jsonl(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw MissingArtifactError("cannot open " + path.string());
    }
    std::vector<ParamVector> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const nlohmann::json j = nlohmann::json::parse(line);
        out.push_back(model::param_from_json(j.contains("params") ? j.at("params") : j));
    }
    return out;
}

double mean_vertex_distance(const VectorXd& a, const VectorXd& b)
{
    if (a.size() != b.size() || a.size() % 3 != 0 || a.size() == 0) {
        throw std::invalid_argument("position vectors differ in size");
    }
    double sum = 0;
    for (Eigen::Index i = 0; i < a.size() / 3; ++i) {
        sum += (a.segment<3>(3 * i) - b.segment<3>(3 * i)).norm();
    }
    return sum / static_cast<double>(a.size() / 3);
}

} // namespace egoface::recon
