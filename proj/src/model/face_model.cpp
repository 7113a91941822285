#include "egoface/model/face_model.hpp"

#include "egoface/common/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace egoface::model {

namespace {

constexpr double head_half_width = 75.0;
constexpr double head_half_height = 90.0;
constexpr double head_depth = 60.0;
constexpr double template_polar_limit = 1.53; // rad from the -z pole, just short of the equator

constexpr double identity_rms_mm = 4.0;
constexpr double expression_scale = 1.6; // sigma_delta_0 = scale * sqrt(N)
constexpr double reflectance_rms = 0.05;
constexpr double sigma_decay = 0.9;
constexpr double smoothing_mm = 25.0;

struct Template
{
    std::vector<Vector3d> positions;
    std::vector<int> mirror;
    std::vector<Triangle> triangles;
};

double gauss2(double dx, double dy, double sx, double sy)
{
    return std::exp(-0.5 * (dx * dx / (sx * sx) + dy * dy / (sy * sy)));
}

// Depth relief added to the ellipsoid: nose, eye sockets, brow ridge, lips, chin.
double relief(double x, double y)
{
    const double ax = std::abs(x);
    return 22.0 * gauss2(x, y - 5.0, 9.0, 20.0) - 6.0 * gauss2(ax - 32.0, y + 22.0, 11.0, 11.0) +
           3.0 * gauss2(ax - 32.0, y + 38.0, 16.0, 5.0) + 4.0 * gauss2(x, y - 42.0, 18.0, 7.0) +
           5.0 * gauss2(x, y - 78.0, 15.0, 10.0);
}

std::vector<int> ring_sizes(int vertex_count)
{
    const double dt_guess = std::sqrt(2.0 * std::numbers::pi / vertex_count);
    const int rings = std::max(3, static_cast<int>(std::lround(template_polar_limit / dt_guess)));
    const double dt = template_polar_limit / rings;
    std::vector<double> raw(static_cast<std::size_t>(rings));
    double total = 0;
    for (int r = 1; r <= rings; ++r) {
        raw[static_cast<std::size_t>(r - 1)] = 2.0 * std::numbers::pi * std::sin(r * dt) / dt;
        total += raw[static_cast<std::size_t>(r - 1)];
    }
    // even rings keep the band stitching mirror symmetric; only the outermost ring may be odd
    std::vector<int> sizes(raw.size());
    int sum = 0;
    for (std::size_t r = 0; r < raw.size(); ++r) {
        sizes[r] = std::max(4, 2 * static_cast<int>(std::lround(0.5 * raw[r] * (vertex_count - 1) / total)));
        sum += sizes[r];
    }
    int diff = vertex_count - 1 - sum;
    for (std::size_t k = 0; std::abs(diff) >= 2; ++k) {
        int& s = sizes[sizes.size() - 1 - (k % sizes.size())];
        if (diff > 0) {
            s += 2;
            diff -= 2;
        } else if (s > 4) {
            s -= 2;
            diff += 2;
        }
    }
    sizes.back() += diff;
    return sizes;
}

Template make_template(int vertex_count)
{
    Template t;
    const std::vector<int> sizes = ring_sizes(vertex_count);
    const double dt = template_polar_limit / static_cast<double>(sizes.size());

    std::vector<Vector3d> sphere; // ellipsoid points before relief, used for winding
    auto push = [&](const Vector3d& p, int mirror) {
        sphere.push_back(p);
        t.mirror.push_back(mirror);
    };
    push(Vector3d(0, 0, -head_depth), 0);
    std::vector<int> ring_start{0};
    int next = 1;
    for (std::size_t r = 0; r < sizes.size(); ++r) {
        const int m = sizes[r];
        const double theta = dt * static_cast<double>(r + 1);
        ring_start.push_back(next);
        std::vector<Vector3d> ring(static_cast<std::size_t>(m));
        for (int j = 0; j <= m / 2; ++j) {
            const double phi = std::numbers::pi / 2 + 2 * std::numbers::pi * j / m;
            Vector3d p(head_half_width * std::sin(theta) * std::cos(phi),
                       head_half_height * std::sin(theta) * std::sin(phi), -head_depth * std::cos(theta));
            const int mj = (m - j) % m;
            if (mj == j) {
                p.x() = 0.0;
            }
            ring[static_cast<std::size_t>(j)] = p;
            ring[static_cast<std::size_t>(mj)] = Vector3d(-p.x(), p.y(), p.z());
        }
        for (int j = 0; j < m; ++j) {
            push(ring[static_cast<std::size_t>(j)], next + (m - j) % m);
        }
        next += m;
    }

    auto add_triangle = [&](int a, int b, int c) {
        const Vector3d n = (sphere[static_cast<std::size_t>(b)] - sphere[static_cast<std::size_t>(a)])
                               .cross(sphere[static_cast<std::size_t>(c)] - sphere[static_cast<std::size_t>(a)]);
        const Vector3d centroid =
            (sphere[static_cast<std::size_t>(a)] + sphere[static_cast<std::size_t>(b)] + sphere[static_cast<std::size_t>(c)]) /
            3.0;
        if (n.dot(centroid) >= 0) {
            t.triangles.push_back({a, b, c});
        } else {
            t.triangles.push_back({a, c, b});
        }
    };
    for (int j = 0; j < sizes[0]; ++j) {
        add_triangle(0, 1 + j, 1 + (j + 1) % sizes[0]);
    }
    // stitch the x <= 0 half of each band, then mirror it
    auto mirrored = [&](int a, int b, int c) {
        add_triangle(t.mirror[static_cast<std::size_t>(a)], t.mirror[static_cast<std::size_t>(b)],
                     t.mirror[static_cast<std::size_t>(c)]);
    };
    for (std::size_t r = 1; r < sizes.size(); ++r) {
        const int m1 = sizes[r - 1], m2 = sizes[r];
        const int h1 = m1 / 2, h2 = m2 / 2;
        const int s1 = ring_start[r], s2 = ring_start[r + 1];
        int i = 0, j = 0;
        while (i < h1 || j < h2) {
            const bool advance_inner =
                j >= h2 || (i < h1 && static_cast<double>(i + 1) / m1 < static_cast<double>(j + 1) / m2);
            if (advance_inner) {
                add_triangle(s1 + i, s1 + i + 1, s2 + j);
                mirrored(s1 + i, s1 + i + 1, s2 + j);
                ++i;
            } else {
                add_triangle(s1 + i, s2 + j + 1, s2 + j);
                mirrored(s1 + i, s2 + j + 1, s2 + j);
                ++j;
            }
        }
        if (m2 % 2 == 1) {
            add_triangle(s1 + h1, s2 + h2 + 1, s2 + h2); // self-mirrored closing triangle
        }
    }

    t.positions = sphere;
    for (Vector3d& p : t.positions) {
        p.z() -= relief(p.x(), p.y());
    }
    return t;
}

// Canonical 66-point layout in face-frame millimetres (x, y).
std::vector<Eigen::Vector2d> canonical_landmarks()
{
    std::vector<Eigen::Vector2d> pts;
    for (int k = 0; k <= 16; ++k) { // jaw line
        const double u = std::numbers::pi * k / 16.0;
        pts.emplace_back(-70.0 * std::cos(u), -15.0 + 95.0 * std::sin(u));
    }
    for (int side = -1; side <= 1; side += 2) { // brows
        for (int k = 0; k < 5; ++k) {
            const double s = k / 4.0;
            const double x = side < 0 ? -55.0 + 40.0 * s : 15.0 + 40.0 * s;
            pts.emplace_back(x, -38.0 - 6.0 * std::sin(std::numbers::pi * s));
        }
    }
    for (int k = 0; k < 4; ++k) { // nose bridge
        pts.emplace_back(0.0, -25.0 + 10.0 * k);
    }
    for (int k = -2; k <= 2; ++k) { // nose base
        pts.emplace_back(7.0 * k, 15.0 + (k == 0 ? 2.0 : 0.0));
    }
    for (int side = -1; side <= 1; side += 2) { // eyes
        for (int k = 0; k < 6; ++k) {
            const double a = std::numbers::pi * k / 3.0;
            pts.emplace_back(32.0 * side - 11.0 * std::cos(a), -22.0 - 4.0 * std::sin(a));
        }
    }
    for (int k = 0; k < 12; ++k) { // outer lips
        const double a = 2.0 * std::numbers::pi * k / 12.0;
        pts.emplace_back(-25.0 * std::cos(a), 42.0 - 10.0 * std::sin(a));
    }
    for (int k = -1; k <= 1; ++k) { // inner lips, upper then lower
        pts.emplace_back(10.0 * k, 39.0);
    }
    for (int k = 1; k >= -1; --k) {
        pts.emplace_back(10.0 * k, 45.0);
    }
    return pts;
}

std::vector<int> pick_landmarks(const std::vector<Vector3d>& positions)
{
    std::vector<int> ids;
    std::vector<bool> used(positions.size(), false);
    for (const Eigen::Vector2d& c : canonical_landmarks()) {
        int best = -1;
        double best_d = 0;
        for (std::size_t v = 0; v < positions.size(); ++v) {
            if (used[v]) {
                continue;
            }
            const double d = (positions[v].head<2>() - c).squaredNorm();
            if (best < 0 || d < best_d) {
                best = static_cast<int>(v);
                best_d = d;
            }
        }
        used[static_cast<std::size_t>(best)] = true;
        ids.push_back(best);
    }
    return ids;
}

VectorXd stack(const std::vector<Vector3d>& v)
{
    VectorXd out(3 * static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.segment<3>(3 * static_cast<Eigen::Index>(i)) = v[i];
    }
    return out;
}

MatrixXd smoothing_kernel(const std::vector<Vector3d>& positions)
{
    const auto n = static_cast<Eigen::Index>(positions.size());
    MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d2 = (positions[static_cast<std::size_t>(i)] - positions[static_cast<std::size_t>(j)]).squaredNorm();
            k(i, j) = std::exp(-0.5 * d2 / (smoothing_mm * smoothing_mm));
        }
    }
    return k;
}

void sign_normalize(MatrixXd& b)
{
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
        Eigen::Index arg = 0;
        b.col(c).cwiseAbs().maxCoeff(&arg);
        if (b(arg, c) < 0) {
            b.col(c) = -b.col(c);
        }
    }
}

// Columns of smoothed white noise, orthonormalized.
MatrixXd smooth_random_basis(const MatrixXd& kernel, int columns, Rng& rng)
{
    const Eigen::Index n = kernel.rows();
    MatrixXd noise(n, 3 * columns);
    for (int c = 0; c < columns; ++c) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int k = 0; k < 3; ++k) {
                noise(i, 3 * c + k) = rng.normal();
            }
        }
    }
    const MatrixXd smooth = kernel * noise;
    MatrixXd fields(3 * n, columns);
    for (int c = 0; c < columns; ++c) {
        for (Eigen::Index i = 0; i < n; ++i) {
            fields.block<3, 1>(3 * i, c) = smooth.block<1, 3>(i, 3 * c).transpose();
        }
    }
    Eigen::HouseholderQR<MatrixXd> qr(fields);
    MatrixXd q = qr.householderQ() * MatrixXd::Identity(3 * n, columns);
    sign_normalize(q);
    return q;
}

VectorXd mirror_field(const VectorXd& u, const std::vector<int>& mirror)
{
    VectorXd out(u.size());
    for (std::size_t v = 0; v < mirror.size(); ++v) {
        const auto i = static_cast<Eigen::Index>(v);
        const auto m = static_cast<Eigen::Index>(mirror[v]);
        out(3 * i) = -u(3 * m);
        out(3 * i + 1) = u(3 * m + 1);
        out(3 * i + 2) = u(3 * m + 2);
    }
    return out;
}

VectorXd field_from(const std::vector<Vector3d>& positions, const std::function<Vector3d(const Vector3d&)>& f)
{
    VectorXd out(3 * static_cast<Eigen::Index>(positions.size()));
    for (std::size_t v = 0; v < positions.size(); ++v) {
        out.segment<3>(3 * static_cast<Eigen::Index>(v)) = f(positions[v]);
    }
    return out;
}

Vector3d localized(const Vector3d& p, double cx, double cy, double sigma, const Vector3d& dir)
{
    return gauss2(p.x() - cx, p.y() - cy, sigma, sigma) * dir;
}

struct ExpressionSet
{
    MatrixXd basis;
    std::vector<int> partner;
};

ExpressionSet expression_fields(const std::vector<Vector3d>& pos, const std::vector<int>& mirror, int count, Rng& rng)
{
    std::vector<VectorXd> cols;
    std::vector<int> partner;
    auto add_symmetric = [&](const VectorXd& u) {
        partner.push_back(static_cast<int>(cols.size()));
        cols.push_back(0.5 * (u + mirror_field(u, mirror)));
    };
    auto add_pair = [&](const VectorXd& left) {
        const int i = static_cast<int>(cols.size());
        partner.push_back(i + 1);
        partner.push_back(i);
        cols.push_back(left);
        cols.push_back(mirror_field(left, mirror));
    };

    add_symmetric(field_from(pos, [](const Vector3d& p) -> Vector3d { // jaw open
        const double s = std::clamp((p.y() - 35.0) / 40.0, 0.0, 1.0);
        return Vector3d(0.0, 1.0, 0.4) * (s * s * (3 - 2 * s)) * std::exp(-0.5 * p.x() * p.x() / (45.0 * 45.0));
    }));
    add_symmetric(field_from(pos, [](const Vector3d& p) -> Vector3d { // pucker
        return localized(p, 0.0, 42.0, 16.0, Vector3d(-p.x() / 16.0, 0.0, -1.0));
    }));
    add_pair(field_from(pos, [](const Vector3d& p) -> Vector3d { return localized(p, -25.0, 42.0, 14.0, {-0.7, -1.0, 0.0}); }));
    add_pair(field_from(pos, [](const Vector3d& p) -> Vector3d { return localized(p, -33.0, -38.0, 14.0, {0.0, -1.0, 0.0}); }));
    add_pair(field_from(pos, [](const Vector3d& p) -> Vector3d { return localized(p, -45.0, 20.0, 16.0, {-0.4, 0.0, -1.0}); }));
    add_pair(field_from(pos, [](const Vector3d& p) -> Vector3d { return localized(p, -32.0, -24.0, 9.0, {0.0, 1.0, -0.2}); }));
    add_pair(field_from(pos, [](const Vector3d& p) -> Vector3d { return localized(p, -16.0, -34.0, 10.0, {0.6, 0.8, 0.0}); }));

    while (static_cast<int>(cols.size()) < count) {
        const double sigma = rng.uniform(10.0, 20.0);
        Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        dir.normalize();
        if (count - static_cast<int>(cols.size()) == 1) {
            const double cy = rng.uniform(-40.0, 70.0);
            add_symmetric(field_from(pos, [&](const Vector3d& p) -> Vector3d { return localized(p, 0.0, cy, sigma, dir); }));
        } else {
            const double cx = rng.uniform(-50.0, -10.0);
            const double cy = rng.uniform(-40.0, 70.0);
            add_pair(field_from(pos, [&](const Vector3d& p) -> Vector3d { return localized(p, cx, cy, sigma, dir); }));
        }
    }
    cols.resize(static_cast<std::size_t>(count));
    partner.resize(static_cast<std::size_t>(count));
    for (int c = 0; c < count; ++c) {
        if (partner[static_cast<std::size_t>(c)] >= count) {
            partner[static_cast<std::size_t>(c)] = c;
        }
    }

    MatrixXd b(3 * static_cast<Eigen::Index>(pos.size()), count);
    for (int c = 0; c < count; ++c) {
        b.col(c) = cols[static_cast<std::size_t>(c)].normalized();
    }
    // Symmetric (Loewdin) orthonormalization keeps each column closest to its
    // semantic field and commutes with the mirror pairing.
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(b.transpose() * b);
    const MatrixXd inv_sqrt =
        eig.eigenvectors() * eig.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
    return {b * inv_sqrt, partner};
}

VectorXd mean_reflectance(const std::vector<Vector3d>& pos)
{
    const Vector3d skin(0.78, 0.57, 0.47);
    const Vector3d lips(0.62, 0.33, 0.33);
    const Vector3d brow(0.35, 0.25, 0.20);
    const Vector3d eye(0.30, 0.22, 0.20);
    return field_from(pos, [&](const Vector3d& p) -> Vector3d {
        const double ax = std::abs(p.x());
        const double wl = gauss2(p.x(), p.y() - 42.0, 20.0, 6.0);
        const double wb = gauss2(ax - 35.0, p.y() + 40.0, 14.0, 4.0);
        const double we = gauss2(ax - 32.0, p.y() + 22.0, 6.0, 3.5);
        Vector3d c = skin;
        c = (1 - wl) * c + wl * lips;
        c = (1 - wb) * c + wb * brow;
        c = (1 - we) * c + we * eye;
        return c;
    });
}

VectorXd decaying_sigmas(int count, double first)
{
    VectorXd s(count);
    for (int k = 0; k < count; ++k) {
        s(k) = first * std::pow(sigma_decay, k);
    }
    return s;
}

void check_length(const VectorXd& v, Eigen::Index expected, const char* what)
{
    if (v.size() != expected) {
        throw std::invalid_argument(std::string(what) + " has " + std::to_string(v.size()) + " entries, basis expects " +
                                    std::to_string(expected));
    }
}

} // namespace

BasisDims BasisDims::full()
{
    return {2000, 128, 128, 64};
}

const std::vector<std::string>& expression_names()
{
    static const std::vector<std::string> names{
        "jaw_open",        "pucker",       "smile_left",      "smile_right", "brow_raise_left", "brow_raise_right",
        "cheek_puff_left", "cheek_puff_right", "eye_close_left", "eye_close_right", "frown_left",      "frown_right"};
    return names;
}

void FaceBasis::validate() const
{
    const Eigen::Index n3 = 3 * static_cast<Eigen::Index>(vertex_count);
    auto fail = [](const std::string& why) { throw std::invalid_argument("invalid face basis: " + why); };
    if (vertex_count < 3) {
        fail("too few vertices");
    }
    if (a_geo.size() != n3 || a_ref.size() != n3 || b_geo.rows() != n3 || b_ref.rows() != n3 || b_exp.rows() != n3) {
        fail("array lengths do not match 3N");
    }
    if (sigma_alpha.size() != b_geo.cols() || sigma_beta.size() != b_ref.cols() || sigma_delta.size() != b_exp.cols()) {
        fail("sigma lengths do not match basis widths");
    }
    if ((sigma_alpha.array() <= 0).any() || (sigma_beta.array() <= 0).any() || (sigma_delta.array() <= 0).any()) {
        fail("sigmas must be positive");
    }
    for (const Triangle& t : triangles) {
        for (const int i : t) {
            if (i < 0 || i >= vertex_count) {
                fail("triangle index out of range");
            }
        }
    }
    if (landmark_vertex_ids.size() != static_cast<std::size_t>(landmark_count)) {
        fail("expected 66 landmark ids");
    }
    for (const int i : landmark_vertex_ids) {
        if (i < 0 || i >= vertex_count) {
            fail("landmark id out of range");
        }
    }
    if (!mirror_vertex.empty() && mirror_vertex.size() != static_cast<std::size_t>(vertex_count)) {
        fail("mirror map length differs from vertex count");
    }
    if (!expression_partner.empty() && expression_partner.size() != static_cast<std::size_t>(b_exp.cols())) {
        fail("expression partner length differs from |delta|");
    }
}

ParamVector ParamVector::neutral(const FaceBasis& basis)
{
    ParamVector p;
    p.alpha = VectorXd::Zero(basis.dim_alpha());
    p.beta = VectorXd::Zero(basis.dim_beta());
    p.delta = VectorXd::Zero(basis.dim_delta());
    p.gamma = default_gamma();
    return p;
}

void ParamVector::check(const FaceBasis& basis) const
{
    check_length(alpha, basis.dim_alpha(), "alpha");
    check_length(beta, basis.dim_beta(), "beta");
    check_length(delta, basis.dim_delta(), "delta");
    check_length(gamma, gamma_size, "gamma");
}

VectorXd ParamVector::flatten() const
{
    VectorXd v(size());
    v << R, T, alpha, beta, delta, gamma;
    return v;
}

ParamVector ParamVector::unflatten(const VectorXd& v, const BasisDims& dims)
{
    if (v.size() != param_count(dims)) {
        throw std::invalid_argument("parameter vector has " + std::to_string(v.size()) + " entries, expected " +
                                    std::to_string(param_count(dims)));
    }
    ParamVector p;
    Eigen::Index o = 0;
    p.R = v.segment<3>(o);
    o += 3;
    p.T = v.segment<3>(o);
    o += 3;
    p.alpha = v.segment(o, dims.alpha);
    o += dims.alpha;
    p.beta = v.segment(o, dims.beta);
    o += dims.beta;
    p.delta = v.segment(o, dims.delta);
    o += dims.delta;
    p.gamma = v.segment(o, gamma_size);
    return p;
}

int param_count(const BasisDims& dims)
{
    return 6 + dims.alpha + dims.beta + dims.delta + gamma_size;
}

VectorXd default_gamma()
{
    const auto y = sh_basis(Vector3d(0, 0, 1));
    VectorXd g = VectorXd::Zero(gamma_size);
    for (int c = 0; c < 3; ++c) {
        g(c * sh_band_count + 0) = 0.8 / y[0];
        g(c * sh_band_count + 1) = -0.12 / 0.488603; // brighter from above (-y)
        g(c * sh_band_count + 2) = -0.35 / 0.488603; // brighter toward the viewer (-z)
        g(c * sh_band_count + 6) = -0.04 / 0.315392;
    }
    return g;
}

FaceBasis synth_basis(const BasisDims& dims, std::uint64_t seed)
{
    if (dims.vertex_count < 100) {
        throw std::invalid_argument("synth_basis needs at least 100 vertices, got " + std::to_string(dims.vertex_count));
    }
    if (dims.alpha < 1 || dims.beta < 1 || dims.delta < 1) {
        throw std::invalid_argument("synth_basis dimensions must be at least 1");
    }
    if (dims.alpha > 3 * dims.vertex_count || dims.beta > 3 * dims.vertex_count || dims.delta > 3 * dims.vertex_count) {
        throw std::invalid_argument("synth_basis dimensions exceed 3N");
    }
    const Template t = make_template(dims.vertex_count);
    const double sqrt_n = std::sqrt(static_cast<double>(dims.vertex_count));

    FaceBasis b;
    b.vertex_count = dims.vertex_count;
    b.a_geo = stack(t.positions);
    b.triangles = t.triangles;
    b.mirror_vertex = t.mirror;
    b.landmark_vertex_ids = pick_landmarks(t.positions);
    b.a_ref = mean_reflectance(t.positions);

    const MatrixXd kernel = smoothing_kernel(t.positions);
    Rng geo_rng(derive_seed(seed, 1));
    Rng ref_rng(derive_seed(seed, 2));
    Rng exp_rng(derive_seed(seed, 3));
    b.b_geo = smooth_random_basis(kernel, dims.alpha, geo_rng);
    b.b_ref = smooth_random_basis(kernel, dims.beta, ref_rng);
    ExpressionSet e = expression_fields(t.positions, t.mirror, dims.delta, exp_rng);
    b.b_exp = std::move(e.basis);
    b.expression_partner = std::move(e.partner);

    b.sigma_alpha = decaying_sigmas(dims.alpha, identity_rms_mm * sqrt_n);
    b.sigma_beta = decaying_sigmas(dims.beta, reflectance_rms * std::sqrt(3.0) * sqrt_n);
    b.sigma_delta = decaying_sigmas(dims.delta, expression_scale * sqrt_n);
    for (int k = 0; k < dims.delta; ++k) {
        const int partner = b.expression_partner[static_cast<std::size_t>(k)];
        b.sigma_delta(k) = b.sigma_delta(std::min(k, partner)); // left/right pairs share one scale
    }
    b.validate();
    return b;
}

VectorXd assemble_geometry(const FaceBasis& basis, const VectorXd& alpha, const VectorXd& delta)
{
    check_length(alpha, basis.dim_alpha(), "alpha");
    check_length(delta, basis.dim_delta(), "delta");
    return basis.a_geo + basis.b_geo * alpha + basis.b_exp * delta;
}

VectorXd assemble_reflectance(const FaceBasis& basis, const VectorXd& beta)
{
    check_length(beta, basis.dim_beta(), "beta");
    return basis.a_ref + basis.b_ref * beta;
}

VectorXd vertex_normals(const VectorXd& positions, const std::vector<Triangle>& triangles)
{
    VectorXd acc = VectorXd::Zero(positions.size());
    for (const Triangle& t : triangles) {
        const Vector3d p0 = positions.segment<3>(3 * t[0]);
        const Vector3d face = (positions.segment<3>(3 * t[1]) - p0).cross(positions.segment<3>(3 * t[2]) - p0);
        for (const int i : t) {
            acc.segment<3>(3 * i) += face;
        }
    }
    for (Eigen::Index i = 0; i < acc.size() / 3; ++i) {
        const double len = acc.segment<3>(3 * i).norm();
        if (len > 0) {
            acc.segment<3>(3 * i) /= len;
        } else {
            acc.segment<3>(3 * i) = Vector3d(0, 0, 1);
        }
    }
    return acc;
}

std::array<double, sh_band_count> sh_basis(const Vector3d& n)
{
    const double x = n.x(), y = n.y(), z = n.z();
    return {0.282095,
            0.488603 * y,
            0.488603 * z,
            0.488603 * x,
            1.092548 * x * y,
            1.092548 * y * z,
            0.315392 * (3 * z * z - 1),
            1.092548 * x * z,
            0.546274 * (x * x - y * y)};
}

VectorXd shade_vertices(const VectorXd& reflectance, const VectorXd& normals, const VectorXd& gamma)
{
    if (reflectance.size() != normals.size() || reflectance.size() % 3 != 0) {
        throw std::invalid_argument("reflectance and normals must both hold 3N values");
    }
    check_length(gamma, gamma_size, "gamma");
    VectorXd colors(reflectance.size());
    for (Eigen::Index i = 0; i < reflectance.size() / 3; ++i) {
        const Vector3d n = normals.segment<3>(3 * i);
        if (std::abs(n.norm() - 1.0) > 1e-3) {
            throw std::invalid_argument("normal " + std::to_string(i) + " is not unit length");
        }
        const auto y = sh_basis(n);
        for (int c = 0; c < 3; ++c) {
            double irradiance = 0;
            for (int b = 0; b < sh_band_count; ++b) {
                irradiance += gamma(c * sh_band_count + b) * y[static_cast<std::size_t>(b)];
            }
            colors(3 * i + c) = reflectance(3 * i + c) * irradiance;
        }
    }
    return colors;
}

ShadedMesh build_shaded_mesh(const FaceBasis& basis, const ParamVector& params)
{
    params.check(basis);
    ShadedMesh m;
    m.positions = assemble_geometry(basis, params.alpha, params.delta);
    m.reflectance = assemble_reflectance(basis, params.beta);
    m.normals = vertex_normals(m.positions, basis.triangles);
    m.triangles = basis.triangles;
    m.colors = shade_vertices(m.reflectance, m.normals, params.gamma);
    return m;
}

CompressedBasis compress_expression_basis(const MatrixXd& raw, int target_dim)
{
    if (target_dim < 1 || target_dim > raw.cols()) {
        throw std::invalid_argument("target dimension " + std::to_string(target_dim) + " is outside [1, " +
                                    std::to_string(raw.cols()) + "]");
    }
    if (target_dim > raw.rows()) {
        throw std::invalid_argument("target dimension exceeds the vector length");
    }
    Eigen::JacobiSVD<MatrixXd> svd(raw, Eigen::ComputeThinU);
    CompressedBasis out;
    out.basis = svd.matrixU().leftCols(target_dim);
    sign_normalize(out.basis);
    out.explained_variance = svd.singularValues().head(target_dim).array().square() / static_cast<double>(raw.cols());
    return out;
}

void save_basis(const FaceBasis& basis, const std::filesystem::path& dir)
{
    basis.validate();
    std::filesystem::create_directories(dir);
    auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::json j;
    j["vertex_count"] = basis.vertex_count;
    j["dims"] = {{"alpha", basis.dim_alpha()}, {"beta", basis.dim_beta()}, {"delta", basis.dim_delta()}};
    j["sigma_alpha"] = vec(basis.sigma_alpha);
    j["sigma_beta"] = vec(basis.sigma_beta);
    j["sigma_delta"] = vec(basis.sigma_delta);
    j["triangles"] = basis.triangles;
    j["landmark_vertex_ids"] = basis.landmark_vertex_ids;
    j["mirror_vertex"] = basis.mirror_vertex;
    j["expression_partner"] = basis.expression_partner;
    j["blob"] = "basis.bin";
    j["blob_layout"] = {"a_geo", "b_geo", "a_ref", "b_ref", "b_exp"};
    {
        std::ofstream os(dir / "basis.json");
        os << j.dump(1) << '\n';
        if (!os) {
            throw std::runtime_error("cannot write " + (dir / "basis.json").string());
        }
    }
    std::ofstream bin(dir / "basis.bin", std::ios::binary);
    auto put = [&](const double* p, Eigen::Index n) {
        bin.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * static_cast<Eigen::Index>(sizeof(double))));
    };
    put(basis.a_geo.data(), basis.a_geo.size());
    put(basis.b_geo.data(), basis.b_geo.size());
    put(basis.a_ref.data(), basis.a_ref.size());
    put(basis.b_ref.data(), basis.b_ref.size());
    put(basis.b_exp.data(), basis.b_exp.size());
    if (!bin) {
        throw std::runtime_error("cannot write " + (dir / "basis.bin").string());
    }
}

FaceBasis load_basis(const std::filesystem::path& dir)
{
    std::ifstream is(dir / "basis.json");
    if (!is) {
        throw std::runtime_error("cannot open " + (dir / "basis.json").string());
    }
    const nlohmann::json j = nlohmann::json::parse(is);
    FaceBasis b;
    b.vertex_count = j.at("vertex_count").get<int>();
    const int na = j.at("dims").at("alpha").get<int>();
    const int nb = j.at("dims").at("beta").get<int>();
    const int nd = j.at("dims").at("delta").get<int>();
    auto vec = [&](const char* key) {
        const auto v = j.at(key).get<std::vector<double>>();
        return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    b.sigma_alpha = vec("sigma_alpha");
    b.sigma_beta = vec("sigma_beta");
    b.sigma_delta = vec("sigma_delta");
    b.triangles = j.at("triangles").get<std::vector<Triangle>>();
    b.landmark_vertex_ids = j.at("landmark_vertex_ids").get<std::vector<int>>();
    b.mirror_vertex = j.value("mirror_vertex", std::vector<int>{});
    b.expression_partner = j.value("expression_partner", std::vector<int>{});

    const Eigen::Index n3 = 3 * static_cast<Eigen::Index>(b.vertex_count);
    std::ifstream bin(dir / j.value("blob", std::string("basis.bin")), std::ios::binary);
    if (!bin) {
        throw std::runtime_error("cannot open basis blob in " + dir.string());
    }
    auto get = [&](double* p, Eigen::Index n) {
        if (!bin.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * static_cast<Eigen::Index>(sizeof(double))))) {
            throw std::runtime_error("truncated basis blob in " + dir.string());
        }
    };
    b.a_geo.resize(n3);
    b.b_geo.resize(n3, na);
    b.a_ref.resize(n3);
    b.b_ref.resize(n3, nb);
    b.b_exp.resize(n3, nd);
    get(b.a_geo.data(), b.a_geo.size());
    get(b.b_geo.data(), b.b_geo.size());
    get(b.a_ref.data(), b.a_ref.size());
    get(b.b_ref.data(), b.b_ref.size());
    get(b.b_exp.data(), b.b_exp.size());
    b.validate();
    return b;
}

void write_obj(const VectorXd& positions, const std::vector<Triangle>& triangles, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os.precision(9);
    for (Eigen::Index i = 0; i < positions.size() / 3; ++i) {
        os << "v " << positions(3 * i) << ' ' << positions(3 * i + 1) << ' ' << positions(3 * i + 2) << '\n';
    }
    for (const Triangle& t : triangles) {
        os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
}

} // namespace egoface::model
