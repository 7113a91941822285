#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace egoface::model {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

inline constexpr int sh_band_count = 9; // B^2 with B = 3
inline constexpr int gamma_size = 3 * sh_band_count;
inline constexpr int landmark_count = 66;

using Triangle = std::array<int, 3>;

struct BasisDims
{
    int vertex_count = 500;
    int alpha = 16;
    int beta = 16;
    int delta = 12;

    /// Dimensions of the full-size model: 128 identity, 128 reflectance, 64 expression.
    static BasisDims full();

    friend bool operator==(const BasisDims&, const BasisDims&) = default;
};

/// Linear face model. Positions are in millimetres in the face frame: x toward
/// image right, y down, z away from a frontal viewer; the face looks toward -z.
/// Basis columns have unit Euclidean norm and the coefficient scale lives in the
/// sigma arrays.
struct FaceBasis
{
    int vertex_count = 0;
    VectorXd a_geo; // 3N
    MatrixXd b_geo; // 3N x |alpha|
    VectorXd a_ref; // 3N, RGB in [0,1]
    MatrixXd b_ref; // 3N x |beta|
    MatrixXd b_exp; // 3N x |delta|
    VectorXd sigma_alpha;
    VectorXd sigma_beta;
    VectorXd sigma_delta;
    std::vector<Triangle> triangles;
    std::vector<int> landmark_vertex_ids; // 66 entries
    std::vector<int> mirror_vertex;       // vertex reflected through x = 0
    std::vector<int> expression_partner;  // left/right counterpart of each expression column (self if symmetric)

    int dim_alpha() const { return static_cast<int>(b_geo.cols()); }
    int dim_beta() const { return static_cast<int>(b_ref.cols()); }
    int dim_delta() const { return static_cast<int>(b_exp.cols()); }
    BasisDims dims() const { return {vertex_count, dim_alpha(), dim_beta(), dim_delta()}; }

    /// Throws std::invalid_argument if any structural invariant fails.
    void validate() const;
};

/// Names of the leading semantic expression columns.
const std::vector<std::string>& expression_names();

/// Per-frame parameters: rotation (Euler, radians), translation (mm), identity,
/// reflectance, expression and SH illumination (gamma[c * 9 + b]).
struct ParamVector
{
    Vector3d R = Vector3d::Zero();
    Vector3d T = Vector3d::Zero();
    VectorXd alpha;
    VectorXd beta;
    VectorXd delta;
    VectorXd gamma = VectorXd::Zero(gamma_size);

    /// Zero coefficients for a basis, default illumination, identity pose.
    static ParamVector neutral(const FaceBasis& basis);

    int size() const { return static_cast<int>(6 + alpha.size() + beta.size() + delta.size() + gamma.size()); }

    /// Throws std::invalid_argument if coefficient lengths do not match the basis.
    void check(const FaceBasis& basis) const;

    /// Concatenation (R, T, alpha, beta, delta, gamma).
    VectorXd flatten() const;
    static ParamVector unflatten(const VectorXd& v, const BasisDims& dims);

    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

/// Total parameter count 3 + 3 + |alpha| + |beta| + |delta| + 27.
int param_count(const BasisDims& dims);

/// Soft frontal light with a slight top bias, identical in all channels.
VectorXd default_gamma();

struct Mesh
{
    VectorXd positions;   // 3N
    VectorXd reflectance; // 3N
    VectorXd normals;     // 3N, unit
    std::vector<Triangle> triangles;

    int vertex_count() const { return static_cast<int>(positions.size() / 3); }
    Vector3d position(int i) const { return positions.segment<3>(3 * i); }
    Vector3d normal(int i) const { return normals.segment<3>(3 * i); }
};

struct ShadedMesh : Mesh
{
    VectorXd colors; // 3N, unclamped
    Vector3d color(int i) const { return colors.segment<3>(3 * i); }
};

/// Procedural face model: half-ellipsoid template with a nose and eye sockets,
/// smooth random identity/reflectance fields and localized semantic expressions.
FaceBasis synth_basis(const BasisDims& dims, std::uint64_t seed);

VectorXd assemble_geometry(const FaceBasis& basis, const VectorXd& alpha, const VectorXd& delta);
VectorXd assemble_reflectance(const FaceBasis& basis, const VectorXd& beta);

/// Area-weighted vertex normals; vertices without incident area get +z.
VectorXd vertex_normals(const VectorXd& positions, const std::vector<Triangle>& triangles);

/// Real SH basis values Y_1..Y_9 at a unit direction.
std::array<double, sh_band_count> sh_basis(const Vector3d& n);

/// Per-vertex Lambertian SH shading c_i = r_i * sum_b gamma_b Y_b(n_i), per channel.
/// Throws std::invalid_argument for a normal whose length differs from 1 by more than 1e-3.
VectorXd shade_vertices(const VectorXd& reflectance, const VectorXd& normals, const VectorXd& gamma);

/// Geometry, reflectance, normals and shaded colors in the face frame (pose not applied).
ShadedMesh build_shaded_mesh(const FaceBasis& basis, const ParamVector& params);

struct CompressedBasis
{
    MatrixXd basis;              // 3N x target_dim, orthonormal
    VectorXd explained_variance; // eigenvalues of (1/K) A A^T, decreasing
};

/// Uncentered PCA of K raw blendshape columns: the leading principal directions.
CompressedBasis compress_expression_basis(const MatrixXd& raw, int target_dim);

/// basis.json (dims, sigmas, topology, landmark ids) plus basis.bin
/// (little-endian float64: a_geo, b_geo, a_ref, b_ref, b_exp; matrices column-major).
void save_basis(const FaceBasis& basis, const std::filesystem::path& dir);
FaceBasis load_basis(const std::filesystem::path& dir);

/// Wavefront OBJ with positions and faces.
void write_obj(const VectorXd& positions, const std::vector<Triangle>& triangles, const std::filesystem::path& path);

} // namespace egoface::model
