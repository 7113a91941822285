#pragma once

#include "egoface/camera/camera.hpp"
#include "egoface/model/face_model.hpp"
#include "egoface/render/image.hpp"
#include "egoface/render/rasterizer.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace egoface::recon {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// Which parameter blocks the solver may change.
struct FreeSet
{
    bool R = true;
    bool T = true;
    bool alpha = true;
    bool beta = true;
    bool delta = true;
    bool gamma = true;

    static FreeSet all() { return {}; }
    /// Pose, expression and illumination: the per-frame tracking set.
    static FreeSet tracking() { return {true, true, false, false, true, true}; }
    static FreeSet none() { return {false, false, false, false, false, false}; }

    /// Parses a comma list such as "R,T,delta,gamma".
    static FreeSet parse(const std::string& list);
    std::string to_string() const;

    friend bool operator==(const FreeSet&, const FreeSet&) = default;
};

/// Indices into ParamVector::flatten() selected by a free set, in flatten order.
std::vector<int> free_indices(const FreeSet& free, const model::BasisDims& dims);

struct EnergyConfig
{
    double w_photo = 1.0;
    double w_lmk = 10.0;
    double w_prior = 0.05;
    int pyramid_levels = 3;
    int max_iterations = 30; // per pyramid level
    double lm_damping = 1e-3;
    double damping_increase = 10.0;
    double damping_decrease = 0.5;
    double damping_cap = 1e6;
    double tolerance = 1e-7;       // relative energy decrease that counts as converged
    double min_facing = 0.3;       // photo term skips vertices whose normal is more oblique than this cosine
    double depth_tolerance_mm = 1.0;

    /// Throws ConfigError on negative weights, all-zero weights or bad schedule values.
    void validate() const;

    friend bool operator==(const EnergyConfig&, const EnergyConfig&) = default;
};

nlohmann::json energy_config_to_json(const EnergyConfig& cfg);
/// Fills fields present in j over the defaults; unknown keys raise ConfigError.
EnergyConfig energy_config_from_json(const nlohmann::json& j);

/// Stacked residuals: photo rows (3 per photo vertex), landmark rows (2 per used
/// landmark), prior rows (|alpha| + |beta| + |delta|).
struct Residuals
{
    VectorXd values;
    int photo_rows = 0;
    int landmark_rows = 0;
    int prior_rows = 0;

    double photo_energy() const { return values.head(photo_rows).squaredNorm(); }
    double landmark_energy() const { return values.segment(photo_rows, landmark_rows).squaredNorm(); }
    double prior_energy() const { return values.tail(prior_rows).squaredNorm(); }
    double total() const { return values.squaredNorm(); }
};

/// Vertices used by the photo term: projected in front of the near plane, inside the
/// image, passing the depth test against a render of the same parameters, and facing
/// the camera by at least cfg.min_facing.
std::vector<int> photo_vertices(const model::FaceBasis& basis, const model::ParamVector& params,
                                const camera::PerspectiveCamera& cam, const EnergyConfig& cfg);

/// Bilinear sample with pixel centers at integer + 0.5 and clamp-to-edge.
Vector3d sample_bilinear(const render::Image& image, const Vector2d& pixel);

/// Residuals over an explicit photo vertex set. Landmark rows cover the observed
/// landmarks flagged visible.
Residuals energy_residuals(const model::FaceBasis& basis, const model::ParamVector& params,
                           const camera::PerspectiveCamera& cam, const render::Image& image,
                           const render::LandmarkSet& landmarks, const EnergyConfig& cfg,
                           const std::vector<int>& photo_set);

/// Residuals with the photo vertex set derived from params.
Residuals energy_residuals(const model::FaceBasis& basis, const model::ParamVector& params,
                           const camera::PerspectiveCamera& cam, const render::Image& image,
                           const render::LandmarkSet& landmarks, const EnergyConfig& cfg);

/// Analytic Jacobian of energy_residuals (same rows) with respect to the free
/// parameters (columns in free_indices order).
MatrixXd energy_jacobian(const model::FaceBasis& basis, const model::ParamVector& params,
                         const camera::PerspectiveCamera& cam, const render::Image& image,
                         const render::LandmarkSet& landmarks, const EnergyConfig& cfg,
                         const std::vector<int>& photo_set, const FreeSet& free);

/// One solver stage: a pyramid level with a fixed photo vertex set.
struct StageRecord
{
    int level = 0;
    std::vector<double> photo;    // per accepted step, starting with the initial energy
    std::vector<double> landmark;
    std::vector<double> prior;
    std::vector<double> total;
    int iterations = 0; // LM iterations including rejected steps
    bool converged = false;
};

struct FitReport
{
    model::ParamVector params;
    std::vector<StageRecord> stages;
    int iterations = 0; // LM iterations of the finest stage
    int total_iterations = 0;
    bool converged = false;
    double final_energy = 0.0;
    double photo_rms = 0.0; // RMS photo residual at full resolution, intensity units (weight removed)
};

/// Levenberg-Marquardt over the free set, coarse to fine.
FitReport fit_frame(const model::FaceBasis& basis, const render::Image& image, const render::LandmarkSet& landmarks,
                    const camera::PerspectiveCamera& cam, const model::ParamVector& init, const FreeSet& free,
                    const EnergyConfig& cfg);

struct SequenceFit
{
    std::vector<model::ParamVector> params;
    std::vector<FitReport> reports;
};

/// Frame 0 fits every block from `init`; later frames fit pose, expression and
/// illumination warm-started from the previous frame with identity and reflectance frozen.
SequenceFit fit_sequence(const model::FaceBasis& basis, const std::vector<render::Image>& frames,
                         const std::vector<render::LandmarkSet>& landmark_tracks, const camera::PerspectiveCamera& cam,
                         const model::ParamVector& init, const EnergyConfig& cfg);

/// Neutral start for a frontal fit: zero coefficients, default light, frontal translation.
model::ParamVector frontal_init(const model::FaceBasis& basis);

/// JSON lines: {"frame", "converged", "iterations", "energy", "params": {...}}.
void write_fit_jsonl(const SequenceFit& fit, const std::filesystem::path& path);

/// Reads per-frame params from a JSON-lines file carrying a "params" object per line.
std::vector<model::ParamVector> read_params_jsonl(const std::filesystem::path& path);

/// Mean Euclidean distance between corresponding vertices of two position vectors.
double mean_vertex_distance(const VectorXd& a, const VectorXd& b);

} // namespace egoface::recon
