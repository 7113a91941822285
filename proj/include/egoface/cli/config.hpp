#pragma once

#include "egoface/camera/camera.hpp"
#include "egoface/ego2exp/regressor.hpp"
#include "egoface/exp2vreal/translator.hpp"
#include "egoface/model/face_model.hpp"
#include "egoface/recon/recon.hpp"
#include "egoface/sim/capture.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace egoface::cli {

struct CameraConfig
{
    int image_size = 128;      // rendered dataset resolution, square
    double front_focal = 550.0; // pixels at the 256 px reference size
    double ego_focal = 140.0;   // pixels per radian at the 256 px reference size

    camera::PerspectiveCamera front() const;
    camera::FisheyeCamera ego() const;
};

struct SimulatorConfig
{
    std::vector<int> ego2exp_scenarios{0, 1, 2, 3}; // one sequence per entry
    int ego2exp_frames = 1000;                      // per sequence
    std::vector<int> sync_offsets{7, -12, 23, 0};   // per sequence, front frames relative to ego
    int exp2vreal_sequences = 1;
    int exp2vreal_frames = 3000;
    int exp2vreal_scenario = 0;
    double test_ratio = 0.1;
    sim::SyncSettings sync;
};

struct ReconConfig
{
    recon::EnergyConfig energy;
    int fit_frames = 8; // frontal frames fitted by the fit command
};

struct EvalConfig
{
    int bench_frames = 100;
    int bench_repetitions = 2;
    std::string bench_components = "resnet-analog,albedo,full,optimized";
    int reenact_frames = 24;
    std::string reenact_variant = "optimized";
};

struct RunConfig
{
    std::uint64_t seed = 1;
    model::BasisDims basis{500, 16, 16, 12};
    CameraConfig cameras;
    SimulatorConfig simulator;
    ReconConfig recon;
    ego2exp::RegressorConfig ego2exp;
    exp2vreal::GanConfig exp2vreal;
    exp2vreal::PoseSelection pose;
    EvalConfig eval;
    std::filesystem::path out = "egoface_out";

    /// Throws ConfigError naming the offending JSON path.
    void validate() const;
};

/// Defaults for every absent field; unknown keys and invalid values raise ConfigError
/// naming the JSON path, e.g. "exp2vreal.lambda".
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
/// Throws ConfigError when the file is missing or is not valid JSON.
RunConfig parse_config(const std::filesystem::path& path);

/// Poses offered by the loop mode by default: frontal, then yaw and pitch offsets.
std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> default_pose_list();

/// Fixed per-module seeds derived from the global seed.
namespace seeds {
inline constexpr std::uint64_t basis = 1;
inline constexpr std::uint64_t actor = 2;
inline constexpr std::uint64_t ego2exp_scripts = 100;
inline constexpr std::uint64_t exp2vreal_scripts = 200;
inline constexpr std::uint64_t regressor = 3;
inline constexpr std::uint64_t gan_full = 4;
inline constexpr std::uint64_t gan_optimized = 5;
inline constexpr std::uint64_t bench = 6;
} // namespace seeds

} // namespace egoface::cli
