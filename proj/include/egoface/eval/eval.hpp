#pragma once

#include "egoface/camera/camera.hpp"
#include "egoface/ego2exp/regressor.hpp"
#include "egoface/exp2vreal/translator.hpp"
#include "egoface/model/face_model.hpp"
#include "egoface/render/image.hpp"
#include "egoface/sim/capture.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace egoface::eval {

using Eigen::VectorXd;

/// Per-vertex Euclidean distances of one frame, in mm.
struct VertexErrorStats
{
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

/// Positions are stacked 3N vectors. Throws std::invalid_argument on a length
/// mismatch or a length that is not a positive multiple of 3.
VertexErrorStats pervertex_distance(const VectorXd& a, const VectorXd& b);

struct GeoErrorStats
{
    std::vector<int> entries;               // manifest indices of the evaluated frames
    std::vector<VertexErrorStats> frames;
    VertexErrorStats average;               // sequence averages of min, max and mean
};

/// Geometry from (alpha, predicted delta) against (alpha, true delta), per frame.
GeoErrorStats geometry_error(const model::FaceBasis& basis, const std::vector<VectorXd>& alphas,
                             const std::vector<VectorXd>& predicted, const std::vector<VectorXd>& truth);

/// Maps an egocentric image to expression coefficients.
using ExpressionPredictor = std::function<VectorXd(const render::Image& ego)>;

/// Runs the predictor on every test frame of an Ego2Exp manifest and compares the
/// assembled geometry with the ground-truth expression, both with the true identity.
GeoErrorStats eval_ego2exp_geometry(const model::FaceBasis& basis, const sim::DatasetManifest& manifest,
                                    const ExpressionPredictor& predictor);
GeoErrorStats eval_ego2exp_geometry(const model::FaceBasis& basis, const ego2exp::Regressor& regressor,
                                    const sim::DatasetManifest& manifest);

/// Predictor returning the mean expression of the manifest's training frames.
ExpressionPredictor mean_predictor(const sim::DatasetManifest& manifest);

nlohmann::json geo_stats_to_json(const GeoErrorStats& stats);
void write_geo_stats_csv(const GeoErrorStats& stats, const std::filesystem::path& path);

/// Mean of squared differences over pixels and channels. Throws std::invalid_argument
/// on a size mismatch.
double image_mse(const render::Image& a, const render::Image& b);

struct ReenactmentMse
{
    std::vector<int> entries;
    std::vector<double> per_frame;
    double mean = 0.0;
    int size = 0; // comparison resolution
};

/// Produces the translated frame of one entry.
using FrameGenerator = std::function<render::Image(int entry)>;

/// Compares generated frames of the test entries with the frontal frames of truth.
/// Generated frames larger than truth.size are area-resized to it first.
ReenactmentMse self_reenactment_mse(const FrameGenerator& generator, const exp2vreal::FrameSet& truth);

/// Self-reenactment with ground-truth albedo windows from inputs (at the generator
/// resolution); truth may have a smaller resolution for cross-variant comparison.
ReenactmentMse self_reenactment_mse(const exp2vreal::Gan& gan, const exp2vreal::FrameSet& inputs,
                                    const exp2vreal::FrameSet& truth);

void write_reenactment_csv(const ReenactmentMse& mse, const std::filesystem::path& path);

/// Timing table rows in display order.
struct ComponentInfo
{
    std::string id;    // command-line name
    std::string group; // Ego2Exp | Synthetic rendering | Exp2VRealFace
    std::string label;
    double reference_ms; // published GPU timing, an annotation only
};

const std::vector<ComponentInfo>& timing_components();
/// Throws ConfigError for an unknown component name.
const ComponentInfo& component_info(const std::string& id);
/// Splits a comma-separated list; throws ConfigError on unknown or repeated names.
std::vector<std::string> parse_components(const std::string& list);

struct TimingRow
{
    ComponentInfo component;
    std::vector<double> repetition_ms; // per-frame mean of each pass over the sequence
    double mean_ms = 0.0;
};

struct TimingReport
{
    int frames = 0;
    int repetitions = 0;
    std::vector<TimingRow> rows;
    double end_to_end_ms = 0.0;       // sum of the selected components
    double reference_end_to_end_ms = 0.0; // published figure for this selection, 0 when none

    const TimingRow* row(const std::string& id) const;
    /// True unless both translators were timed and optimized was not faster.
    bool translator_ordering_holds() const;
};

/// Networks and inputs for the timing run. Regressors are keyed by component id.
struct BenchSetup
{
    const model::FaceBasis* basis = nullptr;
    camera::PerspectiveCamera front_cam; // at the 256 px reference size; rescaled per translator
    std::vector<render::Image> ego_frames;
    std::vector<model::ParamVector> params;
    std::map<std::string, const ego2exp::Regressor*> regressors;
    std::map<std::string, const exp2vreal::Gan*> translators;
};

/// Processes the sequence repetitions times, timing each selected component per
/// frame, and averages over the passes. Throws std::invalid_argument when a
/// selected network or the basis is missing, or the sequence is empty.
TimingReport timing_bench(const BenchSetup& setup, const std::vector<std::string>& components, int repetitions = 2);

std::string format_timing_table(const TimingReport& report);
void write_timing_csv(const TimingReport& report, const std::filesystem::path& path);

} // namespace egoface::eval
