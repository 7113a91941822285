#pragma once

#include "egoface/camera/camera.hpp"
#include "egoface/model/face_model.hpp"
#include "egoface/render/image.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace egoface::sim {

using Eigen::Vector3d;
using Eigen::VectorXd;

inline constexpr double default_frame_rate = 25.0;

/// Recording environment: background color and base illumination.
struct Scenario
{
    int id = 0;
    Vector3d background = Vector3d::Zero();
    VectorXd gamma;
};

int scenario_count();
/// Throws std::out_of_range for an unknown id.
Scenario scenario(int id);

/// The captured person: identity and reflectance, fixed over all of their sequences.
struct Actor
{
    VectorXd alpha;
    VectorXd beta;
};

/// Coefficients drawn from N(0, (0.7 sigma)^2), clamped to 2 sigma.
Actor make_actor(const model::FaceBasis& basis, std::uint64_t seed);

/// free: walking capture with head sway and drifting light; studio: seated in front
/// of a tripod camera with slight sway and constant light.
enum class Motion
{
    free,
    studio
};

/// The designated asymmetric-event coefficient (smile_left); its partner is the right side.
inline constexpr int asymmetric_left_coefficient = 2;

struct PerformanceScript
{
    double frame_rate = default_frame_rate;
    int scenario = 0;
    Motion motion = Motion::free;
    VectorXd alpha;
    VectorXd beta;
    std::vector<VectorXd> delta;
    std::vector<Vector3d> R;
    std::vector<Vector3d> T;
    std::vector<VectorXd> gamma;
    Vector3d background = Vector3d::Zero();

    int frame_count() const { return static_cast<int>(delta.size()); }
    /// Throws std::invalid_argument when trajectory lengths differ or frame_rate <= 0.
    void validate() const;
    model::ParamVector params(int frame) const;
};

/// Smooth per-coefficient expression trajectories (sums of low-frequency sinusoids)
/// with scheduled expression events, including one-sided activations; every
/// coefficient stays within 2 sigma. Deterministic per seed.
PerformanceScript gen_performance(const model::FaceBasis& basis, const Actor& actor, std::uint64_t seed, int frames,
                                  int scenario_id, Motion motion);

struct FramePair
{
    render::Image ego;
    render::Image front;
    model::ParamVector params;
};

/// Shaded frontal render at the script pose and shaded egocentric render from the
/// face-attached camera, both from the same parameters.
FramePair render_pair(const model::FaceBasis& basis, const PerformanceScript& script, int frame,
                      const camera::PerspectiveCamera& front_cam, const camera::FisheyeCamera& ego_cam);

/// Reflectance-only frontal render on a black background at the pose stored in params.
render::Image render_albedo_frame(const model::FaceBasis& basis, const model::ParamVector& params,
                                  const camera::PerspectiveCamera& cam);

enum class StreamSource
{
    ego,
    front
};

struct FrameStream
{
    StreamSource source = StreamSource::front;
    double frame_rate = default_frame_rate;
    std::vector<render::Image> frames;
    std::vector<double> timestamps;

    int size() const { return static_cast<int>(frames.size()); }
    /// Throws std::invalid_argument unless timestamps are spaced 1 / frame_rate apart.
    void validate() const;
};

FrameStream make_stream(std::vector<render::Image> frames, StreamSource source,
                        double frame_rate = default_frame_rate, double start_time = 0.0);

/// Screen region showing the sync event: the top-left square of side max(2, width / 8).
struct PatchRect
{
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
};

PatchRect sync_patch(int width, int height);
void paint_sync_patch(render::Image& image, bool white);
double sync_patch_mean(const render::Image& image);

/// Paints the sync patch into every frame: white on frames i with
/// (i - offset_frames) mod period < event_frames, black otherwise.
/// Throws std::invalid_argument for an empty stream, event_frames < 1, or a period
/// shorter than the event.
FrameStream inject_sync_events(const FrameStream& stream, double period_s, int event_frames, int offset_frames);

class SyncError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct SyncReport
{
    int offset = 0;        // ego index = front index + offset
    int first_offset = 0;  // from the first observed ego onset
    int last_offset = 0;   // from the last ego onset whose front counterpart was recorded
    bool verified = false; // |first_offset - last_offset| <= 1
    std::vector<int> ego_onsets;
    std::vector<int> front_onsets;
};

/// Onsets of white runs (patch mean > 0.5). A run touching the first frame counts
/// only when it is as long as the longest run, i.e. it was not cut off.
std::vector<int> detect_onsets(const FrameStream& stream);

/// Offset between the streams from the first ego onset and its nearest front onset,
/// verified against the last ego onset whose front counterpart lies inside the front
/// recording. Throws SyncError when either stream has no event.
SyncReport align_streams(const FrameStream& ego, const FrameStream& front);

enum class DatasetKind
{
    ego2exp,
    exp2vreal
};

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& name);

struct SyncSettings
{
    double period_s = 10.0;
    int event_frames = 2;
};

struct SequenceInfo
{
    int id = 0;
    int scenario = 0;
    int frames = 0;
    int injected_offset = 0;
    int recovered_offset = 0;
    bool sync_checked = false; // false when the sequence holds fewer than two events
    bool sync_verified = false;
};

struct ManifestEntry
{
    int index = 0;
    int sequence = 0;
    int frame = 0;
    bool test = false;
    std::string ego;    // relative paths, empty when the kind has no such image
    std::string front;
    std::string albedo;
};

struct DatasetManifest
{
    DatasetKind kind = DatasetKind::ego2exp;
    double frame_rate = default_frame_rate;
    int width = 0;
    int height = 0;
    double test_ratio = 0.1;
    std::vector<SequenceInfo> sequences;
    std::vector<ManifestEntry> entries;
    std::filesystem::path root; // directory holding manifest.json; not serialized

    std::vector<int> indices(bool test) const;
    std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

struct ExportCameras
{
    camera::PerspectiveCamera front;
    camera::FisheyeCamera ego;
};

/// Test membership from a hash of the global frame index.
bool is_test_frame(int index, double test_ratio);

/// Renders every script frame and writes frames/<image>/seqNN/NNNNNN.ppm, params.jsonl
/// and manifest.json under out_dir. Ego2Exp entries hold (ego, front); Exp2VRealFace
/// entries hold (front, albedo). Ego2Exp sequences long enough for two sync events run
/// the sync protocol with the injected offset for that sequence and must recover it.
DatasetManifest export_dataset(DatasetKind kind, const model::FaceBasis& basis,
                               const std::vector<PerformanceScript>& scripts, const ExportCameras& cams,
                               double test_ratio, const std::vector<int>& sync_offsets, const SyncSettings& sync,
                               const std::filesystem::path& out_dir);

nlohmann::json manifest_to_json(const DatasetManifest& manifest);
/// Throws MissingArtifactError when out_dir/manifest.json is absent.
DatasetManifest load_manifest(const std::filesystem::path& dir);
/// Ground-truth parameters in entry order, read from params.jsonl.
std::vector<model::ParamVector> load_dataset_params(const DatasetManifest& manifest);

} // namespace egoface::sim
