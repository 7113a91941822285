#pragma once

#include "egoface/camera/camera.hpp"
#include "egoface/model/face_model.hpp"
#include "egoface/nn/adam.hpp"
#include "egoface/nn/network.hpp"
#include "egoface/render/image.hpp"
#include "egoface/render/rasterizer.hpp"
#include "egoface/sim/capture.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace egoface::ego2exp {

using Eigen::VectorXd;

struct RegressorConfig
{
    int input_size = 64;
    int output_dim = 12;          // set from the basis expression dimension
    std::string preset = "small"; // tiny | small | large
    double dropout = 0.5;
    int batch_size = 32;
    int epochs = 50;
    nn::AdamConfig adam;

    /// Throws ConfigError naming the offending "ego2exp.<field>".
    void validate() const;

    friend bool operator==(const RegressorConfig& a, const RegressorConfig& b)
    {
        return a.input_size == b.input_size && a.output_dim == b.output_dim && a.preset == b.preset &&
               a.dropout == b.dropout && a.batch_size == b.batch_size && a.epochs == b.epochs &&
               a.adam.learning_rate == b.adam.learning_rate && a.adam.beta1 == b.adam.beta1 &&
               a.adam.beta2 == b.adam.beta2 && a.adam.epsilon == b.adam.epsilon;
    }
};

/// Serializes every field except output_dim, which follows the basis.
nlohmann::json regressor_config_to_json(const RegressorConfig& cfg);
/// Fills present fields over the defaults; unknown keys raise ConfigError.
RegressorConfig regressor_config_from_json(const nlohmann::json& j);

/// Binary mask at network input resolution.
struct FaceMask
{
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits; // row-major, 0 or 1

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    double coverage() const;
    /// Throws std::invalid_argument when empty or less than 5% of pixels are set.
    void validate() const;
};

FaceMask full_mask(int size);

/// Covered pixels of an egocentric render grown by dilation_px, then reduced to
/// size x size: an output pixel is set when any pixel of its block is set.
FaceMask mask_from_render(const render::RenderResult& render, int dilation_px, int size);

/// The approximate face mask for one egocentric camera, from a single frame.
FaceMask make_face_mask(const model::FaceBasis& basis, const model::ParamVector& params,
                        const camera::FisheyeCamera& cam, int size);

/// Pixel-wise product; throws std::invalid_argument on a resolution mismatch.
render::Image apply_mask(const render::Image& image, const FaceMask& mask);

void save_mask(const FaceMask& mask, const std::filesystem::path& path);
FaceMask load_mask(const std::filesystem::path& path);

/// Conv stack of five stride-2 blocks followed by two dense layers; linear output.
nn::NetworkSpec regressor_spec(const RegressorConfig& cfg);

struct Regressor
{
    RegressorConfig cfg;
    nn::NetworkSpec spec;
    nn::NetworkState state;
    VectorXd target_scale; // network outputs are expression coefficients divided by this
    FaceMask mask;
};

/// Fresh network with unit target scale and an all-ones mask.
Regressor build_regressor(const RegressorConfig& cfg, std::uint64_t seed);

/// Area resize to the input size, mask, CHW float planes.
std::vector<float> prepare_input(const render::Image& ego, const FaceMask& mask, int input_size);

/// Prepared inputs and expression targets.
struct Samples
{
    int input_size = 0;
    std::vector<float> pixels; // size() * 3 * input_size^2
    std::vector<VectorXd> targets;

    std::size_t size() const { return targets.size(); }
    std::size_t stride() const { return 3 * static_cast<std::size_t>(input_size) * input_size; }
    const float* sample(std::size_t i) const { return pixels.data() + i * stride(); }
    void add(const std::vector<float>& input, const VectorXd& target);
};

/// Reads the ego images of the given manifest entries.
Samples load_samples(const sim::DatasetManifest& manifest, const std::vector<model::ParamVector>& params,
                     const std::vector<int>& indices, const FaceMask& mask, int input_size);

struct CurveRow
{
    int epoch = 0;
    double train_mse = 0.0; // running mean over the epoch's batches, training mode
    double val_mse = 0.0;   // inference mode over the validation samples; 0 without them
};

struct TrainResult
{
    Regressor model;
    std::vector<CurveRow> curve;
};

/// Called after every epoch with its curve row.
using EpochCallback = std::function<void(const CurveRow&)>;

/// MSE training on targets divided by target_scale with ADAM and a seeded shuffle
/// per epoch. Curves report MSE in expression units. Throws std::invalid_argument on
/// empty data and NumericError on a non-finite loss.
TrainResult train_regressor(const Samples& train, const Samples& validation, const RegressorConfig& cfg,
                            const VectorXd& target_scale, const FaceMask& mask, std::uint64_t seed,
                            const EpochCallback& on_epoch = {});

/// Trains on the manifest's train split and validates on its test split. The mask
/// comes from the first training frame.
TrainResult train_regressor(const sim::DatasetManifest& manifest, const model::FaceBasis& basis,
                            const camera::FisheyeCamera& ego_cam, const RegressorConfig& cfg, std::uint64_t seed,
                            const EpochCallback& on_epoch = {});

/// Inference on one prepared input; independent of any other input.
VectorXd predict_prepared(const Regressor& reg, const float* input);
/// Resize, mask and infer.
VectorXd predict_expressions(const Regressor& reg, const render::Image& ego);

VectorXd mean_target(const Samples& samples);
/// Mean over samples of the mean squared coefficient error.
double expression_mse(const std::vector<VectorXd>& predicted, const std::vector<VectorXd>& truth);

void write_curve_csv(const std::vector<CurveRow>& curve, const std::filesystem::path& path);

/// regressor.egfw, regressor.json (spec, config, target scale) and mask.ppm.
void save_regressor(const Regressor& reg, const std::filesystem::path& dir);
/// Throws MissingArtifactError naming the first missing file.
Regressor load_regressor(const std::filesystem::path& dir);

} // namespace egoface::ego2exp
