#pragma once

#include "egoface/model/face_model.hpp"
#include "egoface/nn/adam.hpp"
#include "egoface/nn/network.hpp"
#include "egoface/render/image.hpp"
#include "egoface/sim/capture.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace egoface::exp2vreal {

using Eigen::Vector3d;

enum class Variant
{
    full,
    optimized
};

std::string to_string(Variant v);
/// Throws ConfigError for names other than "full" and "optimized".
Variant parse_variant(const std::string& name);

struct GanConfig
{
    Variant variant = Variant::full;
    double lambda = 10.0;            // L1 weight
    double adversarial_weight = 1.0; // 0 trains the generator on L1 alone
    int window = 3;                  // temporal window W, odd
    int batch_size = 12;
    int epochs = 10;
    int full_size = 128;       // generator input/output size of the full variant
    int optimized_size = 64;   // and of the optimized variant
    double channel_scale = 0.125; // multiplies the encoder/decoder widths (1 = 64..512)
    nn::AdamConfig generator_adam{2e-4, 0.5, 0.999, 1e-8};
    nn::AdamConfig discriminator_adam{2e-4, 0.5, 0.999, 1e-8};

    int image_size() const { return variant == Variant::full ? full_size : optimized_size; }
    /// Throws ConfigError naming the offending "exp2vreal.<field>".
    void validate() const;
};

nlohmann::json gan_config_to_json(const GanConfig& cfg);
/// Fills present fields over the defaults; unknown keys raise ConfigError.
GanConfig gan_config_from_json(const nlohmann::json& j);
bool same_config(const GanConfig& a, const GanConfig& b);

/// Widths of encoder rows 1..7 at channel_scale 1.
inline constexpr int table_channels[7] = {64, 128, 256, 512, 512, 512, 512};

/// Encoder/decoder U-Net. Full: Encoder1..7 (stride-2 convs), Decoder7 (stride-1
/// bottleneck), Decoder6..1 (skip concat with the matching encoder, then a stride-2
/// transposed conv), and an output transposed conv to 3 channels followed by tanh and
/// the map to [0, 1]. Optimized: Encoder2..5 and Decoder5..2, the input feeding Encoder2.
nn::NetworkSpec generator_spec(const GanConfig& cfg);

/// Patch discriminator on the channel concatenation of the albedo window and a
/// candidate frame: three stride-2 convs, then a 3x3 conv to one sigmoid channel.
nn::NetworkSpec discriminator_spec(const GanConfig& cfg);

/// Named row of the architecture table: layer output size and channel count.
struct ArchRow
{
    std::string name;
    int height = 0;
    int width = 0;
    int channels = 0;

    friend bool operator==(const ArchRow&, const ArchRow&) = default;
};

/// Rows for the named Encoder/Decoder layers in network order.
std::vector<ArchRow> architecture_table(const nn::NetworkSpec& spec);

struct Gan
{
    GanConfig cfg;
    nn::NetworkSpec g_spec;
    nn::NetworkState g_state;
    nn::NetworkSpec d_spec;
    nn::NetworkState d_state;
};

Gan build_gan(const GanConfig& cfg, std::uint64_t seed);

/// Mean absolute difference. Throws ShapeError on a shape mismatch.
template <typename T>
double loss_l1(const nn::BasicTensor<T>& generated, const nn::BasicTensor<T>& ground_truth);

struct AdversarialLoss
{
    double objective = 0.0;     // E[log D(X,Y)] + E[log(1 - D(X,G(X)))]
    double discriminator = 0.0; // -objective, minimized by D
    double generator = 0.0;     // -E[log D(X,G(X))], minimized by G
};

inline constexpr double probability_clamp = 1e-7;

/// Probabilities are clamped to [1e-7, 1 - 1e-7] before the logarithm. Throws
/// std::invalid_argument for values outside [0, 1] or NaN.
AdversarialLoss loss_adv(const nn::Tensor& d_real, const nn::Tensor& d_fake);

/// Generator objective of one batch and its gradients.
template <typename T>
struct GeneratorObjective
{
    double adversarial = 0.0;        // -E[log D(X,G(X))]
    double l1 = 0.0;
    double total = 0.0;              // accumulated element by element in one pass
    nn::BasicTensor<T> grad_d_fake;  // d total / d D(X,G(X))
    nn::BasicTensor<T> grad_generated; // d total / d G(X)
};

/// Objective from given discriminator outputs; grad_generated holds the L1 part only.
template <typename T>
GeneratorObjective<T> generator_objective(const nn::BasicTensor<T>& d_fake, const nn::BasicTensor<T>& generated,
                                          const nn::BasicTensor<T>& ground_truth, double lambda,
                                          double adversarial_weight);

/// Full generator objective: runs the discriminator on the albedo window stacked with
/// the generated frames and backpropagates the adversarial term through it, so that
/// grad_generated is the complete gradient. The discriminator is skipped when the
/// adversarial weight is 0.
template <typename T>
GeneratorObjective<T> generator_loss(const nn::BasicNetworkState<T>& d_state, const nn::NetworkSpec& d_spec,
                                     const nn::BasicTensor<T>& window, const nn::BasicTensor<T>& generated,
                                     const nn::BasicTensor<T>& ground_truth, double lambda,
                                     double adversarial_weight);

/// [N, a, H, W] and [N, b, H, W] stacked along channels.
template <typename T>
nn::BasicTensor<T> concat_channels(const nn::BasicTensor<T>& x, const nn::BasicTensor<T>& y);

/// Paired frames of an Exp2VRealFace dataset at one resolution, 8-bit per channel.
struct FrameSet
{
    int size = 0;
    std::vector<std::uint8_t> albedo; // entries x 3 x size x size
    std::vector<std::uint8_t> front;
    std::vector<int> sequence;        // per entry
    std::vector<int> frame;           // per entry, frame index inside its sequence
    std::vector<int> train;           // entry indices
    std::vector<int> test;

    std::size_t entries() const { return sequence.size(); }
    std::size_t plane() const { return 3 * static_cast<std::size_t>(size) * size; }
    /// Entry indices of the window centered at i, clamped to i's sequence.
    std::vector<int> window(int i, int w) const;
};

/// Reads the front and albedo frames of an Exp2VRealFace manifest, area-resized to size.
FrameSet load_frames(const sim::DatasetManifest& manifest, int size);

struct GanCurveRow
{
    int epoch = 0;
    double l1 = 0.0;
    double g_adv = 0.0;
    double d_loss = 0.0;
};

struct GanTrainResult
{
    Gan gan;
    std::vector<GanCurveRow> curve;
};

/// Per batch one discriminator ADAM step, then one generator ADAM step against the
/// updated discriminator; asserts the generator loss decomposition on every batch.
/// Throws std::invalid_argument without training entries and NumericError on a
/// non-finite loss.
GanTrainResult train_cgan(const FrameSet& data, const GanConfig& cfg, std::uint64_t seed,
                          const std::function<void(const GanCurveRow&)>& on_epoch = {});

/// Generator input for entry i: the albedo window stacked along channels.
nn::Tensor window_input(const FrameSet& data, int i, int w);
nn::Tensor front_target(const FrameSet& data, int i);

/// Translates one window of albedo renders (W frames, generator resolution).
/// Throws std::invalid_argument on a wrong window length or frame size.
render::Image translate(const Gan& gan, const std::vector<render::Image>& albedo_window);
render::Image translate_tensor(const Gan& gan, const nn::Tensor& input);

render::Image tensor_to_image(const nn::Tensor& t, std::size_t offset = 0);
/// Writes an image into CHW float planes.
void image_to_planes(const render::Image& img, float* out);

enum class PoseMode
{
    fixed,
    loop
};

struct PoseSelection
{
    PoseMode mode = PoseMode::fixed;
    std::vector<std::pair<Vector3d, Vector3d>> poses; // (R, T)
    int loop_period = 1;   // frames each pose is held in loop mode
    bool ping_pong = false; // 0, 1, .., n-1, n-2, .., 1, 0, 1, ..
};

/// Throws std::invalid_argument on an empty pose list or a non-positive period.
std::pair<Vector3d, Vector3d> select_pose(const PoseSelection& selection, int frame_idx);

/// Copy of base with the expression and head pose replaced; identity, reflectance and
/// illumination stay. Throws std::invalid_argument on an expression length mismatch.
model::ParamVector drive_params(const model::ParamVector& base, const Eigen::VectorXd& delta,
                                const std::pair<Vector3d, Vector3d>& pose);

void write_gan_curve_csv(const std::vector<GanCurveRow>& curve, const std::filesystem::path& path);

/// <prefix>_generator.{egfw,json} and <prefix>_discriminator.{egfw,json}.
void save_gan(const Gan& gan, const std::filesystem::path& dir, const std::string& prefix);
/// Throws MissingArtifactError naming the first missing file.
Gan load_gan(const std::filesystem::path& dir, const std::string& prefix);

} // namespace egoface::exp2vreal
