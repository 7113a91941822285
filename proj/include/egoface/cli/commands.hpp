#pragma once

#include "egoface/cli/config.hpp"

#include <exception>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace egoface::cli {

/// Artifact locations under the output root.
struct Layout
{
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path model() const { return root / "model"; }
    std::filesystem::path ego2exp_data() const { return root / "data" / "ego2exp"; }
    std::filesystem::path exp2vreal_data() const { return root / "data" / "exp2vreal"; }
    std::filesystem::path fit() const { return root / "fit"; }
    std::filesystem::path ego2exp() const { return root / "ego2exp"; }
    std::filesystem::path regressor() const { return ego2exp() / "model"; }
    std::filesystem::path exp2vreal() const { return root / "exp2vreal"; }
    std::filesystem::path reenact(const std::string& variant) const { return root / "reenact" / variant; }
    std::filesystem::path eval() const { return root / "eval"; }
    std::filesystem::path bench() const { return root / "bench"; }
};

/// Command-line selections that are not part of the config document.
struct CommandOptions
{
    std::string components; // bench; empty uses eval.bench_components
    std::string variant;    // full | optimized | both; empty uses the command default
};

const std::vector<std::string>& command_names();

/// Model synthesis: <out>/model/{basis.json,basis.bin} and <out>/config.json.
void synth_model(const RunConfig& cfg, std::ostream& log);
/// Renders both datasets: <out>/data/ego2exp and <out>/data/exp2vreal.
void gen_data(const RunConfig& cfg, std::ostream& log);
/// Fits the first recon.fit_frames frontal frames of Ego2Exp sequence 0 from ground-truth
/// landmarks: <out>/fit/{fit.jsonl,report.json}.
void fit(const RunConfig& cfg, std::ostream& log);
/// <out>/ego2exp/{model/,curve.csv}.
void train_ego2exp(const RunConfig& cfg, std::ostream& log);
/// <out>/exp2vreal/<variant>_{generator,discriminator}.{egfw,json} and <variant>_curve.csv.
void train_exp2vreal(const RunConfig& cfg, const std::string& variant, std::ostream& log);
/// Test-time path on the first eval.reenact_frames egocentric frames of Ego2Exp
/// sequence 0: regressed expression, pose-selected albedo render, translated frame.
/// Writes <out>/reenact/<variant>/{albedo/,frames/,expressions.csv}.
void reenact(const RunConfig& cfg, const std::string& variant, std::ostream& log);
/// Held-out Ego2Exp evaluation against the mean-expression baseline:
/// <out>/eval/{geo_regressor.json,geo_regressor.csv,geo_mean.json,ego2exp_summary.json}.
void eval_geo(const RunConfig& cfg, std::ostream& log);
/// Self-reenactment MSE of the selected variants at the optimized resolution:
/// <out>/eval/{reenact_<variant>.csv,reenactment.json}.
void eval_mse(const RunConfig& cfg, const std::string& variant, std::ostream& log);
/// Timing run: <out>/bench/{timing.csv,timing.txt}. Throws std::runtime_error when
/// both translators were timed and the optimized one was not faster.
void bench(const RunConfig& cfg, const std::string& components, std::ostream& log);
/// Every command in pipeline order.
void demo(const RunConfig& cfg, std::ostream& log);

/// Dispatches by name; throws ConfigError for an unknown command or option value.
void run(const std::string& command, const RunConfig& cfg, const CommandOptions& options, std::ostream& log);

/// 0 success, 2 ConfigError, 3 MissingArtifactError, 4 NumericError, 1 anything else.
int exit_code(const std::exception_ptr& error);

} // namespace egoface::cli
